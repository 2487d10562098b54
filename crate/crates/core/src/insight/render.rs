//! Markdown and HTML renderings of a model card.

use std::fmt::Write;

use super::card::{CohortColumn, ModelCard};
use super::importance::Ranking;

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn mean_sd(c: &CohortColumn) -> String {
    match (c.age_mean, c.age_sd) {
        (Some(m), Some(s)) => format!("{m:.1} ({s:.1})"),
        _ => "n/a".into(),
    }
}

fn count_pct(n: usize, p: f64) -> String {
    format!("{n} ({p:.1})")
}

fn bar(value: f64, max: f64, width: usize) -> String {
    let n = if max > 0.0 { (value / max * width as f64).round() as usize } else { 0 };
    "█".repeat(n)
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rows of the cohort table: label and one cell per column.
fn cohort_rows(card: &ModelCard) -> Vec<(String, Vec<String>)> {
    let cols = &card.cohort;
    let mut rows = vec![
        ("Number of patients".to_string(), cols.iter().map(|c| c.n_patients.to_string()).collect()),
        ("Number of encounters".to_string(), cols.iter().map(|c| c.n_encounters.to_string()).collect()),
        ("Age, mean (SD)".to_string(), cols.iter().map(mean_sd).collect()),
    ];
    if cols.iter().all(|c| c.sex.is_some()) {
        rows.push((
            "Male, N (%)".into(),
            cols.iter()
                .map(|c| c.sex.as_ref().map(|s| count_pct(s.male, s.male_pct)).unwrap_or_default())
                .collect(),
        ));
        rows.push((
            "Female, N (%)".into(),
            cols.iter()
                .map(|c| c.sex.as_ref().map(|s| count_pct(s.female, s.female_pct)).unwrap_or_default())
                .collect(),
        ));
    }
    rows
}

fn ranking_md(out: &mut String, r: &Ranking, top: usize) {
    let max = r.entries.first().map_or(0.0, |e| e.importance);
    let _ = writeln!(out, "| Rank | Feature | Importance | |\n|---|---|---|---|");
    for (i, e) in r.entries.iter().take(top).enumerate() {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {} |",
            i + 1,
            e.display_name,
            e.importance,
            bar(e.importance, max, 20)
        );
    }
}

impl ModelCard {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "# {}\n", self.title);
        let _ = writeln!(w, "## Overview\n\n{}\n", self.overview);
        let _ = writeln!(w, "## Source of Data\n\n{}\n", self.data_source);
        if !self.references.is_empty() {
            let _ = writeln!(w, "## References\n");
            for r in &self.references {
                let _ = writeln!(w, "- {r}");
            }
            let _ = writeln!(w);
        }
        let _ = writeln!(w, "## Intended Users\n");
        for u in &self.intended_users {
            let _ = writeln!(w, "- {u}");
        }
        let _ = writeln!(w, "\n## Use Cases\n");
        for u in &self.use_cases {
            let _ = writeln!(w, "- {u}");
        }

        let labels: Vec<&str> = self.cohort.iter().map(|c| c.label.as_str()).collect();
        let _ = writeln!(w, "\n## Outcome Prevalence\n");
        let _ = writeln!(w, "| Outcome | {} |\n|---|{}", labels.join(" | "), "---|".repeat(labels.len()));
        for (k, o) in self.outcomes.iter().enumerate() {
            let cells: Vec<String> = self.cohort.iter().map(|c| pct(c.prevalence[k])).collect();
            let _ = writeln!(w, "| {o} | {} |", cells.join(" | "));
        }

        let _ = writeln!(w, "\n## Training Data Cohort\n");
        let _ = writeln!(w, "| | {} |\n|---|{}", labels.join(" | "), "---|".repeat(labels.len()));
        for (name, cells) in cohort_rows(self) {
            let _ = writeln!(w, "| {name} | {} |", cells.join(" | "));
        }

        let _ = writeln!(w, "\n## Performance (validation)\n");
        let _ = writeln!(w, "| Outcome | AUROC | Positives | Negatives |\n|---|---|---|---|");
        for p in &self.performance {
            let auc = p.auroc.map_or("undefined".to_string(), |a| format!("{a:.3}"));
            let _ = writeln!(w, "| {} | {auc} | {} | {} |", p.outcome, p.positives, p.negatives);
        }
        let roc: Vec<_> = self
            .performance
            .iter()
            .map(|p| serde_json::json!({ "outcome": p.outcome, "roc": p.roc }))
            .collect();
        let _ = writeln!(
            w,
            "\nROC polylines:\n\n```json\n{}\n```",
            serde_json::to_string(&roc).expect("roc serializes")
        );

        let _ = writeln!(w, "\n## Global Feature Importance\n");
        let _ = writeln!(w, "### {}\n", self.importance.overall.label);
        ranking_md(w, &self.importance.overall, 10);
        for s in &self.importance.subgroups {
            for g in &s.groups {
                let _ = writeln!(w, "\n### {} (n = {})\n", g.label, g.n_records);
                ranking_md(w, g, 10);
            }
        }

        let p = &self.provenance;
        let _ = writeln!(w, "\n## Provenance\n");
        let _ = writeln!(w, "- Model fingerprint: `{}`", p.model_fingerprint);
        let _ = writeln!(w, "- Development data fingerprint: `{}`", p.development_fingerprint);
        let _ = writeln!(w, "- Validation data fingerprint: `{}`", p.validation_fingerprint);
        let _ = writeln!(w, "- Generated at: {}", p.generated_at);
        let _ = writeln!(w, "- Generator: {}", p.generator);
        out
    }

    pub fn to_html(&self) -> String {
        let e = |s: &str| html_escape(s);
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(
            w,
            "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>\
             body{{font-family:sans-serif;max-width:60em;margin:auto;padding:1em}}\
             table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:.2em .6em}}\
             .bar{{background:#4a7fb5;height:.8em;display:inline-block}}\
             </style>\n</head>\n<body>",
            e(&self.title)
        );
        let _ = writeln!(w, "<h1>{}</h1>", e(&self.title));
        let _ = writeln!(w, "<h2>Overview</h2>\n<p>{}</p>", e(&self.overview));
        let _ = writeln!(w, "<h2>Source of Data</h2>\n<p>{}</p>", e(&self.data_source));
        if !self.references.is_empty() {
            let _ = writeln!(w, "<h2>References</h2>\n<ul>");
            for r in &self.references {
                let _ = writeln!(w, "<li>{}</li>", e(r));
            }
            let _ = writeln!(w, "</ul>");
        }
        for (title, items) in [("Intended Users", &self.intended_users), ("Use Cases", &self.use_cases)] {
            let _ = writeln!(w, "<h2>{title}</h2>\n<ul>");
            for i in items {
                let _ = writeln!(w, "<li>{}</li>", e(i));
            }
            let _ = writeln!(w, "</ul>");
        }

        let head: String = self.cohort.iter().map(|c| format!("<th>{}</th>", e(&c.label))).collect();
        let _ = writeln!(w, "<h2>Outcome Prevalence</h2>\n<table>\n<tr><th>Outcome</th>{head}</tr>");
        for (k, o) in self.outcomes.iter().enumerate() {
            let cells: String = self.cohort.iter().map(|c| format!("<td>{}</td>", pct(c.prevalence[k]))).collect();
            let _ = writeln!(w, "<tr><td>{}</td>{cells}</tr>", e(o));
        }
        let _ = writeln!(w, "</table>");

        let _ = writeln!(w, "<h2>Training Data Cohort</h2>\n<table>\n<tr><th></th>{head}</tr>");
        for (name, cells) in cohort_rows(self) {
            let cells: String = cells.iter().map(|c| format!("<td>{}</td>", e(c))).collect();
            let _ = writeln!(w, "<tr><td>{}</td>{cells}</tr>", e(&name));
        }
        let _ = writeln!(w, "</table>");

        let _ = writeln!(w, "<h2>AUROC (validation)</h2>");
        for p in &self.performance {
            let auc = p.auroc.map_or("undefined".to_string(), |a| format!("{a:.3}"));
            let points: String = p
                .roc
                .iter()
                .flatten()
                .map(|pt| format!("{:.4},{:.4} ", 200.0 * pt.fpr, 200.0 - 200.0 * pt.tpr))
                .collect();
            let _ = writeln!(
                w,
                "<figure><svg width=\"200\" height=\"200\" viewBox=\"0 0 200 200\" role=\"img\">\
                 <rect width=\"200\" height=\"200\" fill=\"none\" stroke=\"#999\"/>\
                 <line x1=\"0\" y1=\"200\" x2=\"200\" y2=\"0\" stroke=\"#ccc\" stroke-dasharray=\"4\"/>\
                 <polyline fill=\"none\" stroke=\"#b5473a\" stroke-width=\"2\" points=\"{}\"/></svg>\
                 <figcaption>{}: AUROC {auc}</figcaption></figure>",
                points.trim_end(),
                e(&p.outcome)
            );
        }

        let _ = writeln!(w, "<h2>Global Feature Importance</h2>");
        let ranking_html = |w: &mut String, r: &Ranking| {
            let max = r.entries.first().map_or(0.0, |x| x.importance);
            let _ = writeln!(w, "<h3>{} (n = {})</h3>\n<table>", e(&r.label), r.n_records);
            for x in r.entries.iter().take(10) {
                let width = if max > 0.0 { 200.0 * x.importance / max } else { 0.0 };
                let _ = writeln!(
                    w,
                    "<tr><td>{}</td><td>{:.4}</td><td><span class=\"bar\" style=\"width:{width:.1}px\"></span></td></tr>",
                    e(&x.display_name),
                    x.importance
                );
            }
            let _ = writeln!(w, "</table>");
        };
        ranking_html(w, &self.importance.overall);
        for s in &self.importance.subgroups {
            let _ = writeln!(w, "<details>\n<summary>By {}</summary>", e(&s.name));
            for g in &s.groups {
                ranking_html(w, g);
            }
            let _ = writeln!(w, "</details>");
        }

        let p = &self.provenance;
        let _ = writeln!(
            w,
            "<h2>Provenance</h2>\n<ul><li>Model fingerprint: <code>{}</code></li>\
             <li>Development data fingerprint: <code>{}</code></li>\
             <li>Validation data fingerprint: <code>{}</code></li>\
             <li>Generated at: {}</li><li>Generator: {}</li></ul>",
            e(&p.model_fingerprint),
            e(&p.development_fingerprint),
            e(&p.validation_fingerprint),
            e(&p.generated_at),
            e(&p.generator)
        );
        let data = self.to_json().replace("</", "<\\/");
        let _ = writeln!(
            w,
            "<script type=\"application/json\" id=\"model-card-data\">{data}</script>\n</body>\n</html>"
        );
        out
    }
}
