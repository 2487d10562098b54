use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use riskxai::insight::{cohort_summary, CohortSummary};
use riskxai::{
    build_model_card, evaluate_auroc, explain_lime, explain_shap, find_counterfactuals, generate_synthetic_cohort,
    load_csv_auto, load_model, load_schema, save_model, train_forest, Attribution, CardConfig, CfConfig,
    CfConstraints, CohortSchema, CounterfactualSearch, Dataset, Direction, Error, GeneratorConfig, Hyperparams,
    LimeBackground, LimeConfig, PatientRecord, RandomForest, RecordInput, Result, ShapConfig, ShapMode,
    SimilarityCriteria,
};
use riskxai_cli::{error_envelope, App, ServiceConfig, Snapshot};

#[derive(Parser)]
#[command(name = "riskxai", version, about = "Explainable surgical risk prediction")]
struct Cli {
    /// Schema document (TOML); the bundled surgical schema when omitted.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Seed for synthesis, training and explanations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic cohort as CSV.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Generator config (TOML); the bundled one when omitted.
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a random forest on a labeled CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        trees: usize,
        #[arg(long, default_value_t = 16)]
        max_depth: usize,
        #[arg(long, default_value_t = 5)]
        min_leaf: usize,
    },
    /// Per-outcome AUROC on a labeled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Local explanation for one record.
    Explain {
        #[arg(value_enum)]
        method: ExplainMethod,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        /// Use the exponential SHAP oracle instead of the tree algorithm.
        #[arg(long)]
        exact: bool,
    },
    /// Minimal lab changes that move a risk across a threshold.
    Counterfactual {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Inferred from the current risk when omitted.
        #[arg(long, value_enum)]
        direction: Option<DirectionArg>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
        /// Restrict the search to these lab features.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
    },
    /// Build a model card from development and validation CSVs.
    Card {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Card text and subgroup config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = CardFormat::Markdown)]
        render: CardFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Similar-patient cohort summary.
    Similar {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 5.0)]
        age_tolerance: f64,
        #[arg(long, default_value_t = 0.6)]
        comorbidity_threshold: f64,
    },
    /// Serve the HTTP JSON API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// Reference cohort for ids, explanations, bounds and similarity.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Serve this card (JSON) instead of building one.
        #[arg(long)]
        card: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    model: PathBuf,
    /// Reference cohort CSV.
    #[arg(long)]
    data: PathBuf,
    /// Record id in the reference cohort.
    #[arg(long, conflicts_with = "record_json")]
    record: Option<String>,
    /// JSON file holding a `{feature: value}` object.
    #[arg(long)]
    record_json: Option<PathBuf>,
    #[arg(long, default_value = "prolonged_mv")]
    outcome: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainMethod {
    Lime,
    Shap,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Decrease,
    Increase,
}

#[derive(Clone, Copy, ValueEnum)]
enum CardFormat {
    Json,
    Markdown,
    Html,
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn schema_of(cli: &Cli) -> Result<Arc<CohortSchema>> {
    Ok(Arc::new(match &cli.schema {
        Some(p) => load_schema(p)?,
        None => CohortSchema::default_surgical(),
    }))
}

fn load(cli: &Cli, model: &Path) -> Result<RandomForest> {
    let m: RandomForest = load_model(model)?;
    if let Some(p) = &cli.schema {
        if load_schema(p)? != *m.schema {
            return Err(Error::SchemaMismatch(format!(
                "{} differs from the schema stored in the model",
                p.display()
            )));
        }
    }
    Ok(m)
}

struct Loaded {
    model: RandomForest,
    data: Dataset,
    record: PatientRecord,
}

fn load_target(cli: &Cli, t: &Target) -> Result<Loaded> {
    let model = load(cli, &t.model)?;
    let data = load_csv_auto(&t.data, model.schema.clone())?;
    let input = match (&t.record, &t.record_json) {
        (Some(id), _) => RecordInput::Id(id.clone()),
        (None, Some(p)) => serde_json::from_str(&read_to_string(p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?,
        (None, None) => return Err(Error::invalid("record", "pass --record <id> or --record-json <file>")),
    };
    let record = input.resolve(&model.schema, Some(&data))?;
    Ok(Loaded { model, data, record })
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) {
    match format {
        Format::Json => stdout(&(serde_json::to_string_pretty(value).expect("serializes") + "\n")),
        Format::Text => stdout(&text()),
    }
}

/// A closed pipe (`| head`) ends output quietly.
fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        Err(e) => panic!("writing to stdout: {e}"),
    }
}

/// The serde name of a unit enum variant.
fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn attribution_text(a: &Attribution) -> String {
    let mut s = format!(
        "{} for {}: prediction {}, base value {:.4}\n",
        label(&a.method),
        a.outcome,
        pct(a.prediction),
        a.base_value
    );
    if let Some(r2) = a.surrogate_r2 {
        s += &format!("surrogate R² {r2:.3}\n");
    }
    for c in &a.contributions {
        s += &format!("{:+.4}  {}\n", c.value, c.condition);
    }
    s
}

fn counterfactual_text(s: &CounterfactualSearch) -> String {
    let mut out = format!(
        "{} risk {} ({} across {}); {} evaluations\n",
        s.outcome,
        pct(s.original_risk),
        label(&s.direction),
        pct(s.threshold),
        s.stats.evaluations
    );
    if s.results.is_empty() {
        out += "no counterfactual found within the budget\n";
    }
    for (i, r) in s.results.iter().enumerate() {
        out += &format!("\n#{}: {} -> {}\n", i + 1, pct(r.original_risk), pct(r.new_risk));
        out += &format!("{:<28} {:>16} {:>16}\n", "Feature", "Raw value", "New value");
        for c in &r.changes {
            out += &format!("{:<28} {:>16} {:>16}\n", c.display_name, c.raw_display, c.new_display);
        }
    }
    out
}

fn summary_text(s: &CohortSummary<f64>) -> String {
    let mut out = format!("{} similar patients\n", s.matched);
    for (k, o) in s.outcomes.iter().enumerate() {
        let mean = s.mean_predicted_risk.as_ref().map_or("-".into(), |m| pct(m[k]));
        let obs = s.observed_prevalence.as_ref().map_or("-".into(), |m| pct(m[k]));
        out += &format!(
            "{o:<16} patient {:>7}  cohort predicted {:>7}  observed {:>7}\n",
            pct(s.index_risk.probabilities[k]),
            mean,
            obs
        );
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth { n, generator, out } => {
            let schema = schema_of(&cli)?;
            let config = match generator {
                Some(p) => GeneratorConfig::load(p)?,
                None => GeneratorConfig::default_surgical(),
            };
            let cohort = generate_synthetic_cohort(schema, &config, seed, *n)?;
            cohort.dataset.save_csv(out)?;
            let info = serde_json::json!({
                "records": cohort.dataset.len(),
                "path": out,
                "fingerprint": cohort.dataset.fingerprint(),
            });
            emit(cli.format, &info, || format!("wrote {} records to {}\n", cohort.dataset.len(), out.display()));
        }
        Command::Train {
            data,
            out,
            trees,
            max_depth,
            min_leaf,
        } => {
            let d = load_csv_auto(data, schema_of(&cli)?)?;
            let hp = Hyperparams {
                n_trees: *trees,
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                ..Default::default()
            };
            let model: RandomForest = train_forest(&d, &hp, seed)?;
            save_model(&model, out)?;
            let info = serde_json::json!({ "model_fingerprint": model.fingerprint(), "path": out });
            emit(cli.format, &info, || {
                format!("trained {} trees on {} records -> {}\n", trees, d.len(), out.display())
            });
        }
        Command::Evaluate { model, data } => {
            let m = load(&cli, model)?;
            let d = load_csv_auto(data, m.schema.clone())?;
            let res = evaluate_auroc(&m, &d)?;
            emit(cli.format, &res, || {
                res.iter()
                    .map(|r| {
                        let auc = r.auroc.map_or("undefined".into(), |a| format!("{a:.4}"));
                        format!("{:<16} AUROC {auc}  (+{} / -{})\n", r.outcome, r.positives, r.negatives)
                    })
                    .collect()
            });
        }
        Command::Explain {
            method,
            target,
            top_k,
            samples,
            exact,
        } => {
            let t = load_target(&cli, target)?;
            let a = match method {
                ExplainMethod::Lime => {
                    let bg = LimeBackground::fit(&t.data)?;
                    let cfg = LimeConfig {
                        n_samples: *samples,
                        top_k: *top_k,
                        seed,
                        ..Default::default()
                    };
                    explain_lime(&t.model, &bg, &t.record, &target.outcome, &cfg)?
                }
                ExplainMethod::Shap => {
                    let cfg = ShapConfig {
                        mode: if *exact { ShapMode::Exact } else { ShapMode::Tree },
                        ..Default::default()
                    };
                    let mut a = explain_shap(&t.model, &t.record, &target.outcome, &cfg)?;
                    a.contributions.truncate(*top_k);
                    a
                }
            };
            emit(cli.format, &a, || attribution_text(&a));
        }
        Command::Counterfactual {
            target,
            threshold,
            direction,
            k,
            budget,
            features,
        } => {
            let t = load_target(&cli, target)?;
            let mut c = CfConstraints::from_training(&t.data, Direction::Decrease)?.with_threshold(*threshold);
            if !features.is_empty() {
                c = c.restrict(features)?;
            }
            c.direction = match direction {
                Some(DirectionArg::Decrease) => Direction::Decrease,
                Some(DirectionArg::Increase) => Direction::Increase,
                None => {
                    let p = t.model.predict_proba(&t.record)?;
                    let risk = p.get(&target.outcome).ok_or_else(|| Error::UnknownOutcome(target.outcome.clone()))?;
                    if risk >= *threshold {
                        Direction::Decrease
                    } else {
                        Direction::Increase
                    }
                }
            };
            let cfg = CfConfig {
                k: *k,
                budget: *budget,
                seed,
                ..Default::default()
            };
            let s = find_counterfactuals(&t.model, &t.record, &target.outcome, &c, &cfg)?;
            emit(cli.format, &s, || counterfactual_text(&s));
        }
        Command::Card {
            model,
            dev,
            val,
            config,
            render,
            out,
        } => {
            let m = load(&cli, model)?;
            let dev = load_csv_auto(dev, m.schema.clone())?;
            let val = load_csv_auto(val, m.schema.clone())?;
            let mut cfg = match config {
                Some(p) => CardConfig::from_toml_str(&read_to_string(p)?)?,
                None => CardConfig::default(),
            };
            cfg.importance.seed = seed;
            let card = build_model_card(&m, &dev, &val, &cfg)?;
            let text = match render {
                CardFormat::Json => card.to_json(),
                CardFormat::Markdown => card.to_markdown(),
                CardFormat::Html => card.to_html(),
            };
            match out {
                Some(p) => write_output(p, &text)?,
                None => stdout(&text),
            }
        }
        Command::Similar {
            target,
            age_tolerance,
            comorbidity_threshold,
        } => {
            let t = load_target(&cli, target)?;
            let criteria = SimilarityCriteria {
                age_tolerance: *age_tolerance,
                comorbidity_threshold: *comorbidity_threshold,
                ..Default::default()
            };
            let s = cohort_summary(&t.model, &t.data, &t.record, &criteria)?;
            emit(cli.format, &s, || summary_text(&s));
        }
        Command::Serve {
            model,
            data,
            card,
            addr,
            workers,
        } => {
            let mut config = ServiceConfig::default();
            if let Some(w) = workers {
                config.workers = *w;
            }
            config.card.importance.seed = seed;
            let mut snap = Snapshot::load(model, data.as_deref(), config.card.clone())?;
            if let Some(p) = card {
                let c = serde_json::from_str(&read_to_string(p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                snap = snap.with_card(c);
            }
            let app = App::new(snap, config);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: PathBuf::from("<runtime>"),
                source: e,
            })?;
            rt.block_on(riskxai_cli::serve(app, *addr)).map_err(|e| Error::Io {
                path: PathBuf::from(addr.to_string()),
                source: e,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_envelope(&e));
            ExitCode::FAILURE
        }
    }
}
