use std::path::Path;
use std::sync::{Arc, Mutex};

use riskxai::{
    build_model_card, load_csv_auto, load_model, CardConfig, CfConstraints, Dataset, Direction, Error,
    LimeBackground, ModelCard, RandomForest, Result,
};

/// An immutable (model, reference cohort) pair plus state derived from it.
/// Requests work against one snapshot; reload swaps the whole value.
pub struct Snapshot {
    pub model: RandomForest,
    pub reference: Option<Dataset>,
    pub background: Option<LimeBackground>,
    /// Box bounds from the reference cohort; direction is set per request.
    pub bounds: Option<CfConstraints>,
    pub fingerprint: String,
    pub dataset_fingerprint: Option<String>,
    card_config: CardConfig,
    card: Mutex<Option<Arc<ModelCard>>>,
}

impl Snapshot {
    pub fn new(model: RandomForest, reference: Option<Dataset>, card_config: CardConfig) -> Result<Self> {
        if let Some(d) = &reference {
            model.check_dataset(d)?;
        }
        let background = reference.as_ref().map(LimeBackground::fit).transpose()?;
        let bounds = match &reference {
            Some(d) => match CfConstraints::from_training(d, Direction::Decrease) {
                Ok(c) => Some(c),
                Err(Error::Config(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        Ok(Snapshot {
            fingerprint: model.fingerprint(),
            dataset_fingerprint: reference.as_ref().map(Dataset::fingerprint),
            model,
            reference,
            background,
            bounds,
            card_config,
            card: Mutex::new(None),
        })
    }

    pub fn load(model_path: &Path, dataset_path: Option<&Path>, card_config: CardConfig) -> Result<Self> {
        let model: RandomForest = load_model(model_path)?;
        let reference = dataset_path
            .map(|p| load_csv_auto(p, model.schema.clone()))
            .transpose()?;
        Self::new(model, reference, card_config)
    }

    /// Serves this card instead of building one from the reference cohort.
    pub fn with_card(self, card: ModelCard) -> Self {
        *self.card.lock().expect("card lock") = Some(Arc::new(card));
        self
    }

    pub fn reference(&self) -> Result<&Dataset> {
        self.reference
            .as_ref()
            .ok_or_else(|| Error::Precondition("no reference dataset is loaded".into()))
    }

    /// The model card, built on first use from the reference cohort (used
    /// as both development and validation split).
    pub fn card(&self) -> Result<Arc<ModelCard>> {
        let mut slot = self.card.lock().expect("card lock");
        if let Some(c) = slot.as_ref() {
            return Ok(c.clone());
        }
        let d = self.reference()?;
        let card = Arc::new(build_model_card(&self.model, d, d, &self.card_config)?);
        *slot = Some(card.clone());
        Ok(card)
    }
}
