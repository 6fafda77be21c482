//! On-disk model file: trained cascade plus the input pipeline it expects.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shallow_cascade::cascade::{CascadeModel, CostSchedule};
use shallow_cascade::data::Preprocessing;
use shallow_cascade::{Error, Result, Scalar};

pub const FORMAT: &str = "shallow-cascade-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelBundle<T> {
    pub format: String,
    pub architecture: String,
    pub objective: String,
    pub lambda: f64,
    pub kappa: Vec<f64>,
    /// Column names of the raw training CSV.
    pub feature_names: Vec<String>,
    pub preprocessing: Preprocessing<T>,
    pub cascade: CascadeModel<T>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn schedule(&self) -> Result<CostSchedule<T>> {
        CostSchedule::new(self.kappa.iter().map(|&k| T::of(k)).collect(), T::of(self.lambda))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Format(format!(
                "unsupported model format `{}` (expected `{FORMAT}`)",
                self.format
            )));
        }
        self.cascade.validate()?;
        self.cascade.check_dim(self.preprocessing.output_dim())?;
        self.schedule()?.check_len(self.cascade.len())?;
        if self.feature_names.len() != self.preprocessing.input_dim() {
            return Err(Error::Format("feature name count does not match normalization".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
