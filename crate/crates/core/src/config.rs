//! Pipeline configuration shared by the CLI and the service.

use serde::{Deserialize, Serialize};

use crate::editor::EditOptions;
use crate::features::FALLBACK_BLUR_SIGMA;
use crate::palette::PaletteConfig;
use crate::superpixels::SlicParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub palette: PaletteConfig,
    pub superpixels: SlicParams,
    pub edit: EditOptions,
    /// Blur of the fallback feature generator, in pixels.
    pub fallback_blur_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            palette: PaletteConfig::default(),
            superpixels: SlicParams::default(),
            edit: EditOptions::default(),
            fallback_blur_sigma: FALLBACK_BLUR_SIGMA,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.palette.validate()?;
        if self.superpixels.n_target == 0 {
            return Err(Error::Config("superpixel count must be at least 1".into()));
        }
        if !(self.superpixels.compactness.is_finite() && self.superpixels.compactness >= 0.0) {
            return Err(Error::Config("compactness must be a non-negative number".into()));
        }
        if self.edit.sample_count == 0 {
            return Err(Error::Config("constraint sample count must be at least 1".into()));
        }
        if !(self.fallback_blur_sigma.is_finite() && self.fallback_blur_sigma >= 0.0) {
            return Err(Error::Config("fallback blur sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.palette.w_c, 1.0);
        assert_eq!(cfg.palette.w_s, 3.0);
        assert_eq!(cfg.palette.t, 0.80);
        assert_eq!(cfg.superpixels, SlicParams { n_target: 800, compactness: 10.0, iters: 10 });
        assert_eq!(cfg.edit.sample_count, 256);
        assert!(!cfg.edit.disable_propagation);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"palette": {"t": 0.66}}"#).unwrap();
        assert_eq!(cfg.palette.t, 0.66);
        assert_eq!(cfg.palette.w_s, 3.0);
        assert_eq!(cfg.superpixels.n_target, 800);
    }
}
