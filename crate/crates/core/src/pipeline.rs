//! Precomputed per-image state: semantic field, palette, RBF model and the
//! full weight field. Edits against it are pure functions of the strokes.

use crate::config::PipelineConfig;
use crate::editor::{apply_edit, build_problem, solve_edit, EditOptions, EditSolution};
use crate::features::{fallback_features, semantic_field, FeatureField};
use crate::imgio::{ImageRgb, RawFeatureTensor, StrokeSet};
use crate::palette::{extract_palette, SemanticPalette};
use crate::weights::{weight_field, RbfModel, WeightField};
use crate::{Error, Result};

/// Semantic field from network features when given, otherwise from the
/// fallback generator.
pub fn prepare_field(image: &ImageRgb, features: Option<&RawFeatureTensor>, blur_sigma: f64) -> Result<FeatureField> {
    let field = match features {
        Some(raw) => semantic_field(raw)?,
        None => semantic_field(&fallback_features(image, blur_sigma))?,
    };
    field.check_matches(image)?;
    Ok(field)
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: ImageRgb,
    pub field: FeatureField,
    pub model: RbfModel,
    pub weights: WeightField,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub image: ImageRgb,
    pub solution: EditSolution,
}

impl Prepared {
    /// Extracts the palette and precomputes weights.
    pub fn extract(image: ImageRgb, field: FeatureField, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        field.check_matches(&image)?;
        let palette = extract_palette(&image, &field, &cfg.palette, &cfg.superpixels)?;
        Self::with_palette(image, field, palette)
    }

    /// Uses a previously extracted palette.
    pub fn with_palette(image: ImageRgb, field: FeatureField, palette: SemanticPalette) -> Result<Self> {
        field.check_matches(&image)?;
        let model = RbfModel::fit(&palette)?;
        let weights = weight_field(&image, &field, &model)?;
        Ok(Self {
            image,
            field,
            model,
            weights,
        })
    }

    pub fn palette(&self) -> &SemanticPalette {
        &self.model.palette
    }

    pub fn edit(&self, strokes: &StrokeSet, opts: &EditOptions) -> Result<EditOutcome> {
        if opts.sample_count == 0 {
            return Err(Error::Config("constraint sample count must be at least 1".into()));
        }
        let problem = build_problem(&self.image, &self.field, &self.model, &self.weights, strokes, opts)?;
        let solution = solve_edit(&problem, self.palette())?;
        let image = apply_edit(&self.image, &self.weights, &solution.deltas)?;
        Ok(EditOutcome { image, solution })
    }
}
