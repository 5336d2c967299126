//! Stroke-driven palette editing.
//!
//! Every pixel color is transferred as `c' = c + Σ_j w_j δ_j`, where the
//! weights come from the original palette. The palette deltas `δ` minimize
//!
//! ```text
//! E(δ) = 1/|H| Σ_{i∈H} ‖c_i + W_i δ − ĉ_i‖²  +  1/Σα Σ_{j∈G} α_j ‖W_j δ‖²
//! ```
//!
//! over stroke pixels `H` and a lattice of constraint pixels `G`, subject to
//! every edited palette color staying inside `[0, 1]³`. `E` is a convex
//! quadratic whose three color channels decouple, so each channel is an
//! independent `k`-variable box QP.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureField, FeaturePoint};
use crate::imgio::{ImageRgb, StrokeSet};
use crate::palette::{feature_distance, PaletteConfig, SemanticPalette};
use crate::qp::solve_box_qp;
use crate::weights::{RbfModel, WeightField};
use crate::{Error, Result};

/// Tie-breaking ridge on `‖δ‖²` selecting the minimum-norm minimizer.
const MIN_NORM_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditOptions {
    /// Number of lattice pixels in the propagation term.
    pub sample_count: usize,
    /// Ablation: drop the propagation term entirely.
    pub disable_propagation: bool,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self {
            sample_count: 256,
            disable_propagation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditProblem {
    pub k: usize,
    /// `|H| × k`, row-major.
    pub stroke_weights: Vec<f64>,
    pub stroke_sources: Vec<[f64; 3]>,
    pub stroke_targets: Vec<[f64; 3]>,
    /// `|G| × k`, row-major.
    pub constraint_weights: Vec<f64>,
    pub alphas: Vec<f64>,
    pub palette_colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    pub fidelity: f64,
    pub propagation: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.fidelity + self.propagation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSolution {
    /// `P'_j.C − P_j.C` per entry.
    pub deltas: Vec<[f64; 3]>,
    pub edited_palette: SemanticPalette,
    pub energy: f64,
    pub fidelity: f64,
    pub propagation: f64,
}

fn blend(row: &[f64], deltas: &[[f64; 3]]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (w, d) in row.iter().zip(deltas) {
        out[0] += w * d[0];
        out[1] += w * d[1];
        out[2] += w * d[2];
    }
    out
}

impl EditProblem {
    pub fn stroke_count(&self) -> usize {
        self.stroke_sources.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn stroke_row(&self, i: usize) -> &[f64] {
        &self.stroke_weights[i * self.k..(i + 1) * self.k]
    }

    pub fn constraint_row(&self, j: usize) -> &[f64] {
        &self.constraint_weights[j * self.k..(j + 1) * self.k]
    }

    fn alpha_sum(&self) -> f64 {
        self.alphas.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        let h = self.stroke_sources.len();
        let g = self.alphas.len();
        if h == 0 {
            return Err(Error::Strokes("no stroke pixels".into()));
        }
        if k == 0
            || self.palette_colors.len() != k
            || self.stroke_targets.len() != h
            || self.stroke_weights.len() != h * k
            || self.constraint_weights.len() != g * k
        {
            return Err(Error::Dimension("inconsistent edit problem".into()));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Numerical("constraint weight outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Fidelity and propagation terms at `deltas`.
    pub fn energy(&self, deltas: &[[f64; 3]]) -> EnergyTerms {
        let mut fidelity = 0.0;
        for i in 0..self.stroke_count() {
            let m = blend(self.stroke_row(i), deltas);
            let (c, t) = (self.stroke_sources[i], self.stroke_targets[i]);
            fidelity += (0..3).map(|ch| (c[ch] + m[ch] - t[ch]).powi(2)).sum::<f64>();
        }
        fidelity /= self.stroke_count() as f64;

        let total_alpha = self.alpha_sum();
        let mut propagation = 0.0;
        if total_alpha > 0.0 {
            for j in 0..self.constraint_count() {
                let m = blend(self.constraint_row(j), deltas);
                propagation += self.alphas[j] * (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
            }
            propagation /= total_alpha;
        }
        EnergyTerms {
            fidelity,
            propagation,
        }
    }

    /// Analytic gradient of `E` with respect to each delta component.
    pub fn gradient(&self, deltas: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let mut grad = vec![[0.0; 3]; self.k];
        let hn = self.stroke_count() as f64;
        for i in 0..self.stroke_count() {
            let row = self.stroke_row(i);
            let m = blend(row, deltas);
            let (c, t) = (self.stroke_sources[i], self.stroke_targets[i]);
            for (g, &w) in grad.iter_mut().zip(row) {
                for ch in 0..3 {
                    g[ch] += 2.0 / hn * w * (c[ch] + m[ch] - t[ch]);
                }
            }
        }
        let total_alpha = self.alpha_sum();
        if total_alpha > 0.0 {
            for j in 0..self.constraint_count() {
                let row = self.constraint_row(j);
                let m = blend(row, deltas);
                for (g, &w) in grad.iter_mut().zip(row) {
                    for ch in 0..3 {
                        g[ch] += 2.0 / total_alpha * self.alphas[j] * w * m[ch];
                    }
                }
            }
        }
        grad
    }

    /// Shared Hessian of the three channel QPs (`½xᵀQx` convention).
    fn hessian(&self) -> DMatrix<f64> {
        let k = self.k;
        let mut q = DMatrix::<f64>::zeros(k, k);
        let hn = self.stroke_count() as f64;
        for i in 0..self.stroke_count() {
            let row = DVector::from_column_slice(self.stroke_row(i));
            q.ger(2.0 / hn, &row, &row, 1.0);
        }
        let total_alpha = self.alpha_sum();
        if total_alpha > 0.0 {
            for j in 0..self.constraint_count() {
                if self.alphas[j] == 0.0 {
                    continue;
                }
                let row = DVector::from_column_slice(self.constraint_row(j));
                q.ger(2.0 * self.alphas[j] / total_alpha, &row, &row, 1.0);
            }
        }
        for d in 0..k {
            q[(d, d)] += 2.0 * MIN_NORM_RIDGE;
        }
        q
    }

    fn linear_term(&self, channel: usize) -> DVector<f64> {
        let mut c = DVector::<f64>::zeros(self.k);
        let hn = self.stroke_count() as f64;
        for i in 0..self.stroke_count() {
            let residual = self.stroke_sources[i][channel] - self.stroke_targets[i][channel];
            if residual == 0.0 {
                continue;
            }
            for (cj, &w) in c.iter_mut().zip(self.stroke_row(i)) {
                *cj += 2.0 / hn * w * residual;
            }
        }
        c
    }
}

/// `c + Σ_j w_j δ_j`, clamped to `[0, 1]`.
pub fn transfer_color(c: [f64; 3], weights: &[f64], deltas: &[[f64; 3]]) -> [f64; 3] {
    let m = blend(weights, deltas);
    [
        (c[0] + m[0]).clamp(0.0, 1.0),
        (c[1] + m[1]).clamp(0.0, 1.0),
        (c[2] + m[2]).clamp(0.0, 1.0),
    ]
}

/// Deterministic `n × n` lattice (`n = ⌈√count⌉`) of cell-center pixels,
/// deduplicated and truncated to `count`, in row-major order.
pub fn sample_constraint_pixels(width: usize, height: usize, count: usize) -> Vec<(usize, usize)> {
    if count == 0 || width == 0 || height == 0 {
        return Vec::new();
    }
    let n = (count as f64).sqrt().ceil() as usize;
    let coord = |i: usize, size: usize| (((i as f64 + 0.5) * size as f64 / n as f64) as usize).min(size - 1);
    let xs: Vec<usize> = {
        let mut v: Vec<usize> = (0..n).map(|i| coord(i, width)).collect();
        v.dedup();
        v
    };
    let ys: Vec<usize> = {
        let mut v: Vec<usize> = (0..n).map(|i| coord(i, height)).collect();
        v.dedup();
        v
    };
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .take(count)
        .collect()
}

/// `α_j = 1 − max_h exp(−d(I_j, I_h)²)`: zero on stroke-like pixels,
/// approaching one on pixels unlike every stroke pixel.
pub fn compute_alphas(samples: &[FeaturePoint], strokes: &[FeaturePoint], cfg: &PaletteConfig) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            let similarity = strokes
                .iter()
                .map(|h| {
                    let d = feature_distance(s, h, cfg);
                    (-d * d).exp()
                })
                .fold(0.0, f64::max);
            1.0 - similarity
        })
        .collect()
}

/// Gathers stroke rows, the constraint lattice (minus stroke pixels) and its α weights.
pub fn build_problem(
    img: &ImageRgb,
    field: &FeatureField,
    model: &RbfModel,
    wf: &WeightField,
    strokes: &StrokeSet,
    opts: &EditOptions,
) -> Result<EditProblem> {
    field.check_matches(img)?;
    if wf.width != img.width() || wf.height != img.height() || wf.k != model.k() {
        return Err(Error::Dimension("weight field does not match image and model".into()));
    }
    if strokes.image_width != img.width() || strokes.image_height != img.height() {
        return Err(Error::Dimension(format!(
            "strokes drawn on a {}x{} image, image is {}x{}",
            strokes.image_width,
            strokes.image_height,
            img.width(),
            img.height()
        )));
    }
    strokes.validate()?;
    let h = strokes.resolve();
    if h.is_empty() {
        return Err(Error::Strokes("stroke set is empty".into()));
    }
    let k = model.k();
    let w = img.width();

    let mut stroke_weights = Vec::with_capacity(h.len() * k);
    let mut stroke_points = Vec::with_capacity(h.len());
    for p in &h {
        stroke_weights.extend_from_slice(wf.at(p.x, p.y));
        stroke_points.push(FeaturePoint::new(img.pixel(p.x, p.y), field.get(p.x, p.y)));
    }
    let stroked: std::collections::HashSet<usize> = h.iter().map(|p| p.y * w + p.x).collect();

    let (mut constraint_weights, mut alphas) = (Vec::new(), Vec::new());
    if !opts.disable_propagation {
        let lattice: Vec<(usize, usize)> = sample_constraint_pixels(w, img.height(), opts.sample_count)
            .into_iter()
            .filter(|&(x, y)| !stroked.contains(&(y * w + x)))
            .collect();
        let points: Vec<FeaturePoint> = lattice
            .iter()
            .map(|&(x, y)| FeaturePoint::new(img.pixel(x, y), field.get(x, y)))
            .collect();
        alphas = compute_alphas(&points, &stroke_points, &model.palette.config);
        for &(x, y) in &lattice {
            constraint_weights.extend_from_slice(wf.at(x, y));
        }
    }

    Ok(EditProblem {
        k,
        stroke_weights,
        stroke_sources: stroke_points.iter().map(|p| p.color).collect(),
        stroke_targets: h.iter().map(|p| p.target).collect(),
        constraint_weights,
        alphas,
        palette_colors: model.palette.entries.iter().map(|e| e.color).collect(),
    })
}

/// Minimizes the edit energy over palette deltas inside the color gamut.
pub fn solve_edit(problem: &EditProblem, palette: &SemanticPalette) -> Result<EditSolution> {
    problem.validate()?;
    if palette.len() != problem.k {
        return Err(Error::Dimension("palette size differs from problem".into()));
    }
    let k = problem.k;
    let q = problem.hessian();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite energy Hessian".into()));
    }
    let mut deltas = vec![[0.0; 3]; k];
    for ch in 0..3 {
        let c = problem.linear_term(ch);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite energy gradient".into()));
        }
        let lo: Vec<f64> = problem.palette_colors.iter().map(|p| -p[ch]).collect();
        let hi: Vec<f64> = problem.palette_colors.iter().map(|p| 1.0 - p[ch]).collect();
        let result = solve_box_qp(&q, &c, &lo, &hi, &vec![0.0; k]);
        if !result.converged {
            log::warn!("box QP for channel {ch} stopped after {} iterations", result.iterations);
        }
        for (d, v) in deltas.iter_mut().zip(result.x.iter()) {
            d[ch] = *v;
        }
    }
    // the zero edit is always feasible; never return anything worse
    let terms = problem.energy(&deltas);
    let zero = problem.energy(&vec![[0.0; 3]; k]);
    let terms = if terms.total() > zero.total() {
        deltas = vec![[0.0; 3]; k];
        zero
    } else {
        terms
    };
    if !terms.total().is_finite() {
        return Err(Error::Numerical("non-finite edit energy".into()));
    }

    let mut edited = palette.clone();
    for (e, d) in edited.entries.iter_mut().zip(&deltas) {
        for (c, dc) in e.color.iter_mut().zip(d) {
            *c = (*c + dc).clamp(0.0, 1.0);
        }
    }
    Ok(EditSolution {
        deltas,
        edited_palette: edited,
        energy: terms.total(),
        fidelity: terms.fidelity,
        propagation: terms.propagation,
    })
}

/// Recolors every pixel with its weight row and the solved deltas.
pub fn apply_edit(img: &ImageRgb, wf: &WeightField, deltas: &[[f64; 3]]) -> Result<ImageRgb> {
    if wf.width != img.width() || wf.height != img.height() || wf.k != deltas.len() {
        return Err(Error::Dimension("weight field does not match image and deltas".into()));
    }
    let k = wf.k;
    let mut data = img.data().to_vec();
    data.par_chunks_mut(3 * 4096)
        .zip(wf.data.par_chunks(k * 4096))
        .for_each(|(pixels, weights)| {
            for (p, w) in pixels.chunks_exact_mut(3).zip(weights.chunks_exact(k)) {
                let out = transfer_color([p[0], p[1], p[2]], w, deltas);
                p.copy_from_slice(&out);
            }
        });
    Ok(ImageRgb::from_raw_unchecked(img.width(), img.height(), data))
}
