//! Semantic palette extraction: weighted color + semantic distance, greedy
//! importance-decay seeding, and k-means refinement over superpixel samples.

use serde::{Deserialize, Serialize};

use crate::features::{FeatureField, FeaturePoint};
use crate::imgio::ImageRgb;
use crate::superpixels::{centroid_samples, slic_segment, SamplePoint, SlicParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaletteConfig {
    /// Weight of the color distance.
    pub w_c: f64,
    /// Weight of the semantic distance.
    pub w_s: f64,
    /// Seeding stops once the largest remaining importance drops below this.
    pub t: f64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for PaletteConfig {
    fn default() -> Self {
        Self {
            w_c: 1.0,
            w_s: 3.0,
            t: 0.80,
            kmeans_max_iters: 50,
            kmeans_tol: 1e-5,
        }
    }
}

impl PaletteConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.w_c, self.w_s, self.t, self.kmeans_tol]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("palette parameters must be finite".into()));
        }
        if self.w_c < 0.0 || self.w_s < 0.0 || self.w_c + self.w_s <= 0.0 {
            return Err(Error::Config(format!(
                "need w_c >= 0, w_s >= 0 and w_c + w_s > 0 (got {}, {})",
                self.w_c, self.w_s
            )));
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::Config(format!("threshold t = {} not in (0, 1)", self.t)));
        }
        if self.kmeans_tol < 0.0 {
            return Err(Error::Config("kmeans_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPalette {
    pub entries: Vec<FeaturePoint>,
    pub config: PaletteConfig,
}

impl SemanticPalette {
    pub fn new(entries: Vec<FeaturePoint>, config: PaletteConfig) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Parse("palette has no entries".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.to_array().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Parse(format!("palette entry {i} outside [0, 1]^6")));
            }
            if entries[..i].contains(e) {
                return Err(Error::Parse(format!("palette entry {i} duplicates an earlier entry")));
            }
        }
        Ok(Self { entries, config })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn norm3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `w_c ‖a.C − b.C‖ + w_s ‖a.S − b.S‖`.
pub fn feature_distance(a: &FeaturePoint, b: &FeaturePoint, cfg: &PaletteConfig) -> f64 {
    cfg.w_c * norm3(&a.color, &b.color) + cfg.w_s * norm3(&a.semantic, &b.semantic)
}

/// Indices of the samples picked as seeds, in pick order.
///
/// Importances start at `size / max size`; every pick scales each sample's
/// importance by `1 − exp(−d²)` to the picked point. The first pick always
/// happens; picking stops when the largest importance falls below `t`.
pub fn select_seed_indices(samples: &[SamplePoint], cfg: &PaletteConfig) -> Vec<usize> {
    if samples.is_empty() {
        return Vec::new();
    }
    let max_size = samples.iter().map(|s| s.weight).fold(0.0, f64::max);
    let mut pi: Vec<f64> = samples
        .iter()
        .map(|s| if max_size > 0.0 { s.weight / max_size } else { 1.0 })
        .collect();
    let mut picks = Vec::new();
    loop {
        let (best, &best_pi) = pi
            .iter()
            .enumerate()
            .fold((0, &pi[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        if !picks.is_empty() && best_pi < cfg.t {
            break;
        }
        let seed = samples[best].point;
        for (p, s) in pi.iter_mut().zip(samples) {
            let d = feature_distance(&seed, &s.point, cfg);
            *p *= 1.0 - (-d * d).exp();
        }
        pi[best] = 0.0;
        picks.push(best);
        if picks.len() == samples.len() {
            break;
        }
    }
    picks
}

pub fn select_seeds(samples: &[SamplePoint], cfg: &PaletteConfig) -> Vec<FeaturePoint> {
    select_seed_indices(samples, cfg)
        .into_iter()
        .map(|i| samples[i].point)
        .collect()
}

/// Diagnostics from [`kmeans_refine_traced`].
#[derive(Debug, Clone, Default)]
pub struct KmeansTrace {
    pub iterations: usize,
    /// Total assignment cost right after each assignment step.
    pub assignment_costs: Vec<f64>,
    /// Cost of the previous assignment re-evaluated against the centers the
    /// new assignment was computed from (one entry per iteration after the first).
    pub pre_assignment_costs: Vec<f64>,
    pub reseeded: usize,
}

pub fn kmeans_refine(samples: &[SamplePoint], seeds: &[FeaturePoint], cfg: &PaletteConfig) -> SemanticPalette {
    kmeans_refine_traced(samples, seeds, cfg).0
}

/// Lloyd iterations under the weighted feature distance with arithmetic-mean
/// center updates.
pub fn kmeans_refine_traced(
    samples: &[SamplePoint],
    seeds: &[FeaturePoint],
    cfg: &PaletteConfig,
) -> (SemanticPalette, KmeansTrace) {
    assert!(!seeds.is_empty(), "k-means needs at least one seed");
    let points: Vec<[f64; 6]> = samples.iter().map(|s| s.point.to_array()).collect();
    let mut centers: Vec<[f64; 6]> = seeds.iter().map(FeaturePoint::to_array).collect();
    let k = centers.len();
    let dist = |a: &[f64; 6], b: &[f64; 6]| {
        feature_distance(&FeaturePoint::from_array(*a), &FeaturePoint::from_array(*b), cfg)
    };
    let mut trace = KmeansTrace::default();
    let mut assign = vec![usize::MAX; points.len()];

    for _ in 0..cfg.kmeans_max_iters.max(1) {
        trace.iterations += 1;
        if trace.iterations > 1 {
            trace.pre_assignment_costs.push(
                points
                    .iter()
                    .zip(&assign)
                    .map(|(p, &a)| dist(p, &centers[a]))
                    .sum(),
            );
        }
        let mut cost = 0.0;
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centers.iter().enumerate() {
                let d = dist(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            *a = best.1;
            cost += best.0;
        }
        trace.assignment_costs.push(cost);

        let mut sums = vec![[0.0f64; 6]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            for d in 0..6 {
                sums[a][d] += p[d];
            }
            counts[a] += 1;
        }
        let mut next = centers.clone();
        let mut reseeded = false;
        for j in 0..k {
            if counts[j] > 0 {
                next[j] = sums[j].map(|s| s / counts[j] as f64);
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // farthest sample from its own (updated) center
                let far = points
                    .iter()
                    .zip(&assign)
                    .enumerate()
                    .map(|(i, (p, &a))| (dist(p, &next[a]), i))
                    .fold((f64::NEG_INFINITY, 0), |b, c| if c.0 > b.0 { c } else { b });
                if far.0 > 0.0 {
                    next[j] = points[far.1];
                    reseeded = true;
                    trace.reseeded += 1;
                }
            }
        }
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if !reseeded && shift < cfg.kmeans_tol {
            break;
        }
    }

    let mut entries: Vec<FeaturePoint> = Vec::with_capacity(k);
    for c in centers {
        let p = FeaturePoint::from_array(c.map(|v| v.clamp(0.0, 1.0)));
        if !entries.contains(&p) {
            entries.push(p);
        }
    }
    (
        SemanticPalette {
            entries,
            config: *cfg,
        },
        trace,
    )
}

/// SLIC → centroid samples → greedy seeds → k-means.
pub fn extract_palette(
    img: &ImageRgb,
    field: &FeatureField,
    cfg: &PaletteConfig,
    slic: &SlicParams,
) -> Result<SemanticPalette> {
    cfg.validate()?;
    let sp = slic_segment(img, slic);
    let samples = centroid_samples(img, field, &sp)?;
    let seeds = select_seeds(&samples, cfg);
    Ok(kmeans_refine(&samples, &seeds, cfg))
}
