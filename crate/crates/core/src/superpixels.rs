//! SLIC superpixels and the centroid sample points that feed palette seeding.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureField, FeaturePoint};
use crate::imgio::{encode_gray16, ImageRgb};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicParams {
    /// Desired superpixel count; clamped to `1..=pixel count`.
    pub n_target: usize,
    pub compactness: f64,
    pub iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_target: 800,
            compactness: 10.0,
            iters: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    /// Row-major ids in `0..n`.
    pub labels: Vec<u32>,
    pub n: usize,
    pub sizes: Vec<usize>,
    /// Member pixel `(x, y)` closest to each segment's mean position and color.
    pub centroid_pixels: Vec<(usize, usize)>,
}

impl SuperpixelMap {
    /// 16-bit grayscale PNG of the label map (`id mod 65536`).
    pub fn label_png(&self) -> Vec<u8> {
        encode_gray16(
            self.width,
            self.height,
            self.labels.iter().map(|&l| (l % 65536) as u16).collect(),
        )
    }
}

/// Importance-weighted sample for greedy seeding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub point: FeaturePoint,
    pub weight: f64,
    pub source_id: usize,
}

/// sRGB (D65) to CIELAB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let [r, g, b] = rgb.map(lin);
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        const EPS: f64 = 216.0 / 24389.0;
        const KAPPA: f64 = 24389.0 / 27.0;
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

fn lab_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Grid dimensions with `nx * ny <= n_target`, roughly square cells of side `step`.
fn grid_shape(width: usize, height: usize, n_target: usize, step: f64) -> (usize, usize) {
    let mut nx = ((width as f64 / step).round() as usize).clamp(1, width);
    let mut ny = ((height as f64 / step).round() as usize).clamp(1, height);
    while nx * ny > n_target {
        if nx >= ny && nx > 1 {
            nx -= 1;
        } else {
            ny -= 1;
        }
    }
    (nx, ny)
}

pub fn slic_segment(img: &ImageRgb, params: &SlicParams) -> SuperpixelMap {
    let (w, h) = (img.width(), img.height());
    let npix = w * h;
    let n_target = params.n_target.clamp(1, npix);
    let step = (npix as f64 / n_target as f64).sqrt();
    let lab: Vec<[f64; 3]> = img.pixels().map(srgb_to_lab).collect();

    let (nx, ny) = grid_shape(w, h, n_target, step);
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let (px, py) = lowest_gradient(&lab, w, h, cx, cy);
            centers.push(Center {
                lab: lab[py * w + px],
                x: px as f64,
                y: py as f64,
            });
        }
    }

    let spatial = params.compactness / step;
    let radius = (2.0 * step).ceil() as i64;
    let mut labels = vec![0u32; npix];
    let mut dist = vec![f64::INFINITY; npix];
    for _ in 0..params.iters.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let dxy = ((x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2)).sqrt();
                    let d = lab_dist(&lab[i], &c.lab) + spatial * dxy;
                    // strict: ties keep the lower cluster id
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // pixels outside every window fall back to the nearest center
        for i in 0..npix {
            if dist[i].is_infinite() {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let mut best = (f64::INFINITY, 0);
                for (k, c) in centers.iter().enumerate() {
                    let d = lab_dist(&lab[i], &c.lab)
                        + spatial * ((x - c.x).powi(2) + (y - c.y).powi(2)).sqrt();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                labels[i] = best.1 as u32;
            }
        }

        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            a[0] += lab[i][0];
            a[1] += lab[i][1];
            a[2] += lab[i][2];
            a[3] += (i % w) as f64;
            a[4] += (i / w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                *c = Center {
                    lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
                    x: a[3] / a[5],
                    y: a[4] / a[5],
                };
            }
        }
    }

    let min_size = ((step * step) / 4.0).floor() as usize;
    let labels = enforce_connectivity(&labels, w, h, min_size);
    finish_map(&labels, &lab, w, h, spatial)
}

/// Lowest-gradient pixel in the 3×3 neighborhood of `(cx, cy)`.
fn lowest_gradient(lab: &[[f64; 3]], w: usize, h: usize, cx: usize, cy: usize) -> (usize, usize) {
    let grad = |x: usize, y: usize| {
        let at = |x: usize, y: usize| &lab[y * w + x];
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let gx: f64 = (0..3).map(|c| (at(xr, y)[c] - at(xl, y)[c]).powi(2)).sum();
        let gy: f64 = (0..3).map(|c| (at(x, yd)[c] - at(x, yu)[c]).powi(2)).sum();
        gx + gy
    };
    let mut best = (grad(cx, cy), cx, cy);
    for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
        for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
            let g = grad(x, y);
            if g < best.0 {
                best = (g, x, y);
            }
        }
    }
    (best.1, best.2)
}

/// Keeps each label's largest 4-connected component (when at least
/// `min_size` pixels) and absorbs every other component into the largest
/// adjacent kept segment. Output labels are contiguous in scan order.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<u32> {
    let npix = w * h;
    let mut comp = vec![usize::MAX; npix];
    let mut comp_label = Vec::new();
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..npix {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_pixels.len();
        let mut members = vec![start];
        comp[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbors4(i, w, h) {
                if comp[j] == usize::MAX && labels[j] == labels[start] {
                    comp[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        comp_label.push(labels[start]);
        comp_pixels.push(members);
    }

    let ncomp = comp_pixels.len();
    let nlabels = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut largest = vec![usize::MAX; nlabels];
    for c in 0..ncomp {
        let l = comp_label[c] as usize;
        if largest[l] == usize::MAX || comp_pixels[c].len() > comp_pixels[largest[l]].len() {
            largest[l] = c;
        }
    }

    // owner[c] = the kept component that component c ends up in
    let mut owner = vec![usize::MAX; ncomp];
    let mut segment_size = vec![0usize; ncomp];
    for &c in largest.iter().take(nlabels) {
        if c != usize::MAX && comp_pixels[c].len() >= min_size {
            owner[c] = c;
            segment_size[c] = comp_pixels[c].len();
        }
    }
    if owner.iter().all(|&o| o == usize::MAX) {
        let c = (0..ncomp)
            .max_by(|&a, &b| comp_pixels[a].len().cmp(&comp_pixels[b].len()).then(b.cmp(&a)))
            .expect("non-empty image");
        owner[c] = c;
        segment_size[c] = comp_pixels[c].len();
    }

    let mut pending: Vec<usize> = (0..ncomp).filter(|&c| owner[c] == usize::MAX).collect();
    while !pending.is_empty() {
        let mut deferred = Vec::new();
        for &c in &pending {
            let mut best: Option<usize> = None;
            for &i in &comp_pixels[c] {
                for j in neighbors4(i, w, h) {
                    let o = owner[comp[j]];
                    if o == usize::MAX || o == c {
                        continue;
                    }
                    best = match best {
                        Some(b) if segment_size[b] > segment_size[o]
                            || (segment_size[b] == segment_size[o] && b < o) => Some(b),
                        _ => Some(o),
                    };
                }
            }
            match best {
                Some(o) => {
                    owner[c] = o;
                    segment_size[o] += comp_pixels[c].len();
                }
                None => deferred.push(c),
            }
        }
        assert!(deferred.len() < pending.len(), "grid components are connected");
        pending = deferred;
    }

    let mut remap = vec![u32::MAX; ncomp];
    let mut next = 0u32;
    let mut out = vec![0u32; npix];
    for i in 0..npix {
        let o = owner[comp[i]];
        if remap[o] == u32::MAX {
            remap[o] = next;
            next += 1;
        }
        out[i] = remap[o];
    }
    out
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

fn finish_map(labels: &[u32], lab: &[[f64; 3]], w: usize, h: usize, spatial: f64) -> SuperpixelMap {
    let n = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut acc = vec![[0.0f64; 5]; n];
    let mut sizes = vec![0usize; n];
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += lab[i][0];
        a[1] += lab[i][1];
        a[2] += lab[i][2];
        a[3] += (i % w) as f64;
        a[4] += (i / w) as f64;
        sizes[l as usize] += 1;
    }
    let means: Vec<Center> = acc
        .iter()
        .zip(&sizes)
        .map(|(a, &s)| {
            let s = s as f64;
            Center {
                lab: [a[0] / s, a[1] / s, a[2] / s],
                x: a[3] / s,
                y: a[4] / s,
            }
        })
        .collect();
    let mut best = vec![(f64::INFINITY, 0usize); n];
    for (i, &l) in labels.iter().enumerate() {
        let c = &means[l as usize];
        let d = lab_dist(&lab[i], &c.lab)
            + spatial * (((i % w) as f64 - c.x).powi(2) + ((i / w) as f64 - c.y).powi(2)).sqrt();
        if d < best[l as usize].0 {
            best[l as usize] = (d, i);
        }
    }
    SuperpixelMap {
        width: w,
        height: h,
        labels: labels.to_vec(),
        n,
        sizes,
        centroid_pixels: best.iter().map(|&(_, i)| (i % w, i / w)).collect(),
    }
}

/// One sample per superpixel, at its centroid pixel, weighted by its size.
pub fn centroid_samples(img: &ImageRgb, field: &FeatureField, sp: &SuperpixelMap) -> Result<Vec<SamplePoint>> {
    field.check_matches(img)?;
    Ok(sp
        .centroid_pixels
        .iter()
        .zip(&sp.sizes)
        .enumerate()
        .map(|(id, (&(x, y), &size))| SamplePoint {
            point: FeaturePoint::new(img.pixel(x, y), field.get(x, y)),
            weight: size as f64,
            source_id: id,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_partition(sp: &SuperpixelMap) {
        assert_eq!(sp.sizes.iter().sum::<usize>(), sp.width * sp.height);
        assert_eq!(sp.sizes.len(), sp.n);
        assert!(sp.sizes.iter().all(|&s| s > 0));
        assert!(sp.labels.iter().all(|&l| (l as usize) < sp.n));
        for (id, &(x, y)) in sp.centroid_pixels.iter().enumerate() {
            assert_eq!(sp.labels[y * sp.width + x] as usize, id);
        }
        // 4-connectivity: a flood fill from any member reaches the whole segment
        let (w, h) = (sp.width, sp.height);
        let mut seen = vec![false; w * h];
        for id in 0..sp.n {
            let (sx, sy) = sp.centroid_pixels[id];
            let mut stack = vec![sy * w + sx];
            seen[sy * w + sx] = true;
            let mut count = 0;
            while let Some(i) = stack.pop() {
                count += 1;
                for j in neighbors4(i, w, h) {
                    if !seen[j] && sp.labels[j] as usize == id {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            assert_eq!(count, sp.sizes[id], "segment {id} is not connected");
        }
    }

    #[test]
    fn single_superpixel() {
        let img = ImageRgb::from_fn(13, 7, |x, y| [x as f64 / 12.0, y as f64 / 6.0, 0.3]);
        let sp = slic_segment(&img, &SlicParams { n_target: 1, ..Default::default() });
        assert_eq!(sp.n, 1);
        assert!(sp.labels.iter().all(|&l| l == 0));
        check_partition(&sp);
    }

    #[test]
    fn uniform_image_gives_even_grid() {
        let img = ImageRgb::filled(64, 64, [0.4, 0.5, 0.6]);
        let sp = slic_segment(&img, &SlicParams { n_target: 16, ..Default::default() });
        check_partition(&sp);
        assert_eq!(sp.n, 16);
        for &s in &sp.sizes {
            assert!((179..=333).contains(&s), "size {s}");
        }
    }

    #[test]
    fn segments_respect_color_boundary() {
        let img = ImageRgb::from_fn(64, 64, |x, _| if x < 32 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        let sp = slic_segment(
            &img,
            &SlicParams {
                n_target: 8,
                compactness: 1.0,
                ..Default::default()
            },
        );
        check_partition(&sp);
        for id in 0..sp.n as u32 {
            let sides: Vec<bool> = (0..64 * 64)
                .filter(|&i| sp.labels[i] == id)
                .map(|i| i % 64 < 32)
                .collect();
            assert!(sides.iter().all(|&s| s == sides[0]), "segment {id} spans the boundary");
        }
    }

    #[test]
    fn per_pixel_target_does_not_crash() {
        let img = ImageRgb::from_fn(9, 6, |x, y| [((x * y) % 5) as f64 / 4.0, 0.5, x as f64 / 8.0]);
        let sp = slic_segment(&img, &SlicParams { n_target: 54, ..Default::default() });
        check_partition(&sp);
        assert!(sp.n > 27);
    }

    #[test]
    fn deterministic_and_partitioned_on_texture() {
        let img = ImageRgb::from_fn(40, 30, |x, y| {
            let v = (((x * 31 + y * 17) % 23) as f64) / 22.0;
            [v, (x as f64 / 39.0), 1.0 - v]
        });
        let p = SlicParams { n_target: 30, ..Default::default() };
        let a = slic_segment(&img, &p);
        check_partition(&a);
        assert_eq!(a, slic_segment(&img, &p));
    }

    #[test]
    fn lab_reference_values() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.05 && (red[1] - 80.09).abs() < 0.1 && (red[2] - 67.20).abs() < 0.1);
        assert_eq!(srgb_to_lab([0.0; 3]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn samples_follow_superpixels() {
        let img = ImageRgb::filled(4, 4, [0.3, 0.3, 0.3]);
        let field = FeatureField::from_fn(4, 4, |x, y| [x as f64 / 3.0, y as f64 / 3.0, 0.0]);
        let sp = slic_segment(&img, &SlicParams { n_target: 1, ..Default::default() });
        let samples = centroid_samples(&img, &field, &sp).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].weight, 16.0);

        let sp = slic_segment(&img, &SlicParams { n_target: 4, ..Default::default() });
        let samples = centroid_samples(&img, &field, &sp).unwrap();
        assert_eq!(samples.iter().map(|s| s.weight).sum::<f64>(), 16.0);
        assert!(samples.iter().all(|s| s.point.color == [0.3; 3]));
    }

    #[test]
    fn label_png_decodes() {
        let img = ImageRgb::filled(8, 8, [0.5; 3]);
        let sp = slic_segment(&img, &SlicParams { n_target: 4, ..Default::default() });
        let decoded = image::load_from_memory(&sp.label_png()).unwrap().into_luma16();
        assert_eq!(decoded.into_raw(), sp.labels.iter().map(|&l| l as u16).collect::<Vec<_>>());
    }
}
