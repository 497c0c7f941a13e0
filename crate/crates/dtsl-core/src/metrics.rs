//! Segmentation evaluation: Dice, Jaccard, 95% Hausdorff distance, and
//! average surface distance.
//!
//! Overlap metrics are exact set counts. Surface metrics extract mask
//! boundaries by 4-connectivity (out-of-image counts as outside), then
//! measure Euclidean nearest-boundary distances in both directions through
//! an exact two-pass squared-distance transform. The 95th percentile uses
//! the ceil ordinal convention on the pooled ascending distances:
//! index = ceil(0.95 * n) - 1.

use crate::{Error, Result};

/// Per-mask-pair metric values. Surface distances are undefined when either
/// boundary is empty and are excluded from aggregate means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskMetrics {
    /// Dice similarity coefficient in percent.
    pub dsc: f64,
    /// Jaccard index in percent.
    pub jaccard: f64,
    /// 95th-percentile symmetric boundary distance, pixels.
    pub hd95: Option<f64>,
    /// Mean symmetric boundary distance, pixels.
    pub asd: Option<f64>,
}

/// Aggregated per-class metrics over an evaluation set.
#[derive(Debug, Clone)]
pub struct ClassReport {
    pub class: usize,
    pub dsc: f64,
    pub jaccard: f64,
    /// Mean over cases where the distance was defined; None if never defined.
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

/// Per-class rows plus the foreground mean (classes 1..K-1).
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub per_class: Vec<ClassReport>,
    pub foreground: ClassReport,
}

fn check_same_dims(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<()> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::Shape(format!(
            "mask length {} or {} does not match {h}x{w}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Dice similarity coefficient in percent; 100 when both masks are empty.
pub fn dsc(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<f64> {
    check_same_dims(pred, gt, h, w)?;
    let inter = pred.iter().zip(gt).filter(|&(&p, &g)| p && g).count();
    let pa = pred.iter().filter(|&&p| p).count();
    let ga = gt.iter().filter(|&&g| g).count();
    if pa + ga == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (pa + ga) as f64)
}

/// Jaccard index in percent; 100 when both masks are empty.
pub fn jaccard(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<f64> {
    check_same_dims(pred, gt, h, w)?;
    let inter = pred.iter().zip(gt).filter(|&(&p, &g)| p && g).count();
    let union = pred.iter().zip(gt).filter(|&(&p, &g)| p || g).count();
    if union == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * inter as f64 / union as f64)
}

/// Mask pixels with at least one 4-neighbor outside the mask (image borders
/// count as outside). Returns (y, x) coordinates.
pub fn boundary_pixels(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let outside = (y == 0 || !mask[(y - 1) * w + x])
                || (y + 1 == h || !mask[(y + 1) * w + x])
                || (x == 0 || !mask[y * w + x - 1])
                || (x + 1 == w || !mask[y * w + x + 1]);
            if outside {
                out.push((y, x));
            }
        }
    }
    out
}

/// Exact squared Euclidean distance transform to a point set, evaluated on
/// the full h x w grid. Two-pass lower-envelope-of-parabolas construction.
/// Finite heights and intersections stay on small exactly-representable
/// rationals, so sampled distances are exact; the big-finite sentinel only
/// ever loses against real parabolas.
fn squared_edt(points: &[(usize, usize)], h: usize, w: usize) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut dist = vec![INF; h * w];
    for &(y, x) in points {
        dist[y * w + x] = 0.0;
    }
    // columns first, then rows
    let mut scratch_f = vec![0.0f64; h.max(w)];
    let mut scratch_v = vec![0usize; h.max(w)];
    let mut scratch_z = vec![0.0f64; h.max(w) + 1];
    let mut scratch_out = vec![0.0f64; h.max(w)];

    for x in 0..w {
        for y in 0..h {
            scratch_f[y] = dist[y * w + x];
        }
        edt_1d(&scratch_f[..h], &mut scratch_v, &mut scratch_z, &mut scratch_out);
        for y in 0..h {
            dist[y * w + x] = scratch_out[y];
        }
    }
    for y in 0..h {
        scratch_f[..w].copy_from_slice(&dist[y * w..][..w]);
        edt_1d(&scratch_f[..w], &mut scratch_v, &mut scratch_z, &mut scratch_out);
        dist[y * w..][..w].copy_from_slice(&scratch_out[..w]);
    }
    dist
}

/// 1D squared distance transform of a sampled function.
fn edt_1d(f: &[f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let intersect = |q: usize, p: usize| -> f64 {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Pooled symmetric boundary-to-boundary nearest distances: for every
/// boundary pixel of each mask, the Euclidean distance to the nearest
/// boundary pixel of the other mask. None if either boundary is empty.
fn surface_distances(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Option<Vec<f64>> {
    let bp = boundary_pixels(pred, h, w);
    let bg = boundary_pixels(gt, h, w);
    if bp.is_empty() || bg.is_empty() {
        return None;
    }
    let d_to_gt = squared_edt(&bg, h, w);
    let d_to_pred = squared_edt(&bp, h, w);
    let mut pooled = Vec::with_capacity(bp.len() + bg.len());
    for &(y, x) in &bp {
        pooled.push(d_to_gt[y * w + x].sqrt());
    }
    for &(y, x) in &bg {
        pooled.push(d_to_pred[y * w + x].sqrt());
    }
    Some(pooled)
}

/// 95th percentile of the pooled symmetric boundary distances.
pub fn hd95(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<Option<f64>> {
    check_same_dims(pred, gt, h, w)?;
    Ok(surface_distances(pred, gt, h, w).map(|d| percentile_ceil(&d, 0.95)))
}

/// Mean of the pooled symmetric boundary distances.
pub fn asd(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<Option<f64>> {
    check_same_dims(pred, gt, h, w)?;
    Ok(surface_distances(pred, gt, h, w)
        .map(|d| d.iter().sum::<f64>() / d.len() as f64))
}

/// Ordinal percentile: sort ascending, take index ceil(p * n) - 1.
pub fn percentile_ceil(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let idx = ((p * sorted.len() as f64).ceil() as usize).max(1) - 1;
    sorted[idx.min(sorted.len() - 1)]
}

/// All four metrics for one mask pair.
pub fn evaluate_masks(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<MaskMetrics> {
    Ok(MaskMetrics {
        dsc: dsc(pred, gt, h, w)?,
        jaccard: jaccard(pred, gt, h, w)?,
        hd95: hd95(pred, gt, h, w)?,
        asd: asd(pred, gt, h, w)?,
    })
}

/// Aggregate per-case metrics into per-class rows and the foreground mean.
/// `cases[class][case]` holds the per-case values for one class.
pub fn aggregate(per_class_cases: &[Vec<MaskMetrics>]) -> MetricReport {
    let mut per_class = Vec::with_capacity(per_class_cases.len());
    for (ci, cases) in per_class_cases.iter().enumerate() {
        per_class.push(aggregate_class(ci + 1, cases));
    }
    let fg_dsc = mean(per_class.iter().map(|c| c.dsc));
    let fg_jac = mean(per_class.iter().map(|c| c.jaccard));
    let fg_hd = mean_opt(per_class.iter().map(|c| c.hd95));
    let fg_asd = mean_opt(per_class.iter().map(|c| c.asd));
    MetricReport {
        foreground: ClassReport {
            class: 0,
            dsc: fg_dsc,
            jaccard: fg_jac,
            hd95: fg_hd,
            asd: fg_asd,
        },
        per_class,
    }
}

fn aggregate_class(class: usize, cases: &[MaskMetrics]) -> ClassReport {
    ClassReport {
        class,
        dsc: mean(cases.iter().map(|c| c.dsc)),
        jaccard: mean(cases.iter().map(|c| c.jaccard)),
        hd95: mean_opt(cases.iter().map(|c| c.hd95)),
        asd: mean_opt(cases.iter().map(|c| c.asd)),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: all-pairs nearest boundary distances.
    pub(crate) fn surface_distances_oracle(
        pred: &[bool],
        gt: &[bool],
        h: usize,
        w: usize,
    ) -> Option<Vec<f64>> {
        let bp = boundary_pixels(pred, h, w);
        let bg = boundary_pixels(gt, h, w);
        if bp.is_empty() || bg.is_empty() {
            return None;
        }
        let nearest = |from: &[(usize, usize)], to: &[(usize, usize)]| -> Vec<f64> {
            from.iter()
                .map(|&(y, x)| {
                    to.iter()
                        .map(|&(ty, tx)| {
                            let dy = y as f64 - ty as f64;
                            let dx = x as f64 - tx as f64;
                            (dy * dy + dx * dx).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        };
        let mut pooled = nearest(&bp, &bg);
        pooled.extend(nearest(&bg, &bp));
        Some(pooled)
    }

    fn block_mask(h: usize, w: usize, y0: usize, x0: usize, sz: usize) -> Vec<bool> {
        let mut m = vec![false; h * w];
        for y in y0..y0 + sz {
            for x in x0..x0 + sz {
                m[y * w + x] = true;
            }
        }
        m
    }

    #[test]
    fn overlap_metrics_identical_and_disjoint() {
        let a = block_mask(8, 8, 1, 1, 3);
        let b = block_mask(8, 8, 5, 5, 2);
        assert_eq!(dsc(&a, &a, 8, 8).unwrap(), 100.0);
        assert_eq!(jaccard(&a, &a, 8, 8).unwrap(), 100.0);
        assert_eq!(dsc(&a, &b, 8, 8).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &b, 8, 8).unwrap(), 0.0);
        let empty = vec![false; 64];
        assert_eq!(dsc(&empty, &empty, 8, 8).unwrap(), 100.0);
        assert_eq!(jaccard(&empty, &empty, 8, 8).unwrap(), 100.0);
    }

    #[test]
    fn dsc_shifted_block_matches_set_counts() {
        let a = block_mask(8, 8, 2, 2, 3);
        let b = block_mask(8, 8, 3, 3, 3);
        // intersection is a 2x2 block = 4 pixels, each mask has 9
        assert_eq!(dsc(&a, &b, 8, 8).unwrap(), 100.0 * 8.0 / 18.0);
        assert_eq!(jaccard(&a, &b, 8, 8).unwrap(), 100.0 * 4.0 / 14.0);
    }

    #[test]
    fn jaccard_dice_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.3)).collect();
            let b: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.3)).collect();
            let d = dsc(&a, &b, 16, 16).unwrap() / 100.0;
            let j = jaccard(&a, &b, 16, 16).unwrap() / 100.0;
            assert!((j - d / (2.0 - d)).abs() < 1e-12);
            assert!(j <= d + 1e-12);
        }
    }

    #[test]
    fn surface_metrics_identical_masks_are_zero() {
        let a = block_mask(16, 16, 3, 4, 6);
        assert_eq!(hd95(&a, &a, 16, 16).unwrap(), Some(0.0));
        assert_eq!(asd(&a, &a, 16, 16).unwrap(), Some(0.0));
    }

    #[test]
    fn single_pixels_at_3_4_5_triangle() {
        let mut a = vec![false; 16 * 16];
        let mut b = vec![false; 16 * 16];
        a[2 * 16 + 2] = true;
        b[5 * 16 + 6] = true; // dy=3, dx=4 -> distance 5
        assert_eq!(hd95(&a, &b, 16, 16).unwrap(), Some(5.0));
        assert_eq!(asd(&a, &b, 16, 16).unwrap(), Some(5.0));
    }

    #[test]
    fn empty_mask_gives_undefined_surface_distance() {
        let a = block_mask(8, 8, 1, 1, 3);
        let empty = vec![false; 64];
        assert_eq!(hd95(&a, &empty, 8, 8).unwrap(), None);
        assert_eq!(asd(&empty, &a, 8, 8).unwrap(), None);
    }

    #[test]
    fn concentric_squares_match_oracle() {
        let outer = block_mask(16, 16, 4, 4, 8);
        let inner = block_mask(16, 16, 6, 6, 4);
        let fast = surface_distances(&outer, &inner, 16, 16).unwrap();
        let slow = surface_distances_oracle(&outer, &inner, 16, 16).unwrap();
        let mean_fast = fast.iter().sum::<f64>() / fast.len() as f64;
        let mean_slow = slow.iter().sum::<f64>() / slow.len() as f64;
        assert!((mean_fast - mean_slow).abs() < 1e-9);
    }

    #[test]
    fn random_blobs_match_allpairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..40 {
            let (h, w) = (24, 24);
            let blob = |rng: &mut ChaCha8Rng| -> Vec<bool> {
                let mut m = vec![false; h * w];
                let (cy, cx) = (rng.gen_range(6..18) as f64, rng.gen_range(6..18) as f64);
                let r = rng.gen_range(2.0..6.0);
                for y in 0..h {
                    for x in 0..w {
                        let d = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        if d < r * r {
                            m[y * w + x] = true;
                        }
                    }
                }
                m
            };
            let a = blob(&mut rng);
            let b = blob(&mut rng);
            let (fast, slow) = (
                surface_distances(&a, &b, h, w),
                surface_distances_oracle(&a, &b, h, w),
            );
            match (fast, slow) {
                (None, None) => {}
                (Some(f), Some(s)) => {
                    let hf = percentile_ceil(&f, 0.95);
                    let hs = percentile_ceil(&s, 0.95);
                    assert!((hf - hs).abs() < 1e-9, "trial {trial}: hd95 {hf} vs {hs}");
                    let af = f.iter().sum::<f64>() / f.len() as f64;
                    let as_ = s.iter().sum::<f64>() / s.len() as f64;
                    assert!((af - as_).abs() < 1e-9, "trial {trial}: asd {af} vs {as_}");
                }
                other => panic!("trial {trial}: definedness disagrees: {other:?}"),
            }
        }
    }

    #[test]
    fn symmetry_and_translation_invariance() {
        let a = block_mask(16, 16, 2, 3, 5);
        let b = block_mask(16, 16, 5, 6, 4);
        assert_eq!(hd95(&a, &b, 16, 16).unwrap(), hd95(&b, &a, 16, 16).unwrap());
        assert_eq!(asd(&a, &b, 16, 16).unwrap(), asd(&b, &a, 16, 16).unwrap());

        let a2 = block_mask(16, 16, 4, 5, 5);
        let b2 = block_mask(16, 16, 7, 8, 4);
        assert_eq!(dsc(&a, &b, 16, 16).unwrap(), dsc(&a2, &b2, 16, 16).unwrap());
        assert_eq!(hd95(&a, &b, 16, 16).unwrap(), hd95(&a2, &b2, 16, 16).unwrap());
        assert_eq!(asd(&a, &b, 16, 16).unwrap(), asd(&a2, &b2, 16, 16).unwrap());
    }

    #[test]
    fn asd_bounded_by_max_distance() {
        let a = block_mask(16, 16, 1, 1, 4);
        let b = block_mask(16, 16, 9, 9, 4);
        let pooled = surface_distances(&a, &b, 16, 16).unwrap();
        let max = pooled.iter().cloned().fold(0.0, f64::max);
        let mean = asd(&a, &b, 16, 16).unwrap().unwrap();
        assert!(mean <= max);
    }
}
