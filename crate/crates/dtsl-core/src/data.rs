//! Deterministic synthetic segmentation corpus.
//!
//! Each sample is a ring-and-cavity scene: an outer ellipse (class 1) with a
//! nested inner ellipse (class 2) punched out of it, and, from four classes
//! up, separate elliptical blobs (classes 3+) placed away from the ring.
//! Intensities are per-class bands with per-sample jitter; the class-1 and
//! class-3 bands overlap so plain thresholding cannot solve the task.
//! Gaussian pixel noise on top, clamped to [0, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::label::LabelMap;
use crate::{Error, Result};

/// RNG stream reserved for the split shuffle, distinct from every per-sample
/// stream (those start at 1).
const SPLIT_STREAM: u64 = 0;

/// One grayscale image with its dense labels. Image values live in [0, 1].
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub height: usize,
    pub width: usize,
    /// Row-major [H, W] intensities.
    pub image: Vec<f64>,
    /// Batch-1 label map.
    pub label: LabelMap,
}

/// Train/unlabeled/test partition. Unlabeled samples keep their labels for
/// analysis, but training must never read them.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub labeled: Vec<SyntheticSample>,
    pub unlabeled: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

impl DatasetSplit {
    pub fn train_count(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}

#[derive(Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64, // semi-axis along the rotated x direction
    b: f64,
    cos_t: f64,
    sin_t: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * self.cos_t + dy * self.sin_t;
        let v = -dx * self.sin_t + dy * self.cos_t;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn radius_bound(&self) -> f64 {
        self.a.max(self.b)
    }
}

/// Geometry of one generated scene, exposed for the containment checks in
/// tests: inner is constructed to lie strictly inside outer.
pub struct SceneParams {
    outer: Ellipse,
    inner: Ellipse,
    blobs: Vec<Ellipse>,
}

impl SceneParams {
    /// Sufficient analytic condition used by the generator: with shared
    /// rotation, the inner ellipse fits iff the scaled center offset stays
    /// below 1 minus the larger axis ratio.
    pub fn inner_strictly_inside_outer(&self) -> bool {
        let du = (self.inner.cx - self.outer.cx) * self.outer.cos_t
            + (self.inner.cy - self.outer.cy) * self.outer.sin_t;
        let dv = -(self.inner.cx - self.outer.cx) * self.outer.sin_t
            + (self.inner.cy - self.outer.cy) * self.outer.cos_t;
        let shift = ((du / self.outer.a).powi(2) + (dv / self.outer.b).powi(2)).sqrt();
        let ratio = (self.inner.a / self.outer.a).max(self.inner.b / self.outer.b);
        shift + ratio < 1.0
    }
}

fn sample_scene(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> SceneParams {
    let min_dim = h.min(w) as f64;
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let outer = Ellipse {
        cy: rng.gen_range(0.32..0.68) * h as f64,
        cx: rng.gen_range(0.32..0.68) * w as f64,
        a: rng.gen_range(0.14..0.26) * min_dim,
        b: rng.gen_range(0.14..0.26) * min_dim,
        cos_t: theta.cos(),
        sin_t: theta.sin(),
    };
    // Axis ratios below 0.58 plus a scaled offset below 0.8 of the remaining
    // margin guarantee strict containment.
    let ra: f64 = rng.gen_range(0.40..0.58);
    let rb: f64 = rng.gen_range(0.40..0.58);
    let margin = 1.0 - ra.max(rb);
    let shift = rng.gen_range(0.0..0.8 * margin);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let (du, dv) = (
        shift * phi.cos() * outer.a,
        shift * phi.sin() * outer.b,
    );
    let inner = Ellipse {
        cy: outer.cy + du * outer.sin_t + dv * outer.cos_t,
        cx: outer.cx + du * outer.cos_t - dv * outer.sin_t,
        a: ra * outer.a,
        b: rb * outer.b,
        cos_t: outer.cos_t,
        sin_t: outer.sin_t,
    };

    let mut blobs = Vec::new();
    for _ in 3..k {
        // rejection-place each blob clear of the ring and earlier blobs
        for _attempt in 0..60 {
            let phi = rng.gen_range(0.0..std::f64::consts::PI);
            let blob = Ellipse {
                cy: rng.gen_range(0.12..0.88) * h as f64,
                cx: rng.gen_range(0.12..0.88) * w as f64,
                a: rng.gen_range(0.07..0.12) * min_dim,
                b: rng.gen_range(0.07..0.12) * min_dim,
                cos_t: phi.cos(),
                sin_t: phi.sin(),
            };
            let clear_of = |e: &Ellipse| {
                let d = ((blob.cy - e.cy).powi(2) + (blob.cx - e.cx).powi(2)).sqrt();
                d > blob.radius_bound() + e.radius_bound() + 2.0
            };
            if clear_of(&outer) && blobs.iter().all(clear_of) {
                blobs.push(blob);
                break;
            }
        }
    }
    SceneParams {
        outer,
        inner,
        blobs,
    }
}

/// Per-class intensity band centers. Classes 1 and 3 are deliberately close.
fn band_center(class: usize) -> f64 {
    match class {
        0 => 0.15,
        1 => 0.45,
        2 => 0.80,
        3 => 0.50,
        4 => 0.65,
        _ => 0.30,
    }
}

fn rasterize(scene: &SceneParams, h: usize, w: usize, k: usize) -> Vec<u8> {
    let mut labels = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut cls = 0u8;
            if scene.outer.contains(fy, fx) {
                // with fewer than 3 classes the ellipse stays solid
                cls = if k >= 3 && scene.inner.contains(fy, fx) {
                    2
                } else {
                    1
                };
            } else {
                for (bi, blob) in scene.blobs.iter().enumerate() {
                    if blob.contains(fy, fx) {
                        cls = (3 + bi) as u8;
                        break;
                    }
                }
            }
            labels[y * w + x] = cls;
        }
    }
    labels
}

/// Deterministic corpus generation: sample `index` depends only on
/// (seed, index), so corpora can be regenerated piecewise.
pub fn generate(
    seed: u64,
    count: usize,
    h: usize,
    w: usize,
    k: usize,
    noise_sigma: f64,
) -> Result<Vec<SyntheticSample>> {
    if h % 4 != 0 || w % 4 != 0 || h < 16 || w < 16 {
        return Err(Error::Config(format!(
            "image size {h}x{w} must be at least 16 and divisible by 4"
        )));
    }
    if !(2..=6).contains(&k) {
        return Err(Error::Config(format!("class count {k} outside 2..=6")));
    }
    if noise_sigma < 0.0 {
        return Err(Error::Config(format!("negative noise sigma {noise_sigma}")));
    }
    (0..count)
        .map(|i| generate_one(seed, i as u64, h, w, k, noise_sigma))
        .collect()
}

/// Resample until every class has pixels and background keeps the strict
/// majority, giving up after a bounded number of attempts.
fn pick_scene(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> (SceneParams, Vec<u8>) {
    let mut best = None;
    for _attempt in 0..10 {
        let scene = sample_scene(rng, h, w, k);
        let labels = rasterize(&scene, h, w, k);
        let mut counts = vec![0usize; k];
        for &v in &labels {
            counts[v as usize] += 1;
        }
        let ok = counts.iter().all(|&c| c > 0) && counts[0] > h * w / 2;
        best = Some((scene, labels));
        if ok {
            break;
        }
    }
    best.expect("at least one attempt runs")
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

fn generate_one(
    seed: u64,
    index: u64,
    h: usize,
    w: usize,
    k: usize,
    noise_sigma: f64,
) -> Result<SyntheticSample> {
    let mut rng = sample_rng(seed, index);
    let (_, labels) = pick_scene(&mut rng, h, w, k);

    // intensity bands with a small per-sample jitter, then pixel noise
    let bands: Vec<f64> = (0..k)
        .map(|c| band_center(c) + rng.gen_range(-0.03..0.03))
        .collect();
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let image: Vec<f64> = labels
        .iter()
        .map(|&cls| {
            let noise = if noise_sigma > 0.0 {
                noise_sigma * normal.sample(&mut rng)
            } else {
                0.0
            };
            (bands[cls as usize] + noise).clamp(0.0, 1.0)
        })
        .collect();

    Ok(SyntheticSample {
        height: h,
        width: w,
        image,
        label: LabelMap::new(1, h, w, k, labels)?,
    })
}

/// The accepted scene of one sample, exposing the geometric construction for
/// the containment oracle. Replays the same retry sequence as generation.
pub fn scene_for(seed: u64, index: u64, h: usize, w: usize, k: usize) -> SceneParams {
    let mut rng = sample_rng(seed, index);
    pick_scene(&mut rng, h, w, k).0
}

/// Deterministic shuffled split. Test count is `round(test_fraction * n)`,
/// labeled count is `round(labeled_fraction * train)` with at least one
/// labeled sample; the remainder of the train pool is unlabeled.
pub fn split(
    mut samples: Vec<SyntheticSample>,
    labeled_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let n = samples.len();
    if !(0.0..1.0).contains(&labeled_fraction)
        || !(0.0..1.0).contains(&test_fraction)
        || labeled_fraction <= 0.0
        || test_fraction <= 0.0
        || labeled_fraction + test_fraction >= 1.0
    {
        return Err(Error::Config(format!(
            "fractions labeled={labeled_fraction} test={test_fraction} must lie in (0,1) and sum below 1"
        )));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    let n_train = n.checked_sub(n_test).filter(|&t| t >= 2).ok_or_else(|| {
        Error::Config(format!("corpus of {n} too small for test fraction {test_fraction}"))
    })?;
    let n_labeled = ((labeled_fraction * n_train as f64).round() as usize).max(1);
    if n_labeled >= n_train {
        return Err(Error::Config(format!(
            "labeled fraction {labeled_fraction} leaves no unlabeled pool in {n_train} train samples"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let mut slots: Vec<Option<SyntheticSample>> = samples.drain(..).map(Some).collect();
    let take = |slots: &mut Vec<Option<SyntheticSample>>, idx: &[usize]| -> Vec<SyntheticSample> {
        idx.iter()
            .map(|&i| slots[i].take().expect("each index assigned once"))
            .collect()
    };
    let labeled = take(&mut slots, &order[..n_labeled]);
    let unlabeled = take(&mut slots, &order[n_labeled..n_train]);
    let test = take(&mut slots, &order[n_train..]);
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        test,
    })
}
