//! Jensen-Shannon divergence fields, thresholded consistency masks, and the
//! consensus label generator (CLG).
//!
//! Everything here is pure value math on detached probability maps: pseudo-
//! labels are hard argmax assignments and never carry gradient. Logarithms
//! are base 2 throughout, so the JS divergence lives in [0, 1] and the kappa
//! thresholds from the sweeps are on that scale.

use crate::label::LabelMap;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Floor applied to the second argument of a KL term before taking the log.
pub const EPS_LOG: f64 = 1e-12;

/// Normalization slack allowed along the class axis of a probability map.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Per-pixel categorical distribution over `classes`, stored row-major as
/// [B,K,H,W]. Values are non-negative and sum to 1 along the class axis at
/// every pixel (within [`PROB_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    batch: usize,
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(
        batch: usize,
        classes: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Domain(format!(
                "probability map needs at least 2 classes, got {classes}"
            )));
        }
        if data.len() != batch * classes * height * width {
            return Err(Error::Shape(format!(
                "probability data length {} does not match {batch}x{classes}x{height}x{width}",
                data.len()
            )));
        }
        let map = ProbMap {
            batch,
            classes,
            height,
            width,
            data,
        };
        let hw = height * width;
        for b in 0..batch {
            for px in 0..hw {
                let mut sum = 0.0;
                for k in 0..classes {
                    let v = map.data[(b * classes + k) * hw + px];
                    if !(v >= 0.0) {
                        return Err(Error::Domain(format!(
                            "probability {v} negative or NaN at pixel {px}"
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > PROB_TOLERANCE {
                    return Err(Error::Domain(format!(
                        "class-axis sum {sum} at pixel {px} departs from 1"
                    )));
                }
            }
        }
        Ok(map)
    }

    /// Detach a [B,K,H,W] tensor (e.g. a softmax output) into a plain map.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "expected [B,K,H,W] tensor, got {shape:?}"
            )));
        }
        ProbMap::new(shape[0], shape[1], shape[2], shape[3], t.data())
    }

    /// Single-pixel map, handy for the scalar identities in tests.
    pub fn single(dist: &[f64]) -> Result<Self> {
        ProbMap::new(1, dist.len(), 1, 1, dist.to_vec())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn same_shape(&self, other: &ProbMap) -> bool {
        self.batch == other.batch
            && self.classes == other.classes
            && self.height == other.height
            && self.width == other.width
    }

    /// Read the distribution at flat pixel index (b*H*W + y*W + x) into `buf`.
    pub fn read_pixel(&self, flat: usize, buf: &mut [f64]) {
        let hw = self.height * self.width;
        let (b, px) = (flat / hw, flat % hw);
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = self.data[(b * self.classes + k) * hw + px];
        }
    }

    /// Hard argmax labels; ties resolve to the lowest class index.
    pub fn argmax_labels(&self) -> LabelMap {
        let hw = self.height * self.width;
        let mut out = vec![0u8; self.batch * hw];
        for b in 0..self.batch {
            for px in 0..hw {
                let mut best = 0usize;
                let mut best_v = self.data[b * self.classes * hw + px];
                for k in 1..self.classes {
                    let v = self.data[(b * self.classes + k) * hw + px];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                out[b * hw + px] = best as u8;
            }
        }
        LabelMap::new(self.batch, self.height, self.width, self.classes, out)
            .expect("argmax labels are always in range")
    }
}

/// JS divergence per pixel, in [0, 1] with base-2 logs.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceField {
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DivergenceField {
    fn new(batch: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        for &v in &data {
            if !((-1e-12..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::Domain(format!(
                    "divergence value {v} outside [0, 1] bound"
                )));
            }
        }
        Ok(DivergenceField {
            batch,
            height,
            width,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Exhaustive, exclusive partition of pixels into consistent (< kappa) and
/// different (>= kappa) sets. Only the consistent side is stored; the other
/// is its complement, so the XOR invariant holds by construction.
#[derive(Debug, Clone)]
pub struct ConsistencyMask {
    batch: usize,
    height: usize,
    width: usize,
    kappa: f64,
    cons: Vec<bool>,
}

impl ConsistencyMask {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.cons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cons.is_empty()
    }

    /// Consistent side: JS < kappa.
    pub fn cons(&self) -> &[bool] {
        &self.cons
    }

    /// Different side: JS >= kappa.
    pub fn diff_at(&self, i: usize) -> bool {
        !self.cons[i]
    }

    pub fn cons_count(&self) -> usize {
        self.cons.iter().filter(|&&c| c).count()
    }

    /// Fraction of pixels on the consistent side.
    pub fn cons_fraction(&self) -> f64 {
        self.cons_count() as f64 / self.cons.len() as f64
    }
}

/// Which model outputs feed the consensus label generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClgStrategy {
    /// Across-group student with own-group teacher (the flagship pairing).
    Default,
    /// Across-group teacher with across-group student.
    Strategy1,
    /// Own-group teacher with across-group teacher.
    Strategy2,
    /// Three-way consensus of both teachers and the across-group student.
    Strategy3,
}

impl ClgStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(ClgStrategy::Default),
            "strategy1" | "1" => Ok(ClgStrategy::Strategy1),
            "strategy2" | "2" => Ok(ClgStrategy::Strategy2),
            "strategy3" | "3" => Ok(ClgStrategy::Strategy3),
            other => Err(Error::Config(format!("unknown CLG strategy '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClgStrategy::Default => "default",
            ClgStrategy::Strategy1 => "strategy1",
            ClgStrategy::Strategy2 => "strategy2",
            ClgStrategy::Strategy3 => "strategy3",
        }
    }
}

/// The four prediction maps one training step produces, indexed by group.
pub struct GroupOutputs<'a> {
    pub student: [&'a ProbMap; 2],
    pub teacher: [&'a ProbMap; 2],
}

fn check_same_shape(a: &ProbMap, b: &ProbMap, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: probability maps disagree in shape ({},{},{},{}) vs ({},{},{},{})",
            a.batch, a.classes, a.height, a.width, b.batch, b.classes, b.height, b.width
        )))
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if (0.0..=1.0).contains(&kappa) {
        Ok(())
    } else {
        Err(Error::Domain(format!("kappa {kappa} outside [0, 1]")))
    }
}

/// One KL term in bits: p * log2(p / max(q, eps)), with 0 * log(0) := 0.
#[inline]
fn kl_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q.max(EPS_LOG)).log2()
    }
}

/// Pixelwise KL divergence KL(p || q) in bits, flattened as [B,H,W].
pub fn kl_pixelwise(p: &ProbMap, q: &ProbMap) -> Result<Vec<f64>> {
    check_same_shape(p, q, "kl_pixelwise")?;
    let hw = p.height * p.width;
    let k = p.classes;
    let mut out = vec![0.0; p.batch * hw];
    for b in 0..p.batch {
        for px in 0..hw {
            let mut acc = 0.0;
            for c in 0..k {
                let idx = (b * k + c) * hw + px;
                acc += kl_term(p.data[idx], q.data[idx]);
            }
            out[b * hw + px] = acc;
        }
    }
    Ok(out)
}

/// Jensen-Shannon divergence field: 1/2 KL(o1||m) + 1/2 KL(o2||m) with
/// m = (o1 + o2)/2, base-2 logs.
pub fn js_divergence(o1: &ProbMap, o2: &ProbMap) -> Result<DivergenceField> {
    check_same_shape(o1, o2, "js_divergence")?;
    let hw = o1.height * o1.width;
    let k = o1.classes;
    let mut out = vec![0.0; o1.batch * hw];
    for b in 0..o1.batch {
        for px in 0..hw {
            let mut acc = 0.0;
            for c in 0..k {
                let idx = (b * k + c) * hw + px;
                let p = o1.data[idx];
                let q = o2.data[idx];
                let m = (p + q) / 2.0;
                acc += 0.5 * kl_term(p, m) + 0.5 * kl_term(q, m);
            }
            out[b * hw + px] = acc;
        }
    }
    DivergenceField::new(o1.batch, o1.height, o1.width, out)
}

/// Threshold a divergence field into consistent (< kappa) and different
/// (>= kappa) parts.
pub fn make_masks(js: &DivergenceField, kappa: f64) -> Result<ConsistencyMask> {
    check_kappa(kappa)?;
    Ok(ConsistencyMask {
        batch: js.batch,
        height: js.height,
        width: js.width,
        kappa,
        cons: js.data.iter().map(|&v| v < kappa).collect(),
    })
}

/// Consensus label generator. Where the two maps agree (JS < kappa) the
/// pseudo-label is the argmax of their mean; elsewhere the background class
/// is assigned directly. The output is hard and carries no gradient.
pub fn clg(o1: &ProbMap, o2: &ProbMap, kappa: f64) -> Result<LabelMap> {
    check_same_shape(o1, o2, "clg")?;
    check_kappa(kappa)?;
    let js = js_divergence(o1, o2)?;
    let hw = o1.height * o1.width;
    let k = o1.classes;
    let mut out = vec![0u8; o1.batch * hw];
    for b in 0..o1.batch {
        for px in 0..hw {
            if js.data[b * hw + px] >= kappa {
                continue; // background stays 0
            }
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let idx = (b * k + c) * hw + px;
                let mean = (o1.data[idx] + o2.data[idx]) / 2.0;
                if mean > best_v {
                    best_v = mean;
                    best = c;
                }
            }
            out[b * hw + px] = best as u8;
        }
    }
    LabelMap::new(o1.batch, o1.height, o1.width, k, out)
        .map_err(|e| Error::Shape(format!("clg output: {e}")))
}

/// Argmax of the mean prediction at every pixel, with no consensus masking.
/// This is the pseudo-label rule with the threshold bypassed.
pub fn argmax_of_mean(o1: &ProbMap, o2: &ProbMap) -> Result<LabelMap> {
    check_same_shape(o1, o2, "argmax_of_mean")?;
    let hw = o1.height * o1.width;
    let k = o1.classes;
    let mut out = vec![0u8; o1.batch * hw];
    for b in 0..o1.batch {
        for px in 0..hw {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let idx = (b * k + c) * hw + px;
                let mean = (o1.data[idx] + o2.data[idx]) / 2.0;
                if mean > best_v {
                    best_v = mean;
                    best = c;
                }
            }
            out[b * hw + px] = best as u8;
        }
    }
    LabelMap::new(o1.batch, o1.height, o1.width, k, out)
        .map_err(|e| Error::Shape(format!("argmax_of_mean output: {e}")))
}

/// Three-way consensus: a pixel is consistent only if every pairwise JS
/// divergence among the three maps is below kappa; its label is then the
/// argmax of the three-way mean, otherwise background.
pub fn clg_three_way(a: &ProbMap, b: &ProbMap, c: &ProbMap, kappa: f64) -> Result<LabelMap> {
    check_same_shape(a, b, "clg_three_way")?;
    check_same_shape(a, c, "clg_three_way")?;
    check_kappa(kappa)?;
    let js_ab = js_divergence(a, b)?;
    let js_ac = js_divergence(a, c)?;
    let js_bc = js_divergence(b, c)?;
    let hw = a.height * a.width;
    let k = a.classes;
    let mut out = vec![0u8; a.batch * hw];
    for bi in 0..a.batch {
        for px in 0..hw {
            let f = bi * hw + px;
            if js_ab.data[f] >= kappa || js_ac.data[f] >= kappa || js_bc.data[f] >= kappa {
                continue;
            }
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for cls in 0..k {
                let idx = (bi * k + cls) * hw + px;
                let mean = (a.data[idx] + b.data[idx] + c.data[idx]) / 3.0;
                if mean > best_v {
                    best_v = mean;
                    best = cls;
                }
            }
            out[bi * hw + px] = best as u8;
        }
    }
    LabelMap::new(a.batch, a.height, a.width, k, out)
        .map_err(|e| Error::Shape(format!("clg_three_way output: {e}")))
}

/// Dispatch the pseudo-label source pairing for `target_group` under the
/// chosen strategy. Group roles swap symmetrically for the other target.
pub fn clg_strategy(
    strategy: ClgStrategy,
    outputs: &GroupOutputs<'_>,
    target_group: usize,
    kappa: f64,
) -> Result<LabelMap> {
    if target_group > 1 {
        return Err(Error::Domain(format!(
            "target group {target_group} must be 0 or 1"
        )));
    }
    let own = target_group;
    let other = 1 - target_group;
    match strategy {
        ClgStrategy::Default => clg(outputs.student[other], outputs.teacher[own], kappa),
        ClgStrategy::Strategy1 => clg(outputs.teacher[other], outputs.student[other], kappa),
        ClgStrategy::Strategy2 => clg(outputs.teacher[own], outputs.teacher[other], kappa),
        ClgStrategy::Strategy3 => clg_three_way(
            outputs.teacher[own],
            outputs.teacher[other],
            outputs.student[other],
            kappa,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_map(b: usize, k: usize, h: usize, w: usize) -> ProbMap {
        ProbMap::new(b, k, h, w, vec![1.0 / k as f64; b * k * h * w]).unwrap()
    }

    fn random_map(seed: u64, b: usize, k: usize, h: usize, w: usize) -> ProbMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let hw = h * w;
        let mut data = vec![0.0; b * k * hw];
        for bi in 0..b {
            for px in 0..hw {
                let mut vals: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-6..1.0)).collect();
                let sum: f64 = vals.iter().sum();
                for v in &mut vals {
                    *v /= sum;
                }
                for (c, v) in vals.iter().enumerate() {
                    data[(bi * k + c) * hw + px] = *v;
                }
            }
        }
        ProbMap::new(b, k, h, w, data).unwrap()
    }

    #[test]
    fn kl_of_identical_maps_is_zero() {
        let p = random_map(3, 2, 3, 4, 4);
        let kl = kl_pixelwise(&p, &p).unwrap();
        assert!(kl.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_one_hot_vs_uniform_is_one_bit() {
        let p = ProbMap::single(&[1.0, 0.0]).unwrap();
        let q = ProbMap::single(&[0.5, 0.5]).unwrap();
        let kl = kl_pixelwise(&p, &q).unwrap();
        assert_eq!(kl[0], 1.0);
    }

    #[test]
    fn kl_matches_direct_formula() {
        let p = ProbMap::single(&[0.9, 0.1]).unwrap();
        let q = ProbMap::single(&[0.6, 0.4]).unwrap();
        let kl = kl_pixelwise(&p, &q).unwrap();
        let direct = 0.9 * (0.9f64 / 0.6).log2() + 0.1 * (0.1f64 / 0.4).log2();
        assert!((kl[0] - direct).abs() < 1e-15);
    }

    #[test]
    fn js_identity_and_disjoint_bound() {
        let p = random_map(5, 1, 3, 2, 2);
        let js = js_divergence(&p, &p).unwrap();
        assert!(js.values().iter().all(|&v| v < 1e-12));

        let a = ProbMap::single(&[1.0, 0.0]).unwrap();
        let b = ProbMap::single(&[0.0, 1.0]).unwrap();
        let js = js_divergence(&a, &b).unwrap();
        assert_eq!(js.values()[0], 1.0);
    }

    #[test]
    fn js_matches_direct_evaluation_and_is_symmetric() {
        let p = ProbMap::single(&[0.9, 0.1]).unwrap();
        let q = ProbMap::single(&[0.6, 0.4]).unwrap();
        let js_pq = js_divergence(&p, &q).unwrap().values()[0];
        let js_qp = js_divergence(&q, &p).unwrap().values()[0];
        let m = [(0.9 + 0.6) / 2.0, (0.1 + 0.4) / 2.0];
        let direct = 0.5 * (0.9 * (0.9f64 / m[0]).log2() + 0.1 * (0.1f64 / m[1]).log2())
            + 0.5 * (0.6 * (0.6f64 / m[0]).log2() + 0.4 * (0.4f64 / m[1]).log2());
        assert!((js_pq - direct).abs() < 1e-15);
        assert!((js_pq - js_qp).abs() < 1e-12);
    }

    #[test]
    fn mask_boundary_semantics() {
        let p = random_map(7, 1, 3, 4, 4);
        let js = js_divergence(&p, &p).unwrap();
        // kappa = 1 with zero divergence: everything consistent
        let m = make_masks(&js, 1.0).unwrap();
        assert_eq!(m.cons_count(), m.len());
        // kappa = 0: js >= 0 always, everything different
        let m = make_masks(&js, 0.0).unwrap();
        assert_eq!(m.cons_count(), 0);
        assert!(make_masks(&js, 1.5).is_err());
    }

    #[test]
    fn mask_partition_matches_scalar_comparison() {
        let a = random_map(11, 2, 3, 8, 8);
        let b = random_map(13, 2, 3, 8, 8);
        let js = js_divergence(&a, &b).unwrap();
        let m = make_masks(&js, 0.05).unwrap();
        for (i, &v) in js.values().iter().enumerate() {
            assert_eq!(m.cons()[i], v < 0.05);
            assert_eq!(m.diff_at(i), v >= 0.05);
            assert!(m.cons()[i] ^ m.diff_at(i));
        }
    }

    #[test]
    fn clg_perfect_agreement_keeps_class() {
        // both maps one-hot class 2 everywhere
        let (b, k, h, w) = (1, 3, 4, 4);
        let mut data = vec![0.0; b * k * h * w];
        for px in 0..h * w {
            data[2 * h * w + px] = 1.0;
        }
        let o = ProbMap::new(b, k, h, w, data).unwrap();
        let labels = clg(&o, &o, 0.05).unwrap();
        assert!(labels.data().iter().all(|&v| v == 2));
    }

    #[test]
    fn clg_total_disagreement_falls_back_to_background() {
        let o1 = ProbMap::single(&[1.0, 0.0, 0.0]).unwrap();
        let o2 = ProbMap::single(&[0.0, 0.0, 1.0]).unwrap();
        let labels = clg(&o1, &o2, 1.0).unwrap();
        assert_eq!(labels.data(), &[0]);
    }

    #[test]
    fn clg_matches_per_pixel_scalar_oracle() {
        let o1 = random_map(17, 2, 3, 8, 8);
        let o2 = random_map(19, 2, 3, 8, 8);
        let kappa = 0.05;
        let got = clg(&o1, &o2, kappa).unwrap();
        let hw = 64;
        let mut p = vec![0.0; 3];
        let mut q = vec![0.0; 3];
        for f in 0..o1.pixels() {
            o1.read_pixel(f, &mut p);
            o2.read_pixel(f, &mut q);
            let m: Vec<f64> = p.iter().zip(&q).map(|(&a, &b)| (a + b) / 2.0).collect();
            let mut js = 0.0;
            for c in 0..3 {
                js += 0.5 * kl_term(p[c], m[c]) + 0.5 * kl_term(q[c], m[c]);
            }
            let expect = if js < kappa {
                let mut best = 0;
                for c in 1..3 {
                    if m[c] > m[best] {
                        best = c;
                    }
                }
                best as u8
            } else {
                0
            };
            let (b, px) = (f / hw, f % hw);
            assert_eq!(got.get(b, px / 8, px % 8), expect, "pixel {f}");
        }
    }

    #[test]
    fn strategy_dispatch_matches_manual_pairing() {
        let s0 = random_map(31, 1, 3, 4, 4);
        let s1 = random_map(32, 1, 3, 4, 4);
        let t0 = random_map(33, 1, 3, 4, 4);
        let t1 = random_map(34, 1, 3, 4, 4);
        let outs = GroupOutputs {
            student: [&s0, &s1],
            teacher: [&t0, &t1],
        };
        let kappa = 0.1;
        let d0 = clg_strategy(ClgStrategy::Default, &outs, 0, kappa).unwrap();
        assert_eq!(d0, clg(&s1, &t0, kappa).unwrap());
        let d1 = clg_strategy(ClgStrategy::Default, &outs, 1, kappa).unwrap();
        assert_eq!(d1, clg(&s0, &t1, kappa).unwrap());
        let s1_0 = clg_strategy(ClgStrategy::Strategy1, &outs, 0, kappa).unwrap();
        assert_eq!(s1_0, clg(&t1, &s1, kappa).unwrap());
        let s2_0 = clg_strategy(ClgStrategy::Strategy2, &outs, 0, kappa).unwrap();
        assert_eq!(s2_0, clg(&t0, &t1, kappa).unwrap());
    }

    #[test]
    fn strategy3_unanimous_and_dissent() {
        let (b, k, h, w) = (1, 3, 2, 2);
        let mut one_hot1 = vec![0.0; b * k * h * w];
        for px in 0..h * w {
            one_hot1[h * w + px] = 1.0;
        }
        let m1 = ProbMap::new(b, k, h, w, one_hot1).unwrap();
        let uniform = uniform_map(b, k, h, w);

        // unanimous: all three identical one-hots keep the class
        let outs = GroupOutputs {
            student: [&uniform, &m1],
            teacher: [&m1, &m1],
        };
        let labels = clg_strategy(ClgStrategy::Strategy3, &outs, 0, 0.05).unwrap();
        assert!(labels.data().iter().all(|&v| v == 1));

        // one dissenter: background everywhere
        let mut one_hot2 = vec![0.0; b * k * h * w];
        for px in 0..h * w {
            one_hot2[2 * h * w + px] = 1.0;
        }
        let m2 = ProbMap::new(b, k, h, w, one_hot2).unwrap();
        let outs = GroupOutputs {
            student: [&uniform, &m2],
            teacher: [&m1, &m1],
        };
        let labels = clg_strategy(ClgStrategy::Strategy3, &outs, 0, 0.05).unwrap();
        assert!(labels.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn kappa_one_reduces_to_argmax_of_mean() {
        let o1 = random_map(41, 1, 4, 4, 4);
        let o2 = random_map(42, 1, 4, 4, 4);
        let js = js_divergence(&o1, &o2).unwrap();
        assert!(js.values().iter().all(|&v| v < 1.0));
        let labels = clg(&o1, &o2, 1.0).unwrap();
        let mut p = vec![0.0; 4];
        let mut q = vec![0.0; 4];
        for f in 0..o1.pixels() {
            o1.read_pixel(f, &mut p);
            o2.read_pixel(f, &mut q);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..4 {
                let m = (p[c] + q[c]) / 2.0;
                if m > best_v {
                    best_v = m;
                    best = c;
                }
            }
            assert_eq!(labels.data()[f] as usize, best);
        }
    }
}
