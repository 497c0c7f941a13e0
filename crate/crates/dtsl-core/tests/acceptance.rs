//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with its runtime. Criteria 9-11 share a fixture of twelve full training
//! runs (four modes x three seeds) computed once.
//!
//! Run with: cargo test -p dtsl-core --test acceptance -- --nocapture

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtsl_core::config::{TrainConfig, TrainMode};
use dtsl_core::divergence::{clg, js_divergence, make_masks, ProbMap};
use dtsl_core::ema::ema_update;
use dtsl_core::label::LabelMap;
use dtsl_core::loss::{
    cross_entropy, dice_loss, l_semi, l_sup, l_url, l_url_with_mask, mt_decomposition_check,
    pixel_ce,
};
use dtsl_core::metrics;
use dtsl_core::model::{ArchitectureKind, ModelParams};
use dtsl_core::optim::lr_schedule;
use dtsl_core::tensor::gradcheck::{central_diff, max_rel_error, FD_FLOOR, FD_STEP, FD_TOLERANCE};
use dtsl_core::tensor::{Tape, Tensor};
use dtsl_core::train::{build_dataset, run_training, TrainingReport};

type Check = Result<String, String>;

fn criterion(number: u32, name: &str, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let outcome = f();
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("ACCEPTANCE {number:02} {name}: PASS ({secs:.1}s) {detail}"),
        Err(msg) => {
            println!("ACCEPTANCE {number:02} {name}: FAIL ({secs:.1}s) {msg}");
            panic!("criterion {number} failed: {msg}");
        }
    }
}

fn random_prob_map(rng: &mut ChaCha8Rng, b: usize, k: usize, h: usize, w: usize) -> ProbMap {
    let hw = h * w;
    let mut data = vec![0.0; b * k * hw];
    for bi in 0..b {
        for px in 0..hw {
            let mut vals: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-9..1.0)).collect();
            let sum: f64 = vals.iter().sum();
            for v in &mut vals {
                *v /= sum;
            }
            for (c, v) in vals.iter().enumerate() {
                data[(bi * k + c) * hw + px] = *v;
            }
        }
    }
    ProbMap::new(b, k, h, w, data).expect("normalized by construction")
}

/// Scalar JS divergence of two distributions, straight from the formula.
fn js_scalar(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = (a + b) / 2.0;
        if a > 0.0 {
            acc += 0.5 * a * (a / m.max(1e-12)).log2();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m.max(1e-12)).log2();
        }
    }
    acc
}

#[test]
fn criterion_01_js_divergence_suite() {
    criterion(1, "JS-divergence suite", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..1000 {
            let k = rng.gen_range(2..=6);
            let p = random_prob_map(&mut rng, 1, k, 2, 2);
            let q = random_prob_map(&mut rng, 1, k, 2, 2);
            let js_pq = js_divergence(&p, &q).map_err(|e| e.to_string())?;
            let js_qp = js_divergence(&q, &p).map_err(|e| e.to_string())?;
            for (a, b) in js_pq.values().iter().zip(js_qp.values()) {
                if (a - b).abs() >= 1e-12 {
                    return Err(format!("trial {trial}: symmetry broke: {a} vs {b}"));
                }
                if !(0.0..=1.0 + 1e-12).contains(a) {
                    return Err(format!("trial {trial}: value {a} out of bounds"));
                }
            }
            let js_pp = js_divergence(&p, &p).map_err(|e| e.to_string())?;
            if js_pp.values().iter().any(|&v| v >= 1e-12) {
                return Err(format!("trial {trial}: js(p,p) not ~0"));
            }
        }
        let one = ProbMap::single(&[1.0, 0.0]).map_err(|e| e.to_string())?;
        let other = ProbMap::single(&[0.0, 1.0]).map_err(|e| e.to_string())?;
        let js = js_divergence(&one, &other).map_err(|e| e.to_string())?;
        if js.values()[0] != 1.0 {
            return Err(format!("JS((1,0),(0,1)) = {} != 1 exactly", js.values()[0]));
        }
        Ok("1000 pairs".to_string())
    });
}

#[test]
fn criterion_02_clg_oracle_equivalence() {
    criterion(2, "CLG oracle equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let kappas = [0.0, 0.01, 0.05, 0.1, 1.0];
        for trial in 0..100 {
            let o1 = random_prob_map(&mut rng, 2, 3, 8, 8);
            let o2 = random_prob_map(&mut rng, 2, 3, 8, 8);
            for &kappa in &kappas {
                let got = clg(&o1, &o2, kappa).map_err(|e| e.to_string())?;
                // scalar per-pixel oracle: js, threshold, argmax of mean
                let mut p = vec![0.0; 3];
                let mut q = vec![0.0; 3];
                for f in 0..o1.pixels() {
                    o1.read_pixel(f, &mut p);
                    o2.read_pixel(f, &mut q);
                    let expected = if js_scalar(&p, &q) < kappa {
                        let mut best = 0;
                        let mut best_v = f64::NEG_INFINITY;
                        for c in 0..3 {
                            let m = (p[c] + q[c]) / 2.0;
                            if m > best_v {
                                best_v = m;
                                best = c;
                            }
                        }
                        best as u8
                    } else {
                        0
                    };
                    if got.data()[f] != expected {
                        return Err(format!(
                            "trial {trial} kappa {kappa} pixel {f}: {} vs oracle {expected}",
                            got.data()[f]
                        ));
                    }
                }
            }
        }
        Ok("100 pairs x 5 kappas, exact label match".to_string())
    });
}

#[test]
fn criterion_03_mask_partition_and_monotonicity() {
    criterion(3, "mask partition and monotonicity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for trial in 0..100 {
            let a = random_prob_map(&mut rng, 1, 4, 8, 8);
            let b = random_prob_map(&mut rng, 1, 4, 8, 8);
            let js = js_divergence(&a, &b).map_err(|e| e.to_string())?;
            let mut kappas: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            kappas.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            let masks: Vec<_> = kappas
                .iter()
                .map(|&k| make_masks(&js, k))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            for m in &masks {
                for i in 0..m.len() {
                    if !(m.cons()[i] ^ m.diff_at(i)) {
                        return Err(format!("trial {trial}: partition violated at {i}"));
                    }
                }
            }
            for pair in masks.windows(2) {
                for i in 0..pair[0].len() {
                    if pair[0].cons()[i] && !pair[1].cons()[i] {
                        return Err(format!(
                            "trial {trial}: cons(kappa1) not within cons(kappa2) at {i}"
                        ));
                    }
                }
            }
        }
        Ok("100 fields x 4 thresholds".to_string())
    });
}

#[test]
fn criterion_04_gradient_checks() {
    criterion(4, "finite-difference gradient checks", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let (b, k, h, w) = (1, 2, 4, 4);
        let n = b * k * h * w;
        let logits0: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = LabelMap::new(
            b,
            h,
            w,
            k,
            (0..b * h * w).map(|_| rng.gen_range(0..k as u8)).collect(),
        )
        .map_err(|e| e.to_string())?;
        let teacher = {
            let tape = Tape::new();
            let t = tape
                .constant(&[b, k, h, w], (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .map_err(|e| e.to_string())?
                .softmax(1)
                .map_err(|e| e.to_string())?;
            ProbMap::from_tensor(&t).map_err(|e| e.to_string())?
        };

        type Builder<'a> = Box<dyn Fn(&Tensor) -> Tensor + 'a>;
        let cases: Vec<(&str, Builder)> = vec![
            ("cross_entropy", Box::new(|t: &Tensor| cross_entropy(t, &labels).unwrap())),
            (
                "dice_loss",
                Box::new(|t: &Tensor| dice_loss(&t.softmax(1).unwrap(), &labels).unwrap()),
            ),
            (
                "l_semi",
                Box::new(|t: &Tensor| l_semi(&t.softmax(1).unwrap(), &labels).unwrap()),
            ),
            (
                "l_url",
                Box::new(|t: &Tensor| l_url(&t.softmax(1).unwrap(), &teacher, 0.05).unwrap()),
            ),
        ];
        let mut detail = String::new();
        for (name, build) in &cases {
            let tape = Tape::new();
            let leaf = tape
                .leaf(&[b, k, h, w], logits0.clone(), true)
                .map_err(|e| e.to_string())?;
            let loss = build(&leaf);
            loss.backward().map_err(|e| e.to_string())?;
            let analytic = leaf.grad().ok_or("missing gradient")?;
            let numeric = central_diff(
                |x| {
                    let tape = Tape::new();
                    let leaf = tape.leaf(&[b, k, h, w], x.to_vec(), false).unwrap();
                    build(&leaf).scalar_value()
                },
                &logits0,
                FD_STEP,
            );
            let err = max_rel_error(&analytic, &numeric, FD_FLOOR);
            if err >= FD_TOLERANCE {
                return Err(format!("{name}: max rel error {err:.3e}"));
            }
            detail.push_str(&format!("{name} {err:.1e}; "));
        }

        let err = full_objective_gradient_check()?;
        detail.push_str(&format!("full objective {err:.1e}"));
        Ok(detail)
    });
}

/// Full supervised objective (sup + pace with frozen pseudo-labels and URL
/// mask) through a miniature network, differentiated by every parameter.
fn full_objective_gradient_check() -> Result<f64, String> {
    let (b, k, h, w) = (1usize, 2usize, 8usize, 8usize);
    let params = ModelParams::init(ArchitectureKind::PlainConvNet, k, 4, 4041)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4042);
    let images: Vec<f64> = (0..b * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels = LabelMap::new(
        b,
        h,
        w,
        k,
        (0..b * h * w).map(|_| rng.gen_range(0..k as u8)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let cross_teacher = random_prob_map(&mut rng, b, k, h, w);
    let (alpha, beta, kappa) = (1.0, 0.05, 0.05);

    // freeze pseudo-labels and the URL mask from the unperturbed forward,
    // exactly as one training iteration treats them (detached constants)
    let base_probs = {
        let tape = Tape::new();
        let input = tape.constant(&[b, 1, h, w], images.clone()).map_err(|e| e.to_string())?;
        let logits = params
            .bind(&tape, false)
            .and_then(|bound| bound.forward(&input))
            .map_err(|e| e.to_string())?;
        ProbMap::from_tensor(&logits.softmax(1).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
    };
    let pseudo = clg(&cross_teacher, &base_probs, kappa).map_err(|e| e.to_string())?;
    let js = js_divergence(&base_probs, &cross_teacher).map_err(|e| e.to_string())?;
    let diff_mask: Vec<f64> = js
        .values()
        .iter()
        .map(|&v| if v >= kappa { 1.0 } else { 0.0 })
        .collect();
    let mask_count: f64 = diff_mask.iter().sum();
    if mask_count == 0.0 {
        return Err("degenerate fixture: empty URL mask".to_string());
    }

    let objective = |p: &ModelParams| -> Result<(f64, Option<Vec<Vec<f64>>>), String> {
        let tape = Tape::new();
        let input = tape.constant(&[b, 1, h, w], images.clone()).map_err(|e| e.to_string())?;
        let bound = p.bind(&tape, true).map_err(|e| e.to_string())?;
        let logits = bound.forward(&input).map_err(|e| e.to_string())?;
        let probs = logits.softmax(1).map_err(|e| e.to_string())?;
        let sup = l_sup(&logits, &labels).map_err(|e| e.to_string())?;
        let semi = l_semi(&probs, &pseudo).map_err(|e| e.to_string())?;
        let url = l_url_with_mask(&probs, &diff_mask, mask_count).map_err(|e| e.to_string())?;
        let total = sup
            .add(&semi.mul_scalar(alpha))
            .and_then(|t| t.add(&url.mul_scalar(beta)))
            .map_err(|e| e.to_string())?;
        let v = total.scalar_value();
        total.backward().map_err(|e| e.to_string())?;
        Ok((v, Some(bound.grads())))
    };

    let (_, grads) = objective(&params)?;
    let analytic: Vec<f64> = grads.expect("grads requested").into_iter().flatten().collect();

    let flat0: Vec<f64> = params
        .entries()
        .iter()
        .flat_map(|e| e.data.iter().copied())
        .collect();
    let rebuild = |flat: &[f64]| -> ModelParams {
        let mut p = params.clone();
        let mut offset = 0;
        for e in p.entries_mut() {
            let n = e.data.len();
            e.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        p
    };
    let numeric = central_diff(
        |flat| {
            let p = rebuild(flat);
            let tape = Tape::new();
            let input = tape.constant(&[b, 1, h, w], images.clone()).unwrap();
            let bound = p.bind(&tape, false).unwrap();
            let logits = bound.forward(&input).unwrap();
            let probs = logits.softmax(1).unwrap();
            let sup = l_sup(&logits, &labels).unwrap();
            let semi = l_semi(&probs, &pseudo).unwrap();
            let url = l_url_with_mask(&probs, &diff_mask, mask_count).unwrap();
            sup.add(&semi.mul_scalar(alpha))
                .and_then(|t| t.add(&url.mul_scalar(beta)))
                .unwrap()
                .scalar_value()
        },
        &flat0,
        FD_STEP,
    );
    let err = max_rel_error(&analytic, &numeric, FD_FLOOR);
    if err >= FD_TOLERANCE {
        return Err(format!(
            "full objective: max rel error {err:.3e} over {} parameters",
            flat0.len()
        ));
    }
    Ok(err)
}

#[test]
fn criterion_05_self_paced_decomposition_identity() {
    criterion(5, "self-paced decomposition identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for trial in 0..100 {
            let (b, k, h, w) = (1, rng.gen_range(2..=4), 4, 4);
            let pred = random_prob_map(&mut rng, b, k, h, w);
            let gt = LabelMap::new(
                b,
                h,
                w,
                k,
                (0..b * h * w).map(|_| rng.gen_range(0..k as u8)).collect(),
            )
            .map_err(|e| e.to_string())?;
            let teacher = LabelMap::new(
                b,
                h,
                w,
                k,
                (0..b * h * w).map(|_| rng.gen_range(0..k as u8)).collect(),
            )
            .map_err(|e| e.to_string())?;
            let lambda = rng.gen_range(0.0..2.0);
            let (lhs, rhs) = mt_decomposition_check(&pred, &gt, &teacher, lambda, &pixel_ce)
                .map_err(|e| e.to_string())?;
            if (lhs - rhs).abs() >= 1e-12 {
                return Err(format!("trial {trial}: |{lhs} - {rhs}| >= 1e-12"));
            }
        }
        Ok("100 instances, lambda in [0,2]".to_string())
    });
}

#[test]
fn criterion_06_ema_closed_form() {
    criterion(6, "EMA closed form", || {
        for &omega in &[0.90, 0.95, 0.99] {
            let student = ModelParams::init(ArchitectureKind::PlainConvNet, 3, 4, 606)
                .map_err(|e| e.to_string())?;
            let mut teacher = ModelParams::init(ArchitectureKind::PlainConvNet, 3, 4, 607)
                .map_err(|e| e.to_string())?;
            let t0: Vec<Vec<f64>> = teacher.entries().iter().map(|e| e.data.clone()).collect();
            let steps = 50;
            for _ in 0..steps {
                ema_update(&mut teacher, &student, omega).map_err(|e| e.to_string())?;
            }
            let decay = omega.powi(steps);
            for (ei, (t, s)) in teacher.entries().iter().zip(student.entries()).enumerate() {
                for (j, (&tv, &sv)) in t.data.iter().zip(&s.data).enumerate() {
                    let expect = decay * t0[ei][j] + (1.0 - decay) * sv;
                    if (tv - expect).abs() >= 1e-10 {
                        return Err(format!(
                            "omega {omega} entry {ei}[{j}]: {tv} vs closed form {expect}"
                        ));
                    }
                }
            }
        }
        Ok("t=50 steps, omega in {0.90, 0.95, 0.99}".to_string())
    });
}

/// Brute-force surface distances: all-pairs nearest boundary distances.
fn surface_oracle(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Option<Vec<f64>> {
    let bp = metrics::boundary_pixels(pred, h, w);
    let bg = metrics::boundary_pixels(gt, h, w);
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

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<bool> {
    match rng.gen_range(0..4) {
        // elliptical blob
        0 | 1 => {
            let cy: f64 = rng.gen_range(4.0..h as f64 - 4.0);
            let cx: f64 = rng.gen_range(4.0..w as f64 - 4.0);
            let ry: f64 = rng.gen_range(1.5..8.0);
            let rx: f64 = rng.gen_range(1.5..8.0);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0
                })
                .collect()
        }
        // sparse salt
        2 => (0..h * w).map(|_| rng.gen_bool(0.08)).collect(),
        // occasionally empty
        _ => {
            if rng.gen_bool(0.3) {
                vec![false; h * w]
            } else {
                (0..h * w).map(|_| rng.gen_bool(0.4)).collect()
            }
        }
    }
}

#[test]
fn criterion_07_metrics_oracle() {
    criterion(7, "metrics against brute-force oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        let (h, w) = (32, 32);
        for trial in 0..200 {
            let a = random_mask(&mut rng, h, w);
            let b = random_mask(&mut rng, h, w);

            // overlap metrics: exact against set counts
            let inter = a.iter().zip(&b).filter(|&(&x, &y)| x && y).count() as f64;
            let asz = a.iter().filter(|&&x| x).count() as f64;
            let bsz = b.iter().filter(|&&x| x).count() as f64;
            let union = asz + bsz - inter;
            let d = metrics::dsc(&a, &b, h, w).map_err(|e| e.to_string())?;
            let j = metrics::jaccard(&a, &b, h, w).map_err(|e| e.to_string())?;
            let d_expect = if asz + bsz == 0.0 {
                100.0
            } else {
                100.0 * 2.0 * inter / (asz + bsz)
            };
            let j_expect = if union == 0.0 {
                100.0
            } else {
                100.0 * inter / union
            };
            if d != d_expect || j != j_expect {
                return Err(format!("trial {trial}: overlap metrics not exact"));
            }
            // Jaccard-Dice identity on fractions
            let (df, jf) = (d / 100.0, j / 100.0);
            if (jf - df / (2.0 - df)).abs() >= 1e-12 {
                return Err(format!("trial {trial}: J != D/(2-D)"));
            }

            // surface metrics vs the all-pairs oracle
            let hd = metrics::hd95(&a, &b, h, w).map_err(|e| e.to_string())?;
            let as_ = metrics::asd(&a, &b, h, w).map_err(|e| e.to_string())?;
            match surface_oracle(&a, &b, h, w) {
                None => {
                    if hd.is_some() || as_.is_some() {
                        return Err(format!("trial {trial}: expected undefined distances"));
                    }
                }
                Some(pooled) => {
                    let hd_expect = metrics::percentile_ceil(&pooled, 0.95);
                    let asd_expect = pooled.iter().sum::<f64>() / pooled.len() as f64;
                    let hd = hd.ok_or("hd95 unexpectedly undefined")?;
                    let as_ = as_.ok_or("asd unexpectedly undefined")?;
                    if (hd - hd_expect).abs() >= 1e-9 {
                        return Err(format!("trial {trial}: hd95 {hd} vs {hd_expect}"));
                    }
                    if (as_ - asd_expect).abs() >= 1e-9 {
                        return Err(format!("trial {trial}: asd {as_} vs {asd_expect}"));
                    }
                }
            }
        }
        Ok("200 random 32x32 pairs".to_string())
    });
}

#[test]
fn criterion_08_poly_lr_schedule() {
    criterion(8, "poly learning-rate schedule", || {
        let eta0 = 1e-3;
        let max = 3000;
        if lr_schedule(eta0, 0, max).map_err(|e| e.to_string())? != eta0 {
            return Err("eta(0) != eta0".to_string());
        }
        if lr_schedule(eta0, max, max).map_err(|e| e.to_string())? != 0.0 {
            return Err("eta(max) != 0".to_string());
        }
        let mid = lr_schedule(eta0, max / 2, max).map_err(|e| e.to_string())?;
        let expect = eta0 * 0.5f64.powf(0.9);
        if (mid - expect).abs() >= 1e-12 {
            return Err(format!("eta(max/2) = {mid} vs {expect}"));
        }
        Ok(String::new())
    });
}

// ---------------------------------------------------------------------------
// Training fixture shared by criteria 9-11: four modes x three seeds at the
// desk-scale acceptance configuration.

const FIXTURE_SEEDS: [u64; 3] = [1, 2, 3];

fn fixture_config(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        max_iter: 2000,
        labeled_batch: 1,
        unlabeled_batch: 1,
        base_channels: 4,
        snapshot_every: 200,
        ..TrainConfig::default()
    }
}

struct Fixture {
    runs: BTreeMap<(String, u64), TrainingReport>,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let modes = [
            ("semi", TrainMode::SemiDtsl),
            ("sup-dtsl", TrainMode::SupervisedDtsl),
            ("sup-plain", TrainMode::SupervisedPlain),
            ("plain-dtsl", TrainMode::PlainDtsl),
        ];
        let mut runs = BTreeMap::new();
        for (name, mode) in modes {
            for seed in FIXTURE_SEEDS {
                let start = Instant::now();
                let cfg = fixture_config(mode, seed);
                let split = build_dataset(&cfg).expect("fixture dataset");
                let report = run_training(&cfg, &split, None).expect("fixture run");
                println!(
                    "  fixture {name} seed {seed}: DSC {:.2} ({:.0}s)",
                    report.headline().dsc,
                    start.elapsed().as_secs_f64()
                );
                runs.insert((name.to_string(), seed), report);
            }
        }
        Fixture { runs }
    })
}

fn median3(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values[values.len() / 2]
}

fn fixture_median_dsc(f: &Fixture, mode: &str) -> f64 {
    median3(
        FIXTURE_SEEDS
            .iter()
            .map(|&s| f.runs[&(mode.to_string(), s)].headline().dsc)
            .collect(),
    )
}

#[test]
fn criterion_09_agreement_expansion() {
    criterion(9, "agreement expansion over training", || {
        let f = fixture();
        let probe_at = |seed: u64, iter: usize| -> Result<f64, String> {
            let report = &f.runs[&("semi".to_string(), seed)];
            report
                .probe
                .iter()
                .find(|p| p.iter == iter)
                .map(|p| p.agreement[0])
                .ok_or_else(|| format!("no probe point at iteration {iter}"))
        };
        let early: Vec<f64> = FIXTURE_SEEDS
            .iter()
            .map(|&s| probe_at(s, 200))
            .collect::<Result<_, _>>()?;
        let late: Vec<f64> = FIXTURE_SEEDS
            .iter()
            .map(|&s| probe_at(s, 2000))
            .collect::<Result<_, _>>()?;
        let (m_early, m_late) = (median3(early), median3(late));
        if m_late <= m_early {
            return Err(format!(
                "median agreement at 2000 ({m_late:.4}) not above 200 ({m_early:.4})"
            ));
        }
        Ok(format!("median agreement {m_early:.3} -> {m_late:.3}"))
    });
}

#[test]
fn criterion_10_mode_ordering() {
    criterion(10, "supervised/self-paced/semi ordering", || {
        let f = fixture();
        let plain = fixture_median_dsc(f, "sup-plain");
        let sup_dtsl = fixture_median_dsc(f, "sup-dtsl");
        let semi = fixture_median_dsc(f, "semi");
        if !(plain < sup_dtsl) {
            return Err(format!("sup-plain {plain:.2} !< sup-dtsl {sup_dtsl:.2}"));
        }
        if sup_dtsl - plain < 1.0 {
            return Err(format!(
                "self-paced gain {:.2} below 1 DSC point",
                sup_dtsl - plain
            ));
        }
        if !(sup_dtsl <= semi) {
            return Err(format!("sup-dtsl {sup_dtsl:.2} !<= semi {semi:.2}"));
        }
        Ok(format!(
            "median DSC: plain {plain:.2} < sup-dtsl {sup_dtsl:.2} <= semi {semi:.2}"
        ))
    });
}

#[test]
fn criterion_11_ablation_direction() {
    criterion(11, "consensus masking against plain pseudo-labels", || {
        let f = fixture();
        let plain_dtsl = fixture_median_dsc(f, "plain-dtsl");
        let clg_url = fixture_median_dsc(f, "semi");
        if clg_url < plain_dtsl {
            return Err(format!(
                "clg+url {clg_url:.2} below plain-dtsl {plain_dtsl:.2}"
            ));
        }
        Ok(format!(
            "median DSC: clg+url {clg_url:.2} >= plain-dtsl {plain_dtsl:.2}"
        ))
    });
}

#[test]
fn criterion_12_bitwise_determinism() {
    criterion(12, "bit-identical seeded runs", || {
        let cfg = TrainConfig {
            mode: TrainMode::SemiDtsl,
            seed: 7,
            max_iter: 120,
            labeled_batch: 1,
            unlabeled_batch: 1,
            base_channels: 4,
            image_size: 32,
            train_count: 30,
            test_count: 8,
            snapshot_every: 40,
            probe_count: 2,
            ..TrainConfig::default()
        };
        let dir1 = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dir2 = tempfile::tempdir().map_err(|e| e.to_string())?;
        let split = build_dataset(&cfg).map_err(|e| e.to_string())?;
        run_training(&cfg, &split, Some(dir1.path())).map_err(|e| e.to_string())?;
        run_training(&cfg, &split, Some(dir2.path())).map_err(|e| e.to_string())?;
        for file in ["losses.csv", "metrics.csv", "probe.csv"] {
            let a = std::fs::read(dir1.path().join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dir2.path().join(file)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{file} differs between identical runs"));
            }
        }
        Ok("losses.csv, metrics.csv, probe.csv byte-identical".to_string())
    });
}
