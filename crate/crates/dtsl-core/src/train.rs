//! The full dual-group training loop: batch sampling, forward passes for
//! students and EMA teachers, consensus pseudo-labels, pace-regulated
//! losses, per-student backward and optimizer steps, EMA updates, probe
//! snapshots, and final evaluation.
//!
//! A single run is single-threaded and fully determined by its seed; the
//! sweep runner may execute independent runs on parallel threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{TrainConfig, TrainMode};
use crate::data::{self, DatasetSplit, SyntheticSample};
use crate::divergence::{
    argmax_of_mean, clg_strategy, js_divergence, ClgStrategy, GroupOutputs, ProbMap,
};
use crate::ema::ema_update;
use crate::label::LabelMap;
use crate::loss::{l_pace, l_semi, l_sup, l_url};
use crate::metrics::{self, ClassReport, MaskMetrics, MetricReport};
use crate::model::{ArchitectureKind, ModelParams};
use crate::optim::{lr_schedule, AdamState};
use crate::tensor::{Tape, Tensor};
use crate::{derive_seed, fmt_sig6, pgm, Error, Result};

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_INIT_G0: u64 = 3;
const STREAM_INIT_G1: u64 = 4;
const STREAM_LABELED: u64 = 5;
const STREAM_UNLABELED: u64 = 6;

/// A mini-batch of images, with labels when drawn from the labeled pool.
pub struct Batch {
    pub images: Vec<f64>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Option<LabelMap>,
}

impl Batch {
    pub fn from_samples(samples: &[&SyntheticSample], with_labels: bool) -> Result<Batch> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("empty batch".to_string()))?;
        let (h, w) = (first.height, first.width);
        let mut images = Vec::with_capacity(samples.len() * h * w);
        let mut labels = Vec::new();
        for s in samples {
            if s.height != h || s.width != w {
                return Err(Error::Shape("mixed image sizes in one batch".to_string()));
            }
            images.extend_from_slice(&s.image);
            labels.push(&s.label);
        }
        let labels = if with_labels {
            Some(LabelMap::stack(&labels)?)
        } else {
            None
        };
        Ok(Batch {
            images,
            batch: samples.len(),
            height: h,
            width: w,
            labels,
        })
    }

    fn input_on(&self, tape: &Tape) -> Result<Tensor> {
        tape.constant(&[self.batch, 1, self.height, self.width], self.images.clone())
            .map_err(Error::from)
    }
}

/// One teacher-student pair plus the student's optimizer state.
pub struct Group {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub adam: AdamState,
}

/// Everything that evolves across iterations.
pub struct TrainerState {
    pub cfg: TrainConfig,
    pub groups: Vec<Group>,
    pub iteration: usize,
    rng_labeled: ChaCha8Rng,
    rng_unlabeled: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(cfg: &TrainConfig) -> Result<TrainerState> {
        cfg.validate()?;
        let arches = [
            ArchitectureKind::PlainConvNet,
            ArchitectureKind::ResidualConvNet,
        ];
        let init_streams = [STREAM_INIT_G0, STREAM_INIT_G1];
        let mut groups = Vec::new();
        for g in 0..cfg.mode.group_count() {
            let student = ModelParams::init(
                arches[g],
                cfg.num_classes,
                cfg.base_channels,
                derive_seed(cfg.seed, init_streams[g]),
            )?;
            // the teacher starts as an exact copy of its student
            let teacher = student.clone();
            let adam = AdamState::new(&student);
            groups.push(Group {
                student,
                teacher,
                adam,
            });
        }
        Ok(TrainerState {
            cfg: cfg.clone(),
            groups,
            iteration: 0,
            rng_labeled: stream_rng(cfg.seed, STREAM_LABELED),
            rng_unlabeled: stream_rng(cfg.seed, STREAM_UNLABELED),
        })
    }

    fn sample_batch(&mut self, split: &DatasetSplit, labeled: bool) -> Result<Batch> {
        let (pool, size) = if labeled {
            (&split.labeled, self.cfg.labeled_batch)
        } else {
            (&split.unlabeled, self.cfg.unlabeled_batch)
        };
        if pool.is_empty() {
            return Err(Error::Config(format!(
                "{} pool is empty",
                if labeled { "labeled" } else { "unlabeled" }
            )));
        }
        let rng = if labeled {
            &mut self.rng_labeled
        } else {
            &mut self.rng_unlabeled
        };
        let picks: Vec<&SyntheticSample> = (0..size)
            .map(|_| &pool[rng.gen_range(0..pool.len())])
            .collect();
        Batch::from_samples(&picks, labeled)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Loss values of one iteration, split by group and by batch kind. The
/// reported pace/total columns are derived from these parts, so the
/// identity pace = alpha*(semi0+semi1) + beta*(url0+url1) holds exactly.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub iter: usize,
    pub sup: [f64; 2],
    pub semi_labeled: [f64; 2],
    pub semi_unlabeled: [f64; 2],
    pub url_labeled: [f64; 2],
    pub url_unlabeled: [f64; 2],
    pub alpha: f64,
    pub beta: f64,
    /// Fraction of pixels whose pseudo-label came from consensus, averaged
    /// over groups and batches; 1 when masking is bypassed, 0 when the mode
    /// generates no pseudo-labels.
    pub cons_fraction: f64,
}

impl LossBreakdown {
    pub fn sup_total(&self) -> f64 {
        self.sup[0] + self.sup[1]
    }

    pub fn semi_group(&self, g: usize) -> f64 {
        self.semi_labeled[g] + self.semi_unlabeled[g]
    }

    pub fn url_group(&self, g: usize) -> f64 {
        self.url_labeled[g] + self.url_unlabeled[g]
    }

    pub fn semi_total(&self) -> f64 {
        self.semi_group(0) + self.semi_group(1)
    }

    pub fn url_total(&self) -> f64 {
        self.url_group(0) + self.url_group(1)
    }

    pub fn pace(&self) -> f64 {
        self.alpha * self.semi_total() + self.beta * self.url_total()
    }

    fn pace_labeled(&self) -> f64 {
        self.alpha * (self.semi_labeled[0] + self.semi_labeled[1])
            + self.beta * (self.url_labeled[0] + self.url_labeled[1])
    }

    fn pace_unlabeled(&self) -> f64 {
        self.alpha * (self.semi_unlabeled[0] + self.semi_unlabeled[1])
            + self.beta * (self.url_unlabeled[0] + self.url_unlabeled[1])
    }

    /// Supervised objective value on the labeled batch.
    pub fn total_labeled(&self) -> f64 {
        self.sup_total() + self.pace_labeled()
    }

    /// Objective value on the unlabeled batch (pace regulator only).
    pub fn total_unlabeled(&self) -> f64 {
        self.pace_unlabeled()
    }

    pub fn csv_header() -> &'static str {
        "iter,sup,semi,url,pace,total_l,total_u,cons_fraction"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter,
            fmt_sig6(self.sup_total()),
            fmt_sig6(self.semi_total()),
            fmt_sig6(self.url_total()),
            fmt_sig6(self.pace()),
            fmt_sig6(self.total_labeled()),
            fmt_sig6(self.total_unlabeled()),
            fmt_sig6(self.cons_fraction),
        )
    }
}

/// Softmax probabilities of one model on one batch, detached.
fn model_probs(params: &ModelParams, batch: &Batch) -> Result<ProbMap> {
    let tape = Tape::new();
    let input = batch.input_on(&tape)?;
    let logits = params.bind(&tape, false)?.forward(&input)?;
    ProbMap::from_tensor(&logits.softmax(1)?)
}

/// Consensus fraction of the pairing a strategy uses for `target_group`.
fn strategy_cons_fraction(
    strategy: ClgStrategy,
    outs: &GroupOutputs<'_>,
    target_group: usize,
    kappa: f64,
) -> Result<f64> {
    let own = target_group;
    let other = 1 - target_group;
    let frac = |a: &ProbMap, b: &ProbMap| -> Result<f64> {
        let js = js_divergence(a, b)?;
        let n = js.values().len();
        let cons = js.values().iter().filter(|&&v| v < kappa).count();
        Ok(cons as f64 / n as f64)
    };
    match strategy {
        ClgStrategy::Default => frac(outs.student[other], outs.teacher[own]),
        ClgStrategy::Strategy1 => frac(outs.teacher[other], outs.student[other]),
        ClgStrategy::Strategy2 => frac(outs.teacher[own], outs.teacher[other]),
        ClgStrategy::Strategy3 => {
            let js_a = js_divergence(outs.teacher[own], outs.teacher[other])?;
            let js_b = js_divergence(outs.teacher[own], outs.student[other])?;
            let js_c = js_divergence(outs.teacher[other], outs.student[other])?;
            let n = js_a.values().len();
            let cons = (0..n)
                .filter(|&i| {
                    js_a.values()[i] < kappa
                        && js_b.values()[i] < kappa
                        && js_c.values()[i] < kappa
                })
                .count();
            Ok(cons as f64 / n as f64)
        }
    }
}

/// Per-student forward pass products on one batch.
struct StudentPass {
    logits: Tensor,
    probs: Tensor,
    detached: ProbMap,
}

fn student_pass(bound: &crate::model::BoundModel, input: &Tensor) -> Result<StudentPass> {
    let logits = bound.forward(input)?;
    let probs = logits.softmax(1)?;
    let detached = ProbMap::from_tensor(&probs)?;
    Ok(StudentPass {
        logits,
        probs,
        detached,
    })
}

/// One optimization step over both students, then the EMA teacher updates.
pub fn train_step(
    state: &mut TrainerState,
    labeled: &Batch,
    unlabeled: Option<&Batch>,
) -> Result<LossBreakdown> {
    let cfg = state.cfg.clone();
    let y_gt = labeled
        .labels
        .as_ref()
        .ok_or_else(|| Error::Shape("labeled batch carries no labels".to_string()))?;
    if cfg.mode.uses_unlabeled() && unlabeled.is_none() {
        return Err(Error::Config(format!(
            "mode {} needs an unlabeled batch",
            cfg.mode.name()
        )));
    }
    let lr = lr_schedule(cfg.eta0, state.iteration, cfg.max_iter)?;
    let groups = cfg.mode.group_count();
    let needs_teacher_fwd = !matches!(cfg.mode, TrainMode::SupervisedPlain);

    // student forwards, one tape per student so backward passes are
    // independent by construction
    let tapes: Vec<Tape> = (0..groups).map(|_| Tape::new()).collect();
    let bound_models: Vec<_> = (0..groups)
        .map(|g| state.groups[g].student.bind(&tapes[g], true))
        .collect::<std::result::Result<_, _>>()?;

    let mut lab_passes = Vec::new();
    let mut unlab_passes = Vec::new();
    for g in 0..groups {
        let input = labeled.input_on(&tapes[g])?;
        lab_passes.push(student_pass(&bound_models[g], &input)?);
        if let (true, Some(u)) = (cfg.mode.uses_unlabeled(), unlabeled) {
            let input = u.input_on(&tapes[g])?;
            unlab_passes.push(Some(student_pass(&bound_models[g], &input)?));
        } else {
            unlab_passes.push(None);
        }
    }

    // teacher probabilities, detached
    let mut t_lab = Vec::new();
    let mut t_unlab = Vec::new();
    for g in 0..groups {
        if needs_teacher_fwd {
            t_lab.push(Some(model_probs(&state.groups[g].teacher, labeled)?));
            if let (true, Some(u)) = (cfg.mode.uses_unlabeled(), unlabeled) {
                t_unlab.push(Some(model_probs(&state.groups[g].teacher, u)?));
            } else {
                t_unlab.push(None);
            }
        } else {
            t_lab.push(None);
            t_unlab.push(None);
        }
    }

    // pseudo-labels and consensus bookkeeping per group per batch
    let mut pseudo_lab: Vec<Option<LabelMap>> = vec![None, None];
    let mut pseudo_unlab: Vec<Option<LabelMap>> = vec![None, None];
    let mut cons_parts: Vec<f64> = Vec::new();
    match cfg.mode {
        TrainMode::SupervisedPlain => {}
        TrainMode::VanillaMt => {
            pseudo_lab[0] = Some(t_lab[0].as_ref().expect("teacher fwd").argmax_labels());
            if let Some(tu) = t_unlab[0].as_ref() {
                pseudo_unlab[0] = Some(tu.argmax_labels());
            }
            cons_parts.push(1.0);
        }
        TrainMode::PlainDtsl => {
            for g in 0..2 {
                let other = 1 - g;
                pseudo_lab[g] = Some(argmax_of_mean(
                    &lab_passes[other].detached,
                    t_lab[g].as_ref().expect("teacher fwd"),
                )?);
                if let Some(up) = unlab_passes[other].as_ref() {
                    pseudo_unlab[g] = Some(argmax_of_mean(
                        &up.detached,
                        t_unlab[g].as_ref().expect("teacher fwd"),
                    )?);
                }
            }
            cons_parts.push(1.0);
        }
        TrainMode::SemiDtsl | TrainMode::SupervisedDtsl => {
            {
                let outs = GroupOutputs {
                    student: [&lab_passes[0].detached, &lab_passes[1].detached],
                    teacher: [
                        t_lab[0].as_ref().expect("teacher fwd"),
                        t_lab[1].as_ref().expect("teacher fwd"),
                    ],
                };
                for g in 0..2 {
                    pseudo_lab[g] = Some(clg_strategy(cfg.strategy, &outs, g, cfg.kappa)?);
                    cons_parts.push(strategy_cons_fraction(cfg.strategy, &outs, g, cfg.kappa)?);
                }
            }
            if cfg.mode == TrainMode::SemiDtsl {
                let outs = GroupOutputs {
                    student: [
                        &unlab_passes[0].as_ref().expect("unlabeled pass").detached,
                        &unlab_passes[1].as_ref().expect("unlabeled pass").detached,
                    ],
                    teacher: [
                        t_unlab[0].as_ref().expect("teacher fwd"),
                        t_unlab[1].as_ref().expect("teacher fwd"),
                    ],
                };
                for g in 0..2 {
                    pseudo_unlab[g] = Some(clg_strategy(cfg.strategy, &outs, g, cfg.kappa)?);
                    cons_parts.push(strategy_cons_fraction(cfg.strategy, &outs, g, cfg.kappa)?);
                }
            }
        }
    }
    let cons_fraction = if cons_parts.is_empty() {
        0.0
    } else {
        cons_parts.iter().sum::<f64>() / cons_parts.len() as f64
    };

    // losses and updates per student
    let mut breakdown = LossBreakdown {
        iter: state.iteration + 1,
        sup: [0.0; 2],
        semi_labeled: [0.0; 2],
        semi_unlabeled: [0.0; 2],
        url_labeled: [0.0; 2],
        url_unlabeled: [0.0; 2],
        alpha: cfg.alpha,
        beta: cfg.beta,
        cons_fraction,
    };

    for g in 0..groups {
        let tape = &tapes[g];
        let other = 1 - g;
        let use_url = cfg.beta > 0.0 && groups == 2 && needs_teacher_fwd;

        let sup = l_sup(&lab_passes[g].logits, y_gt)?;
        breakdown.sup[g] = sup.scalar_value();

        let zero = || tape.scalar(0.0);
        let semi_lab = match pseudo_lab[g].as_ref() {
            Some(pl) => l_semi(&lab_passes[g].probs, pl)?,
            None => zero(),
        };
        let semi_unlab = match (pseudo_unlab[g].as_ref(), unlab_passes[g].as_ref()) {
            (Some(pu), Some(up)) => l_semi(&up.probs, pu)?,
            _ => zero(),
        };
        let url_lab = if use_url {
            l_url(
                &lab_passes[g].probs,
                t_lab[other].as_ref().expect("teacher fwd"),
                cfg.kappa,
            )?
        } else {
            zero()
        };
        let url_unlab = match (use_url, unlab_passes[g].as_ref()) {
            (true, Some(up)) => l_url(
                &up.probs,
                t_unlab[other].as_ref().expect("teacher fwd"),
                cfg.kappa,
            )?,
            _ => zero(),
        };

        breakdown.semi_labeled[g] = semi_lab.scalar_value();
        breakdown.semi_unlabeled[g] = semi_unlab.scalar_value();
        breakdown.url_labeled[g] = url_lab.scalar_value();
        breakdown.url_unlabeled[g] = url_unlab.scalar_value();

        // this student's share of the pace regulator, over both batches
        let pace_here = l_pace(&semi_lab, &semi_unlab, &url_lab, &url_unlab, cfg.alpha, cfg.beta)?;
        let total = sup.add(&pace_here)?;
        let total_v = total.scalar_value();
        if !total_v.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter: state.iteration,
            });
        }
        total.backward()?;
        let grads = bound_models[g].grads();
        let group = &mut state.groups[g];
        group.adam.step(&mut group.student, &grads, lr)?;
    }
    drop(bound_models);

    for group in state.groups.iter_mut() {
        ema_update(&mut group.teacher, &group.student, cfg.omega)?;
    }
    state.iteration += 1;
    Ok(breakdown)
}

/// Probe-batch agreement of a model's argmax prediction with ground truth.
fn probe_agreement(params: &ModelParams, probe: &Batch) -> Result<(f64, Vec<bool>)> {
    let labels = probe
        .labels
        .as_ref()
        .ok_or_else(|| Error::Shape("probe batch needs labels".to_string()))?;
    let logits = params.forward_inference(&probe.images, probe.batch, probe.height, probe.width)?;
    let k = params.num_classes();
    let hw = probe.height * probe.width;
    let mut agree = vec![false; probe.batch * hw];
    for b in 0..probe.batch {
        for px in 0..hw {
            let mut best = 0usize;
            let mut best_v = logits[b * k * hw + px];
            for c in 1..k {
                let v = logits[(b * k + c) * hw + px];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            agree[b * hw + px] = best as u8 == labels.data()[b * hw + px];
        }
    }
    let frac = agree.iter().filter(|&&a| a).count() as f64 / agree.len() as f64;
    Ok((frac, agree))
}

/// Teacher-vs-ground-truth agreement fractions at one snapshot.
#[derive(Debug, Clone)]
pub struct ProbePoint {
    pub iter: usize,
    pub agreement: Vec<f64>,
}

/// Everything a finished run reports.
pub struct TrainingReport {
    pub config: TrainConfig,
    pub breakdowns: Vec<LossBreakdown>,
    pub probe: Vec<ProbePoint>,
    /// (model name, metrics on the test set)
    pub metrics: Vec<(String, MetricReport)>,
    pub out_dir: Option<PathBuf>,
}

impl TrainingReport {
    /// Foreground-mean metrics of the headline model (student 0).
    pub fn headline(&self) -> &ClassReport {
        &self
            .metrics
            .iter()
            .find(|(name, _)| name == "student0")
            .expect("student0 always evaluated")
            .1
            .foreground
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("model,class,dsc,jaccard,hd95,asd\n");
        let fmt_opt = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_else(|| "undefined".to_string());
        for (name, report) in &self.metrics {
            for row in &report.per_class {
                let _ = writeln!(
                    out,
                    "{name},{},{},{},{},{}",
                    row.class,
                    fmt_sig6(row.dsc),
                    fmt_sig6(row.jaccard),
                    fmt_opt(row.hd95),
                    fmt_opt(row.asd),
                );
            }
            let fg = &report.foreground;
            let _ = writeln!(
                out,
                "{name},foreground_mean,{},{},{},{}",
                fmt_sig6(fg.dsc),
                fmt_sig6(fg.jaccard),
                fmt_opt(fg.hd95),
                fmt_opt(fg.asd),
            );
        }
        out
    }

    pub fn losses_csv(&self) -> String {
        let mut out = String::from(LossBreakdown::csv_header());
        out.push('\n');
        for b in &self.breakdowns {
            out.push_str(&b.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn probe_csv(&self) -> String {
        let mut out = String::from("iter,agree_teacher0,agree_teacher1\n");
        for p in &self.probe {
            let t1 = p
                .agreement
                .get(1)
                .map(|&v| fmt_sig6(v))
                .unwrap_or_else(|| "undefined".to_string());
            let _ = writeln!(out, "{},{},{t1}", p.iter, fmt_sig6(p.agreement[0]));
        }
        out
    }
}

/// Evaluate one model over a test set: per-class and foreground-mean DSC,
/// Jaccard, 95HD, ASD.
pub fn evaluate_model(params: &ModelParams, samples: &[SyntheticSample]) -> Result<MetricReport> {
    let k = params.num_classes();
    let mut per_class_cases: Vec<Vec<MaskMetrics>> = vec![Vec::new(); k - 1];
    for chunk in samples.chunks(8) {
        let refs: Vec<&SyntheticSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs, true)?;
        let logits =
            params.forward_inference(&batch.images, batch.batch, batch.height, batch.width)?;
        let hw = batch.height * batch.width;
        let labels = batch.labels.as_ref().expect("test batch has labels");
        for b in 0..batch.batch {
            // argmax prediction for this case
            let mut pred = vec![0u8; hw];
            for px in 0..hw {
                let mut best = 0usize;
                let mut best_v = logits[b * k * hw + px];
                for c in 1..k {
                    let v = logits[(b * k + c) * hw + px];
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                pred[px] = best as u8;
            }
            for cls in 1..k {
                let pred_mask: Vec<bool> = pred.iter().map(|&v| v as usize == cls).collect();
                let gt_mask = labels.class_mask(b, cls as u8);
                per_class_cases[cls - 1].push(metrics::evaluate_masks(
                    &pred_mask,
                    &gt_mask,
                    batch.height,
                    batch.width,
                )?);
            }
        }
    }
    Ok(metrics::aggregate(&per_class_cases))
}

/// Generate the corpus a config describes and split it.
pub fn build_dataset(cfg: &TrainConfig) -> Result<DatasetSplit> {
    let total = cfg.train_count + cfg.test_count;
    let samples = data::generate(
        derive_seed(cfg.seed, STREAM_DATA),
        total,
        cfg.image_size,
        cfg.image_size,
        cfg.num_classes,
        cfg.noise_sigma,
    )?;
    let test_fraction = cfg.test_count as f64 / total as f64;
    data::split(
        samples,
        cfg.labeled_fraction,
        test_fraction,
        derive_seed(cfg.seed, STREAM_SPLIT),
    )
}

fn model_roster(state: &TrainerState) -> Vec<(String, &ModelParams)> {
    let mut out = Vec::new();
    for (g, group) in state.groups.iter().enumerate() {
        out.push((format!("student{g}"), &group.student));
        out.push((format!("teacher{g}"), &group.teacher));
    }
    out
}

/// On a non-finite loss, dump divergence fields of the current batch pairings
/// for post-mortem inspection.
fn dump_diagnostics(state: &TrainerState, labeled: &Batch, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if state.groups.len() == 2 {
        let s0 = model_probs(&state.groups[0].student, labeled)?;
        let t1 = model_probs(&state.groups[1].teacher, labeled)?;
        if let Ok(js) = js_divergence(&s0, &t1) {
            for b in 0..labeled.batch {
                pgm::write_divergence(&dir.join(format!("diverged_js_b{b}.pgm")), &js, b)?;
            }
        }
    }
    Ok(())
}

/// Run one full training session. When `out_dir` is given, the manifest is
/// written before the first iteration, then losses.csv / probe.csv /
/// metrics.csv, agreement snapshots, and final checkpoints.
pub fn run_training(
    cfg: &TrainConfig,
    split: &DatasetSplit,
    out_dir: Option<&Path>,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if cfg.mode.uses_unlabeled() && split.unlabeled.is_empty() {
        return Err(Error::Config(format!(
            "mode {} requires an unlabeled pool",
            cfg.mode.name()
        )));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.txt"), cfg.manifest())?;
    }

    let mut state = TrainerState::new(cfg)?;
    let probe_refs: Vec<&SyntheticSample> =
        split.test.iter().take(cfg.probe_count.max(1)).collect();
    let probe = Batch::from_samples(&probe_refs, true)?;

    let mut breakdowns = Vec::with_capacity(cfg.max_iter);
    let mut probe_points = Vec::new();

    for it in 0..cfg.max_iter {
        let labeled = state.sample_batch(split, true)?;
        let unlabeled = if cfg.mode.uses_unlabeled() {
            Some(state.sample_batch(split, false)?)
        } else {
            None
        };
        let step = train_step(&mut state, &labeled, unlabeled.as_ref());
        let breakdown = match step {
            Ok(b) => b,
            Err(Error::NonFiniteLoss { iter }) => {
                if let Some(dir) = out_dir {
                    dump_diagnostics(&state, &labeled, dir)?;
                }
                return Err(Error::NonFiniteLoss { iter });
            }
            Err(e) => return Err(e),
        };
        breakdowns.push(breakdown);

        let completed = it + 1;
        if completed % cfg.snapshot_every == 0 || completed == cfg.max_iter {
            let mut agreement = Vec::new();
            for (gi, group) in state.groups.iter().enumerate() {
                let (frac, map) = probe_agreement(&group.teacher, &probe)?;
                agreement.push(frac);
                if gi == 0 {
                    if let Some(dir) = out_dir {
                        let pixels: Vec<u8> = map
                            .iter()
                            .take(probe.height * probe.width)
                            .map(|&a| if a { 255 } else { 0 })
                            .collect();
                        pgm::write_pgm(
                            &dir.join(format!("agreement_{completed:04}.pgm")),
                            probe.width,
                            probe.height,
                            &pixels,
                        )?;
                    }
                }
            }
            probe_points.push(ProbePoint {
                iter: completed,
                agreement,
            });
        }
    }

    let mut metric_rows = Vec::new();
    for (name, params) in model_roster(&state) {
        metric_rows.push((name, evaluate_model(params, &split.test)?));
    }

    let report = TrainingReport {
        config: cfg.clone(),
        breakdowns,
        probe: probe_points,
        metrics: metric_rows,
        out_dir: out_dir.map(Path::to_path_buf),
    };

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("losses.csv"), report.losses_csv())?;
        std::fs::write(dir.join("probe.csv"), report.probe_csv())?;
        std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
        for (name, params) in model_roster(&state) {
            params.save(&dir.join(format!("{name}.ckpt")))?;
        }
    }
    Ok(report)
}

/// Run several configurations, each with its own dataset, optionally on
/// parallel threads. Per-run failures become error strings; the sweep keeps
/// going.
pub fn sweep(
    configs: &[(String, TrainConfig)],
    jobs: usize,
    out_root: Option<&Path>,
) -> Vec<(String, std::result::Result<TrainingReport, String>)> {
    let jobs = jobs.max(1);
    let run_one = |label: &String, cfg: &TrainConfig| -> std::result::Result<TrainingReport, String> {
        let dir = out_root.map(|root| root.join(label));
        build_dataset(cfg)
            .and_then(|split| run_training(cfg, &split, dir.as_deref()))
            .map_err(|e| e.to_string())
    };
    if jobs == 1 || configs.len() <= 1 {
        return configs
            .iter()
            .map(|(label, cfg)| (label.clone(), run_one(label, cfg)))
            .collect();
    }
    let mut results: Vec<Option<(String, std::result::Result<TrainingReport, String>)>> =
        Vec::new();
    results.resize_with(configs.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_mutex = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(configs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let (label, cfg) = &configs[i];
                let outcome = run_one(label, cfg);
                let mut guard = results_mutex.lock().expect("no poisoned sweeps");
                (*guard)[i] = Some((label.clone(), outcome));
            });
        }
    });
    drop(results_mutex);
    results
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// One consolidated CSV row per sweep entry: headline (student0
/// foreground-mean) metrics or the error text.
pub fn sweep_csv(results: &[(String, std::result::Result<TrainingReport, String>)]) -> String {
    let mut out = String::from("run,dsc,jaccard,hd95,asd,error\n");
    let fmt_opt = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_else(|| "undefined".to_string());
    for (label, res) in results {
        match res {
            Ok(report) => {
                let fg = report.headline();
                let _ = writeln!(
                    out,
                    "{label},{},{},{},{},",
                    fmt_sig6(fg.dsc),
                    fmt_sig6(fg.jaccard),
                    fmt_opt(fg.hd95),
                    fmt_opt(fg.asd),
                );
            }
            Err(msg) => {
                let clean = msg.replace([',', '\n'], ";");
                let _ = writeln!(out, "{label},,,,,{clean}");
            }
        }
    }
    out
}
