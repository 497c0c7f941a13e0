//! Loss terms: supervised CE + Dice, pseudo-label Dice, uniform
//! regularization on disagreement pixels, and the pace regulator that
//! combines them. All are differentiable tape tensors except the
//! agreement-decomposition check, which is plain arithmetic.

use crate::divergence::{js_divergence, ProbMap, EPS_LOG};
use crate::label::LabelMap;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Smoothing constant in the Dice ratio.
pub const EPS_DICE: f64 = 1e-5;

const LN_2: f64 = std::f64::consts::LN_2;

fn check_logits_vs_labels(t: &Tensor, labels: &LabelMap, what: &str) -> Result<()> {
    let s = t.shape();
    let ok = s.len() == 4
        && s[0] == labels.batch()
        && s[1] == labels.classes()
        && s[2] == labels.height()
        && s[3] == labels.width();
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: tensor {s:?} does not match labels [{},{},{},{}]",
            labels.batch(),
            labels.classes(),
            labels.height(),
            labels.width()
        )))
    }
}

/// Mean over pixels of -log softmax(logits)[label]. Natural log.
pub fn cross_entropy(logits: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    check_logits_vs_labels(logits, labels, "cross_entropy")?;
    let probs = logits.softmax(1)?;
    ce_from_probs(&probs, labels)
}

/// Cross-entropy evaluated on already-normalized probabilities.
pub fn ce_from_probs(probs: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    check_logits_vs_labels(probs, labels, "cross_entropy")?;
    let log_p = probs.clampmin(EPS_LOG).ln()?;
    let picked = log_p.gather_class(&labels.as_indices())?;
    Ok(picked.mean()?.neg())
}

/// Soft Dice loss: 1 minus the mean over all classes of
/// (2 * sum(p_k * y_k) + eps) / (sum(p_k) + sum(y_k) + eps),
/// with y the one-hot encoding of the labels and sums over batch and space.
pub fn dice_loss(probs: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    check_logits_vs_labels(probs, labels, "dice_loss")?;
    let tape = probs.tape();
    let one_hot = tape.constant(&probs.shape(), labels.one_hot())?;
    let intersection = probs.mul(&one_hot)?.sum_per_class()?;
    let p_sum = probs.sum_per_class()?;
    let y_sum = one_hot.sum_per_class()?;
    let numer = intersection.mul_scalar(2.0).add_scalar(EPS_DICE);
    let denom = p_sum.add(&y_sum)?.add_scalar(EPS_DICE);
    let dice = numer.div(&denom)?;
    Ok(dice.mean()?.neg().add_scalar(1.0))
}

/// Supervised loss: half the sum of cross-entropy and Dice on the same
/// prediction. First argument is the prediction, second the ground truth.
pub fn l_sup(logits: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    let probs = logits.softmax(1)?;
    let ce = ce_from_probs(&probs, labels)?;
    let dice = dice_loss(&probs, labels)?;
    Ok(ce.add(&dice)?.mul_scalar(0.5))
}

/// Pseudo-label loss: Dice between the student's probabilities and a hard
/// consensus label map. The pseudo-labels carry no gradient, so gradient
/// flows only into the student.
pub fn l_semi(student_probs: &Tensor, pseudo: &LabelMap) -> Result<Tensor> {
    dice_loss(student_probs, pseudo)
}

/// Uniform regularization loss. Pixels where the student and the
/// across-group teacher disagree (JS >= kappa, computed on detached values)
/// are pushed toward the uniform distribution: the loss is the mean over
/// those pixels of KL(student || Uniform(K)) in bits, or 0 when no pixel
/// disagrees.
pub fn l_url(student_probs: &Tensor, cross_teacher: &ProbMap, kappa: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Domain(format!("kappa {kappa} outside [0, 1]")));
    }
    let student_detached = ProbMap::from_tensor(student_probs)?;
    let js = js_divergence(&student_detached, cross_teacher)?;
    let diff: Vec<f64> = js
        .values()
        .iter()
        .map(|&v| if v >= kappa { 1.0 } else { 0.0 })
        .collect();
    let count = diff.iter().sum::<f64>();
    let tape = student_probs.tape();
    if count == 0.0 {
        return Ok(tape.scalar(0.0));
    }
    l_url_with_mask(student_probs, &diff, count)
}

/// URL body with a fixed 0/1 disagreement mask (flattened [B,H,W]) and its
/// pixel count. Split out so gradient checks can hold the mask constant.
pub fn l_url_with_mask(student_probs: &Tensor, diff_mask: &[f64], count: f64) -> Result<Tensor> {
    let shape = student_probs.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "l_url: expected [B,K,H,W] student probabilities, got {shape:?}"
        )));
    }
    let classes = shape[1] as f64;
    let tape = student_probs.tape();
    let mask = tape.constant(&[shape[0], shape[2], shape[3]], diff_mask.to_vec())?;
    // KL(p || u) in bits = sum_k p log2 p + log2 K
    let p_log_p = student_probs
        .mul(&student_probs.clampmin(EPS_LOG).ln()?)?
        .sum_over_classes()?;
    let kl_bits = p_log_p.mul_scalar(1.0 / LN_2).add_scalar(classes.log2());
    let masked = kl_bits.mul(&mask)?;
    masked.sum()?.div_scalar(count).map_err(Error::from)
}

/// Pace regulator: alpha * (semi0 + semi1) + beta * (url0 + url1).
pub fn l_pace(
    semi0: &Tensor,
    semi1: &Tensor,
    url0: &Tensor,
    url1: &Tensor,
    alpha: f64,
    beta: f64,
) -> Result<Tensor> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Domain(format!(
            "pace weights must be non-negative, got alpha={alpha} beta={beta}"
        )));
    }
    let semi = semi0.add(semi1)?.mul_scalar(alpha);
    let url = url0.add(url1)?.mul_scalar(beta);
    semi.add(&url).map_err(Error::from)
}

/// Evaluate both sides of the agreement decomposition of the combined
/// objective L(pred, gt) + lambda * L(pred, teacher):
///
/// - lhs sums the unsplit per-pixel form;
/// - rhs splits pixels on whether the hard teacher label matches the ground
///   truth, using (1 + lambda) * L(pred, gt) where it does.
///
/// The two sides are algebraically equal at every pixel; returning both lets
/// callers verify the identity numerically. `pixel_loss` maps a pixel's
/// distribution and a hard label to a loss value.
pub fn mt_decomposition_check(
    pred: &ProbMap,
    y_gt: &LabelMap,
    y_teacher: &LabelMap,
    lambda: f64,
    pixel_loss: &dyn Fn(&[f64], usize) -> f64,
) -> Result<(f64, f64)> {
    if y_gt.batch() != pred.batch()
        || y_gt.height() != pred.height()
        || y_gt.width() != pred.width()
        || y_teacher.batch() != pred.batch()
        || y_teacher.height() != pred.height()
        || y_teacher.width() != pred.width()
    {
        return Err(Error::Shape(
            "mt_decomposition_check: prediction and label maps disagree in shape".to_string(),
        ));
    }
    let mut dist = vec![0.0; pred.classes()];
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for f in 0..pred.pixels() {
        pred.read_pixel(f, &mut dist);
        let gt = y_gt.data()[f] as usize;
        let t = y_teacher.data()[f] as usize;
        let l_gt = pixel_loss(&dist, gt);
        lhs += l_gt + lambda * pixel_loss(&dist, t);
        if t == gt {
            rhs += (1.0 + lambda) * l_gt;
        } else {
            rhs += l_gt + lambda * pixel_loss(&dist, t);
        }
    }
    Ok((lhs, rhs))
}

/// Per-pixel cross-entropy against a hard label, natural log, clamped.
pub fn pixel_ce(dist: &[f64], label: usize) -> f64 {
    -dist[label].max(EPS_LOG).ln()
}
