//! Exponential-moving-average teacher updates.

use crate::model::ModelParams;
use crate::{Error, Result};

/// EMA smoothing factor in [0, 1]; 0 copies the student, 1 freezes the
/// teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaConfig {
    pub omega: f64,
}

impl EmaConfig {
    pub fn new(omega: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&omega) {
            Ok(EmaConfig { omega })
        } else {
            Err(Error::Domain(format!("omega {omega} outside [0, 1]")))
        }
    }
}

/// Blend every teacher parameter toward its student counterpart:
/// theta_t = omega * theta_t + (1 - omega) * theta_s, elementwise.
/// Teacher parameters never require gradients.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, omega: f64) -> Result<()> {
    EmaConfig::new(omega)?;
    if !teacher.structurally_compatible(student) {
        return Err(Error::Shape(
            "ema_update: teacher and student parameter sets are not structurally compatible"
                .to_string(),
        ));
    }
    for (t, s) in teacher.entries_mut().iter_mut().zip(student.entries()) {
        for (tv, sv) in t.data.iter_mut().zip(&s.data) {
            *tv = omega * *tv + (1.0 - omega) * sv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureKind, ModelParams};

    fn pair() -> (ModelParams, ModelParams) {
        let student = ModelParams::init(ArchitectureKind::PlainConvNet, 3, 4, 11).unwrap();
        let teacher = ModelParams::init(ArchitectureKind::PlainConvNet, 3, 4, 22).unwrap();
        (teacher, student)
    }

    #[test]
    fn omega_zero_copies_student() {
        let (mut teacher, student) = pair();
        ema_update(&mut teacher, &student, 0.0).unwrap();
        for (t, s) in teacher.entries().iter().zip(student.entries()) {
            assert_eq!(t.data, s.data);
        }
    }

    #[test]
    fn omega_one_is_identity() {
        let (mut teacher, student) = pair();
        let before: Vec<Vec<f64>> = teacher.entries().iter().map(|e| e.data.clone()).collect();
        ema_update(&mut teacher, &student, 1.0).unwrap();
        for (t, b) in teacher.entries().iter().zip(&before) {
            assert_eq!(&t.data, b);
        }
    }

    #[test]
    fn constant_student_matches_geometric_closed_form() {
        for &omega in &[0.90, 0.95, 0.99] {
            let (mut teacher, student) = pair();
            let t0: Vec<Vec<f64>> = teacher.entries().iter().map(|e| e.data.clone()).collect();
            let steps = 50;
            for _ in 0..steps {
                ema_update(&mut teacher, &student, omega).unwrap();
            }
            let w = omega.powi(steps);
            for (ei, (t, s)) in teacher.entries().iter().zip(student.entries()).enumerate() {
                for (j, (&tv, &sv)) in t.data.iter().zip(&s.data).enumerate() {
                    let expect = w * t0[ei][j] + (1.0 - w) * sv;
                    assert!(
                        (tv - expect).abs() < 1e-10,
                        "omega {omega} entry {ei}[{j}]: {tv} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn update_stays_within_endpoint_hull_and_is_idempotent_at_fixpoint() {
        let (mut teacher, student) = pair();
        let before: Vec<Vec<f64>> = teacher.entries().iter().map(|e| e.data.clone()).collect();
        ema_update(&mut teacher, &student, 0.95).unwrap();
        for (ei, (t, s)) in teacher.entries().iter().zip(student.entries()).enumerate() {
            for (j, &tv) in t.data.iter().enumerate() {
                let lo = before[ei][j].min(s.data[j]);
                let hi = before[ei][j].max(s.data[j]);
                assert!(tv >= lo - 1e-15 && tv <= hi + 1e-15);
            }
        }

        let mut fix = student.clone();
        ema_update(&mut fix, &student, 0.95).unwrap();
        for (t, s) in fix.entries().iter().zip(student.entries()) {
            for (&tv, &sv) in t.data.iter().zip(&s.data) {
                assert!((tv - sv).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_incompatible_structures_and_bad_omega() {
        let (mut teacher, _) = pair();
        let other = ModelParams::init(ArchitectureKind::ResidualConvNet, 3, 4, 5).unwrap();
        assert!(ema_update(&mut teacher, &other, 0.95).is_err());
        let (mut teacher, student) = pair();
        assert!(ema_update(&mut teacher, &student, 1.5).is_err());
    }
}
