//! Distillation and hard-label objectives with analytic logit gradients.
//!
//! The distillation loss is the temperature-scaled cross-entropy
//! `-τ² Σ_j σ_j(z_t/τ) · log σ_j(z_s/τ)` between the frozen teacher's and the
//! student's tempered softmax. The teacher's entropy is not subtracted, so the
//! value is bounded below by `τ²·H(σ(z_t/τ))` rather than by zero.

use crate::error::{Error, Result};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature must be positive, got {tau}")))
    }
}

/// Numerically stable `log σ(z/τ)`.
pub fn log_softmax(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if z.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let scaled: Vec<f64> = z.iter().map(|&v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = scaled.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(scaled.iter().map(|&v| v - max - log_norm).collect())
}

/// `σ(z/τ)`, computed with max-subtraction.
pub fn softmax(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if z.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let scaled: Vec<f64> = z.iter().map(|&v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn check_pair(z_s: &[f64], z_t: &[f64]) -> Result<()> {
    if z_s.len() != z_t.len() {
        return Err(Error::Domain(format!(
            "student has {} logits, teacher has {}",
            z_s.len(),
            z_t.len()
        )));
    }
    if z_s.len() < 2 {
        return Err(Error::Domain("need at least two classes".into()));
    }
    Ok(())
}

pub fn kd_loss(z_s: &[f64], z_t: &[f64], tau: f64) -> Result<f64> {
    check_pair(z_s, z_t)?;
    let teacher = softmax(z_t, tau)?;
    let student_log = log_softmax(z_s, tau)?;
    let cross: f64 = teacher.iter().zip(&student_log).map(|(p, lq)| p * lq).sum();
    Ok(-tau * tau * cross)
}

/// `∂L_KD/∂z_s = τ·(σ(z_s/τ) − σ(z_t/τ))`.
pub fn kd_loss_grad(z_s: &[f64], z_t: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_pair(z_s, z_t)?;
    let teacher = softmax(z_t, tau)?;
    let student = softmax(z_s, tau)?;
    Ok(student
        .iter()
        .zip(&teacher)
        .map(|(q, p)| tau * (q - p))
        .collect())
}

fn check_label(z: &[f64], label: usize) -> Result<()> {
    if label >= z.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    Ok(())
}

/// Cross-entropy `−log σ_label(z)`.
pub fn hard_label_loss(z: &[f64], label: usize) -> Result<f64> {
    check_label(z, label)?;
    Ok(-log_softmax(z, 1.0)?[label])
}

/// `σ(z) − onehot(label)`.
pub fn hard_label_grad(z: &[f64], label: usize) -> Result<Vec<f64>> {
    check_label(z, label)?;
    let mut g = softmax(z, 1.0)?;
    g[label] -= 1.0;
    Ok(g)
}

pub fn batch_mean_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Domain("mean of an empty batch".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Entropy `H(σ(z/τ))` in nats.
pub fn entropy(z: &[f64], tau: f64) -> Result<f64> {
    let p = softmax(z, tau)?;
    let lp = log_softmax(z, tau)?;
    Ok(-p.iter().zip(&lp).map(|(p, lp)| p * lp).sum::<f64>())
}
