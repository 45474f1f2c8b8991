use serde::{Deserialize, Serialize};

use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::model::{GradientVector, LanguageModel};
use crate::numeric::{log_sigmoid, pairwise_sum, sigmoid};

/// Hyperparameters of the sparse objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseParams {
    /// Weight of the `ℓ1` penalty on the mask values.
    pub eta_sparse: f64,
    /// Threshold `r` of the smooth indicator.
    pub r: f64,
    /// Steepness `k` of the smooth indicator.
    pub k: f64,
    /// Learning rate for the mask confidences; `None` uses the model's.
    pub mask_lr: Option<f64>,
    /// Initial value of every confidence `u`.
    pub init_u: f64,
}

impl Default for SparseParams {
    fn default() -> Self {
        Self {
            eta_sparse: 0.01,
            r: 0.0,
            k: 50.0,
            mask_lr: None,
            init_u: 0.0,
        }
    }
}

impl SparseParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, value: f64, constraint| {
            Err(Error::Constraint {
                name: name.to_string(),
                value,
                constraint,
            })
        };
        if !(self.eta_sparse >= 0.0 && self.eta_sparse.is_finite()) {
            return bad("eta_sparse", self.eta_sparse, "finite and >= 0");
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad("k", self.k, "finite and > 0");
        }
        if !self.r.is_finite() {
            return bad("r", self.r, "finite");
        }
        if !self.init_u.is_finite() {
            return bad("init_u", self.init_u, "finite");
        }
        if let Some(lr) = self.mask_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("mask_lr", lr, "finite and > 0");
            }
        }
        Ok(())
    }

    /// `σ(k(u − r))`.
    pub fn mask(&self, u: f64) -> f64 {
        sigmoid(self.k * (u - self.r))
    }

    fn mask_prime(&self, u: f64) -> f64 {
        let m = self.mask(u);
        self.k * m * (1.0 - m)
    }
}

/// Per-token mask confidences for one triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskState {
    pub u_w: Vec<f64>,
    pub u_l: Vec<f64>,
}

impl MaskState {
    pub fn new(triple: &PreferenceTriple, init_u: f64) -> Self {
        Self {
            u_w: vec![init_u; triple.chosen.len()],
            u_l: vec![init_u; triple.rejected.len()],
        }
    }

    pub fn masks(&self, params: &SparseParams) -> (Vec<f64>, Vec<f64>) {
        (
            self.u_w.iter().map(|&u| params.mask(u)).collect(),
            self.u_l.iter().map(|&u| params.mask(u)).collect(),
        )
    }

    fn check(&self, triple: &PreferenceTriple) -> Result<()> {
        if self.u_w.len() != triple.chosen.len() {
            return Err(Error::DimensionMismatch {
                expected: triple.chosen.len(),
                found: self.u_w.len(),
            });
        }
        if self.u_l.len() != triple.rejected.len() {
            return Err(Error::DimensionMismatch {
                expected: triple.rejected.len(),
                found: self.u_l.len(),
            });
        }
        if !self.u_w.iter().chain(&self.u_l).all(|u| u.is_finite()) {
            return Err(Error::NonFinite {
                what: "mask confidences",
                step: None,
            });
        }
        Ok(())
    }
}

/// Gradients of the sparse objective for one triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrads {
    pub loss: f64,
    /// `Σ m_w ρ_w − Σ m_l ρ_l`.
    pub z: f64,
    pub theta: GradientVector,
    pub u_w: Vec<f64>,
    pub u_l: Vec<f64>,
}

fn log_ratios<M: LanguageModel>(model: &M, reference: &M, prompt: &[usize], response: &[usize]) -> Result<Vec<f64>> {
    let cur = model.token_logprobs(prompt, response)?;
    let base = reference.token_logprobs(prompt, response)?;
    Ok(cur.iter().zip(&base).map(|(a, b)| a - b).collect())
}

fn weighted(masks: &[f64], rho: &[f64]) -> f64 {
    let terms: Vec<f64> = masks.iter().zip(rho).map(|(m, r)| m * r).collect();
    pairwise_sum(&terms)
}

/// `−log σ(Σ m_w ρ_w − Σ m_l ρ_l) + η_sparse (Σ m_w + Σ m_l)` with per-token
/// log-ratios `ρ` against `reference`. Each response is conditioned on its own
/// prefix.
pub fn sparsepo_loss<M: LanguageModel>(
    model: &M,
    triple: &PreferenceTriple,
    masks: &MaskState,
    reference: &M,
    params: &SparseParams,
) -> Result<f64> {
    masks.check(triple)?;
    let rho_w = log_ratios(model, reference, &triple.prompt, &triple.chosen)?;
    let rho_l = log_ratios(model, reference, &triple.prompt, &triple.rejected)?;
    let (m_w, m_l) = masks.masks(params);
    let z = weighted(&m_w, &rho_w) - weighted(&m_l, &rho_l);
    let l1 = pairwise_sum(&m_w) + pairwise_sum(&m_l);
    let loss = -log_sigmoid(z) + params.eta_sparse * l1;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            what: "sparse loss",
            step: None,
        })
    }
}

/// Exact gradients of [`sparsepo_loss`] with respect to the model parameters and
/// both confidence vectors.
pub fn sparsepo_grads<M: LanguageModel>(
    model: &M,
    triple: &PreferenceTriple,
    masks: &MaskState,
    reference: &M,
    params: &SparseParams,
) -> Result<SparseGrads> {
    masks.check(triple)?;
    let rho_w = log_ratios(model, reference, &triple.prompt, &triple.chosen)?;
    let rho_l = log_ratios(model, reference, &triple.prompt, &triple.rejected)?;
    let (m_w, m_l) = masks.masks(params);
    let z = weighted(&m_w, &rho_w) - weighted(&m_l, &rho_l);
    let loss = -log_sigmoid(z) + params.eta_sparse * (pairwise_sum(&m_w) + pairwise_sum(&m_l));
    // d(−log σ(z))/dz = −σ(−z)
    let s = sigmoid(-z);

    let tg_w = model.token_grads(&triple.prompt, &triple.chosen)?;
    let tg_l = model.token_grads(&triple.prompt, &triple.rejected)?;
    let scaled: Vec<GradientVector> = tg_w
        .iter()
        .zip(&m_w)
        .map(|(g, m)| g.scaled(-s * m))
        .chain(tg_l.iter().zip(&m_l).map(|(g, m)| g.scaled(s * m)))
        .collect();
    let theta = GradientVector::sum(model.shape(), &scaled)?;

    let u_w = masks
        .u_w
        .iter()
        .zip(&rho_w)
        .map(|(&u, r)| (-s * r + params.eta_sparse) * params.mask_prime(u))
        .collect();
    let u_l = masks
        .u_l
        .iter()
        .zip(&rho_l)
        .map(|(&u, r)| (s * r + params.eta_sparse) * params.mask_prime(u))
        .collect();
    if !loss.is_finite() || !theta.is_finite() {
        return Err(Error::NonFinite {
            what: "sparse gradient",
            step: None,
        });
    }
    Ok(SparseGrads {
        loss,
        z,
        theta,
        u_w,
        u_l,
    })
}

/// One joint descent step on the model (rate `eta`) and the confidences (rate
/// `mask_lr`, defaulting to `eta`).
pub fn sparsepo_step<M: LanguageModel>(
    model: &M,
    triple: &PreferenceTriple,
    masks: &MaskState,
    reference: &M,
    params: &SparseParams,
    eta: f64,
) -> Result<(M, MaskState)> {
    let grads = sparsepo_grads(model, triple, masks, reference, params)?;
    let lr = params.mask_lr.unwrap_or(eta);
    let next = model.apply_step(&grads.theta, eta)?;
    let update = |u: &[f64], g: &[f64]| u.iter().zip(g).map(|(u, g)| u - lr * g).collect();
    Ok((
        next,
        MaskState {
            u_w: update(&masks.u_w, &grads.u_w),
            u_l: update(&masks.u_l, &grads.u_l),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_edit1_triple;
    use crate::model::{central_difference, finite_diff_grad, LogitsLM};

    fn fixture() -> (LogitsLM, LogitsLM, PreferenceTriple) {
        let triple = build_edit1_triple(5, 2, 4, 3).unwrap();
        let reference = LogitsLM::random(4, &triple.chosen, &triple.rejected, 1.0, 3).unwrap();
        let model = LogitsLM::random(4, &triple.chosen, &triple.rejected, 1.0, 4).unwrap();
        (model, reference, triple)
    }

    #[test]
    fn closed_masks_give_log_two() {
        let (model, reference, triple) = fixture();
        let params = SparseParams {
            k: 1e4,
            ..SparseParams::default()
        };
        let masks = MaskState::new(&triple, -1.0);
        let loss = sparsepo_loss(&model, &triple, &masks, &reference, &params).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, reference, triple) = fixture();
        let params = SparseParams {
            k: 3.0,
            eta_sparse: 0.05,
            ..SparseParams::default()
        };
        let masks = MaskState {
            u_w: vec![0.1, -0.3, 0.2, 0.5, -0.1],
            u_l: vec![-0.2, 0.4, 0.0, 0.3, 0.1],
        };
        let grads = sparsepo_grads(&model, &triple, &masks, &reference, &params).unwrap();
        let fd_theta =
            finite_diff_grad(&model, 1e-6, |m| sparsepo_loss(m, &triple, &masks, &reference, &params)).unwrap();
        assert!(grads.theta.relative_error(&fd_theta, 1e-12).unwrap() < 1e-6);
        let fd_uw = central_difference(&masks.u_w, 1e-6, |u| {
            let probe = MaskState {
                u_w: u.to_vec(),
                u_l: masks.u_l.clone(),
            };
            sparsepo_loss(&model, &triple, &probe, &reference, &params)
        })
        .unwrap();
        for (a, b) in grads.u_w.iter().zip(&fd_uw) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_step_keeps_state() {
        let (model, reference, triple) = fixture();
        let params = SparseParams::default();
        let masks = MaskState::new(&triple, 0.2);
        let (m2, k2) = sparsepo_step(&model, &triple, &masks, &reference, &params, 0.0).unwrap();
        assert_eq!(m2, model);
        assert_eq!(k2, masks);
    }

    #[test]
    fn rejects_bad_params_and_sizes() {
        let bad = SparseParams {
            k: 0.0,
            ..SparseParams::default()
        };
        assert!(bad.validate().is_err());
        let (model, reference, triple) = fixture();
        let masks = MaskState {
            u_w: vec![0.0],
            u_l: vec![0.0; 5],
        };
        assert!(matches!(
            sparsepo_loss(&model, &triple, &masks, &reference, &SparseParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
