//! Gradient-entanglement diagnostics.
//!
//! For a step `θ ← θ − η∇ℓ` with `∇ℓ = −(d_w ∇logp_w − d_l ∇logp_l)`, the
//! first-order changes are
//!
//! ```text
//! Δlogp_w ≈ η (d_w ‖∇logp_w‖² − d_l ⟨∇logp_w, ∇logp_l⟩)
//! Δlogp_l ≈ η (d_w ⟨∇logp_w, ∇logp_l⟩ − d_l ‖∇logp_l‖²)
//! ```
//!
//! and the chosen / rejected conditions are exactly the sign tests on these two
//! expressions, written without division.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::PreferenceTriple;
use crate::error::Result;
use crate::loss::{Algorithm, LossContext, LossSpec};
use crate::model::{GradientVector, LanguageModel};
use crate::numeric;

/// Gradient norms below this are treated as zero when forming cosines.
pub const NORM_FLOOR: f64 = 1e-12;

/// First-order predicted `(Δlogp_w, Δlogp_l)` after a step of size `eta`.
pub fn taylor_predict(d_w: f64, d_l: f64, norm_w_sq: f64, norm_l_sq: f64, inner: f64, eta: f64) -> (f64, f64) {
    (
        eta * (d_w * norm_w_sq - d_l * inner),
        eta * (d_w * inner - d_l * norm_l_sq),
    )
}

/// `(chosen_cond, rejected_cond)`: whether `logp_w` rises and `logp_l` falls to
/// first order. Equality counts as satisfied.
pub fn check_conditions(d_w: f64, d_l: f64, norm_w_sq: f64, norm_l_sq: f64, inner: f64) -> (bool, bool) {
    (d_l * inner <= d_w * norm_w_sq, d_w * inner <= d_l * norm_l_sq)
}

/// The three outcomes of a margin step, plus the case where both conditions fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// `logp_w` up, `logp_l` down.
    Case1Ideal,
    /// Both down.
    Case2BothDown,
    /// Both up.
    Case3BothUp,
    /// `logp_w` down, `logp_l` up. Only reachable when `d_w ≠ d_l`.
    Indeterminate,
}

impl Case {
    pub fn label(self) -> &'static str {
        match self {
            Case::Case1Ideal => "case1_ideal",
            Case::Case2BothDown => "case2_both_down",
            Case::Case3BothUp => "case3_both_up",
            Case::Indeterminate => "indeterminate",
        }
    }

    /// The signs this case implies for `(Δlogp_w > 0, Δlogp_l < 0)`.
    pub fn implied_signs(self) -> (bool, bool) {
        match self {
            Case::Case1Ideal => (true, true),
            Case::Case2BothDown => (false, true),
            Case::Case3BothUp => (true, false),
            Case::Indeterminate => (false, false),
        }
    }
}

pub fn classify_case(chosen_cond: bool, rejected_cond: bool) -> Case {
    match (chosen_cond, rejected_cond) {
        (true, true) => Case::Case1Ideal,
        (false, true) => Case::Case2BothDown,
        (true, false) => Case::Case3BothUp,
        (false, false) => Case::Indeterminate,
    }
}

/// Per-step diagnostics for one preference triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub logp_w: f64,
    pub logp_l: f64,
    pub loss: f64,
    pub norm_w_sq: f64,
    pub norm_l_sq: f64,
    pub inner: f64,
    pub cosine: f64,
    /// Set when a gradient norm fell below [`NORM_FLOOR`] and the cosine was forced to 0.
    pub degenerate_norm: bool,
    pub d_w: f64,
    pub d_l: f64,
    pub chosen_cond: bool,
    pub rejected_cond: bool,
    pub case_label: Case,
    /// Both conditions failed although `d_w == d_l`, which first-order algebra rules out.
    pub anomaly: bool,
    pub eta: f64,
    pub pred_dw_logp: f64,
    pub pred_dl_logp: f64,
    /// For DPO, `η·β·σ(r̂_l − r̂_w)`: the absolute scale of the predicted changes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpo_step_scale: Option<f64>,
}

impl GradReport {
    /// Builds the report from precomputed gradients.
    pub fn from_gradients(
        spec: &LossSpec,
        ctx: &LossContext,
        grad_w: &GradientVector,
        grad_l: &GradientVector,
        eta: f64,
    ) -> Result<Self> {
        let (d_w, d_l) = spec.dw_dl(ctx);
        Self::from_coefficients(d_w, d_l, spec.loss_value(ctx)?, ctx, grad_w, grad_l, eta).map(|mut r| {
            if spec.algorithm() == Algorithm::Dpo {
                r.dpo_step_scale = Some(eta * d_w);
            }
            r
        })
    }

    /// Builds the report for an arbitrary update `-(d_w ∇logp_w − d_l ∇logp_l)`.
    pub fn from_coefficients(
        d_w: f64,
        d_l: f64,
        loss: f64,
        ctx: &LossContext,
        grad_w: &GradientVector,
        grad_l: &GradientVector,
        eta: f64,
    ) -> Result<Self> {
        let norm_w_sq = grad_w.norm_sq();
        let norm_l_sq = grad_l.norm_sq();
        let inner = grad_w.dot(grad_l)?;
        let (cosine, degenerate_norm) = numeric::cosine(inner, norm_w_sq, norm_l_sq, NORM_FLOOR);
        let (chosen_cond, rejected_cond) = check_conditions(d_w, d_l, norm_w_sq, norm_l_sq, inner);
        let case_label = classify_case(chosen_cond, rejected_cond);
        let (pred_dw_logp, pred_dl_logp) = taylor_predict(d_w, d_l, norm_w_sq, norm_l_sq, inner, eta);
        Ok(Self {
            logp_w: ctx.logp_w,
            logp_l: ctx.logp_l,
            loss,
            norm_w_sq,
            norm_l_sq,
            inner,
            cosine,
            degenerate_norm,
            d_w,
            d_l,
            chosen_cond,
            rejected_cond,
            case_label,
            anomaly: case_label == Case::Indeterminate && d_w == d_l,
            eta,
            pred_dw_logp,
            pred_dl_logp,
            dpo_step_scale: None,
        })
    }
}

/// Loss inputs for `triple` under `model`. Without attached reference
/// log-probabilities the current model serves as its own reference.
pub fn loss_context<M: LanguageModel>(model: &M, triple: &PreferenceTriple) -> Result<LossContext> {
    let logp_w = model.logprob(&triple.prompt, &triple.chosen)?;
    let logp_l = model.logprob(&triple.prompt, &triple.rejected)?;
    let (ref_w, ref_l) = triple
        .reference
        .map(|r| (r.chosen, r.rejected))
        .unwrap_or((logp_w, logp_l));
    Ok(LossContext::new(logp_w, logp_l, ref_w, ref_l).with_lengths(triple.chosen.len(), triple.rejected.len()))
}

/// Full diagnostics for one triple. A response with a zero-probability token
/// surfaces as [`crate::Error::ZeroProbability`].
pub fn grad_report<M: LanguageModel>(
    spec: &LossSpec,
    model: &M,
    triple: &PreferenceTriple,
    eta: f64,
) -> Result<GradReport> {
    let ctx = loss_context(model, triple)?;
    let grad_w = model.grad_logprob(&triple.prompt, &triple.chosen)?;
    let grad_l = model.grad_logprob(&triple.prompt, &triple.rejected)?;
    GradReport::from_gradients(spec, &ctx, &grad_w, &grad_l, eta)
}

/// Cosine similarities between per-token gradients of the chosen (rows) and
/// rejected (columns) responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenHeatmap {
    pub cosine: Vec<Vec<f64>>,
    pub inner: Vec<Vec<f64>>,
    pub norms_w: Vec<f64>,
    pub norms_l: Vec<f64>,
    /// `(i, j)` entries forced to 0 because a token gradient vanished.
    pub degenerate: Vec<(usize, usize)>,
}

impl TokenHeatmap {
    pub fn from_token_grads(grads_w: &[GradientVector], grads_l: &[GradientVector]) -> Result<Self> {
        let norms_w: Vec<f64> = grads_w.iter().map(GradientVector::norm).collect();
        let norms_l: Vec<f64> = grads_l.iter().map(GradientVector::norm).collect();
        let mut cosine = vec![vec![0.0; grads_l.len()]; grads_w.len()];
        let mut inner = cosine.clone();
        let mut degenerate = Vec::new();
        for (i, gw) in grads_w.iter().enumerate() {
            for (j, gl) in grads_l.iter().enumerate() {
                let ip = gw.dot(gl)?;
                inner[i][j] = ip;
                let (c, flag) = numeric::cosine(ip, norms_w[i] * norms_w[i], norms_l[j] * norms_l[j], NORM_FLOOR);
                cosine[i][j] = c;
                if flag {
                    degenerate.push((i, j));
                }
            }
        }
        Ok(Self {
            cosine,
            inner,
            norms_w,
            norms_l,
            degenerate,
        })
    }

    pub fn rows(&self) -> usize {
        self.cosine.len()
    }

    pub fn cols(&self) -> usize {
        self.cosine.first().map_or(0, Vec::len)
    }

    /// `Σ_ij cos_ij ‖g_w^i‖ ‖g_l^j‖`, which equals the sentence-level inner product.
    pub fn weighted_sum(&self) -> f64 {
        let terms: Vec<f64> = self
            .cosine
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(j, c)| c * self.norms_w[i] * self.norms_l[j])
            })
            .collect();
        numeric::pairwise_sum(&terms)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows().min(self.cols())).map(|i| self.cosine[i][i]).collect()
    }

    /// Dense row-major CSV of the cosine matrix, no header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in &self.cosine {
            writer.write_record(row.iter().map(|c| c.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn token_heatmap<M: LanguageModel>(model: &M, triple: &PreferenceTriple) -> Result<TokenHeatmap> {
    let grads_w = model.token_grads(&triple.prompt, &triple.chosen)?;
    let grads_l = model.token_grads(&triple.prompt, &triple.rejected)?;
    TokenHeatmap::from_token_grads(&grads_w, &grads_l)
}
