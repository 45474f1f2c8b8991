use crate::error::Result;
use crate::loss::{Algorithm, LossContext, LossSpec};
use crate::model::GradientVector;

/// Default floor on gradient norms.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Normalized update direction and the scalar it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct NpoDirection {
    pub direction: GradientVector,
    /// The loss-specific scale `C`.
    pub c: f64,
    /// Both norms fell below the floor, or the normalized gradients coincide.
    pub degenerate: bool,
}

/// Scale for the normalized update. For DPO this is `β σ(r̂_l − r̂_w)`; for other
/// entries it is the mean of `d_w` and `d_l`, which reduces to the same value
/// whenever `d_w = d_l`.
pub fn npo_scale(spec: &LossSpec, ctx: &LossContext) -> f64 {
    let (d_w, d_l) = spec.dw_dl(ctx);
    if spec.algorithm() == Algorithm::Dpo {
        d_w
    } else {
        0.5 * (d_w + d_l)
    }
}

/// `−C (g_w / max(‖g_w‖, ε) − g_l / max(‖g_l‖, ε))`.
///
/// With `C > 0` a small step along the negative of this direction raises
/// `logp_w` and lowers `logp_l` to first order whenever the gradients are not
/// parallel.
pub fn npo_direction(
    spec: &LossSpec,
    ctx: &LossContext,
    grad_w: &GradientVector,
    grad_l: &GradientVector,
    epsilon: f64,
) -> Result<NpoDirection> {
    npo_direction_scaled(npo_scale(spec, ctx), grad_w, grad_l, epsilon)
}

/// [`npo_direction`] with an explicit scale.
pub fn npo_direction_scaled(
    c: f64,
    grad_w: &GradientVector,
    grad_l: &GradientVector,
    epsilon: f64,
) -> Result<NpoDirection> {
    grad_w.check_same_shape(grad_l)?;
    let nw = grad_w.norm();
    let nl = grad_l.norm();
    let zero = || GradientVector::zeros(grad_w.shape().clone());
    if nw < epsilon && nl < epsilon {
        return Ok(NpoDirection {
            direction: zero(),
            c,
            degenerate: true,
        });
    }
    let mut diff = grad_w.scaled(1.0 / nw.max(epsilon));
    diff.axpy(-1.0 / nl.max(epsilon), grad_l)?;
    if diff.norm() < 1e-12 {
        return Ok(NpoDirection {
            direction: zero(),
            c,
            degenerate: true,
        });
    }
    Ok(NpoDirection {
        direction: diff.scaled(-c),
        c,
        degenerate: false,
    })
}
