//! The margin-based preference loss family.
//!
//! Every algorithm in the catalog is written as
//!
//! ```text
//! loss = -( f( g_w(logp_w) - g_l(logp_l) ) + R(logp_w) )
//! ```
//!
//! where `f` is the outer map, `g_w` / `g_l` transform the chosen / rejected
//! sequence log-probabilities and `R` is a chosen-only regularizer. The gradient
//! then always decomposes as `-(d_w * grad_w - d_l * grad_l)` with
//!
//! ```text
//! d_w = f'(margin) * g_w'(logp_w) + R'(logp_w)
//! d_l = f'(margin) * g_l'(logp_l)
//! ```
//!
//! Rows whose published objective is a squared distance (IPO, SPPO) are stored
//! with the sign that makes the returned loss the objective those algorithms
//! minimize. The `d_w` / `d_l` coefficients are defined from that objective.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GradientVector;
use crate::numeric::{log_sigmoid, sigmoid};

/// Identifier of one catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dpo,
    Rdpo,
    Simpo,
    Ipo,
    Rrhf,
    Slichf,
    Cpo,
    Dpop,
    Kto,
    Sppo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Dpo,
        Algorithm::Rdpo,
        Algorithm::Simpo,
        Algorithm::Ipo,
        Algorithm::Rrhf,
        Algorithm::Slichf,
        Algorithm::Cpo,
        Algorithm::Dpop,
        Algorithm::Kto,
        Algorithm::Sppo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dpo => "dpo",
            Algorithm::Rdpo => "rdpo",
            Algorithm::Simpo => "simpo",
            Algorithm::Ipo => "ipo",
            Algorithm::Rrhf => "rrhf",
            Algorithm::Slichf => "slichf",
            Algorithm::Cpo => "cpo",
            Algorithm::Dpop => "dpop",
            Algorithm::Kto => "kto",
            Algorithm::Sppo => "sppo",
        }
    }

    /// Hyperparameters the algorithm reads, with their defaults.
    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Algorithm::Dpo => &[("beta", 0.1)],
            Algorithm::Rdpo => &[("beta", 0.1), ("alpha", 0.2)],
            Algorithm::Simpo => &[("beta", 2.0), ("gamma", 0.5)],
            Algorithm::Ipo => &[("beta", 0.1)],
            Algorithm::Rrhf => &[("lambda", 1.0)],
            Algorithm::Slichf => &[("delta", 1.0), ("lambda", 1.0)],
            Algorithm::Cpo => &[("beta", 0.1), ("lambda", 1.0)],
            Algorithm::Dpop => &[("beta", 0.1), ("lambda", 50.0)],
            Algorithm::Kto => &[("beta", 0.1), ("lambda_w", 1.0), ("lambda_l", 1.0), ("z_ref", 0.0)],
            Algorithm::Sppo => &[("beta", 0.001)],
        }
    }

    /// Whether the chosen / rejected log-probabilities are divided by the
    /// response length inside `g_w` / `g_l`.
    pub fn length_normalized(self) -> bool {
        matches!(self, Algorithm::Simpo | Algorithm::Rrhf | Algorithm::Ipo)
    }

    /// Human-readable shapes of `(f, g_w, g_l, R)`.
    pub fn shapes(self) -> [&'static str; 4] {
        match self {
            Algorithm::Dpo => ["logσ(a − c_ref)", "βa", "βa", "0"],
            Algorithm::Rdpo => ["logσ(a − (c_ref + α(|y_w| − |y_l|)))", "βa", "βa", "0"],
            Algorithm::Simpo => ["logσ(a − γ)", "βa/|y_w|", "βa/|y_l|", "0"],
            Algorithm::Ipo => ["(a − (c_ref + 1/(2β)))²  [minimized]", "a/|y_w|", "a/|y_l|", "0"],
            Algorithm::Rrhf => ["min(0, a)", "a/|y_w|", "a/|y_l|", "λa"],
            Algorithm::Slichf => ["min(0, a − δ)", "a", "a", "λa"],
            Algorithm::Cpo => ["logσ(a)", "βa", "βa", "λa"],
            Algorithm::Dpop => ["logσ(a − c_ref)", "βa − λ·max(0, c^w_ref − a)", "βa", "0"],
            Algorithm::Kto => [
                "a",
                "λ_w·σ(βa − (c^w_ref + z_ref))",
                "λ_l·σ((c^l_ref + z_ref) − a)",
                "0",
            ],
            Algorithm::Sppo => ["a", "(a − β⁻¹)²  [minimized]", "(a + β⁻¹)²  [minimized]", "0"],
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

/// JSON description of a loss: `{"name": "dpo", "hyperparams": {"beta": 0.1}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub name: String,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
}

impl LossConfig {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            hyperparams: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.hyperparams.insert(key.to_string(), value);
        self
    }

    pub fn build(&self) -> Result<LossSpec> {
        make_loss_spec(&self.name, &self.hyperparams)
    }
}

/// Inputs to a loss evaluation for one preference triple.
///
/// `logp_w` / `logp_l` are whole-sequence log-probabilities; algorithms that
/// length-normalize do so internally from `len_w` / `len_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossContext {
    pub logp_w: f64,
    pub logp_l: f64,
    /// `c^w_ref`, the reference model's log-probability of the chosen response.
    pub ref_logp_w: f64,
    /// `c^l_ref`.
    pub ref_logp_l: f64,
    pub len_w: usize,
    pub len_l: usize,
}

impl LossContext {
    pub fn new(logp_w: f64, logp_l: f64, ref_logp_w: f64, ref_logp_l: f64) -> Self {
        Self {
            logp_w,
            logp_l,
            ref_logp_w,
            ref_logp_l,
            len_w: 1,
            len_l: 1,
        }
    }

    pub fn with_lengths(mut self, len_w: usize, len_l: usize) -> Self {
        self.len_w = len_w;
        self.len_l = len_l;
        self
    }

    fn check(&self) -> Result<()> {
        let finite = [self.logp_w, self.logp_l, self.ref_logp_w, self.ref_logp_l]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                what: "loss context",
                step: None,
            });
        }
        if self.len_w == 0 || self.len_l == 0 {
            return Err(Error::InvalidArgument("response lengths must be >= 1".into()));
        }
        Ok(())
    }
}

/// The four scalar maps of the unified form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Outer,
    Chosen,
    Rejected,
    Regularizer,
}

/// A fully resolved catalog entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    algorithm: Algorithm,
    hyperparams: BTreeMap<String, f64>,
    beta: f64,
    gamma: f64,
    delta: f64,
    alpha: f64,
    lambda: f64,
    lambda_w: f64,
    lambda_l: f64,
    z_ref: f64,
}

/// Builds a catalog entry, filling unspecified hyperparameters with defaults.
///
/// `beta`, `gamma`, `delta`, `lambda_w` and `lambda_l` must be strictly positive,
/// `lambda` non-negative, and all values finite. Keys the algorithm does not read
/// are rejected.
pub fn make_loss_spec(name: &str, hyperparams: &BTreeMap<String, f64>) -> Result<LossSpec> {
    let algorithm: Algorithm = name.parse()?;
    let mut resolved: BTreeMap<String, f64> = algorithm.defaults().iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (key, &value) in hyperparams {
        if !resolved.contains_key(key) {
            return Err(Error::UnexpectedHyperparameter {
                algorithm: algorithm.name().into(),
                name: key.clone(),
            });
        }
        resolved.insert(key.clone(), value);
    }
    for (key, &value) in &resolved {
        let constraint = match key.as_str() {
            "beta" | "gamma" | "delta" | "lambda_w" | "lambda_l" => (value > 0.0, "must be > 0"),
            "lambda" => (value >= 0.0, "must be >= 0"),
            _ => (true, ""),
        };
        if !value.is_finite() || !constraint.0 {
            return Err(Error::Constraint {
                name: key.clone(),
                value,
                constraint: if value.is_finite() {
                    constraint.1
                } else {
                    "must be finite"
                },
            });
        }
    }
    let get = |k: &str| resolved.get(k).copied().unwrap_or(0.0);
    Ok(LossSpec {
        algorithm,
        beta: get("beta"),
        gamma: get("gamma"),
        delta: get("delta"),
        alpha: get("alpha"),
        lambda: get("lambda"),
        lambda_w: get("lambda_w"),
        lambda_l: get("lambda_l"),
        z_ref: get("z_ref"),
        hyperparams: resolved,
    })
}

impl LossSpec {
    /// Shorthand for a catalog entry with default hyperparameters.
    pub fn default_for(algorithm: Algorithm) -> Self {
        make_loss_spec(algorithm.name(), &BTreeMap::new()).expect("catalog defaults are valid")
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn hyperparams(&self) -> &BTreeMap<String, f64> {
        &self.hyperparams
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn to_config(&self) -> LossConfig {
        LossConfig {
            name: self.algorithm.name().to_string(),
            hyperparams: self.hyperparams.clone(),
        }
    }

    /// Value and derivative of one of the four maps at `x`.
    ///
    /// The outer map takes the margin; the others take a log-probability.
    /// Kinks: `min(0, ·)` uses derivative 1 at the kink, DPOP's hinge uses 0.
    pub fn eval(&self, component: Component, x: f64, ctx: &LossContext) -> (f64, f64) {
        use Algorithm::*;
        let lw = ctx.len_w as f64;
        let ll = ctx.len_l as f64;
        let c_ref = ctx.ref_logp_w - ctx.ref_logp_l;
        match component {
            Component::Outer => match self.algorithm {
                Dpo | Dpop => sigmoid_branch(x - self.beta * c_ref),
                Rdpo => sigmoid_branch(x - self.beta * c_ref - self.alpha * (lw - ll)),
                Simpo => sigmoid_branch(x - self.gamma),
                Cpo => sigmoid_branch(x),
                Ipo => {
                    let c_ref_norm = ctx.ref_logp_w / lw - ctx.ref_logp_l / ll;
                    let r = x - (c_ref_norm + 1.0 / (2.0 * self.beta));
                    (-r * r, -2.0 * r)
                }
                Rrhf => min_zero(x),
                Slichf => min_zero(x - self.delta),
                Kto | Sppo => (x, 1.0),
            },
            Component::Chosen => match self.algorithm {
                Dpo | Rdpo | Cpo => (self.beta * x, self.beta),
                Simpo => (self.beta * x / lw, self.beta / lw),
                Ipo | Rrhf => (x / lw, 1.0 / lw),
                Slichf => (x, 1.0),
                Dpop => {
                    let gap = ctx.ref_logp_w - x;
                    if gap > 0.0 {
                        (self.beta * x - self.lambda * gap, self.beta + self.lambda)
                    } else {
                        (self.beta * x, self.beta)
                    }
                }
                Kto => {
                    let s = sigmoid(self.beta * x - (ctx.ref_logp_w + self.z_ref));
                    (self.lambda_w * s, self.lambda_w * self.beta * s * (1.0 - s))
                }
                Sppo => {
                    let r = x - 1.0 / self.beta;
                    (-r * r, -2.0 * r)
                }
            },
            Component::Rejected => match self.algorithm {
                Dpo | Rdpo | Cpo | Dpop => (self.beta * x, self.beta),
                Simpo => (self.beta * x / ll, self.beta / ll),
                Ipo | Rrhf => (x / ll, 1.0 / ll),
                Slichf => (x, 1.0),
                Kto => {
                    let s = sigmoid((ctx.ref_logp_l + self.z_ref) - x);
                    (self.lambda_l * s, -self.lambda_l * s * (1.0 - s))
                }
                Sppo => {
                    let r = x + 1.0 / self.beta;
                    (r * r, 2.0 * r)
                }
            },
            Component::Regularizer => match self.algorithm {
                Rrhf | Slichf | Cpo => (self.lambda * x, self.lambda),
                _ => (0.0, 0.0),
            },
        }
    }

    /// `g_w(logp_w) - g_l(logp_l)`.
    pub fn margin(&self, ctx: &LossContext) -> f64 {
        self.eval(Component::Chosen, ctx.logp_w, ctx).0 - self.eval(Component::Rejected, ctx.logp_l, ctx).0
    }

    /// The minimization objective for one triple.
    pub fn loss_value(&self, ctx: &LossContext) -> Result<f64> {
        ctx.check()?;
        let (f, _) = self.eval(Component::Outer, self.margin(ctx), ctx);
        let (r, _) = self.eval(Component::Regularizer, ctx.logp_w, ctx);
        let loss = -(f + r);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite {
                what: "loss value",
                step: None,
            })
        }
    }

    /// The coefficients `(d_w, d_l)` of the gradient decomposition.
    pub fn dw_dl(&self, ctx: &LossContext) -> (f64, f64) {
        let (_, f_prime) = self.eval(Component::Outer, self.margin(ctx), ctx);
        let (_, gw_prime) = self.eval(Component::Chosen, ctx.logp_w, ctx);
        let (_, gl_prime) = self.eval(Component::Rejected, ctx.logp_l, ctx);
        let (_, r_prime) = self.eval(Component::Regularizer, ctx.logp_w, ctx);
        (f_prime * gw_prime + r_prime, f_prime * gl_prime)
    }

    /// Loss gradient `-(d_w * grad_w - d_l * grad_l)`.
    pub fn unified_gradient(
        &self,
        ctx: &LossContext,
        grad_w: &GradientVector,
        grad_l: &GradientVector,
    ) -> Result<GradientVector> {
        grad_w.check_same_shape(grad_l)?;
        let (d_w, d_l) = self.dw_dl(ctx);
        let mut out = grad_l.scaled(d_l);
        out.axpy(-d_w, grad_w)?;
        Ok(out)
    }

    /// One line describing the entry, in catalog column order.
    pub fn describe(&self) -> String {
        let [f, gw, gl, r] = self.algorithm.shapes();
        let params: Vec<String> = self.hyperparams.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!(
            "{:<7} f(a)={f}  g_w(a)={gw}  g_l(a)={gl}  R(a)={r}  [{}]",
            self.algorithm.name(),
            params.join(", ")
        )
    }
}

fn sigmoid_branch(z: f64) -> (f64, f64) {
    (log_sigmoid(z), sigmoid(-z))
}

fn min_zero(z: f64) -> (f64, f64) {
    if z <= 0.0 {
        (z, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// One line per catalog entry with its default hyperparameters.
pub fn list_catalog() -> String {
    let mut out = String::new();
    for algorithm in Algorithm::ALL {
        out.push_str(&LossSpec::default_for(algorithm).describe());
        out.push('\n');
    }
    out
}
