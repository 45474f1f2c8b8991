//! Training loops: plain margin-loss descent, normalized updates and jointly
//! learned sparse token masks.

mod npo;
mod sparse;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use npo::{npo_direction, npo_direction_scaled, npo_scale, NpoDirection, DEFAULT_EPSILON};
pub use sparse::{sparsepo_grads, sparsepo_loss, sparsepo_step, MaskState, SparseGrads, SparseParams};

use crate::data::PreferenceTriple;
use crate::diag::{classify_case, loss_context, Case, NORM_FLOOR};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossSpec};
use crate::model::{GradientVector, LanguageModel};
use crate::numeric::{cosine, pairwise_sum};

/// First line of every trace CSV.
pub const TRACE_SCHEMA: &str = "# entangle-trace v1";
pub const TRACE_HEADER: [&str; 11] = [
    "step", "logp_w", "logp_l", "margin", "norm_w", "norm_l", "cosine", "d_w", "d_l", "case", "loss",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Vanilla,
    Npo,
    Sparsepo,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Npo => "npo",
            Mode::Sparsepo => "sparsepo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_epsilon")]
    pub npo_epsilon: f64,
    #[serde(default)]
    pub sparsepo: SparseParams,
}

fn default_loss() -> LossConfig {
    LossConfig::new("dpo")
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl TrainConfig {
    pub fn new(loss: LossConfig, eta: f64, steps: usize) -> Self {
        Self {
            eta,
            steps,
            seed: 0,
            loss,
            mode: Mode::Vanilla,
            npo_epsilon: DEFAULT_EPSILON,
            sparsepo: SparseParams::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<LossSpec> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Constraint {
                name: "eta".into(),
                value: self.eta,
                constraint: "finite and > 0",
            });
        }
        if !(self.npo_epsilon > 0.0 && self.npo_epsilon.is_finite()) {
            return Err(Error::Constraint {
                name: "npo_epsilon".into(),
                value: self.npo_epsilon,
                constraint: "finite and > 0",
            });
        }
        self.sparsepo.validate()?;
        self.loss.build()
    }
}

/// One row of a training trace, describing the state before the step with the
/// same index (the last row is the final state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub logp_w: f64,
    pub logp_l: f64,
    pub margin: f64,
    pub norm_w: f64,
    pub norm_l: f64,
    pub cosine: f64,
    pub d_w: f64,
    pub d_l: f64,
    pub case: Case,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV with a schema comment line and a fixed header. Floats use the
    /// shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_SCHEMA}")?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(TRACE_HEADER)?;
        for r in &self.rows {
            writer.write_record([
                r.step.to_string(),
                r.logp_w.to_string(),
                r.logp_l.to_string(),
                r.margin.to_string(),
                r.norm_w.to_string(),
                r.norm_l.to_string(),
                r.cosine.to_string(),
                r.d_w.to_string(),
                r.d_l.to_string(),
                r.case.label().to_string(),
                r.loss.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub trace: TrainTrace,
    /// Final mask confidences per triple (sparse mode only).
    pub masks: Option<Vec<MaskState>>,
}

/// Per-triple quantities at the current parameters.
struct Probe {
    grad_w: GradientVector,
    grad_l: GradientVector,
    logp_w: f64,
    logp_l: f64,
    margin: f64,
    loss: f64,
    d_w: f64,
    d_l: f64,
    /// This triple's contribution to the descent direction.
    direction: GradientVector,
}

fn non_finite(what: &'static str, step: usize) -> Error {
    Error::NonFinite { what, step: Some(step) }
}

fn probe<M: LanguageModel>(
    model: &M,
    reference: &M,
    triple: &PreferenceTriple,
    spec: &LossSpec,
    config: &TrainConfig,
    masks: Option<&MaskState>,
) -> Result<Probe> {
    let ctx = loss_context(model, triple)?;
    let grad_w = model.grad_logprob(&triple.prompt, &triple.chosen)?;
    let grad_l = model.grad_logprob(&triple.prompt, &triple.rejected)?;
    let margin = spec.margin(&ctx);
    let (loss, d_w, d_l, direction) = match config.mode {
        Mode::Vanilla => {
            let (d_w, d_l) = spec.dw_dl(&ctx);
            (
                spec.loss_value(&ctx)?,
                d_w,
                d_l,
                spec.unified_gradient(&ctx, &grad_w, &grad_l)?,
            )
        }
        Mode::Npo => {
            let out = npo_direction(spec, &ctx, &grad_w, &grad_l, config.npo_epsilon)?;
            // Effective coefficients of the normalized update.
            let d_w = out.c / grad_w.norm().max(config.npo_epsilon);
            let d_l = out.c / grad_l.norm().max(config.npo_epsilon);
            (spec.loss_value(&ctx)?, d_w, d_l, out.direction)
        }
        Mode::Sparsepo => {
            let masks = masks.expect("sparse mode carries masks");
            let g = sparsepo_grads(model, triple, masks, reference, &config.sparsepo)?;
            let s = crate::numeric::sigmoid(-g.z);
            (g.loss, s, s, g.theta)
        }
    };
    Ok(Probe {
        grad_w,
        grad_l,
        logp_w: ctx.logp_w,
        logp_l: ctx.logp_l,
        margin,
        loss,
        d_w,
        d_l,
        direction,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    pairwise_sum(&v) / v.len() as f64
}

/// Runs `config.steps` descent steps on the mean loss over `triples`.
///
/// Triples without reference log-probabilities get them from the initial model,
/// which also serves as the reference for sparse mode. Each trace row carries
/// batch means; the case label comes from the signs of the first-order changes
/// of the mean chosen and rejected log-probabilities under the actual update.
/// Norm and cosine columns are means of per-triple values.
pub fn train<M: LanguageModel>(
    model: &M,
    triples: &[PreferenceTriple],
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    let spec = config.validate()?;
    if triples.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one triple".into()));
    }
    let reference = model.clone();
    let triples: Vec<PreferenceTriple> = triples
        .iter()
        .map(|t| match t.reference {
            Some(_) => Ok(t.clone()),
            None => t.clone().with_reference(&reference),
        })
        .collect::<Result<_>>()?;
    let mut masks: Option<Vec<MaskState>> = (config.mode == Mode::Sparsepo).then(|| {
        triples
            .iter()
            .map(|t| MaskState::new(t, config.sparsepo.init_u))
            .collect()
    });

    let n = triples.len() as f64;
    let mut current = model.clone();
    let mut rows = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let probes: Vec<Probe> = triples
            .iter()
            .enumerate()
            .map(|(i, t)| probe(&current, &reference, t, &spec, config, masks.as_ref().map(|m| &m[i])))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NonFinite { what, .. } => non_finite(what, step),
                other => other,
            })?;
        let shape = current.shape();
        let direction = GradientVector::sum(shape.clone(), probes.iter().map(|p| &p.direction))?.scaled(1.0 / n);
        let loss = mean(probes.iter().map(|p| p.loss));
        if !loss.is_finite() {
            return Err(non_finite("loss", step));
        }
        if !direction.is_finite() {
            return Err(non_finite("update direction", step));
        }
        let mean_w = GradientVector::sum(shape.clone(), probes.iter().map(|p| &p.grad_w))?.scaled(1.0 / n);
        let mean_l = GradientVector::sum(shape, probes.iter().map(|p| &p.grad_l))?.scaled(1.0 / n);
        let pred_w = -mean_w.dot(&direction)?;
        let pred_l = -mean_l.dot(&direction)?;
        let per_triple: Vec<(f64, f64, f64)> = probes
            .iter()
            .map(|p| {
                let (nw, nl) = (p.grad_w.norm_sq(), p.grad_l.norm_sq());
                let ip = p.grad_w.dot(&p.grad_l).unwrap_or(0.0);
                (nw.sqrt(), nl.sqrt(), cosine(ip, nw, nl, NORM_FLOOR).0)
            })
            .collect();
        rows.push(TraceRow {
            step,
            logp_w: mean(probes.iter().map(|p| p.logp_w)),
            logp_l: mean(probes.iter().map(|p| p.logp_l)),
            margin: mean(probes.iter().map(|p| p.margin)),
            norm_w: mean(per_triple.iter().map(|t| t.0)),
            norm_l: mean(per_triple.iter().map(|t| t.1)),
            cosine: mean(per_triple.iter().map(|t| t.2)),
            d_w: mean(probes.iter().map(|p| p.d_w)),
            d_l: mean(probes.iter().map(|p| p.d_l)),
            case: classify_case(pred_w >= 0.0, pred_l <= 0.0),
            loss,
        });
        if step == config.steps {
            break;
        }
        if let Some(masks) = masks.as_mut() {
            // Confidences are updated from gradients at the pre-step parameters.
            let lr = config.sparsepo.mask_lr.unwrap_or(config.eta) / n;
            for (t, m) in triples.iter().zip(masks.iter_mut()) {
                let g = sparsepo_grads(&current, t, m, &reference, &config.sparsepo)?;
                for (u, d) in m.u_w.iter_mut().zip(&g.u_w) {
                    *u -= lr * d;
                }
                for (u, d) in m.u_l.iter_mut().zip(&g.u_l) {
                    *u -= lr * d;
                }
                if !m.u_w.iter().chain(&m.u_l).all(|u| u.is_finite()) {
                    return Err(non_finite("mask confidences", step));
                }
            }
        }
        current = current.apply_step(&direction, config.eta)?;
    }
    Ok(TrainOutcome {
        model: current,
        trace: TrainTrace { rows },
        masks,
    })
}

/// Which responses a supervised warm-up fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTarget {
    #[default]
    Chosen,
    Both,
}

/// Supervised warm-up: `steps` gradient-ascent steps of size `eta` on the mean
/// log-probability of the selected responses.
pub fn sft_warmup<M: LanguageModel>(
    model: &M,
    triples: &[PreferenceTriple],
    target: SftTarget,
    eta: f64,
    steps: usize,
) -> Result<M> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Constraint {
            name: "sft_eta".into(),
            value: eta,
            constraint: "finite and > 0",
        });
    }
    let responses: Vec<(&[usize], &[usize])> = triples
        .iter()
        .flat_map(|t| {
            let mut v = vec![(t.prompt.as_slice(), t.chosen.as_slice())];
            if target == SftTarget::Both {
                v.push((t.prompt.as_slice(), t.rejected.as_slice()));
            }
            v
        })
        .collect();
    if responses.is_empty() {
        return Err(Error::InvalidArgument("warm-up needs at least one triple".into()));
    }
    let mut current = model.clone();
    for step in 0..steps {
        let grads: Vec<GradientVector> = responses
            .iter()
            .map(|(x, y)| current.grad_logprob(x, y))
            .collect::<Result<_>>()?;
        // Descent on the mean negative log-likelihood.
        let direction = GradientVector::sum(current.shape(), &grads)?.scaled(-1.0 / responses.len() as f64);
        if !direction.is_finite() {
            return Err(non_finite("warm-up gradient", step));
        }
        current = current.apply_step(&direction, eta)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_single_token_triple;
    use crate::model::{HiddenProvider, LinearHeadLM};

    fn single_token_fixture() -> (LinearHeadLM, PreferenceTriple) {
        let tokens = [0, 1, 2, 3];
        let model = LinearHeadLM::new(8, 4, HiddenProvider::unit(1))
            .with_support(&tokens)
            .unwrap();
        (model, build_single_token_triple(&tokens, 8, 3, 1).unwrap())
    }

    #[test]
    fn zero_steps_leaves_model() {
        let (model, triple) = single_token_fixture();
        let out = train(&model, &[triple], &TrainConfig::new(LossConfig::new("dpo"), 0.1, 0)).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.model, model);
    }

    #[test]
    fn csv_has_schema_and_header() {
        let (model, triple) = single_token_fixture();
        let out = train(&model, &[triple], &TrainConfig::new(LossConfig::new("dpo"), 0.1, 3)).unwrap();
        let csv = out.trace.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_SCHEMA));
        assert_eq!(lines.next(), Some(TRACE_HEADER.join(",").as_str()));
        assert_eq!(lines.count(), 4);
        let mut jsonl = Vec::new();
        out.trace.write_jsonl(&mut jsonl).unwrap();
        assert_eq!(jsonl.iter().filter(|&&b| b == b'\n').count(), 4);
    }

    #[test]
    fn rejects_bad_config() {
        let (model, triple) = single_token_fixture();
        let cfg = TrainConfig::new(LossConfig::new("dpo"), 0.0, 3);
        assert!(matches!(
            train(&model, std::slice::from_ref(&triple), &cfg),
            Err(Error::Constraint { .. })
        ));
        let cfg = TrainConfig::new(LossConfig::new("nope"), 0.1, 3);
        assert!(matches!(
            train(&model, &[triple], &cfg),
            Err(Error::UnknownAlgorithm(_))
        ));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"eta": 0.1, "steps": 1, "bogus": 1}"#).is_err());
    }

    #[test]
    fn non_finite_reports_step() {
        let (model, triple) = single_token_fixture();
        // A huge step drives the rejected token's probability to exactly zero.
        let cfg = TrainConfig::new(LossConfig::new("sppo").with("beta", 1.0), 1e6, 50);
        match train(&model, &[triple], &cfg) {
            Err(Error::NonFinite { step: Some(_), .. }) => {}
            other => panic!("expected a non-finite error with a step, got {other:?}"),
        }
    }

    #[test]
    fn modes_are_deterministic() {
        let (model, triple) = single_token_fixture();
        for mode in [Mode::Vanilla, Mode::Npo, Mode::Sparsepo] {
            let cfg = TrainConfig::new(LossConfig::new("dpo"), 0.05, 5).with_mode(mode);
            let a = train(&model, std::slice::from_ref(&triple), &cfg).unwrap();
            let b = train(&model, std::slice::from_ref(&triple), &cfg).unwrap();
            assert_eq!(a.trace.to_csv_string().unwrap(), b.trace.to_csv_string().unwrap());
            assert_eq!(a.masks.is_some(), mode == Mode::Sparsepo);
        }
    }
}
