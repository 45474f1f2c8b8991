//! Executable checks of the closed-form gradient results on the two toy setups.
//!
//! * single-token responses under a model uniform on `M` tokens: exact inner
//!   product `−‖h‖²/M` and squared norms `(M−1)/M ‖h‖²`, and one DPO step
//!   moving the two log-probabilities apart;
//! * responses differing only in the last token: negative last-token inner
//!   product and the last-token conditionals moving apart;
//! * edit-distance-1 responses on the learnable-logits model: per-position
//!   first-order changes before, at and after the differing position, and the
//!   effect of suffix length.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_edit1_triple, build_last_token_triple, build_single_token_triple};
use crate::diag::{check_conditions, TokenHeatmap};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossContext, LossSpec};
use crate::model::{Branch, HiddenProvider, LanguageModel, LinearHeadLM, LogitsLM};
use crate::numeric::{norm_sq, pairwise_sum};

/// Relative tolerance for claims that are exact in real arithmetic.
pub const EXACT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimKind {
    /// `|computed − expected| ≤ tolerance`.
    Equality,
    Positive,
    Negative,
    NonNegative,
    NonPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    pub kind: ClaimKind,
    pub computed: f64,
    /// For sign claims, the boundary value 0.
    pub expected: f64,
    /// Absolute tolerance actually applied (0 for sign claims).
    pub tolerance: f64,
    pub pass: bool,
}

impl Claim {
    pub fn equal(text: impl Into<String>, computed: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            text: text.into(),
            kind: ClaimKind::Equality,
            computed,
            expected,
            tolerance,
            pass: (computed - expected).abs() <= tolerance,
        }
    }

    /// Equality within `rel · |expected|`.
    pub fn relative(text: impl Into<String>, computed: f64, expected: f64, rel: f64) -> Self {
        Self::equal(text, computed, expected, rel * expected.abs())
    }

    pub fn sign(text: impl Into<String>, computed: f64, kind: ClaimKind) -> Self {
        let pass = match kind {
            ClaimKind::Positive => computed > 0.0,
            ClaimKind::Negative => computed < 0.0,
            ClaimKind::NonNegative => computed >= 0.0,
            ClaimKind::NonPositive => computed <= 0.0,
            ClaimKind::Equality => panic!("use Claim::equal for equality claims"),
        };
        Self {
            text: text.into(),
            kind,
            computed,
            expected: 0.0,
            tolerance: 0.0,
            pass,
        }
    }

    fn truth(text: impl Into<String>, holds: bool) -> Self {
        Self::sign(text, if holds { 1.0 } else { -1.0 }, ClaimKind::Positive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub theorem: String,
    pub claims: Vec<Claim>,
    /// Quantities reported without being asserted.
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl TheoremReport {
    fn new(theorem: &str) -> Self {
        Self {
            theorem: theorem.to_string(),
            claims: Vec::new(),
            values: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.claims.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Claim> {
        self.claims.iter().filter(|c| !c.pass)
    }

    /// Plain-text pass/fail table.
    pub fn render(&self) -> String {
        let mut out = format!("{}: {}\n", self.theorem, if self.pass() { "PASS" } else { "FAIL" });
        for c in &self.claims {
            out.push_str(&format!(
                "  [{}] {}: computed {:.6e}, expected {:?} {:.6e} (tol {:.1e})\n",
                if c.pass { "pass" } else { "FAIL" },
                c.text,
                c.computed,
                c.kind,
                c.expected,
                c.tolerance
            ));
        }
        for (k, v) in &self.values {
            out.push_str(&format!("  {k} = {v:.6e}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("  note: {n}\n"));
        }
        out
    }
}

fn dpo(beta: f64) -> Result<LossSpec> {
    LossConfig::new("dpo").with("beta", beta).build()
}

fn support_tokens(m: usize, v: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut tokens = sample(&mut rng, v, m).into_vec();
    tokens.sort_unstable();
    tokens
}

/// Step size used for the one-step sign checks.
pub const SIGN_CHECK_ETA: f64 = 0.1;

/// Single-token responses on a linear-head model with unit-norm hidden states
/// and probability exactly `1/M` on `M` tokens.
pub fn verify_theorem1(m: usize, v: usize, d: usize, seed: u64) -> Result<TheoremReport> {
    if m < 2 || m > v {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= M <= V, got M = {m}, V = {v}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("hidden width must be positive".into()));
    }
    let tokens = support_tokens(m, v, seed);
    let model = LinearHeadLM::new(v, d, HiddenProvider::unit(seed)).with_support(&tokens)?;
    let triple = build_single_token_triple(&tokens, v, 8, seed)?;
    let h2 = norm_sq(&model.hidden_state(&triple.prompt, &triple.chosen, 0));
    let gw = model.grad_logprob(&triple.prompt, &triple.chosen)?;
    let gl = model.grad_logprob(&triple.prompt, &triple.rejected)?;
    let mf = m as f64;

    let mut report = TheoremReport::new("theorem1");
    report.values.insert("h_norm_sq".into(), h2);
    report.values.insert("M".into(), mf);
    let inner = gw.dot(&gl)?;
    report.claims.push(Claim::relative(
        "inner product = -|h|^2/M",
        inner,
        -h2 / mf,
        EXACT_TOLERANCE,
    ));
    let expected_norm = (mf - 1.0) / mf * h2;
    report.claims.push(Claim::relative(
        "|grad logp_w|^2 = (M-1)/M |h|^2",
        gw.norm_sq(),
        expected_norm,
        EXACT_TOLERANCE,
    ));
    report.claims.push(Claim::relative(
        "|grad logp_l|^2 = (M-1)/M |h|^2",
        gl.norm_sq(),
        expected_norm,
        EXACT_TOLERANCE,
    ));

    let spec = dpo(0.1)?;
    let ctx = LossContext::new(
        model.logprob(&triple.prompt, &triple.chosen)?,
        model.logprob(&triple.prompt, &triple.rejected)?,
        -mf.ln(),
        -mf.ln(),
    );
    let (d_w, d_l) = spec.dw_dl(&ctx);
    let (chosen_cond, rejected_cond) = check_conditions(d_w, d_l, gw.norm_sq(), gl.norm_sq(), inner);
    report.claims.push(Claim::truth("chosen condition holds", chosen_cond));
    report
        .claims
        .push(Claim::truth("rejected condition holds", rejected_cond));

    let next = model.apply_step(&spec.unified_gradient(&ctx, &gw, &gl)?, SIGN_CHECK_ETA)?;
    let dw = next.logprob(&triple.prompt, &triple.chosen)? - ctx.logp_w;
    let dl = next.logprob(&triple.prompt, &triple.rejected)? - ctx.logp_l;
    report
        .claims
        .push(Claim::sign("one DPO step raises logp_w", dw, ClaimKind::Positive));
    report
        .claims
        .push(Claim::sign("one DPO step lowers logp_l", dl, ClaimKind::Negative));
    Ok(report)
}

/// Length-`L` responses sharing their first `L − 1` tokens, under a linear-head
/// model uniform on `M` tokens at every position.
pub fn verify_corollary1(len: usize, m: usize, v: usize, d: usize, seed: u64) -> Result<TheoremReport> {
    if len < 2 {
        return Err(Error::InvalidArgument(format!("need L >= 2, got {len}")));
    }
    if m < 2 || m > v || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= M <= V and d >= 1, got M = {m}, V = {v}, d = {d}"
        )));
    }
    let tokens = support_tokens(m, v, seed);
    let model = LinearHeadLM::new(v, d, HiddenProvider::unit(seed)).with_support(&tokens)?;
    let triple = build_last_token_triple(len, &tokens, v, 8, seed)?;
    let (x, yw, yl) = (&triple.prompt, &triple.chosen, &triple.rejected);
    let last = len - 1;
    let tw = model.token_grads(x, yw)?;
    let tl = model.token_grads(x, yl)?;
    let h_last = norm_sq(&model.hidden_state(x, yw, last));
    let mf = m as f64;

    let mut report = TheoremReport::new("corollary1");
    let last_inner = tw[last].dot(&tl[last])?;
    report.claims.push(Claim::relative(
        "last-token inner product = -|h_L|^2/M",
        last_inner,
        -h_last / mf,
        EXACT_TOLERANCE,
    ));
    report.claims.push(Claim::sign(
        "last-token inner product < 0",
        last_inner,
        ClaimKind::Negative,
    ));

    // Sentence-level inner product against the exhaustive token-pair sum.
    let gw = model.grad_logprob(x, yw)?;
    let gl = model.grad_logprob(x, yl)?;
    let sentence = gw.dot(&gl)?;
    let mut pairs = Vec::with_capacity(len * len);
    for a in &tw {
        for b in &tl {
            pairs.push(a.dot(b)?);
        }
    }
    let brute = pairwise_sum(&pairs);
    report.claims.push(Claim::equal(
        "sentence inner product = sum of token-pair inner products",
        sentence,
        brute,
        1e-9 * brute.abs().max(1.0),
    ));
    let heat = TokenHeatmap::from_token_grads(&tw, &tl)?;
    report.claims.push(Claim::equal(
        "heatmap weighted sum = sentence inner product",
        heat.weighted_sum(),
        sentence,
        1e-9 * sentence.abs().max(1.0),
    ));
    // Σ_{i<L} <a_i, b_w − b_l>: shared-prefix gradients against the last-token difference.
    let mut diff = tw[last].clone();
    diff.axpy(-1.0, &tl[last])?;
    let cross: Vec<f64> = tw[..last].iter().map(|a| a.dot(&diff)).collect::<Result<_>>()?;
    report.values.insert("sentence_inner".into(), sentence);
    report.values.insert("cross_term".into(), pairwise_sum(&cross));
    report.values.insert("last_h_norm_sq".into(), h_last);
    report
        .notes
        .push("the sign of the sentence-level inner product depends on the cross term and is not asserted".into());

    let spec = dpo(0.1)?;
    let (lw, ll) = (model.logprob(x, yw)?, model.logprob(x, yl)?);
    let ctx = LossContext::new(lw, ll, lw, ll).with_lengths(len, len);
    let next = model.apply_step(&spec.unified_gradient(&ctx, &gw, &gl)?, SIGN_CHECK_ETA)?;
    let before_w = model.token_logprobs(x, yw)?[last];
    let before_l = model.token_logprobs(x, yl)?[last];
    let dw = next.token_logprobs(x, yw)?[last] - before_w;
    let dl = next.token_logprobs(x, yl)?[last] - before_l;
    report.claims.push(Claim::sign(
        "last-token chosen conditional rises",
        dw,
        ClaimKind::Positive,
    ));
    report.claims.push(Claim::sign(
        "last-token rejected conditional falls",
        dl,
        ClaimKind::Negative,
    ));
    Ok(report)
}

/// Probability rows for the learnable-logits model: rows shared up to and
/// including the differing position, then one row per branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Rows {
    pub shared: Vec<Vec<f64>>,
    pub chosen_after: Vec<Vec<f64>>,
    pub rejected_after: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Params {
    /// Response length `L`.
    pub len: usize,
    /// 1-based differing position, `1 ≤ m < L`.
    pub m: usize,
    pub vocab: usize,
    #[serde(default)]
    pub rows: Option<Theorem2Rows>,
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Theorem2Params {
    fn default() -> Self {
        Self {
            len: 8,
            m: 3,
            vocab: 8,
            rows: None,
            eta: 1e-4,
            seed: 0,
        }
    }
}

/// `1 + (s[k*] − s[j*])` for the shared row at the differing position, with
/// `j*` the chosen and `k*` the rejected token.
pub fn at_m_coefficient(row: &[f64], chosen: usize, rejected: usize) -> f64 {
    1.0 + (row[rejected] - row[chosen])
}

/// `(1 − s_w[j*])(s_l[j*] − s_w[j*]) − Σ_{j≠j*} s_w[j](s_l[j] − s_w[j])`.
pub fn after_m_coefficient(s_w: &[f64], s_l: &[f64], token: usize) -> f64 {
    let rest: Vec<f64> = (0..s_w.len())
        .filter(|&j| j != token)
        .map(|j| s_w[j] * (s_l[j] - s_w[j]))
        .collect();
    (1.0 - s_w[token]) * (s_l[token] - s_w[token]) - pairwise_sum(&rest)
}

fn random_row(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..v).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random rows satisfying the monotone assumption after the differing position:
/// the chosen branch is the rejected row with mass moved onto the shared token.
pub fn random_theorem2_rows(chosen: &[usize], split: usize, v: usize, seed: u64) -> Theorem2Rows {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = (0..=split).map(|_| random_row(&mut rng, v)).collect();
    let mut chosen_after = Vec::new();
    let mut rejected_after = Vec::new();
    for &token in &chosen[split + 1..] {
        let s_l = random_row(&mut rng, v);
        let t: f64 = rng.gen_range(0.0..0.6);
        let s_w: Vec<f64> = s_l
            .iter()
            .enumerate()
            .map(|(j, &p)| (1.0 - t) * p + if j == token { t } else { 0.0 })
            .collect();
        chosen_after.push(s_w);
        rejected_after.push(s_l);
    }
    Theorem2Rows {
        shared,
        chosen_after,
        rejected_after,
    }
}

fn check_assumption(rows: &Theorem2Rows, chosen: &[usize], split: usize) -> Result<()> {
    for (k, (s_w, s_l)) in rows.chosen_after.iter().zip(&rows.rejected_after).enumerate() {
        let token = chosen[split + 1 + k];
        for j in 0..s_w.len() {
            let ok = if j == token { s_w[j] >= s_l[j] } else { s_w[j] <= s_l[j] };
            if !ok {
                return Err(Error::Assumption(format!(
                    "row {} token {j}: chosen-branch probability {} vs rejected-branch {}",
                    split + 1 + k,
                    s_w[j],
                    s_l[j]
                )));
            }
        }
    }
    Ok(())
}

/// Per-position first-order predictions (already scaled by `η·C`) and observed
/// changes of the chosen token log-probabilities after one DPO step.
struct StepComparison {
    predicted: Vec<f64>,
    observed: Vec<f64>,
    /// `1 + (s[j*] − s[k*])`, the opposite-sign variant at the differing position.
    alternative_at_m: f64,
}

fn compare_step(
    model: &LogitsLM,
    chosen: &[usize],
    rejected: &[usize],
    split: usize,
    eta: f64,
) -> Result<StepComparison> {
    // Reference = current model and β = 1, so C = σ(0) / 1 = 1/2.
    let spec = dpo(1.0)?;
    let (lw, ll) = (model.logprob(&[], chosen)?, model.logprob(&[], rejected)?);
    let ctx = LossContext::new(lw, ll, lw, ll).with_lengths(chosen.len(), rejected.len());
    let (c, _) = spec.dw_dl(&ctx);
    let gw = model.grad_logprob(&[], chosen)?;
    let gl = model.grad_logprob(&[], rejected)?;
    let next = model.apply_step(&spec.unified_gradient(&ctx, &gw, &gl)?, eta)?;
    let before = model.token_logprobs(&[], chosen)?;
    let after = next.token_logprobs(&[], chosen)?;
    let observed: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();

    let shared_row = model.row(Branch::Chosen, split);
    let predicted = (0..chosen.len())
        .map(|i| {
            let coeff = match i.cmp(&split) {
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => at_m_coefficient(&shared_row, chosen[split], rejected[split]),
                std::cmp::Ordering::Greater => after_m_coefficient(
                    &model.row(Branch::Chosen, i),
                    &model.row(Branch::Rejected, i),
                    chosen[i],
                ),
            };
            eta * c * coeff
        })
        .collect();
    let alternative_at_m = 1.0 + (shared_row[chosen[split]] - shared_row[rejected[split]]);
    Ok(StepComparison {
        predicted,
        observed,
        alternative_at_m: eta * c * alternative_at_m,
    })
}

/// One DPO step (β = 1, reference equal to the current model, so `C = 1/2`) on
/// the learnable-logits model for an edit-distance-1 pair.
///
/// Per-position claims compare the observed change of each chosen-token
/// log-probability with `η·C` times the closed form, within `10η²`. A suffix
/// sweep over `L − m ∈ {1, …, 10}` with fixed random rows checks that the total
/// change of `logp_w` does not increase as the shared suffix grows.
pub fn verify_theorem2(params: &Theorem2Params) -> Result<TheoremReport> {
    let Theorem2Params {
        len,
        m,
        vocab,
        eta,
        seed,
        ..
    } = *params;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let triple = build_edit1_triple(len, m, vocab, seed)?;
    let (chosen, rejected) = (&triple.chosen, &triple.rejected);
    let split = m - 1;
    let rows = match &params.rows {
        Some(rows) => {
            check_assumption(rows, chosen, split)?;
            rows.clone()
        }
        None => random_theorem2_rows(chosen, split, vocab, seed),
    };
    let model = LogitsLM::from_rows(chosen, rejected, &rows.shared, &rows.chosen_after, &rows.rejected_after)?;
    let tol = 10.0 * eta * eta;

    let mut report = TheoremReport::new("theorem2");
    report.values.insert("eta".into(), eta);
    report.values.insert("tolerance".into(), tol);
    let cmp = compare_step(&model, chosen, rejected, split, eta)?;
    for (i, (&pred, &obs)) in cmp.predicted.iter().zip(&cmp.observed).enumerate() {
        let (label, sign) = match i.cmp(&split) {
            std::cmp::Ordering::Less => ("before m", None),
            std::cmp::Ordering::Equal => ("at m", Some(ClaimKind::NonNegative)),
            std::cmp::Ordering::Greater => ("after m", Some(ClaimKind::NonPositive)),
        };
        report.claims.push(Claim::equal(
            format!("position {} ({label}) observed change", i + 1),
            obs,
            pred,
            tol,
        ));
        if let Some(kind) = sign {
            report.claims.push(Claim::sign(
                format!("position {} ({label}) closed form sign", i + 1),
                pred,
                kind,
            ));
        }
    }
    let at_m_obs = cmp.observed[split];
    let err_main = (at_m_obs - cmp.predicted[split]).abs();
    let err_alt = (at_m_obs - cmp.alternative_at_m).abs();
    report.values.insert("at_m_observed".into(), at_m_obs);
    report
        .values
        .insert("at_m_rejected_minus_chosen".into(), cmp.predicted[split]);
    report
        .values
        .insert("at_m_chosen_minus_rejected".into(), cmp.alternative_at_m);
    report.notes.push(format!(
        "at the differing position the observed change matches 1 + (s[k*] - s[j*]) (rejected minus chosen probability, error {err_main:.2e}); the variant 1 + (s[j*] - s[k*]) is off by {err_alt:.2e}"
    ));

    // Suffix sweep with fixed per-position rows.
    let long = build_edit1_triple(m + 10, m, vocab, seed)?;
    let sweep_rows = random_theorem2_rows(&long.chosen, split, vocab, seed.wrapping_add(1));
    let mut first_order = Vec::new();
    let mut observed = Vec::new();
    for suffix in 1..=10 {
        let l = m + suffix;
        let sub = LogitsLM::from_rows(
            &long.chosen[..l],
            &long.rejected[..l],
            &sweep_rows.shared,
            &sweep_rows.chosen_after[..suffix],
            &sweep_rows.rejected_after[..suffix],
        )?;
        let cmp = compare_step(&sub, &long.chosen[..l], &long.rejected[..l], split, eta)?;
        first_order.push(pairwise_sum(&cmp.predicted));
        observed.push(pairwise_sum(&cmp.observed));
        report.values.insert(
            format!("sweep_suffix_{suffix:02}_first_order"),
            *first_order.last().unwrap(),
        );
        report
            .values
            .insert(format!("sweep_suffix_{suffix:02}_observed"), *observed.last().unwrap());
    }
    let worst_first = first_order
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    report.claims.push(Claim::sign(
        "suffix sweep: first-order total change of logp_w is non-increasing",
        worst_first,
        ClaimKind::NonPositive,
    ));
    let worst_obs = observed
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    report.claims.push(Claim::sign(
        "suffix sweep: observed total change of logp_w is non-increasing (slack 10 eta^2 per step)",
        worst_obs - tol,
        ClaimKind::NonPositive,
    ));
    Ok(report)
}
