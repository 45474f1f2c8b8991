//! Acceptance checks, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL` line with its measurements and wall time.

use std::fs;
use std::time::{Duration, Instant};

use entangle_core::data::{build_sentiment_dataset, build_single_token_triple, ReferenceLogps, Style};
use entangle_core::diag::{loss_context, token_heatmap, GradReport};
use entangle_core::experiment::{run, CompareResult, ExperimentConfig};
use entangle_core::model::{central_difference, finite_diff_grad};
use entangle_core::optim::{
    npo_direction, sparsepo_grads, sparsepo_loss, train, MaskState, Mode, SparseParams, TrainConfig, DEFAULT_EPSILON,
};
use entangle_core::theorems::{verify_theorem1, verify_theorem2, Theorem2Params};
use entangle_core::{
    Algorithm, HiddenProvider, LanguageModel, LinearHeadLM, LossConfig, LossContext, LossSpec, PreferenceTriple,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, pass: bool, detail: &str, elapsed: Duration, budget_s: f64) -> bool {
    let secs = elapsed.as_secs_f64();
    let pass = pass && secs < budget_s;
    println!(
        "criterion {n}: {} | {detail} | {secs:.3} s (budget {budget_s} s)",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

/// A random linear-head model with unit-norm hidden states and a random triple
/// with reference log-probabilities near the model's own.
struct Instance {
    model: LinearHeadLM,
    triple: PreferenceTriple,
}

fn random_instance(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> Instance {
    let seed = rng.gen();
    let model = LinearHeadLM::new(vocab, dim, HiddenProvider::unit(seed)).randomized(1.0, seed);
    let prompt: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..vocab)).collect();
    let response =
        |rng: &mut ChaCha8Rng| -> Vec<usize> { (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..vocab)).collect() };
    let (chosen, rejected) = loop {
        let (a, b) = (response(rng), response(rng));
        if a != b {
            break (a, b);
        }
    };
    let mut triple = PreferenceTriple::new(prompt, chosen, rejected, "random").unwrap();
    triple.reference = Some(ReferenceLogps {
        chosen: model.logprob(&triple.prompt, &triple.chosen).unwrap() + rng.gen_range(-2.0..2.0),
        rejected: model.logprob(&triple.prompt, &triple.rejected).unwrap() + rng.gen_range(-2.0..2.0),
    });
    Instance { model, triple }
}

fn logps<M: LanguageModel>(model: &M, t: &PreferenceTriple) -> (f64, f64) {
    (
        model.logprob(&t.prompt, &t.chosen).unwrap(),
        model.logprob(&t.prompt, &t.rejected).unwrap(),
    )
}

#[test]
fn criterion_1_theorem1_exactness() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [2, 4, 8] {
        let report = verify_theorem1(m, 32, 16, m as u64).unwrap();
        let claim = |prefix: &str| {
            report
                .claims
                .iter()
                .find(|c| c.text.starts_with(prefix))
                .unwrap()
                .clone()
        };
        let inner = claim("inner product");
        let nw = claim("|grad logp_w|^2");
        let nl = claim("|grad logp_l|^2");
        let h2 = report.values["h_norm_sq"];
        let ok = inner.pass && nw.pass && nl.pass && (h2 - 1.0).abs() < 1e-12;
        let rel = |c: &entangle_core::theorems::Claim| ((c.computed - c.expected) / c.expected).abs();
        parts.push(format!(
            "M={m}: inner {:.12} (rel {:.1e}), norms rel {:.1e}/{:.1e}",
            inner.computed,
            rel(&inner),
            rel(&nw),
            rel(&nl)
        ));
        pass &= ok;
    }
    assert!(verdict(1, pass, &parts.join("; "), start.elapsed(), 1.0));
}

#[test]
fn criterion_2_theorem1_dynamics() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [2usize, 4, 8] {
        let seed = m as u64;
        let tokens: Vec<usize> = (0..m).map(|i| (i * 5 + 3) % 32).collect();
        let model = LinearHeadLM::new(32, 16, HiddenProvider::unit(seed))
            .with_support(&tokens)
            .unwrap();
        let triple = build_single_token_triple(&tokens, 32, 8, seed).unwrap();
        let (w0, l0) = logps(&model, &triple);
        let uniform = -(m as f64).ln();
        pass &= (w0 - uniform).abs() < 1e-12 && (l0 - uniform).abs() < 1e-12;
        let cfg = TrainConfig::new(LossConfig::new("dpo"), 0.1, 100);
        let trace = train(&model, &[triple], &cfg).unwrap().trace;
        let monotone = trace
            .rows
            .windows(2)
            .all(|p| p[1].logp_w > p[0].logp_w && p[1].logp_l < p[0].logp_l);
        let last = trace.last().unwrap();
        parts.push(format!(
            "M={m}: logp_w {:.4}->{:.4}, logp_l {:.4}->{:.4}, strictly monotone {monotone}",
            w0, last.logp_w, l0, last.logp_l
        ));
        pass &= monotone && trace.len() == 101;
    }
    assert!(verdict(2, pass, &parts.join("; "), start.elapsed(), 1.0));
}

#[test]
fn criterion_3_theorem2_positions_and_suffix_sweep() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let params = Theorem2Params {
            seed,
            ..Theorem2Params::default()
        };
        let report = verify_theorem2(&params).unwrap();
        for c in report.failures() {
            parts.push(format!("seed {seed} failed: {}", c.text));
        }
        let worst = report
            .claims
            .iter()
            .filter(|c| c.tolerance > 0.0)
            .map(|c| (c.computed - c.expected).abs())
            .fold(0.0, f64::max);
        parts.push(format!(
            "seed {seed}: {} claims, max abs dev {worst:.2e}",
            report.claims.len()
        ));
        pass &= report.pass();
    }
    parts.push(format!("tol 10*eta^2 = {:.1e}", 10.0 * 1e-8));
    assert!(verdict(3, pass, &parts.join("; "), start.elapsed(), 5.0));
}

#[test]
fn criterion_4_gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut pass = true;
    for algorithm in Algorithm::ALL {
        let spec = LossSpec::default_for(algorithm);
        let mut max_rel: f64 = 0.0;
        for _ in 0..50 {
            // 5 tokens x 4 hidden dims: 20 parameters.
            let Instance { model, triple } = random_instance(&mut rng, 5, 4);
            let ctx = loss_context(&model, &triple).unwrap();
            let gw = model.grad_logprob(&triple.prompt, &triple.chosen).unwrap();
            let gl = model.grad_logprob(&triple.prompt, &triple.rejected).unwrap();
            let exact = spec.unified_gradient(&ctx, &gw, &gl).unwrap();
            let fd = finite_diff_grad(&model, 1e-5, |m| spec.loss_value(&loss_context(m, &triple)?)).unwrap();
            let rel = exact.relative_error(&fd, 1e-8).unwrap();
            max_rel = max_rel.max(rel);
        }
        pass &= max_rel <= 1e-5;
        worst.push((algorithm.name().to_string(), max_rel));
    }
    let detail = worst
        .iter()
        .map(|(n, r)| format!("{n} {r:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    assert!(verdict(
        4,
        pass,
        &format!("max rel err per algorithm (tol 1e-5): {detail}"),
        start.elapsed(),
        30.0
    ));
}

#[test]
fn criterion_5_case_consistency() {
    let start = Instant::now();
    let eta = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dpo = LossSpec::default_for(Algorithm::Dpo);
    let (mut agree, mut counted, mut ties) = (0usize, 0usize, 0usize);
    let (mut dpo_ok, mut dpo_total) = (0usize, 0usize);
    let mut cases = std::collections::BTreeMap::<&str, usize>::new();
    for i in 0..1000 {
        let algorithm = Algorithm::ALL[i % Algorithm::ALL.len()];
        let spec = LossSpec::default_for(algorithm);
        let (vocab, dim) = (rng.gen_range(4..9), rng.gen_range(2..7));
        let Instance { model, triple } = random_instance(&mut rng, vocab, dim);
        let ctx = loss_context(&model, &triple).unwrap();
        let gw = model.grad_logprob(&triple.prompt, &triple.chosen).unwrap();
        let gl = model.grad_logprob(&triple.prompt, &triple.rejected).unwrap();
        let report = GradReport::from_gradients(&spec, &ctx, &gw, &gl, eta).unwrap();
        let dir = spec.unified_gradient(&ctx, &gw, &gl).unwrap();
        let (w1, l1) = logps(&model.apply_step(&dir, eta).unwrap(), &triple);
        let (dw, dl) = (w1 - ctx.logp_w, l1 - ctx.logp_l);
        // With unit hidden states the second-order remainder of a length-L
        // log-probability is at most η²·L·‖D‖²/2.
        let len = triple.chosen.len().max(triple.rejected.len()) as f64;
        let bound = 0.5 * eta * eta * len * dir.norm_sq();
        *cases.entry(report.case_label.label()).or_default() += 1;
        if report.pred_dw_logp.abs() <= bound || report.pred_dl_logp.abs() <= bound {
            ties += 1;
        } else {
            counted += 1;
            if report.case_label.implied_signs() == (dw > 0.0, dl < 0.0) {
                agree += 1;
            }
        }

        let dpo_dir = dpo.unified_gradient(&ctx, &gw, &gl).unwrap();
        let (w2, l2) = logps(&model.apply_step(&dpo_dir, eta).unwrap(), &triple);
        let after = LossContext::new(w2, l2, ctx.ref_logp_w, ctx.ref_logp_l);
        dpo_total += 1;
        if dpo.margin(&after) - dpo.margin(&ctx) >= 0.0 {
            dpo_ok += 1;
        }
    }
    let rate = agree as f64 / counted.max(1) as f64;
    let pass = rate >= 0.99 && dpo_ok == dpo_total && counted > 0;
    let detail = format!(
        "agreement {agree}/{counted} ({:.2}%), {ties} ties excluded, cases {cases:?}; DPO margin non-decreasing {dpo_ok}/{dpo_total}",
        100.0 * rate
    );
    assert!(verdict(5, pass, &detail, start.elapsed(), 60.0));
}

fn sentiment_run(style: Style, seed: u64) -> entangle_core::TrainTrace {
    let data = build_sentiment_dataset(style, 16, seed).unwrap();
    let model = LinearHeadLM::new(32, 16, HiddenProvider::decayed(seed, 0.5));
    let cfg = TrainConfig::new(LossConfig::new("dpo"), 0.5, 500);
    train(&model, &data, &cfg).unwrap().trace
}

#[test]
fn criterion_6_sentiment_reproduction() {
    let start = Instant::now();
    let seed = 0;
    let single = sentiment_run(Style::SingleToken, seed);
    let short = sentiment_run(Style::ShortSuffix, seed);
    let long = sentiment_run(Style::LongSuffix, seed);
    let (s0, s1) = (single.first().unwrap(), single.last().unwrap());
    let a = s1.cosine < 0.0 && s1.logp_w > s0.logp_w;

    let ordered = long
        .rows
        .iter()
        .zip(&short.rows)
        .zip(&single.rows)
        .filter(|((l, m), s)| !(l.cosine > m.cosine && m.cosine > s.cosine))
        .count();
    let b = ordered == 0;

    let triple = build_sentiment_dataset(Style::PrefixSuffix, 1, seed).unwrap().remove(0);
    let model = LinearHeadLM::new(32, 16, HiddenProvider::decayed(seed, 0.5));
    let heatmap = token_heatmap(&model, &triple).unwrap();
    let diag = heatmap.diagonal();
    let differing = triple.differing_positions();
    let suffix: Vec<f64> = (differing[0] + 1..diag.len()).map(|i| diag[i]).collect();
    let suffix_mean = suffix.iter().sum::<f64>() / suffix.len() as f64;
    let c = differing == [3] && diag[3] < 0.0 && suffix_mean > 0.5;

    let detail = format!(
        "(a) single_token cosine {:.3}->{:.3}, logp_w {:.3}->{:.3}: {a}; \
         (b) long>short>single at {}/{} steps (final {:.3} > {:.3} > {:.3}): {b}; \
         (c) differing diagonal {:.3}, suffix mean {:.3}: {c}",
        s0.cosine,
        s1.cosine,
        s0.logp_w,
        s1.logp_w,
        long.len() - ordered,
        long.len(),
        long.last().unwrap().cosine,
        short.last().unwrap().cosine,
        s1.cosine,
        diag[3],
        suffix_mean
    );
    assert!(verdict(6, a && b && c, &detail, start.elapsed(), 60.0));
}

#[test]
fn criterion_7_npo_guarantee() {
    let start = Instant::now();
    let eta = 1e-4;
    let spec = LossSpec::default_for(Algorithm::Dpo);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut ok, mut counted, mut skipped) = (0usize, 0usize, 0usize);
    let mut min_margin = f64::INFINITY;
    while counted < 1000 {
        let (vocab, dim) = (rng.gen_range(4..9), rng.gen_range(2..7));
        let Instance { model, triple } = random_instance(&mut rng, vocab, dim);
        let ctx = loss_context(&model, &triple).unwrap();
        let gw = model.grad_logprob(&triple.prompt, &triple.chosen).unwrap();
        let gl = model.grad_logprob(&triple.prompt, &triple.rejected).unwrap();
        let cosine = gw.dot(&gl).unwrap() / (gw.norm() * gl.norm());
        if cosine >= 1.0 - 1e-6 {
            skipped += 1;
            continue;
        }
        counted += 1;
        let npo = npo_direction(&spec, &ctx, &gw, &gl, DEFAULT_EPSILON).unwrap();
        let (w1, l1) = logps(&model.apply_step(&npo.direction, eta).unwrap(), &triple);
        let (dw, dl) = (w1 - ctx.logp_w, l1 - ctx.logp_l);
        min_margin = min_margin.min(dw.min(-dl));
        if dw > 0.0 && dl < 0.0 && !npo.degenerate {
            ok += 1;
        }
    }
    let detail = format!("{ok}/{counted} with logp_w up and logp_l down ({skipped} near-parallel skipped), min |change| {min_margin:.2e}");
    assert!(verdict(7, ok == counted, &detail, start.elapsed(), 30.0));
}

#[test]
fn criterion_8_sparsepo() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // (a) Saturated open masks reduce to DPO with beta = 1 plus the l1 constant.
    let dpo1 = LossConfig::new("dpo").with("beta", 1.0).build().unwrap();
    let open = SparseParams {
        k: 1e4,
        ..SparseParams::default()
    };
    let mut max_gap: f64 = 0.0;
    for _ in 0..50 {
        let Instance { model, triple } = random_instance(&mut rng, 6, 4);
        let reference = model.clone().randomized(1.0, rng.gen());
        let masks = MaskState::new(&triple, 1.0);
        let sparse = sparsepo_loss(&model, &triple, &masks, &reference, &open).unwrap();
        let (lw, ll) = logps(&model, &triple);
        let (rw, rl) = logps(&reference, &triple);
        let dpo = dpo1.loss_value(&LossContext::new(lw, ll, rw, rl)).unwrap();
        let l1 = open.eta_sparse * (triple.chosen.len() + triple.rejected.len()) as f64;
        max_gap = max_gap.max((sparse - dpo - l1).abs());
    }
    let a = max_gap <= 1e-6;

    // (b) Mask-confidence gradients against central differences.
    let smooth = SparseParams {
        k: 3.0,
        eta_sparse: 0.05,
        ..SparseParams::default()
    };
    let mut max_rel: f64 = 0.0;
    for _ in 0..50 {
        let Instance { model, triple } = random_instance(&mut rng, 6, 4);
        let reference = model.clone().randomized(1.0, rng.gen());
        let masks = MaskState {
            u_w: (0..triple.chosen.len()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            u_l: (0..triple.rejected.len()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        let grads = sparsepo_grads(&model, &triple, &masks, &reference, &smooth).unwrap();
        let nw = masks.u_w.len();
        let joint: Vec<f64> = masks.u_w.iter().chain(&masks.u_l).copied().collect();
        let fd = central_difference(&joint, 1e-6, |u| {
            let probe = MaskState {
                u_w: u[..nw].to_vec(),
                u_l: u[nw..].to_vec(),
            };
            sparsepo_loss(&model, &triple, &probe, &reference, &smooth)
        })
        .unwrap();
        let exact: Vec<f64> = grads.u_w.iter().chain(&grads.u_l).copied().collect();
        let dist = exact.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = exact.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        max_rel = max_rel.max(dist / scale);
    }
    let b = max_rel <= 1e-5;

    // (c) Joint training on a single prefix+suffix instance.
    let mut c = true;
    let mut runs = Vec::new();
    for seed in 0..5 {
        let data = build_sentiment_dataset(Style::PrefixSuffix, 1, seed).unwrap();
        let model = LinearHeadLM::new(32, 16, HiddenProvider::decayed(seed, 0.5));
        let cfg = TrainConfig::new(LossConfig::new("dpo"), 0.5, 500).with_mode(Mode::Sparsepo);
        let out = train(&model, &data, &cfg).unwrap();
        let (mw, ml) = out.masks.unwrap()[0].masks(&cfg.sparsepo);
        let differing = data[0].differing_positions();
        let both: Vec<f64> = mw.iter().zip(&ml).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff = differing.iter().map(|&i| both[i]).sum::<f64>() / differing.len() as f64;
        let same: Vec<f64> = (0..both.len())
            .filter(|i| !differing.contains(i))
            .map(|i| both[i])
            .collect();
        let same = same.iter().sum::<f64>() / same.len() as f64;
        c &= diff > same;
        runs.push(format!("{diff:.3} vs {same:.3}"));
    }
    let detail = format!(
        "(a) max |sparse - dpo - l1| {max_gap:.1e}: {a}; (b) max mask-grad rel err {max_rel:.1e}: {b}; \
         (c) differing vs identical mask over seeds 0-4 [{}]: {c}",
        runs.join(", ")
    );
    assert!(verdict(8, a && b && c, &detail, start.elapsed(), 60.0));
}

#[test]
fn criterion_9_algorithm_ordering() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_json(
        r#"{"kind": "algo_compare", "seed": 0,
            "dataset": {"style": "long_suffix", "n": 16},
            "model": {"d": 16, "hidden": "decayed", "decay": 0.5, "sft_steps": 50, "sft_eta": 0.5},
            "train": {"eta": 0.5, "steps": 500}}"#,
    )
    .unwrap();
    run(&config, dir.path()).unwrap();
    let report: Vec<CompareResult> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &report {
        let Some(s) = &r.summary else {
            parts.push(format!(
                "{}: {}",
                r.loss.name,
                r.error.as_deref().unwrap_or("no result")
            ));
            if ["cpo", "rrhf", "slichf", "dpop", "sppo", "dpo"].contains(&r.loss.name.as_str()) {
                pass = false;
            }
            continue;
        };
        let expected = match s.algorithm.as_str() {
            "cpo" | "rrhf" | "slichf" | "dpop" => Some(s.chosen_up),
            "sppo" => Some(s.chosen_up && s.rejected_down),
            "dpo" => Some(!s.chosen_up && s.rejected_down),
            _ => None,
        };
        pass &= expected.unwrap_or(true);
        parts.push(format!(
            "{} w {} l {}{}",
            s.algorithm,
            if s.chosen_up { "up" } else { "down" },
            if s.rejected_down { "down" } else { "up" },
            match expected {
                Some(true) => " ok",
                Some(false) => " WRONG",
                None => "",
            }
        ));
    }
    assert!(verdict(9, pass, &parts.join("; "), start.elapsed(), 120.0));
}

#[test]
fn criterion_10_reproducibility() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in ["vanilla", "npo", "sparsepo"] {
        let config = ExperimentConfig::from_json(&format!(
            r#"{{"kind": "train", "seed": 11, "dataset": {{"style": "prefix_suffix", "n": 4}},
                "model": {{"init_scale": 0.1, "sft_steps": 5}},
                "train": {{"eta": 0.2, "steps": 40, "mode": "{mode}"}}}}"#
        ))
        .unwrap();
        let read = |name: &str| {
            let out = dir.path().join(format!("{mode}_{name}"));
            run(&config, &out).unwrap();
            (
                fs::read(out.join("trace.csv")).unwrap(),
                fs::read(out.join("manifest.json")).unwrap(),
            )
        };
        let (a, b) = (read("a"), read("b"));
        let same = a == b;
        pass &= same;
        parts.push(format!("{mode}: trace.csv {} bytes identical {same}", a.0.len()));
    }
    assert!(verdict(10, pass, &parts.join("; "), start.elapsed(), 60.0));
}
