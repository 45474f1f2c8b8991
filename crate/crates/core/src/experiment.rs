//! Config-driven experiment runner. A JSON config selects one experiment kind;
//! [`run`] writes its artifacts and a `manifest.json` with their SHA-256
//! digests into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    build_edit1_triple, build_sentiment_dataset_with, write_jsonl, PreferenceTriple, SentimentOptions, SentimentVocab,
    Style,
};
use crate::diag::{grad_report, token_heatmap, GradReport};
use crate::error::{Error, Result};
use crate::loss::{Algorithm, LossConfig};
use crate::model::{HiddenProvider, LanguageModel, LinearHeadLM, LogitsLM};
use crate::optim::{sft_warmup, train, Mode, SftTarget, TraceRow, TrainConfig};
use crate::theorems::{
    verify_corollary1, verify_theorem1, verify_theorem2, Theorem2Params, Theorem2Rows, TheoremReport,
};

pub const MANIFEST_SCHEMA: &str = "entangle-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Train,
    Theorem1,
    Corollary1,
    Theorem2,
    Heatmap,
    AlgoCompare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Replaces `train.loss` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub theorem: TheoremConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    /// Output directory; a directory given on the command line takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Synthetic data. `style` is one of the sentiment styles or `edit1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub style: String,
    pub n: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    /// Response length for `edit1`.
    pub len: usize,
    /// 1-based differing position for `edit1`.
    pub m: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            style: "long_suffix".into(),
            n: 16,
            vocab_size: 32,
            prompt_len: 8,
            len: 8,
            m: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    #[default]
    LinearHead,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenKind {
    PrefixHash,
    #[default]
    Decayed,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub setup: Setup,
    /// Hidden width of the linear-head model.
    pub d: usize,
    pub hidden: HiddenKind,
    pub decay: f64,
    /// Scale of the random initial parameters (0 gives `θ = 0` / uniform logits).
    pub init_scale: f64,
    pub sft_steps: usize,
    pub sft_eta: f64,
    pub sft_target: SftTarget,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            setup: Setup::LinearHead,
            d: 16,
            hidden: HiddenKind::Decayed,
            decay: 0.5,
            init_scale: 0.0,
            sft_steps: 0,
            sft_eta: 0.5,
            sft_target: SftTarget::Chosen,
        }
    }
}

/// Settings of the closed-form checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    /// Support sizes `M` for the single-token and last-token checks; a single
    /// number is accepted.
    #[serde(alias = "M", deserialize_with = "one_or_many")]
    pub tokens: Vec<usize>,
    #[serde(alias = "V")]
    pub vocab: usize,
    pub d: usize,
    /// Response length `L`.
    #[serde(alias = "L")]
    pub len: usize,
    /// 1-based differing position for the edit-distance-1 check.
    pub m: usize,
    pub eta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Theorem2Rows>,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            tokens: vec![2, 4, 8],
            vocab: 32,
            d: 16,
            len: 8,
            m: 3,
            eta: 1e-4,
            rows: None,
        }
    }
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(ms) => ms,
    })
}

/// One run of an algorithm comparison. Unset fields inherit from `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareEntry {
    pub loss: LossConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub entries: Vec<CompareEntry>,
}

impl Default for CompareConfig {
    /// Every catalog entry at its defaults, except SPPO, whose default `β` is
    /// numerically unstable at toy scale and runs at `β = 0.1`, `η = 0.01`.
    fn default() -> Self {
        let entries = Algorithm::ALL
            .iter()
            .map(|&a| {
                if a == Algorithm::Sppo {
                    CompareEntry {
                        loss: LossConfig::new(a.name()).with("beta", 0.1),
                        eta: Some(0.01),
                        steps: None,
                    }
                } else {
                    CompareEntry {
                        loss: LossConfig::new(a.name()),
                        eta: None,
                        steps: None,
                    }
                }
            })
            .collect();
        Self { entries }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Training settings with the top-level loss and seed applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = self.train.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("`{}` experiments need a `train` section", self.kind_name()))
        })?;
        if let Some(loss) = &self.loss {
            cfg.loss = loss.clone();
        }
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Train => "train",
            Kind::Theorem1 => "theorem1",
            Kind::Corollary1 => "corollary1",
            Kind::Theorem2 => "theorem2",
            Kind::Heatmap => "heatmap",
            Kind::AlgoCompare => "algo_compare",
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            Kind::Train | Kind::AlgoCompare => {
                self.train_config()?;
            }
            Kind::Heatmap => {
                if self.train.is_some() {
                    self.train_config()?;
                }
            }
            Kind::Theorem1 | Kind::Corollary1 | Kind::Theorem2 => {}
        }
        if matches!(self.kind, Kind::Train | Kind::Heatmap | Kind::AlgoCompare) {
            self.validate_model()?;
        }
        if self.kind == Kind::AlgoCompare {
            if self.compare.entries.is_empty() {
                return Err(Error::InvalidArgument("`compare.entries` is empty".into()));
            }
            let base = self.train_config()?;
            for entry in &self.compare.entries {
                self.entry_config(&base, entry).validate()?;
            }
        }
        Ok(())
    }

    fn validate_model(&self) -> Result<()> {
        let m = &self.model;
        if self.dataset.vocab_size < 2 {
            return Err(Error::InvalidArgument("`dataset.vocab_size` must be >= 2".into()));
        }
        if m.setup == Setup::LinearHead && m.d == 0 {
            return Err(Error::InvalidArgument("`model.d` must be >= 1".into()));
        }
        if !(m.decay.is_finite() && m.decay >= 0.0) {
            return Err(Error::Constraint {
                name: "model.decay".into(),
                value: m.decay,
                constraint: "finite and >= 0",
            });
        }
        if !(m.init_scale.is_finite() && m.init_scale >= 0.0) {
            return Err(Error::Constraint {
                name: "model.init_scale".into(),
                value: m.init_scale,
                constraint: "finite and >= 0",
            });
        }
        Ok(())
    }

    fn entry_config(&self, base: &TrainConfig, entry: &CompareEntry) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.loss = entry.loss.clone();
        cfg.eta = entry.eta.unwrap_or(base.eta);
        cfg.steps = entry.steps.unwrap_or(base.steps);
        cfg
    }

    /// Builds the dataset described by `dataset`.
    pub fn build_dataset(&self) -> Result<Vec<PreferenceTriple>> {
        let d = &self.dataset;
        if d.style == "edit1" {
            if d.n == 0 {
                return Err(Error::InvalidArgument("`dataset.n` must be >= 1".into()));
            }
            return (0..d.n as u64)
                .map(|i| build_edit1_triple(d.len, d.m, d.vocab_size, self.seed.wrapping_add(i)))
                .collect();
        }
        let style: Style = d.style.parse()?;
        let options = SentimentOptions {
            vocab_size: d.vocab_size,
            prompt_len: d.prompt_len,
        };
        build_sentiment_dataset_with(style, d.n, self.seed, &options)
    }
}

/// A built model of either kind.
#[derive(Debug, Clone)]
pub enum AnyModel {
    LinearHead(LinearHeadLM),
    Logits(LogitsLM),
}

/// Builds the configured model for `triples`, including the optional warm-up.
pub fn build_model(config: &ExperimentConfig, triples: &[PreferenceTriple]) -> Result<AnyModel> {
    config.validate_model()?;
    let m = &config.model;
    let vocab = config.dataset.vocab_size;
    let seed = config.seed;
    match m.setup {
        Setup::LinearHead => {
            let hidden = match m.hidden {
                HiddenKind::PrefixHash => HiddenProvider::prefix_hash(seed),
                HiddenKind::Decayed => HiddenProvider::decayed(seed, m.decay),
                HiddenKind::Unit => HiddenProvider::unit(seed),
            };
            let model = LinearHeadLM::new(vocab, m.d, hidden).randomized(m.init_scale, seed);
            Ok(AnyModel::LinearHead(warm_up(m, model, triples)?))
        }
        Setup::Logits => {
            let [triple] = triples else {
                return Err(Error::InvalidArgument(
                    "the logits setup models exactly one pair; set `dataset.n` to 1".into(),
                ));
            };
            let model = LogitsLM::random(vocab, &triple.chosen, &triple.rejected, m.init_scale, seed)?;
            Ok(AnyModel::Logits(warm_up(m, model, triples)?))
        }
    }
}

fn warm_up<M: LanguageModel>(m: &ModelConfig, model: M, triples: &[PreferenceTriple]) -> Result<M> {
    if m.sft_steps == 0 {
        Ok(model)
    } else {
        sft_warmup(&model, triples, m.sft_target, m.sft_eta, m.sft_steps)
    }
}

/// One written file and its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub kind: Kind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
}

/// What [`run`] produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: Kind,
    pub artifacts: Vec<Artifact>,
    /// Whether every claim held (theorem kinds only).
    pub pass: Option<bool>,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
}

/// Start and end of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub algorithm: String,
    pub mode: Mode,
    pub eta: f64,
    pub steps: usize,
    pub initial: TraceRow,
    #[serde(rename = "final")]
    pub last: TraceRow,
    pub chosen_up: bool,
    pub rejected_down: bool,
    /// Diagnostics of the first triple at the final parameters.
    pub final_report: GradReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<MaskValues>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskValues {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

/// One algorithm of a comparison: its summary, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub dir: String,
    pub loss: LossConfig,
    pub eta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<TrainSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub differing_positions: Vec<usize>,
    pub diagonal: Vec<f64>,
    pub weighted_sum: f64,
    pub degenerate: Vec<(usize, usize)>,
    pub report: GradReport,
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

/// Runs `config` and writes its artifacts under `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let mut writer = Writer::new(out_dir)?;
    let mut lines = Vec::new();
    let mut pass = None;
    match config.kind {
        Kind::Theorem1 | Kind::Corollary1 | Kind::Theorem2 => {
            let reports = theorem_reports(config)?;
            for r in &reports {
                lines.extend(r.render().lines().map(str::to_string));
            }
            pass = Some(reports.iter().all(TheoremReport::pass));
            writer.json("report.json", &reports)?;
        }
        Kind::Train => {
            let triples = config.build_dataset()?;
            write_dataset(config, &triples, &mut writer)?;
            let model = build_model(config, &triples)?;
            let cfg = config.train_config()?;
            let (summary, csv) = match &model {
                AnyModel::LinearHead(m) => train_one(m, &triples, &cfg)?,
                AnyModel::Logits(m) => train_one(m, &triples, &cfg)?,
            };
            writer.write("trace.csv", csv.as_bytes())?;
            lines.push(summary_line(&summary));
            writer.json("report.json", &summary)?;
        }
        Kind::Heatmap => {
            let triples = config.build_dataset()?;
            write_dataset(config, &triples, &mut writer)?;
            let model = build_model(config, &triples)?;
            let summary = match &model {
                AnyModel::LinearHead(m) => heatmap_one(config, m, &triples, &mut writer)?,
                AnyModel::Logits(m) => heatmap_one(config, m, &triples, &mut writer)?,
            };
            lines.push(format!(
                "heatmap: differing {:?}, diagonal {:?}, weighted sum {:.6}",
                summary.differing_positions,
                summary.diagonal.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>(),
                summary.weighted_sum
            ));
            writer.json("report.json", &summary)?;
        }
        Kind::AlgoCompare => {
            let triples = config.build_dataset()?;
            write_dataset(config, &triples, &mut writer)?;
            let model = build_model(config, &triples)?;
            let results = match &model {
                AnyModel::LinearHead(m) => compare(config, m, &triples)?,
                AnyModel::Logits(m) => compare(config, m, &triples)?,
            };
            let mut report = Vec::new();
            for (result, csv) in results {
                if let Some(csv) = csv {
                    writer.write(&format!("{}/trace.csv", result.dir), csv.as_bytes())?;
                }
                lines.push(match (&result.summary, &result.error) {
                    (Some(s), _) => summary_line(s),
                    (None, Some(e)) => format!("{}: error: {e}", result.loss.name),
                    (None, None) => format!("{}: no result", result.loss.name),
                });
                report.push(result);
            }
            writer.json("report.json", &report)?;
        }
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: config.kind,
        seed: config.seed,
        config: config.clone(),
        artifacts: writer.artifacts.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join("manifest.json"), text)?;
    Ok(RunSummary {
        kind: config.kind,
        artifacts: writer.artifacts,
        pass,
        lines,
    })
}

fn theorem_reports(config: &ExperimentConfig) -> Result<Vec<TheoremReport>> {
    let t = &config.theorem;
    match config.kind {
        Kind::Theorem1 => t
            .tokens
            .iter()
            .map(|&m| verify_theorem1(m, t.vocab, t.d, config.seed))
            .collect(),
        Kind::Corollary1 => t
            .tokens
            .iter()
            .map(|&m| verify_corollary1(t.len, m, t.vocab, t.d, config.seed))
            .collect(),
        Kind::Theorem2 => Ok(vec![verify_theorem2(&Theorem2Params {
            len: t.len,
            m: t.m,
            vocab: t.vocab,
            rows: t.rows.clone(),
            eta: t.eta,
            seed: config.seed,
        })?]),
        _ => unreachable!("not a theorem kind"),
    }
}

fn write_dataset(config: &ExperimentConfig, triples: &[PreferenceTriple], writer: &mut Writer) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(triples, &mut buf)?;
    writer.write("dataset.jsonl", &buf)?;
    if config.dataset.style != "edit1" {
        let mut vocab = Vec::new();
        SentimentVocab::new(config.dataset.vocab_size)?.write_sidecar(&mut vocab)?;
        writer.write("vocab.txt", &vocab)?;
    }
    Ok(())
}

fn summary_line(s: &TrainSummary) -> String {
    format!(
        "{} ({}, eta {}, {} steps): logp_w {:.4} -> {:.4} ({}), logp_l {:.4} -> {:.4} ({}), final case {}",
        s.algorithm,
        s.mode.name(),
        s.eta,
        s.steps,
        s.initial.logp_w,
        s.last.logp_w,
        if s.chosen_up { "up" } else { "down" },
        s.initial.logp_l,
        s.last.logp_l,
        if s.rejected_down { "down" } else { "up" },
        s.last.case.label()
    )
}

/// Trains one model and returns its summary and trace CSV.
pub fn train_one<M: LanguageModel>(
    model: &M,
    triples: &[PreferenceTriple],
    cfg: &TrainConfig,
) -> Result<(TrainSummary, String)> {
    let spec = cfg.validate()?;
    let outcome = train(model, triples, cfg)?;
    let trace = &outcome.trace;
    let (Some(initial), Some(last)) = (trace.first(), trace.last()) else {
        return Err(Error::InvalidArgument("empty trace".into()));
    };
    let reference = triples[0].clone().with_reference(model)?;
    let final_report = grad_report(&spec, &outcome.model, &reference, cfg.eta)?;
    let masks = outcome.masks.as_ref().map(|all| {
        all.iter()
            .map(|state| {
                let (chosen, rejected) = state.masks(&cfg.sparsepo);
                MaskValues { chosen, rejected }
            })
            .collect()
    });
    let summary = TrainSummary {
        algorithm: spec.algorithm().name().into(),
        mode: cfg.mode,
        eta: cfg.eta,
        steps: cfg.steps,
        initial: initial.clone(),
        last: last.clone(),
        chosen_up: last.logp_w > initial.logp_w,
        rejected_down: last.logp_l < initial.logp_l,
        final_report,
        masks,
    };
    Ok((summary, trace.to_csv_string()?))
}

fn heatmap_one<M: LanguageModel>(
    config: &ExperimentConfig,
    model: &M,
    triples: &[PreferenceTriple],
    writer: &mut Writer,
) -> Result<HeatmapSummary> {
    let (model, spec, eta) = match &config.train {
        Some(_) => {
            let cfg = config.train_config()?;
            let outcome = train(model, triples, &cfg)?;
            writer.write("trace.csv", outcome.trace.to_csv_string()?.as_bytes())?;
            (outcome.model, cfg.validate()?, cfg.eta)
        }
        None => {
            let loss = config.loss.clone().unwrap_or_else(|| LossConfig::new("dpo"));
            (model.clone(), loss.build()?, 0.1)
        }
    };
    let triple = &triples[0];
    let heatmap = token_heatmap(&model, triple)?;
    let mut csv = Vec::new();
    heatmap.write_csv(&mut csv)?;
    writer.write("heatmap.csv", &csv)?;
    Ok(HeatmapSummary {
        differing_positions: triple.differing_positions(),
        diagonal: heatmap.diagonal(),
        weighted_sum: heatmap.weighted_sum(),
        degenerate: heatmap.degenerate.clone(),
        report: grad_report(&spec, &model, triple, eta)?,
    })
}

type CompareOutput = (CompareResult, Option<String>);

/// Runs every comparison entry from the same starting model, one thread each.
fn compare<M: LanguageModel + Sync>(
    config: &ExperimentConfig,
    model: &M,
    triples: &[PreferenceTriple],
) -> Result<Vec<CompareOutput>> {
    let base = config.train_config()?;
    let configs: Vec<TrainConfig> = config
        .compare
        .entries
        .iter()
        .map(|e| config.entry_config(&base, e))
        .collect();
    let outputs: Vec<Result<CompareOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                scope.spawn(move || {
                    let dir = format!("{:02}_{}", i, cfg.loss.name);
                    let mut result = CompareResult {
                        dir,
                        loss: cfg.loss.clone(),
                        eta: cfg.eta,
                        summary: None,
                        error: None,
                    };
                    match train_one(model, triples, cfg) {
                        Ok((summary, csv)) => {
                            result.summary = Some(summary);
                            Ok((result, Some(csv)))
                        }
                        Err(e @ Error::NonFinite { .. }) => {
                            result.error = Some(e.to_string());
                            Ok((result, None))
                        }
                        Err(e) => Err(e),
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("comparison worker panicked"))
            .collect()
    });
    outputs.into_iter().collect()
}
