use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradientVector, LanguageModel, ParamShape};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Chosen,
    Rejected,
}

/// Learnable per-position logits for one chosen/rejected pair of equal length.
///
/// Row `i` of the chosen branch is `softmax(θ_i + o^w_i)` and of the rejected
/// branch `softmax(θ_i + o^l_i)`. `θ` is the learnable `L × V` table shared by
/// both branches. The frozen offsets `o` are zero up to and including the first
/// differing position, so those rows are a single distribution; after it the
/// offsets encode how the two contexts shift the prediction. The gradient of
/// `log s_b[i, j*]` with respect to row `θ_i` is `e_{j*} − s_b[i, ·]` for both
/// branches.
///
/// The prompt is fixed and ignored by evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsLM {
    vocab: usize,
    chosen: Arc<Vec<usize>>,
    rejected: Arc<Vec<usize>>,
    /// Index of the first position where the two responses differ.
    split: usize,
    logits: Vec<f64>,
    offset_w: Arc<Vec<f64>>,
    offset_l: Arc<Vec<f64>>,
    shape: Arc<ParamShape>,
}

impl LogitsLM {
    /// All rows uniform over the vocabulary.
    pub fn uniform(vocab: usize, chosen: &[usize], rejected: &[usize]) -> Result<Self> {
        let split = Self::check_pair(vocab, chosen, rejected)?;
        let len = chosen.len();
        Ok(Self {
            vocab,
            chosen: Arc::new(chosen.to_vec()),
            rejected: Arc::new(rejected.to_vec()),
            split,
            logits: vec![0.0; len * vocab],
            offset_w: Arc::new(vec![0.0; len * vocab]),
            offset_l: Arc::new(vec![0.0; len * vocab]),
            shape: Arc::new(ParamShape::single("logits", len, vocab)),
        })
    }

    /// Builds the model from explicit probability rows.
    ///
    /// `shared` holds rows `0..=split`; `chosen_after` / `rejected_after` hold the
    /// branch rows after the split. Entries must be strictly positive and each
    /// row must sum to one.
    pub fn from_rows(
        chosen: &[usize],
        rejected: &[usize],
        shared: &[Vec<f64>],
        chosen_after: &[Vec<f64>],
        rejected_after: &[Vec<f64>],
    ) -> Result<Self> {
        let vocab = shared.first().map(Vec::len).unwrap_or(0);
        let mut model = Self::uniform(vocab, chosen, rejected)?;
        let len = chosen.len();
        if shared.len() != model.split + 1
            || chosen_after.len() != len - model.split - 1
            || rejected_after.len() != chosen_after.len()
        {
            return Err(Error::InvalidArgument(format!(
                "expected {} shared rows and {} rows per branch after the split",
                model.split + 1,
                len - model.split - 1
            )));
        }
        for row in shared.iter().chain(chosen_after).chain(rejected_after) {
            if row.len() != vocab || row.iter().any(|&p| p.is_nan() || p <= 0.0) {
                return Err(Error::InvalidArgument(
                    "rows must have vocabulary length and strictly positive entries".into(),
                ));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument("rows must sum to 1".into()));
            }
        }
        let mut offset_l = vec![0.0; len * vocab];
        for (i, row) in shared.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                model.logits[i * vocab + j] = p.ln();
            }
        }
        for (k, (rw, rl)) in chosen_after.iter().zip(rejected_after).enumerate() {
            let i = model.split + 1 + k;
            for j in 0..vocab {
                model.logits[i * vocab + j] = rw[j].ln();
                offset_l[i * vocab + j] = rl[j].ln() - rw[j].ln();
            }
        }
        model.offset_l = Arc::new(offset_l);
        Ok(model)
    }

    /// Logits drawn uniformly from `[-scale, scale]`, together with random
    /// rejected-branch offsets after the split.
    pub fn random(vocab: usize, chosen: &[usize], rejected: &[usize], scale: f64, seed: u64) -> Result<Self> {
        let mut model = Self::uniform(vocab, chosen, rejected)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in &mut model.logits {
            *x = rng.gen_range(-scale..=scale);
        }
        let mut offsets = vec![0.0; model.logits.len()];
        for x in offsets.iter_mut().skip((model.split + 1) * vocab) {
            *x = rng.gen_range(-scale..=scale);
        }
        model.offset_l = Arc::new(offsets);
        Ok(model)
    }

    fn check_pair(vocab: usize, chosen: &[usize], rejected: &[usize]) -> Result<usize> {
        if vocab < 2 {
            return Err(Error::InvalidArgument(
                "vocabulary must hold at least two tokens".into(),
            ));
        }
        if chosen.len() != rejected.len() || chosen.is_empty() {
            return Err(Error::InvalidArgument(
                "chosen and rejected responses must be non-empty and of equal length".into(),
            ));
        }
        for &t in chosen.iter().chain(rejected) {
            if t >= vocab {
                return Err(Error::TokenOutOfVocab { token: t, vocab });
            }
        }
        chosen
            .iter()
            .zip(rejected)
            .position(|(a, b)| a != b)
            .ok_or_else(|| Error::InvalidArgument("chosen and rejected responses are identical".into()))
    }

    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Index of the first differing position (rows `0..=split` are shared).
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn chosen(&self) -> &[usize] {
        &self.chosen
    }

    pub fn rejected(&self) -> &[usize] {
        &self.rejected
    }

    pub fn branch_of(&self, response: &[usize]) -> Result<Branch> {
        if response == self.chosen.as_slice() {
            Ok(Branch::Chosen)
        } else if response == self.rejected.as_slice() {
            Ok(Branch::Rejected)
        } else {
            Err(Error::UnknownBranch)
        }
    }

    fn row_logits(&self, branch: Branch, i: usize) -> Vec<f64> {
        let v = self.vocab;
        let offsets = match branch {
            Branch::Chosen => &self.offset_w,
            Branch::Rejected => &self.offset_l,
        };
        self.logits[i * v..(i + 1) * v]
            .iter()
            .zip(&offsets[i * v..(i + 1) * v])
            .map(|(a, b)| a + b)
            .collect()
    }

    /// The distribution `s_{b,i}` over the vocabulary.
    pub fn row(&self, branch: Branch, i: usize) -> Vec<f64> {
        softmax(&self.row_logits(branch, i), None)
    }
}

impl LanguageModel for LogitsLM {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn shape(&self) -> Arc<ParamShape> {
        Arc::clone(&self.shape)
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.logits.len() {
            return Err(Error::DimensionMismatch {
                expected: self.logits.len(),
                found: params.len(),
            });
        }
        Ok(Self {
            logits: params,
            ..self.clone()
        })
    }

    fn token_logprobs(&self, _prompt: &[usize], response: &[usize]) -> Result<Vec<f64>> {
        let branch = self.branch_of(response)?;
        Ok(response
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let z = self.row_logits(branch, i);
                z[y] - log_sum_exp(z.iter().copied())
            })
            .collect())
    }

    fn token_grads(&self, _prompt: &[usize], response: &[usize]) -> Result<Vec<GradientVector>> {
        let branch = self.branch_of(response)?;
        let v = self.vocab;
        Ok(response
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let s = self.row(branch, i);
                let mut g = GradientVector::zeros(self.shape());
                let slots = &mut g.values_mut()[i * v..(i + 1) * v];
                for (slot, p) in slots.iter_mut().zip(&s) {
                    *slot = -p;
                }
                slots[y] += 1.0;
                g
            })
            .collect())
    }
}
