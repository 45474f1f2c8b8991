use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numeric::{self, fnv1a};

const EMPTY_CONTEXT: u64 = u64::MAX;
const MAX_LAG: usize = 64;

/// Frozen map from a context (prompt followed by the response prefix) to the
/// hidden state used to predict the next token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HiddenProvider {
    /// An independent standard-normal vector per distinct context.
    PrefixHash {
        seed: u64,
        #[serde(default)]
        unit_norm: bool,
    },
    /// `Σ_k decay^k · e(token at lag k, k)` over the context, with one
    /// standard-normal embedding per (token, lag). Contexts sharing their recent
    /// tokens get correlated hidden states.
    Decayed {
        seed: u64,
        decay: f64,
        #[serde(default)]
        unit_norm: bool,
    },
}

impl HiddenProvider {
    pub fn prefix_hash(seed: u64) -> Self {
        HiddenProvider::PrefixHash { seed, unit_norm: false }
    }

    pub fn unit(seed: u64) -> Self {
        HiddenProvider::PrefixHash { seed, unit_norm: true }
    }

    pub fn decayed(seed: u64, decay: f64) -> Self {
        HiddenProvider::Decayed {
            seed,
            decay,
            unit_norm: false,
        }
    }

    pub fn hidden(&self, context: &[usize], dim: usize) -> Vec<f64> {
        let (mut h, unit_norm) = match *self {
            HiddenProvider::PrefixHash { seed, unit_norm } => {
                let words: Vec<u64> = if context.is_empty() {
                    vec![EMPTY_CONTEXT]
                } else {
                    context.iter().map(|&t| t as u64).collect()
                };
                (gaussian(fnv1a(seed, &words), dim), unit_norm)
            }
            HiddenProvider::Decayed { seed, decay, unit_norm } => {
                let mut h = vec![0.0; dim];
                if context.is_empty() {
                    h = gaussian(fnv1a(seed, &[EMPTY_CONTEXT]), dim);
                }
                let mut weight = 1.0;
                for (lag, &token) in context.iter().rev().take(MAX_LAG).enumerate() {
                    let e = gaussian(fnv1a(seed, &[token as u64, lag as u64]), dim);
                    for (hk, ek) in h.iter_mut().zip(&e) {
                        *hk += weight * ek;
                    }
                    weight *= decay;
                }
                (h, unit_norm)
            }
        };
        if unit_norm {
            let n = numeric::norm_sq(&h).sqrt();
            if n > 0.0 {
                h.iter_mut().for_each(|x| *x /= n);
            }
        }
        h
    }
}

fn gaussian(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_context_keyed() {
        let p = HiddenProvider::prefix_hash(3);
        assert_eq!(p.hidden(&[1, 2, 3], 8), p.hidden(&[1, 2, 3], 8));
        assert_ne!(p.hidden(&[1, 2, 3], 8), p.hidden(&[1, 2, 4], 8));
        assert_ne!(p.hidden(&[], 8), HiddenProvider::prefix_hash(4).hidden(&[], 8));
    }

    #[test]
    fn unit_norm_option() {
        let h = HiddenProvider::unit(9).hidden(&[5, 6], 16);
        assert!((numeric::norm_sq(&h) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn decayed_contexts_share_recent_history() {
        let p = HiddenProvider::decayed(1, 0.5);
        let cos = |a: &[f64], b: &[f64]| numeric::dot(a, b) / (numeric::norm_sq(a) * numeric::norm_sq(b)).sqrt();
        let near = cos(&p.hidden(&[1, 2, 3, 4, 5, 6], 64), &p.hidden(&[9, 2, 3, 4, 5, 6], 64));
        let far = cos(&p.hidden(&[1, 2, 3, 4, 5, 6], 64), &p.hidden(&[1, 2, 3, 4, 5, 9], 64));
        assert!(near > 0.95, "{near}");
        assert!(far < near);
    }
}
