//! Scalar helpers shared by the loss catalog, the toy models and the diagnostics.
//!
//! Every reduction goes through [`pairwise_sum`] / [`dot`] so that results do not
//! depend on how work was split between callers.

const PAIRWISE_BLOCK: usize = 32;

/// Logistic sigmoid, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)`, stable for both tails.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Inner product with the same fixed pairwise reduction tree as [`pairwise_sum`].
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    } else {
        let mid = a.len() / 2;
        dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..])
    }
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `log Σ exp(x_i)`, shifted by the maximum.
pub fn log_sum_exp<I>(xs: I) -> f64
where
    I: IntoIterator<Item = f64> + Clone,
{
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = xs.into_iter().map(|x| (x - max).exp()).collect();
    max + pairwise_sum(&terms).ln()
}

/// Softmax over `logits`, restricted to `support` when given. Entries outside the
/// support get exactly zero probability.
pub fn softmax(logits: &[f64], support: Option<&[bool]>) -> Vec<f64> {
    let active = |j: usize| support.is_none_or(|s| s[j]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| active(*j))
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| if active(j) { (z - max).exp() } else { 0.0 })
        .collect();
    let total = pairwise_sum(&out);
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Cosine similarity, defined as 0 when either norm is below `floor`.
/// The flag reports whether that fallback fired.
pub fn cosine(inner: f64, norm_a_sq: f64, norm_b_sq: f64, floor: f64) -> (f64, bool) {
    let (na, nb) = (norm_a_sq.sqrt(), norm_b_sq.sqrt());
    if na < floor || nb < floor {
        (0.0, true)
    } else {
        ((inner / (na * nb)).clamp(-1.0, 1.0), false)
    }
}

/// Stable 64-bit FNV-1a fold, used to key frozen hidden states by context.
pub(crate) fn fnv1a(seed: u64, words: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(dot(&xs, &vec![1.0; 1000]), 499_500.0);
    }

    #[test]
    fn masked_softmax_zeroes_off_support() {
        let support = [true, false, true, false];
        let p = softmax(&[0.0, 5.0, 0.0, -1.0], Some(&support));
        assert_eq!(p, vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(v.iter().copied()) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn cosine_floor() {
        assert_eq!(cosine(1.0, 0.0, 1.0, 1e-12), (0.0, true));
        assert_eq!(cosine(-2.0, 4.0, 1.0, 1e-12), (-1.0, false));
    }
}
