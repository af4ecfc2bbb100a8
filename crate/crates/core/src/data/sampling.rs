use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size-proportional shares `q` and their temperature-smoothed
/// counterparts `p_i = q_i^α / Σ_j q_j^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha: f64,
}

/// Normalizes `q` and applies the smoothing exponent `alpha`.
pub fn sampling_weights(q: &[f64], alpha: f64) -> Result<SamplingWeights> {
    if q.is_empty() {
        return Err(Error::Domain("no languages to sample from".into()));
    }
    if let Some(bad) = q.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!("language share {bad} must be positive")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha {alpha} must be finite and non-negative")));
    }
    let total: f64 = q.iter().sum();
    let q: Vec<f64> = q.iter().map(|x| x / total).collect();
    let raised: Vec<f64> = q.iter().map(|x| x.powf(alpha)).collect();
    let z: f64 = raised.iter().sum();
    let p = raised.iter().map(|x| x / z).collect();
    Ok(SamplingWeights { q, p, alpha })
}

impl SamplingWeights {
    /// Shares from raw example counts.
    pub fn from_counts(counts: &[usize], alpha: f64) -> Result<Self> {
        let q: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        sampling_weights(&q, alpha)
    }
}

/// Draws a language index with probability `p_i`.
pub fn sample_language<R: Rng>(weights: &SamplingWeights, rng: &mut R) -> usize {
    if weights.p.len() == 1 {
        return 0;
    }
    WeightedIndex::new(&weights.p)
        .expect("validated weights")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_shares_stay_uniform() {
        for alpha in [0.0, 0.3, 1.0, 5.0] {
            let w = sampling_weights(&[0.5, 0.5], alpha).unwrap();
            assert_eq!(w.p, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn alpha_one_is_identity() {
        let w = sampling_weights(&[0.2, 0.3, 0.5], 1.0).unwrap();
        for (p, q) in w.p.iter().zip(&w.q) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn unnormalized_input_is_normalized() {
        let a = sampling_weights(&[9.0, 1.0], 0.3).unwrap();
        let b = sampling_weights(&[0.9, 0.1], 0.3).unwrap();
        assert!((a.p[0] - b.p[0]).abs() < 1e-15);
    }

    #[test]
    fn non_positive_share_is_domain_error() {
        assert!(matches!(sampling_weights(&[1.0, 0.0], 0.3), Err(Error::Domain(_))));
        assert!(matches!(sampling_weights(&[], 0.3), Err(Error::Domain(_))));
    }

    #[test]
    fn single_language_always_drawn() {
        let w = sampling_weights(&[1.0], 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| sample_language(&w, &mut rng) == 0));
    }
}
