use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::special::MASK;
use super::vocab::unframe;
use crate::error::{Error, Result};
use crate::model::TokenId;

/// Span-masking parameters for the denoising objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Fraction of body tokens to cover with masked spans.
    pub mask_ratio: f64,
    /// Mean of the Poisson span-length distribution.
    pub span_lambda: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.35,
            span_lambda: 3.5,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if !(self.span_lambda > 0.0 && self.span_lambda.is_finite()) {
            return Err(Error::Config(format!("span_lambda {} must be positive", self.span_lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisedExample {
    /// Framed sequence with masked spans collapsed to single `<mask>` tokens.
    pub input: Vec<TokenId>,
    /// The uncorrupted framed sequence.
    pub target: Vec<TokenId>,
    pub lang: TokenId,
    /// Body tokens covered by masks.
    pub masked: usize,
}

/// Corrupts a framed sequence using a generator seeded from `cfg.seed`.
pub fn dae_noise(framed: &[TokenId], cfg: &NoiseConfig) -> Result<NoisedExample> {
    dae_noise_with(framed, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Text infilling: spans with Poisson lengths (redrawn until ≥ 1) start at
/// random unmasked body positions until at least `mask_ratio` of the body
/// is covered. Each maximal masked run becomes one `<mask>`. The frame
/// tokens are never touched.
pub fn dae_noise_with<R: Rng>(framed: &[TokenId], cfg: &NoiseConfig, rng: &mut R) -> Result<NoisedExample> {
    cfg.validate()?;
    let (lang, body) = unframe(framed)?;
    let n = body.len();
    let mut masked = vec![false; n];
    let mut covered = 0usize;
    let poisson = Poisson::new(cfg.span_lambda).map_err(|e| Error::Config(e.to_string()))?;
    while (covered as f64) < cfg.mask_ratio * n as f64 {
        let span = loop {
            let s: f64 = poisson.sample(rng);
            if s >= 1.0 {
                break s.min(n as f64) as usize;
            }
        };
        let free = n - covered;
        let mut k = rng.random_range(0..free);
        let start = masked
            .iter()
            .position(|&m| {
                if m {
                    return false;
                }
                if k == 0 {
                    return true;
                }
                k -= 1;
                false
            })
            .expect("at least one unmasked position");
        for m in &mut masked[start..(start + span).min(n)] {
            if !*m {
                *m = true;
                covered += 1;
            }
        }
    }
    let mut input = Vec::with_capacity(framed.len());
    input.extend_from_slice(&framed[..2]);
    for (i, &t) in body.iter().enumerate() {
        if !masked[i] {
            input.push(t);
        } else if i == 0 || !masked[i - 1] {
            input.push(MASK);
        }
    }
    input.extend_from_slice(&framed[2 + n..]);
    Ok(NoisedExample {
        input,
        target: framed.to_vec(),
        lang,
        masked: covered,
    })
}
