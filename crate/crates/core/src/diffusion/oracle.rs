//! Closed-form noise predictor for isotropic Gaussian-mixture targets.
//!
//! Under the forward process `x_k = sqrt(ab) x_0 + sqrt(1 - ab) eps`, each
//! component `N(mu_i, s_i^2 I)` becomes `N(sqrt(ab) mu_i, (ab s_i^2 + 1 - ab) I)`.
//! The optimal noise estimate is `E[eps | x_k] = -sqrt(1 - ab) * score(x_k)`.

use super::{Context, DiffusionError, NoisePredictor, NoiseSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self, DiffusionError> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| DiffusionError::Dimension("mixture has no components".into()))?;
        if components.iter().any(|c| c.mean.len() != dim || !(c.std > 0.0) || !(c.weight > 0.0)) {
            return Err(DiffusionError::Dimension(
                "components need equal dimension, positive std and weight".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components
            .into_iter()
            .map(|c| MixtureComponent {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Self { components, dim })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-coordinate mixture CDF.
    pub fn marginal_cdf(&self, coord: usize, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * normal_cdf((x - c.mean[coord]) / c.std))
            .sum()
    }
}

/// Standard normal CDF via the complementary error function.
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Numerical Recipes `erfc` (Chebyshev fit, relative error < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Analytic predictor for a known [`GaussianMixture`].
#[derive(Debug, Clone)]
pub struct MixtureOracle {
    mixture: GaussianMixture,
    schedule: NoiseSchedule,
}

impl MixtureOracle {
    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    /// `E[eps | x_k]` for one state.
    pub fn predict_one(&self, x: &[f64], k: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(k);
        let sab = ab.sqrt();
        let d = self.mixture.dim as f64;
        let logs: Vec<f64> = self
            .mixture
            .components
            .iter()
            .map(|c| {
                let var = ab * c.std * c.std + (1.0 - ab);
                let dist2: f64 = x.iter().zip(&c.mean).map(|(xi, mi)| (xi - sab * mi).powi(2)).sum();
                c.weight.ln() - 0.5 * d * var.ln() - 0.5 * dist2 / var
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut score = vec![0.0; x.len()];
        for (c, w) in self.mixture.components.iter().zip(&weights) {
            let var = ab * c.std * c.std + (1.0 - ab);
            let r = w / z;
            for (s, (xi, mi)) in score.iter_mut().zip(x.iter().zip(&c.mean)) {
                *s -= r * (xi - sab * mi) / var;
            }
        }
        let scale = -(1.0 - ab).sqrt();
        score.into_iter().map(|s| s * scale).collect()
    }
}

impl NoisePredictor for MixtureOracle {
    fn action_dim(&self) -> usize {
        self.mixture.dim
    }

    fn predict_batch(&self, states: &[f64], batch: usize, _ctx: &Context, k: usize) -> Vec<f64> {
        let dim = self.mixture.dim;
        (0..batch)
            .flat_map(|b| self.predict_one(&states[b * dim..(b + 1) * dim], k))
            .collect()
    }
}

/// Builds the closed-form predictor for `mixture` under `schedule`.
pub fn oracle_predictor(mixture: GaussianMixture, schedule: NoiseSchedule) -> MixtureOracle {
    MixtureOracle { mixture, schedule }
}
