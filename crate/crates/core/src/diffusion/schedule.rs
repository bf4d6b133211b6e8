use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Which beta schedule generated a [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    SquaredCosine,
    Custom,
}

/// Per-step DDPM coefficients for the update
/// `A^{k-1} = eta_k * (A^k - gamma_k * eps + N(0, sigma_k^2 I))`.
///
/// Step indices run from `K` (pure noise) down to `1`; the update at index
/// `k` produces the state at `k - 1`, and the update at `k = 1` injects no
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: BetaSchedule,
    betas: Vec<f64>,
    /// `alpha_bar[k]` for `k = 0..=K`, with `alpha_bar[0] = 1`.
    alpha_bars: Vec<f64>,
    eta: Vec<f64>,
    gamma: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine schedule with offset `s = 0.008` and betas capped at 0.999.
    pub fn squared_cosine(steps: usize) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("zero steps".into()));
        }
        let s = 0.008;
        let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let betas = (1..=steps)
            .map(|k| (1.0 - f(k as f64) / f(k as f64 - 1.0)).min(0.999))
            .collect();
        let mut sched = Self::from_betas(betas)?;
        sched.kind = BetaSchedule::SquaredCosine;
        Ok(sched)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::InvalidSchedule("zero steps".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for &b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        let (mut eta, mut gamma, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
        for k in 1..=betas.len() {
            let beta = betas[k - 1];
            let alpha = 1.0 - beta;
            let ab = alpha_bars[k];
            let ab_prev = alpha_bars[k - 1];
            let posterior_var = (1.0 - ab_prev) / (1.0 - ab) * beta;
            eta.push(1.0 / alpha.sqrt());
            gamma.push(beta / (1.0 - ab).sqrt());
            // Noise sits inside the parentheses, so divide out eta.
            sigma.push(posterior_var.sqrt() * alpha.sqrt());
        }
        let sched = Self {
            kind: BetaSchedule::Custom,
            betas,
            alpha_bars,
            eta,
            gamma,
            sigma,
        };
        if sched.eta.iter().chain(&sched.gamma).chain(&sched.sigma).any(|v| !v.is_finite()) {
            return Err(DiffusionError::InvalidSchedule("non-finite coefficient".into()));
        }
        Ok(sched)
    }

    pub fn kind(&self) -> BetaSchedule {
        self.kind
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cumulative signal fraction at step `k` (`k = 0` gives 1).
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn eta(&self, k: usize) -> f64 {
        self.eta[k - 1]
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma[k - 1]
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma[k - 1]
    }

    /// Forward noising `sqrt(ab_k) x0 + sqrt(1 - ab_k) eps`.
    pub fn add_noise(&self, x0: f64, eps: f64, k: usize) -> f64 {
        let ab = self.alpha_bars[k];
        ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    }
}
