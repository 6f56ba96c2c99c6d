use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{lag, StructuralModel};
use crate::diffgraph::sigmoid;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// How the latent mode `L_t` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeProbability {
    /// `P(L_t = 1)` is the mean of the covariates in the window.
    WindowMean,
    Constant(f64),
}

/// Two-dimensional bimodal outcome toy.
///
/// Covariates live in `(0, 1)`:
/// `X_t = σ(γ0 + γ_a A_{t-1} + γ_x (X_{t-1} - ½) + σ_η η_t)`, `X_0 ~ U(0,1)`.
/// Treatment: `P(A_t=1) = σ(β0 + β_a A_{t-1} + β_x (X_t - ½))`.
/// Outcome: a shared base level `b0 + Σ_k base_treatment[k] A_{t-d+1+k} + ε`
/// in both coordinates, with coordinate 0 raised by `elevation` when `L_t=1`
/// and coordinate 1 raised otherwise, plus independent jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalToyParams {
    pub gamma0: f64,
    pub gamma_a: f64,
    pub gamma_x: f64,
    pub covariate_noise_sd: f64,
    pub beta0: f64,
    pub beta_a: f64,
    pub beta_x: f64,
    pub mode: ModeProbability,
    pub base_intercept: f64,
    /// Oldest first; its length is the history length `d`.
    pub base_treatment: Vec<f64>,
    pub base_noise_variance: f64,
    pub elevation: f64,
    pub jitter_sd: f64,
}

impl Default for BimodalToyParams {
    fn default() -> Self {
        Self {
            gamma0: -0.75,
            gamma_a: 1.5,
            gamma_x: 3.0,
            covariate_noise_sd: 0.5,
            beta0: 0.0,
            beta_a: 0.0,
            beta_x: 6.0,
            mode: ModeProbability::WindowMean,
            base_intercept: 0.45,
            base_treatment: vec![-0.2, -0.15, -0.1],
            base_noise_variance: 0.001,
            elevation: 1.0,
            jitter_sd: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BimodalToy {
    pub params: BimodalToyParams,
}

impl BimodalToy {
    pub fn new(params: BimodalToyParams) -> Result<Self> {
        if params.base_treatment.is_empty() {
            return Err(Error::Config(
                "bimodal toy needs at least one base treatment coefficient".into(),
            ));
        }
        if let ModeProbability::Constant(p) = params.mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "mode probability {p} outside [0, 1]"
                )));
            }
        }
        if params.base_noise_variance < 0.0
            || params.jitter_sd < 0.0
            || params.covariate_noise_sd < 0.0
        {
            return Err(Error::Config(
                "bimodal toy noise scales must be non-negative".into(),
            ));
        }
        Ok(Self { params })
    }

    /// Hot coordinate: 0 when the latent mode is on, 1 otherwise.
    pub fn mode_probability(&self, x_through: &[f64]) -> f64 {
        match self.params.mode {
            ModeProbability::Constant(p) => p,
            ModeProbability::WindowMean => {
                let d = self.params.base_treatment.len();
                let k = d.min(x_through.len()).max(1);
                x_through[x_through.len().saturating_sub(k)..]
                    .iter()
                    .sum::<f64>()
                    / k as f64
            }
        }
    }
}

impl StructuralModel for BimodalToy {
    fn history_len(&self) -> usize {
        self.params.base_treatment.len()
    }

    fn outcome_dim(&self) -> usize {
        2
    }

    fn covariate_noise(&self, t: usize, rng: &mut SimRng) -> f64 {
        if t == 0 {
            rng.random()
        } else {
            rng.sample(StandardNormal)
        }
    }

    fn covariate(&self, a_past: &[u8], x_past: &[f64], _v: Option<f64>, noise: f64) -> f64 {
        if x_past.is_empty() {
            return noise;
        }
        let p = &self.params;
        sigmoid(
            p.gamma0
                + p.gamma_a * lag(a_past, 1)
                + p.gamma_x * (lag(x_past, 1) - 0.5)
                + p.covariate_noise_sd * noise,
        )
    }

    fn treatment_probability(&self, a_past: &[u8], x_through: &[f64], _v: Option<f64>) -> f64 {
        let p = &self.params;
        sigmoid(p.beta0 + p.beta_a * lag(a_past, 1) + p.beta_x * (lag(x_through, 1) - 0.5))
    }

    fn outcome_noise(&self, rng: &mut SimRng) -> Vec<f64> {
        vec![
            rng.random(),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ]
    }

    fn outcome(
        &self,
        a_through: &[u8],
        x_through: &[f64],
        _v: Option<f64>,
        noise: &[f64],
    ) -> Vec<f64> {
        let p = &self.params;
        let d = p.base_treatment.len();
        let mut base = p.base_intercept + p.base_noise_variance.sqrt() * noise[1];
        for (k, c) in p.base_treatment.iter().enumerate() {
            base += c * lag(a_through, d - k);
        }
        let hot = if noise[0] < self.mode_probability(x_through) {
            0
        } else {
            1
        };
        let mut y = vec![base + p.jitter_sd * noise[2], base + p.jitter_sd * noise[3]];
        y[hot] += p.elevation;
        y
    }
}
