use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{lag, ScmConfig, StructuralModel};
use crate::diffgraph::sigmoid;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Coefficients of the linear-logistic SCM.
///
/// Layout, with every block ordered from the most recent lag backwards:
///
/// * `alpha` (len `2d+1`): intercept, `A_t..A_{t-d+1}`, `X_t..X_{t-d+1}`
/// * `beta` (len `2d`): intercept, `A_{t-1}..A_{t-d+1}`, `X_t..X_{t-d+1}`
/// * `gamma` (len `2d-1`): intercept, `A_{t-1}..A_{t-d+1}`, `X_{t-1}..X_{t-d+1}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmCoefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Variance of the additive Gaussian outcome noise.
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
}

fn default_noise_variance() -> f64 {
    0.05
}

impl ScmCoefficients {
    /// Reference coefficient sets for `d ∈ {1, 3, 5}`.
    pub fn table4(d: usize) -> Result<Self> {
        let (alpha, beta, gamma) = match d {
            1 => (vec![-3.0, 2.0, -1.0], vec![-0.5, 0.5], vec![0.0]),
            3 => (
                vec![-1.0, 12.0, 6.0, 3.0, 2.0, 1.0, 0.5],
                vec![-0.5, 0.5, -0.5, 0.5, -0.5, 0.5],
                vec![-1.0, 1.5, 1.0, -1.5, -1.0],
            ),
            5 => (
                vec![-1.0, 12.0, 6.0, 3.0, 1.0, 0.5, 2.0, 1.0, 0.5, 0.1, 0.05],
                vec![-0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5],
                vec![-1.0, 1.5, 1.0, 0.5, 0.1, -1.5, -1.0, -0.5, -0.1],
            ),
            _ => {
                return Err(Error::Config(format!(
                    "no reference coefficients for d={d} (use 1, 3 or 5)"
                )))
            }
        };
        Ok(Self {
            alpha,
            beta,
            gamma,
            noise_variance: default_noise_variance(),
        })
    }

    pub fn d(&self) -> usize {
        (self.alpha.len().saturating_sub(1)) / 2
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} has {got} coefficients, expected {want} for d={d}"
                )))
            }
        };
        if d == 0 {
            return Err(Error::Config("history length d must be positive".into()));
        }
        check("alpha", self.alpha.len(), 2 * d + 1)?;
        check("beta", self.beta.len(), 2 * d)?;
        check("gamma", self.gamma.len(), 2 * d - 1)?;
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance {} must be finite and >= 0",
                self.noise_variance
            )));
        }
        let all = self.alpha.iter().chain(&self.beta).chain(&self.gamma);
        if all.clone().any(|c| !c.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// A per-trajectory scalar `V ~ U(low, high)` that shifts the covariate, the
/// treatment logit and the outcome linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticCovariate {
    pub low: f64,
    pub high: f64,
    pub coef_x: f64,
    pub coef_a: f64,
    pub coef_y: f64,
}

impl Default for StaticCovariate {
    fn default() -> Self {
        Self {
            low: -1.0,
            high: 1.0,
            coef_x: 0.5,
            coef_a: 0.5,
            coef_y: 1.0,
        }
    }
}

impl StaticCovariate {
    pub fn validate(&self) -> Result<()> {
        if !(self.low < self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::Config(format!(
                "static covariate range [{}, {}] is empty or not finite",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    pub coeffs: ScmCoefficients,
    d: usize,
    beta0: f64,
    noise_sd: f64,
    static_covariate: Option<StaticCovariate>,
}

impl LinearScm {
    pub fn new(coeffs: ScmCoefficients, config: &ScmConfig) -> Result<Self> {
        coeffs.validate(config.d)?;
        if let Some(sc) = &config.static_covariate {
            sc.validate()?;
        }
        let beta0 = config.beta0_override.unwrap_or(coeffs.beta[0]);
        if !beta0.is_finite() {
            return Err(Error::Config("beta0 override must be finite".into()));
        }
        Ok(Self {
            d: config.d,
            beta0,
            noise_sd: coeffs.noise_variance.sqrt(),
            static_covariate: config.static_covariate.clone(),
            coeffs,
        })
    }

    fn v_term(&self, v: Option<f64>, pick: impl Fn(&StaticCovariate) -> f64) -> f64 {
        match (&self.static_covariate, v) {
            (Some(sc), Some(v)) => pick(sc) * v,
            _ => 0.0,
        }
    }
}

impl StructuralModel for LinearScm {
    fn history_len(&self) -> usize {
        self.d
    }

    fn outcome_dim(&self) -> usize {
        1
    }

    fn static_covariate(&self, rng: &mut SimRng) -> Option<f64> {
        self.static_covariate
            .as_ref()
            .map(|sc| rng.random_range(sc.low..sc.high))
    }

    fn covariate_noise(&self, t: usize, rng: &mut SimRng) -> f64 {
        if t == 0 {
            rng.random()
        } else {
            0.0
        }
    }

    fn covariate(&self, a_past: &[u8], x_past: &[f64], v: Option<f64>, noise: f64) -> f64 {
        let vx = self.v_term(v, |s| s.coef_x);
        if x_past.is_empty() {
            return noise + vx;
        }
        let g = &self.coeffs.gamma;
        let d = self.d;
        let mut x = g[0] + vx;
        for l in 1..d {
            x += g[l] * lag(a_past, l) + g[d - 1 + l] * lag(x_past, l);
        }
        x
    }

    fn treatment_probability(&self, a_past: &[u8], x_through: &[f64], v: Option<f64>) -> f64 {
        let b = &self.coeffs.beta;
        let d = self.d;
        let mut z = self.beta0 + self.v_term(v, |s| s.coef_a);
        for l in 1..d {
            z += b[l] * lag(a_past, l);
        }
        for l in 0..d {
            z += b[d + l] * lag(x_through, l + 1);
        }
        sigmoid(z)
    }

    fn outcome_noise(&self, rng: &mut SimRng) -> Vec<f64> {
        vec![rng.sample(StandardNormal)]
    }

    fn outcome(
        &self,
        a_through: &[u8],
        x_through: &[f64],
        v: Option<f64>,
        noise: &[f64],
    ) -> Vec<f64> {
        let al = &self.coeffs.alpha;
        let d = self.d;
        let mut y = al[0] + self.v_term(v, |s| s.coef_y) + self.noise_sd * noise[0];
        for l in 0..d {
            y += al[1 + l] * lag(a_through, l + 1) + al[1 + d + l] * lag(x_through, l + 1);
        }
        vec![y]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::scm::{clamp_window, simulate_dataset, simulate_recorded};

    #[test]
    fn reference_sets_have_consistent_lengths() {
        for d in [1, 3, 5] {
            let c = ScmCoefficients::table4(d).unwrap();
            c.validate(d).unwrap();
            assert_eq!(c.d(), d);
        }
        assert!(ScmCoefficients::table4(2).is_err());
        assert!(ScmCoefficients::table4(3).unwrap().validate(1).is_err());
    }

    #[test]
    fn d1_covariate_is_initial_draw_then_zero() {
        let cfg = ScmConfig::new(1, 6, 20, 3);
        let m = LinearScm::new(ScmCoefficients::table4(1).unwrap(), &cfg).unwrap();
        for tr in simulate_dataset(&m, &cfg).unwrap() {
            assert!((0.0..=1.0).contains(&tr.x[0]));
            assert!(tr.x[1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn d1_noise_free_outcome() {
        let mut c = ScmCoefficients::table4(1).unwrap();
        c.noise_variance = 0.0;
        let m = LinearScm::new(c, &ScmConfig::new(1, 5, 1, 0)).unwrap();
        // Y = -3 + 2·1 - 1·X, X = 0 after the first step
        assert_eq!(m.outcome(&[0, 1], &[0.3, 0.0], None, &[0.7]), vec![-1.0]);
        assert_eq!(m.outcome(&[0], &[0.5], None, &[0.0]), vec![-3.5]);
    }

    #[test]
    fn recent_lag_gets_first_block_coefficient() {
        let cfg = ScmConfig::new(3, 5, 1, 0);
        let mut c = ScmCoefficients::table4(3).unwrap();
        c.noise_variance = 0.0;
        let m = LinearScm::new(c, &cfg).unwrap();
        // only A_t = 1, zero covariates
        assert_eq!(
            m.outcome(&[0, 0, 1], &[0.0; 3], None, &[0.0]),
            vec![-1.0 + 12.0]
        );
        assert_eq!(
            m.outcome(&[1, 0, 0], &[0.0; 3], None, &[0.0]),
            vec![-1.0 + 3.0]
        );
        // X_t = γ0 + γ1 A_{t-1} + γ2 A_{t-2} + γ3 X_{t-1} + γ4 X_{t-2}
        let x = m.covariate(&[1, 0], &[2.0, 1.0], None, 0.0);
        assert_eq!(x, -1.0 + 1.0 - 1.5 * 1.0 - 1.0 * 2.0);
    }

    #[test]
    fn beta0_override_moves_propensity() {
        let mut cfg = ScmConfig::new(1, 5, 1, 0);
        let c = ScmCoefficients::table4(1).unwrap();
        let base = LinearScm::new(c.clone(), &cfg).unwrap();
        cfg.beta0_override = Some(3.0);
        let shifted = LinearScm::new(c, &cfg).unwrap();
        let p0 = base.treatment_probability(&[], &[0.0], None);
        let p1 = shifted.treatment_probability(&[], &[0.0], None);
        assert!((p0 - sigmoid(-0.5)).abs() < 1e-15);
        assert!((p1 - sigmoid(3.0)).abs() < 1e-15);
    }

    #[test]
    fn clamp_with_observed_treatments_reproduces_outcome() {
        let cfg = ScmConfig::new(3, 30, 1, 0);
        let m = LinearScm::new(ScmCoefficients::table4(3).unwrap(), &cfg).unwrap();
        for i in 0..20 {
            let mut rng = stream(5, Purpose::Simulation, i);
            let (tr, rec) = simulate_recorded(&m, 30, None, &mut rng);
            for end in 2..30 {
                let abar = &tr.a[end - 2..=end];
                let y = clamp_window(&m, &tr, &rec, end, abar, &rec.outcome[end]);
                assert_eq!(y, tr.y[end]);
            }
        }
    }

    #[test]
    fn static_covariate_enters_each_equation() {
        let mut cfg = ScmConfig::new(1, 5, 1, 0);
        cfg.static_covariate = Some(StaticCovariate::default());
        let mut c = ScmCoefficients::table4(1).unwrap();
        c.noise_variance = 0.0;
        let m = LinearScm::new(c, &cfg).unwrap();
        assert_eq!(m.outcome(&[0], &[0.0], Some(1.0), &[0.0])[0], -3.0 + 1.0);
        assert_eq!(m.covariate(&[0], &[0.2], Some(-1.0), 0.0), -0.5);
        let p = m.treatment_probability(&[], &[0.0], Some(1.0));
        assert!((p - sigmoid(0.0)).abs() < 1e-15);
    }
}
