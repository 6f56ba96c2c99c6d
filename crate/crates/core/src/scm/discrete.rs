use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{lag, StructuralModel};
use crate::diffgraph::sigmoid;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Probability mass function over integer outcomes.
pub type Pmf = BTreeMap<i64, f64>;

/// Integer-valued version of the linear SCM, small enough to enumerate.
///
/// Coefficient layout matches [`super::ScmCoefficients`]: intercept, then the
/// treatment block, then the covariate block, each newest lag first.
/// Covariates are clamped to `x_bounds`; noise terms take values from finite
/// supports given as `(value, probability)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteToySpec {
    pub d: usize,
    pub x0: Vec<(i64, f64)>,
    pub x_noise: Vec<(i64, f64)>,
    pub x_bounds: (i64, i64),
    pub gamma: Vec<i64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<i64>,
    pub y_noise: Vec<(i64, f64)>,
    /// Maximum number of transitions a single enumeration step may evaluate.
    pub path_budget: usize,
}

impl Default for DiscreteToySpec {
    /// A confounded `d = 2` toy: a high covariate makes treatment likelier,
    /// raises the outcome, and treatment feeds back into the covariate.
    fn default() -> Self {
        Self {
            d: 2,
            x0: vec![(0, 0.5), (1, 0.5)],
            x_noise: vec![(-1, 0.25), (0, 0.5), (1, 0.25)],
            x_bounds: (0, 2),
            gamma: vec![0, 1, 1],
            beta: vec![-1.5, 0.5, 1.2, 0.3],
            alpha: vec![0, 2, 1, 1, 1],
            y_noise: vec![(-1, 0.3), (0, 0.4), (1, 0.3)],
            path_budget: 1_000_000,
        }
    }
}

fn check_support(name: &str, s: &[(i64, f64)]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Config(format!("{name} support is empty")));
    }
    if s.iter().any(|&(_, p)| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Config(format!(
            "{name} has a negative or non-finite probability"
        )));
    }
    let total: f64 = s.iter().map(|&(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{name} probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn inverse_cdf(support: &[(i64, f64)], u: f64) -> i64 {
    let mut acc = 0.0;
    for &(v, p) in support {
        acc += p;
        if u < acc {
            return v;
        }
    }
    support[support.len() - 1].0
}

impl DiscreteToySpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Config("history length d must be positive".into()));
        }
        if self.alpha.len() != 2 * d + 1
            || self.beta.len() != 2 * d
            || self.gamma.len() != 2 * d - 1
        {
            return Err(Error::Config(format!(
                "discrete toy coefficient lengths ({}, {}, {}) do not fit d={d}",
                self.alpha.len(),
                self.beta.len(),
                self.gamma.len()
            )));
        }
        if self.x_bounds.0 > self.x_bounds.1 {
            return Err(Error::Config(
                "discrete toy covariate bounds are reversed".into(),
            ));
        }
        check_support("x0", &self.x0)?;
        check_support("x_noise", &self.x_noise)?;
        check_support("y_noise", &self.y_noise)?;
        Ok(())
    }

    fn next_covariate(&self, a_past: &[u8], x_past: &[f64], noise: i64) -> i64 {
        let d = self.d;
        let g = &self.gamma;
        let mut x = g[0] + noise;
        for l in 1..d {
            x += g[l] * lag(a_past, l) as i64 + g[d - 1 + l] * lag(x_past, l) as i64;
        }
        x.clamp(self.x_bounds.0, self.x_bounds.1)
    }

    fn outcome_mean(&self, a_through: &[u8], x_through: &[f64]) -> i64 {
        let d = self.d;
        let al = &self.alpha;
        let mut y = al[0];
        for l in 0..d {
            y += al[1 + l] * lag(a_through, l + 1) as i64
                + al[1 + d + l] * lag(x_through, l + 1) as i64;
        }
        y
    }

    /// Exact law of `Y(ā)` at the last step of a length-`horizon` trajectory.
    pub fn enumerate_counterfactual(&self, a_bar: &[u8], horizon: usize) -> Result<Pmf> {
        self.check_window(a_bar, horizon)?;
        let states = self.propagate(horizon, Some(a_bar))?;
        Ok(self.outcome_pmf(states.iter().map(|(s, &p)| (s, p))))
    }

    /// Exact observational law of `Y_{T-1}` given that the last `d`
    /// treatments equal `ā`.
    pub fn enumerate_observed_conditional(&self, a_bar: &[u8], horizon: usize) -> Result<Pmf> {
        self.check_window(a_bar, horizon)?;
        let states = self.propagate(horizon, None)?;
        let matching: Vec<_> = states
            .iter()
            .filter(|(s, _)| s.0 == a_bar)
            .map(|(s, &p)| (s, p))
            .collect();
        let mass: f64 = matching.iter().map(|(_, p)| p).sum();
        if mass <= 0.0 {
            return Err(Error::UnavailableCombination(super::combo_label(a_bar)));
        }
        let mut pmf = self.outcome_pmf(matching.into_iter());
        pmf.values_mut().for_each(|p| *p /= mass);
        Ok(pmf)
    }

    fn check_window(&self, a_bar: &[u8], horizon: usize) -> Result<()> {
        self.validate()?;
        if a_bar.len() != self.d {
            return Err(Error::Dimension {
                context: "discrete toy treatment window",
                expected: self.d,
                actual: a_bar.len(),
            });
        }
        if horizon < self.d {
            return Err(Error::Config(format!(
                "horizon {horizon} shorter than d={}",
                self.d
            )));
        }
        Ok(())
    }

    /// Distribution over the last `d` (treatment, covariate) values after
    /// `horizon` steps. When `clamp` is given the final `d` treatments are
    /// fixed to it; otherwise treatments follow the propensity throughout.
    fn propagate(
        &self,
        horizon: usize,
        clamp: Option<&[u8]>,
    ) -> Result<BTreeMap<(Vec<u8>, Vec<i64>), f64>> {
        let d = self.d;
        let start = horizon - d;
        let mut states: BTreeMap<(Vec<u8>, Vec<i64>), f64> = BTreeMap::new();
        states.insert((vec![0; d], vec![0; d]), 1.0);
        for t in 0..horizon {
            let x_branches = if t == 0 { &self.x0 } else { &self.x_noise };
            let work = states.len() * x_branches.len() * 2;
            if work > self.path_budget {
                return Err(Error::StateSpaceOverflow {
                    states: work,
                    budget: self.path_budget,
                });
            }
            let mut next = BTreeMap::new();
            for ((a_hist, x_hist), p_state) in &states {
                let xf: Vec<f64> = x_hist.iter().map(|&x| x as f64).collect();
                for &(value, q) in x_branches {
                    if q == 0.0 {
                        continue;
                    }
                    let xt = if t == 0 {
                        value
                    } else {
                        self.next_covariate(a_hist, &xf, value)
                    };
                    let mut x_new = x_hist[1..].to_vec();
                    x_new.push(xt);
                    let forced = match clamp {
                        Some(ab) if t >= start => Some(ab[t - start]),
                        _ => None,
                    };
                    let options: Vec<(u8, f64)> = match forced {
                        Some(a) => vec![(a, 1.0)],
                        None => {
                            let x_through: Vec<f64> = x_new.iter().map(|&x| x as f64).collect();
                            let p1 = self.propensity(a_hist, &x_through);
                            vec![(0, 1.0 - p1), (1, p1)]
                        }
                    };
                    for (a, pa) in options {
                        let mut a_new = a_hist[1..].to_vec();
                        a_new.push(a);
                        *next.entry((a_new, x_new.clone())).or_insert(0.0) += p_state * q * pa;
                    }
                }
            }
            states = next;
        }
        Ok(states)
    }

    fn propensity(&self, a_past: &[u8], x_through: &[f64]) -> f64 {
        let d = self.d;
        let b = &self.beta;
        let mut z = b[0];
        for l in 1..d {
            z += b[l] * lag(a_past, l);
        }
        for l in 0..d {
            z += b[d + l] * lag(x_through, l + 1);
        }
        sigmoid(z)
    }

    fn outcome_pmf<'a>(&self, states: impl Iterator<Item = (&'a (Vec<u8>, Vec<i64>), f64)>) -> Pmf {
        let mut pmf = Pmf::new();
        for ((a_hist, x_hist), p) in states {
            let xf: Vec<f64> = x_hist.iter().map(|&x| x as f64).collect();
            let mu = self.outcome_mean(a_hist, &xf);
            for &(e, q) in &self.y_noise {
                if q > 0.0 {
                    *pmf.entry(mu + e).or_insert(0.0) += p * q;
                }
            }
        }
        pmf
    }
}

impl StructuralModel for DiscreteToySpec {
    fn history_len(&self) -> usize {
        self.d
    }

    fn outcome_dim(&self) -> usize {
        1
    }

    fn covariate_noise(&self, _t: usize, rng: &mut SimRng) -> f64 {
        rng.random()
    }

    fn covariate(&self, a_past: &[u8], x_past: &[f64], _v: Option<f64>, noise: f64) -> f64 {
        if x_past.is_empty() {
            return inverse_cdf(&self.x0, noise) as f64;
        }
        self.next_covariate(a_past, x_past, inverse_cdf(&self.x_noise, noise)) as f64
    }

    fn treatment_probability(&self, a_past: &[u8], x_through: &[f64], _v: Option<f64>) -> f64 {
        self.propensity(a_past, x_through)
    }

    fn outcome_noise(&self, rng: &mut SimRng) -> Vec<f64> {
        vec![rng.random()]
    }

    fn outcome(
        &self,
        a_through: &[u8],
        x_through: &[f64],
        _v: Option<f64>,
        noise: &[f64],
    ) -> Vec<f64> {
        vec![
            (self.outcome_mean(a_through, x_through) + inverse_cdf(&self.y_noise, noise[0])) as f64,
        ]
    }
}

/// Empirical pmf of integer-valued samples with optional weights.
pub fn empirical_pmf(values: &[f64], weights: Option<&[f64]>) -> Pmf {
    let mut pmf = Pmf::new();
    let mut total = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        *pmf.entry(v.round() as i64).or_insert(0.0) += w;
        total += w;
    }
    if total > 0.0 {
        pmf.values_mut().for_each(|p| *p /= total);
    }
    pmf
}

pub fn total_variation(p: &Pmf, q: &Pmf) -> f64 {
    let keys: std::collections::BTreeSet<_> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
