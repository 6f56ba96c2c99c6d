//! Data-generating processes for longitudinal observational data.
//!
//! A [`StructuralModel`] describes one step of the covariate / treatment /
//! outcome recurrence. [`simulate_dataset`] rolls trajectories forward,
//! [`windowize`] cuts them into `(y, ā, x̄)` training tuples, and
//! [`sample_counterfactual`] draws exact samples of `Y(ā)` by re-running the
//! final `d` steps with the treatments clamped.
//!
//! Conventions used throughout:
//!
//! * windows are oldest-first: `a_window[0] = A_{t-d+1}`, `a_window[d-1] = A_t`;
//! * a treatment combination label is the window written oldest-first, e.g.
//!   `"011"` means `A_{t-2}=0, A_{t-1}=1, A_t=1`;
//! * history before the start of a trajectory contributes zero.

mod bimodal;
mod discrete;
mod io;
mod linear;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bimodal::{BimodalToy, BimodalToyParams, ModeProbability};
pub use discrete::{empirical_pmf, total_variation, DiscreteToySpec, Pmf};
pub use io::{read_dataset, write_dataset, DatasetHeader, ModelSpec};
pub use linear::{LinearScm, ScmCoefficients, StaticCovariate};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, SimRng};

/// One step of a longitudinal structural causal model.
///
/// All methods receive history slices in time order. `a_past`/`x_past` hold
/// values strictly before the current step; `*_through` include it.
pub trait StructuralModel: Send + Sync {
    /// History length `d`.
    fn history_len(&self) -> usize;

    /// Outcome dimension `m`.
    fn outcome_dim(&self) -> usize;

    fn static_covariate(&self, _rng: &mut SimRng) -> Option<f64> {
        None
    }

    /// Noise consumed by [`StructuralModel::covariate`] at step `t`.
    fn covariate_noise(&self, t: usize, rng: &mut SimRng) -> f64;

    fn covariate(&self, a_past: &[u8], x_past: &[f64], v: Option<f64>, noise: f64) -> f64;

    /// `P(A_t = 1 | Ā_{t-1}, X̄_t)`.
    fn treatment_probability(&self, a_past: &[u8], x_through: &[f64], v: Option<f64>) -> f64;

    fn outcome_noise(&self, rng: &mut SimRng) -> Vec<f64>;

    fn outcome(
        &self,
        a_through: &[u8],
        x_through: &[f64],
        v: Option<f64>,
        noise: &[f64],
    ) -> Vec<f64>;
}

/// Simulation settings shared by every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default)]
    pub beta0_override: Option<f64>,
    #[serde(default)]
    pub static_covariate: Option<StaticCovariate>,
}

impl ScmConfig {
    pub fn new(d: usize, horizon: usize, n_traj: usize, seed: u64) -> Self {
        Self {
            d,
            horizon,
            n_traj,
            seed,
            beta0_override: None,
            static_covariate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("history length d must be positive".into()));
        }
        if self.horizon < self.d {
            return Err(Error::Config(format!(
                "trajectory length T={} must be at least d={}",
                self.horizon, self.d
            )));
        }
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        if let Some(sc) = &self.static_covariate {
            sc.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub a: Vec<u8>,
    pub y: Vec<Vec<f64>>,
    pub v: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Noise consumed while simulating a trajectory, kept so the counterfactual
/// clamp can replay the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub covariate: Vec<f64>,
    pub outcome: Vec<Vec<f64>>,
}

/// One training tuple ending at time `time` of trajectory `trajectory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub y: Vec<f64>,
    pub a_window: Vec<u8>,
    pub x_window: Vec<f64>,
    pub v: Option<f64>,
    /// The `d-1` treatments before the window (oldest first, zero-padded).
    pub a_lead: Vec<u8>,
    /// The `d-1` covariates before the window (oldest first, zero-padded).
    pub x_lead: Vec<f64>,
    pub trajectory: usize,
    pub time: usize,
}

impl WindowSample {
    pub fn d(&self) -> usize {
        self.a_window.len()
    }

    pub fn combo(&self) -> String {
        combo_label(&self.a_window)
    }

    /// Treatment history through window position `pos`, lead-in included.
    pub fn treatments_through(&self, pos: usize) -> Vec<u8> {
        let mut out = self.a_lead.clone();
        out.extend_from_slice(&self.a_window[..=pos]);
        out
    }

    pub fn covariates_through(&self, pos: usize) -> Vec<f64> {
        let mut out = self.x_lead.clone();
        out.extend_from_slice(&self.x_window[..=pos]);
        out
    }
}

/// How the counterfactual oracle places the clamped window in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleHorizon {
    /// Clamp the last `d` steps of a length-`T` trajectory.
    Final,
    /// Clamp a window ending at a time drawn uniformly from `d-1..T`, i.e.
    /// the same time distribution [`windowize`] produces.
    #[default]
    Pooled,
}

pub fn combo_label(a: &[u8]) -> String {
    a.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

pub fn parse_combo(label: &str) -> Result<Vec<u8>> {
    label
        .chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Config(format!(
                "bad treatment combination {label:?} (char {other:?})"
            ))),
        })
        .collect()
}

/// All `2^d` combinations, oldest position most significant.
pub fn all_combos(d: usize) -> Vec<Vec<u8>> {
    (0..1usize << d)
        .map(|code| (0..d).map(|k| ((code >> (d - 1 - k)) & 1) as u8).collect())
        .collect()
}

/// Value of the `lag`-th most recent entry (`lag = 1` is the last element), or
/// zero before the start of the history.
pub(crate) fn lag<T: Copy + Into<f64>>(hist: &[T], lag: usize) -> f64 {
    if lag == 0 || lag > hist.len() {
        0.0
    } else {
        hist[hist.len() - lag].into()
    }
}

/// Simulate one trajectory of length `len`, recording the noise.
pub fn simulate_recorded<M: StructuralModel + ?Sized>(
    model: &M,
    len: usize,
    v: Option<f64>,
    rng: &mut SimRng,
) -> (Trajectory, NoiseRecord) {
    let mut x = Vec::with_capacity(len);
    let mut a = Vec::with_capacity(len);
    let mut y = Vec::with_capacity(len);
    let mut rec = NoiseRecord {
        covariate: Vec::with_capacity(len),
        outcome: Vec::with_capacity(len),
    };
    for t in 0..len {
        let xi = model.covariate_noise(t, rng);
        let xt = model.covariate(&a, &x, v, xi);
        x.push(xt);
        let p = model.treatment_probability(&a, &x, v);
        let u: f64 = rng.random();
        a.push(u8::from(u < p));
        let eps = model.outcome_noise(rng);
        y.push(model.outcome(&a, &x, v, &eps));
        rec.covariate.push(xi);
        rec.outcome.push(eps);
    }
    (Trajectory { x, a, y, v }, rec)
}

/// Simulate `config.n_traj` trajectories; trajectory `i` uses its own stream,
/// so the result is independent of scheduling.
pub fn simulate_dataset<M: StructuralModel + ?Sized>(
    model: &M,
    config: &ScmConfig,
) -> Result<Vec<Trajectory>> {
    config.validate()?;
    if model.history_len() != config.d {
        return Err(Error::Config(format!(
            "model history length {} does not match config d={}",
            model.history_len(),
            config.d
        )));
    }
    Ok((0..config.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, Purpose::Simulation, i as u64);
            let v = model.static_covariate(&mut rng);
            simulate_recorded(model, config.horizon, v, &mut rng).0
        })
        .collect())
}

/// One sample per window end `t ∈ [d-1, T-1]` (zero-based), in trajectory
/// then time order.
pub fn windowize(trajectories: &[Trajectory], d: usize) -> Result<Vec<WindowSample>> {
    if d == 0 {
        return Err(Error::Config("history length d must be positive".into()));
    }
    let mut out = Vec::new();
    for (i, tr) in trajectories.iter().enumerate() {
        if tr.len() < d {
            return Err(Error::TrajectoryTooShort {
                index: i,
                len: tr.len(),
                d,
            });
        }
        for end in d - 1..tr.len() {
            let start = end + 1 - d;
            let (a_lead, x_lead) = lead_in(tr, start, d);
            out.push(WindowSample {
                y: tr.y[end].clone(),
                a_window: tr.a[start..=end].to_vec(),
                x_window: tr.x[start..=end].to_vec(),
                v: tr.v,
                a_lead,
                x_lead,
                trajectory: i,
                time: end,
            });
        }
    }
    Ok(out)
}

fn lead_in(tr: &Trajectory, start: usize, d: usize) -> (Vec<u8>, Vec<f64>) {
    let n = d - 1;
    let mut a = vec![0u8; n];
    let mut x = vec![0.0; n];
    for k in 0..n {
        // position k holds time start - n + k
        if let Some(t) = (start + k).checked_sub(n) {
            a[k] = tr.a[t];
            x[k] = tr.x[t];
        }
    }
    (a, x)
}

/// Re-run steps `end-d+1..=end` of a recorded trajectory with the treatments
/// set to `a_bar`, regenerating covariates from the recorded noise, and
/// return the outcome at `end` under `outcome_noise`.
pub fn clamp_window<M: StructuralModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    noise: &NoiseRecord,
    end: usize,
    a_bar: &[u8],
    outcome_noise: &[f64],
) -> Vec<f64> {
    let d = a_bar.len();
    let start = end + 1 - d;
    let mut a: Vec<u8> = traj.a[..start].to_vec();
    let mut x: Vec<f64> = traj.x[..start].to_vec();
    for (k, tau) in (start..=end).enumerate() {
        let xt = model.covariate(&a, &x, traj.v, noise.covariate[tau]);
        x.push(xt);
        a.push(a_bar[k]);
    }
    model.outcome(&a, &x, traj.v, outcome_noise)
}

/// What to draw from the counterfactual oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub horizon: usize,
    pub mode: OracleHorizon,
    pub seed: u64,
    /// Restrict the static covariate to a sub-interval (subgroup oracle).
    pub v_range: Option<(f64, f64)>,
}

impl OracleRequest {
    pub fn new(config: &ScmConfig, mode: OracleHorizon) -> Self {
        Self {
            horizon: config.horizon,
            mode,
            seed: config.seed,
            v_range: None,
        }
    }
}

/// `n` exact draws of `Y(ā)`.
///
/// Draw `i` uses the same random stream for every `ā`, so oracle samples for
/// different combinations are coupled (common random numbers).
pub fn sample_counterfactual<M: StructuralModel + ?Sized>(
    model: &M,
    req: &OracleRequest,
    a_bar: &[u8],
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = model.history_len();
    if a_bar.len() != d {
        return Err(Error::Dimension {
            context: "counterfactual treatment window",
            expected: d,
            actual: a_bar.len(),
        });
    }
    if a_bar.iter().any(|&a| a > 1) {
        return Err(Error::Config("treatments must be 0 or 1".into()));
    }
    if req.horizon < d {
        return Err(Error::Config(format!(
            "oracle horizon {} shorter than d={d}",
            req.horizon
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(req.seed, Purpose::Oracle, i as u64);
            let end = match req.mode {
                OracleHorizon::Final => req.horizon - 1,
                OracleHorizon::Pooled => rng.random_range(d - 1..req.horizon),
            };
            let v = match req.v_range {
                Some((lo, hi)) => Some(rng.random_range(lo..=hi)),
                None => model.static_covariate(&mut rng),
            };
            let (traj, rec) = simulate_recorded(model, end + 1, v, &mut rng);
            clamp_window(model, &traj, &rec, end, a_bar, &rec.outcome[end])
        })
        .collect())
}

/// True-propensity product `Π_τ P(a_τ | full history)` inverted, using the
/// window's lead-in history.
pub fn oracle_iptw<M: StructuralModel + ?Sized>(model: &M, sample: &WindowSample) -> f64 {
    let d = sample.d();
    let mut denom = 1.0;
    for pos in 0..d {
        let mut a_past = sample.a_lead.clone();
        a_past.extend_from_slice(&sample.a_window[..pos]);
        let x_through = sample.covariates_through(pos);
        let p = model.treatment_probability(&a_past, &x_through, sample.v);
        denom *= if sample.a_window[pos] == 1 {
            p
        } else {
            1.0 - p
        };
    }
    1.0 / denom
}
