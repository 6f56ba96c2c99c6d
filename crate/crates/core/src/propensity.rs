//! Propensity estimation and IPTW weights.
//!
//! A single per-step network predicts `P(A_τ = 1 | history)` from a
//! fixed-length encoding of the `d` most recent steps; a window's weight is
//! the inverse of the product of the predicted probabilities of its realised
//! treatments.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{
    column, losses, minibatch_train, value_and_grad, Activation, Mlp, MlpCheckpoint, TrainConfig,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scm::WindowSample;

pub use crate::scm::oracle_iptw;

/// Which history the per-step network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropensityInput {
    /// The `d` most recent steps, reaching back before the window start
    /// when the trajectory has them.
    #[default]
    Rolling,
    /// Only steps inside the window; earlier slots are zero.
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    #[serde(default)]
    pub input: PropensityInput,
    pub width: usize,
    pub depth: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            input: PropensityInput::Rolling,
            width: 32,
            depth: 2,
            train: TrainConfig::new(10, 256, 1e-3),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub d: usize,
    pub input: PropensityInput,
    /// Covariates are multiplied by this before entering the network.
    pub x_scale: f64,
    pub uses_v: bool,
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityCheckpoint {
    pub d: usize,
    pub input: PropensityInput,
    pub x_scale: f64,
    pub uses_v: bool,
    pub net: MlpCheckpoint,
}

/// Network input for window position `pos`: `d` treatment slots (the last
/// one, the current step, always zero) then `d` covariate slots ending at
/// the current step, then `v` if present.
fn encode(
    sample: &WindowSample,
    pos: usize,
    input: PropensityInput,
    x_scale: f64,
    uses_v: bool,
    out: &mut Vec<f64>,
) {
    let d = sample.d();
    let lead = d - 1;
    let a_at = |i: usize| {
        if i < lead {
            sample.a_lead[i]
        } else {
            sample.a_window[i - lead]
        }
    };
    let x_at = |i: usize| {
        if i < lead {
            sample.x_lead[i]
        } else {
            sample.x_window[i - lead]
        }
    };
    let visible = |i: usize| input == PropensityInput::Rolling || i >= lead;
    for k in 0..d {
        let i = pos + k;
        out.push(if k + 1 < d && visible(i) {
            f64::from(a_at(i))
        } else {
            0.0
        });
    }
    for k in 0..d {
        let i = pos + k;
        out.push(if visible(i) { x_at(i) * x_scale } else { 0.0 });
    }
    if uses_v {
        out.push(sample.v.unwrap_or(0.0));
    }
}

fn check_sample(sample: &WindowSample, d: usize) -> Result<()> {
    let ok = sample.a_window.len() == d
        && sample.x_window.len() == d
        && sample.a_lead.len() == d - 1
        && sample.x_lead.len() == d - 1;
    if !ok {
        return Err(Error::Dimension {
            context: "window sample history lengths",
            expected: d,
            actual: sample.a_window.len(),
        });
    }
    if sample.a_window.iter().chain(&sample.a_lead).any(|&a| a > 1) {
        return Err(Error::Config("treatments must be binary".into()));
    }
    Ok(())
}

/// One training row per distinct decision step. With rolling inputs a step
/// looks the same from every window containing it, so it is used once.
fn training_rows(samples: &[WindowSample], input: PropensityInput) -> Vec<(usize, usize)> {
    let mut seen = BTreeMap::new();
    for (si, s) in samples.iter().enumerate() {
        let d = s.d();
        for pos in 0..d {
            let step_time = (s.time + pos + 1).saturating_sub(d);
            let key = match input {
                PropensityInput::Rolling => (s.trajectory, step_time, 0),
                PropensityInput::Window => (s.trajectory, step_time, pos + 1),
            };
            seen.entry(key).or_insert((si, pos));
        }
    }
    seen.into_values().collect()
}

fn covariate_scale(samples: &[WindowSample]) -> f64 {
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for s in samples {
        for &x in &s.x_window {
            n += 1.0;
            sum += x;
            sq += x * x;
        }
    }
    let var = sq / n - (sum / n).powi(2);
    if var > 1e-12 && var.is_finite() {
        1.0 / var.sqrt()
    } else {
        1.0
    }
}

/// Fit the per-step network by minibatch binary cross-entropy.
pub fn fit_propensity(samples: &[WindowSample], cfg: &PropensityConfig) -> Result<PropensityModel> {
    let first = samples
        .first()
        .ok_or(Error::Empty("propensity training samples"))?;
    let d = first.d();
    for s in samples {
        check_sample(s, d)?;
    }
    let uses_v = first.v.is_some();
    let x_scale = covariate_scale(samples);
    let rows = training_rows(samples, cfg.input);
    let in_dim = 2 * d + usize::from(uses_v);

    let mut features = Vec::with_capacity(rows.len() * in_dim);
    let mut labels = Vec::with_capacity(rows.len());
    for &(si, pos) in &rows {
        encode(&samples[si], pos, cfg.input, x_scale, uses_v, &mut features);
        labels.push(f64::from(samples[si].a_window[pos]));
    }
    let features =
        Array2::from_shape_vec((rows.len(), in_dim), features).expect("row-major feature block");

    let mut rng = stream(cfg.seed, Purpose::Propensity, 0);
    let mut net = Mlp::with_hidden(
        in_dim,
        cfg.width,
        cfg.depth,
        1,
        Activation::Relu,
        Activation::Sigmoid,
        &mut rng,
    )?;

    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    if positives == 0 || positives == labels.len() {
        let class = u8::from(positives > 0);
        log::warn!(
            "all {} treatment labels equal {class}; propensity is degenerate",
            labels.len()
        );
        for w in net.weights_mut() {
            w.fill(0.0);
        }
        for b in net.biases_mut() {
            b.fill(0.0);
        }
        let last = net
            .biases_mut()
            .last_mut()
            .expect("network has an output layer");
        last.fill(if class == 1 { 40.0 } else { -40.0 });
        return Ok(PropensityModel {
            d,
            input: cfg.input,
            x_scale,
            uses_v,
            net,
        });
    }

    let mut params = net.blocks();
    let trace = minibatch_train(
        rows.len(),
        &mut params,
        &cfg.train,
        &mut rng,
        |p, idx, _| {
            let x = features.select(ndarray::Axis(0), idx);
            let y = column(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
            value_and_grad(p, |g, vars| {
                let input = g.constant(x);
                let target = g.constant(y);
                let prob = net.forward_graph(g, vars, input);
                losses::binary_cross_entropy(g, prob, target)
            })
        },
    )?;
    net.set_blocks(&params);
    log::info!(
        "propensity fit on {} steps, final cross-entropy {:.4}",
        rows.len(),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(PropensityModel {
        d,
        input: cfg.input,
        x_scale,
        uses_v,
        net,
    })
}

impl PropensityModel {
    /// `P(A = 1)` at window position `pos`.
    pub fn step_probability(&self, sample: &WindowSample, pos: usize) -> Result<f64> {
        check_sample(sample, self.d)?;
        let mut row = Vec::with_capacity(self.net.input_dim());
        encode(sample, pos, self.input, self.x_scale, self.uses_v, &mut row);
        Ok(self.net.forward(&row)?[0])
    }

    /// Mean cross-entropy over every distinct decision step in `samples`.
    pub fn cross_entropy(&self, samples: &[WindowSample]) -> Result<f64> {
        let rows = training_rows(samples, self.input);
        let mut total = 0.0;
        for &(si, pos) in &rows {
            let p = self.step_probability(&samples[si], pos)?;
            total -= if samples[si].a_window[pos] == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            };
        }
        Ok(total / rows.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self) -> PropensityCheckpoint {
        PropensityCheckpoint {
            d: self.d,
            input: self.input,
            x_scale: self.x_scale,
            uses_v: self.uses_v,
            net: self.net.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(c: &PropensityCheckpoint) -> Result<Self> {
        let net = Mlp::from_checkpoint(&c.net)?;
        let expected = 2 * c.d + usize::from(c.uses_v);
        if net.input_dim() != expected || net.output_dim() != 1 {
            return Err(Error::Dimension {
                context: "propensity network input",
                expected,
                actual: net.input_dim(),
            });
        }
        Ok(Self {
            d: c.d,
            input: c.input,
            x_scale: c.x_scale,
            uses_v: c.uses_v,
            net,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let c: PropensityCheckpoint = serde_json::from_reader(std::io::BufReader::new(f))?;
        Self::from_checkpoint(&c)
    }
}

/// `Π_τ 1 / f(a_τ | history)` using the fitted network.
pub fn compute_iptw(model: &PropensityModel, sample: &WindowSample) -> Result<f64> {
    let mut w = 1.0;
    for pos in 0..model.d {
        let p = model.step_probability(sample, pos)?;
        w /= if sample.a_window[pos] == 1 {
            p
        } else {
            1.0 - p
        };
    }
    Ok(w)
}

pub fn compute_all_iptw(model: &PropensityModel, samples: &[WindowSample]) -> Result<Vec<f64>> {
    samples.par_iter().map(|s| compute_iptw(model, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub normalize_by_mean: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            lower_percentile: 0.01,
            upper_percentile: 99.99,
            normalize_by_mean: true,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower_percentile
            && self.lower_percentile < self.upper_percentile
            && self.upper_percentile <= 100.0)
        {
            return Err(Error::Config(format!(
                "weight percentiles must satisfy 0 <= lower < upper <= 100, got {} and {}",
                self.lower_percentile, self.upper_percentile
            )));
        }
        Ok(())
    }
}

/// Percentile `q ∈ [0, 100]` of sorted data with linear interpolation
/// between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Truncation band: the interpolated percentile ranks rounded outward to
/// the nearest order statistics. Clamping at order statistics leaves them in
/// place, so a second truncation with the same config changes nothing.
pub fn truncation_bounds(sorted: &[f64], cfg: &WeightConfig) -> (f64, f64) {
    let last = sorted.len() - 1;
    let rank = |q: f64| q / 100.0 * last as f64;
    let lo = rank(cfg.lower_percentile).floor() as usize;
    let hi = (rank(cfg.upper_percentile).ceil() as usize).min(last);
    (sorted[lo], sorted[hi])
}

/// Clamp into the configured percentile band, then divide by the mean.
pub fn stabilize_weights(weights: &[f64], cfg: &WeightConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if weights.is_empty() {
        return Err(Error::Empty("weights"));
    }
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::NonFinite(format!(
            "weight {bad} is not a positive finite number"
        )));
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = truncation_bounds(&sorted, cfg);
    let mut out: Vec<f64> = weights.iter().map(|w| w.clamp(lo, hi)).collect();
    if cfg.normalize_by_mean {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|w| *w /= mean);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct WeightRow {
    sample_index: usize,
    weight: f64,
}

pub fn write_weights(path: &Path, weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for (i, &weight) in weights.iter().enumerate() {
        w.serialize(WeightRow {
            sample_index: i,
            weight,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: WeightRow = row?;
        if row.sample_index != out.len() {
            return Err(Error::Config(format!(
                "{}: weight rows out of order",
                path.display()
            )));
        }
        out.push(row.weight);
    }
    Ok(out)
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        }
    } else {
        Error::Csv(e)
    }
}
