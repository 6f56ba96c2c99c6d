//! IPTW-weighted conditional generators: a conditional VAE and a
//! classifier-free-guided diffusion model, plus their unweighted twins.
//!
//! Both are trained on `(y, ā[, v])` pairs with every sample's loss multiplied
//! by its (stabilized) weight, and both generate outcome draws for a chosen
//! treatment window.

mod cvae;
mod diffusion;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use cvae::{default_latent_dim, gaussian_kl, CvaeCheckpoint, CvaeConfig, CvaeModel, ElboTerms};
pub use diffusion::{
    forward_noise, time_features, DiffusionCheckpoint, DiffusionConfig, DiffusionModel, NoiseDraw,
    Schedule, TIME_FEATURES,
};

use crate::diffgraph::{column, minibatch_train, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scm::WindowSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Mscvae,
    Msdiffusion,
    CvaeUnweighted,
    DiffusionUnweighted,
}

impl GeneratorKind {
    pub fn weighted(self) -> bool {
        matches!(self, GeneratorKind::Mscvae | GeneratorKind::Msdiffusion)
    }

    pub fn is_diffusion(self) -> bool {
        matches!(
            self,
            GeneratorKind::Msdiffusion | GeneratorKind::DiffusionUnweighted
        )
    }
}

/// Conditioning vector: the window as raw 0/1 values, then `v` if used.
pub(crate) fn condition_row(a_bar: &[u8], v: Option<f64>, uses_v: bool) -> Vec<f64> {
    let mut row: Vec<f64> = a_bar.iter().map(|&a| f64::from(a)).collect();
    if uses_v {
        row.push(v.unwrap_or(0.0));
    }
    row
}

/// Per-coordinate affine map to zero mean, unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(m: usize) -> Self {
        Self {
            shift: vec![0.0; m],
            scale: vec![1.0; m],
        }
    }

    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("outcomes"))?;
        let m = first.len();
        let n = rows.len() as f64;
        let mut shift = vec![0.0; m];
        for r in rows {
            for k in 0..m {
                shift[k] += r[k] / n;
            }
        }
        let mut var = vec![0.0; m];
        for r in rows {
            for k in 0..m {
                var[k] += (r[k] - shift[k]).powi(2) / n;
            }
        }
        let scale = var
            .iter()
            .map(|&v| if v > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { shift, scale })
    }

    pub fn forward_row(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(y, (s, c))| (y - s) / c)
            .collect()
    }

    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(z, (s, c))| z * c + s)
            .collect()
    }

    /// `Σ log scale`: subtract from a standardized log-density to get the
    /// raw-scale one.
    pub fn log_jacobian(&self) -> f64 {
        self.scale.iter().map(|c| c.ln()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub train: TrainConfig,
    pub seed: u64,
    #[serde(default)]
    pub cvae: CvaeConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
}

impl GeneratorSpec {
    /// Batch 256; lr 1e-3 for 100 epochs (CVAE) or 1e-4 for 50 (diffusion).
    pub fn new(kind: GeneratorKind, seed: u64) -> Self {
        let train = if kind.is_diffusion() {
            TrainConfig::new(50, 256, 1e-4)
        } else {
            TrainConfig::new(100, 256, 1e-3)
        };
        Self {
            kind,
            train,
            seed,
            cvae: CvaeConfig::default(),
            diffusion: DiffusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorModel {
    Cvae(CvaeModel),
    Diffusion(DiffusionModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGenerator {
    pub kind: GeneratorKind,
    pub model: GeneratorModel,
    /// Mean minibatch loss per epoch.
    pub trace: Vec<f64>,
}

impl TrainedGenerator {
    pub fn d(&self) -> usize {
        match &self.model {
            GeneratorModel::Cvae(m) => m.d,
            GeneratorModel::Diffusion(m) => m.d,
        }
    }

    pub fn m(&self) -> usize {
        match &self.model {
            GeneratorModel::Cvae(m) => m.m,
            GeneratorModel::Diffusion(m) => m.m,
        }
    }

    pub fn uses_v(&self) -> bool {
        match &self.model {
            GeneratorModel::Cvae(m) => m.uses_v,
            GeneratorModel::Diffusion(m) => m.uses_v,
        }
    }

    /// `n` draws for `ā`; `v_range` draws the static covariate uniformly from
    /// an interval (pass `(v, v)` for a fixed value).
    pub fn generate(
        &self,
        a_bar: &[u8],
        v_range: Option<(f64, f64)>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        match &self.model {
            GeneratorModel::Cvae(m) => m.generate(a_bar, v_range, n, seed),
            GeneratorModel::Diffusion(m) => m.generate(a_bar, v_range, n, seed),
        }
    }

    pub fn to_checkpoint(&self) -> GeneratorCheckpoint {
        match &self.model {
            GeneratorModel::Cvae(m) => GeneratorCheckpoint {
                kind: self.kind,
                r: Some(m.r),
                steps: None,
                guidance_w: None,
                schedule: None,
                trace: self.trace.clone(),
                cvae: Some(m.to_checkpoint()),
                diffusion: None,
            },
            GeneratorModel::Diffusion(m) => GeneratorCheckpoint {
                kind: self.kind,
                r: None,
                steps: Some(m.schedule.steps()),
                guidance_w: Some(m.guidance_w),
                schedule: Some(m.schedule.gammas.clone()),
                trace: self.trace.clone(),
                cvae: None,
                diffusion: Some(m.to_checkpoint()),
            },
        }
    }

    pub fn from_checkpoint(c: &GeneratorCheckpoint) -> Result<Self> {
        let model = match (c.kind.is_diffusion(), &c.cvae, &c.diffusion) {
            (false, Some(cv), _) => GeneratorModel::Cvae(CvaeModel::from_checkpoint(cv)?),
            (true, _, Some(df)) => {
                let gammas = c
                    .schedule
                    .clone()
                    .ok_or_else(|| Error::Config("diffusion checkpoint lacks a schedule".into()))?;
                let mut model =
                    DiffusionModel::from_checkpoint(df, Schedule::from_gammas(gammas)?)?;
                if let Some(w) = c.guidance_w {
                    model.guidance_w = w;
                }
                GeneratorModel::Diffusion(model)
            }
            _ => {
                return Err(Error::Config(format!(
                    "checkpoint body does not match kind {:?}",
                    c.kind
                )))
            }
        };
        Ok(Self {
            kind: c.kind,
            model,
            trace: c.trace.clone(),
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
        let c: GeneratorCheckpoint = serde_json::from_reader(BufReader::new(f))?;
        Self::from_checkpoint(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheckpoint {
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvae: Option<CvaeCheckpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionCheckpoint>,
}

/// Training data laid out as matrices.
struct Design {
    y_std: Array2<f64>,
    cond: Array2<f64>,
    weights: Vec<f64>,
}

fn design(
    samples: &[WindowSample],
    weights: &[f64],
    weighted: bool,
    standardizer: &Standardizer,
    uses_v: bool,
) -> Design {
    let n = samples.len();
    let m = samples[0].y.len();
    let c = samples[0].d() + usize::from(uses_v);
    let mut y_std = Array2::zeros((n, m));
    let mut cond = Array2::zeros((n, c));
    for (i, s) in samples.iter().enumerate() {
        for (k, v) in standardizer.forward_row(&s.y).into_iter().enumerate() {
            y_std[[i, k]] = v;
        }
        for (j, v) in condition_row(&s.a_window, s.v, uses_v)
            .into_iter()
            .enumerate()
        {
            cond[[i, j]] = v;
        }
    }
    let weights = if weighted {
        weights.to_vec()
    } else {
        vec![1.0; n]
    };
    Design {
        y_std,
        cond,
        weights,
    }
}

/// Minimise `-(1/N) Σ_i w_i · bound_i` by minibatch Adam. Unweighted kinds
/// ignore `weights` and use 1 for every sample.
pub fn train_generator(
    spec: &GeneratorSpec,
    samples: &[WindowSample],
    weights: &[f64],
) -> Result<TrainedGenerator> {
    let first = samples
        .first()
        .ok_or(Error::Empty("generator training samples"))?;
    if weights.len() != samples.len() {
        return Err(Error::Dimension {
            context: "one weight per training sample",
            expected: samples.len(),
            actual: weights.len(),
        });
    }
    if spec.kind.weighted() {
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::NonFinite(format!("training weight {bad}")));
        }
    }
    let d = first.d();
    let m = first.y.len();
    let uses_v = first.v.is_some();
    if samples
        .iter()
        .any(|s| s.d() != d || s.y.len() != m || s.v.is_some() != uses_v)
    {
        return Err(Error::Config(
            "training samples disagree on d, m or the static covariate".into(),
        ));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.y.as_slice()).collect();
    let standardizer = Standardizer::fit(&rows)?;
    let data = design(
        samples,
        weights,
        spec.kind.weighted(),
        &standardizer,
        uses_v,
    );

    let mut init_rng = stream(spec.seed, Purpose::Init, 0);
    let mut rng = stream(spec.seed, Purpose::Training, 0);
    let n = samples.len();
    let batch = |idx: &[usize]| {
        let y = data.y_std.select(Axis(0), idx);
        let cond = data.cond.select(Axis(0), idx);
        let w = column(&idx.iter().map(|&i| data.weights[i]).collect::<Vec<_>>());
        (y, cond, w)
    };

    if spec.kind.is_diffusion() {
        let mut model =
            DiffusionModel::new(d, m, uses_v, &spec.diffusion, standardizer, &mut init_rng)?;
        let mut params = model.params();
        let trace = minibatch_train(n, &mut params, &spec.train, &mut rng, |p, idx, rng| {
            let (y, cond, w) = batch(idx);
            let y_rows: Vec<Vec<f64>> = y.outer_iter().map(|r| r.to_vec()).collect();
            model.batch_loss(p, &y_rows, cond, w, rng)
        })?;
        model.set_params(&params);
        Ok(TrainedGenerator {
            kind: spec.kind,
            model: GeneratorModel::Diffusion(model),
            trace,
        })
    } else {
        let mut model = CvaeModel::new(d, m, uses_v, &spec.cvae, standardizer, &mut init_rng)?;
        let mut params = model.params();
        let trace = minibatch_train(n, &mut params, &spec.train, &mut rng, |p, idx, rng| {
            let (y, cond, w) = batch(idx);
            model.batch_loss(p, y, cond, w, rng)
        })?;
        model.set_params(&params);
        Ok(TrainedGenerator {
            kind: spec.kind,
            model: GeneratorModel::Cvae(model),
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_round_trips() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = Standardizer::fit(&refs).unwrap();
        assert_eq!(s.shift, vec![3.0, 10.0]);
        assert_eq!(s.scale[1], 1.0);
        let z = s.forward_row(&rows[2]);
        assert!((z[0] - (2.0 / (8.0f64 / 3.0).sqrt())).abs() < 1e-12);
        let back = s.inverse_row(&z);
        assert!((back[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn kinds_report_weighting() {
        assert!(GeneratorKind::Mscvae.weighted());
        assert!(!GeneratorKind::DiffusionUnweighted.weighted());
        assert!(GeneratorKind::Msdiffusion.is_diffusion());
        let json = serde_json::to_string(&GeneratorKind::CvaeUnweighted).unwrap();
        assert_eq!(json, "\"cvae_unweighted\"");
    }

    #[test]
    fn schedule_is_monotone() {
        let s = Schedule::linear(200, 1e-4, 0.1).unwrap();
        assert!(s.lambda_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.lambda_bar(200) < 1e-4);
        assert!(Schedule::linear(10, 0.0, 0.1).is_err());
        assert!(Schedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn kl_closed_form() {
        assert!((gaussian_kl(0.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(gaussian_kl(0.3, 2.0, 0.3, 2.0), 0.0);
    }
}
