use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BimodalToy, BimodalToyParams, DiscreteToySpec, LinearScm, ScmCoefficients, ScmConfig,
    StaticCovariate, StructuralModel, Trajectory,
};
use crate::error::{Error, Result};

/// Which data-generating process produced a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "coeffs", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear(ScmCoefficients),
    Bimodal(BimodalToyParams),
    Discrete(DiscreteToySpec),
}

impl ModelSpec {
    pub fn build(&self, config: &ScmConfig) -> Result<Box<dyn StructuralModel>> {
        let model: Box<dyn StructuralModel> = match self {
            ModelSpec::Linear(c) => Box::new(LinearScm::new(c.clone(), config)?),
            ModelSpec::Bimodal(p) => Box::new(BimodalToy::new(p.clone())?),
            ModelSpec::Discrete(s) => {
                s.validate()?;
                Box::new(s.clone())
            }
        };
        if model.history_len() != config.d {
            return Err(Error::Config(format!(
                "model has history length {} but config says d={}",
                model.history_len(),
                config.d
            )));
        }
        Ok(model)
    }

    pub fn outcome_dim(&self) -> usize {
        match self {
            ModelSpec::Bimodal(_) => 2,
            _ => 1,
        }
    }
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub spec: ModelSpec,
    #[serde(default)]
    pub beta0_override: Option<f64>,
    #[serde(default)]
    pub static_covariate: Option<StaticCovariate>,
}

impl DatasetHeader {
    pub fn new(spec: ModelSpec, config: &ScmConfig) -> Self {
        Self {
            d: config.d,
            horizon: config.horizon,
            m: spec.outcome_dim(),
            seed: config.seed,
            spec,
            beta0_override: config.beta0_override,
            static_covariate: config.static_covariate.clone(),
        }
    }

    pub fn config(&self, n_traj: usize) -> ScmConfig {
        ScmConfig {
            d: self.d,
            horizon: self.horizon,
            n_traj,
            seed: self.seed,
            beta0_override: self.beta0_override,
            static_covariate: self.static_covariate.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    i: usize,
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<Vec<f64>>,
    #[serde(default)]
    v: Option<f64>,
}

/// Write a header line followed by one JSON object per trajectory.
pub fn write_dataset(
    path: &Path,
    header: &DatasetHeader,
    trajectories: &[Trajectory],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for (i, tr) in trajectories.iter().enumerate() {
        let line = Line {
            i,
            x: tr.x.clone(),
            a: tr.a.clone(),
            y: tr.y.clone(),
            v: tr.v,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Trajectory>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or(Error::Empty("dataset file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line)?;
        if l.i != out.len() {
            return Err(Error::Config(format!(
                "{}: trajectory index {} out of order (expected {})",
                path.display(),
                l.i,
                out.len()
            )));
        }
        if l.x.len() != l.a.len()
            || l.y.len() != l.a.len()
            || l.y.iter().any(|y| y.len() != header.m)
        {
            return Err(Error::Config(format!(
                "{}: trajectory {} has inconsistent lengths",
                path.display(),
                l.i
            )));
        }
        out.push(Trajectory {
            x: l.x,
            a: l.a,
            y: l.y,
            v: l.v,
        });
    }
    Ok((header, out))
}
