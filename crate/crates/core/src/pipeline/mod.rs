//! End-to-end experiment: simulate, weight, train, generate, evaluate.
//!
//! Every stage reads what the previous one wrote under the output directory,
//! so running the stages one by one gives the same files as [`run_pipeline`].
//!
//! ```text
//! <out>/config.json
//! <out>/dataset.jsonl
//! <out>/propensity.json        (absent with oracle weights)
//! <out>/weights.csv
//! <out>/models/<label>.json
//! <out>/samples/<label>.csv
//! <out>/metrics.csv, metrics.json, summary.csv
//! <out>/histograms/<label>/<combo>.csv
//! ```

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    AllCombos, ComboSelection, EvalSection, ExperimentConfig, MethodConfig, MethodEntry,
    MethodKind, Preset, PropensitySection, ScmSection, VGroup, DEFAULT_BANDWIDTH,
};

use crate::baselines::{kde_fit, train_msm_nn, KdeModel, MsmCheckpoint, MsmRegressor};
use crate::error::{Error, Result};
use crate::eval::{
    argmax_projector, evaluate_all, histogram, EvalOptions, MethodSamples, MetricsReport,
};
use crate::generators::{train_generator, GeneratorCheckpoint, TrainedGenerator};
use crate::propensity::{
    compute_all_iptw, csv_io, fit_propensity, oracle_iptw, read_weights, stabilize_weights,
    write_weights,
};
use crate::rng::{derive_seed, label_salt};
use crate::scm::{
    parse_combo, read_dataset, sample_counterfactual, simulate_dataset, windowize, write_dataset,
    DatasetHeader, OracleRequest, WindowSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    FitPropensity,
    Train,
    Generate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Simulate,
        Stage::FitPropensity,
        Stage::Train,
        Stage::Generate,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::FitPropensity => "fit-propensity",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Fixed file names under the output directory.
pub mod artifacts {
    use std::path::{Path, PathBuf};

    pub fn config(out: &Path) -> PathBuf {
        out.join("config.json")
    }
    pub fn dataset(out: &Path) -> PathBuf {
        out.join("dataset.jsonl")
    }
    pub fn propensity(out: &Path) -> PathBuf {
        out.join("propensity.json")
    }
    pub fn weights(out: &Path) -> PathBuf {
        out.join("weights.csv")
    }
    pub fn model(out: &Path, label: &str) -> PathBuf {
        out.join("models").join(format!("{label}.json"))
    }
    pub fn samples(out: &Path, label: &str) -> PathBuf {
        out.join("samples").join(format!("{label}.csv"))
    }
    pub fn metrics_csv(out: &Path) -> PathBuf {
        out.join("metrics.csv")
    }
    pub fn metrics_json(out: &Path) -> PathBuf {
        out.join("metrics.json")
    }
    pub fn summary_csv(out: &Path) -> PathBuf {
        out.join("summary.csv")
    }
    pub fn histograms(out: &Path) -> PathBuf {
        out.join("histograms")
    }
}

/// Run one stage, tagging any error with the stage name. `Evaluate` returns
/// the report.
pub fn run_stage(stage: Stage, cfg: &ExperimentConfig) -> Result<Option<MetricsReport>> {
    let res = match stage {
        Stage::Simulate => simulate(cfg).map(|_| None),
        Stage::FitPropensity => fit_weights(cfg).map(|_| None),
        Stage::Train => train(cfg).map(|_| None),
        Stage::Generate => generate(cfg, None).map(|_| None),
        Stage::Evaluate => evaluate(cfg).map(Some),
    };
    res.map_err(|e| e.in_stage(stage.name()))
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let mut report = None;
    for stage in Stage::ALL {
        report = run_stage(stage, cfg)?;
    }
    report.ok_or(Error::Empty("metrics report"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Simulate the dataset and record the resolved configuration.
pub fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    cfg.save(&artifacts::config(&cfg.out))?;
    let spec = cfg.scm.model_spec()?;
    let scm = cfg.scm.scm_config(cfg.seed)?;
    let model = spec.build(&scm)?;
    let trajectories = simulate_dataset(model.as_ref(), &scm)?;
    write_dataset(
        &artifacts::dataset(&cfg.out),
        &DatasetHeader::new(spec, &scm),
        &trajectories,
    )
}

fn load_windows(out: &Path) -> Result<(DatasetHeader, Vec<WindowSample>)> {
    let (header, trajectories) = read_dataset(&artifacts::dataset(out))?;
    let samples = windowize(&trajectories, header.d)?;
    Ok((header, samples))
}

/// Fit the propensity model (or use the true one) and write stabilized
/// weights, one per window sample.
pub fn fit_weights(cfg: &ExperimentConfig) -> Result<()> {
    let (header, samples) = load_windows(&cfg.out)?;
    let raw = if cfg.propensity.oracle_weights {
        let model = header.spec.build(&header.config(0))?;
        samples
            .par_iter()
            .map(|s| oracle_iptw(model.as_ref(), s))
            .collect()
    } else {
        let mut pcfg = cfg.propensity.model.clone();
        pcfg.seed = derive_seed(cfg.seed, label_salt("propensity"));
        let model = fit_propensity(&samples, &pcfg)?;
        log::info!(
            "propensity cross-entropy {:.4}",
            model.cross_entropy(&samples)?
        );
        model.save(&artifacts::propensity(&cfg.out))?;
        compute_all_iptw(&model, &samples)?
    };
    let weights = stabilize_weights(&raw, &cfg.propensity.weights)?;
    write_weights(&artifacts::weights(&cfg.out), &weights)
}

/// A trained method as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "artifact", rename_all = "snake_case")]
pub enum MethodArtifact {
    Generator(GeneratorCheckpoint),
    Kde(KdeModel),
    Msm(MsmCheckpoint),
}

/// A trained method ready to sample.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedMethod {
    Generator(TrainedGenerator),
    Kde(KdeModel),
    Msm(MsmRegressor),
}

impl TrainedMethod {
    pub fn to_artifact(&self) -> MethodArtifact {
        match self {
            TrainedMethod::Generator(g) => MethodArtifact::Generator(g.to_checkpoint()),
            TrainedMethod::Kde(k) => MethodArtifact::Kde(k.clone()),
            TrainedMethod::Msm(m) => MethodArtifact::Msm(m.to_checkpoint()),
        }
    }

    pub fn from_artifact(a: &MethodArtifact) -> Result<Self> {
        Ok(match a {
            MethodArtifact::Generator(c) => {
                TrainedMethod::Generator(TrainedGenerator::from_checkpoint(c)?)
            }
            MethodArtifact::Kde(k) => TrainedMethod::Kde(k.clone()),
            MethodArtifact::Msm(c) => TrainedMethod::Msm(MsmRegressor::from_checkpoint(c)?),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), &self.to_artifact())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let a: MethodArtifact = serde_json::from_reader(BufReader::new(f))?;
        Self::from_artifact(&a)
    }

    pub fn outcome_dim(&self) -> usize {
        match self {
            TrainedMethod::Generator(g) => g.m(),
            TrainedMethod::Kde(k) => k
                .combos
                .values()
                .flat_map(|c| c.centers.first())
                .map(Vec::len)
                .next()
                .unwrap_or(0),
            TrainedMethod::Msm(m) => m.standardizer.shift.len(),
        }
    }

    pub fn history_len(&self) -> usize {
        match self {
            TrainedMethod::Generator(g) => g.d(),
            TrainedMethod::Kde(k) => k.combos.keys().next().map_or(0, String::len),
            TrainedMethod::Msm(m) => m.d,
        }
    }

    /// `n` draws for `ā`. KDE conditions on `ā` only and ignores `v_range`.
    pub fn sample(
        &self,
        a_bar: &[u8],
        v_range: Option<(f64, f64)>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        match self {
            TrainedMethod::Generator(g) => g.generate(a_bar, v_range, n, seed),
            TrainedMethod::Kde(k) => k.sample(&crate::scm::combo_label(a_bar), n, seed),
            TrainedMethod::Msm(m) => m.sample(a_bar, v_range, n, seed),
        }
    }
}

fn method_seed(cfg: &ExperimentConfig, label: &str) -> u64 {
    derive_seed(cfg.seed, label_salt(label))
}

/// Fit one method on window samples and their stabilized weights.
pub fn train_method(
    m: &MethodConfig,
    seed: u64,
    samples: &[WindowSample],
    weights: &[f64],
) -> Result<TrainedMethod> {
    let bandwidth = m.bandwidth.unwrap_or(DEFAULT_BANDWIDTH);
    Ok(match m.method {
        MethodKind::Kde => TrainedMethod::Kde(kde_fit(samples, None, bandwidth)?),
        MethodKind::PluginKde => TrainedMethod::Kde(kde_fit(samples, Some(weights), bandwidth)?),
        MethodKind::MsmNn => {
            let mut mcfg = m.msm.clone().unwrap_or_default();
            mcfg.seed = seed;
            TrainedMethod::Msm(train_msm_nn(samples, weights, &mcfg)?)
        }
        _ => {
            let spec = m.generator_spec(seed).expect("generator method");
            TrainedMethod::Generator(train_generator(&spec, samples, weights)?)
        }
    })
}

/// Train every configured method and save its checkpoint.
pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let (_, samples) = load_windows(&cfg.out)?;
    let weights = read_weights(&artifacts::weights(&cfg.out))?;
    if weights.len() != samples.len() {
        return Err(Error::Dimension {
            context: "weights.csv rows vs window samples",
            expected: samples.len(),
            actual: weights.len(),
        });
    }
    for m in cfg.methods() {
        let label = m.label();
        log::info!("training {label}");
        let trained = train_method(&m, method_seed(cfg, &label), &samples, &weights)?;
        trained.save(&artifacts::model(&cfg.out, &label))?;
    }
    Ok(())
}

/// An evaluation cell: one combination, optionally restricted to a
/// static-covariate group.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub key: String,
    pub a_bar: Vec<u8>,
    pub group: Option<VGroup>,
}

impl EvalCell {
    pub fn v_range(&self) -> Option<(f64, f64)> {
        self.group.map(|g| (g.low, g.high))
    }
}

pub fn eval_cells(cfg: &ExperimentConfig) -> Result<Vec<EvalCell>> {
    let mut cells = Vec::new();
    for combo in cfg.combos()? {
        let a_bar = parse_combo(&combo)?;
        if cfg.eval.v_groups.is_empty() {
            cells.push(EvalCell {
                key: combo.clone(),
                a_bar,
                group: None,
            });
        } else {
            for g in &cfg.eval.v_groups {
                cells.push(EvalCell {
                    key: format!("{combo}@[{},{}]", g.low, g.high),
                    a_bar: a_bar.clone(),
                    group: Some(*g),
                });
            }
        }
    }
    Ok(cells)
}

/// Draw `n` samples per cell from every trained method (the configured
/// count when `n` is `None`) and write the sample dumps.
pub fn generate(cfg: &ExperimentConfig, n: Option<usize>) -> Result<()> {
    let n = n.unwrap_or(cfg.eval.generated_samples);
    let cells = eval_cells(cfg)?;
    create_dir(&cfg.out.join("samples"))?;
    for m in cfg.methods() {
        let label = m.label();
        let method = TrainedMethod::load(&artifacts::model(&cfg.out, &label))?;
        let seed = derive_seed(method_seed(cfg, &label), label_salt("generate"));
        let mut per_cell = BTreeMap::new();
        for cell in &cells {
            per_cell.insert(
                cell.key.clone(),
                method.sample(&cell.a_bar, cell.v_range(), n, seed)?,
            );
        }
        write_samples(&artifacts::samples(&cfg.out, &label), &cells, &per_cell)?;
    }
    Ok(())
}

/// CSV with columns `combo,sample_index,y_0,..,y_{m-1}`, cells in the given order.
pub fn write_samples(
    path: &Path,
    cells: &[EvalCell],
    samples: &BTreeMap<String, Vec<Vec<f64>>>,
) -> Result<()> {
    let m = samples
        .values()
        .flat_map(|s| s.first())
        .map(Vec::len)
        .next()
        .unwrap_or(1);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut head = vec!["combo".to_string(), "sample_index".to_string()];
    head.extend((0..m).map(|k| format!("y_{k}")));
    w.write_record(&head)?;
    for cell in cells {
        for (i, y) in samples.get(&cell.key).into_iter().flatten().enumerate() {
            let mut row = vec![cell.key.clone(), i.to_string()];
            row.extend(y.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let key = rec.get(0).ok_or(Error::Empty("combo column"))?.to_string();
        let y = rec
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>().map_err(|e| {
                    Error::Config(format!("{}: bad number {v:?}: {e}", path.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.entry(key).or_default().push(y);
    }
    Ok(out)
}

/// Oracle draws per cell from the simulator recorded in the dataset header.
pub fn oracle_samples(
    cfg: &ExperimentConfig,
    header: &DatasetHeader,
    cells: &[EvalCell],
) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    let scm = header.config(0);
    let model = header.spec.build(&scm)?;
    let mut out = BTreeMap::new();
    for cell in cells {
        let req = OracleRequest {
            horizon: header.horizon,
            mode: cfg.eval.oracle_horizon,
            seed: derive_seed(cfg.seed, label_salt("oracle")),
            v_range: cell.v_range(),
        };
        out.insert(
            cell.key.clone(),
            sample_counterfactual(model.as_ref(), &req, &cell.a_bar, cfg.eval.oracle_samples)?,
        );
    }
    Ok(out)
}

fn observed_counts(samples: &[WindowSample], cells: &[EvalCell]) -> BTreeMap<String, usize> {
    cells
        .iter()
        .map(|cell| {
            let n = samples
                .iter()
                .filter(|s| s.a_window == cell.a_bar)
                .filter(|s| match (cell.group, s.v) {
                    (Some(g), Some(v)) => (g.low..=g.high).contains(&v),
                    (Some(_), None) => false,
                    (None, _) => true,
                })
                .count();
            (cell.key.clone(), n)
        })
        .collect()
}

fn file_stem(key: &str) -> String {
    key.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Score the sample dumps against fresh oracle draws; write metrics and
/// histograms.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let (header, windows) = load_windows(&cfg.out)?;
    let cells = eval_cells(cfg)?;
    let oracle = oracle_samples(cfg, &header, &cells)?;
    let mut methods = MethodSamples::new();
    for m in cfg.methods() {
        let label = m.label();
        methods.insert(
            label.clone(),
            read_samples(&artifacts::samples(&cfg.out, &label))?,
        );
    }
    let keys: Vec<String> = cells.iter().map(|c| c.key.clone()).collect();
    let opts = EvalOptions {
        min_observation_fraction: cfg.eval.min_observation_fraction,
    };
    let observed = observed_counts(&windows, &cells);
    let report = evaluate_all(&methods, &oracle, &keys, &observed, &opts)?;
    report.write_csv(&artifacts::metrics_csv(&cfg.out))?;
    report.write_json(&artifacts::metrics_json(&cfg.out))?;
    report.write_summary_csv(&artifacts::summary_csv(&cfg.out))?;

    for (label, per_cell) in &methods {
        let dir = artifacts::histograms(&cfg.out).join(label);
        create_dir(&dir)?;
        for key in &keys {
            let (Some(gen), Some(orc)) = (per_cell.get(key), oracle.get(key)) else {
                continue;
            };
            if gen.is_empty() {
                continue;
            }
            let m = orc[0].len();
            let project = |s: &[Vec<f64>]| -> Vec<f64> {
                s.iter()
                    .map(|y| if m == 1 { y[0] } else { argmax_projector(y) })
                    .collect()
            };
            let bins = if m == 1 { cfg.eval.histogram_bins } else { m };
            histogram(&project(gen), &project(orc), bins)?
                .write_csv(&dir.join(format!("{}.csv", file_stem(key))))?;
        }
    }
    Ok(report)
}

/// Merge the metrics of several run directories into one table under `out`.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Empty("run directories"));
    }
    let reports = runs
        .iter()
        .map(|r| MetricsReport::read_json(&artifacts::metrics_json(r)))
        .collect::<Result<Vec<_>>>()?;
    let merged = MetricsReport::merge(&reports);
    create_dir(out)?;
    merged.write_csv(&out.join("report.csv"))?;
    merged.write_summary_csv(&out.join("report_summary.csv"))?;
    merged.write_json(&out.join("report.json"))?;
    Ok(merged)
}
