//! Distances between generated and oracle sample sets, and the per-method,
//! per-combination report built from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euclidean norm of the difference of the empirical means.
pub fn mean_distance(gen: &[Vec<f64>], oracle: &[Vec<f64>]) -> Result<f64> {
    let m = check_sets(gen, oracle)?;
    let mean = |s: &[Vec<f64>]| {
        let mut acc = vec![0.0; m];
        for row in s {
            for k in 0..m {
                acc[k] += row[k];
            }
        }
        acc.iter().map(|a| a / s.len() as f64).collect::<Vec<_>>()
    };
    let (a, b) = (mean(gen), mean(oracle));
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn check_sets(gen: &[Vec<f64>], oracle: &[Vec<f64>]) -> Result<usize> {
    if gen.is_empty() || oracle.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let m = oracle[0].len();
    if let Some(bad) = gen.iter().chain(oracle).find(|r| r.len() != m) {
        return Err(Error::Dimension {
            context: "sample dimension",
            expected: m,
            actual: bad.len(),
        });
    }
    Ok(m)
}

/// 1-Wasserstein distance between two empirical measures on the line.
///
/// Equal sizes use the sorted pairing; otherwise `∫ |F_gen − F_oracle|` is
/// integrated exactly over the merged support.
pub fn wasserstein1(gen: &[f64], oracle: &[f64]) -> Result<f64> {
    if gen.is_empty() || oracle.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    if gen.iter().chain(oracle).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sample value".into()));
    }
    let mut a = gen.to_vec();
    let mut b = oracle.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Index of the largest coordinate (first on ties).
pub fn argmax_projector(y: &[f64]) -> f64 {
    let mut best = 0;
    for (k, v) in y.iter().enumerate() {
        if *v > y[best] {
            best = k;
        }
    }
    best as f64
}

/// Project both sets to scalar labels and return their 1-Wasserstein
/// distance.
pub fn hotspot_fid(
    gen: &[Vec<f64>],
    oracle: &[Vec<f64>],
    projector: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let m = check_sets(gen, oracle)?;
    if m < 2 {
        return Err(Error::Dimension {
            context: "hotspot projection needs a vector outcome",
            expected: 2,
            actual: m,
        });
    }
    let pg: Vec<f64> = gen.iter().map(|y| projector(y)).collect();
    let po: Vec<f64> = oracle.iter().map(|y| projector(y)).collect();
    wasserstein1(&pg, &po)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboRecord {
    pub method: String,
    pub combo: String,
    pub n_observed: usize,
    /// Fewer training observations than the configured fraction.
    pub low_support: bool,
    pub available: bool,
    pub mean_dist: Option<f64>,
    pub w1: Option<f64>,
    pub fid_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub metric: String,
    pub avg: f64,
    pub worst: f64,
    pub n_combos: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<ComboRecord>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Combinations observed in less than this fraction of training samples
    /// are flagged and left out of the aggregates.
    pub min_observation_fraction: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            min_observation_fraction: 0.0,
        }
    }
}

/// Per-method, per-combination samples.
pub type MethodSamples = BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>>;

/// Score every method on every combination against the oracle samples.
///
/// `observed` counts training samples per combination. A method without
/// samples for a combination gets an unavailable record and the aggregates
/// use the remaining combinations.
pub fn evaluate_all(
    methods: &MethodSamples,
    oracle: &BTreeMap<String, Vec<Vec<f64>>>,
    combos: &[String],
    observed: &BTreeMap<String, usize>,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if methods.is_empty() {
        return Err(Error::Empty("methods"));
    }
    let total_obs: usize = observed.values().sum();
    let mut records = Vec::new();
    for (method, per_combo) in methods {
        for combo in combos {
            let orc = oracle.get(combo).ok_or_else(|| {
                Error::UnavailableCombination(format!("oracle samples for {combo}"))
            })?;
            let n_observed = observed.get(combo).copied().unwrap_or(0);
            let low_support = total_obs > 0
                && (n_observed as f64) < opts.min_observation_fraction * total_obs as f64;
            let mut rec = ComboRecord {
                method: method.clone(),
                combo: combo.clone(),
                n_observed,
                low_support,
                available: false,
                mean_dist: None,
                w1: None,
                fid_star: None,
            };
            match per_combo.get(combo) {
                Some(gen) if !gen.is_empty() => {
                    rec.available = true;
                    rec.mean_dist = Some(mean_distance(gen, orc)?);
                    if orc[0].len() == 1 {
                        let g: Vec<f64> = gen.iter().map(|y| y[0]).collect();
                        let o: Vec<f64> = orc.iter().map(|y| y[0]).collect();
                        rec.w1 = Some(wasserstein1(&g, &o)?);
                    } else {
                        rec.fid_star = Some(hotspot_fid(gen, orc, argmax_projector)?);
                    }
                }
                _ => log::warn!(
                    "{method} has no samples for combination {combo}; excluded from aggregates"
                ),
            }
            records.push(rec);
        }
    }
    let aggregates = aggregate(&records);
    Ok(MetricsReport {
        records,
        aggregates,
    })
}

/// Average and worst per method and metric over available, well-supported
/// combinations.
pub fn aggregate(records: &[ComboRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, &'static str), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.available && !r.low_support) {
        for (name, value) in [
            ("mean_dist", r.mean_dist),
            ("w1", r.w1),
            ("fid_star", r.fid_star),
        ] {
            if let Some(v) = value {
                groups.entry((r.method.clone(), name)).or_default().push(v);
            }
        }
    }
    groups
        .into_iter()
        .map(|((method, metric), vals)| Aggregate {
            method,
            metric: metric.to_string(),
            avg: vals.iter().sum::<f64>() / vals.len() as f64,
            worst: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n_combos: vals.len(),
        })
        .collect()
}

impl MetricsReport {
    pub fn aggregate(&self, method: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.metric == metric)
    }

    pub fn record(&self, method: &str, combo: &str) -> Option<&ComboRecord> {
        self.records
            .iter()
            .find(|r| r.method == method && r.combo == combo)
    }

    /// One row per method × combination.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::propensity::csv_io(path, e))?;
        w.write_record([
            "method",
            "combo",
            "n_observed",
            "low_support",
            "available",
            "mean_dist",
            "w1",
            "fid_star",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.method.clone(),
                r.combo.clone(),
                r.n_observed.to_string(),
                r.low_support.to_string(),
                r.available.to_string(),
                fmt(r.mean_dist),
                fmt(r.w1),
                fmt(r.fid_star),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per method × metric with the average and worst value.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::propensity::csv_io(path, e))?;
        w.write_record(["method", "metric", "avg", "worst", "n_combos"])?;
        for a in &self.aggregates {
            w.write_record([
                a.method.clone(),
                a.metric.clone(),
                a.avg.to_string(),
                a.worst.to_string(),
                a.n_combos.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Concatenate reports; later reports win for duplicate method/combo
    /// pairs. Aggregates are recomputed.
    pub fn merge(reports: &[MetricsReport]) -> MetricsReport {
        let mut by_key: BTreeMap<(String, String), ComboRecord> = BTreeMap::new();
        for rep in reports {
            for r in &rep.records {
                by_key.insert((r.method.clone(), r.combo.clone()), r.clone());
            }
        }
        let records: Vec<ComboRecord> = by_key.into_values().collect();
        let aggregates = aggregate(&records);
        MetricsReport {
            records,
            aggregates,
        }
    }
}

/// Shared-edge histogram of generated and oracle values.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub generated: Vec<usize>,
    pub oracle: Vec<usize>,
}

pub fn histogram(gen: &[f64], oracle: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let all = gen.iter().chain(oracle);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Empty("histogram values"));
    }
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let count = |vals: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in vals {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            c[k] += 1;
        }
        c
    };
    Ok(Histogram {
        edges,
        generated: count(gen),
        oracle: count(oracle),
    })
}

impl Histogram {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::propensity::csv_io(path, e))?;
        w.write_record(["bin_left", "bin_right", "generated", "oracle"])?;
        for k in 0..self.generated.len() {
            w.write_record([
                self.edges[k].to_string(),
                self.edges[k + 1].to_string(),
                self.generated[k].to_string(),
                self.oracle[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn small_examples() {
        assert_eq!(wasserstein1(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            wasserstein1(&[0.3, -1.0, 2.0], &[2.0, 0.3, -1.0]).unwrap(),
            0.0
        );
        assert!((mean_distance(&col(&[0.5]), &col(&[0.7])).unwrap() - 0.2).abs() < 1e-15);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn unequal_sizes_use_cdf_integral() {
        // F_a jumps to 1 at 0; F_b is 0.5 on [0, 1): ∫|Fa - Fb| = 0.5
        assert!((wasserstein1(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        // point mass at 0 vs {1, 2, 3}: mean distance 2
        assert!((wasserstein1(&[0.0], &[1.0, 2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        // matches the equal-size formula after replication
        let a = [0.1, 0.9, 2.3];
        let b = [0.4, 1.1, 1.7, 3.0, -0.2, 0.8];
        let a2: Vec<f64> = a.iter().chain(&a).copied().collect();
        let x = wasserstein1(&a, &b).unwrap();
        let y = wasserstein1(&a2, &b).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn hotspot_examples() {
        let mode0 = vec![vec![1.0, 0.0]; 10];
        let mode1 = vec![vec![0.0, 1.0]; 10];
        assert_eq!(hotspot_fid(&mode0, &mode1, argmax_projector).unwrap(), 1.0);
        let mut gen = vec![vec![1.0, 0.0]; 6];
        gen.extend(vec![vec![0.0, 1.0]; 4]);
        let mut orc = vec![vec![1.0, 0.0]; 5];
        orc.extend(vec![vec![0.0, 1.0]; 5]);
        assert!((hotspot_fid(&gen, &orc, argmax_projector).unwrap() - 0.1).abs() < 1e-12);
        assert!(hotspot_fid(&col(&[1.0]), &col(&[1.0]), argmax_projector).is_err());
    }

    #[test]
    fn aggregates_average_and_worst() {
        let mut methods = MethodSamples::new();
        let mut per = BTreeMap::new();
        per.insert("0".to_string(), col(&[0.1, 0.1]));
        per.insert("1".to_string(), col(&[0.3, 0.3]));
        methods.insert("m".to_string(), per);
        let mut oracle = BTreeMap::new();
        oracle.insert("0".to_string(), col(&[0.0, 0.0]));
        oracle.insert("1".to_string(), col(&[0.0, 0.0]));
        let combos = vec!["0".to_string(), "1".to_string()];
        let rep = evaluate_all(
            &methods,
            &oracle,
            &combos,
            &BTreeMap::new(),
            &EvalOptions::default(),
        )
        .unwrap();
        let a = rep.aggregate("m", "w1").unwrap();
        assert!((a.avg - 0.2).abs() < 1e-12);
        assert!((a.worst - 0.3).abs() < 1e-12);
    }

    #[test]
    fn missing_combo_is_unavailable_and_excluded() {
        let mut methods = MethodSamples::new();
        let mut per = BTreeMap::new();
        per.insert("0".to_string(), col(&[0.1]));
        methods.insert("m".to_string(), per);
        let mut oracle = BTreeMap::new();
        oracle.insert("0".to_string(), col(&[0.0]));
        oracle.insert("1".to_string(), col(&[0.0]));
        let combos = vec!["0".to_string(), "1".to_string()];
        let rep = evaluate_all(
            &methods,
            &oracle,
            &combos,
            &BTreeMap::new(),
            &EvalOptions::default(),
        )
        .unwrap();
        assert!(!rep.record("m", "1").unwrap().available);
        assert_eq!(rep.aggregate("m", "w1").unwrap().n_combos, 1);
    }

    #[test]
    fn low_support_combos_are_flagged() {
        let mut methods = MethodSamples::new();
        let mut per = BTreeMap::new();
        per.insert("0".to_string(), col(&[0.1]));
        per.insert("1".to_string(), col(&[0.5]));
        methods.insert("m".to_string(), per);
        let mut oracle = BTreeMap::new();
        oracle.insert("0".to_string(), col(&[0.0]));
        oracle.insert("1".to_string(), col(&[0.0]));
        let observed: BTreeMap<String, usize> =
            [("0".to_string(), 97), ("1".to_string(), 3)].into();
        let combos = vec!["0".to_string(), "1".to_string()];
        let opts = EvalOptions {
            min_observation_fraction: 0.05,
        };
        let rep = evaluate_all(&methods, &oracle, &combos, &observed, &opts).unwrap();
        assert!(rep.record("m", "1").unwrap().low_support);
        let a = rep.aggregate("m", "w1").unwrap();
        assert_eq!((a.n_combos, a.worst), (1, 0.1));
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0], &[0.25, 0.75], 4).unwrap();
        assert_eq!(h.generated.iter().sum::<usize>(), 3);
        assert_eq!(h.oracle.iter().sum::<usize>(), 2);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.generated[3], 1);
    }
}
