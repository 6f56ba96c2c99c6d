//! Reference estimators: Gaussian KDE per treatment combination (optionally
//! IPTW-weighted, the plug-in estimator) and a weighted-regression MSM whose
//! prediction is used as a point mass.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{
    column, losses, minibatch_train, value_and_grad, Activation, Mlp, MlpCheckpoint, TrainConfig,
};
use crate::error::{Error, Result};
use crate::generators::Standardizer;
use crate::rng::{stream, Purpose};
use crate::scm::WindowSample;

/// Kernel centres and mixture weights for one combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeComponent {
    pub centers: Vec<Vec<f64>>,
    /// Sum to one.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub bandwidth: f64,
    pub weighted: bool,
    pub combos: BTreeMap<String, KdeComponent>,
}

/// Group outcomes (and weights) by treatment combination.
pub fn group_by_combo(
    samples: &[WindowSample],
    weights: Option<&[f64]>,
) -> BTreeMap<String, (Vec<Vec<f64>>, Vec<f64>)> {
    let mut out: BTreeMap<String, (Vec<Vec<f64>>, Vec<f64>)> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let e = out.entry(s.combo()).or_default();
        e.0.push(s.y.clone());
        e.1.push(weights.map_or(1.0, |w| w[i]));
    }
    out
}

/// Fit a KDE per combination. With `weights` the mixture weights are the
/// sample weights renormalized within each combination.
pub fn kde_fit(
    samples: &[WindowSample],
    weights: Option<&[f64]>,
    bandwidth: f64,
) -> Result<KdeModel> {
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::Dimension {
                context: "one weight per KDE sample",
                expected: samples.len(),
                actual: w.len(),
            });
        }
    }
    KdeModel::from_groups(
        group_by_combo(samples, weights),
        bandwidth,
        weights.is_some(),
    )
}

impl KdeModel {
    pub fn from_groups(
        groups: BTreeMap<String, (Vec<Vec<f64>>, Vec<f64>)>,
        bandwidth: f64,
        weighted: bool,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth {bandwidth} must be positive"
            )));
        }
        let mut combos = BTreeMap::new();
        for (label, (centers, w)) in groups {
            if centers.is_empty() {
                log::warn!("combination {label} has no samples; KDE unavailable for it");
                continue;
            }
            if w.len() != centers.len() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config(format!(
                    "invalid KDE weights for combination {label}"
                )));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::Config(format!(
                    "KDE weights for combination {label} sum to zero"
                )));
            }
            let weights = w.iter().map(|x| x / total).collect();
            combos.insert(label, KdeComponent { centers, weights });
        }
        Ok(Self {
            bandwidth,
            weighted,
            combos,
        })
    }

    fn component(&self, combo: &str) -> Result<&KdeComponent> {
        self.combos
            .get(combo)
            .ok_or_else(|| Error::UnavailableCombination(combo.to_string()))
    }

    /// Mixture density `Σ_i w_i N(y; y_i, h² I)`.
    pub fn density(&self, combo: &str, y: &[f64]) -> Result<f64> {
        let c = self.component(combo)?;
        let h2 = self.bandwidth * self.bandwidth;
        let m = y.len() as f64;
        let norm = (2.0 * std::f64::consts::PI * h2).powf(-m / 2.0);
        Ok(c.centers
            .iter()
            .zip(&c.weights)
            .map(|(ctr, w)| {
                let d2: f64 = ctr.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                w * norm * (-0.5 * d2 / h2).exp()
            })
            .sum())
    }

    /// Pick a centre by weight, add `N(0, h² I)`.
    pub fn sample(&self, combo: &str, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let c = self.component(combo)?;
        let pick = WeightedIndex::new(&c.weights)
            .map_err(|e| Error::Config(format!("KDE weights: {e}")))?;
        Ok((0..n)
            .map(|i| {
                let mut rng = stream(seed, Purpose::Baseline, i as u64);
                let ctr = &c.centers[pick.sample(&mut rng)];
                ctr.iter()
                    .map(|&x| x + self.bandwidth * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsmConfig {
    pub width: usize,
    pub depth: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for MsmConfig {
    /// 1000 epochs at lr 0.01.
    fn default() -> Self {
        Self {
            width: 64,
            depth: 2,
            train: TrainConfig::new(1000, 256, 0.01),
            seed: 0,
        }
    }
}

/// Weighted regression of `y` on `ā` (and `v`). It never sees covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct MsmRegressor {
    pub d: usize,
    pub uses_v: bool,
    pub net: Mlp,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmCheckpoint {
    pub d: usize,
    pub uses_v: bool,
    pub net: MlpCheckpoint,
    pub standardizer: Standardizer,
}

fn msm_input(a_bar: &[u8], v: Option<f64>, uses_v: bool) -> Vec<f64> {
    let mut row: Vec<f64> = a_bar.iter().map(|&a| f64::from(a)).collect();
    if uses_v {
        row.push(v.unwrap_or(0.0));
    }
    row
}

/// Minimise `(1/N) Σ w ‖y − g(ā)‖²`.
///
/// Without a static covariate the input takes only `2^d` values, so the
/// loss equals `(1/N) Σ_ā W_ā ‖ȳ_ā − g(ā)‖²` plus a constant (with `W_ā` the
/// weight total and `ȳ_ā` the weighted mean of the combination); training
/// then runs full-batch on those rows.
pub fn train_msm_nn(
    samples: &[WindowSample],
    weights: &[f64],
    cfg: &MsmConfig,
) -> Result<MsmRegressor> {
    let first = samples
        .first()
        .ok_or(Error::Empty("MSM training samples"))?;
    if weights.len() != samples.len() {
        return Err(Error::Dimension {
            context: "one weight per MSM sample",
            expected: samples.len(),
            actual: weights.len(),
        });
    }
    let d = first.d();
    let m = first.y.len();
    let uses_v = first.v.is_some();
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.y.as_slice()).collect();
    let standardizer = Standardizer::fit(&rows)?;

    let (inputs, targets, row_weights) = if uses_v {
        let x: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| msm_input(&s.a_window, s.v, true))
            .collect();
        let y: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| standardizer.forward_row(&s.y))
            .collect();
        (x, y, weights.to_vec())
    } else {
        let n = samples.len() as f64;
        let mut acc: BTreeMap<Vec<u8>, (f64, Vec<f64>)> = BTreeMap::new();
        for (s, &w) in samples.iter().zip(weights) {
            let e = acc.entry(s.a_window.clone()).or_insert((0.0, vec![0.0; m]));
            e.0 += w;
            for (k, y) in standardizer.forward_row(&s.y).into_iter().enumerate() {
                e.1[k] += w * y;
            }
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for (a, (total, sum)) in acc {
            if total <= 0.0 {
                continue;
            }
            x.push(msm_input(&a, None, false));
            y.push(sum.iter().map(|s| s / total).collect());
            // rows are averaged by the loss, so rescale to keep (1/N) Σ W_ā
            w.push(total / n);
        }
        let rows = x.len() as f64;
        w.iter_mut().for_each(|x| *x *= rows);
        (x, y, w)
    };

    let in_dim = d + usize::from(uses_v);
    let x = Array2::from_shape_fn((inputs.len(), in_dim), |(i, j)| inputs[i][j]);
    let y = Array2::from_shape_fn((targets.len(), m), |(i, j)| targets[i][j]);
    let mut rng = stream(cfg.seed, Purpose::Init, 1);
    let mut net = Mlp::with_hidden(
        in_dim,
        cfg.width,
        cfg.depth,
        m,
        Activation::Relu,
        Activation::Identity,
        &mut rng,
    )?;
    let mut params = net.blocks();
    let mut train = cfg.train;
    if !uses_v {
        train.batch_size = inputs.len().max(1);
    }
    let mut train_rng = stream(cfg.seed, Purpose::Training, 1);
    minibatch_train(
        inputs.len(),
        &mut params,
        &train,
        &mut train_rng,
        |p, idx, _| {
            let xb = x.select(Axis(0), idx);
            let yb = y.select(Axis(0), idx);
            let wb = column(&idx.iter().map(|&i| row_weights[i]).collect::<Vec<_>>());
            value_and_grad(p, |g, vars| {
                let input = g.constant(xb);
                let target = g.constant(yb);
                let w = g.constant(wb);
                let pred = net.forward_graph(g, vars, input);
                losses::weighted_mse(g, pred, target, w)
            })
        },
    )?;
    net.set_blocks(&params);
    Ok(MsmRegressor {
        d,
        uses_v,
        net,
        standardizer,
    })
}

impl MsmRegressor {
    /// Point prediction for `ā` (and `v`).
    pub fn predict(&self, a_bar: &[u8], v: Option<f64>) -> Result<Vec<f64>> {
        if a_bar.len() != self.d {
            return Err(Error::Dimension {
                context: "MSM treatment window",
                expected: self.d,
                actual: a_bar.len(),
            });
        }
        let out = self.net.forward(&msm_input(a_bar, v, self.uses_v))?;
        Ok(self.standardizer.inverse_row(&out))
    }

    /// `n` copies of the prediction; with a `v` range each copy uses its own
    /// uniformly drawn `v`.
    pub fn sample(
        &self,
        a_bar: &[u8],
        v_range: Option<(f64, f64)>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| {
                let v = v_range.map(|(lo, hi)| {
                    if lo < hi {
                        stream(seed, Purpose::Baseline, i as u64).random_range(lo..hi)
                    } else {
                        lo
                    }
                });
                self.predict(a_bar, v)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> MsmCheckpoint {
        MsmCheckpoint {
            d: self.d,
            uses_v: self.uses_v,
            net: self.net.to_checkpoint(),
            standardizer: self.standardizer.clone(),
        }
    }

    pub fn from_checkpoint(c: &MsmCheckpoint) -> Result<Self> {
        let net = Mlp::from_checkpoint(&c.net)?;
        if net.input_dim() != c.d + usize::from(c.uses_v) {
            return Err(Error::Config(
                "MSM checkpoint input width does not match d".into(),
            ));
        }
        Ok(Self {
            d: c.d,
            uses_v: c.uses_v,
            net,
            standardizer: c.standardizer.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(values: &[f64], w: Option<&[f64]>) -> BTreeMap<String, (Vec<Vec<f64>>, Vec<f64>)> {
        let mut g = BTreeMap::new();
        g.insert(
            "1".to_string(),
            (
                values.iter().map(|&v| vec![v]).collect(),
                w.map_or(vec![1.0; values.len()], |w| w.to_vec()),
            ),
        );
        g
    }

    #[test]
    fn single_centre_density_is_gaussian() {
        let kde = KdeModel::from_groups(groups(&[0.0], None), 0.5, false).unwrap();
        for y in [-1.0, 0.0, 0.3, 2.0] {
            let expected =
                (-0.5 * y * y / 0.25f64).exp() / (2.0 * std::f64::consts::PI * 0.25f64).sqrt();
            assert!((kde.density("1", &[y]).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_weights_match_plain_kde() {
        let v = [0.1, -0.4, 2.0, 0.7];
        let plain = KdeModel::from_groups(groups(&v, None), 0.5, false).unwrap();
        let plug = KdeModel::from_groups(groups(&v, Some(&[3.0; 4])), 0.5, true).unwrap();
        for y in [-2.0, 0.0, 0.5, 1.9] {
            let a = plain.density("1", &[y]).unwrap();
            let b = plug.density("1", &[y]).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let kde =
            KdeModel::from_groups(groups(&[0.1, -0.4, 2.0], Some(&[1.0, 2.0, 0.5])), 0.5, true)
                .unwrap();
        let (lo, hi, n) = (-10.0, 12.0, 22_000);
        let dx = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| kde.density("1", &[lo + (i as f64 + 0.5) * dx]).unwrap() * dx)
            .sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn tiny_bandwidth_resamples_data() {
        let kde = KdeModel::from_groups(groups(&[1.0, 5.0], None), 1e-12, false).unwrap();
        for s in kde.sample("1", 200, 3).unwrap() {
            assert!((s[0] - 1.0).abs() < 1e-9 || (s[0] - 5.0).abs() < 1e-9);
        }
        assert_eq!(
            kde.sample("1", 50, 9).unwrap(),
            kde.sample("1", 50, 9).unwrap()
        );
    }

    #[test]
    fn unknown_combo_is_unavailable() {
        let kde = KdeModel::from_groups(groups(&[1.0], None), 0.5, false).unwrap();
        assert!(matches!(
            kde.sample("0", 1, 0),
            Err(Error::UnavailableCombination(_))
        ));
    }
}
