use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{condition_row, Standardizer};
use crate::diffgraph::{value_and_grad, Activation, Graph, Mlp, MlpCheckpoint, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, SimRng};

/// `s/S` plus four sine and four cosine features.
pub const TIME_FEATURES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub guidance_w: f64,
    pub p_uncond: f64,
    pub width: usize,
    pub depth: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            gamma_min: 1e-4,
            gamma_max: 0.1,
            guidance_w: 2.0,
            p_uncond: 0.1,
            width: 64,
            depth: 3,
        }
    }
}

/// Per-step noise variances `γ_s` (index `s-1`) and the cumulative products
/// `λ̄_s = Π_{k≤s} (1 - γ_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub gammas: Vec<f64>,
    pub lambda_bar: Vec<f64>,
}

impl Schedule {
    pub fn linear(steps: usize, gamma_min: f64, gamma_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(0.0 < gamma_min && gamma_min <= gamma_max && gamma_max < 1.0) {
            return Err(Error::Config(format!(
                "noise variances must satisfy 0 < γ_min <= γ_max < 1, got {gamma_min}, {gamma_max}"
            )));
        }
        let gammas: Vec<f64> = (0..steps)
            .map(|k| {
                if steps == 1 {
                    gamma_min
                } else {
                    gamma_min + (gamma_max - gamma_min) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_gammas(gammas)
    }

    pub fn from_gammas(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() || gammas.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(Error::Config("every γ_s must lie in (0, 1)".into()));
        }
        let mut lambda_bar = Vec::with_capacity(gammas.len());
        let mut acc = 1.0;
        for &g in &gammas {
            acc *= 1.0 - g;
            lambda_bar.push(acc);
        }
        Ok(Self { gammas, lambda_bar })
    }

    pub fn steps(&self) -> usize {
        self.gammas.len()
    }

    /// `γ_s` for `s ∈ 1..=S`.
    pub fn gamma(&self, s: usize) -> f64 {
        self.gammas[s - 1]
    }

    pub fn lambda_bar(&self, s: usize) -> f64 {
        self.lambda_bar[s - 1]
    }
}

/// `y_s = √λ̄_s · y0 + √(1-λ̄_s) · noise`.
pub fn forward_noise(y0: &[f64], s: usize, schedule: &Schedule, noise: &[f64]) -> Vec<f64> {
    let lb = schedule.lambda_bar(s);
    let (a, b) = (lb.sqrt(), (1.0 - lb).sqrt());
    y0.iter().zip(noise).map(|(y, e)| a * y + b * e).collect()
}

pub fn time_features(s: usize, steps: usize) -> [f64; TIME_FEATURES] {
    let u = s as f64 / steps as f64;
    let mut f = [0.0; TIME_FEATURES];
    f[0] = u;
    for k in 0..4 {
        let arg = std::f64::consts::PI * u * f64::from(1u32 << k);
        f[1 + k] = arg.sin();
        f[5 + k] = arg.cos();
    }
    f
}

/// One training draw for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub s: usize,
    pub eps: Vec<f64>,
    pub drop_condition: bool,
}

/// Noise-prediction network with a learned null condition for
/// classifier-free guidance. Works on standardized outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub d: usize,
    pub m: usize,
    pub uses_v: bool,
    pub schedule: Schedule,
    pub guidance_w: f64,
    pub p_uncond: f64,
    pub net: Mlp,
    /// `1×c` embedding used in place of the condition.
    pub null_condition: Array2<f64>,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCheckpoint {
    pub d: usize,
    pub m: usize,
    pub uses_v: bool,
    pub guidance_w: f64,
    pub p_uncond: f64,
    pub net: MlpCheckpoint,
    pub null_condition: Vec<f64>,
    pub standardizer: Standardizer,
}

impl DiffusionModel {
    pub fn new(
        d: usize,
        m: usize,
        uses_v: bool,
        cfg: &DiffusionConfig,
        standardizer: Standardizer,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if !(cfg.guidance_w >= 0.0 && cfg.guidance_w.is_finite()) {
            return Err(Error::Config("guidance strength must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&cfg.p_uncond) {
            return Err(Error::Config("condition dropout must be in [0, 1)".into()));
        }
        let schedule = Schedule::linear(cfg.steps, cfg.gamma_min, cfg.gamma_max)?;
        let c = d + usize::from(uses_v);
        let net = Mlp::with_hidden(
            m + TIME_FEATURES + c,
            cfg.width,
            cfg.depth,
            m,
            Activation::Gelu,
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            d,
            m,
            uses_v,
            schedule,
            guidance_w: cfg.guidance_w,
            p_uncond: cfg.p_uncond,
            net,
            null_condition: Array2::zeros((1, c)),
            standardizer,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.d + usize::from(self.uses_v)
    }

    /// Network blocks followed by the null condition.
    pub fn params(&self) -> Vec<Array2<f64>> {
        let mut p = self.net.blocks();
        p.push(self.null_condition.clone());
        p
    }

    pub fn set_params(&mut self, p: &[Array2<f64>]) {
        let nb = self.net.num_blocks();
        self.net.set_blocks(&p[..nb]);
        self.null_condition = p[nb].clone();
    }

    fn check_condition(&self, a_bar: &[u8]) -> Result<()> {
        if a_bar.len() != self.d {
            return Err(Error::Dimension {
                context: "diffusion treatment window",
                expected: self.d,
                actual: a_bar.len(),
            });
        }
        Ok(())
    }

    /// Per-row squared noise-prediction error (n×1). `noisy` holds
    /// `[y_s, time features]` rows, `keep` is 1 where the condition is used
    /// and 0 where the null embedding replaces it.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        noisy: Var,
        cond: Var,
        keep: Var,
        eps: Var,
    ) -> Var {
        let nb = self.net.num_blocks();
        let n = g.shape(noisy).0;
        let drop = {
            let neg = g.scale(keep, -1.0);
            g.offset(neg, 1.0)
        };
        let null_rows = g.repeat_rows(vars[nb], n);
        let kept = g.mul_col(cond, keep);
        let nulled = g.mul_col(null_rows, drop);
        let cond_eff = g.add(kept, nulled);
        let input = g.concat(&[noisy, cond_eff]);
        let pred = self.net.forward_graph(g, &vars[..nb], input);
        let diff = g.sub(pred, eps);
        let sq = g.square(diff);
        g.sum_cols(sq)
    }

    /// Draw `(s, ε, drop)` for one sample.
    pub fn draw_noise(&self, rng: &mut SimRng) -> NoiseDraw {
        let s = rng.random_range(1..=self.schedule.steps());
        let eps = (0..self.m).map(|_| rng.sample(StandardNormal)).collect();
        let drop_condition = self.p_uncond > 0.0 && rng.random::<f64>() < self.p_uncond;
        NoiseDraw {
            s,
            eps,
            drop_condition,
        }
    }

    fn batch_inputs(
        &self,
        y_std: &[Vec<f64>],
        draws: &[NoiseDraw],
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let n = y_std.len();
        let width = self.m + TIME_FEATURES;
        let mut noisy = Array2::zeros((n, width));
        let mut eps = Array2::zeros((n, self.m));
        let mut keep = Array2::zeros((n, 1));
        let steps = self.schedule.steps();
        for (i, (y, dr)) in y_std.iter().zip(draws).enumerate() {
            let ys = forward_noise(y, dr.s, &self.schedule, &dr.eps);
            for k in 0..self.m {
                noisy[[i, k]] = ys[k];
                eps[[i, k]] = dr.eps[k];
            }
            for (k, f) in time_features(dr.s, steps).into_iter().enumerate() {
                noisy[[i, self.m + k]] = f;
            }
            keep[[i, 0]] = if dr.drop_condition { 0.0 } else { 1.0 };
        }
        (noisy, eps, keep)
    }

    /// Loss for one raw outcome under an explicit draw.
    pub fn loss_at(
        &self,
        y: &[f64],
        a_bar: &[u8],
        v: Option<f64>,
        draw: &NoiseDraw,
    ) -> Result<f64> {
        self.check_condition(a_bar)?;
        let ys = vec![self.standardizer.forward_row(y)];
        let (noisy, eps, keep) = self.batch_inputs(&ys, std::slice::from_ref(draw));
        let cond_row = condition_row(a_bar, v, self.uses_v);
        let cond = Array2::from_shape_vec((1, cond_row.len()), cond_row).expect("row");
        let params = self.params();
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
        let (nv, cv, kv, ev) = (g.constant(noisy), g.constant(cond), g.constant(keep), g.constant(eps));
        let l = self.loss_graph(&mut g, &vars, nv, cv, kv, ev);
        Ok(g.scalar(l))
    }

    /// Weighted mean loss of a batch of standardized outcomes.
    pub fn batch_loss(
        &self,
        params: &[Array2<f64>],
        y_std: &[Vec<f64>],
        cond: Array2<f64>,
        weights: Array2<f64>,
        rng: &mut SimRng,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        let draws: Vec<NoiseDraw> = (0..y_std.len()).map(|_| self.draw_noise(rng)).collect();
        let (noisy, eps, keep) = self.batch_inputs(y_std, &draws);
        value_and_grad(params, |g, vars| {
            let (nv, cv, kv, ev, wv) = (
                g.constant(noisy),
                g.constant(cond),
                g.constant(keep),
                g.constant(eps),
                g.constant(weights),
            );
            let per_row = self.loss_graph(g, vars, nv, cv, kv, ev);
            let weighted = g.mul(per_row, wv);
            g.mean(weighted)
        })
    }

    fn predict(&self, y: &Array2<f64>, s: usize, cond: &Array2<f64>) -> Result<Array2<f64>> {
        let n = y.nrows();
        let tf = time_features(s, self.schedule.steps());
        let t = Array2::from_shape_fn((n, TIME_FEATURES), |(_, k)| tf[k]);
        let input = ndarray::concatenate(Axis(1), &[y.view(), t.view(), cond.view()])
            .expect("matching rows");
        self.net.forward_batch(input.view())
    }

    /// Guided noise estimate `(w+1)·ε_c − w·ε_u` together with its two parts.
    pub fn guided_eps(
        &self,
        y: &Array2<f64>,
        s: usize,
        cond: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let n = y.nrows();
        let null =
            Array2::from_shape_fn((n, self.cond_dim()), |(_, j)| self.null_condition[[0, j]]);
        let eps_c = self.predict(y, s, cond)?;
        let eps_u = self.predict(y, s, &null)?;
        let w = self.guidance_w;
        let guided = &eps_c * (w + 1.0) - &eps_u * w;
        Ok((guided, eps_c, eps_u))
    }

    /// Ancestral sampling from `y_S ~ N(0, I)` down to `y_0`.
    pub fn generate(
        &self,
        a_bar: &[u8],
        v_range: Option<(f64, f64)>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_condition(a_bar)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rngs: Vec<SimRng> = (0..n)
            .map(|i| stream(seed, Purpose::Generation, i as u64))
            .collect();
        let c = self.cond_dim();
        let mut cond = Array2::zeros((n, c));
        for (i, rng) in rngs.iter_mut().enumerate() {
            let v = v_range.map(|(lo, hi)| {
                if lo < hi {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            });
            for (j, val) in condition_row(a_bar, v, self.uses_v).into_iter().enumerate() {
                cond[[i, j]] = val;
            }
        }
        let mut y = Array2::zeros((n, self.m));
        for (i, rng) in rngs.iter_mut().enumerate() {
            for k in 0..self.m {
                y[[i, k]] = rng.sample(StandardNormal);
            }
        }
        for s in (1..=self.schedule.steps()).rev() {
            let (eps_bar, _, _) = self.guided_eps(&y, s, &cond)?;
            let gamma = self.schedule.gamma(s);
            let coef = gamma / (1.0 - self.schedule.lambda_bar(s)).sqrt();
            let inv_sqrt_lambda = 1.0 / (1.0 - gamma).sqrt();
            let sd = gamma.sqrt();
            for (i, rng) in rngs.iter_mut().enumerate() {
                for k in 0..self.m {
                    let mean = (y[[i, k]] - coef * eps_bar[[i, k]]) * inv_sqrt_lambda;
                    y[[i, k]] = if s > 1 {
                        mean + sd * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        mean
                    };
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diffusion sample".into()));
        }
        Ok(y.outer_iter()
            .map(|row| {
                self.standardizer
                    .inverse_row(row.as_slice().expect("contiguous"))
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> DiffusionCheckpoint {
        DiffusionCheckpoint {
            d: self.d,
            m: self.m,
            uses_v: self.uses_v,
            guidance_w: self.guidance_w,
            p_uncond: self.p_uncond,
            net: self.net.to_checkpoint(),
            null_condition: self.null_condition.iter().copied().collect(),
            standardizer: self.standardizer.clone(),
        }
    }

    pub fn from_checkpoint(c: &DiffusionCheckpoint, schedule: Schedule) -> Result<Self> {
        let net = Mlp::from_checkpoint(&c.net)?;
        let cd = c.d + usize::from(c.uses_v);
        if net.input_dim() != c.m + TIME_FEATURES + cd
            || net.output_dim() != c.m
            || c.null_condition.len() != cd
        {
            return Err(Error::Config(
                "diffusion checkpoint network shapes do not agree".into(),
            ));
        }
        Ok(Self {
            d: c.d,
            m: c.m,
            uses_v: c.uses_v,
            schedule,
            guidance_w: c.guidance_w,
            p_uncond: c.p_uncond,
            net,
            null_condition: Array2::from_shape_vec((1, cd), c.null_condition.clone()).expect("row"),
            standardizer: c.standardizer.clone(),
        })
    }
}
