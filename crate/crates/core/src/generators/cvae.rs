use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{condition_row, Standardizer};
use crate::diffgraph::{value_and_grad, Activation, Graph, Mlp, MlpCheckpoint, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, SimRng};

/// Log-variances are clamped to this magnitude before exponentiation.
const LOGVAR_LIMIT: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvaeConfig {
    /// Latent dimension; `None` picks 5 for d ≤ 3 with m = 1, else 10.
    #[serde(default)]
    pub r: Option<usize>,
    pub width: usize,
    pub depth: usize,
    pub decoder_variance: f64,
    /// Add `N(0, decoder_variance)` noise to generated outcomes.
    pub decoder_noise: bool,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            r: None,
            width: 64,
            depth: 2,
            decoder_variance: 0.01,
            decoder_noise: true,
        }
    }
}

pub fn default_latent_dim(d: usize, m: usize) -> usize {
    if d <= 3 && m == 1 {
        5
    } else {
        10
    }
}

/// Conditional VAE with a learned conditional prior and a fixed-variance
/// Gaussian decoder. Nets work on standardized outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub d: usize,
    pub m: usize,
    pub r: usize,
    pub uses_v: bool,
    pub decoder_variance: f64,
    pub decoder_noise: bool,
    pub encoder: Mlp,
    pub prior: Mlp,
    pub decoder: Mlp,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeCheckpoint {
    pub d: usize,
    pub m: usize,
    pub r: usize,
    pub uses_v: bool,
    pub decoder_variance: f64,
    pub decoder_noise: bool,
    pub encoder: MlpCheckpoint,
    pub prior: MlpCheckpoint,
    pub decoder: MlpCheckpoint,
    pub standardizer: Standardizer,
}

/// Per-row terms of the bound, all `n×1`.
pub struct ElboTerms {
    pub elbo: Var,
    pub kl: Var,
    pub recon: Var,
}

impl CvaeModel {
    pub fn new(
        d: usize,
        m: usize,
        uses_v: bool,
        cfg: &CvaeConfig,
        standardizer: Standardizer,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if !(cfg.decoder_variance > 0.0 && cfg.decoder_variance.is_finite()) {
            return Err(Error::Config("decoder variance must be positive".into()));
        }
        let r = cfg.r.unwrap_or_else(|| default_latent_dim(d, m));
        if r == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        let c = d + usize::from(uses_v);
        let (w, k) = (cfg.width, cfg.depth);
        let encoder = Mlp::with_hidden(
            m + c,
            w,
            k,
            2 * r,
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let prior = Mlp::with_hidden(c, w, k, 2 * r, Activation::Relu, Activation::Identity, rng)?;
        let decoder =
            Mlp::with_hidden(r + c, w, k, m, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self {
            d,
            m,
            r,
            uses_v,
            decoder_variance: cfg.decoder_variance,
            decoder_noise: cfg.decoder_noise,
            encoder,
            prior,
            decoder,
            standardizer,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.d + usize::from(self.uses_v)
    }

    /// Encoder, prior, then decoder blocks.
    pub fn params(&self) -> Vec<Array2<f64>> {
        let mut p = self.encoder.blocks();
        p.extend(self.prior.blocks());
        p.extend(self.decoder.blocks());
        p
    }

    pub fn set_params(&mut self, p: &[Array2<f64>]) {
        let ne = self.encoder.num_blocks();
        let np = self.prior.num_blocks();
        self.encoder.set_blocks(&p[..ne]);
        self.prior.set_blocks(&p[ne..ne + np]);
        self.decoder.set_blocks(&p[ne + np..]);
    }

    /// Record the bound for standardized outcomes `y` (n×m), conditions
    /// (n×c) and reparameterization noise (n×r).
    pub fn elbo_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        y: Var,
        cond: Var,
        noise: Var,
    ) -> ElboTerms {
        let ne = self.encoder.num_blocks();
        let np = self.prior.num_blocks();
        let (ve, rest) = vars.split_at(ne);
        let (vp, vd) = rest.split_at(np);
        let r = self.r;

        let enc_in = g.concat(&[y, cond]);
        let enc = self.encoder.forward_graph(g, ve, enc_in);
        let mu_q = g.columns(enc, 0, r);
        let lv_q = g.columns(enc, r, 2 * r);
        let lv_q = g.clamp(lv_q, -LOGVAR_LIMIT, LOGVAR_LIMIT);

        let pri = self.prior.forward_graph(g, vp, cond);
        let mu_p = g.columns(pri, 0, r);
        let lv_p = g.columns(pri, r, 2 * r);
        let lv_p = g.clamp(lv_p, -LOGVAR_LIMIT, LOGVAR_LIMIT);

        let half_lv = g.scale(lv_q, 0.5);
        let sd_q = g.exp(half_lv);
        let spread = g.mul(sd_q, noise);
        let z = g.add(mu_q, spread);

        let dec_in = g.concat(&[z, cond]);
        let y_hat = self.decoder.forward_graph(g, vd, dec_in);
        let resid = g.sub(y, y_hat);
        let sq = g.square(resid);
        let sse = g.sum_cols(sq);
        let s2 = self.decoder_variance;
        let recon = g.scale(sse, -0.5 / s2);
        let recon = g.offset(
            recon,
            -0.5 * self.m as f64 * (2.0 * std::f64::consts::PI * s2).ln(),
        );

        // KL(N(μq, σq²) ‖ N(μp, σp²)) summed over latent coordinates
        let var_q = g.exp(lv_q);
        let dmu = g.sub(mu_q, mu_p);
        let dmu2 = g.square(dmu);
        let num = g.add(var_q, dmu2);
        let neg_lv_p = g.scale(lv_p, -1.0);
        let inv_var_p = g.exp(neg_lv_p);
        let ratio = g.mul(num, inv_var_p);
        let lv_diff = g.sub(lv_p, lv_q);
        let inner = g.add(lv_diff, ratio);
        let inner = g.offset(inner, -1.0);
        let kl = g.sum_cols(inner);
        let kl = g.scale(kl, 0.5);

        let elbo = g.sub(recon, kl);
        ElboTerms { elbo, kl, recon }
    }

    fn conditions(&self, a_bar: &[u8], v: Option<f64>, n: usize) -> Array2<f64> {
        let row = condition_row(a_bar, v, self.uses_v);
        Array2::from_shape_fn((n, row.len()), |(_, j)| row[j])
    }

    fn check_condition(&self, a_bar: &[u8]) -> Result<()> {
        if a_bar.len() != self.d {
            return Err(Error::Dimension {
                context: "cvae treatment window",
                expected: self.d,
                actual: a_bar.len(),
            });
        }
        Ok(())
    }

    /// Evaluate (ELBO, KL) for one raw outcome. The ELBO includes the
    /// standardization Jacobian, so it bounds the log-density of raw `y`.
    pub fn elbo_terms(
        &self,
        y: &[f64],
        a_bar: &[u8],
        v: Option<f64>,
        noise: &[f64],
    ) -> Result<(f64, f64)> {
        self.check_condition(a_bar)?;
        if y.len() != self.m || noise.len() != self.r {
            return Err(Error::Dimension {
                context: "cvae outcome / noise",
                expected: self.m + self.r,
                actual: y.len() + noise.len(),
            });
        }
        let ys = self.standardizer.forward_row(y);
        let params = self.params();
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
        let yv = g.constant(Array2::from_shape_vec((1, self.m), ys).expect("row"));
        let cv = g.constant(self.conditions(a_bar, v, 1));
        let nv = g.constant(Array2::from_shape_vec((1, self.r), noise.to_vec()).expect("row"));
        let t = self.elbo_graph(&mut g, &vars, yv, cv, nv);
        Ok((
            g.scalar(t.elbo) - self.standardizer.log_jacobian(),
            g.scalar(t.kl),
        ))
    }

    /// Weighted negative bound of a batch in standardized units.
    pub fn batch_loss(
        &self,
        params: &[Array2<f64>],
        y: Array2<f64>,
        cond: Array2<f64>,
        weights: Array2<f64>,
        rng: &mut SimRng,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        let n = y.nrows();
        let noise = Array2::from_shape_fn((n, self.r), |_| rng.sample(StandardNormal));
        value_and_grad(params, |g, vars| {
            let yv = g.constant(y);
            let cv = g.constant(cond);
            let nv = g.constant(noise);
            let wv = g.constant(weights);
            let t = self.elbo_graph(g, vars, yv, cv, nv);
            let weighted = g.mul(t.elbo, wv);
            let mean = g.mean(weighted);
            g.scale(mean, -1.0)
        })
    }

    /// Draw `n` outcomes for `ā`. Sample `i` uses its own stream, so results
    /// do not depend on `n` or on how the work is split.
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
        let c = self.cond_dim();
        let mut cond = Array2::zeros((n, c));
        let mut eps = Array2::<f64>::zeros((n, self.r));
        let mut dec_noise = Array2::<f64>::zeros((n, self.m));
        for i in 0..n {
            let mut rng = stream(seed, Purpose::Generation, i as u64);
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
            for k in 0..self.r {
                eps[[i, k]] = rng.sample(StandardNormal);
            }
            for k in 0..self.m {
                dec_noise[[i, k]] = rng.sample(StandardNormal);
            }
        }
        let prior = self.prior.forward_batch(cond.view())?;
        let mut z = Array2::zeros((n, self.r));
        for i in 0..n {
            for k in 0..self.r {
                let lv = prior[[i, self.r + k]].clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT);
                z[[i, k]] = prior[[i, k]] + (0.5 * lv).exp() * eps[[i, k]];
            }
        }
        let dec_in =
            ndarray::concatenate(Axis(1), &[z.view(), cond.view()]).expect("matching rows");
        let mut y = self.decoder.forward_batch(dec_in.view())?;
        if self.decoder_noise {
            y.scaled_add(self.decoder_variance.sqrt(), &dec_noise);
        }
        Ok(y.outer_iter()
            .map(|row| {
                self.standardizer
                    .inverse_row(row.as_slice().expect("contiguous"))
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> CvaeCheckpoint {
        CvaeCheckpoint {
            d: self.d,
            m: self.m,
            r: self.r,
            uses_v: self.uses_v,
            decoder_variance: self.decoder_variance,
            decoder_noise: self.decoder_noise,
            encoder: self.encoder.to_checkpoint(),
            prior: self.prior.to_checkpoint(),
            decoder: self.decoder.to_checkpoint(),
            standardizer: self.standardizer.clone(),
        }
    }

    pub fn from_checkpoint(c: &CvaeCheckpoint) -> Result<Self> {
        let model = Self {
            d: c.d,
            m: c.m,
            r: c.r,
            uses_v: c.uses_v,
            decoder_variance: c.decoder_variance,
            decoder_noise: c.decoder_noise,
            encoder: Mlp::from_checkpoint(&c.encoder)?,
            prior: Mlp::from_checkpoint(&c.prior)?,
            decoder: Mlp::from_checkpoint(&c.decoder)?,
            standardizer: c.standardizer.clone(),
        };
        let cd = model.cond_dim();
        let ok = model.encoder.input_dim() == c.m + cd
            && model.encoder.output_dim() == 2 * c.r
            && model.prior.input_dim() == cd
            && model.prior.output_dim() == 2 * c.r
            && model.decoder.input_dim() == c.r + cd
            && model.decoder.output_dim() == c.m
            && model.standardizer.shift.len() == c.m;
        if !ok {
            return Err(Error::Config(
                "cvae checkpoint network shapes do not agree".into(),
            ));
        }
        Ok(model)
    }
}

/// Closed-form `KL(N(μ1, σ1²) ‖ N(μ2, σ2²))` for scalars.
pub fn gaussian_kl(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    0.5 * ((var2 / var1).ln() + (var1 + (mu1 - mu2).powi(2)) / var2 - 1.0)
}
