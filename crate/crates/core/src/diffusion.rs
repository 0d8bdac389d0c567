//! Denoising diffusion shared by both stages: a linear noise schedule, a
//! residual MLP denoiser whose blocks are modulated by FiLM heads, epsilon
//! prediction training with momentum SGD, and ancestral sampling.
//!
//! All parameters live in one flat vector. Each dense layer stores its
//! `rows x cols` weight matrix row-major, followed by `cols` biases.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub num_steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(domain("schedule needs at least one step"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(domain("betas must satisfy 0 < start <= end < 1"));
        }
        let betas: Vec<f64> = (0..num_steps)
            .map(|i| {
                if num_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(domain("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(domain("betas must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(domain("betas must be non-decreasing"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            num_steps: betas.len(),
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Re-derives alphas from the stored betas and checks they agree.
    pub fn validate(&self) -> Result<()> {
        let fresh = NoiseSchedule::from_betas(self.betas.clone())?;
        if fresh.num_steps != self.num_steps
            || fresh
                .alpha_bars
                .iter()
                .zip(&self.alpha_bars)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::Format("schedule fields are inconsistent".into()));
        }
        Ok(())
    }

    /// `alpha_bar_t` for a 1-based step; `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps {
            return Err(domain(format!("step {t} outside 1..={}", self.num_steps)));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    /// Linear betas 1e-3 to 0.2 over 100 steps; ends at `alpha_bar` near 1e-5.
    fn default() -> Self {
        NoiseSchedule::linear(100, 1e-3, 0.2).expect("default schedule is valid")
    }
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_noise(x0: &[f64], t: usize, schedule: &NoiseSchedule, noise: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if x0.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            found: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// Layer sizes of a denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub data_dim: usize,
    pub context_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Width of the sinusoidal step embedding appended to the context.
    pub time_embed: usize,
    /// Width of the conditioning embedding that feeds the FiLM heads.
    pub cond_embed: usize,
}

impl NetShape {
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![
            (self.context_dim + self.time_embed, self.cond_embed),
            (self.data_dim, self.hidden),
        ];
        for _ in 0..self.blocks {
            dims.push((self.hidden, self.hidden));
            dims.push((self.cond_embed, 2 * self.hidden));
            dims.push((self.hidden, self.hidden));
        }
        dims.push((self.hidden, self.data_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c + c).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden == 0 || self.cond_embed == 0 {
            return Err(domain("network widths must be positive"));
        }
        if !self.time_embed.is_multiple_of(2) {
            return Err(domain("time embedding width must be even"));
        }
        Ok(())
    }
}

const COND: usize = 0;
const INPUT: usize = 1;

fn dense1(block: usize) -> usize {
    2 + 3 * block
}

fn film(block: usize) -> usize {
    3 + 3 * block
}

fn dense2(block: usize) -> usize {
    4 + 3 * block
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    rows: usize,
    cols: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.offset..self.offset + self.rows * self.cols])
            .expect("layer layout")
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.rows * self.cols;
        ArrayView1::from(&p[start..start + self.cols])
    }

    fn weights_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape(
            (self.rows, self.cols),
            &mut p[self.offset..self.offset + self.rows * self.cols],
        )
        .expect("layer layout")
    }

    fn bias_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        let start = self.offset + self.rows * self.cols;
        &mut p[start..start + self.cols]
    }

    fn len(&self) -> usize {
        self.rows * self.cols + self.cols
    }
}

fn layout(shape: &NetShape) -> Vec<Layer> {
    let mut offset = 0;
    shape
        .layer_dims()
        .into_iter()
        .map(|(rows, cols)| {
            let l = Layer { rows, cols, offset };
            offset += l.len();
            l
        })
        .collect()
}

/// A FiLM generator: maps a conditioning vector to `(scale, shift)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmHead {
    /// `cond x 2·hidden`; the first `hidden` outputs are the scale.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl FilmHead {
    pub fn zeros(cond: usize, hidden: usize) -> Self {
        FilmHead {
            weights: Array2::zeros((cond, 2 * hidden)),
            bias: Array1::zeros(2 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 2
    }
}

/// `(1 + scale(cond)) * hidden + shift(cond)`.
pub fn apply_film(hidden: &[f64], cond: &[f64], head: &FilmHead) -> Result<Vec<f64>> {
    let w = head.hidden();
    if hidden.len() != w {
        return Err(Error::DimensionMismatch {
            expected: w,
            found: hidden.len(),
        });
    }
    if cond.len() != head.weights.nrows() {
        return Err(Error::DimensionMismatch {
            expected: head.weights.nrows(),
            found: cond.len(),
        });
    }
    let params = ArrayView1::from(cond).dot(&head.weights) + &head.bias;
    Ok((0..w)
        .map(|i| (1.0 + params[i]) * hidden[i] + params[w + i])
        .collect())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of a 1-based step, `width/2` frequencies.
pub fn step_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(1000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Residual MLP denoiser predicting the noise in `x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    shape: NetShape,
    params: Vec<f64>,
}

struct BlockCache {
    h_in: Array2<f64>,
    u: Array2<f64>,
    gamma: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
}

struct Cache {
    x: Array2<f64>,
    e: Array2<f64>,
    zc: Array2<f64>,
    hc: Array2<f64>,
    blocks: Vec<BlockCache>,
    h_out: Array2<f64>,
    hf: Array2<f64>,
}

impl DenoiserNet {
    /// Scaled-uniform dense layers; FiLM heads and the output layer start at zero.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut params = vec![0.0; shape.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layout(&shape);
        let out_layer = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let is_film = i >= 2 && (i - 2) % 3 == 1;
            if is_film || i == out_layer {
                continue;
            }
            // Residual branches start small so blocks begin near identity.
            let gain = if i >= 2 && (i - 2) % 3 == 2 { 0.5 } else { 1.0 };
            let limit = gain * (3.0 / l.rows as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut params[l.offset..l.offset + l.rows * l.cols] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(DenoiserNet { shape, params })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn film_head(&self, block: usize) -> FilmHead {
        let l = layout(&self.shape)[film(block)];
        FilmHead {
            weights: l.weights(&self.params).to_owned(),
            bias: l.bias(&self.params).to_owned(),
        }
    }

    /// Named layers as `(name, rows, cols, weights, bias)`, FiLM heads separate.
    fn named_layers(&self) -> (Vec<LayerRecord>, Vec<LayerRecord>) {
        let layers = layout(&self.shape);
        let mut dense = Vec::new();
        let mut heads = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let name = match i {
                COND => "cond".to_string(),
                INPUT => "input".to_string(),
                _ if i == layers.len() - 1 => "output".to_string(),
                _ => {
                    let b = (i - 2) / 3;
                    match (i - 2) % 3 {
                        0 => format!("block{b}.dense1"),
                        1 => format!("block{b}.film"),
                        _ => format!("block{b}.dense2"),
                    }
                }
            };
            let rec = LayerRecord {
                name,
                rows: l.rows,
                cols: l.cols,
                weights: l.weights(&self.params).iter().copied().collect(),
                bias: l.bias(&self.params).to_vec(),
            };
            if i >= 2 && (i - 2) % 3 == 1 && i != layers.len() - 1 {
                heads.push(rec);
            } else {
                dense.push(rec);
            }
        }
        (dense, heads)
    }

    fn from_named_layers(shape: NetShape, dense: &[LayerRecord], heads: &[LayerRecord]) -> Result<Self> {
        shape.validate()?;
        let layers = layout(&shape);
        let mut params = vec![0.0; shape.param_count()];
        let (mut di, mut hi) = (dense.iter(), heads.iter());
        for (i, l) in layers.iter().enumerate() {
            let is_film = i >= 2 && (i - 2) % 3 == 1 && i != layers.len() - 1;
            let rec = if is_film { hi.next() } else { di.next() }
                .ok_or_else(|| Error::Format("checkpoint is missing layers".into()))?;
            if rec.rows != l.rows || rec.cols != l.cols || rec.weights.len() != l.rows * l.cols || rec.bias.len() != l.cols {
                return Err(Error::Format(format!("layer {} has the wrong shape", rec.name)));
            }
            params[l.offset..l.offset + l.rows * l.cols].copy_from_slice(&rec.weights);
            l.bias_mut(&mut params).copy_from_slice(&rec.bias);
        }
        if di.next().is_some() || hi.next().is_some() {
            return Err(Error::Format("checkpoint has extra layers".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("checkpoint has non-finite weights".into()));
        }
        Ok(DenoiserNet { shape, params })
    }

    fn check_inputs(&self, x: &ArrayView2<f64>, ctx: &ArrayView2<f64>, steps: &[usize]) -> Result<()> {
        if x.ncols() != self.shape.data_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.data_dim,
                found: x.ncols(),
            });
        }
        if ctx.ncols() != self.shape.context_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.context_dim,
                found: ctx.ncols(),
            });
        }
        if ctx.nrows() != x.nrows() || steps.len() != x.nrows() {
            return Err(domain("batch rows disagree"));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<f64>, ctx: ArrayView2<f64>, steps: &[usize]) -> (Array2<f64>, Cache) {
        let p = &self.params;
        let layers = layout(&self.shape);
        let n = x.nrows();
        let sh = &self.shape;
        let mut e = Array2::zeros((n, sh.context_dim + sh.time_embed));
        e.slice_mut(s![.., ..sh.context_dim]).assign(&ctx);
        for (r, &t) in steps.iter().enumerate() {
            let emb = step_embedding(t, sh.time_embed);
            e.slice_mut(s![r, sh.context_dim..]).assign(&ArrayView1::from(&emb));
        }
        let zc = e.dot(&layers[COND].weights(p)) + layers[COND].bias(p);
        let hc = zc.mapv(silu);
        let mut h = x.dot(&layers[INPUT].weights(p)) + layers[INPUT].bias(p);
        let mut blocks = Vec::with_capacity(sh.blocks);
        for b in 0..sh.blocks {
            let l1 = layers[dense1(b)];
            let lf = layers[film(b)];
            let l2 = layers[dense2(b)];
            let u = h.dot(&l1.weights(p)) + l1.bias(p);
            let fm = hc.dot(&lf.weights(p)) + lf.bias(p);
            let gamma = fm.slice(s![.., ..sh.hidden]).to_owned();
            let beta = fm.slice(s![.., sh.hidden..]);
            let v = &u * &gamma.mapv(|g| 1.0 + g) + beta;
            let a = v.mapv(silu);
            let r = a.dot(&l2.weights(p)) + l2.bias(p);
            let h_next = &h + &r;
            blocks.push(BlockCache {
                h_in: h,
                u,
                gamma,
                v,
                a,
            });
            h = h_next;
        }
        let hf = h.mapv(silu);
        let lo = layers[layers.len() - 1];
        let out = hf.dot(&lo.weights(p)) + lo.bias(p);
        (
            out,
            Cache {
                x: x.to_owned(),
                e,
                zc,
                hc,
                blocks,
                h_out: h,
                hf,
            },
        )
    }

    /// Predicted noise for a batch of noisy inputs at 1-based steps.
    pub fn forward(&self, x: ArrayView2<f64>, ctx: ArrayView2<f64>, steps: &[usize]) -> Result<Array2<f64>> {
        self.check_inputs(&x, &ctx, steps)?;
        Ok(self.forward_cached(x, ctx, steps).0)
    }

    fn backward(&self, cache: &Cache, d_out: &Array2<f64>) -> Vec<f64> {
        let p = &self.params;
        let layers = layout(&self.shape);
        let sh = &self.shape;
        let mut grad = vec![0.0; p.len()];
        let put = |grad: &mut Vec<f64>, l: &Layer, input: &Array2<f64>, d: &Array2<f64>| {
            l.weights_mut(grad).assign(&input.t().dot(d));
            l.bias_mut(grad)
                .iter_mut()
                .zip(d.sum_axis(Axis(0)).iter())
                .for_each(|(g, v)| *g = *v);
        };
        let lo = layers[layers.len() - 1];
        put(&mut grad, &lo, &cache.hf, d_out);
        let mut dh = d_out.dot(&lo.weights(p).t()) * &cache.h_out.mapv(silu_grad);
        let mut dhc = Array2::<f64>::zeros(cache.hc.raw_dim());
        for b in (0..sh.blocks).rev() {
            let c = &cache.blocks[b];
            let l1 = layers[dense1(b)];
            let lf = layers[film(b)];
            let l2 = layers[dense2(b)];
            put(&mut grad, &l2, &c.a, &dh);
            let da = dh.dot(&l2.weights(p).t());
            let dv = da * &c.v.mapv(silu_grad);
            let du = &dv * &c.gamma.mapv(|g| 1.0 + g);
            let mut dfm = Array2::zeros((dv.nrows(), 2 * sh.hidden));
            dfm.slice_mut(s![.., ..sh.hidden]).assign(&(&dv * &c.u));
            dfm.slice_mut(s![.., sh.hidden..]).assign(&dv);
            put(&mut grad, &lf, &cache.hc, &dfm);
            dhc = dhc + dfm.dot(&lf.weights(p).t());
            put(&mut grad, &l1, &c.h_in, &du);
            dh = dh + du.dot(&l1.weights(p).t());
        }
        put(&mut grad, &layers[INPUT], &cache.x, &dh);
        let dzc = dhc * &cache.zc.mapv(silu_grad);
        put(&mut grad, &layers[COND], &cache.e, &dzc);
        grad
    }

    /// Mean squared error between predicted and target noise, and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x_t: ArrayView2<f64>,
        ctx: ArrayView2<f64>,
        steps: &[usize],
        target: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(&x_t, &ctx, steps)?;
        if target.dim() != x_t.dim() {
            return Err(domain("target shape differs from input"));
        }
        let (out, cache) = self.forward_cached(x_t, ctx, steps);
        let diff = &out - &target;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let d_out = diff * (2.0 / count);
        Ok((loss, self.backward(&cache, &d_out)))
    }

    pub fn loss(&self, x_t: ArrayView2<f64>, ctx: ArrayView2<f64>, steps: &[usize], target: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward(x_t, ctx, steps)?;
        let diff = &out - &target;
        Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Momentum SGD with gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64, clip_norm: f64, n_params: usize) -> Self {
        Momentum {
            lr,
            momentum,
            clip_norm,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + scale * g;
            *p -= self.lr * *v;
        }
    }
}

/// A training batch: clean data rows and their context rows.
pub struct Batch<'a> {
    pub x0: ArrayView2<'a, f64>,
    pub context: ArrayView2<'a, f64>,
}

/// One optimisation step. Draws a step and noise per row, computes the
/// epsilon-prediction loss, updates the weights and returns the pre-update loss.
pub fn train_step<R: Rng>(
    net: &mut DenoiserNet,
    batch: &Batch,
    schedule: &NoiseSchedule,
    optimizer: &mut Momentum,
    rng: &mut R,
) -> Result<f64> {
    let n = batch.x0.nrows();
    if n == 0 {
        return Err(domain("empty batch"));
    }
    let d = batch.x0.ncols();
    let mut steps = Vec::with_capacity(n);
    let mut noise = Array2::zeros((n, d));
    let mut x_t = Array2::zeros((n, d));
    for r in 0..n {
        let t = rng.gen_range(1..=schedule.num_steps);
        steps.push(t);
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for c in 0..d {
            let e: f64 = StandardNormal.sample(rng);
            noise[[r, c]] = e;
            x_t[[r, c]] = a * batch.x0[[r, c]] + b * e;
        }
    }
    let (loss, grad) = net.loss_and_grad(x_t.view(), batch.context, &steps, noise.view())?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDivergence { step: 0, loss });
    }
    optimizer.apply(&mut net.params, &grad);
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub hidden: usize,
    pub blocks: usize,
    pub time_embed: usize,
    pub cond_embed: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 64,
            lr: 0.02,
            momentum: 0.9,
            clip_norm: 1.0,
            seed: 0,
            hidden: 128,
            blocks: 3,
            time_embed: 16,
            cond_embed: 64,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self, data_dim: usize, context_dim: usize) -> NetShape {
        NetShape {
            data_dim,
            context_dim,
            hidden: self.hidden,
            blocks: self.blocks,
            time_embed: self.time_embed,
            cond_embed: self.cond_embed,
        }
    }
}

pub struct TrainOutcome {
    pub net: DenoiserNet,
    /// Pre-update loss of every step.
    pub losses: Vec<f64>,
}

/// Trains a fresh denoiser on rows of `data` conditioned on matching rows
/// of `contexts`; batches are drawn with replacement.
pub fn train(data: ArrayView2<f64>, contexts: ArrayView2<f64>, schedule: &NoiseSchedule, config: &TrainConfig) -> Result<TrainOutcome> {
    let n = data.nrows();
    if n == 0 {
        return Err(domain("training set is empty"));
    }
    if contexts.nrows() != n {
        return Err(domain("data and context rows differ"));
    }
    if config.batch_size == 0 {
        return Err(domain("batch size must be positive"));
    }
    let shape = config.shape(data.ncols(), contexts.ncols());
    let mut net = DenoiserNet::new(shape, config.seed)?;
    let mut opt = Momentum::new(config.lr, config.momentum, config.clip_norm, shape.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
    let mut losses = Vec::with_capacity(config.steps);
    let mut xb = Array2::zeros((config.batch_size, data.ncols()));
    let mut cb = Array2::zeros((config.batch_size, contexts.ncols()));
    for step in 0..config.steps {
        for r in 0..config.batch_size {
            let i = rng.gen_range(0..n);
            xb.row_mut(r).assign(&data.row(i));
            cb.row_mut(r).assign(&contexts.row(i));
        }
        let batch = Batch {
            x0: xb.view(),
            context: cb.view(),
        };
        let loss = train_step(&mut net, &batch, schedule, &mut opt, &mut rng).map_err(|e| match e {
            Error::TrainingDivergence { loss, .. } => Error::TrainingDivergence { step: step as u64, loss },
            other => other,
        })?;
        if step % 1000 == 0 {
            log::debug!("step {step} loss {loss:.5}");
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { net, losses })
}

/// Ancestral sampling for a batch of contexts, one generator per row.
/// Predicted clean data is clipped to `[-1, 1]` at every step.
pub fn sample_rows<R: Rng>(
    net: &DenoiserNet,
    contexts: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    rngs: &mut [R],
) -> Result<Array2<f64>> {
    let n = contexts.nrows();
    if rngs.len() != n {
        return Err(domain("one generator per context row is required"));
    }
    let d = net.shape.data_dim;
    let mut x = Array2::zeros((n, d));
    for (r, rng) in rngs.iter_mut().enumerate() {
        for c in 0..d {
            x[[r, c]] = StandardNormal.sample(rng);
        }
    }
    for t in (1..=schedule.num_steps).rev() {
        let eps = net.forward(x.view(), contexts, &vec![t; n])?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let beta = schedule.betas[t - 1];
        let alpha = schedule.alphas[t - 1];
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sd = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        for (r, rng) in rngs.iter_mut().enumerate() {
            for c in 0..d {
                let xt = x[[r, c]];
                let x0 = ((xt - (1.0 - ab).sqrt() * eps[[r, c]]) / ab.sqrt()).clamp(-1.0, 1.0);
                let mut next = c0 * x0 + ct * xt;
                if t > 1 {
                    let z: f64 = StandardNormal.sample(rng);
                    next += sd * z;
                }
                if !next.is_finite() {
                    return Err(Error::SamplingDivergence { step: t });
                }
                x[[r, c]] = next;
            }
        }
    }
    Ok(x)
}

/// One sample conditioned on `context`.
pub fn sample<R: Rng>(net: &DenoiserNet, context: &[f64], schedule: &NoiseSchedule, rng: &mut R) -> Result<Vec<f64>> {
    let ctx = ArrayView2::from_shape((1, context.len()), context).map_err(|e| domain(e.to_string()))?;
    let out = sample_rows(net, ctx, schedule, std::slice::from_mut(rng))?;
    Ok(out.row(0).to_vec())
}

/// Seeded batch sampling; row `i` equals `sample` with a generator seeded by `seeds[i]`.
pub fn sample_seeded(net: &DenoiserNet, contexts: ArrayView2<f64>, schedule: &NoiseSchedule, seeds: &[u64]) -> Result<Array2<f64>> {
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    sample_rows(net, contexts, schedule, &mut rngs)
}

/// Per-component affine map of data onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Floor on the half range, so constant components decode to their value.
const MIN_HALF_RANGE: f64 = 1e-6;

impl NormStats {
    pub fn fit(rows: ArrayView2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(domain("cannot fit normalization to no data"));
        }
        let min = rows.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b)).to_vec();
        let max = rows.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b)).to_vec();
        Ok(NormStats { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn center_scale(&self, i: usize) -> (f64, f64) {
        let center = 0.5 * (self.min[i] + self.max[i]);
        let half = 0.5 * (self.max[i] - self.min[i]);
        (center, half.max(MIN_HALF_RANGE))
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (c, s) = self.center_scale(i);
                (v - c) / s
            })
            .collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (c, s) = self.center_scale(i);
                v * s + c
            })
            .collect()
    }
}

/// One named slice of a context vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub name: String,
    pub len: usize,
}

/// Layout of a context vector plus the encoder settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextLayout {
    pub segments: Vec<ContextSegment>,
    /// Encoder settings, e.g. pooling resolution or history length.
    pub settings: serde_json::Map<String, serde_json::Value>,
}

impl ContextLayout {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const CHECKPOINT_FORMAT: &str = "legimod-denoiser/1";

/// A trained denoiser with everything needed to condition and decode it.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub norm_stats: NormStats,
    pub context_layout: ContextLayout,
    pub seed: u64,
    pub train_steps: usize,
    pub final_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    arch: String,
    widths: NetShape,
    weights: Vec<LayerRecord>,
    film_heads: Vec<LayerRecord>,
    schedule: NoiseSchedule,
    norm_stats: NormStats,
    context_layout: ContextLayout,
    seed: u64,
    train_steps: usize,
    final_loss: f64,
}

const ARCH: &str = "residual-mlp-film";

impl DiffusionModel {
    pub fn data_dim(&self) -> usize {
        self.net.shape.data_dim
    }

    pub fn to_json(&self) -> Result<String> {
        let (weights, film_heads) = self.net.named_layers();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            arch: ARCH.into(),
            widths: self.net.shape,
            weights,
            film_heads,
            schedule: self.schedule.clone(),
            norm_stats: self.norm_stats.clone(),
            context_layout: self.context_layout.clone(),
            seed: self.seed,
            train_steps: self.train_steps,
            final_loss: self.final_loss,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(text)?;
        if f.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {:?}", f.format)));
        }
        if f.arch != ARCH {
            return Err(Error::Format(format!("unsupported architecture {:?}", f.arch)));
        }
        f.schedule.validate()?;
        if f.norm_stats.dim() != f.widths.data_dim || f.norm_stats.max.len() != f.widths.data_dim {
            return Err(Error::Format("normalization does not match the data width".into()));
        }
        if f.context_layout.len() != f.widths.context_dim {
            return Err(Error::Format("context layout does not match the context width".into()));
        }
        Ok(DiffusionModel {
            net: DenoiserNet::from_named_layers(f.widths, &f.weights, &f.film_heads)?,
            schedule: f.schedule,
            norm_stats: f.norm_stats,
            context_layout: f.context_layout,
            seed: f.seed,
            train_steps: f.train_steps,
            final_loss: f.final_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        DiffusionModel::from_json(&std::fs::read_to_string(path)?)
    }

    /// Builds and trains a model on raw data rows, normalizing them first.
    pub fn fit(
        data: ArrayView2<f64>,
        contexts: ArrayView2<f64>,
        context_layout: ContextLayout,
        schedule: NoiseSchedule,
        config: &TrainConfig,
    ) -> Result<Self> {
        if context_layout.len() != contexts.ncols() {
            return Err(Error::DimensionMismatch {
                expected: context_layout.len(),
                found: contexts.ncols(),
            });
        }
        let norm_stats = NormStats::fit(data)?;
        let mut normalized = data.to_owned();
        for mut row in normalized.rows_mut() {
            let v = norm_stats.normalize(row.as_slice().expect("contiguous row"));
            row.assign(&ArrayView1::from(&v));
        }
        let outcome = train(normalized.view(), contexts, &schedule, config)?;
        let tail = outcome.losses.len().min(100);
        let final_loss = if tail == 0 {
            f64::NAN
        } else {
            outcome.losses[outcome.losses.len() - tail..].iter().sum::<f64>() / tail as f64
        };
        log::info!("trained {} steps, final loss {final_loss:.5}", config.steps);
        Ok(DiffusionModel {
            net: outcome.net,
            schedule,
            norm_stats,
            context_layout,
            seed: config.seed,
            train_steps: config.steps,
            final_loss,
        })
    }

    /// Samples and de-normalizes one row per context.
    pub fn sample_batch(&self, contexts: ArrayView2<f64>, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
        let out = sample_seeded(&self.net, contexts, &self.schedule, seeds)?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| self.norm_stats.denormalize(&r.to_vec()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_shape() -> NetShape {
        NetShape {
            data_dim: 3,
            context_dim: 2,
            hidden: 6,
            blocks: 2,
            time_embed: 4,
            cond_embed: 5,
        }
    }

    #[test]
    fn default_schedule_ends_near_noise() {
        let s = NoiseSchedule::default();
        assert!(*s.alpha_bars.last().unwrap() < 0.01);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn schedule_rejects_bad_betas() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn forward_noise_cases() {
        let s = NoiseSchedule::default();
        let x0 = [0.5, -1.0];
        let out = forward_noise(&x0, 10, &s, &[0.0, 0.0]).unwrap();
        let a = s.alpha_bar(10).sqrt();
        assert_eq!(out, vec![0.5 * a, -a]);
        assert!(forward_noise(&x0, 0, &s, &[0.0, 0.0]).is_err());
        assert!(forward_noise(&x0, 101, &s, &[0.0, 0.0]).is_err());
        let one = NoiseSchedule::from_betas(vec![1e-300]).unwrap();
        assert_eq!(forward_noise(&x0, 1, &one, &[3.0, 3.0]).unwrap(), x0.to_vec());
    }

    #[test]
    fn film_identity_at_init() {
        let head = FilmHead::zeros(4, 3);
        let h = [0.3, -2.0, 7.0];
        assert_eq!(apply_film(&h, &[1.0, 2.0, 3.0, 4.0], &head).unwrap(), h.to_vec());
        assert!(apply_film(&h[..2], &[0.0; 4], &head).is_err());
        let net = DenoiserNet::new(tiny_shape(), 3).unwrap();
        assert!(net.film_head(1).weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn film_with_bias_only_is_constant_affine() {
        let mut head = FilmHead::zeros(2, 2);
        head.bias = Array1::from(vec![1.0, -0.5, 0.25, 2.0]);
        let out = apply_film(&[1.0, 4.0], &[0.0, 0.0], &head).unwrap();
        assert_eq!(out, vec![2.0 * 1.0 + 0.25, 0.5 * 4.0 + 2.0]);
    }

    #[test]
    fn zero_net_loss_is_target_energy() {
        let mut net = DenoiserNet::new(tiny_shape(), 0).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let x = Array2::from_elem((2, 3), 0.7);
        let ctx = Array2::zeros((2, 2));
        let target = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 0.0, 0.0, -1.0, 1.0]).unwrap();
        let loss = net.loss(x.view(), ctx.view(), &[1, 5], target.view()).unwrap();
        assert!((loss - 7.0 / 6.0).abs() < 1e-15);
        let zero = Array2::zeros((2, 3));
        assert_eq!(net.loss(x.view(), ctx.view(), &[1, 5], zero.view()).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let ctx = Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64);
        let layout = ContextLayout {
            segments: vec![ContextSegment { name: "c".into(), len: 2 }],
            settings: Default::default(),
        };
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 2,
            hidden: 6,
            blocks: 1,
            time_embed: 4,
            cond_embed: 5,
            ..TrainConfig::default()
        };
        let m = DiffusionModel::fit(data.view(), ctx.view(), layout, NoiseSchedule::linear(10, 1e-3, 0.2).unwrap(), &cfg).unwrap();
        let text = m.to_json().unwrap();
        for key in ["arch", "widths", "weights", "film_heads", "schedule", "norm_stats", "context_layout", "seed", "train_steps", "format"] {
            assert!(text.contains(&format!("\"{key}\"")), "{key}");
        }
        assert_eq!(DiffusionModel::from_json(&text).unwrap(), m);
        assert!(DiffusionModel::from_json(&text.replace(CHECKPOINT_FORMAT, "other/9")).is_err());
    }

    #[test]
    fn norm_stats_round_trip() {
        let rows = Array2::from_shape_vec((3, 2), vec![0.0, 5.0, 1.0, 5.0, 0.5, 5.0]).unwrap();
        let n = NormStats::fit(rows.view()).unwrap();
        assert_eq!(n.normalize(&[0.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(n.denormalize(&[0.3, 1.0])[1], 5.0 + 1e-6);
        assert_eq!(n.normalize(&[1.0, 5.0]), vec![1.0, 0.0]);
        assert_eq!(n.denormalize(&n.normalize(&[0.25, 5.0])), vec![0.25, 5.0]);
    }

    #[test]
    fn sampling_is_deterministic_and_batch_consistent() {
        let net = DenoiserNet::new(tiny_shape(), 1).unwrap();
        let s = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
        let ctx = [0.1, 0.2];
        let a = sample(&net, &ctx, &s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample(&net, &ctx, &s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let ctxs = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.1, 0.2]).unwrap();
        let batch = sample_seeded(&net, ctxs.view(), &s, &[9, 4]).unwrap();
        assert_eq!(batch.row(1).to_vec(), a);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shape = tiny_shape();
        let mut net = DenoiserNet::new(shape, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Non-zero heads and output so every path carries gradient.
        for p in net.params_mut() {
            *p += 0.3 * rng.gen_range(-1.0..1.0);
        }
        let x = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let ctx = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let steps = [1, 7, 30];
        let (_, grad) = net.loss_and_grad(x.view(), ctx.view(), &steps, target.view()).unwrap();
        let h = 1e-5;
        for i in 0..net.params().len() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = net.loss(x.view(), ctx.view(), &steps, target.view()).unwrap();
            net.params_mut()[i] = orig - h;
            let down = net.loss(x.view(), ctx.view(), &steps, target.view()).unwrap();
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / scale < 1e-4, "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
