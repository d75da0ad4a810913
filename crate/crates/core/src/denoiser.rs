//! Noise-prediction network over state trajectories and its training loop.
//!
//! A temporal residual convolution network: each block applies
//! conv → group norm → Mish, adds a projection of the (step, condition)
//! embedding broadcast over time, applies a second conv → group norm → Mish,
//! and adds a residual (1×1 projection when widths differ). A final linear
//! map returns to the state dimension.

use log::{debug, info};
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    ema_update, l2_norm, mish_backward, mish_forward, sinusoidal_features, Adam, Conv1d, GroupNorm, GroupNormCache,
    Linear, Objective, ParamLayout, Slot,
};
use crate::schedule::{forward_sample, NoiseSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub state_dim: usize,
    pub n_blocks: usize,
    /// Block `i` has width `channels[min(i, len − 1)]`.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub groups: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub cond_dim: usize,
    pub dropout_p: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            state_dim: crate::types::STATE_DIM,
            n_blocks: 3,
            channels: vec![32, 64],
            kernel_size: 5,
            groups: 8,
            embed_dim: 128,
            hidden_dim: 256,
            cond_dim: 1,
            dropout_p: 0.2,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.state_dim == 0 || self.n_blocks == 0 || self.channels.is_empty() {
            return bad("state_dim, n_blocks and channels must be non-empty/positive".into());
        }
        if self.embed_dim < 2 || self.hidden_dim == 0 || self.cond_dim == 0 {
            return bad("embed_dim >= 2, hidden_dim and cond_dim must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        for &c in &self.channels {
            if c == 0 || c % self.groups != 0 {
                return bad(format!("width {c} is not a positive multiple of groups={}", self.groups));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }

    pub fn width(&self, block: usize) -> usize {
        self.channels[block.min(self.channels.len() - 1)]
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv1d,
    gn1: GroupNorm,
    emb: Linear,
    conv2: Conv1d,
    gn2: GroupNorm,
    res: Option<Linear>,
}

struct BlockCache {
    x: Array2<f64>,
    cols1: Array2<f64>,
    gn1: GroupNormCache,
    n1: Array2<f64>,
    cols2: Array2<f64>,
    gn2: GroupNormCache,
    n2: Array2<f64>,
}

/// The architecture: parameter layout plus layer descriptors.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub config: DenoiserConfig,
    layout: ParamLayout,
    time1: Linear,
    time2: Linear,
    cond1: Linear,
    cond2: Linear,
    null_embedding: Slot,
    blocks: Vec<Block>,
    out: Linear,
}

/// Forward activations kept for the backward pass.
pub struct Tape {
    horizon: usize,
    t_feat: Array2<f64>,
    t_pre: Array2<f64>,
    t_hid: Array2<f64>,
    /// Batch columns that carry a real condition.
    cond_cols: Vec<usize>,
    c_in: Array2<f64>,
    c_pre: Array2<f64>,
    c_hid: Array2<f64>,
    emb: Array2<f64>,
    memb: Array2<f64>,
    blocks: Vec<BlockCache>,
    last: Array2<f64>,
}

impl DenoiserNet {
    pub fn new(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let h = config.hidden_dim;
        let mut layout = ParamLayout::new();
        let time1 = Linear::new(&mut layout, "time_mlp.0", e, h);
        let time2 = Linear::new(&mut layout, "time_mlp.1", h, e);
        let cond1 = Linear::new(&mut layout, "cond_mlp.0", config.cond_dim, h);
        let cond2 = Linear::new(&mut layout, "cond_mlp.1", h, e);
        let null_embedding = layout.add("null_embedding", e, 1);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        let mut inp = config.state_dim;
        for i in 0..config.n_blocks {
            let out = config.width(i);
            let p = format!("blocks.{i}");
            blocks.push(Block {
                conv1: Conv1d::new(&mut layout, &format!("{p}.conv1"), inp, out, config.kernel_size),
                gn1: GroupNorm::new(&mut layout, &format!("{p}.gn1"), out, config.groups),
                emb: Linear::new(&mut layout, &format!("{p}.emb_proj"), 2 * e, out),
                conv2: Conv1d::new(&mut layout, &format!("{p}.conv2"), out, out, config.kernel_size),
                gn2: GroupNorm::new(&mut layout, &format!("{p}.gn2"), out, config.groups),
                res: (inp != out).then(|| Linear::new(&mut layout, &format!("{p}.res"), inp, out)),
            });
            inp = out;
        }
        let out = Linear::new(&mut layout, "out", inp, config.state_dim);
        Ok(DenoiserNet {
            config: config.clone(),
            layout,
            time1,
            time2,
            cond1,
            cond2,
            null_embedding,
            blocks,
            out,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; self.layout.len()];
        for lin in [&self.time1, &self.time2, &self.cond1, &self.cond2] {
            lin.init(&mut w, &mut rng);
        }
        let bound = 1.0 / (self.config.embed_dim as f64).sqrt();
        crate::nn::init_uniform(self.null_embedding.slice_mut(&mut w), bound, &mut rng);
        for b in &self.blocks {
            b.conv1.init(&mut w, &mut rng);
            b.gn1.init(&mut w);
            b.emb.init(&mut w, &mut rng);
            b.conv2.init(&mut w, &mut rng);
            b.gn2.init(&mut w);
            if let Some(r) = &b.res {
                r.init(&mut w, &mut rng);
            }
        }
        self.out.init(&mut w, &mut rng);
        w
    }

    /// Runs the network on a packed batch `x` (`[D, B·T]`, sample-major).
    /// `conds[b] = None` selects the learned null embedding.
    pub fn forward(&self, w: &[f64], x: Array2<f64>, horizon: usize, ks: &[usize], conds: &[Option<&[f64]>]) -> Result<(Array2<f64>, Tape)> {
        let batch = ks.len();
        let d = self.config.state_dim;
        let e = self.config.embed_dim;
        if x.dim() != (d, batch * horizon) || conds.len() != batch || horizon == 0 {
            return Err(Error::shape(format!("[{d}, {}] with {batch} conditions", batch * horizon), format!("{:?} with {} conditions", x.dim(), conds.len())));
        }

        let mut t_feat = Array2::zeros((e, batch));
        for (b, &k) in ks.iter().enumerate() {
            let f = sinusoidal_features(k as f64, e);
            t_feat.column_mut(b).iter_mut().zip(f).for_each(|(o, v)| *o = v);
        }
        let t_pre = self.time1.forward(w, &t_feat);
        let t_hid = mish_forward(&t_pre);
        let t_emb = self.time2.forward(w, &t_hid);

        let cond_cols: Vec<usize> = (0..batch).filter(|&b| conds[b].is_some()).collect();
        let cd = self.config.cond_dim;
        let mut c_in = Array2::zeros((cd, cond_cols.len()));
        for (j, &b) in cond_cols.iter().enumerate() {
            let y = conds[b].expect("filtered");
            if y.len() != cd {
                return Err(Error::shape(format!("condition of length {cd}"), y.len()));
            }
            c_in.column_mut(j).iter_mut().zip(y).for_each(|(o, v)| *o = *v);
        }
        let c_pre = self.cond1.forward(w, &c_in);
        let c_hid = mish_forward(&c_pre);
        let c_emb = self.cond2.forward(w, &c_hid);

        let mut emb = Array2::zeros((2 * e, batch));
        emb.slice_mut(s![..e, ..]).assign(&t_emb);
        let null = self.null_embedding.slice(w);
        for b in 0..batch {
            emb.slice_mut(s![e.., b]).iter_mut().zip(null).for_each(|(o, v)| *o = *v);
        }
        for (j, &b) in cond_cols.iter().enumerate() {
            emb.slice_mut(s![e.., b]).assign(&c_emb.column(j));
        }
        let memb = mish_forward(&emb);

        let mut h = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a1, cols1) = blk.conv1.forward(w, &h, horizon);
            let (n1, gn1) = blk.gn1.forward(w, &a1, horizon);
            let mut h1 = mish_forward(&n1);
            let proj = blk.emb.forward(w, &memb);
            for (mut row, prow) in h1.axis_iter_mut(Axis(0)).zip(proj.axis_iter(Axis(0))) {
                let r = row.as_slice_mut().expect("contiguous");
                for (b, &p) in prow.iter().enumerate() {
                    r[b * horizon..(b + 1) * horizon].iter_mut().for_each(|v| *v += p);
                }
            }
            let (a2, cols2) = blk.conv2.forward(w, &h1, horizon);
            drop(h1);
            let (n2, gn2) = blk.gn2.forward(w, &a2, horizon);
            let mut out = mish_forward(&n2);
            match &blk.res {
                Some(r) => out += &r.forward(w, &h),
                None => out += &h,
            }
            caches.push(BlockCache {
                x: h,
                cols1,
                gn1,
                n1,
                cols2,
                gn2,
                n2,
            });
            h = out;
        }
        let y = self.out.forward(w, &h);
        Ok((
            y,
            Tape {
                horizon,
                t_feat,
                t_pre,
                t_hid,
                cond_cols,
                c_in,
                c_pre,
                c_hid,
                emb,
                memb,
                blocks: caches,
                last: h,
            },
        ))
    }

    /// Accumulates `∂L/∂w` given `dy = ∂L/∂output` into `g`.
    pub fn backward(&self, w: &[f64], tape: &Tape, dy: &Array2<f64>, g: &mut [f64]) {
        let horizon = tape.horizon;
        let e = self.config.embed_dim;
        let mut dh = self.out.backward(w, &tape.last, dy, g);
        let mut dmemb = Array2::zeros(tape.memb.dim());
        for (blk, c) in self.blocks.iter().zip(&tape.blocks).rev() {
            let dx_res = match &blk.res {
                Some(r) => r.backward(w, &c.x, &dh, g),
                None => dh.clone(),
            };
            let dn2 = mish_backward(&c.n2, &dh);
            let da2 = blk.gn2.backward(w, &c.gn2, &dn2, g, horizon);
            let dh1 = blk.conv2.backward(w, &c.cols2, &da2, g, horizon);
            let batch = dh1.ncols() / horizon;
            let mut dproj = Array2::zeros((dh1.nrows(), batch));
            for (mut prow, row) in dproj.axis_iter_mut(Axis(0)).zip(dh1.axis_iter(Axis(0))) {
                let r = row.as_slice().expect("contiguous");
                for (b, p) in prow.iter_mut().enumerate() {
                    *p = r[b * horizon..(b + 1) * horizon].iter().sum();
                }
            }
            dmemb += &blk.emb.backward(w, &tape.memb, &dproj, g);
            let dn1 = mish_backward(&c.n1, &dh1);
            let da1 = blk.gn1.backward(w, &c.gn1, &dn1, g, horizon);
            let mut dx = blk.conv1.backward(w, &c.cols1, &da1, g, horizon);
            dx += &dx_res;
            dh = dx;
        }

        let demb = mish_backward(&tape.emb, &dmemb);
        let dt_emb = demb.slice(s![..e, ..]).to_owned();
        let dt_hid = self.time2.backward(w, &tape.t_hid, &dt_emb, g);
        self.time1.backward_params(&tape.t_feat, &mish_backward(&tape.t_pre, &dt_hid), g);

        let mut dc_emb = Array2::zeros((e, tape.cond_cols.len()));
        let mut is_cond = vec![false; demb.ncols()];
        for (j, &b) in tape.cond_cols.iter().enumerate() {
            dc_emb.column_mut(j).assign(&demb.slice(s![e.., b]));
            is_cond[b] = true;
        }
        let dnull = self.null_embedding.slice_mut(g);
        for (b, _) in is_cond.iter().enumerate().filter(|(_, c)| !**c) {
            for (o, v) in dnull.iter_mut().zip(demb.slice(s![e.., b])) {
                *o += v;
            }
        }
        if !tape.cond_cols.is_empty() {
            let dc_hid = self.cond2.backward(w, &tape.c_hid, &dc_emb, g);
            self.cond1.backward_params(&tape.c_in, &mish_backward(&tape.c_pre, &dc_hid), g);
        }
    }
}

/// Packs `B` trajectories (`T × D` each) into `[D, B·T]`.
pub fn pack_batch(xs: &[ArrayView2<f64>]) -> Result<(Array2<f64>, usize)> {
    let first = xs.first().ok_or_else(|| Error::Empty("empty batch".into()))?;
    let (t, d) = first.dim();
    let mut out = Array2::zeros((d, xs.len() * t));
    for (b, x) in xs.iter().enumerate() {
        if x.dim() != (t, d) {
            return Err(Error::shape(format!("{t}x{d}"), format!("{:?}", x.dim())));
        }
        out.slice_mut(s![.., b * t..(b + 1) * t]).assign(&x.t());
    }
    Ok((out, t))
}

/// Inverse of [`pack_batch`].
pub fn unpack_batch(y: &Array2<f64>, horizon: usize) -> Vec<Array2<f64>> {
    (0..y.ncols() / horizon)
        .map(|b| y.slice(s![.., b * horizon..(b + 1) * horizon]).t().to_owned())
        .collect()
}

/// Trained (or freshly initialized) network weights plus the EMA shadow.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub net: DenoiserNet,
    pub weights: Vec<f64>,
    pub ema: Vec<f64>,
}

impl DenoiserParams {
    pub fn config(&self) -> &DenoiserConfig {
        &self.net.config
    }

    /// Weights used for generation.
    pub fn inference_weights(&self) -> &[f64] {
        &self.ema
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.ema).all(|v| v.is_finite())
    }

    /// Predicts noise for a batch of noisy trajectories sharing one horizon.
    pub fn predict_batch(&self, xs: &[ArrayView2<f64>], ks: &[usize], conds: &[Option<&[f64]>]) -> Result<Vec<Array2<f64>>> {
        if xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("denoiser input".into()));
        }
        let (x, horizon) = pack_batch(xs)?;
        let (y, _) = self.net.forward(self.inference_weights(), x, horizon, ks, conds)?;
        Ok(unpack_batch(&y, horizon))
    }
}

pub fn init_denoiser(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    let net = DenoiserNet::new(config)?;
    let weights = net.init(seed);
    Ok(DenoiserParams {
        ema: weights.clone(),
        net,
        weights,
    })
}

/// `ε_θ(x_k, y, k)` for one trajectory; `y = None` is the null token.
pub fn predict_noise(params: &DenoiserParams, x_k: &Array2<f64>, k: usize, y: Option<&[f64]>) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("noise prediction needs k >= 1".into()));
    }
    Ok(params.predict_batch(&[x_k.view()], &[k], &[y])?.remove(0))
}

/// A fixed minibatch: clean trajectories, steps, noise draws and
/// (possibly dropped) conditions.
#[derive(Debug, Clone)]
pub struct NoiseBatch {
    pub x0: Vec<Array2<f64>>,
    pub ks: Vec<usize>,
    pub eps: Vec<Array2<f64>>,
    pub conds: Vec<Option<Vec<f64>>>,
}

/// Mean squared noise-prediction error over every entry of the batch.
pub fn batch_loss(net: &DenoiserNet, w: &[f64], schedule: &NoiseSchedule, batch: &NoiseBatch, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let xk: Vec<Array2<f64>> = batch
        .x0
        .iter()
        .zip(&batch.ks)
        .zip(&batch.eps)
        .map(|((x0, &k), eps)| forward_sample(schedule, x0, k, eps))
        .collect::<Result<_>>()?;
    let views: Vec<_> = xk.iter().map(|x| x.view()).collect();
    let (x, horizon) = pack_batch(&views)?;
    let conds: Vec<Option<&[f64]>> = batch.conds.iter().map(|c| c.as_deref()).collect();
    let (y, tape) = net.forward(w, x, horizon, &batch.ks, &conds)?;
    let eviews: Vec<_> = batch.eps.iter().map(|e| e.view()).collect();
    let (target, _) = pack_batch(&eviews)?;
    let diff = &y - &target;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    if !want_grad {
        return Ok((loss, None));
    }
    let dy = diff.mapv(|v| 2.0 * v / n);
    let mut g = vec![0.0; w.len()];
    net.backward(w, &tape, &dy, &mut g);
    Ok((loss, Some(g)))
}

/// [`Objective`] view of [`batch_loss`] for gradient checking.
pub struct DenoiserObjective<'a> {
    pub net: &'a DenoiserNet,
    pub schedule: &'a NoiseSchedule,
    pub batch: &'a NoiseBatch,
}

impl Objective for DenoiserObjective<'_> {
    fn loss(&self, params: &[f64]) -> f64 {
        batch_loss(self.net, params, self.schedule, self.batch, false).expect("valid batch").0
    }

    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (l, g) = batch_loss(self.net, params, self.schedule, self.batch, true).expect("valid batch");
        (l, g.expect("requested"))
    }
}

/// Max relative error between analytic and central-difference gradients of
/// the noise-prediction loss at `n_coords` coordinates.
pub fn finite_diff_check(params: &DenoiserParams, schedule: &NoiseSchedule, batch: &NoiseBatch, n_coords: usize, coord_seed: u64) -> f64 {
    let obj = DenoiserObjective {
        net: &params.net,
        schedule,
        batch,
    };
    crate::nn::finite_diff_check(&obj, &params.weights, n_coords, coord_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    /// Batch size as a fraction of the dataset (rounded up, at least 1).
    pub batch_frac: f64,
    pub epochs: usize,
    pub ema_period: usize,
    pub ema_decay: f64,
    /// Optimizer steps during which the shadow simply copies the weights.
    pub ema_warmup: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-4,
            batch_frac: 0.02,
            epochs: 500,
            ema_period: 4,
            ema_decay: 0.995,
            ema_warmup: 500,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.batch_frac > 0.0 && self.batch_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!("batch_frac must be in (0, 1], got {}", self.batch_frac)));
        }
        if self.ema_period == 0 || !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidConfig("ema_period must be >= 1 and ema_decay in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self, n: usize) -> usize {
        ((self.batch_frac * n as f64).ceil() as usize).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean minibatch loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Trains the denoiser on normalized trajectories (`T × D`, equal `T`) with
/// per-trajectory condition vectors.
pub fn train_denoiser(
    data: &[Array2<f64>],
    conds: &[Vec<f64>],
    schedule: &NoiseSchedule,
    config: &DenoiserConfig,
    hyper: &TrainHyper,
) -> Result<(DenoiserParams, TrainReport)> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("no trajectories to train on".into()));
    }
    if conds.len() != data.len() {
        return Err(Error::shape(format!("{} condition vectors", data.len()), conds.len()));
    }
    let (t, d) = data[0].dim();
    if d != config.state_dim || data.iter().any(|x| x.dim() != (t, d)) {
        return Err(Error::shape(format!("{t}x{}", config.state_dim), "mixed trajectory shapes"));
    }
    if data.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("training trajectory".into()));
    }
    let mut params = init_denoiser(config, hyper.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::sim::derive_seed(hyper.seed, 0xD1FF));
    let mut adam = Adam::new(params.weights.len(), hyper.lr);
    let bs = hyper.batch_size(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let batch = NoiseBatch {
                x0: chunk.iter().map(|&i| data[i].clone()).collect(),
                ks: chunk.iter().map(|_| rng.random_range(1..=schedule.steps)).collect(),
                eps: chunk
                    .iter()
                    .map(|_| Array2::from_shape_simple_fn((t, d), || rng.sample(StandardNormal)))
                    .collect(),
                conds: chunk
                    .iter()
                    .map(|&i| (rng.random::<f64>() >= config.dropout_p).then(|| conds[i].clone()))
                    .collect(),
            };
            let (loss, grad) = batch_loss(&params.net, &params.weights, schedule, &batch, true)?;
            let grad = grad.expect("requested");
            let gn = l2_norm(&grad);
            if !loss.is_finite() || !gn.is_finite() {
                return Err(Error::Diverged {
                    step: report.steps,
                    lr: hyper.lr,
                    grad_norm: gn,
                    detail: format!("loss {loss} in epoch {epoch}"),
                });
            }
            adam.step(&mut params.weights, &grad);
            report.steps += 1;
            if report.steps <= hyper.ema_warmup {
                params.ema.copy_from_slice(&params.weights);
            } else if report.steps % hyper.ema_period == 0 {
                ema_update(&mut params.ema, &params.weights, hyper.ema_decay);
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        report.epoch_loss.push(mean);
        if epoch % 50 == 0 || epoch + 1 == hyper.epochs {
            info!("denoiser epoch {epoch}: loss {mean:.5}");
        } else {
            debug!("denoiser epoch {epoch}: loss {mean:.5}");
        }
    }
    Ok((params, report))
}
