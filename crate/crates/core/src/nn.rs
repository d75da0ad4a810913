//! Minimal reverse-mode layers over a flat parameter vector.
//!
//! Every model keeps its weights in one `Vec<f64>` described by a
//! [`ParamLayout`]; layers hold [`Slot`]s into it. Activations are
//! `[channels, columns]` matrices. For sequence models the columns are
//! `batch × time`, sample-major, so column `b·T + t` is time `t` of sample `b`.
//! Every `backward` *accumulates* into the gradient vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A named region of the flat parameter vector, viewed as `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.len()]
    }

    pub fn slice_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.offset..self.offset + self.len()]
    }

    pub fn view<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), self.slice(p)).expect("slot shape")
    }

    pub fn view_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), self.slice_mut(p)).expect("slot shape")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Declaration-ordered table of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.entries.push(ParamEntry {
            name: name.into(),
            offset: self.len,
            rows,
            cols,
        });
        self.len += rows * cols;
        slot
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// `tanh(softplus(x))` and `sigmoid(x)` from a single exponential.
#[inline]
fn mish_parts(x: f64) -> (f64, f64) {
    if x > 20.0 {
        return (1.0, 1.0);
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    (n / (n + 2.0), e / (1.0 + e))
}

#[inline]
pub fn mish(x: f64) -> f64 {
    x * mish_parts(x).0
}

#[inline]
pub fn mish_grad(x: f64) -> f64 {
    let (t, s) = mish_parts(x);
    t + x * (1.0 - t * t) * s
}

pub fn mish_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(mish)
}

/// `dy ⊙ mish'(x)`.
pub fn mish_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    ndarray::Zip::from(x).and(dy).map_collect(|&x, &d| d * mish_grad(x))
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// `y = W·x + b`, applied to every column of `x`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Slot,
    pub b: Slot,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, out: usize) -> Self {
        Linear {
            w: layout.add(format!("{name}.weight"), out, inp),
            b: layout.add(format!("{name}.bias"), out, 1),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols
    }

    pub fn outputs(&self) -> usize {
        self.w.rows
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let bound = 1.0 / (self.inputs() as f64).sqrt();
        init_uniform(self.w.slice_mut(p), bound, rng);
        init_uniform(self.b.slice_mut(p), bound, rng);
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> Array2<f64> {
        let n = x.ncols();
        let mut y = Array2::zeros((self.outputs(), n));
        let b = self.b.slice(p);
        for (mut row, &bias) in y.axis_iter_mut(Axis(0)).zip(b) {
            row.fill(bias);
        }
        general_mat_mul(1.0, &self.w.view(p), x, 1.0, &mut y);
        y
    }

    pub fn backward(&self, p: &[f64], x: &Array2<f64>, dy: &Array2<f64>, g: &mut [f64]) -> Array2<f64> {
        general_mat_mul(1.0, dy, &x.t(), 1.0, &mut self.w.view_mut(g));
        for (gb, row) in self.b.slice_mut(g).iter_mut().zip(dy.axis_iter(Axis(0))) {
            *gb += row.sum();
        }
        let mut dx = Array2::zeros(x.dim());
        general_mat_mul(1.0, &self.w.view(p).t(), dy, 0.0, &mut dx);
        dx
    }

    /// Parameter gradient only, for layers whose input needs no gradient.
    pub fn backward_params(&self, x: &Array2<f64>, dy: &Array2<f64>, g: &mut [f64]) {
        general_mat_mul(1.0, dy, &x.t(), 1.0, &mut self.w.view_mut(g));
        for (gb, row) in self.b.slice_mut(g).iter_mut().zip(dy.axis_iter(Axis(0))) {
            *gb += row.sum();
        }
    }
}

// ---------------------------------------------------------------------------
// Temporal convolution
// ---------------------------------------------------------------------------

/// 1-D convolution over time with zero "same" padding (odd kernel).
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: Slot,
    pub b: Slot,
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(layout: &mut ParamLayout, name: &str, inputs: usize, outputs: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Conv1d {
            w: layout.add(format!("{name}.weight"), outputs, inputs * kernel),
            b: layout.add(format!("{name}.bias"), outputs, 1),
            inputs,
            outputs,
            kernel,
        }
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let bound = 1.0 / ((self.inputs * self.kernel) as f64).sqrt();
        init_uniform(self.w.slice_mut(p), bound, rng);
        init_uniform(self.b.slice_mut(p), bound, rng);
    }

    /// Unfolds `x` (`[C_in, B·T]`) into `[C_in·k, B·T]` so the convolution
    /// becomes one matrix product.
    fn im2col(&self, x: &Array2<f64>, horizon: usize) -> Array2<f64> {
        let n = x.ncols();
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let mut cols = Array2::zeros((self.inputs * k, n));
        let xs = x.as_slice().expect("contiguous activations");
        let cs = cols.as_slice_mut().expect("fresh array");
        for c in 0..self.inputs {
            let xr = &xs[c * n..(c + 1) * n];
            for j in 0..k {
                let off = j as isize - pad;
                let cr = &mut cs[(c * k + j) * n..(c * k + j + 1) * n];
                let lo = (-off).max(0) as usize;
                let hi = (horizon as isize - off).min(horizon as isize).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for base in (0..n).step_by(horizon) {
                    let src = (base as isize + lo as isize + off) as usize;
                    cr[base + lo..base + hi].copy_from_slice(&xr[src..src + (hi - lo)]);
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, horizon: usize) -> Array2<f64> {
        let n = dcols.ncols();
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let mut dx = Array2::zeros((self.inputs, n));
        let ds = dcols.as_slice().expect("contiguous");
        let xs = dx.as_slice_mut().expect("fresh array");
        for c in 0..self.inputs {
            let xr = &mut xs[c * n..(c + 1) * n];
            for j in 0..k {
                let off = j as isize - pad;
                let dr = &ds[(c * k + j) * n..(c * k + j + 1) * n];
                let lo = (-off).max(0) as usize;
                let hi = (horizon as isize - off).min(horizon as isize).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for base in (0..n).step_by(horizon) {
                    let dst = (base as isize + lo as isize + off) as usize;
                    for (a, b) in xr[dst..dst + (hi - lo)].iter_mut().zip(&dr[base + lo..base + hi]) {
                        *a += *b;
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the unfolded input needed by `backward`.
    pub fn forward(&self, p: &[f64], x: &Array2<f64>, horizon: usize) -> (Array2<f64>, Array2<f64>) {
        let cols = self.im2col(x, horizon);
        let mut y = Array2::zeros((self.outputs, x.ncols()));
        for (mut row, &bias) in y.axis_iter_mut(Axis(0)).zip(self.b.slice(p)) {
            row.fill(bias);
        }
        general_mat_mul(1.0, &self.w.view(p), &cols, 1.0, &mut y);
        (y, cols)
    }

    pub fn backward(&self, p: &[f64], cols: &Array2<f64>, dy: &Array2<f64>, g: &mut [f64], horizon: usize) -> Array2<f64> {
        general_mat_mul(1.0, dy, &cols.t(), 1.0, &mut self.w.view_mut(g));
        for (gb, row) in self.b.slice_mut(g).iter_mut().zip(dy.axis_iter(Axis(0))) {
            *gb += row.sum();
        }
        let mut dcols = Array2::zeros(cols.dim());
        general_mat_mul(1.0, &self.w.view(p).t(), dy, 0.0, &mut dcols);
        self.col2im(&dcols, horizon)
    }
}

// ---------------------------------------------------------------------------
// Group normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GroupNorm {
    pub gamma: Slot,
    pub beta: Slot,
    pub channels: usize,
    pub groups: usize,
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GroupNormCache {
    xhat: Array2<f64>,
    /// `1/σ` per (sample, group), sample-major.
    inv_std: Vec<f64>,
}

impl GroupNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "groups must divide channels");
        GroupNorm {
            gamma: layout.add(format!("{name}.gamma"), channels, 1),
            beta: layout.add(format!("{name}.beta"), channels, 1),
            channels,
            groups,
        }
    }

    pub fn init(&self, p: &mut [f64]) {
        self.gamma.slice_mut(p).fill(1.0);
        self.beta.slice_mut(p).fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>, horizon: usize) -> (Array2<f64>, GroupNormCache) {
        let n = x.ncols();
        let batch = n / horizon;
        let cpg = self.channels / self.groups;
        let m = (cpg * horizon) as f64;
        let xs = x.as_slice().expect("contiguous");
        let mut xhat = Array2::zeros(x.dim());
        let mut inv_std = vec![0.0; batch * self.groups];
        {
            let hs = xhat.as_slice_mut().expect("fresh array");
            for b in 0..batch {
                let cols = b * horizon..(b + 1) * horizon;
                for g in 0..self.groups {
                    let chans = g * cpg..(g + 1) * cpg;
                    let mut sum = 0.0;
                    for c in chans.clone() {
                        sum += xs[c * n + cols.start..c * n + cols.end].iter().sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut var = 0.0;
                    for c in chans.clone() {
                        var += xs[c * n + cols.start..c * n + cols.end]
                            .iter()
                            .map(|v| (v - mean) * (v - mean))
                            .sum::<f64>();
                    }
                    let r = 1.0 / (var / m + GROUP_NORM_EPS).sqrt();
                    inv_std[b * self.groups + g] = r;
                    for c in chans {
                        let range = c * n + cols.start..c * n + cols.end;
                        for (h, v) in hs[range.clone()].iter_mut().zip(&xs[range]) {
                            *h = (v - mean) * r;
                        }
                    }
                }
            }
        }
        let gamma = self.gamma.slice(p);
        let beta = self.beta.slice(p);
        let mut y = xhat.clone();
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let (gm, bt) = (gamma[c], beta[c]);
            row.mapv_inplace(|v| gm * v + bt);
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], cache: &GroupNormCache, dy: &Array2<f64>, g: &mut [f64], horizon: usize) -> Array2<f64> {
        let n = dy.ncols();
        let batch = n / horizon;
        let cpg = self.channels / self.groups;
        let m = (cpg * horizon) as f64;
        let gamma = self.gamma.slice(p).to_vec();
        {
            let gg = self.gamma.slice_mut(g);
            for (c, (row, hrow)) in dy.axis_iter(Axis(0)).zip(cache.xhat.axis_iter(Axis(0))).enumerate() {
                gg[c] += row.iter().zip(hrow.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        {
            let gb = self.beta.slice_mut(g);
            for (c, row) in dy.axis_iter(Axis(0)).enumerate() {
                gb[c] += row.sum();
            }
        }
        let ds = dy.as_slice().expect("contiguous");
        let hs = cache.xhat.as_slice().expect("contiguous");
        let mut dx = Array2::zeros(dy.dim());
        let xs = dx.as_slice_mut().expect("fresh array");
        for b in 0..batch {
            let cols = b * horizon..(b + 1) * horizon;
            for grp in 0..self.groups {
                let chans = grp * cpg..(grp + 1) * cpg;
                let r = cache.inv_std[b * self.groups + grp];
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for c in chans.clone() {
                    let range = c * n + cols.start..c * n + cols.end;
                    for (d, h) in ds[range.clone()].iter().zip(&hs[range]) {
                        let dh = d * gamma[c];
                        s1 += dh;
                        s2 += dh * h;
                    }
                }
                for c in chans {
                    let range = c * n + cols.start..c * n + cols.end;
                    for ((o, d), h) in xs[range.clone()].iter_mut().zip(&ds[range.clone()]).zip(&hs[range]) {
                        let dh = d * gamma[c];
                        *o = r / m * (m * dh - s1 - h * s2);
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

pub fn init_uniform<R: Rng>(p: &mut [f64], bound: f64, rng: &mut R) {
    for v in p {
        *v = rng.random_range(-bound..bound);
    }
}

/// Sinusoidal features of an integer step: `[sin(k·f_i), cos(k·f_i)]` with
/// geometrically spaced frequencies `f_i = 10000^(−i/(half−1))`.
pub fn sinusoidal_features(k: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let scale = if half > 1 { (10000f64).ln() / (half - 1) as f64 } else { 0.0 };
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(i as f64) * scale).exp();
        out[i] = (k * f).sin();
        out[half + i] = (k * f).cos();
    }
    out
}

/// Adam with the standard moment coefficients.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps * bc2.sqrt());
        }
    }
}

/// Exponential moving average of parameters.
pub fn ema_update(shadow: &mut [f64], params: &[f64], decay: f64) {
    for (s, p) in shadow.iter_mut().zip(params) {
        *s = decay * *s + (1.0 - decay) * p;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &[f64]) -> f64;
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
}

/// Central-difference step used by [`finite_diff_check`].
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Compares the analytic gradient with central differences at `n_coords`
/// parameter coordinates drawn from `coord_seed`; returns the largest
/// `|g − ĝ| / max(|g|, |ĝ|, FD_ABS_FLOOR)`.
pub fn finite_diff_check<O: Objective + ?Sized>(obj: &O, params: &[f64], n_coords: usize, coord_seed: u64) -> f64 {
    let (_, grad) = obj.loss_and_grad(params);
    let mut rng = ChaCha8Rng::seed_from_u64(coord_seed);
    let mut p = params.to_vec();
    let mut worst = 0.0_f64;
    for _ in 0..n_coords.max(1) {
        let i = rng.random_range(0..params.len());
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = obj.loss(&p);
        p[i] = orig - FD_STEP;
        let down = obj.loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = grad[i].abs().max(numeric.abs()).max(FD_ABS_FLOOR);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn mish_matches_definition() {
        for &x in &[-30.0, -5.0, -0.7, 0.0, 0.3, 2.0, 19.0, 25.0] {
            let sp: f64 = if x > 20.0 { x } else { (1.0f64 + f64::exp(x)).ln() };
            let want = x * sp.tanh();
            assert!((mish(x) - want).abs() < 1e-12, "x={x}");
            let h = 1e-6;
            let fd = (mish(x + h) - mish(x - h)) / (2.0 * h);
            assert!((mish_grad(x) - fd).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn sinusoidal_shape() {
        let f = sinusoidal_features(3.0, 8);
        assert_eq!(f.len(), 8);
        assert_eq!(f[0], 3.0f64.sin());
        assert_eq!(f[4], 3.0f64.cos());
    }

    struct LinearQuadratic {
        lin: Linear,
        x: Array2<f64>,
        target: Array2<f64>,
    }

    impl Objective for LinearQuadratic {
        fn loss(&self, p: &[f64]) -> f64 {
            let y = self.lin.forward(p, &self.x);
            (&y - &self.target).mapv(|v| v * v).sum()
        }

        fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
            let y = self.lin.forward(p, &self.x);
            let d = &y - &self.target;
            let mut g = vec![0.0; p.len()];
            self.lin.backward(p, &self.x, &d.mapv(|v| 2.0 * v), &mut g);
            (d.mapv(|v| v * v).sum(), g)
        }
    }

    #[test]
    fn linear_gradient_exact() {
        let mut layout = ParamLayout::new();
        let lin = Linear::new(&mut layout, "lin", 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = vec![0.0; layout.len()];
        lin.init(&mut p, &mut rng);
        let obj = LinearQuadratic {
            lin,
            x: Array2::from_shape_fn((4, 6), |(i, j)| ((i * 7 + j) as f64).sin()),
            target: Array2::from_shape_fn((3, 6), |(i, j)| ((i + 2 * j) as f64).cos()),
        };
        assert!(finite_diff_check(&obj, &p, 15, 1) < 1e-8);
    }

    struct ConvNormMish {
        conv: Conv1d,
        gn: GroupNorm,
        x: Array2<f64>,
        horizon: usize,
    }

    impl ConvNormMish {
        fn run(&self, p: &[f64]) -> (Array2<f64>, Array2<f64>, GroupNormCache, Array2<f64>) {
            let (a, cols) = self.conv.forward(p, &self.x, self.horizon);
            let (n, cache) = self.gn.forward(p, &a, self.horizon);
            (cols, a, cache, n)
        }
    }

    impl Objective for ConvNormMish {
        fn loss(&self, p: &[f64]) -> f64 {
            let (_, _, _, n) = self.run(p);
            let h = mish_forward(&n);
            h.iter().enumerate().map(|(i, v)| v * ((i % 7) as f64 - 3.0)).sum()
        }

        fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
            let (cols, _, cache, n) = self.run(p);
            let h = mish_forward(&n);
            let w = Array2::from_shape_fn(h.dim(), |(r, c)| ((r * h.ncols() + c) % 7) as f64 - 3.0);
            let loss = (&h * &w).sum();
            let mut g = vec![0.0; p.len()];
            let dn = mish_backward(&n, &w);
            let da = self.gn.backward(p, &cache, &dn, &mut g, self.horizon);
            self.conv.backward(p, &cols, &da, &mut g, self.horizon);
            (loss, g)
        }
    }

    #[test]
    fn conv_groupnorm_mish_gradients() {
        let mut layout = ParamLayout::new();
        let conv = Conv1d::new(&mut layout, "c", 3, 4, 5);
        let gn = GroupNorm::new(&mut layout, "gn", 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = vec![0.0; layout.len()];
        conv.init(&mut p, &mut rng);
        gn.init(&mut p);
        for v in gn.gamma.slice_mut(&mut p) {
            *v += rng.random_range(-0.5..0.5);
        }
        let horizon = 7;
        let obj = ConvNormMish {
            conv,
            gn,
            x: Array2::from_shape_fn((3, 2 * horizon), |(i, j)| ((i * 11 + j * 3) as f64).sin()),
            horizon,
        };
        assert!(finite_diff_check(&obj, &p, 60, 9) < 1e-6);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut layout = ParamLayout::new();
        let conv = Conv1d::new(&mut layout, "c", 2, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = vec![0.0; layout.len()];
        conv.init(&mut p, &mut rng);
        let horizon = 5;
        let x = Array2::from_shape_fn((2, 2 * horizon), |(i, j)| (i as f64 + 1.0) * j as f64);
        let (y, _) = conv.forward(&p, &x, horizon);
        let w = conv.w.view(&p);
        let b = conv.b.slice(&p);
        for o in 0..3 {
            for s in 0..2 {
                for t in 0..horizon {
                    let mut acc = b[o];
                    for c in 0..2 {
                        for j in 0..3 {
                            let tt = t as isize + j as isize - 1;
                            if (0..horizon as isize).contains(&tt) {
                                acc += w[[o, c * 3 + j]] * x[[c, s * horizon + tt as usize]];
                            }
                        }
                    }
                    assert!((y[[o, s * horizon + t]] - acc).abs() < 1e-12);
                }
            }
        }
    }
}
