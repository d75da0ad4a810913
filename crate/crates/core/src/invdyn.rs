//! Inverse dynamics: predicts the bidding parameters that move a state
//! history window to a target next state.

use log::{debug, info};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_norm, mish_backward, mish_forward, Adam, Linear, Objective, ParamLayout};

/// How the network output is turned into bidding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Output is the next λ vector.
    #[default]
    Absolute,
    /// Output multiplies the previous λ vector.
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvDynConfig {
    /// Past states `L` in the window `s_{t−L..t}`; 0 gives the Markovian ablation.
    pub history_len: usize,
    pub hidden: usize,
    pub mode: ActionMode,
    /// Upper clip on predicted components.
    pub lambda_max: f64,
}

impl Default for InvDynConfig {
    fn default() -> Self {
        InvDynConfig {
            history_len: 2,
            hidden: 64,
            mode: ActionMode::Absolute,
            lambda_max: 50.0,
        }
    }
}

impl InvDynConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        if !(self.lambda_max > 0.0) {
            return Err(Error::InvalidConfig("lambda_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvDynHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for InvDynHyper {
    fn default() -> Self {
        InvDynHyper {
            lr: 1e-3,
            batch_size: 256,
            epochs: 30,
            seed: 0,
        }
    }
}

/// Three fully connected layers with Mish between them.
#[derive(Debug, Clone)]
pub struct InvDynNet {
    pub config: InvDynConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    layout: ParamLayout,
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

pub struct InvDynTape {
    x: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
    h2: Array2<f64>,
}

impl InvDynNet {
    pub fn new(config: &InvDynConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::InvalidConfig("state and action dims must be positive".into()));
        }
        let mut layout = ParamLayout::new();
        let inp = (config.history_len + 2) * state_dim;
        let l1 = Linear::new(&mut layout, "invdyn.0", inp, config.hidden);
        let l2 = Linear::new(&mut layout, "invdyn.1", config.hidden, config.hidden);
        let l3 = Linear::new(&mut layout, "invdyn.2", config.hidden, action_dim);
        Ok(InvDynNet {
            config: config.clone(),
            state_dim,
            action_dim,
            layout,
            l1,
            l2,
            l3,
        })
    }

    pub fn input_dim(&self) -> usize {
        (self.config.history_len + 2) * self.state_dim
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; self.layout.len()];
        for l in [&self.l1, &self.l2, &self.l3] {
            l.init(&mut w, &mut rng);
        }
        w
    }

    /// `x` is `[input_dim, N]`; returns `[action_dim, N]` in scaled units.
    pub fn forward(&self, w: &[f64], x: Array2<f64>) -> (Array2<f64>, InvDynTape) {
        let a1 = self.l1.forward(w, &x);
        let h1 = mish_forward(&a1);
        let a2 = self.l2.forward(w, &h1);
        let h2 = mish_forward(&a2);
        let y = self.l3.forward(w, &h2);
        (y, InvDynTape { x, a1, h1, a2, h2 })
    }

    pub fn backward(&self, w: &[f64], tape: &InvDynTape, dy: &Array2<f64>, g: &mut [f64]) {
        let dh2 = self.l3.backward(w, &tape.h2, dy, g);
        let dh1 = self.l2.backward(w, &tape.h1, &mish_backward(&tape.a2, &dh2), g);
        self.l1.backward_params(&tape.x, &mish_backward(&tape.a1, &dh1), g);
    }
}

#[derive(Debug, Clone)]
pub struct InvDynParams {
    pub net: InvDynNet,
    pub weights: Vec<f64>,
    /// Per-component scale dividing training targets.
    pub action_scale: Vec<f64>,
}

/// Input vector for period `t`: rows `s_{t−L..=t}` of `states` (rows before
/// 0 repeat `s_0`) followed by `next`.
pub fn window_input(states: ArrayView2<'_, f64>, t: usize, history_len: usize, next: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    let d = states.ncols();
    if t >= states.nrows() || next.len() != d {
        return Err(Error::shape(format!("row {t} and next state of width {d}"), format!("{} rows, next width {}", states.nrows(), next.len())));
    }
    let mut v = Vec::with_capacity((history_len + 2) * d);
    for i in 0..=history_len {
        let row = (t + i).saturating_sub(history_len);
        v.extend(states.row(row).iter());
    }
    v.extend(next.iter());
    Ok(v)
}

/// Training pairs from normalized state trajectories and their actions:
/// every `t ∈ [0, T−2]` contributes `(window(t), a_t)`. In multiplicative
/// mode the target is `a_t / a_{t−1}` (1 at `t = 0` or when `a_{t−1} = 0`).
pub fn build_windows(states: &[Array2<f64>], actions: &[Array2<f64>], history_len: usize, mode: ActionMode) -> Result<(Array2<f64>, Array2<f64>)> {
    if states.len() != actions.len() {
        return Err(Error::shape(format!("{} action matrices", states.len()), actions.len()));
    }
    let first = states.first().ok_or_else(|| Error::Empty("no trajectories".into()))?;
    let d = first.ncols();
    let j = actions[0].ncols();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut n = 0;
    for (s, a) in states.iter().zip(actions) {
        if s.nrows() != a.nrows() || s.ncols() != d || a.ncols() != j {
            return Err(Error::shape(format!("{}x{d} states with {}x{j} actions", s.nrows(), s.nrows()), format!("{:?} / {:?}", s.dim(), a.dim())));
        }
        for t in 0..s.nrows().saturating_sub(1) {
            xs.extend(window_input(s.view(), t, history_len, s.row(t + 1))?);
            for c in 0..j {
                let y = match mode {
                    ActionMode::Absolute => a[[t, c]],
                    ActionMode::Multiplicative => {
                        let prev = if t == 0 { a[[0, c]] } else { a[[t - 1, c]] };
                        if prev == 0.0 {
                            1.0
                        } else {
                            a[[t, c]] / prev
                        }
                    }
                };
                ys.push(y);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("trajectories too short to form any window".into()));
    }
    let width = (history_len + 2) * d;
    let x = Array2::from_shape_vec((n, width), xs).expect("sized").reversed_axes().as_standard_layout().to_owned();
    let y = Array2::from_shape_vec((n, j), ys).expect("sized").reversed_axes().as_standard_layout().to_owned();
    Ok((x, y))
}

/// Mean squared error on scaled targets, as an [`Objective`].
pub struct InvDynObjective<'a> {
    pub net: &'a InvDynNet,
    pub x: &'a Array2<f64>,
    pub y: &'a Array2<f64>,
}

fn mse_loss(net: &InvDynNet, w: &[f64], x: &Array2<f64>, y: &Array2<f64>, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (pred, tape) = net.forward(w, x.clone());
    let diff = &pred - y;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    if !want_grad {
        return (loss, None);
    }
    let mut g = vec![0.0; w.len()];
    net.backward(w, &tape, &diff.mapv(|v| 2.0 * v / n), &mut g);
    (loss, Some(g))
}

impl Objective for InvDynObjective<'_> {
    fn loss(&self, params: &[f64]) -> f64 {
        mse_loss(self.net, params, self.x, self.y, false).0
    }

    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (l, g) = mse_loss(self.net, params, self.x, self.y, true);
        (l, g.expect("requested"))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InvDynReport {
    pub steps: usize,
    pub epoch_loss: Vec<f64>,
}

/// Fits the network on windows `x` (`[input_dim, N]`) and raw targets `y`
/// (`[action_dim, N]`).
pub fn train_invdyn_windows(x: &Array2<f64>, y: &Array2<f64>, state_dim: usize, config: &InvDynConfig, hyper: &InvDynHyper) -> Result<(InvDynParams, InvDynReport)> {
    let net = InvDynNet::new(config, state_dim, y.nrows())?;
    if x.nrows() != net.input_dim() || x.ncols() != y.ncols() {
        return Err(Error::shape(format!("[{}, N] windows", net.input_dim()), format!("{:?}", x.dim())));
    }
    if x.ncols() == 0 {
        return Err(Error::Empty("no training windows".into()));
    }
    if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(Error::InvalidConfig("batch_size and lr must be positive".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inverse-dynamics training data".into()));
    }
    let action_scale: Vec<f64> = y
        .rows()
        .into_iter()
        .map(|r| {
            let rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let mut ys = y.clone();
    for (mut row, s) in ys.rows_mut().into_iter().zip(&action_scale) {
        row.mapv_inplace(|v| v / s);
    }

    let mut weights = net.init(hyper.seed);
    let mut adam = Adam::new(weights.len(), hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::sim::derive_seed(hyper.seed, 0x1D));
    let n = x.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = InvDynReport::default();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(hyper.batch_size) {
            let bx = x.select(ndarray::Axis(1), chunk);
            let by = ys.select(ndarray::Axis(1), chunk);
            let (loss, g) = mse_loss(&net, &weights, &bx, &by, true);
            let g = g.expect("requested");
            let gn = l2_norm(&g);
            if !loss.is_finite() || !gn.is_finite() {
                return Err(Error::Diverged {
                    step: report.steps,
                    lr: hyper.lr,
                    grad_norm: gn,
                    detail: format!("inverse dynamics loss {loss} in epoch {epoch}"),
                });
            }
            adam.step(&mut weights, &g);
            report.steps += 1;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        report.epoch_loss.push(mean);
        if epoch % 10 == 0 || epoch + 1 == hyper.epochs {
            info!("inverse dynamics epoch {epoch}: loss {mean:.6}");
        } else {
            debug!("inverse dynamics epoch {epoch}: loss {mean:.6}");
        }
    }
    Ok((
        InvDynParams {
            net,
            weights,
            action_scale,
        },
        report,
    ))
}

/// Builds windows from trajectories and fits the network.
pub fn train_invdyn(states: &[Array2<f64>], actions: &[Array2<f64>], config: &InvDynConfig, hyper: &InvDynHyper) -> Result<(InvDynParams, InvDynReport)> {
    let (x, y) = build_windows(states, actions, config.history_len, config.mode)?;
    train_invdyn_windows(&x, &y, states[0].ncols(), config, hyper)
}

impl InvDynParams {
    /// Unclipped outputs in action units for a batch of windows.
    pub fn predict_raw(&self, x: Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.net.input_dim() {
            return Err(Error::shape(format!("input width {}", self.net.input_dim()), x.nrows()));
        }
        let (mut y, _) = self.net.forward(&self.weights, x);
        for (mut row, s) in y.rows_mut().into_iter().zip(&self.action_scale) {
            row.mapv_inplace(|v| v * s);
        }
        Ok(y)
    }

    /// Network output for one window, clipped to `[0, λ_max]`.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((input.len(), 1), input.to_vec()).expect("column");
        let y = self.predict_raw(x)?;
        Ok(y.column(0).iter().map(|v| v.clamp(0.0, self.net.config.lambda_max)).collect())
    }

    /// Applies the action mode to a clipped output given the previous λ.
    pub fn compose(&self, output: &[f64], prev: &[f64]) -> Vec<f64> {
        match self.net.config.mode {
            ActionMode::Absolute => output.to_vec(),
            ActionMode::Multiplicative => output
                .iter()
                .zip(prev)
                .map(|(m, p)| (m * p).clamp(0.0, self.net.config.lambda_max))
                .collect(),
        }
    }
}

/// `â_t = f_φ(s_{t−L..=t}, s'_{t+1})` for a history whose last row is `s_t`.
pub fn predict_action(params: &InvDynParams, history: ArrayView2<'_, f64>, next_state: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    if history.nrows() == 0 {
        return Err(Error::Empty("empty history".into()));
    }
    if history.ncols() != params.net.state_dim {
        return Err(Error::shape(format!("state width {}", params.net.state_dim), history.ncols()));
    }
    let input = window_input(history, history.nrows() - 1, params.net.config.history_len, next_state)?;
    params.predict(&input)
}
