use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::{assemble_propagator, GraphOperators, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{add_row, all_finite, node_mix, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// One graph-convolution layer: `activation(P · H · W)`.
///
/// Returns the pre-activation alongside the output.
pub fn gcn_layer(
    input: ArrayView2<f64>,
    propagator: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    activation: Activation,
    layer: &str,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = input.nrows();
    if propagator.dim() != (n, n) || input.ncols() != weight.nrows() {
        return Err(Error::Shape(format!(
            "{layer}: propagator {:?}, input {:?}, weight {:?}",
            propagator.dim(),
            input.dim(),
            weight.dim()
        )));
    }
    let pre = node_mix(propagator, input.dot(&weight).view());
    let out = pre.mapv(|v| activation.apply(v));
    if !all_finite(&out) {
        return Err(Error::NonFinite(format!("graph convolution {layer}")));
    }
    Ok((pre, out))
}

/// Intermediates of the two-layer graph network on one day.
#[derive(Debug, Clone)]
pub struct GcnTrace {
    pub pre1: Array2<f64>,
    pub hidden: Array2<f64>,
    pub pre2: Array2<f64>,
    pub output: Array2<f64>,
}

/// `relu(P₂ · relu(P₁ · X · W₁) · W₂)`.
pub fn multi_gcn_forward(
    x: ArrayView2<f64>,
    propagators: [ArrayView2<f64>; 2],
    params: &ModelParams,
) -> Result<GcnTrace> {
    let (pre1, hidden) = gcn_layer(x, propagators[0], params.gcn_w1.view(), Activation::Relu, "layer 1")?;
    let (pre2, output) = gcn_layer(hidden.view(), propagators[1], params.gcn_w2.view(), Activation::Relu, "layer 2")?;
    Ok(GcnTrace { pre1, hidden, pre2, output })
}

/// Gate activations of one GRU step.
#[derive(Debug, Clone)]
pub struct GateTrace {
    /// `[H_{t−1}, X_t, G_t]`.
    pub concat: Array2<f64>,
    pub reset: Array2<f64>,
    pub update: Array2<f64>,
    /// `[r ⊙ H_{t−1}, X_t, G_t]`.
    pub concat_reset: Array2<f64>,
    pub candidate: Array2<f64>,
}

/// One GRU step with weights shared across stocks:
///
/// ```text
/// r = σ([H, X, G] W_r + b_r)
/// u = σ([H, X, G] W_u + b_u)
/// Ĥ = tanh([r ⊙ H, X, G] W_h + b_h)
/// H' = u ⊙ H + (1 − u) ⊙ Ĥ
/// ```
pub fn gru_step(
    h_prev: ArrayView2<f64>,
    x: ArrayView2<f64>,
    cross: Option<ArrayView2<f64>>,
    params: &ModelParams,
) -> Result<(Array2<f64>, GateTrace)> {
    let mut parts = vec![h_prev, x];
    parts.extend(cross);
    let concat = concatenate(Axis(1), &parts).map_err(|e| Error::Shape(format!("GRU input: {e}")))?;
    if concat.ncols() != params.gru_wr.nrows() {
        return Err(Error::Shape(format!(
            "GRU input width {} but weights expect {}",
            concat.ncols(),
            params.gru_wr.nrows()
        )));
    }
    let reset = add_row(concat.dot(&params.gru_wr), params.gru_br.view()).mapv(sigmoid);
    let update = add_row(concat.dot(&params.gru_wu), params.gru_bu.view()).mapv(sigmoid);
    let hidden = params.dims.h;
    let mut concat_reset = concat.clone();
    {
        let mut head = concat_reset.slice_mut(s![.., ..hidden]);
        head *= &reset;
    }
    let candidate = add_row(concat_reset.dot(&params.gru_wh), params.gru_bh.view()).mapv(f64::tanh);
    let h_next = &update * &h_prev + &(1.0 - &update) * &candidate;
    if !all_finite(reset.iter().chain(&update).chain(&candidate)) {
        return Err(Error::NonFinite("GRU gates".into()));
    }
    Ok((h_next, GateTrace { concat, reset, update, concat_reset, candidate }))
}

/// `σ(H · W_g)`.
pub fn gru_output(h: ArrayView2<f64>, wg: ArrayView2<f64>) -> Array2<f64> {
    h.dot(&wg).mapv(sigmoid)
}

/// `σ(X · w)`, one probability per stock. Returns `(logits, probabilities)`.
pub fn predict(gru_out: ArrayView2<f64>, out_w: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    let logits = gru_out.dot(&out_w);
    let probs = logits.mapv(sigmoid);
    (logits, probs)
}

#[derive(Debug, Clone)]
pub struct StepTrace {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub gcn: Option<GcnTrace>,
    pub gates: GateTrace,
}

/// Everything the backward pass needs from one window.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Propagators of the two graph layers (absent in mode none).
    pub propagators: Option<[Array2<f64>; 2]>,
    pub steps: Vec<StepTrace>,
    pub h_final: Array2<f64>,
    pub gru_out: Array2<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Runs the window `P×N×F` from `H_0 = 0` and predicts the target day.
pub fn forward_window(window: ArrayView3<f64>, ops: &GraphOperators, params: &ModelParams) -> Result<ForwardTrace> {
    let (lag, n, f) = window.dim();
    if lag == 0 {
        return Err(Error::Invalid("empty window".into()));
    }
    if n != params.dims.n || f != params.dims.f {
        return Err(Error::Shape(format!(
            "window is {lag}×{n}×{f}, model expects N={} F={}",
            params.dims.n, params.dims.f
        )));
    }
    let propagators = if params.mode.has_gcn() {
        Some([assemble_propagator(ops, params, 0)?, assemble_propagator(ops, params, 1)?])
    } else {
        None
    };

    let mut h = Array2::zeros((n, params.dims.h));
    let mut steps = Vec::with_capacity(lag);
    for x in window.outer_iter() {
        let gcn = match &propagators {
            Some([p1, p2]) => Some(multi_gcn_forward(x, [p1.view(), p2.view()], params)?),
            None => None,
        };
        let (h_next, gates) = gru_step(h.view(), x, gcn.as_ref().map(|g| g.output.view()), params)?;
        steps.push(StepTrace { x: x.to_owned(), h_prev: h, gcn, gates });
        h = h_next;
    }
    let gru_out = gru_output(h.view(), params.gru_wg.view());
    let (logits, probs) = predict(gru_out.view(), params.out_w.view());
    if !all_finite(&probs) {
        return Err(Error::NonFinite("predictions".into()));
    }
    Ok(ForwardTrace { propagators, steps, h_final: h, gru_out, logits, probs })
}
