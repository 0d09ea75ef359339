use ndarray::{s, Array2, ArrayView1, Axis};

use super::{ForwardTrace, GraphOperators, Mode, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{column_sums, inner};
use crate::optim::PROB_CLAMP;

/// Gradients of the mean cross-entropy of one window with respect to every
/// active parameter tensor, by reverse-mode differentiation through the
/// predictor, the GRU recurrence and the graph layers.
pub fn backward_window(
    trace: &ForwardTrace,
    labels: ArrayView1<u8>,
    ops: &GraphOperators,
    params: &ModelParams,
) -> Result<ModelParams> {
    let n = trace.probs.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} predictions", labels.len())));
    }
    if trace.steps.is_empty() {
        return Err(Error::Invalid("forward trace has no steps".into()));
    }
    let hd = params.dims.h;
    let fd = params.dims.f;
    let mut grad = params.zeros_like();

    // Loss → logits. The clamp in the loss has zero slope outside its range.
    let dlogit = trace.probs.iter().zip(labels).map(|(&p, &y)| {
        if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
            (p - f64::from(y)) / n as f64
        } else {
            0.0
        }
    });
    let dlogit = ndarray::Array1::from_iter(dlogit);

    // Predictor and GRU output layer.
    grad.out_w = trace.gru_out.t().dot(&dlogit);
    let dgru_out = dlogit.view().insert_axis(Axis(1)).dot(&params.out_w.view().insert_axis(Axis(0)));
    let dgru_pre = &dgru_out * &trace.gru_out * &(1.0 - &trace.gru_out);
    grad.gru_wg = trace.h_final.t().dot(&dgru_pre);
    let mut dh = dgru_pre.dot(&params.gru_wg.t());

    let mut dprop = trace.propagators.as_ref().map(|_| [Array2::<f64>::zeros((n, n)), Array2::zeros((n, n))]);

    for step in trace.steps.iter().rev() {
        let g = &step.gates;
        let h_prev = &step.h_prev;

        // H = u ⊙ H_prev + (1 − u) ⊙ Ĥ
        let dupdate = &dh * &(h_prev - &g.candidate);
        let dcand = &dh * &(1.0 - &g.update);
        let mut dh_prev = &dh * &g.update;

        let dcand_pre = dcand * &(1.0 - &g.candidate * &g.candidate);
        grad.gru_wh += &g.concat_reset.t().dot(&dcand_pre);
        grad.gru_bh += &column_sums(dcand_pre.view());
        let dconcat_reset = dcand_pre.dot(&params.gru_wh.t());

        let dreset_h = dconcat_reset.slice(s![.., ..hd]);
        let dreset = &dreset_h * h_prev;
        dh_prev += &(&dreset_h * &g.reset);

        let dupdate_pre = dupdate * &g.update * &(1.0 - &g.update);
        let dreset_pre = dreset * &g.reset * &(1.0 - &g.reset);
        grad.gru_wu += &g.concat.t().dot(&dupdate_pre);
        grad.gru_bu += &column_sums(dupdate_pre.view());
        grad.gru_wr += &g.concat.t().dot(&dreset_pre);
        grad.gru_br += &column_sums(dreset_pre.view());

        let dconcat = dupdate_pre.dot(&params.gru_wu.t()) + dreset_pre.dot(&params.gru_wr.t());
        dh_prev += &dconcat.slice(s![.., ..hd]);

        if let (Some(gcn), Some([dp1, dp2]), Some([p1, p2])) = (&step.gcn, dprop.as_mut(), trace.propagators.as_ref()) {
            let dcross = &dconcat.slice(s![.., hd + fd..]) + &dconcat_reset.slice(s![.., hd + fd..]);

            // layer 2: pre2 = P₂ · (hidden · W₂)
            let dpre2 = dcross * &gcn.pre2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let m2 = gcn.hidden.dot(&params.gcn_w2);
            *dp2 += &dpre2.dot(&m2.t());
            let dm2 = p2.t().dot(&dpre2);
            grad.gcn_w2 += &gcn.hidden.t().dot(&dm2);
            let dhidden = dm2.dot(&params.gcn_w2.t());

            // layer 1: pre1 = P₁ · (X · W₁)
            let dpre1 = dhidden * &gcn.pre1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let m1 = step.x.dot(&params.gcn_w1);
            *dp1 += &dpre1.dot(&m1.t());
            let dm1 = p1.t().dot(&dpre1);
            grad.gcn_w1 += &step.x.t().dot(&dm1);
        }
        dh = dh_prev;
    }

    if let Some(dprop) = dprop {
        propagator_grads(&dprop, ops, params, &mut grad);
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok(grad)
}

/// Chains the propagator gradients into the polynomial, graph and dynamic
/// coefficients.
fn propagator_grads(dprop: &[Array2<f64>; 2], ops: &GraphOperators, params: &ModelParams, grad: &mut ModelParams) {
    match params.mode {
        Mode::Dynamic => grad.dynamic_l = &dprop[0] + &dprop[1],
        Mode::Single(_) | Mode::Multi => {
            let weights: Vec<f64> = if params.mode == Mode::Multi { params.graph_coeffs.to_vec() } else { vec![1.0] };
            for (layer, dp) in dprop.iter().enumerate() {
                // overlap[g][k] = <dP, B^g_k>
                let overlap: Vec<Vec<f64>> = ops
                    .bases
                    .iter()
                    .map(|(_, basis)| basis.iter().map(|b| inner(dp.view(), b.view())).collect())
                    .collect();
                let theta = &params.poly_coeffs[layer];
                for k in 0..theta.len() {
                    grad.poly_coeffs[layer][k] = weights.iter().zip(&overlap).map(|(w, o)| w * o[k]).sum();
                }
                if params.mode == Mode::Multi {
                    for (g, o) in overlap.iter().enumerate() {
                        grad.graph_coeffs[g] += theta.iter().zip(o).map(|(t, v)| t * v).sum::<f64>();
                    }
                }
            }
        }
        Mode::None => {}
    }
}
