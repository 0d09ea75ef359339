use ndarray::Array2;

use super::{Mode, ModelParams};
use crate::error::{Error, Result};
use crate::graphs::{matrix_powers, GraphKind, GraphSet, Laplacian};

/// Basis matrices of the polynomial filter on one graph.
///
/// With `K ≥ 2` these are the exact powers `L^0 … L^{K−1}`. With `K = 1` the
/// zeroth power alone would be the identity and mix nothing, so the single
/// basis matrix is the renormalized one-hop filter `D^{-1/2}(A + I)D^{-1/2}`.
pub fn propagator_basis(laplacian: &Laplacian, k: usize) -> Result<Vec<Array2<f64>>> {
    match k {
        0 => Err(Error::Invalid("kernel size K must be at least 1".into())),
        1 => Ok(vec![laplacian.renormalized_adjacency()]),
        _ => Ok(matrix_powers(laplacian.matrix.view(), k)),
    }
}

/// Fixed graph operators a mode needs, precomputed once per run.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub mode: Mode,
    pub n: usize,
    /// One basis per graph in use: a single entry for single mode, S/I/T for
    /// multi mode, none otherwise.
    pub bases: Vec<(GraphKind, Vec<Array2<f64>>)>,
}

impl GraphOperators {
    pub fn new(mode: Mode, laplacians: &[Laplacian], k: usize, n: usize) -> Result<Self> {
        let find = |kind: GraphKind| {
            laplacians
                .iter()
                .find(|l| l.kind == kind)
                .ok_or_else(|| Error::Invalid(format!("mode {mode} needs the {kind} graph")))
        };
        let kinds: Vec<GraphKind> = match mode {
            Mode::Single(kind) => vec![kind],
            Mode::Multi => GraphKind::ALL.to_vec(),
            Mode::Dynamic | Mode::None => Vec::new(),
        };
        let mut bases = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let l = find(kind)?;
            if l.n() != n {
                return Err(Error::Shape(format!("{kind} Laplacian is {}×{0}, expected {n}×{n}", l.n())));
            }
            bases.push((kind, propagator_basis(l, k)?));
        }
        Ok(Self { mode, n, bases })
    }

    pub fn from_graphs(mode: Mode, graphs: &GraphSet, k: usize, n: usize) -> Result<Self> {
        Self::new(mode, &graphs.laplacians, k, n)
    }

    pub fn k(&self) -> usize {
        self.bases.first().map_or(0, |(_, b)| b.len())
    }
}

/// Mixing matrix of graph-convolution layer `layer` (0 or 1).
///
/// single: `Σ_k θ_k B_k`; multi: `Σ_k θ_k (θ_S B^S_k + θ_I B^I_k + θ_T B^T_k)`;
/// dynamic: the learned matrix itself.
pub fn assemble_propagator(ops: &GraphOperators, params: &ModelParams, layer: usize) -> Result<Array2<f64>> {
    if ops.mode != params.mode {
        return Err(Error::Invalid(format!("operators built for {} but parameters are {}", ops.mode, params.mode)));
    }
    let n = ops.n;
    match params.mode {
        Mode::None => Err(Error::Invalid("mode none has no propagator".into())),
        Mode::Dynamic => {
            if params.dynamic_l.dim() != (n, n) {
                return Err(Error::Shape(format!(
                    "dynamic propagator is {:?}, expected {n}×{n}",
                    params.dynamic_l.dim()
                )));
            }
            Ok(params.dynamic_l.clone())
        }
        Mode::Single(_) | Mode::Multi => {
            let theta = &params.poly_coeffs[layer];
            if theta.len() != ops.k() {
                return Err(Error::Shape(format!(
                    "layer {} has {} polynomial coefficients, operators have K = {}",
                    layer + 1,
                    theta.len(),
                    ops.k()
                )));
            }
            let weights: Vec<f64> = if params.mode == Mode::Multi { params.graph_coeffs.to_vec() } else { vec![1.0] };
            if weights.len() != ops.bases.len() {
                return Err(Error::Shape("graph coefficient count mismatch".into()));
            }
            let mut out = Array2::zeros((n, n));
            for (k, &t) in theta.iter().enumerate() {
                let mut term = Array2::zeros((n, n));
                for ((_, basis), &w) in ops.bases.iter().zip(&weights) {
                    term.scaled_add(w, &basis[k]);
                }
                out.scaled_add(t, &term);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{normalized_laplacian, AdjacencyMatrix};
    use crate::net::Dims;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn dims(n: usize) -> Dims {
        Dims { n, f: 2, c1: 2, c: 2, h: 2, g: 2 }
    }

    fn identity_laplacians(n: usize) -> Vec<Laplacian> {
        GraphKind::ALL
            .iter()
            .map(|&kind| normalized_laplacian(&AdjacencyMatrix::new(kind, Array2::zeros((n, n))).unwrap()))
            .collect()
    }

    fn random_laplacians(n: usize, seed: u64) -> Vec<Laplacian> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GraphKind::ALL
            .iter()
            .map(|&kind| {
                let w = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { rng.random_range(0.0..2.0) });
                normalized_laplacian(&AdjacencyMatrix::new(kind, w).unwrap())
            })
            .collect()
    }

    #[test]
    fn multi_k1_with_empty_graphs() {
        let n = 3;
        let ops = GraphOperators::new(Mode::Multi, &identity_laplacians(n), 1, n).unwrap();
        let mut p = ModelParams::init(dims(n), Mode::Multi, 1, 0).unwrap();
        p.poly_coeffs[0][0] = 2.0;
        p.graph_coeffs = ndarray::array![0.5, 0.25, 1.0];
        let prop = assemble_propagator(&ops, &p, 0).unwrap();
        assert_abs_diff_eq!(prop, Array2::eye(n) * 2.0 * 1.75, epsilon = 1e-15);
    }

    #[test]
    fn masked_multi_equals_single() {
        let n = 4;
        let laps = random_laplacians(n, 3);
        for k in [1, 3] {
            let multi = GraphOperators::new(Mode::Multi, &laps, k, n).unwrap();
            let single_mode = Mode::Single(GraphKind::Shareholding);
            let single = GraphOperators::new(single_mode, &laps, k, n).unwrap();
            let mut pm = ModelParams::init(dims(n), Mode::Multi, k, 1).unwrap();
            pm.graph_coeffs = ndarray::array![1.0, 0.0, 0.0];
            pm.poly_coeffs[1] = ndarray::Array1::linspace(0.3, -0.7, k);
            let mut ps = ModelParams::init(dims(n), single_mode, k, 1).unwrap();
            ps.poly_coeffs = pm.poly_coeffs.clone();
            for layer in 0..2 {
                assert_eq!(
                    assemble_propagator(&multi, &pm, layer).unwrap(),
                    assemble_propagator(&single, &ps, layer).unwrap()
                );
            }
        }
    }

    #[test]
    fn multi_k2_term_by_term() {
        let n = 3;
        let laps = random_laplacians(n, 9);
        let ops = GraphOperators::new(Mode::Multi, &laps, 2, n).unwrap();
        let mut p = ModelParams::init(dims(n), Mode::Multi, 2, 0).unwrap();
        p.poly_coeffs[0] = ndarray::array![0.7, -1.3];
        p.graph_coeffs = ndarray::array![0.2, 1.1, -0.4];
        let got = assemble_propagator(&ops, &p, 0).unwrap();
        let mut expected = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                for (g, lap) in laps.iter().enumerate() {
                    let l = &lap.matrix;
                    let power0 = if i == j { 1.0 } else { 0.0 };
                    expected[[i, j]] += p.poly_coeffs[0][0] * p.graph_coeffs[g] * power0
                        + p.poly_coeffs[0][1] * p.graph_coeffs[g] * l[[i, j]];
                }
            }
        }
        assert_abs_diff_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn dynamic_is_verbatim_and_modes_checked() {
        let n = 3;
        let ops = GraphOperators::new(Mode::Dynamic, &[], 1, n).unwrap();
        let p = ModelParams::init(dims(n), Mode::Dynamic, 1, 4).unwrap();
        assert_eq!(assemble_propagator(&ops, &p, 1).unwrap(), p.dynamic_l);

        let single = GraphOperators::new(Mode::Single(GraphKind::Industry), &random_laplacians(n, 1), 1, n).unwrap();
        assert!(assemble_propagator(&single, &p, 0).is_err());
        assert!(GraphOperators::new(Mode::Multi, &random_laplacians(n, 1)[..2], 1, n).is_err());
        assert!(GraphOperators::new(Mode::Multi, &random_laplacians(n + 1, 1), 1, n).is_err());
    }
}
