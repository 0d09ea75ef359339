use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::data::N_FEATURES;
use crate::error::{Error, Result};

/// Layer widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Stocks.
    pub n: usize,
    /// Input features per stock.
    pub f: usize,
    /// Hidden graph-convolution width.
    pub c1: usize,
    /// Cross-effect feature width fed to the GRU.
    pub c: usize,
    /// GRU hidden width.
    pub h: usize,
    /// GRU output width.
    pub g: usize,
}

impl Dims {
    pub fn with_stocks(n: usize) -> Self {
        Self { n, f: N_FEATURES, c1: 16, c: 32, h: 32, g: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { n, f, c1, c, h, g } = *self;
        if [n, f, c1, c, h, g].contains(&0) {
            return Err(Error::Invalid(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Width of the concatenated GRU input `[H, X, G]`.
    pub fn gru_input(&self, mode: Mode) -> usize {
        self.h + self.f + if mode.has_gcn() { self.c } else { 0 }
    }
}

/// Every trainable tensor. Tensors a mode does not use are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub mode: Mode,
    pub k: usize,
    pub gcn_w1: Array2<f64>,
    pub gcn_w2: Array2<f64>,
    /// Per-layer polynomial coefficients θ_0 … θ_{K−1}.
    pub poly_coeffs: [Array1<f64>; 2],
    /// (θ_S, θ_I, θ_T) in multi mode.
    pub graph_coeffs: Array1<f64>,
    /// Learned propagator in dynamic mode.
    pub dynamic_l: Array2<f64>,
    pub gru_wr: Array2<f64>,
    pub gru_wu: Array2<f64>,
    pub gru_wh: Array2<f64>,
    pub gru_br: Array1<f64>,
    pub gru_bu: Array1<f64>,
    pub gru_bh: Array1<f64>,
    pub gru_wg: Array2<f64>,
    pub out_w: Array1<f64>,
}

/// Borrowed view of one named tensor, row-major.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

fn empty2() -> Array2<f64> {
    Array2::zeros((0, 0))
}

fn empty1() -> Array1<f64> {
    Array1::zeros(0)
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit polynomial coefficients,
    /// equal graph coefficients and a near-identity dynamic propagator.
    pub fn init(dims: Dims, mode: Mode, k: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        if mode.uses_polynomial() && k == 0 {
            return Err(Error::Invalid("kernel size K must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Dims { n, f, c1, c, h, g } = dims;

        let (gcn_w1, gcn_w2) =
            if mode.has_gcn() { (uniform(&mut rng, f, c1), uniform(&mut rng, c1, c)) } else { (empty2(), empty2()) };
        let poly_coeffs =
            if mode.uses_polynomial() { [Array1::ones(k), Array1::ones(k)] } else { [empty1(), empty1()] };
        let graph_coeffs = if mode == Mode::Multi { Array1::from_elem(3, 1.0 / 3.0) } else { empty1() };
        let dynamic_l = if mode == Mode::Dynamic {
            let noise = Array2::from_shape_simple_fn((n, n), || rng.random_range(-0.01..=0.01));
            Array2::eye(n) + noise
        } else {
            empty2()
        };
        let input = dims.gru_input(mode);
        let gru_wr = uniform(&mut rng, input, h);
        let gru_wu = uniform(&mut rng, input, h);
        let gru_wh = uniform(&mut rng, input, h);
        let gru_wg = uniform(&mut rng, h, g);
        let out_w = uniform(&mut rng, g, 1).into_shape_with_order(g).expect("column vector");

        Ok(Self {
            dims,
            mode,
            k: if mode.uses_polynomial() { k } else { 0 },
            gcn_w1,
            gcn_w2,
            poly_coeffs,
            graph_coeffs,
            dynamic_l,
            gru_wr,
            gru_wu,
            gru_wh,
            gru_br: Array1::zeros(h),
            gru_bu: Array1::zeros(h),
            gru_bh: Array1::zeros(h),
            gru_wg,
            out_w,
        })
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|t| t.data.fill(0.0));
        z
    }

    /// Active tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn t2<'a>(name: &'static str, a: &'a Array2<f64>) -> TensorRef<'a> {
            TensorRef { name, shape: a.dim(), data: a.as_slice().expect("standard layout") }
        }
        fn t1<'a>(name: &'static str, a: &'a Array1<f64>) -> TensorRef<'a> {
            TensorRef { name, shape: (1, a.len()), data: a.as_slice().expect("standard layout") }
        }
        let all = vec![
            t2("gcn_w1", &self.gcn_w1),
            t2("gcn_w2", &self.gcn_w2),
            t1("poly_coeffs_l1", &self.poly_coeffs[0]),
            t1("poly_coeffs_l2", &self.poly_coeffs[1]),
            t1("graph_coeffs", &self.graph_coeffs),
            t2("dynamic_l", &self.dynamic_l),
            t2("gru_wr", &self.gru_wr),
            t2("gru_wu", &self.gru_wu),
            t2("gru_wh", &self.gru_wh),
            t1("gru_br", &self.gru_br),
            t1("gru_bu", &self.gru_bu),
            t1("gru_bh", &self.gru_bh),
            t2("gru_wg", &self.gru_wg),
            t1("out_w", &self.out_w),
        ];
        all.into_iter().filter(|t| !t.data.is_empty()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        fn t2<'a>(name: &'static str, a: &'a mut Array2<f64>) -> TensorMut<'a> {
            TensorMut { name, shape: a.dim(), data: a.as_slice_mut().expect("standard layout") }
        }
        fn t1<'a>(name: &'static str, a: &'a mut Array1<f64>) -> TensorMut<'a> {
            TensorMut { name, shape: (1, a.len()), data: a.as_slice_mut().expect("standard layout") }
        }
        let [p1, p2] = &mut self.poly_coeffs;
        let all = vec![
            t2("gcn_w1", &mut self.gcn_w1),
            t2("gcn_w2", &mut self.gcn_w2),
            t1("poly_coeffs_l1", p1),
            t1("poly_coeffs_l2", p2),
            t1("graph_coeffs", &mut self.graph_coeffs),
            t2("dynamic_l", &mut self.dynamic_l),
            t2("gru_wr", &mut self.gru_wr),
            t2("gru_wu", &mut self.gru_wu),
            t2("gru_wh", &mut self.gru_wh),
            t1("gru_br", &mut self.gru_br),
            t1("gru_bu", &mut self.gru_bu),
            t1("gru_bh", &mut self.gru_bh),
            t2("gru_wg", &mut self.gru_wg),
            t1("out_w", &mut self.out_w),
        ];
        all.into_iter().filter(|t| !t.data.is_empty()).collect()
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(TensorMut<'_>)) {
        for t in self.tensors_mut() {
            f(t);
        }
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(dst.name, src.name);
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor against the shapes implied by `dims`, `mode`, `k`.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::init(self.dims, self.mode, self.k.max(1), 0)?;
        let ours = self.tensors();
        let expected = fresh.tensors();
        if ours.len() != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors for mode {}, found {}",
                expected.len(),
                self.mode,
                ours.len()
            )));
        }
        for (a, b) in ours.iter().zip(&expected) {
            let shape_ok =
                a.name == b.name && (a.shape == b.shape || (a.name.starts_with("poly") && a.shape == (1, self.k)));
            if !shape_ok {
                return Err(Error::Shape(format!("tensor {} has shape {:?}, expected {:?}", a.name, a.shape, b.shape)));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}
