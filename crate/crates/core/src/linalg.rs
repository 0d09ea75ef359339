//! Small dense helpers shared by the graph and network code.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Sums values in a canonical order so the result depends only on the
/// multiset of terms, not on their positions.
pub fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// `p · m` where the contraction runs over the node axis.
///
/// Every output entry is accumulated with [`ordered_sum`], so relabeling the
/// nodes permutes the result bit-exactly. Zero entries of `p` are skipped;
/// that depends only on the multiset of terms too.
pub fn node_mix(p: ArrayView2<f64>, m: ArrayView2<f64>) -> Array2<f64> {
    let (rows, inner) = p.dim();
    assert_eq!(inner, m.nrows(), "node_mix shape mismatch");
    let cols = m.ncols();
    let m_cols: Vec<Vec<f64>> = m.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut out = Array2::zeros((rows, cols));
    let mut support: Vec<(usize, f64)> = Vec::with_capacity(inner);
    let mut terms = Vec::with_capacity(inner);
    for (i, p_row) in p.rows().into_iter().enumerate() {
        support.clear();
        support.extend(p_row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, &v)| (k, v)));
        for (j, col) in m_cols.iter().enumerate() {
            terms.clear();
            terms.extend(support.iter().map(|&(k, v)| v * col[k]));
            out[[i, j]] = ordered_sum(&mut terms);
        }
    }
    out
}

/// Frobenius inner product.
pub fn inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adds `bias` to every row.
pub fn add_row(mut m: Array2<f64>, bias: ArrayView1<f64>) -> Array2<f64> {
    m += &bias;
    m
}

pub fn column_sums(m: ArrayView2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
