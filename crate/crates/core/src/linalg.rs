//! Dense complex matrix helpers shared by the solvers.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;

pub type CMatrix = Array2<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn real_to_complex(m: &Array2<f64>) -> CMatrix {
    m.mapv(|v| C64::new(v, 0.0))
}

pub fn dagger(m: &ArrayView2<C64>) -> CMatrix {
    m.t().mapv(|v| v.conj())
}

pub fn trace(m: &ArrayView2<C64>) -> C64 {
    m.diag().sum()
}

/// Tr(a b) without forming the product.
pub fn trace_product(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[[i, j]] * b[[j, i]];
        }
    }
    acc
}

/// max |m - m^dagger| entrywise.
pub fn hermiticity_error(m: &ArrayView2<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Replace `m` by (m + m^dagger)/2 in place.
pub fn symmetrize(m: &mut ndarray::ArrayViewMut2<C64>) {
    let n = m.nrows();
    for i in 0..n {
        m[[i, i]] = C64::new(m[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]].conj());
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

fn to_nalgebra(m: &ArrayView2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &ArrayView2<C64>) -> Vec<f64> {
    let mut h = to_nalgebra(m);
    // Only the Hermitian part is meaningful; strip rounding asymmetry.
    let ht = h.adjoint();
    h = (h + ht) * C64::new(0.5, 0.0);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &ArrayView2<C64>) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// -sum(lambda ln lambda) over the spectrum, with 0 ln 0 = 0 and tiny
/// negative rounding clamped to zero.
pub fn von_neumann_entropy(m: &ArrayView2<C64>) -> f64 {
    hermitian_eigenvalues(m)
        .into_iter()
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln())
        .sum()
}

pub fn frobenius(m: &ArrayView2<C64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Trace norm distance (1/2)||a - b||_1 for Hermitian a, b.
pub fn trace_distance(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> f64 {
    let diff = a.to_owned() - b;
    0.5 * hermitian_eigenvalues(&diff.view())
        .iter()
        .map(|l| l.abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn entropy_of_maximally_mixed_qubit() {
        let m = array![
            [C64::new(0.5, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(0.5, 0.0)]
        ];
        assert!((von_neumann_entropy(&m.view()) - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn eigenvalues_of_pauli_y() {
        let y = array![
            [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
            [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]
        ];
        let ev = hermitian_eigenvalues(&y.view());
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
        assert_eq!(hermiticity_error(&y.view()), 0.0);
    }

    #[test]
    fn symmetrize_projects_onto_hermitian() {
        let mut m = array![
            [C64::new(1.0, 0.3), C64::new(2.0, 1.0)],
            [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]
        ];
        symmetrize(&mut m.view_mut());
        assert_eq!(hermiticity_error(&m.view()), 0.0);
        assert_eq!(m[[0, 1]], C64::new(1.0, 0.5));
    }
}
