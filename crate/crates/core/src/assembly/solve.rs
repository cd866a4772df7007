use nalgebra::DMatrix;
use num_complex::Complex64;

use super::BemSystem;
use crate::error::{Error, Result};
use crate::nurbs::{ElementEval, SurfaceMesh};
use crate::quadrature::gauss_legendre;
use crate::vec3::Vec3;

/// Coefficients (one column per right-hand side) with the relative residuals.
#[derive(Debug, Clone)]
pub struct Solution {
    pub coeffs: DMatrix<Complex64>,
    /// `‖Au - b‖ / ‖b‖` per column.
    pub residuals: Vec<f64>,
    /// `max |U_ii| / min |U_ii|` of the LU factors, a cheap conditioning indicator.
    pub pivot_ratio: f64,
}

impl Solution {
    pub fn column(&self, c: usize) -> Vec<Complex64> {
        self.coeffs.column(c).iter().copied().collect()
    }
}

/// Dense LU with partial pivoting, all right-hand sides in one factorization.
pub fn solve(system: &BemSystem) -> Result<Solution> {
    let a = &system.matrix;
    if !a.is_square() || a.nrows() != system.rhs.nrows() {
        return Err(Error::Solver(format!(
            "dimension mismatch: matrix {}x{}, rhs {} rows",
            a.nrows(),
            a.ncols(),
            system.rhs.nrows()
        )));
    }
    if !system.is_finite() {
        return Err(Error::Solver("system has non-finite entries".into()));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &d| (l.min(d), h.max(d)));
    let pivot_ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(pivot_ratio < 1e15) {
        return Err(Error::Solver(format!(
            "matrix is numerically singular (pivot ratio {pivot_ratio:.3e})"
        )));
    }
    let coeffs = lu
        .solve(&system.rhs)
        .ok_or_else(|| Error::Solver(format!("LU solve failed (pivot ratio {pivot_ratio:.3e})")))?;
    let res = a * &coeffs - &system.rhs;
    let residuals = (0..coeffs.ncols())
        .map(|c| {
            let b = system.rhs.column(c).norm();
            let r = res.column(c).norm();
            if b > 0.0 {
                r / b
            } else {
                r
            }
        })
        .collect();
    Ok(Solution {
        coeffs,
        residuals,
        pivot_ratio,
    })
}

/// L² projection of `exact` onto the spline space: `M u = f` with Gauss
/// rules of `p + 1 + n_eqp1` points per direction.
pub fn best_approximation<F>(mesh: &SurfaceMesh, exact: F, n_eqp1: usize) -> Result<Vec<Complex64>>
where
    F: Fn(&Vec3) -> Complex64,
{
    let n = mesh.n_dofs;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut f = DMatrix::<f64>::zeros(n, 2);
    let mut buf = ElementEval::default();
    for (e, el) in mesh.elements.iter().enumerate() {
        let (px, py) = mesh.patches[el.patch].degrees();
        let (ax, wx) = gauss_legendre(px + 1 + n_eqp1)?;
        let (ay, wy) = gauss_legendre(py + 1 + n_eqp1)?;
        let (sx, sy) = (0.5 * (el.xi[1] - el.xi[0]), 0.5 * (el.eta[1] - el.eta[0]));
        for (a2, w2) in ay.iter().zip(&wy) {
            for (a1, w1) in ax.iter().zip(&wx) {
                mesh.eval_element(
                    e,
                    el.xi[0] + sx * (a1 + 1.0),
                    el.eta[0] + sy * (a2 + 1.0),
                    &mut buf,
                );
                let w = w1 * w2 * sx * sy * buf.area_normal().norm();
                if w == 0.0 {
                    continue;
                }
                let p = exact(&buf.point);
                for (l, &i) in el.dofs.iter().enumerate() {
                    let ri = buf.basis.r[l] * w;
                    f[(i, 0)] += ri * p.re;
                    f[(i, 1)] += ri * p.im;
                    for (l2, &j) in el.dofs.iter().enumerate() {
                        m[(i, j)] += ri * buf.basis.r[l2];
                    }
                }
            }
        }
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Solver("Gram matrix is not positive definite".into()))?;
    let u = chol.solve(&f);
    Ok((0..n)
        .map(|i| Complex64::new(u[(i, 0)], u[(i, 1)]))
        .collect())
}
