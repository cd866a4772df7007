use crate::error::{Error, Result};

use super::knots::{eval_basis, KnotVector};

/// Rational curve in an arbitrary number of dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsCurve {
    pub knots: KnotVector,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl NurbsCurve {
    pub fn new(knots: KnotVector, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let n = knots.n_basis();
        if points.len() != n || weights.len() != n {
            return Err(Error::Domain(format!(
                "curve needs {n} control points and weights, got {} and {}",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Domain("curve weights must be positive".into()));
        }
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Domain("control points have mixed dimensions".into()));
        }
        Ok(Self {
            knots,
            points,
            weights,
        })
    }
}

/// Point and first derivative of a NURBS curve at `u`.
pub fn eval_nurbs_1d(curve: &NurbsCurve, u: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = eval_basis(&curve.knots, u, 1.min(curve.knots.degree()))?;
    let dim = curve.points[0].len();
    let mut a = vec![0.0; dim];
    let mut da = vec![0.0; dim];
    let (mut w, mut dw) = (0.0, 0.0);
    for r in 0..=curve.knots.degree() {
        let i = b.first + r;
        let n0 = b.ders[0][r] * curve.weights[i];
        let n1 = b.ders.get(1).map_or(0.0, |d| d[r]) * curve.weights[i];
        w += n0;
        dw += n1;
        for c in 0..dim {
            a[c] += n0 * curve.points[i][c];
            da[c] += n1 * curve.points[i][c];
        }
    }
    let point: Vec<f64> = a.iter().map(|v| v / w).collect();
    let deriv = (0..dim).map(|c| (da[c] - dw * point[c]) / w).collect();
    Ok((point, deriv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn quarter_arc() -> NurbsCurve {
        let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        NurbsCurve::new(
            kv,
            vec![vec![1., 0.], vec![1., 1.], vec![0., 1.]],
            vec![1., FRAC_1_SQRT_2, 1.],
        )
        .unwrap()
    }

    #[test]
    fn arc_midpoint_and_endpoint() {
        let c = quarter_arc();
        let (p, _) = eval_nurbs_1d(&c, 0.5).unwrap();
        assert!((p[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (p[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        let (p, _) = eval_nurbs_1d(&c, 0.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn arc_lies_on_circle() {
        let c = quarter_arc();
        for s in 0..100 {
            let u = s as f64 / 99.0;
            let (p, d) = eval_nurbs_1d(&c, u).unwrap();
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-14);
            // tangent is orthogonal to the radius
            assert!((p[0] * d[0] + p[1] * d[1]).abs() < 1e-13);
        }
    }
}
