use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::knots::{KnotVector, MAX_DEGREE};

/// Tensor-product rational surface patch.
///
/// Control points and weights are stored with `xi` running fastest:
/// entry `(i, j)` lives at `i + n_xi * j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NurbsPatch {
    pub knots_xi: KnotVector,
    pub knots_eta: KnotVector,
    pub control_points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

/// Local differential geometry at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFrame {
    pub point: Vec3,
    pub d_xi: Vec3,
    pub d_eta: Vec3,
    pub normal: Vec3,
    pub jacobian: f64,
    pub h_xi: f64,
    pub h_eta: f64,
    pub e_xi: Vec3,
    pub e_eta: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
    pub v3: Vec3,
    pub theta: f64,
    /// Set where the parametrization collapses (vanishing surface Jacobian).
    pub degenerate: bool,
}

impl SurfaceFrame {
    /// Builds the frame from the point and the two parametric tangents.
    pub fn from_tangents(point: Vec3, d_xi: Vec3, d_eta: Vec3) -> Self {
        let cross = d_xi.cross(&d_eta);
        let jacobian = cross.norm();
        let h_xi = d_xi.norm();
        let h_eta = d_eta.norm();
        let scale = h_xi.max(h_eta);
        let degenerate = !(jacobian > 1e-12 * scale * scale) || h_xi == 0.0 || h_eta == 0.0;
        if degenerate {
            let e_xi = if h_xi > 0.0 {
                d_xi / h_xi
            } else {
                Vec3::zeros()
            };
            let e_eta = if h_eta > 0.0 {
                d_eta / h_eta
            } else {
                Vec3::zeros()
            };
            return Self {
                point,
                d_xi,
                d_eta,
                normal: Vec3::zeros(),
                jacobian: 0.0,
                h_xi,
                h_eta,
                e_xi,
                e_eta,
                v1: e_xi,
                v2: Vec3::zeros(),
                v3: Vec3::zeros(),
                theta: 0.0,
                degenerate: true,
            };
        }
        let normal = cross / jacobian;
        let e_xi = d_xi / h_xi;
        let e_eta = d_eta / h_eta;
        let v2 = normal.cross(&e_xi);
        let theta = e_xi.dot(&e_eta).clamp(-1.0, 1.0).acos();
        Self {
            point,
            d_xi,
            d_eta,
            normal,
            jacobian,
            h_xi,
            h_eta,
            e_xi,
            e_eta,
            v1: e_xi,
            v2,
            v3: normal,
            theta,
            degenerate: false,
        }
    }

    /// Surface gradient of a scalar field given its parametric derivatives:
    /// `(dp/dv1) v1 + (dp/dv2) v2` with the tangential derivatives taken along
    /// the orthonormal frame.
    pub fn surface_gradient(&self, dp_dxi: f64, dp_deta: f64) -> Vec3 {
        let (s, c) = self.theta.sin_cos();
        let dv1 = dp_dxi / self.h_xi;
        let dv2 = -c / (s * self.h_xi) * dp_dxi + dp_deta / (self.h_eta * s);
        self.v1 * dv1 + self.v2 * dv2
    }
}

/// Rational basis values on one patch at one parameter.
#[derive(Debug, Clone, Default)]
pub struct PatchBasis {
    pub span_xi: usize,
    pub span_eta: usize,
    /// Values of the `(p+1)(q+1)` local functions, `xi` fastest.
    pub r: Vec<f64>,
    pub dr_dxi: Vec<f64>,
    pub dr_deta: Vec<f64>,
}

impl NurbsPatch {
    pub fn new(
        knots_xi: KnotVector,
        knots_eta: KnotVector,
        control_points: Vec<Vec3>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = knots_xi.n_basis() * knots_eta.n_basis();
        if control_points.len() != n || weights.len() != n {
            return Err(Error::Domain(format!(
                "patch needs {n} control points, got {} points and {} weights",
                control_points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(
                "patch weights must be strictly positive".into(),
            ));
        }
        if knots_xi.degree() > MAX_DEGREE || knots_eta.degree() > MAX_DEGREE {
            return Err(Error::Domain(format!(
                "degree above {MAX_DEGREE} is not supported"
            )));
        }
        Ok(Self {
            knots_xi,
            knots_eta,
            control_points,
            weights,
        })
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.knots_xi.degree(), self.knots_eta.degree())
    }

    pub fn n_xi(&self) -> usize {
        self.knots_xi.n_basis()
    }

    pub fn n_eta(&self) -> usize {
        self.knots_eta.n_basis()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n_xi() * j
    }

    pub fn contains_param(&self, xi: f64, eta: f64) -> bool {
        xi >= self.knots_xi.first()
            && xi <= self.knots_xi.last()
            && eta >= self.knots_eta.first()
            && eta <= self.knots_eta.last()
    }

    fn check_param(&self, xi: f64, eta: f64) -> Result<()> {
        if self.contains_param(xi, eta) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "parameter ({xi}, {eta}) outside patch domain"
            )))
        }
    }

    /// Rational basis with first derivatives in the given spans; returns the
    /// surface point and tangents as well.
    pub fn basis_in_spans(
        &self,
        span_xi: usize,
        span_eta: usize,
        xi: f64,
        eta: f64,
        out: &mut PatchBasis,
    ) -> (Vec3, Vec3, Vec3) {
        let (p, q) = self.degrees();
        let mut nu = [0.0; MAX_DEGREE + 1];
        let mut dnu = [0.0; MAX_DEGREE + 1];
        let mut nv = [0.0; MAX_DEGREE + 1];
        let mut dnv = [0.0; MAX_DEGREE + 1];
        self.knots_xi
            .eval_first_derivs(span_xi, xi, &mut nu, &mut dnu);
        self.knots_eta
            .eval_first_derivs(span_eta, eta, &mut nv, &mut dnv);
        let nloc = (p + 1) * (q + 1);
        out.span_xi = span_xi;
        out.span_eta = span_eta;
        out.r.resize(nloc, 0.0);
        out.dr_dxi.resize(nloc, 0.0);
        out.dr_deta.resize(nloc, 0.0);
        let (i0, j0) = (span_xi - p, span_eta - q);
        let nx = self.n_xi();
        let (mut w, mut wu, mut wv) = (0.0, 0.0, 0.0);
        let mut a = Vec3::zeros();
        let mut au = Vec3::zeros();
        let mut av = Vec3::zeros();
        for b in 0..=q {
            for c in 0..=p {
                let g = (i0 + c) + nx * (j0 + b);
                let wt = self.weights[g];
                let l = c + (p + 1) * b;
                let f = nu[c] * nv[b] * wt;
                let fu = dnu[c] * nv[b] * wt;
                let fv = nu[c] * dnv[b] * wt;
                out.r[l] = f;
                out.dr_dxi[l] = fu;
                out.dr_deta[l] = fv;
                w += f;
                wu += fu;
                wv += fv;
                let cp = &self.control_points[g];
                a += cp * f;
                au += cp * fu;
                av += cp * fv;
            }
        }
        let inv = 1.0 / w;
        for l in 0..nloc {
            let r = out.r[l] * inv;
            out.r[l] = r;
            out.dr_dxi[l] = (out.dr_dxi[l] - r * wu) * inv;
            out.dr_deta[l] = (out.dr_deta[l] - r * wv) * inv;
        }
        let x = a * inv;
        let dx = (au - x * wu) * inv;
        let dy = (av - x * wv) * inv;
        (x, dx, dy)
    }

    /// Global `(i, j)` index of local function `l` for the given spans.
    pub fn local_to_ij(&self, span_xi: usize, span_eta: usize, l: usize) -> (usize, usize) {
        let (p, q) = self.degrees();
        (span_xi - p + l % (p + 1), span_eta - q + l / (p + 1))
    }

    /// Surface point.
    pub fn point(&self, xi: f64, eta: f64) -> Result<Vec3> {
        self.check_param(xi, eta)?;
        let mut b = PatchBasis::default();
        let (x, _, _) = self.basis_in_spans(
            self.knots_xi.find_span(xi),
            self.knots_eta.find_span(eta),
            xi,
            eta,
            &mut b,
        );
        Ok(x)
    }

    /// Full local frame.
    pub fn frame(&self, xi: f64, eta: f64) -> Result<SurfaceFrame> {
        self.check_param(xi, eta)?;
        let mut b = PatchBasis::default();
        let (x, dx, dy) = self.basis_in_spans(
            self.knots_xi.find_span(xi),
            self.knots_eta.find_span(eta),
            xi,
            eta,
            &mut b,
        );
        Ok(SurfaceFrame::from_tangents(x, dx, dy))
    }

    /// Homogeneous control net `(w x, w y, w z, w)`.
    pub fn homogeneous(&self) -> Vec<[f64; 4]> {
        self.control_points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| [w * p.x, w * p.y, w * p.z, w])
            .collect()
    }

    /// Rebuilds a patch from a homogeneous control net.
    pub fn from_homogeneous(
        knots_xi: KnotVector,
        knots_eta: KnotVector,
        net: &[[f64; 4]],
    ) -> Result<Self> {
        let pts = net
            .iter()
            .map(|h| Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
            .collect();
        let w = net.iter().map(|h| h[3]).collect();
        Self::new(knots_xi, knots_eta, pts, w)
    }

    /// Number of nonzero-measure knot spans in each direction.
    pub fn n_elements(&self) -> usize {
        self.knots_xi.spans().len() * self.knots_eta.spans().len()
    }

    /// Applies a rigid map `x -> m x` to every control point.
    pub fn transformed(&self, m: &nalgebra::Matrix3<f64>) -> Self {
        let mut out = self.clone();
        for p in out.control_points.iter_mut() {
            *p = m * *p;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bilinear_square() -> NurbsPatch {
        let k = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let pts = vec![
            Vec3::new(0., 0., 0.),
            Vec3::new(2., 0., 0.),
            Vec3::new(0., 1., 0.),
            Vec3::new(2., 1., 0.),
        ];
        NurbsPatch::new(k.clone(), k, pts, vec![1.0; 4]).unwrap()
    }

    #[test]
    fn flat_patch_frame() {
        let p = bilinear_square();
        let f = p.frame(0.3, 0.6).unwrap();
        assert!((f.point - Vec3::new(0.6, 0.6, 0.0)).norm() < 1e-15);
        assert!((f.normal - Vec3::z()).norm() < 1e-15);
        assert!((f.jacobian - 2.0).abs() < 1e-15);
        assert!((f.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(f.v1.dot(&f.v2).abs() < 1e-15 && f.v2.dot(&f.v3).abs() < 1e-15);
    }

    #[test]
    fn surface_gradient_of_linear_function() {
        // p = x on a sheared flat patch has gradient e_x
        let k = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let pts = vec![
            Vec3::new(0., 0., 0.),
            Vec3::new(1., 0., 0.),
            Vec3::new(0.5, 1., 0.),
            Vec3::new(1.5, 1., 0.),
        ];
        let patch = NurbsPatch::new(k.clone(), k, pts, vec![1.0; 4]).unwrap();
        let f = patch.frame(0.5, 0.5).unwrap();
        let g = f.surface_gradient(f.d_xi.x, f.d_eta.x);
        assert!((g - Vec3::x()).norm() < 1e-14);
    }

    #[test]
    fn out_of_domain_is_error() {
        assert!(bilinear_square().point(1.2, 0.0).is_err());
    }
}
