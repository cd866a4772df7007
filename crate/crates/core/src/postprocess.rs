//! Field evaluation off the surface, far-field pattern, target strength and
//! error norms, plus the CSV writers used by the batch driver.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analytic::ExactField;
use crate::error::{Error, Result};
use crate::kernels::{FOUR_PI, I};
use crate::nurbs::{ElementEval, SurfaceMesh};
use crate::quadrature::{gauss_ref, regular_points_off_surface, QuadConfig, QuadPoint};
use crate::vec3::Vec3;

/// A surface trace: spline coefficients over the mesh dofs or an exact field.
#[derive(Clone)]
pub enum Trace {
    Zero,
    Coeffs(Vec<Complex64>),
    /// Values (or normal derivatives) of an exact field.
    Field(Arc<dyn ExactField>),
}

impl std::fmt::Debug for Trace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Trace::Zero => write!(f, "Zero"),
            Trace::Coeffs(c) => write!(f, "Coeffs({} values)", c.len()),
            Trace::Field(_) => write!(f, "Field"),
        }
    }
}

/// Dirichlet and Neumann traces of an exterior solution.
#[derive(Debug, Clone)]
pub struct Traces {
    pub p: Trace,
    pub dpdn: Trace,
}

impl Traces {
    /// Total-field traces of a rigid scatterer (`∂p/∂n = 0`).
    pub fn rigid(coeffs: Vec<Complex64>) -> Self {
        Self {
            p: Trace::Coeffs(coeffs),
            dpdn: Trace::Zero,
        }
    }

    /// Computed pressure with the Neumann data of a known field.
    pub fn neumann_from_field(coeffs: Vec<Complex64>, field: Arc<dyn ExactField>) -> Self {
        Self {
            p: Trace::Coeffs(coeffs),
            dpdn: Trace::Field(field),
        }
    }

    /// Both traces of an exact field.
    pub fn exact(field: Arc<dyn ExactField>) -> Self {
        Self {
            p: Trace::Field(field.clone()),
            dpdn: Trace::Field(field),
        }
    }

    fn check(&self, mesh: &SurfaceMesh) -> Result<()> {
        for t in [&self.p, &self.dpdn] {
            if let Trace::Coeffs(c) = t {
                if c.len() != mesh.n_dofs {
                    return Err(Error::Domain(format!(
                        "trace has {} coefficients, mesh has {} dofs",
                        c.len(),
                        mesh.n_dofs
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Trace data at one surface quadrature point.
#[derive(Debug, Clone, Copy)]
struct SurfacePoint {
    y: Vec3,
    n: Vec3,
    w: f64,
    p: Complex64,
    dpdn: Complex64,
}

fn trace_value(
    t: &Trace,
    el_dofs: &[usize],
    r: &[f64],
    y: &Vec3,
    n: &Vec3,
    normal_derivative: bool,
) -> Complex64 {
    match t {
        Trace::Zero => Complex64::new(0.0, 0.0),
        Trace::Coeffs(c) => el_dofs.iter().zip(r).map(|(&d, &r)| c[d] * r).sum(),
        Trace::Field(f) if normal_derivative => f.normal_derivative(y, n),
        Trace::Field(f) => f.value(y),
    }
}

fn surface_points(
    mesh: &SurfaceMesh,
    traces: &Traces,
    e: usize,
    pts: &[QuadPoint],
    buf: &mut ElementEval,
    out: &mut Vec<SurfacePoint>,
) {
    let dofs = &mesh.elements[e].dofs;
    for q in pts {
        mesh.eval_element(e, q.xi, q.eta, buf);
        let an = buf.area_normal();
        let jac = an.norm();
        if jac == 0.0 {
            continue;
        }
        let n = an / jac;
        let y = buf.point;
        let r = &buf.basis.r[..dofs.len()];
        out.push(SurfacePoint {
            y,
            n,
            w: q.weight * jac,
            p: trace_value(&traces.p, dofs, r, &y, &n, false),
            dpdn: trace_value(&traces.dpdn, dofs, r, &y, &n, true),
        });
    }
}

fn element_gauss(mesh: &SurfaceMesh, e: usize, extra: usize) -> Vec<QuadPoint> {
    let el = &mesh.elements[e];
    let (p, q) = mesh.patches[el.patch].degrees();
    let mut pts = Vec::new();
    crate::quadrature::tensor_points(el.xi, el.eta, p + 1 + extra, q + 1 + extra, &mut pts);
    pts
}

/// Pressure at a point off the surface with a flag for points closer than
/// `1e-6` of the mesh diameter, where the regular rules lose accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub value: Complex64,
    pub near_surface: bool,
}

/// Kirchhoff representation `∫ p ∂Φ/∂n(y) - Φ ∂p/∂n dΓ(y)` at `x`. The
/// quadtree scheme is used with `x` as the pseudo-source whatever scheme `cfg`
/// selects; only `s1` is read.
pub fn field_at(
    mesh: &SurfaceMesh,
    traces: &Traces,
    k: f64,
    x: &Vec3,
    cfg: &QuadConfig,
) -> Result<FieldValue> {
    traces.check(mesh)?;
    let mut truncated = false;
    let mut buf = ElementEval::default();
    let mut pts = Vec::new();
    let mut value = Complex64::new(0.0, 0.0);
    let mut min_dist = f64::INFINITY;
    for e in 0..mesh.elements.len() {
        let (rule, t) = regular_points_off_surface(mesh, e, x, cfg);
        truncated |= t;
        pts.clear();
        surface_points(mesh, traces, e, &rule, &mut buf, &mut pts);
        for sp in &pts {
            let d = x - sp.y;
            let r = d.norm();
            min_dist = min_dist.min(r);
            if r == 0.0 {
                return Err(Error::Singularity);
            }
            let eikr = Complex64::from_polar(1.0, k * r);
            let phi = eikr / (FOUR_PI * r);
            // ∂Φ/∂n(y) = Φ (ikr - 1)/r ∂r/∂n(y), ∂r/∂n(y) = -(x - y)·n/r
            let dphi = phi * Complex64::new(-1.0, k * r) * (-d.dot(&sp.n) / (r * r));
            value += sp.w * (sp.p * dphi - phi * sp.dpdn);
        }
    }
    Ok(FieldValue {
        value,
        near_surface: truncated || min_dist < 1e-6 * mesh.char_length,
    })
}

/// Far-field pattern `p0(x̂) = -(1/4π) ∫ (ik p x̂·n + ∂p/∂n) e^{-ik x̂·y} dΓ`.
/// Gauss rules use `p̌ + 3 + n_eqp1` points per direction.
pub fn far_field(
    mesh: &SurfaceMesh,
    traces: &Traces,
    k: f64,
    directions: &[Vec3],
    n_eqp1: usize,
) -> Result<Vec<Complex64>> {
    traces.check(mesh)?;
    for d in directions {
        if (d.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "far-field direction {d:?} is not a unit vector"
            )));
        }
    }
    let mut buf = ElementEval::default();
    let mut pts = Vec::new();
    for e in 0..mesh.elements.len() {
        surface_points(
            mesh,
            traces,
            e,
            &element_gauss(mesh, e, n_eqp1 + 2),
            &mut buf,
            &mut pts,
        );
    }
    Ok(directions
        .par_iter()
        .map(|xh| {
            let s: Complex64 = pts
                .iter()
                .map(|sp| {
                    sp.w * (I * k * xh.dot(&sp.n) * sp.p + sp.dpdn)
                        * Complex64::from_polar(1.0, -k * xh.dot(&sp.y))
                })
                .sum();
            -s / FOUR_PI
        })
        .collect())
}

/// `20 log10(|p0| / |P_inc|)`; `-inf` when `p0 = 0`.
pub fn target_strength(p0: Complex64, p_inc: Complex64) -> Result<f64> {
    if p_inc.norm() == 0.0 {
        return Err(Error::Domain("incident amplitude must be nonzero".into()));
    }
    let a = p0.norm();
    Ok(if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        20.0 * (a / p_inc.norm()).log10()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceError {
    pub absolute: f64,
    /// `None` when the exact trace vanishes.
    pub relative: Option<f64>,
}

/// `‖p_h - p‖_{L²(Γ)}` with `p̌ + 4` Gauss points per direction and element.
pub fn l2_surface_error(
    mesh: &SurfaceMesh,
    coeffs: &[Complex64],
    exact: &dyn Fn(&Vec3) -> Complex64,
) -> Result<SurfaceError> {
    if coeffs.len() != mesh.n_dofs {
        return Err(Error::Domain(format!(
            "{} coefficients for {} dofs",
            coeffs.len(),
            mesh.n_dofs
        )));
    }
    let mut buf = ElementEval::default();
    let (mut num, mut den) = (0.0, 0.0);
    for (e, el) in mesh.elements.iter().enumerate() {
        let (p, q) = mesh.patches[el.patch].degrees();
        let (gx, wx) = gauss_ref(p + 4);
        let (gy, wy) = gauss_ref(q + 4);
        let (sx, sy) = (0.5 * (el.xi[1] - el.xi[0]), 0.5 * (el.eta[1] - el.eta[0]));
        for (b, v) in gy.iter().enumerate() {
            for (a, u) in gx.iter().enumerate() {
                mesh.eval_element(
                    e,
                    el.xi[0] + sx * (u + 1.0),
                    el.eta[0] + sy * (v + 1.0),
                    &mut buf,
                );
                let w = wx[a] * wy[b] * sx * sy * buf.area_normal().norm();
                if w == 0.0 {
                    continue;
                }
                let ph: Complex64 = el
                    .dofs
                    .iter()
                    .zip(&buf.basis.r)
                    .map(|(&d, &r)| coeffs[d] * r)
                    .sum();
                let pe = exact(&buf.point);
                num += w * (ph - pe).norm_sqr();
                den += w * pe.norm_sqr();
            }
        }
    }
    let absolute = num.sqrt();
    Ok(SurfaceError {
        absolute,
        relative: (den > 0.0).then(|| absolute / den.sqrt()),
    })
}

/// Unit vector at azimuth `phi` and elevation `theta` (degrees).
pub fn direction(phi_deg: f64, theta_deg: f64) -> Vec3 {
    let (p, t) = (phi_deg.to_radians(), theta_deg.to_radians());
    Vec3::new(t.cos() * p.cos(), t.cos() * p.sin(), t.sin())
}

/// Far-field pattern and target strength over a list of directions.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldSweep {
    pub phi_deg: Vec<f64>,
    pub theta_deg: Vec<f64>,
    pub directions: Vec<Vec3>,
    pub p0: Vec<Complex64>,
    pub ts: Vec<f64>,
}

impl FarFieldSweep {
    /// Builds the sweep from angles and the matching pattern values.
    pub fn new(
        phi_deg: Vec<f64>,
        theta_deg: Vec<f64>,
        p0: Vec<Complex64>,
        p_inc: Complex64,
    ) -> Result<Self> {
        if phi_deg.len() != theta_deg.len() || phi_deg.len() != p0.len() {
            return Err(Error::Domain(
                "sweep angle and value lists differ in length".into(),
            ));
        }
        let directions = phi_deg
            .iter()
            .zip(&theta_deg)
            .map(|(&p, &t)| direction(p, t))
            .collect();
        let ts = p0
            .iter()
            .map(|&v| target_strength(v, p_inc))
            .collect::<Result<_>>()?;
        Ok(Self {
            phi_deg,
            theta_deg,
            directions,
            p0,
            ts,
        })
    }

    pub fn len(&self) -> usize {
        self.p0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p0.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "phi_deg,theta_deg,re_p0,im_p0,abs_p0,TS_dB")?;
        for i in 0..self.len() {
            let p = self.p0[i];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                num(self.phi_deg[i]),
                num(self.theta_deg[i]),
                num(p.re),
                num(p.im),
                num(p.norm()),
                num(self.ts[i])
            )?;
        }
        Ok(())
    }
}

/// `‖|p0_A| - |p0_B|‖₂ / ‖|p0_B|‖₂` in percent.
pub fn far_field_l2_error(a: &FarFieldSweep, b: &FarFieldSweep) -> Result<f64> {
    let same = a.len() == b.len()
        && a.phi_deg
            .iter()
            .zip(&b.phi_deg)
            .all(|(x, y)| (x - y).abs() <= 1e-12)
        && a.theta_deg
            .iter()
            .zip(&b.theta_deg)
            .all(|(x, y)| (x - y).abs() <= 1e-12);
    if !same {
        return Err(Error::Domain(
            "far-field sweeps use different direction grids".into(),
        ));
    }
    let num: f64 =
        a.p0.iter()
            .zip(&b.p0)
            .map(|(x, y)| (x.norm() - y.norm()).powi(2))
            .sum();
    let den: f64 = b.p0.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Domain("reference far field is zero".into()));
    }
    Ok(100.0 * (num / den).sqrt())
}

/// One line of a convergence report.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub mesh_id: String,
    pub n_dofs: usize,
    pub h_max: f64,
    pub error_rel: f64,
}

pub fn write_error_csv<W: Write>(mut w: W, rows: &[ErrorRow]) -> Result<()> {
    writeln!(w, "mesh_id,n_dofs,h_max,error_rel")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.mesh_id,
            r.n_dofs,
            num(r.h_max),
            num(r.error_rel)
        )?;
    }
    Ok(())
}

/// Largest element diagonal.
pub fn h_max(mesh: &SurfaceMesh) -> f64 {
    mesh.elements.iter().map(|e| e.diag).fold(0.0, f64::max)
}

/// 17 significant digits, round-trip exact.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Least-squares slope of `log e` against `log h`: the observed order.
pub fn observed_order(h: &[f64], e: &[f64]) -> Result<f64> {
    if h.len() != e.len() || h.len() < 2 {
        return Err(Error::Domain("need at least two (h, error) pairs".into()));
    }
    if h.iter().chain(e).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain(
            "mesh sizes and errors must be positive".into(),
        ));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::MfsSolution;
    use crate::assembly::best_approximation;
    use crate::geometry::GeometrySpec;

    fn sphere(m: usize) -> SurfaceMesh {
        GeometrySpec::SpherePar2 { radius: 1.0 }
            .mesh(None, m)
            .unwrap()
    }

    fn mfs(k: f64) -> Arc<MfsSolution> {
        Arc::new(MfsSolution::line_layout(k, -0.4, 0.4, 3))
    }

    #[test]
    fn zero_traces_give_zero() {
        let mesh = sphere(1);
        let t = Traces {
            p: Trace::Zero,
            dpdn: Trace::Zero,
        };
        let v = field_at(
            &mesh,
            &t,
            2.0,
            &Vec3::new(3.0, 0.0, 0.0),
            &QuadConfig::default(),
        )
        .unwrap();
        assert_eq!(v.value, Complex64::new(0.0, 0.0));
        let ff = far_field(&mesh, &t, 2.0, &[direction(10.0, 20.0)], 0).unwrap();
        assert_eq!(ff[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn exact_mfs_traces_reproduce_field_and_far_field() {
        let mesh = sphere(2);
        let k = 2.0;
        let f = mfs(k);
        let t = Traces::exact(f.clone());
        let cfg = QuadConfig::default();
        for x in [Vec3::new(2.0, 0.5, -0.3), Vec3::new(0.0, 0.0, 1.5)] {
            let v = field_at(&mesh, &t, k, &x, &cfg).unwrap();
            let ex = f.value(&x);
            assert!(
                (v.value - ex).norm() < 1e-6 * ex.norm(),
                "{x:?}: {} vs {ex}",
                v.value
            );
            assert!(!v.near_surface);
        }
        // interior points see nothing of an exterior solution
        let v = field_at(&mesh, &t, k, &Vec3::new(0.1, 0.7, 0.0), &cfg).unwrap();
        assert!(v.value.norm() < 1e-6, "{}", v.value);

        let dirs: Vec<Vec3> = (0..12)
            .map(|i| direction(30.0 * i as f64, 15.0 * (i % 5) as f64 - 30.0))
            .collect();
        let ff = far_field(&mesh, &t, k, &dirs, 0).unwrap();
        for (d, v) in dirs.iter().zip(&ff) {
            let ex = f.far_field(d);
            assert!((v - ex).norm() < 1e-8 * ex.norm(), "{v} vs {ex}");
        }
    }

    #[test]
    fn far_field_is_the_limit_of_the_near_field() {
        let mesh = sphere(1);
        let k = 1.5;
        let t = Traces::exact(mfs(k));
        let d = direction(40.0, 10.0);
        let r = 1e5;
        let near = field_at(&mesh, &t, k, &(r * d), &QuadConfig::default())
            .unwrap()
            .value;
        let lim = r * Complex64::from_polar(1.0, -k * r) * near;
        let ff = far_field(&mesh, &t, k, &[d], 0).unwrap()[0];
        assert!((lim - ff).norm() < 1e-4 * ff.norm(), "{lim} vs {ff}");
    }

    #[test]
    fn far_field_is_linear_in_the_traces() {
        let mesh = sphere(1);
        let n = mesh.n_dofs;
        let a: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64).sin(), 0.3))
            .collect();
        let b: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(0.2, (i as f64 * 0.7).cos()))
            .collect();
        let s = Complex64::new(0.5, -1.5);
        let ab: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let dirs = [direction(0.0, 0.0), direction(123.0, -40.0)];
        let fa = far_field(&mesh, &Traces::rigid(a), 1.0, &dirs, 0).unwrap();
        let fb = far_field(&mesh, &Traces::rigid(b), 1.0, &dirs, 0).unwrap();
        let fab = far_field(&mesh, &Traces::rigid(ab), 1.0, &dirs, 0).unwrap();
        for i in 0..2 {
            assert!((fab[i] - fa[i] - s * fb[i]).norm() < 1e-13 * fab[i].norm().max(1.0));
        }
    }

    #[test]
    fn near_surface_points_are_flagged() {
        let mesh = sphere(1);
        let t = Traces::exact(mfs(1.0));
        let v = field_at(
            &mesh,
            &t,
            1.0,
            &Vec3::new(0.0, 0.0, 1.0 + 1e-9),
            &QuadConfig::default(),
        )
        .unwrap();
        assert!(v.near_surface);
    }

    #[test]
    fn target_strength_values() {
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(target_strength(one, one).unwrap(), 0.0);
        assert!((target_strength(Complex64::new(0.0, 10.0), one).unwrap() - 20.0).abs() < 1e-14);
        assert_eq!(
            target_strength(Complex64::new(0.0, 0.0), one).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(target_strength(one, Complex64::new(0.0, 0.0)).is_err());
        let p = Complex64::new(0.3, -0.2);
        let s = Complex64::new(0.0, 2.0);
        assert!(
            (target_strength(p * s, one * s).unwrap() - target_strength(p, one).unwrap()).abs()
                < 1e-10
        );
    }

    #[test]
    fn sweep_error_and_csv() {
        let phi = vec![0.0, 90.0, 180.0];
        let theta = vec![0.0; 3];
        let p = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 2.0),
            Complex64::new(-0.5, 0.5),
        ];
        let one = Complex64::new(1.0, 0.0);
        let a = FarFieldSweep::new(phi.clone(), theta.clone(), p.clone(), one).unwrap();
        assert_eq!(far_field_l2_error(&a, &a).unwrap(), 0.0);
        let b = FarFieldSweep::new(
            phi.clone(),
            theta.clone(),
            p.iter().map(|v| v * 1.01).collect(),
            one,
        )
        .unwrap();
        assert!((far_field_l2_error(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = FarFieldSweep::new(vec![0.0, 90.0, 181.0], theta, p, one).unwrap();
        assert!(far_field_l2_error(&a, &c).is_err());

        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "phi_deg,theta_deg,re_p0,im_p0,abs_p0,TS_dB");
        assert_eq!(lines.len(), 4);
        let back: f64 = lines[2].split(',').nth(5).unwrap().parse().unwrap();
        assert_eq!(back, a.ts[1]);
        let mut out = Vec::new();
        FarFieldSweep::new(vec![], vec![], vec![], one)
            .unwrap()
            .write_csv(&mut out)
            .unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1);
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn surface_error_of_exact_and_projected_traces() {
        let mesh = sphere(1);
        let c = vec![Complex64::new(2.0, -1.0); mesh.n_dofs];
        let e = l2_surface_error(&mesh, &c, &|_| Complex64::new(2.0, -1.0)).unwrap();
        assert!(e.absolute < 1e-13 && e.relative.unwrap() < 1e-13);
        let z = l2_surface_error(&mesh, &c, &|_| Complex64::new(0.0, 0.0)).unwrap();
        assert!(z.relative.is_none() && z.absolute > 0.0);

        // the L² projection beats any perturbation of it
        let f = mfs(2.0);
        let exact = |x: &Vec3| f.value(x);
        let ba = best_approximation(&mesh, exact, 4).unwrap();
        let e_ba = l2_surface_error(&mesh, &ba, &exact).unwrap().absolute;
        for s in 0..10 {
            let pert: Vec<Complex64> = ba
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v + 1e-3 * Complex64::new(((i + s) as f64).sin(), ((i * s) as f64).cos())
                })
                .collect();
            assert!(l2_surface_error(&mesh, &pert, &exact).unwrap().absolute > e_ba);
        }
    }

    #[test]
    fn observed_order_of_exact_power_law() {
        let h = [1.0, 0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|h: &f64| 3.0 * h.powi(3)).collect();
        assert!((observed_order(&h, &e).unwrap() - 3.0).abs() < 1e-12);
        assert!(observed_order(&h[..1], &e[..1]).is_err());
        assert!(observed_order(&[1.0, 0.5], &[0.0, 1.0]).is_err());
    }
}
