//! Reference solutions: pulsating sphere, method-of-fundamental-solutions
//! fields, interior eigenfrequencies, rigid sphere scattering and the
//! spherical Bessel functions behind them.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{greens_derivs, FOUR_PI, I};
use crate::vec3::{v3, Vec3};

/// A Helmholtz field with closed-form value and gradient.
pub trait ExactField: Send + Sync {
    fn value(&self, x: &Vec3) -> Complex64;

    fn gradient(&self, x: &Vec3) -> [Complex64; 3];

    fn normal_derivative(&self, x: &Vec3, n: &Vec3) -> Complex64 {
        let g = self.gradient(x);
        g[0] * n.x + g[1] * n.y + g[2] * n.z
    }
}

// ============================================================================
// Point-source fields
// ============================================================================

/// Pulsating unit sphere: value and radial derivative of `e^{ikR}/(4πR)` at `x`.
pub fn pulsating_sphere(k: f64, x: &Vec3) -> Result<(Complex64, Complex64)> {
    let r = x.norm();
    if r == 0.0 {
        return Err(Error::Singularity);
    }
    let e = (I * k * r).exp();
    Ok((e / (FOUR_PI * r), e * (I * k * r - 1.0) / (FOUR_PI * r * r)))
}

/// Sum of point sources `Σ C_n Φ_k(x, y_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfsSolution {
    pub k: f64,
    pub sources: Vec<Vec3>,
    pub coeffs: Vec<Complex64>,
}

impl MfsSolution {
    /// Sources with the default weights `C_n = cos(n - 1)`.
    pub fn new(k: f64, sources: Vec<Vec3>) -> Self {
        let coeffs = (0..sources.len())
            .map(|n| Complex64::new((n as f64).cos(), 0.0))
            .collect();
        Self { k, sources, coeffs }
    }

    /// Unit-strength source at the origin (the pulsating sphere).
    pub fn point(k: f64) -> Self {
        Self {
            k,
            sources: vec![Vec3::zeros()],
            coeffs: vec![Complex64::new(1.0, 0.0)],
        }
    }

    /// 27 sources on the grid `(a/4)[c_i, c_j, c_l]`, `c ∈ {-1, 0, 1}`, `i` fastest.
    pub fn cube_layout(k: f64, a: f64) -> Self {
        let c = [-1.0, 0.0, 1.0];
        let mut s = Vec::with_capacity(27);
        for l in c {
            for j in c {
                for i in c {
                    s.push(0.25 * a * v3(i, j, l));
                }
            }
        }
        Self::new(k, s)
    }

    /// `n` sources evenly spaced on the x-axis from `x = start` to `x = end`.
    pub fn line_layout(k: f64, start: f64, end: f64, n: usize) -> Self {
        let s = (0..n)
            .map(|i| {
                let t = if n > 1 {
                    i as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                v3(start + t * (end - start), 0.0, 0.0)
            })
            .collect();
        Self::new(k, s)
    }

    /// Value and (when `n` is given) normal derivative at `x`.
    pub fn eval(&self, x: &Vec3, n: Option<&Vec3>) -> Result<(Complex64, Complex64)> {
        let nz = Vec3::zeros();
        let nx = n.unwrap_or(&nz);
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for (y, c) in self.sources.iter().zip(&self.coeffs) {
            let kv = greens_derivs(self.k, x, y, nx, &nz)?;
            p += c * kv.phi;
            dp += c * kv.dphi_dnx;
        }
        Ok((p, dp))
    }

    /// Far-field pattern `(1/4π) Σ C_n e^{-ik x̂·y_n}`.
    pub fn far_field(&self, dir: &Vec3) -> Complex64 {
        self.sources
            .iter()
            .zip(&self.coeffs)
            .map(|(y, c)| c * (-I * self.k * dir.dot(y)).exp())
            .sum::<Complex64>()
            / FOUR_PI
    }
}

impl ExactField for MfsSolution {
    fn value(&self, x: &Vec3) -> Complex64 {
        self.eval(x, None)
            .map(|v| v.0)
            .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    }

    fn gradient(&self, x: &Vec3) -> [Complex64; 3] {
        let mut g = [Complex64::new(0.0, 0.0); 3];
        for (y, c) in self.sources.iter().zip(&self.coeffs) {
            let d = x - y;
            let f = self.radial_factor(c, d.norm());
            for i in 0..3 {
                g[i] += f * d[i];
            }
        }
        g
    }

    fn normal_derivative(&self, x: &Vec3, n: &Vec3) -> Complex64 {
        self.sources
            .iter()
            .zip(&self.coeffs)
            .map(|(y, c)| {
                let d = x - y;
                self.radial_factor(c, d.norm()) * d.dot(n)
            })
            .sum()
    }
}

impl MfsSolution {
    /// `C e^{ikr}(ikr - 1) / (4πr³)`: the gradient of one source is this times `x - y`.
    #[inline]
    fn radial_factor(&self, c: &Complex64, r: f64) -> Complex64 {
        let kr = self.k * r;
        let e = Complex64::from_polar(1.0, kr);
        c * (e * Complex64::new(-1.0, kr)).scale(1.0 / (FOUR_PI * r * r * r))
    }
}

/// `P e^{ik d·x}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave {
    pub k: f64,
    pub amplitude: Complex64,
    pub direction: Vec3,
}

impl ExactField for PlaneWave {
    fn value(&self, x: &Vec3) -> Complex64 {
        self.amplitude * (I * self.k * self.direction.dot(x)).exp()
    }

    fn gradient(&self, x: &Vec3) -> [Complex64; 3] {
        let v = I * self.k * self.value(x);
        [
            v * self.direction.x,
            v * self.direction.y,
            v * self.direction.z,
        ]
    }
}

/// Interior field `Π sin(k x_i/√3)` used on the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineProductField {
    pub k: f64,
}

impl ExactField for SineProductField {
    fn value(&self, x: &Vec3) -> Complex64 {
        let a = self.k / 3f64.sqrt();
        ((a * x.x).sin() * (a * x.y).sin() * (a * x.z).sin()).into()
    }

    fn gradient(&self, x: &Vec3) -> [Complex64; 3] {
        let a = self.k / 3f64.sqrt();
        let (s1, c1) = (a * x.x).sin_cos();
        let (s2, c2) = (a * x.y).sin_cos();
        let (s3, c3) = (a * x.z).sin_cos();
        [
            (a * c1 * s2 * s3).into(),
            (a * s1 * c2 * s3).into(),
            (a * s1 * s2 * c3).into(),
        ]
    }
}

// ============================================================================
// Spherical Bessel functions
// ============================================================================

/// `j_n, j_n', y_n, y_n'` at one argument; `h = j + i y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphBessel {
    pub j: f64,
    pub dj: f64,
    pub y: f64,
    pub dy: f64,
}

impl SphBessel {
    pub fn h(&self) -> Complex64 {
        Complex64::new(self.j, self.y)
    }

    pub fn dh(&self) -> Complex64 {
        Complex64::new(self.dj, self.dy)
    }
}

/// Orders `0..=n_max` at `x > 0`. `j` uses Miller's downward recurrence
/// normalised by `Σ (2k+1) j_k² = 1`; `y` runs upward.
pub fn spherical_bessel_all(n_max: usize, x: f64) -> Result<Vec<SphBessel>> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "spherical Bessel functions need x > 0, got {x}"
        )));
    }
    let top = n_max.max(x.ceil() as usize) + 1;
    let start = top + 20 + (40.0 * top as f64).sqrt().ceil() as usize;
    let mut j = vec![0.0; start + 2];
    j[start] = 1.0;
    for k in (1..=start).rev() {
        j[k - 1] = (2 * k + 1) as f64 / x * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e100 {
            for v in j.iter_mut().skip(k - 1) {
                *v *= 1e-100;
            }
        }
    }
    let norm: f64 = j
        .iter()
        .enumerate()
        .map(|(k, v)| (2 * k + 1) as f64 * v * v)
        .sum();
    let mut scale = 1.0 / norm.sqrt();
    // sign from whichever closed form is better conditioned
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    if j0.abs() > j1.abs() {
        scale = scale.copysign(j0 * j[0]);
    } else {
        scale = scale.copysign(j1 * j[1]);
    }
    for v in j.iter_mut() {
        *v *= scale;
    }
    let mut y = vec![0.0; n_max + 2];
    y[0] = -c / x;
    y[1] = -c / (x * x) - s / x;
    for k in 1..=n_max {
        y[k + 1] = (2 * k + 1) as f64 / x * y[k] - y[k - 1];
    }
    Ok((0..=n_max)
        .map(|n| {
            let (dj, dy) = if n == 0 {
                (-j[1], -y[1])
            } else {
                let f = (n + 1) as f64 / x;
                (j[n - 1] - f * j[n], y[n - 1] - f * y[n])
            };
            SphBessel {
                j: j[n],
                dj,
                y: y[n],
                dy,
            }
        })
        .collect())
}

pub fn spherical_bessel(n: usize, x: f64) -> Result<SphBessel> {
    Ok(spherical_bessel_all(n, x)?[n])
}

// ============================================================================
// Eigenfrequencies
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenKind {
    SphereDirichlet,
    SphereNeumann,
    CubeDirichlet,
    CubeNeumann,
}

/// Dimensionless interior eigenvalues (`kR₀` or `ka`), ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfrequencyTable {
    pub kind: EigenKind,
    pub values: Vec<f64>,
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    v
}

/// `ka = π √(n₁² + n₂² + n₃²)` up to `k_max·a`; Dirichlet needs every `n_i ≥ 1`.
/// The Neumann table keeps the zero eigenvalue.
pub fn cube_eigenfrequencies(neumann: bool, a: f64, k_max: f64) -> Result<EigenfrequencyTable> {
    if !(a > 0.0) {
        return Err(Error::Domain("cube side must be positive".into()));
    }
    let top = k_max * a;
    let lo = if neumann { 0 } else { 1 };
    let nmax = (top / PI).floor() as usize + 1;
    let mut v = Vec::new();
    for n1 in lo..=nmax {
        for n2 in lo..=nmax {
            for n3 in lo..=nmax {
                let ka = PI * ((n1 * n1 + n2 * n2 + n3 * n3) as f64).sqrt();
                if ka <= top {
                    v.push(ka);
                }
            }
        }
    }
    let kind = if neumann {
        EigenKind::CubeNeumann
    } else {
        EigenKind::CubeDirichlet
    };
    Ok(EigenfrequencyTable {
        kind,
        values: dedup_sorted(v),
    })
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    while b - a > 1e-13 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Non-zero roots of `j_n` (Dirichlet) or `j_n'` (Neumann) below `k_max·R₀`.
pub fn sphere_eigenfrequencies(neumann: bool, r0: f64, k_max: f64) -> Result<EigenfrequencyTable> {
    if !(r0 > 0.0) {
        return Err(Error::Domain("sphere radius must be positive".into()));
    }
    let top = k_max * r0;
    let mut v = Vec::new();
    let step = 0.01;
    // j_n and j_n' have no zeros below n - 1
    for n in 0..=(top.ceil() as usize + 1) {
        let f = |x: f64| {
            let b = spherical_bessel(n, x).expect("x > 0");
            if neumann {
                b.dj
            } else {
                b.j
            }
        };
        let mut a = (n as f64 - 1.0).max(0.0) + step;
        let mut fa = f(a);
        while a < top {
            let b = (a + step).min(top);
            let fb = f(b);
            if fa == 0.0 {
                v.push(a);
            } else if (fa > 0.0) != (fb > 0.0) {
                v.push(bisect(f, a, b));
            }
            a = b;
            fa = fb;
        }
    }
    let kind = if neumann {
        EigenKind::SphereNeumann
    } else {
        EigenKind::SphereDirichlet
    };
    Ok(EigenfrequencyTable {
        kind,
        values: dedup_sorted(v),
    })
}

// ============================================================================
// Rigid sphere
// ============================================================================

/// Legendre polynomials `P_0..=P_n` at `t`.
pub fn legendre_all(n: usize, t: f64) -> Vec<f64> {
    let mut p = vec![1.0; n + 1];
    if n >= 1 {
        p[1] = t;
    }
    for l in 1..n {
        p[l + 1] = ((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}

const SERIES_CAP: usize = 200;
const SERIES_TOL: f64 = 1e-14;

/// Plane wave `P e^{ik d·x}` scattered by a sound-hard sphere of radius `r0`
/// centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidSphere {
    pub k: f64,
    pub r0: f64,
    pub amplitude: Complex64,
    pub direction: Vec3,
}

impl RigidSphere {
    pub fn new(k: f64, r0: f64, amplitude: Complex64, direction: Vec3) -> Result<Self> {
        if !(k > 0.0 && r0 > 0.0) {
            return Err(Error::Domain("rigid sphere needs k > 0 and R0 > 0".into()));
        }
        Ok(Self {
            k,
            r0,
            amplitude,
            direction: direction.normalize(),
        })
    }

    /// Sums `Σ (2n+1) iⁿ c_n` until three consecutive terms fall below the tolerance.
    fn series<F: FnMut(usize) -> Complex64>(mut term: F) -> Result<Complex64> {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut small = 0;
        for n in 0..SERIES_CAP {
            let t = term(n);
            if !t.is_finite() {
                break;
            }
            sum += t;
            if t.norm() <= SERIES_TOL * sum.norm() {
                small += 1;
                if small == 3 {
                    return Ok(sum);
                }
            } else {
                small = 0;
            }
        }
        Err(Error::Domain("rigid sphere series did not converge".into()))
    }

    fn coefficients(&self) -> Result<Vec<Complex64>> {
        let b = spherical_bessel_all(SERIES_CAP, self.k * self.r0)?;
        Ok(b.iter().map(|s| s.dj / s.dh()).collect())
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if r < self.r0 * (1.0 - 1e-12) {
            return Err(Error::Domain(format!(
                "point at radius {r} is inside the sphere"
            )));
        }
        Ok(())
    }

    /// Scattered pressure at `x`.
    pub fn scattered(&self, x: &Vec3) -> Result<Complex64> {
        let r = x.norm();
        self.check_radius(r)?;
        let a = self.coefficients()?;
        let hb = spherical_bessel_all(SERIES_CAP, self.k * r)?;
        let pl = legendre_all(SERIES_CAP, self.direction.dot(x) / r);
        let s = Self::series(|n| (2 * n + 1) as f64 * I.powu(n as u32) * a[n] * hb[n].h() * pl[n])?;
        Ok(-self.amplitude * s)
    }

    pub fn incident(&self, x: &Vec3) -> Complex64 {
        self.amplitude * (I * self.k * self.direction.dot(x)).exp()
    }

    pub fn total(&self, x: &Vec3) -> Result<Complex64> {
        Ok(self.incident(x) + self.scattered(x)?)
    }

    /// Radial derivative of the total field, from the series.
    pub fn total_radial_derivative(&self, x: &Vec3) -> Result<Complex64> {
        let r = x.norm();
        self.check_radius(r)?;
        let a = self.coefficients()?;
        let hb = spherical_bessel_all(SERIES_CAP, self.k * r)?;
        let pl = legendre_all(SERIES_CAP, self.direction.dot(x) / r);
        let s = Self::series(|n| {
            (2 * n + 1) as f64 * I.powu(n as u32) * (hb[n].dj - a[n] * hb[n].dh()) * pl[n]
        })?;
        Ok(self.amplitude * self.k * s)
    }

    /// Far-field pattern of the scattered wave.
    pub fn far_field(&self, dir: &Vec3) -> Result<Complex64> {
        let a = self.coefficients()?;
        let pl = legendre_all(SERIES_CAP, self.direction.dot(dir) / dir.norm());
        let s = Self::series(|n| (2 * n + 1) as f64 * a[n] * pl[n])?;
        Ok(I * self.amplitude / self.k * s)
    }
}

/// Total field of the rigid sphere; the gradient is a central difference.
impl ExactField for RigidSphere {
    fn value(&self, x: &Vec3) -> Complex64 {
        self.total(x).unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    }

    fn gradient(&self, x: &Vec3) -> [Complex64; 3] {
        let h = 1e-6 * self.r0;
        let mut g = [Complex64::new(0.0, 0.0); 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut e = Vec3::zeros();
            e[i] = h;
            let xp = x + e;
            let xm = x - e;
            // stay outside the sphere
            let (xp, xm) = if xm.norm() < self.r0 {
                (xp + e, *x)
            } else {
                (xp, xm)
            };
            *gi = (self.value(&xp) - self.value(&xm)) / (xp - xm)[i];
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn helmholtz_residual<F: ExactField>(f: &F, k: f64, x: &Vec3) -> (f64, f64) {
        let h = 1e-3;
        let mut lap = -6.0 * f.value(x);
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            lap += f.value(&(x + e)) + f.value(&(x - e));
        }
        lap /= h * h;
        (
            (lap + k * k * f.value(x)).norm(),
            (k * k * f.value(x)).norm(),
        )
    }

    #[test]
    fn pulsating_sphere_values() {
        let k = 1.7;
        let (p, g) = pulsating_sphere(k, &v3(0.0, 0.6, 0.8)).unwrap();
        let p2 = pulsating_sphere(k, &v3(1.0, 0.0, 0.0)).unwrap().0;
        assert!((p - p2).norm() < 1e-15);
        assert!((p - (I * k).exp() / FOUR_PI).norm() < 1e-15);
        assert!((g - (I * k).exp() * (I * k - 1.0) / FOUR_PI).norm() < 1e-15);
        let g0 = pulsating_sphere(0.0, &v3(1.0, 0.0, 0.0)).unwrap().1;
        assert!((g0 + 1.0 / FOUR_PI).norm() < 1e-15);
        let h = 1e-6;
        let fd = (pulsating_sphere(k, &v3(1.0 + h, 0.0, 0.0)).unwrap().0
            - pulsating_sphere(k, &v3(1.0 - h, 0.0, 0.0)).unwrap().0)
            / (2.0 * h);
        assert!((fd - g).norm() < 1e-8);
    }

    #[test]
    fn mfs_basics() {
        let k = 2.0;
        let one = MfsSolution {
            k,
            sources: vec![v3(0.1, 0.2, -0.1)],
            coeffs: vec![1.0.into()],
        };
        let x = v3(1.0, 0.5, 0.3);
        let n = v3(0.0, 0.0, 1.0);
        let kv = greens_derivs(k, &x, &one.sources[0], &n, &Vec3::zeros()).unwrap();
        let (p, dp) = one.eval(&x, Some(&n)).unwrap();
        assert_eq!(p, kv.phi);
        assert_eq!(dp, kv.dphi_dnx);
        assert!(one.eval(&one.sources[0], None).is_err());
        let g = one.gradient(&x);
        assert!((g[2] - dp).norm() < 1e-14);

        let cube = MfsSolution::cube_layout(k, 2.0);
        assert_eq!(cube.sources.len(), 27);
        assert_eq!(cube.sources[0], v3(-0.5, -0.5, -0.5));
        assert_eq!(cube.sources[1], v3(0.0, -0.5, -0.5));
        assert_eq!(cube.sources[26], v3(0.5, 0.5, 0.5));
        assert_eq!(cube.coeffs[2], Complex64::new(2f64.cos(), 0.0));

        let line = MfsSolution::line_layout(k, 1.0, -5.0, 16);
        assert_eq!(line.sources[0].x, 1.0);
        assert!((line.sources[15].x + 5.0).abs() < 1e-15);
    }

    #[test]
    fn mfs_far_field_oracles() {
        let d = v3(0.3, -0.4, 0.5).normalize();
        assert!((MfsSolution::point(3.0).far_field(&d) - 1.0 / FOUR_PI).norm() < 1e-16);
        let mut cube = MfsSolution::cube_layout(0.0, 2.0);
        let s: f64 = (0..27).map(|n| (n as f64).cos()).sum();
        assert!((cube.far_field(&d) - s / FOUR_PI).norm() < 1e-14);
        cube.k = 2.0;
        let r = 1e6;
        let lim = (-I * cube.k * r).exp() * r * cube.value(&(r * d));
        let p0 = cube.far_field(&d);
        assert!((lim - p0).norm() < 1e-5 * p0.norm());
        // linear in the weights
        let mut twice = cube.clone();
        twice
            .coeffs
            .iter_mut()
            .for_each(|c| *c *= Complex64::new(0.5, 2.0));
        assert!((twice.far_field(&d) - Complex64::new(0.5, 2.0) * p0).norm() < 1e-14);
    }

    #[test]
    fn bessel_closed_forms() {
        let b = spherical_bessel(0, PI).unwrap();
        assert!(b.j.abs() < 1e-14);
        for &x in &[0.1, 1.0, 3.7, 25.0] {
            let (s, c) = f64::sin_cos(x);
            let b = spherical_bessel_all(2, x).unwrap();
            assert!((b[0].j - s / x).abs() < 1e-14);
            assert!((b[1].j - (s / (x * x) - c / x)).abs() < 1e-14);
            let j2 = if x < 1.0 {
                // closed form cancels badly for small x
                let x2 = x * x;
                x2 / 15.0 * (1.0 - x2 / 14.0 + x2 * x2 / 504.0 - x2 * x2 * x2 / 33264.0)
            } else {
                (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x)
            };
            assert!((b[2].j - j2).abs() < 1e-13 * j2.abs().max(1e-3));
            assert!((b[0].y + c / x).abs() < 1e-14 / x);
        }
        assert!(spherical_bessel(1, 2.08157597781810).unwrap().dj.abs() < 1e-13);
        assert!(spherical_bessel(0, 0.0).is_err());
        assert!(spherical_bessel(0, -1.0).is_err());
    }

    #[test]
    fn bessel_wronskian() {
        for i in 0..=50 {
            let x = 0.1 + i as f64 * (50.0 - 0.1) / 50.0;
            let b = spherical_bessel_all(20, x).unwrap();
            for (n, s) in b.iter().enumerate() {
                let w = s.j * s.dy - s.dj * s.y;
                let rel = (w * x * x - 1.0).abs();
                assert!(rel < 1e-10, "n={n} x={x} rel={rel}");
            }
        }
    }

    #[test]
    fn sphere_eigenfrequency_tables() {
        let d = sphere_eigenfrequencies(false, 1.0, 10.0).unwrap();
        let expect_d = [
            PI,
            4.49340945790907,
            5.76345919689455,
            2.0 * PI,
            6.98793200050052,
            7.72525183693771,
            8.18256145257124,
            9.09501133047635,
            9.35581211104275,
            3.0 * PI,
        ];
        assert_eq!(d.values.len(), expect_d.len());
        for (a, b) in d.values.iter().zip(expect_d) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let n = sphere_eigenfrequencies(true, 1.0, 10.0).unwrap();
        for v in [
            4.49340945790907,
            7.72525183693771,
            2.08157597781810,
            5.94036999057271,
            9.20584014293667,
            3.34209365736570,
            7.28993230409335,
            4.51409964703228,
            8.58375495636577,
            5.64670362043680,
            9.84044604304014,
            6.75645633020413,
            7.85107767947440,
            8.93483887835284,
        ] {
            assert!(
                n.values.iter().any(|x| (x - v).abs() < 1e-10),
                "missing {v}"
            );
        }
        assert!(n.values.windows(2).all(|w| w[0] < w[1]));
        // radius scaling: values are dimensionless
        let d2 = sphere_eigenfrequencies(false, 2.0, 5.0).unwrap();
        assert_eq!(d2.values.len(), d.values.len());
    }

    #[test]
    fn cube_eigenfrequency_tables() {
        let d = cube_eigenfrequencies(false, 1.0, 10.0).unwrap();
        let expect = [PI * 3f64.sqrt(), PI * 6f64.sqrt(), 3.0 * PI];
        assert_eq!(d.values.len(), 3);
        for (a, b) in d.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let n = cube_eigenfrequencies(true, 1.0, 10.0).unwrap();
        let expect: Vec<f64> = [0, 1, 2, 3, 4, 5, 6, 8, 9, 10]
            .iter()
            .map(|&m| PI * (m as f64).sqrt())
            .collect();
        assert_eq!(n.values.len(), expect.len());
        for (a, b) in n.values.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // 7 is not a sum of three squares
        let sums: Vec<usize> = (1..=10)
            .flat_map(|a| (1..=10).flat_map(move |b| (1..=10).map(move |c| a * a + b * b + c * c)))
            .collect();
        assert!(!sums.contains(&7));
        assert!(!d.values.iter().any(|v| (v - PI * 7f64.sqrt()).abs() < 1e-9));
        assert!(cube_eigenfrequencies(false, 0.0, 1.0).is_err());
    }

    #[test]
    fn rigid_sphere_is_sound_hard() {
        let d = v3(0.4330127018922193, 0.75, -0.5);
        let s = RigidSphere::new(1.0, 1.0, Complex64::new(1.0, 0.0), d).unwrap();
        for i in 0..100 {
            let t = (i as f64 + 0.5) / 100.0;
            let th = (1.0 - 2.0 * t).acos();
            let ph = 2.399963229728653 * i as f64;
            let x = v3(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
            assert!(s.total_radial_derivative(&x).unwrap().norm() < 1e-10);
        }
        assert!(s.scattered(&v3(0.5, 0.0, 0.0)).is_err());
        // axisymmetric about d
        let a = v3(0.0, 0.0, 1.0).cross(&d).normalize();
        let b = d.cross(&a);
        let c = 0.3f64;
        let x1 = 1.5 * (c.cos() * d + c.sin() * a);
        let x2 = 1.5 * (c.cos() * d + c.sin() * b);
        assert!((s.scattered(&x1).unwrap() - s.scattered(&x2).unwrap()).norm() < 1e-13);
    }

    #[test]
    fn rigid_sphere_far_field_limit_and_scaling() {
        let d = v3(0.0, 0.0, 1.0);
        let s = RigidSphere::new(2.0, 1.0, Complex64::new(1.0, 0.0), d).unwrap();
        let dir = v3(0.6, 0.0, 0.8);
        let r = 1e5;
        let lim = r * (-I * s.k * r).exp() * s.scattered(&(r * dir)).unwrap();
        let p0 = s.far_field(&dir).unwrap();
        assert!((lim - p0).norm() < 1e-4 * p0.norm());
        // Rayleigh regime |p0| = O((kR0)^2)
        let f = |k: f64| {
            RigidSphere::new(k, 1.0, 1.0.into(), d)
                .unwrap()
                .far_field(&-d)
                .unwrap()
                .norm()
        };
        let ratio = f(0.02) / f(0.01);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn fields_solve_helmholtz() {
        let k = 2.0;
        let pts = [v3(1.9, 0.3, -0.4), v3(-2.5, 1.0, 0.7)];
        let mfs = MfsSolution::cube_layout(k, 2.0);
        let torus = SineProductField { k };
        let pw = PlaneWave {
            k,
            amplitude: Complex64::new(0.5, -1.0),
            direction: v3(0.0, 0.6, 0.8),
        };
        let rs = RigidSphere::new(k, 1.0, 1.0.into(), v3(1.0, 0.0, 0.0)).unwrap();
        for x in &pts {
            for (res, scale) in [
                helmholtz_residual(&mfs, k, x),
                helmholtz_residual(&torus, k, x),
                helmholtz_residual(&pw, k, x),
                helmholtz_residual(&rs, k, x),
            ] {
                assert!(res < 1e-4 * scale.max(1e-3), "{res} {scale}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let k = 1.3;
        let fields: Vec<Box<dyn ExactField>> = vec![
            Box::new(MfsSolution::cube_layout(k, 1.0)),
            Box::new(SineProductField { k }),
            Box::new(PlaneWave {
                k,
                amplitude: 1.0.into(),
                direction: v3(1.0, 0.0, 0.0),
            }),
        ];
        let x = v3(0.9, -0.7, 1.1);
        let h = 1e-6;
        for f in &fields {
            let g = f.gradient(&x);
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                let fd = (f.value(&(x + e)) - f.value(&(x - e))) / (2.0 * h);
                assert!((fd - g[i]).norm() < 1e-7 * (1.0 + g[i].norm()));
            }
        }
    }

    proptest! {
        #[test]
        fn wronskian_random(n in 0usize..20, x in 0.1f64..50.0) {
            let s = spherical_bessel(n, x).unwrap();
            let w = s.j * s.dy - s.dj * s.y;
            prop_assert!((w * x * x - 1.0).abs() < 1e-10);
        }
    }
}
