//! Helmholtz free-space kernels, jump terms and the regularizing Ψ functions.
//!
//! Normals point into the exterior domain. `Φ_k(x, y) = e^{ikR} / (4πR)` with
//! `R = |x - y|`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nurbs::{ElementEval, SurfaceMesh};
use crate::quadrature::{element_rule, QuadConfig, Source};
use crate::vec3::{v3, Vec3};

pub const I: Complex64 = Complex64::new(0.0, 1.0);
pub const FOUR_PI: f64 = 4.0 * PI;

/// Speed of sound in water (m/s).
pub const SPEED_OF_SOUND: f64 = 1500.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wavenumber {
    pub k: f64,
}

impl Wavenumber {
    pub fn new(k: f64) -> Result<Self> {
        if k >= 0.0 && k.is_finite() {
            Ok(Self { k })
        } else {
            Err(Error::Domain(format!(
                "wavenumber must be finite and nonnegative, got {k}"
            )))
        }
    }

    pub fn from_frequency(f: f64) -> Result<Self> {
        Self::new(2.0 * PI * f / SPEED_OF_SOUND)
    }

    pub fn omega(&self) -> f64 {
        self.k * SPEED_OF_SOUND
    }

    pub fn frequency(&self) -> f64 {
        self.omega() / (2.0 * PI)
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.k
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Exterior,
    Interior,
}

impl Domain {
    /// +1 for the exterior problem, -1 for the interior problem (the upper/lower sign in `±`).
    pub fn sign(self) -> f64 {
        match self {
            Domain::Exterior => 1.0,
            Domain::Interior => -1.0,
        }
    }
}

/// Green's function and its normal derivatives at one pair of points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub phi: Complex64,
    pub dphi_dny: Complex64,
    pub dphi_dnx: Complex64,
    pub d2phi: Complex64,
    pub r: f64,
}

fn distance(x: &Vec3, y: &Vec3) -> Result<f64> {
    let r = (x - y).norm();
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::Singularity)
    }
}

pub fn greens(k: f64, x: &Vec3, y: &Vec3) -> Result<Complex64> {
    let r = distance(x, y)?;
    Ok((I * k * r).exp() / (FOUR_PI * r))
}

pub fn greens_derivs(k: f64, x: &Vec3, y: &Vec3, n_x: &Vec3, n_y: &Vec3) -> Result<KernelEval> {
    let r = distance(x, y)?;
    let d = x - y;
    let drdnx = d.dot(n_x) / r;
    let drdny = -d.dot(n_y) / r;
    let phi = (I * k * r).exp() / (FOUR_PI * r);
    let ikr1 = I * k * r - 1.0;
    let dphi_dny = phi / r * ikr1 * drdny;
    let dphi_dnx = phi / r * ikr1 * drdnx;
    let d2phi =
        -phi / (r * r) * (n_x.dot(n_y) * ikr1 + (k * k * r * r + 3.0 * ikr1) * drdnx * drdny);
    Ok(KernelEval {
        phi,
        dphi_dny,
        dphi_dnx,
        d2phi,
        r,
    })
}

/// `f(z) = e^{iz}(iz - 1) + 1`, accurate for small `z`.
pub fn exp_factor(z: f64) -> Complex64 {
    if z.abs() < 0.5 {
        // Σ_{n≥2} (n-1)/n! (iz)^n
        let iz = I * z;
        let mut term = iz; // (iz)^n / n!
        let mut sum = Complex64::new(0.0, 0.0);
        for n in 2..40 {
            term *= iz / n as f64;
            let add = term * (n - 1) as f64;
            sum += add;
            if add.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum
    } else {
        (I * z).exp() * (I * z - 1.0) + 1.0
    }
}

/// Kernels with the static (k = 0) part subtracted, evaluated without cancellation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelDiff {
    /// `Φ_k - Φ_0`
    pub phi: Complex64,
    /// `∂Φ_k/∂n(y) - ∂Φ_0/∂n(y)`
    pub dphi_dny: Complex64,
    /// `∂²Φ_k/∂n(y)∂n(x) - ∂²Φ_0/∂n(y)∂n(x)`
    pub d2phi: Complex64,
}

pub fn greens_diff(k: f64, x: &Vec3, y: &Vec3, n_x: &Vec3, n_y: &Vec3) -> Result<KernelDiff> {
    let r = distance(x, y)?;
    let d = x - y;
    let drdnx = d.dot(n_x) / r;
    let drdny = -d.dot(n_y) / r;
    let kr = k * r;
    let f = exp_factor(kr);
    let e = (I * kr).exp();
    let em1 = expm1_i(kr);
    let r3 = FOUR_PI * r * r * r;
    Ok(KernelDiff {
        phi: em1 / (FOUR_PI * r),
        dphi_dny: f / (FOUR_PI * r * r) * drdny,
        d2phi: -(n_x.dot(n_y) * f + (kr * kr * e + 3.0 * f) * drdnx * drdny) / r3,
    })
}

/// `e^{iz} - 1` without cancellation.
fn expm1_i(z: f64) -> Complex64 {
    let h = 0.5 * z;
    // e^{iz} - 1 = 2i sin(z/2) e^{iz/2}
    2.0 * I * h.sin() * (I * h).exp()
}

/// Static double-layer integral `∫_Γ ∂Φ_0/∂n(y) dΓ(y)` at a source on (or off) the surface.
pub fn solid_angle_integral(mesh: &SurfaceMesh, source: &Source, cfg: &QuadConfig) -> Result<f64> {
    if !mesh.is_closed() {
        return Err(Error::Domain(
            "solid angle integral needs a closed surface".into(),
        ));
    }
    let x = source.point;
    let mut buf = ElementEval::default();
    let mut total = 0.0;
    for e in 0..mesh.elements.len() {
        let (pts, _) = element_rule(mesh, e, source, cfg)?;
        for q in &pts {
            mesh.eval_element(e, q.xi, q.eta, &mut buf);
            let an = buf.area_normal();
            let d = x - buf.point;
            let r = d.norm();
            if r == 0.0 {
                continue;
            }
            // ∂Φ_0/∂n(y) dΓ = (x - y)·n / (4πR³) |J| with n|J| = area normal
            total += q.weight * d.dot(&an) / (FOUR_PI * r * r * r);
        }
    }
    Ok(total)
}

/// `C^±(x) = -½(1 ± 1) - I₀` for `x` on the surface.
pub fn jump_term(domain: Domain, solid_angle: f64) -> f64 {
    -0.5 * (1.0 + domain.sign()) - solid_angle
}

/// Values and normal derivatives (with respect to `n(y)`) of the pair Ψ₁, Ψ₂.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsiEval {
    pub psi1: Complex64,
    pub psi2: Complex64,
    pub dpsi1: Complex64,
    pub dpsi2: Complex64,
}

/// Choice of regularizing functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PsiFamily {
    /// Standing-wave functions about `x1 = x - c·n(x)`.
    One { c: f64 },
    /// Fundamental solutions about `x1 = x - c1·n(x)` and `x2 = x - c2·n(x)`.
    Two { c1: f64, c2: f64 },
    /// Plane waves with `d1` chosen from the angles `theta1`, `theta2`.
    Three { theta1: f64, theta2: f64 },
}

impl PsiFamily {
    pub fn default_one() -> Self {
        PsiFamily::One { c: 1.0 }
    }
    pub fn default_two() -> Self {
        PsiFamily::Two { c1: 0.5, c2: 1.0 }
    }
    pub fn default_three() -> Self {
        PsiFamily::Three {
            theta1: -0.5 * PI,
            theta2: -PI,
        }
    }
}

/// Ψ pair bound to one source point `x` with normal `n_x`.
#[derive(Clone, Copy, Debug)]
pub enum PsiSource {
    One {
        k: f64,
        x1: Vec3,
        c1: f64,
        c2: f64,
    },
    Two {
        k: f64,
        x1: Vec3,
        x2: Vec3,
        r1: f64,
        r2: f64,
        c1: Complex64,
        c2: Complex64,
    },
    Three {
        k: f64,
        x: Vec3,
        d1: Vec3,
        d2: Vec3,
    },
}

/// Plane-wave direction `d1` with `|d1| = 1` and `d1·n = -1/2`.
pub fn plane_wave_direction(n: &Vec3, theta1: f64, theta2: f64) -> Vec3 {
    let s3 = 3f64.sqrt();
    let (n1, n2, n3) = (n.x, n.y, n.z);
    let t = if n1.abs() < std::f64::consts::FRAC_1_SQRT_2 {
        let (s, c) = theta1.sin_cos();
        v3(
            (1.0 - n1 * n1) * c,
            -n1 * n2 * c + n3 * s,
            -n1 * n3 * c - n2 * s,
        ) / (1.0 - n1 * n1).sqrt()
    } else {
        let (s, c) = theta2.sin_cos();
        v3(
            -n1 * n2 * s - n3 * c,
            (1.0 - n2 * n2) * s,
            -n2 * n3 * s + n1 * c,
        ) / (1.0 - n2 * n2).sqrt()
    };
    0.5 * s3 * t - 0.5 * n
}

fn family_two(k: f64, x: &Vec3, n_x: &Vec3, x1: Vec3, x2: Vec3) -> Result<PsiSource> {
    let r1 = (x1 - x).norm();
    let r2 = (x2 - x).norm();
    if r1 == 0.0 || r2 == 0.0 {
        return Err(Error::Config(
            "psi family 2: offset points coincide with x".into(),
        ));
    }
    // normal derivative at x of Φ_k(x_i, ·)/Φ_k(x_i, x)
    let a1 = (I * k * r1 - 1.0) * (x - x1).dot(n_x) / (r1 * r1);
    let a2 = (I * k * r2 - 1.0) * (x - x2).dot(n_x) / (r2 * r2);
    if a2.norm() == 0.0 {
        return Err(Error::Config("psi family 2: C1 undefined".into()));
    }
    let c1 = 1.0 - a1 / a2;
    let c2 = a1 - a2;
    if c1.norm() == 0.0 || c2.norm() == 0.0 {
        return Err(Error::Config("psi family 2: C1 or C2 vanishes".into()));
    }
    Ok(PsiSource::Two {
        k,
        x1,
        x2,
        r1,
        r2,
        c1,
        c2,
    })
}

impl PsiSource {
    pub fn new(family: PsiFamily, k: f64, x: &Vec3, n_x: &Vec3) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Config("regularizing functions need k > 0".into()));
        }
        match family {
            PsiFamily::One { c } => {
                let x1 = x - c * n_x;
                let c1 = (x - x1).norm();
                let c2 = (x - x1).dot(n_x);
                if c2 == 0.0 || c1 == 0.0 {
                    return Err(Error::Config("psi family 1: C2 = 0".into()));
                }
                Ok(PsiSource::One { k, x1, c1, c2 })
            }
            PsiFamily::Two { c1: o1, c2: o2 } => family_two(k, x, n_x, x - o1 * n_x, x - o2 * n_x),
            PsiFamily::Three { theta1, theta2 } => {
                let d1 = plane_wave_direction(n_x, theta1, theta2);
                Ok(PsiSource::Three {
                    k,
                    x: *x,
                    d1,
                    d2: d1 + n_x,
                })
            }
        }
    }

    pub fn eval(&self, y: &Vec3, n_y: &Vec3) -> PsiEval {
        match *self {
            PsiSource::One { k, x1, c1, c2 } => {
                let d = y - x1;
                let r = d.norm();
                let drdn = d.dot(n_y) / r;
                let s = k * (r - c1);
                let (sn, cs) = s.sin_cos();
                let psi1 = c1 * cs / r + sn / (k * r);
                let psi2 = c1 * c1 * sn / (c2 * k * r);
                let dpsi1 = -c1 * cs / (r * r) - c1 * k * sn / r + cs / r - sn / (k * r * r);
                let dpsi2 = c1 * c1 / (c2 * k) * (k * cs / r - sn / (r * r));
                PsiEval {
                    psi1: psi1.into(),
                    psi2: psi2.into(),
                    dpsi1: (dpsi1 * drdn).into(),
                    dpsi2: (dpsi2 * drdn).into(),
                }
            }
            PsiSource::Two {
                k,
                x1,
                x2,
                r1,
                r2,
                c1,
                c2,
            } => {
                let g = |xi: Vec3, ri: f64| {
                    let d = y - xi;
                    let r = d.norm();
                    let v = ri / r * (I * k * (r - ri)).exp();
                    let dv = v * (I * k * r - 1.0) / r * d.dot(n_y) / r;
                    (v, dv)
                };
                let (g1, dg1) = g(x1, r1);
                let (g2, dg2) = g(x2, r2);
                let inv = 1.0 / c1;
                PsiEval {
                    psi1: inv * g1 + (1.0 - inv) * g2,
                    psi2: (g1 - g2) / c2,
                    dpsi1: inv * dg1 + (1.0 - inv) * dg2,
                    dpsi2: (dg1 - dg2) / c2,
                }
            }
            PsiSource::Three { k, x, d1, d2 } => {
                let dy = y - x;
                let e1 = (I * k * d1.dot(&dy)).exp();
                let e2 = (I * k * d2.dot(&dy)).exp();
                let (a1, a2) = (d1.dot(n_y), d2.dot(n_y));
                PsiEval {
                    psi1: 0.5 * (e1 + e2),
                    psi2: I / k * (e1 - e2),
                    dpsi1: 0.5 * I * k * (a1 * e1 + a2 * e2),
                    dpsi2: -(a1 * e1 - a2 * e2),
                }
            }
        }
    }

    /// `C1` of the standing-wave family.
    pub fn c1(&self) -> Option<f64> {
        match *self {
            PsiSource::One { c1, .. } => Some(c1),
            _ => None,
        }
    }

    /// `C2` of the standing-wave family.
    pub fn c2(&self) -> Option<f64> {
        match *self {
            PsiSource::One { c2, .. } => Some(c2),
            _ => None,
        }
    }
}

pub fn psi_family_1(
    k: f64,
    x: &Vec3,
    n_x: &Vec3,
    x1: &Vec3,
    y: &Vec3,
    n_y: &Vec3,
) -> Result<PsiEval> {
    let c1 = (x - x1).norm();
    let c2 = (x - x1).dot(n_x);
    if c2 == 0.0 || !(k > 0.0) {
        return Err(Error::Config("psi family 1 needs C2 != 0 and k > 0".into()));
    }
    Ok(PsiSource::One { k, x1: *x1, c1, c2 }.eval(y, n_y))
}

pub fn psi_family_2(
    k: f64,
    x: &Vec3,
    n_x: &Vec3,
    x1: &Vec3,
    x2: &Vec3,
    y: &Vec3,
    n_y: &Vec3,
) -> Result<PsiEval> {
    if !(k > 0.0) {
        return Err(Error::Config("regularizing functions need k > 0".into()));
    }
    Ok(family_two(k, x, n_x, *x1, *x2)?.eval(y, n_y))
}

pub fn psi_family_3(
    k: f64,
    x: &Vec3,
    n_x: &Vec3,
    y: &Vec3,
    n_y: &Vec3,
    theta1: f64,
    theta2: f64,
) -> Result<PsiEval> {
    Ok(PsiSource::new(PsiFamily::Three { theta1, theta2 }, k, x, n_x)?.eval(y, n_y))
}
