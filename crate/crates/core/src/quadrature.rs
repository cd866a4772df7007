//! Quadrature point generation.
//!
//! Elements that do not contain the source point are integrated with tensor
//! Gauss rules on a subdivision that adapts to the source distance (either the
//! fixed-count scheme or the quadtree scheme). The element that contains the
//! source is split into triangles fanned from the source, each mapped to the
//! unit square so that the Jacobian vanishes linearly at the source.

use std::io::Write;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nurbs::{ElementEval, SurfaceMesh};
use crate::vec3::Vec3;

/// Selects the rule for elements away from the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    OldAdaptive,
    NewAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    pub scheme: Scheme,
    pub s1: f64,
    pub n_eqp1: usize,
    pub n_eqp2: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::NewAdaptive,
            s1: 1.4,
            n_eqp1: 0,
            n_eqp2: 50,
        }
    }
}

/// Parametric point with a weight that carries every Jacobian factor except
/// the surface Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub xi: f64,
    pub eta: f64,
    pub weight: f64,
}

const NEW_SCHEME_MAX_DEPTH: usize = 30;
const SNAP_TOL: f64 = 1e-12;

/// `floor(x + 1/2)`.
#[inline]
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

// ============================================================================
// Gauss-Legendre
// ============================================================================

/// Legendre polynomial `P_n(z)` and its derivative.
fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, 0.0);
    for j in 0..n {
        let p2 = p1;
        p1 = p0;
        p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
    }
    (p0, n as f64 * (z * p0 - p1) / (z * z - 1.0))
}

fn compute_gauss(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

const CACHED_RULES: usize = 256;

fn cached_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static RULES: OnceLock<Vec<OnceLock<(Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (0..=CACHED_RULES).map(|_| OnceLock::new()).collect());
    rules[n].get_or_init(|| compute_gauss(n))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Quadrature(
            "Gauss rule needs at least one point".into(),
        ));
    }
    if n <= CACHED_RULES {
        Ok(cached_rule(n).clone())
    } else {
        Ok(compute_gauss(n))
    }
}

/// Borrowed rule for hot loops; `n` must be in `1..=256`.
pub(crate) fn gauss_ref(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    cached_rule(n.clamp(1, CACHED_RULES))
}

/// Tensor rule on a parameter rectangle.
pub fn tensor_points(
    xi: [f64; 2],
    eta: [f64; 2],
    n_xi: usize,
    n_eta: usize,
    out: &mut Vec<QuadPoint>,
) {
    let (gx, wx) = gauss_ref(n_xi);
    let (gy, wy) = gauss_ref(n_eta);
    let (sx, sy) = (0.5 * (xi[1] - xi[0]), 0.5 * (eta[1] - eta[0]));
    for (b, &v) in gy.iter().enumerate() {
        for (a, &u) in gx.iter().enumerate() {
            out.push(QuadPoint {
                xi: xi[0] + sx * (u + 1.0),
                eta: eta[0] + sy * (v + 1.0),
                weight: wx[a] * wy[b] * sx * sy,
            });
        }
    }
}

// ============================================================================
// Regular elements
// ============================================================================

/// Parameter rectangle carrying a tensor Gauss rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCell {
    pub xi: [f64; 2],
    pub eta: [f64; 2],
    pub n_xi: usize,
    pub n_eta: usize,
}

impl QuadCell {
    pub fn push_points(&self, out: &mut Vec<QuadPoint>) {
        tensor_points(self.xi, self.eta, self.n_xi, self.n_eta, out);
    }
}

fn cells_to_points(cells: &[QuadCell]) -> Vec<QuadPoint> {
    let mut out = Vec::with_capacity(cells.iter().map(|c| c.n_xi * c.n_eta).sum());
    for c in cells {
        c.push_points(&mut out);
    }
    out
}

fn regular_cells_old(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> Vec<QuadCell> {
    let el = &mesh.elements[e];
    let (p, q) = mesh.patches[el.patch].degrees();
    let l = (el.center_point - source).norm();
    let n = 1 + round_half_up(cfg.s1 * el.diag / l);
    let dx = (el.xi[1] - el.xi[0]) / n as f64;
    let dy = (el.eta[1] - el.eta[0]) / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for b in 0..n {
        for a in 0..n {
            out.push(QuadCell {
                xi: [el.xi[0] + a as f64 * dx, el.xi[0] + (a + 1) as f64 * dx],
                eta: [el.eta[0] + b as f64 * dy, el.eta[0] + (b + 1) as f64 * dy],
                n_xi: p + 1 + cfg.n_eqp1,
                n_eta: q + 1 + cfg.n_eqp1,
            });
        }
    }
    out
}

/// Fixed subdivision: `(1 + round(s1 h / l))` cells per direction.
pub fn regular_points_old(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> Vec<QuadPoint> {
    cells_to_points(&regular_cells_old(mesh, e, source, cfg))
}

struct QuadtreeCtx<'a> {
    mesh: &'a SurfaceMesh,
    e: usize,
    source: Vec3,
    cfg: &'a QuadConfig,
    p: usize,
    q: usize,
    buf: ElementEval,
    /// Accept leaves at the depth limit instead of failing.
    truncate: bool,
    /// Extra points per direction on every leaf.
    extra: usize,
    truncated: bool,
}

impl QuadtreeCtx<'_> {
    fn point(&mut self, xi: f64, eta: f64) -> Vec3 {
        self.mesh.eval_element(self.e, xi, eta, &mut self.buf);
        self.buf.point
    }

    fn recurse(
        &mut self,
        xi: [f64; 2],
        eta: [f64; 2],
        depth: usize,
        top: bool,
        out: &mut Vec<QuadCell>,
    ) -> Result<()> {
        let (h, c) = if top {
            let el = &self.mesh.elements[self.e];
            (el.diag, el.center_point)
        } else {
            let c00 = self.point(xi[0], eta[0]);
            let c11 = self.point(xi[1], eta[1]);
            let c10 = self.point(xi[1], eta[0]);
            let c01 = self.point(xi[0], eta[1]);
            let c = self.point(0.5 * (xi[0] + xi[1]), 0.5 * (eta[0] + eta[1]));
            ((c11 - c00).norm().max((c01 - c10).norm()), c)
        };
        let l = (c - self.source).norm();
        let r = self.cfg.s1 * h / l;
        if r >= 1.0 {
            if depth >= NEW_SCHEME_MAX_DEPTH && self.truncate {
                self.truncated = true;
                out.push(QuadCell {
                    xi,
                    eta,
                    n_xi: self.p + 1 + self.extra,
                    n_eta: self.q + 1 + self.extra,
                });
                return Ok(());
            }
            if depth >= NEW_SCHEME_MAX_DEPTH {
                return Err(Error::Quadrature(format!(
                    "quadtree depth {NEW_SCHEME_MAX_DEPTH} exceeded in element {}; source lies on the element",
                    self.e
                )));
            }
            let xm = 0.5 * (xi[0] + xi[1]);
            let ym = 0.5 * (eta[0] + eta[1]);
            for (cx, cy) in [
                ([xi[0], xm], [eta[0], ym]),
                ([xm, xi[1]], [eta[0], ym]),
                ([xi[0], xm], [ym, eta[1]]),
                ([xm, xi[1]], [ym, eta[1]]),
            ] {
                self.recurse(cx, cy, depth + 1, false, out)?;
            }
            return Ok(());
        }
        let n_xi = round_half_up((self.p + 1) as f64 * (r + 1.0)).max(1) + self.extra;
        let n_eta = round_half_up((self.q + 1) as f64 * (r + 1.0)).max(1) + self.extra;
        out.push(QuadCell {
            xi,
            eta,
            n_xi,
            n_eta,
        });
        Ok(())
    }
}

fn regular_cells_new(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> Result<Vec<QuadCell>> {
    let el = &mesh.elements[e];
    let (p, q) = mesh.patches[el.patch].degrees();
    let mut ctx = QuadtreeCtx {
        mesh,
        e,
        source: *source,
        cfg,
        p,
        q,
        buf: ElementEval::default(),
        truncate: false,
        extra: 0,
        truncated: false,
    };
    let mut out = Vec::new();
    ctx.recurse(el.xi, el.eta, 0, true, &mut out)?;
    Ok(out)
}

/// Quadtree rule for a point off the surface, with `2 + n_eqp1` extra points
/// per direction on each leaf. Leaves at the depth limit are kept; the flag
/// reports whether that happened.
pub fn regular_points_off_surface(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> (Vec<QuadPoint>, bool) {
    let el = &mesh.elements[e];
    let (p, q) = mesh.patches[el.patch].degrees();
    let mut ctx = QuadtreeCtx {
        mesh,
        e,
        source: *source,
        cfg,
        p,
        q,
        buf: ElementEval::default(),
        truncate: true,
        extra: 2 + cfg.n_eqp1,
        truncated: false,
    };
    let mut cells = Vec::new();
    ctx.recurse(el.xi, el.eta, 0, true, &mut cells)
        .expect("truncating quadtree does not fail");
    (cells_to_points(&cells), ctx.truncated)
}

/// Quadtree subdivision until `s1 h / l < 1` on every leaf.
pub fn regular_points_new(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> Result<Vec<QuadPoint>> {
    Ok(cells_to_points(&regular_cells_new(mesh, e, source, cfg)?))
}

/// Leaf cells of the regular rule for an element not containing the source.
pub fn regular_cells(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> Result<Vec<QuadCell>> {
    match cfg.scheme {
        Scheme::OldAdaptive => Ok(regular_cells_old(mesh, e, source, cfg)),
        Scheme::NewAdaptive => regular_cells_new(mesh, e, source, cfg),
    }
}

/// Regular rule for an element not containing the source, per the configured scheme.
pub fn regular_points(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Vec3,
    cfg: &QuadConfig,
) -> Result<Vec<QuadPoint>> {
    Ok(cells_to_points(&regular_cells(mesh, e, source, cfg)?))
}

// ============================================================================
// Source element
// ============================================================================

/// Radial parameter `s2` of the triangle subdivision.
pub fn s2(pmax: usize, n_eqp2: usize) -> f64 {
    (pmax + 1 + n_eqp2) as f64 / (2 * (pmax + 1)) as f64
}

/// Duffy-type rule for an element containing the source at `(xi_x, eta_x)`.
///
/// Returns the points and the number of triangles used.
pub fn singular_points_rect(
    xi: [f64; 2],
    eta: [f64; 2],
    source: (f64, f64),
    pmax: usize,
    cfg: &QuadConfig,
) -> Result<(Vec<QuadPoint>, usize)> {
    let (dx, dy) = (xi[1] - xi[0], eta[1] - eta[0]);
    let mut s = [
        2.0 * (source.0 - xi[0]) / dx - 1.0,
        2.0 * (source.1 - eta[0]) / dy - 1.0,
    ];
    for c in s.iter_mut() {
        if !(*c >= -1.0 - 1e-9 && *c <= 1.0 + 1e-9) {
            return Err(Error::Quadrature(format!(
                "source ({}, {}) outside the element",
                source.0, source.1
            )));
        }
        if (*c - 1.0).abs() < 2.0 * SNAP_TOL || *c > 1.0 {
            *c = 1.0;
        } else if (*c + 1.0).abs() < 2.0 * SNAP_TOL || *c < -1.0 {
            *c = -1.0;
        }
    }
    let verts = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let s2v = s2(pmax, cfg.n_eqp2);
    let n_r = (s2v - 1e-12).ceil().max(1.0) as usize;
    let ng = 2 * (pmax + 1);
    let (g, w) = gauss_ref(ng);
    let scale = 0.25 * dx * dy;
    let mut out = Vec::new();
    let mut n_tri = 0;
    for i in 0..4 {
        let v0 = verts[i];
        let v1 = verts[(i + 1) % 4];
        let a = [v0[0] - s[0], v0[1] - s[1]];
        let d = [v1[0] - v0[0], v1[1] - v0[1]];
        let area2 = a[0] * d[1] - a[1] * d[0];
        if area2 <= 1e-14 {
            continue;
        }
        n_tri += 1;
        let b = [v1[0] - s[0], v1[1] - s[1]];
        let cosang = (a[0] * b[0] + a[1] * b[1])
            / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt());
        let theta_dir = cosang.clamp(-1.0, 1.0).acos().to_degrees();
        let n_t = (s2v * theta_dir / 90.0 - 1e-12).ceil().max(1.0) as usize;
        let j3 = 1.0 / (4.0 * n_t as f64 * n_r as f64);
        for jr in 0..n_r {
            let (r0, r1) = (jr as f64 / n_r as f64, (jr + 1) as f64 / n_r as f64);
            for lt in 0..n_t {
                let (t0, t1) = (lt as f64 / n_t as f64, (lt + 1) as f64 / n_t as f64);
                for (ia, &ga) in g.iter().enumerate() {
                    let rho = r0 + 0.5 * (r1 - r0) * (ga + 1.0);
                    for (ib, &gb) in g.iter().enumerate() {
                        let th = t0 + 0.5 * (t1 - t0) * (gb + 1.0);
                        let u = s[0] + rho * (a[0] + d[0] * th);
                        let v = s[1] + rho * (a[1] + d[1] * th);
                        let j2 = rho * area2;
                        out.push(QuadPoint {
                            xi: xi[0] + 0.5 * dx * (u + 1.0),
                            eta: eta[0] + 0.5 * dy * (v + 1.0),
                            weight: w[ia] * w[ib] * j2 * j3 * scale,
                        });
                    }
                }
            }
        }
    }
    Ok((out, n_tri))
}

/// Duffy-type rule on mesh element `e` with the source at a parameter of it.
pub fn singular_points(
    mesh: &SurfaceMesh,
    e: usize,
    source: (f64, f64),
    cfg: &QuadConfig,
) -> Result<Vec<QuadPoint>> {
    let el = &mesh.elements[e];
    let (p, q) = mesh.patches[el.patch].degrees();
    Ok(singular_points_rect(el.xi, el.eta, source, p.max(q), cfg)?.0)
}

/// Integrates `f` times the surface Jacobian over the source element with the Duffy rule.
pub fn integrate_weakly_singular<F>(
    mesh: &SurfaceMesh,
    e: usize,
    source: (f64, f64),
    cfg: &QuadConfig,
    mut f: F,
) -> Result<Complex64>
where
    F: FnMut(&ElementEval) -> Complex64,
{
    let pts = singular_points(mesh, e, source, cfg)?;
    let mut buf = ElementEval::default();
    let mut acc = Complex64::new(0.0, 0.0);
    for qp in pts {
        mesh.eval_element(e, qp.xi, qp.eta, &mut buf);
        acc += f(&buf) * (qp.weight * buf.area_normal().norm());
    }
    Ok(acc)
}

// ============================================================================
// Source descriptor shared by assembly and field evaluation
// ============================================================================

/// A source point with the elements that contain it and its parameter in each.
#[derive(Debug, Clone)]
pub struct Source {
    pub point: Vec3,
    pub on_elements: Vec<(usize, f64, f64)>,
}

impl Source {
    pub fn off_surface(point: Vec3) -> Self {
        Self {
            point,
            on_elements: Vec::new(),
        }
    }

    /// Source on the surface given every parameter location that maps to it.
    /// Locations on a collapsed edge pull in all elements along that edge,
    /// parametrized at the nearest point of the edge.
    pub fn on_surface(mesh: &SurfaceMesh, locs: &[(usize, f64, f64)]) -> Result<Self> {
        let &(p0, xi0, eta0) = locs
            .first()
            .ok_or_else(|| Error::Domain("source needs at least one location".into()))?;
        let point = mesh.patches[p0].point(xi0, eta0)?;
        let mut on_elements: Vec<(usize, f64, f64)> = Vec::new();
        let mut push = |e: usize, xi: f64, eta: f64| {
            if !on_elements.iter().any(|(ee, _, _)| *ee == e) {
                on_elements.push((e, xi, eta));
            }
        };
        for &(pi, xi, eta) in locs {
            for e in mesh.elements_containing(pi, xi, eta) {
                push(e, xi, eta);
            }
            let pa = &mesh.patches[pi];
            let (x0, x1) = (pa.knots_xi.first(), pa.knots_xi.last());
            let (y0, y1) = (pa.knots_eta.first(), pa.knots_eta.last());
            let collapsed = mesh.collapsed_edges(pi);
            let on_edge = [xi == x0, xi == x1, eta == y0, eta == y1];
            for (edge, (&c, &on)) in collapsed.iter().zip(&on_edge).enumerate() {
                if !(c && on) {
                    continue;
                }
                for (e, el) in mesh
                    .elements
                    .iter()
                    .enumerate()
                    .filter(|(_, el)| el.patch == pi)
                {
                    let hit = match edge {
                        0 => el.xi[0] == x0,
                        1 => el.xi[1] == x1,
                        2 => el.eta[0] == y0,
                        _ => el.eta[1] == y1,
                    };
                    if hit {
                        let (cx, cy) = el.center();
                        let par = match edge {
                            0 => (x0, cy),
                            1 => (x1, cy),
                            2 => (cx, y0),
                            _ => (cx, y1),
                        };
                        push(e, par.0, par.1);
                    }
                }
            }
        }
        Ok(Self { point, on_elements })
    }

    pub fn singular_param(&self, e: usize) -> Option<(f64, f64)> {
        self.on_elements
            .iter()
            .find(|(ee, _, _)| *ee == e)
            .map(|&(_, a, b)| (a, b))
    }
}

/// Rule for element `e` given the source: Duffy on source elements, regular elsewhere.
///
/// The flag is true for the singular rule.
pub fn element_rule(
    mesh: &SurfaceMesh,
    e: usize,
    source: &Source,
    cfg: &QuadConfig,
) -> Result<(Vec<QuadPoint>, bool)> {
    match source.singular_param(e) {
        Some(par) => Ok((singular_points(mesh, e, par, cfg)?, true)),
        None => Ok((regular_points(mesh, e, &source.point, cfg)?, false)),
    }
}

/// Writes a quadrature dump with columns `element_id, xi, eta, weight`.
pub fn write_quadrature_csv<W: Write>(mut w: W, rows: &[(usize, QuadPoint)]) -> Result<()> {
    writeln!(w, "element_id,xi,eta,weight")?;
    for (e, q) in rows {
        writeln!(w, "{},{:.17e},{:.17e},{:.17e}", e, q.xi, q.eta, q.weight)?;
    }
    Ok(())
}
