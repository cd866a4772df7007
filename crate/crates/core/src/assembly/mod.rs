//! Collocation and Galerkin systems for the CBIE, HBIE, Burton-Miller and
//! regularized CBIE formulations.
//!
//! Every formulation is evaluated per source point as one row over the
//! global DOFs. The static (k = 0) double-layer and hypersingular parts are
//! real and shared between all jobs that use the same source points, so a
//! batch of wavenumbers and formulations is assembled in a single pass over
//! the quadrature points.

mod solve;

pub use solve::{best_approximation, solve, Solution};

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::ExactField;
use crate::error::{Error, Result};
use crate::kernels::{exp_factor, Domain, PsiFamily, PsiSource, FOUR_PI, I};
use crate::nurbs::{eval_frame, ElementEval, SurfaceFrame, SurfaceMesh};
use crate::quadrature::{
    gauss_legendre, regular_cells, singular_points, QuadConfig, QuadPoint, Source,
};
use crate::vec3::{v3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BieKind {
    Cbie,
    Hbie,
    Bm,
    Rcbie1,
    Rcbie2,
    Rcbie3,
}

impl BieKind {
    pub const ALL: [BieKind; 6] = [
        BieKind::Cbie,
        BieKind::Hbie,
        BieKind::Bm,
        BieKind::Rcbie1,
        BieKind::Rcbie2,
        BieKind::Rcbie3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BieKind::Cbie => "CBIE",
            BieKind::Hbie => "HBIE",
            BieKind::Bm => "BM",
            BieKind::Rcbie1 => "RCBIE1",
            BieKind::Rcbie2 => "RCBIE2",
            BieKind::Rcbie3 => "RCBIE3",
        }
    }

    /// Formulations that evaluate the normal at the source point.
    pub fn needs_normal(self) -> bool {
        self != BieKind::Cbie
    }

    pub fn default_psi(self) -> Option<PsiFamily> {
        match self {
            BieKind::Rcbie1 => Some(PsiFamily::default_one()),
            BieKind::Rcbie2 => Some(PsiFamily::default_two()),
            BieKind::Rcbie3 => Some(PsiFamily::default_three()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Discretization {
    Collocation,
    Galerkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BieFormulation {
    pub kind: BieKind,
    pub discretization: Discretization,
    /// Burton-Miller coupling; `i/k` when absent.
    #[serde(default)]
    pub coupling_alpha: Option<Complex64>,
    #[serde(default)]
    pub domain: Domain,
    /// Overrides the regularizing family of the RCBIE kinds.
    #[serde(default)]
    pub psi: Option<PsiFamily>,
    /// Plain CBIE: the static double layer is summed separately and enters as
    /// an explicit jump term instead of being subtracted pointwise.
    #[serde(default)]
    pub plain_cbie: bool,
}

impl BieFormulation {
    pub fn new(kind: BieKind, discretization: Discretization) -> Self {
        Self {
            kind,
            discretization,
            coupling_alpha: None,
            domain: Domain::Exterior,
            psi: None,
            plain_cbie: false,
        }
    }

    pub fn collocation(kind: BieKind) -> Self {
        Self::new(kind, Discretization::Collocation)
    }

    pub fn galerkin(kind: BieKind) -> Self {
        Self::new(kind, Discretization::Galerkin)
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn alpha(&self, k: f64) -> Result<Complex64> {
        match self.coupling_alpha {
            Some(a) => Ok(a),
            None if k > 0.0 => Ok(I / k),
            None => Err(Error::Config(
                "Burton-Miller default coupling i/k needs k > 0".into(),
            )),
        }
    }

    pub fn psi_family(&self) -> Option<PsiFamily> {
        self.kind.default_psi().map(|d| self.psi.unwrap_or(d))
    }

    pub fn needs_normal(&self) -> bool {
        self.kind.needs_normal()
    }
}

impl fmt::Display for BieFormulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.discretization {
            Discretization::Collocation => "C",
            Discretization::Galerkin => "G",
        };
        write!(f, "{d}{}", self.kind.name())
    }
}

/// Parses labels such as `CCBIE`, `GBM` or `CRCBIE3`.
impl FromStr for BieFormulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let u = s.trim().to_ascii_uppercase();
        let disc = match u.chars().next() {
            Some('C') => Discretization::Collocation,
            Some('G') => Discretization::Galerkin,
            _ => return Err(Error::Config(format!("unknown formulation '{s}'"))),
        };
        let kind = BieKind::ALL
            .into_iter()
            .find(|k| k.name() == &u[1..])
            .ok_or_else(|| Error::Config(format!("unknown formulation '{s}'")))?;
        Ok(Self::new(kind, disc))
    }
}

#[derive(Clone)]
pub enum BoundaryCondition {
    /// Sound-hard scatterer hit by `P e^{ik d·x}`, one RHS column per direction.
    /// The unknown is the total field.
    RigidPlaneWave {
        amplitude: Complex64,
        directions: Vec<Vec3>,
    },
    /// Neumann data taken from an exact field; the unknown is that field's trace.
    NeumannFromField(Arc<dyn ExactField>),
}

impl BoundaryCondition {
    pub fn plane_wave(amplitude: Complex64, direction: Vec3) -> Self {
        Self::RigidPlaneWave {
            amplitude,
            directions: vec![direction],
        }
    }

    pub fn field<F: ExactField + 'static>(f: F) -> Self {
        Self::NeumannFromField(Arc::new(f))
    }

    pub fn n_columns(&self) -> usize {
        match self {
            Self::RigidPlaneWave { directions, .. } => directions.len(),
            Self::NeumannFromField(_) => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::RigidPlaneWave { directions, .. } = self {
            if directions.is_empty() {
                return Err(Error::Config(
                    "plane-wave condition needs at least one direction".into(),
                ));
            }
            if directions.iter().any(|d| (d.norm() - 1.0).abs() > 1e-12) {
                return Err(Error::Config(
                    "incident directions must be unit vectors".into(),
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RigidPlaneWave {
                amplitude,
                directions,
            } => f
                .debug_struct("RigidPlaneWave")
                .field("amplitude", amplitude)
                .field("directions", directions)
                .finish(),
            Self::NeumannFromField(_) => f.write_str("NeumannFromField(..)"),
        }
    }
}

/// `d_s = -[cos β cos α, cos β sin α, sin β]` from angles in degrees.
pub fn incident_direction(alpha_deg: f64, beta_deg: f64) -> Vec3 {
    let (sa, ca) = alpha_deg.to_radians().sin_cos();
    let (sb, cb) = beta_deg.to_radians().sin_cos();
    -v3(cb * ca, cb * sa, sb)
}

/// `g = -∂p_inc/∂n = -ik (d·n) P e^{ik d·x}` at a surface frame.
pub fn neumann_rigid(k: f64, amplitude: Complex64, d: &Vec3, frame: &SurfaceFrame) -> Complex64 {
    -I * k * d.dot(&frame.normal) * amplitude * (I * k * d.dot(&frame.point)).exp()
}

/// Assembled system; `rhs` has one column per right-hand side.
#[derive(Debug, Clone)]
pub struct BemSystem {
    pub k: f64,
    pub formulation: BieFormulation,
    pub matrix: DMatrix<Complex64>,
    pub rhs: DMatrix<Complex64>,
    /// Quadrature points spent in elements that do not contain the source.
    pub n_qp1: usize,
}

impl BemSystem {
    pub fn n_dofs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.matrix
            .iter()
            .chain(self.rhs.iter())
            .all(|z| z.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct AssemblyJob {
    pub k: f64,
    pub formulation: BieFormulation,
    pub bc: BoundaryCondition,
}

// ============================================================================
// Collocation points
// ============================================================================

/// Source point of one collocation row.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationPoint {
    pub dof: usize,
    /// Every parameter location of the point (one per owner unless perturbed).
    pub locs: Vec<(usize, f64, f64)>,
    pub perturbed: bool,
}

/// Greville points of every global DOF. When `needs_normal` is set, points
/// with a degenerate frame or on an edge where owners' normals disagree move
/// `½Δ/p` into an adjacent element along the affected directions.
pub fn collocation_points(mesh: &SurfaceMesh, needs_normal: bool) -> Result<Vec<CollocationPoint>> {
    (0..mesh.n_dofs)
        .map(|g| {
            let locs: Vec<(usize, f64, f64)> = mesh.owners[g]
                .iter()
                .map(|&o| {
                    let (xi, eta) = mesh.greville_param(o);
                    (o.patch, xi, eta)
                })
                .collect();
            if !needs_normal {
                return Ok(CollocationPoint {
                    dof: g,
                    locs,
                    perturbed: false,
                });
            }
            let frames = locs
                .iter()
                .map(|&(p, a, b)| eval_frame(mesh, p, a, b))
                .collect::<Result<Vec<_>>>()?;
            let degenerate = frames.iter().any(|f| f.degenerate);
            let kink = frames
                .windows(2)
                .any(|w| (w[0].normal - w[1].normal).norm() > 1e-8);
            if !degenerate && !kink {
                return Ok(CollocationPoint {
                    dof: g,
                    locs,
                    perturbed: false,
                });
            }
            let mut best: Option<((usize, f64, f64), f64)> = None;
            for (&loc, frame) in locs.iter().zip(&frames) {
                let Some(moved) = perturb(mesh, loc, frame, kink)? else {
                    continue;
                };
                if eval_frame(mesh, moved.0, moved.1, moved.2)?.degenerate {
                    continue;
                }
                let score = interior_margin(mesh, moved);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((moved, score));
                }
            }
            let (loc, _) = best.ok_or_else(|| {
                Error::Domain(format!("collocation point of dof {g} stays degenerate"))
            })?;
            Ok(CollocationPoint {
                dof: g,
                locs: vec![loc],
                perturbed: true,
            })
        })
        .collect()
}

/// Shifts a location by half an element width over the degree along the
/// collapsed direction (degenerate frames) or off the patch boundary (kinks).
fn perturb(
    mesh: &SurfaceMesh,
    (p, xi, eta): (usize, f64, f64),
    frame: &SurfaceFrame,
    kink: bool,
) -> Result<Option<(usize, f64, f64)>> {
    let e = mesh.locate(p, xi, eta)?;
    let el = &mesh.elements[e];
    let pa = &mesh.patches[p];
    let (px, py) = pa.degrees();
    let (mut sx, mut sy) = (false, false);
    if frame.degenerate {
        let scale = frame.h_xi.max(frame.h_eta);
        let tiny = 1e-10 * scale.max(1e-300);
        sy = frame.h_xi <= tiny;
        sx = frame.h_eta <= tiny;
        if !sx && !sy {
            sx = true;
            sy = true;
        }
    }
    if kink {
        sx |= xi == pa.knots_xi.first() || xi == pa.knots_xi.last();
        sy |= eta == pa.knots_eta.first() || eta == pa.knots_eta.last();
    }
    if !sx && !sy {
        return Ok(None);
    }
    let shift = |u: f64, lim: [f64; 2], deg: usize| {
        let d = 0.5 * (lim[1] - lim[0]) / deg.max(1) as f64;
        if (u - lim[0]).abs() <= (lim[1] - u).abs() {
            u + d
        } else {
            u - d
        }
    };
    let nxi = if sx { shift(xi, el.xi, px) } else { xi };
    let neta = if sy { shift(eta, el.eta, py) } else { eta };
    Ok(Some((p, nxi, neta)))
}

/// Smallest normalised distance to the patch boundary.
fn interior_margin(mesh: &SurfaceMesh, (p, xi, eta): (usize, f64, f64)) -> f64 {
    let pa = &mesh.patches[p];
    let (a0, a1) = (pa.knots_xi.first(), pa.knots_xi.last());
    let (b0, b1) = (pa.knots_eta.first(), pa.knots_eta.last());
    let mx = ((xi - a0).min(a1 - xi)) / (a1 - a0);
    let my = ((eta - b0).min(b1 - eta)) / (b1 - b0);
    mx.min(my)
}

// ============================================================================
// Per-source row evaluation
// ============================================================================

/// Job data resolved once per assembly.
struct JobCtx<'a> {
    k: f64,
    kind: BieKind,
    sign: f64,
    /// Weight of the CBIE-type part (CBIE, BM, RCBIE).
    cb: f64,
    /// Weight of the HBIE part.
    hb: Complex64,
    psi: Option<PsiFamily>,
    rigid: Option<(Complex64, &'a [Vec3])>,
    field: Option<&'a dyn ExactField>,
    ncols: usize,
    plain: bool,
}

impl<'a> JobCtx<'a> {
    fn new(job: &'a AssemblyJob) -> Result<Self> {
        let f = &job.formulation;
        job.bc.validate()?;
        if !(job.k >= 0.0) || !job.k.is_finite() {
            return Err(Error::Config(format!("invalid wavenumber {}", job.k)));
        }
        let (cb, hb) = match f.kind {
            BieKind::Cbie => (1.0, Complex64::new(0.0, 0.0)),
            BieKind::Hbie => (0.0, Complex64::new(1.0, 0.0)),
            BieKind::Bm => (1.0, f.alpha(job.k)?),
            _ => (1.0, Complex64::new(0.0, 0.0)),
        };
        if f.psi_family().is_some() && !(job.k > 0.0) {
            return Err(Error::Config("regularized CBIE needs k > 0".into()));
        }
        let (rigid, field) = match &job.bc {
            BoundaryCondition::RigidPlaneWave {
                amplitude,
                directions,
            } => {
                if f.domain != Domain::Exterior {
                    return Err(Error::Config(
                        "rigid scattering is an exterior problem".into(),
                    ));
                }
                (Some((*amplitude, directions.as_slice())), None)
            }
            BoundaryCondition::NeumannFromField(fld) => (None, Some(fld.as_ref())),
        };
        Ok(Self {
            k: job.k,
            kind: f.kind,
            sign: f.domain.sign(),
            cb,
            hb,
            psi: f.psi_family(),
            rigid,
            field,
            ncols: job.bc.n_columns(),
            plain: f.plain_cbie,
        })
    }

    fn uses_hb(&self) -> bool {
        self.hb != Complex64::new(0.0, 0.0)
    }
}

/// A source point with the trial-function data at `x` taken from one element.
struct SourceData {
    src: Source,
    normal: Option<Vec3>,
    /// Unique global dofs with `R_j(x)` and `∇_s R_j(x)`.
    x_dofs: Vec<(usize, f64, Vec3)>,
}

impl SourceData {
    fn new(
        mesh: &SurfaceMesh,
        src: Source,
        e: usize,
        xi: f64,
        eta: f64,
        need_normal: bool,
    ) -> Result<Self> {
        let mut buf = ElementEval::default();
        mesh.eval_element(e, xi, eta, &mut buf);
        let frame = buf.frame();
        let normal = if frame.degenerate {
            None
        } else {
            Some(frame.normal)
        };
        if need_normal && normal.is_none() {
            return Err(Error::Domain(
                "source point has no normal (degenerate parametrization)".into(),
            ));
        }
        let mut x_dofs: Vec<(usize, f64, Vec3)> = Vec::new();
        for (l, &g) in mesh.elements[e].dofs.iter().enumerate() {
            let grad = if normal.is_some() {
                frame.surface_gradient(buf.basis.dr_dxi[l], buf.basis.dr_deta[l])
            } else {
                Vec3::zeros()
            };
            match x_dofs.iter_mut().find(|(j, _, _)| *j == g) {
                Some(t) => {
                    t.1 += buf.basis.r[l];
                    t.2 += grad;
                }
                None => x_dofs.push((g, buf.basis.r[l], grad)),
            }
        }
        Ok(Self {
            src,
            normal,
            x_dofs,
        })
    }
}

/// Row and right-hand sides of one job at one source.
struct JobRow {
    row: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

/// Running per-job sums at one source.
struct JobAcc {
    row: Vec<Complex64>,
    rhs_cb: Complex64,
    rhs_hb: Complex64,
    t1: Complex64,
    t2: Complex64,
    psi: Option<PsiSource>,
}

/// Neumann data for every job from `eval`; jobs sharing a field with the
/// previous job share its values.
fn field_values(
    jobs: &[JobCtx],
    mut eval: impl FnMut(&dyn ExactField) -> Rc<Vec<Complex64>>,
) -> Vec<Option<Rc<Vec<Complex64>>>> {
    let mut out: Vec<Option<Rc<Vec<Complex64>>>> = Vec::with_capacity(jobs.len());
    for (ji, jc) in jobs.iter().enumerate() {
        let v = jc.field.map(|fld| {
            let same = ji > 0
                && jobs[ji - 1]
                    .field
                    .is_some_and(|p| std::ptr::addr_eq(p, fld));
            match (same, out.last()) {
                (true, Some(Some(prev))) => prev.clone(),
                _ => eval(fld),
            }
        });
        out.push(v);
    }
    out
}

/// Evaluates every job's row at one source point. Returns the rows and the
/// number of quadrature points in non-singular elements.
fn source_rows(
    mesh: &SurfaceMesh,
    cfg: &QuadConfig,
    jobs: &[JobCtx],
    sd: &SourceData,
) -> Result<(Vec<JobRow>, usize)> {
    let n = mesh.n_dofs;
    let x = sd.src.point;
    let need_cb = jobs.iter().any(|j| j.cb != 0.0);
    let need_hb = jobs.iter().any(|j| j.uses_hb());
    let nx = sd.normal.unwrap_or_else(Vec3::zeros);
    let plain = jobs.iter().any(|j| j.plain);

    let mut rx = vec![0.0; n];
    let mut gx = vec![Vec3::zeros(); n];
    for &(j, r, g) in &sd.x_dofs {
        rx[j] = r;
        gx[j] = g;
    }

    let mut accs: Vec<JobAcc> = jobs
        .iter()
        .map(|jc| {
            let psi = match jc.psi {
                Some(fam) => Some(PsiSource::new(fam, jc.k, &x, &nx)?),
                None => None,
            };
            Ok(JobAcc {
                row: vec![Complex64::new(0.0, 0.0); n],
                rhs_cb: Complex64::new(0.0, 0.0),
                rhs_hb: Complex64::new(0.0, 0.0),
                t1: Complex64::new(0.0, 0.0),
                t2: Complex64::new(0.0, 0.0),
                psi,
            })
        })
        .collect::<Result<_>>()?;

    // static parts
    let mut cb_row = vec![0.0; if need_cb { n } else { 0 }];
    let mut hb_row = vec![0.0; if need_hb { n } else { 0 }];
    let mut s_dl0_reg = 0.0;
    let mut s20_reg = 0.0;
    let mut v1_reg = Vec3::zeros();
    let mut v1_all = Vec3::zeros();
    let mut v3 = Vec3::zeros();

    let mut n_qp1 = 0;
    let mut uniq: Vec<usize> = Vec::new();
    let mut lmap: Vec<usize> = Vec::new();
    let mut ry: Vec<f64> = Vec::new();
    let mut in_elem = vec![false; n];

    let mut parts: Vec<(Rc<PointSet>, Vec<Option<Rc<Vec<Complex64>>>>)> = Vec::new();
    for e in 0..mesh.elements.len() {
        parts.clear();
        let singular = match sd.src.singular_param(e) {
            Some(par) => {
                let set = Rc::new(PointSet::new(mesh, e, &singular_points(mesh, e, par, cfg)?));
                let g = field_values(jobs, |fld| Rc::new(set.field_values(fld)));
                parts.push((set, g));
                true
            }
            None => {
                for cell in regular_cells(mesh, e, &x, cfg)? {
                    let set = point_cache::cell(mesh, e, &cell);
                    n_qp1 += set.n_raw;
                    let g = field_values(jobs, |fld| point_cache::field(fld, e, &cell, &set));
                    parts.push((set, g));
                }
                false
            }
        };
        let dofs = &mesh.elements[e].dofs;
        let combine = singular && !plain;
        if combine {
            uniq.clear();
            lmap.clear();
            for &g in dofs {
                let u = match uniq.iter().position(|&j| j == g) {
                    Some(u) => u,
                    None => {
                        uniq.push(g);
                        uniq.len() - 1
                    }
                };
                lmap.push(u);
            }
            ry.resize(uniq.len(), 0.0);
            for &g in &uniq {
                in_elem[g] = true;
            }
        }
        let (mut s_dl0_e, mut s20_e, mut v1_e) = (0.0, 0.0, Vec3::zeros());

        let nl = dofs.len();
        for (set, gvals) in &parts {
            for q in 0..set.w.len() {
                let (y, ny, w) = (set.y[q], set.ny[q], set.w[q]);
                let d = x - y;
                let r = d.norm();
                if r == 0.0 {
                    continue;
                }
                let r2 = r * r;
                let drdny = -d.dot(&ny) / r;
                let dphi0_dny = -drdny / (FOUR_PI * r2);
                let rl = &set.r[q * nl..(q + 1) * nl];
                if combine {
                    ry.iter_mut().for_each(|v| *v = 0.0);
                    for (l, &u) in lmap.iter().enumerate() {
                        ry[u] += rl[l];
                    }
                }
                if need_cb {
                    if combine {
                        for (u, &j) in uniq.iter().enumerate() {
                            cb_row[j] += w * dphi0_dny * (ry[u] - rx[j]);
                        }
                        s_dl0_e += w * dphi0_dny;
                    } else {
                        for (l, &j) in dofs.iter().enumerate() {
                            cb_row[j] += w * dphi0_dny * rl[l];
                        }
                        s_dl0_reg += w * dphi0_dny;
                    }
                }
                let (mut drdnx, mut nn) = (0.0, 0.0);
                if need_hb {
                    drdnx = d.dot(&nx) / r;
                    nn = nx.dot(&ny);
                    let k20 = (nn + 3.0 * drdnx * drdny) / (FOUR_PI * r2 * r);
                    let dphi0_dnx = -drdnx / (FOUR_PI * r2);
                    v3 += w * dphi0_dnx * ny;
                    let ymx = -d;
                    v1_all += w * k20 * ymx;
                    if combine {
                        for (u, &j) in uniq.iter().enumerate() {
                            hb_row[j] += w * k20 * (ry[u] - rx[j] - gx[j].dot(&ymx));
                        }
                        s20_e += w * k20;
                        v1_e += w * k20 * ymx;
                    } else {
                        for (l, &j) in dofs.iter().enumerate() {
                            hb_row[j] += w * k20 * rl[l];
                        }
                        s20_reg += w * k20;
                        v1_reg += w * k20 * ymx;
                    }
                }

                for (ji, (jc, acc)) in jobs.iter().zip(accs.iter_mut()).enumerate() {
                    let kr = jc.k * r;
                    let f = exp_factor(kr);
                    let eikr = Complex64::from_polar(1.0, kr);
                    let phik = eikr / (FOUR_PI * r);
                    let ddl = f / (FOUR_PI * r2) * drdny;
                    let mut coef = ddl * (w * jc.cb);
                    if jc.uses_hb() {
                        let d2 = -(nn * f + (kr * kr * eikr + 3.0 * f) * drdnx * drdny)
                            / (FOUR_PI * r2 * r);
                        coef += jc.hb * w * d2;
                    }
                    for (l, &j) in dofs.iter().enumerate() {
                        acc.row[j] += coef * rl[l];
                    }
                    if let Some(ps) = &acc.psi {
                        let pe = ps.eval(&y, &ny);
                        let dphik_dny = dphi0_dny + ddl;
                        acc.t1 += w * (dphi0_dny - pe.psi1 * dphik_dny + pe.dpsi1 * phik);
                        if jc.field.is_some() {
                            acc.t2 += w * (pe.psi2 * dphik_dny - pe.dpsi2 * phik);
                        }
                    }
                    if let Some(g) = &gvals[ji] {
                        let gy = g[q];
                        if jc.cb != 0.0 {
                            acc.rhs_cb += w * phik * gy;
                        }
                        if jc.uses_hb() {
                            let dphik_dnx = eikr * (I * kr - 1.0) / (FOUR_PI * r2) * drdnx;
                            acc.rhs_hb += w * dphik_dnx * gy;
                        }
                    }
                }
            }
        }

        if combine {
            for &(j, r, g) in &sd.x_dofs {
                if !in_elem[j] {
                    if need_cb {
                        cb_row[j] -= r * s_dl0_e;
                    }
                    if need_hb {
                        hb_row[j] -= r * s20_e + g.dot(&v1_e);
                    }
                }
            }
            for &g in &uniq {
                in_elem[g] = false;
            }
        }
    }

    for &(j, r, g) in &sd.x_dofs {
        if need_cb {
            cb_row[j] -= r * s_dl0_reg;
        }
        if need_hb {
            hb_row[j] += -r * s20_reg - g.dot(&v1_reg) + g.dot(&v3);
        }
    }

    let out = jobs
        .iter()
        .zip(accs)
        .map(|(jc, mut acc)| {
            if jc.cb != 0.0 {
                for (a, &s) in acc.row.iter_mut().zip(&cb_row) {
                    *a += s;
                }
            }
            if jc.uses_hb() {
                for (a, &s) in acc.row.iter_mut().zip(&hb_row) {
                    *a += jc.hb * s;
                }
            }
            let jump = -0.5 * (1.0 + jc.sign);
            let k = jc.k;
            // free term of the CBIE-type part
            let (free, free_g) = match (jc.kind, &acc.psi) {
                (BieKind::Cbie | BieKind::Bm, _) => {
                    (Complex64::from(jump), Complex64::new(0.0, 0.0))
                }
                (_, Some(PsiSource::One { c1, c2, .. })) => {
                    let e2 = 1.0 - (2.0 * I * k * c1).exp();
                    let f = 1.0 - jc.sign - (1.0 + I / (k * c1)) * e2;
                    (0.5 * f + acc.t1, I * c1 / (2.0 * k * c2) * e2)
                }
                (_, Some(PsiSource::Two { .. })) => {
                    (0.5 * (1.0 - jc.sign) + acc.t1, Complex64::new(0.0, 0.0))
                }
                (_, Some(PsiSource::Three { .. })) => (jump + acc.t1, Complex64::new(0.0, 0.0)),
                (BieKind::Hbie, _) => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
                _ => unreachable!("regularized kinds carry a psi source"),
            };
            if free != Complex64::new(0.0, 0.0) {
                for &(j, r, _) in &sd.x_dofs {
                    acc.row[j] += free * r;
                }
            }
            let mut rhs = vec![Complex64::new(0.0, 0.0); jc.ncols];
            match (jc.rigid, jc.field) {
                (Some((amp, dirs)), _) => {
                    for (c, dir) in dirs.iter().enumerate() {
                        let pinc = amp * (I * k * dir.dot(&x)).exp();
                        let mut v = Complex64::new(0.0, 0.0);
                        if jc.cb != 0.0 {
                            v -= pinc;
                        }
                        if jc.uses_hb() {
                            v -= jc.hb * I * k * dir.dot(&nx) * pinc;
                        }
                        rhs[c] = v;
                    }
                }
                (None, Some(fld)) => {
                    let gx = if sd.normal.is_some() {
                        fld.normal_derivative(&x, &nx)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    let mut v = Complex64::new(0.0, 0.0);
                    if jc.cb != 0.0 {
                        v += acc.rhs_cb;
                        if jc.psi.is_some() {
                            v += free_g * gx + gx * acc.t2;
                        }
                    }
                    if jc.uses_hb() {
                        let h =
                            acc.rhs_hb - gx * nx.dot(&(v3 - v1_all)) + 0.5 * gx * (1.0 + jc.sign);
                        v += jc.hb * h;
                    }
                    rhs[0] = v;
                }
                (None, None) => unreachable!("every job has a boundary condition"),
            }
            JobRow { row: acc.row, rhs }
        })
        .collect();
    Ok((out, n_qp1))
}

// ============================================================================
// Assembly drivers
// ============================================================================

/// Geometry and trial functions at the points of one element rule, with
/// zero-Jacobian points dropped.
struct PointSet {
    /// Number of rule points before dropping.
    n_raw: usize,
    y: Vec<Vec3>,
    ny: Vec<Vec3>,
    /// Rule weight times the surface Jacobian.
    w: Vec<f64>,
    /// `R_l(y)` in element-local order, one block per point.
    r: Vec<f64>,
}

impl PointSet {
    fn new(mesh: &SurfaceMesh, e: usize, pts: &[QuadPoint]) -> Self {
        let nl = mesh.elements[e].dofs.len();
        let mut set = PointSet {
            n_raw: pts.len(),
            y: Vec::with_capacity(pts.len()),
            ny: Vec::with_capacity(pts.len()),
            w: Vec::with_capacity(pts.len()),
            r: Vec::with_capacity(pts.len() * nl),
        };
        let mut buf = ElementEval::default();
        for q in pts {
            mesh.eval_element(e, q.xi, q.eta, &mut buf);
            let an = buf.area_normal();
            let jac = an.norm();
            if jac == 0.0 {
                continue;
            }
            set.y.push(buf.point);
            set.ny.push(an / jac);
            set.w.push(q.weight * jac);
            set.r.extend_from_slice(&buf.basis.r[..nl]);
        }
        set
    }

    fn field_values(&self, fld: &dyn ExactField) -> Vec<Complex64> {
        self.y
            .iter()
            .zip(&self.ny)
            .map(|(y, n)| fld.normal_derivative(y, n))
            .collect()
    }
}

/// Per-thread reuse of regular quadrature cells. Far elements see the same few
/// tensor rules from almost every source and quadtree cells repeat between
/// neighbouring sources, so geometry and Neumann data are computed once per
/// cell and assembly. Entries are tagged with the assembly they
/// belong to.
mod point_cache {
    use std::cell::{Cell, RefCell};
    use std::collections::HashMap;
    use std::rc::Rc;
    use std::sync::atomic::{AtomicU64, Ordering};

    use num_complex::Complex64;

    use super::PointSet;
    use crate::analytic::ExactField;
    use crate::nurbs::SurfaceMesh;
    use crate::quadrature::QuadCell;

    const MAX_ENTRIES: usize = 1 << 16;
    static GENERATION: AtomicU64 = AtomicU64::new(1);

    #[derive(Default)]
    struct Store {
        generation: u64,
        cells: HashMap<CellKey, Rc<PointSet>>,
        fields: HashMap<(usize, CellKey), Rc<Vec<Complex64>>>,
    }

    thread_local! {
        static STORE: RefCell<Store> = RefCell::new(Store::default());
        static CURRENT: Cell<u64> = const { Cell::new(0) };
    }

    pub fn new_generation() -> u64 {
        GENERATION.fetch_add(1, Ordering::Relaxed)
    }

    /// Runs `f` with caching enabled for assembly `g` on this thread.
    pub fn with_generation<T>(g: u64, f: impl FnOnce() -> T) -> T {
        let prev = CURRENT.with(|c| c.replace(g));
        let out = f();
        CURRENT.with(|c| c.set(prev));
        out
    }

    fn with_store<T>(f: impl FnOnce(&mut Store) -> T) -> Option<T> {
        let g = CURRENT.with(|c| c.get());
        if g == 0 {
            return None;
        }
        Some(STORE.with(|s| {
            let mut s = s.borrow_mut();
            if s.generation != g || s.cells.len() + s.fields.len() > MAX_ENTRIES {
                s.generation = g;
                s.cells.clear();
                s.fields.clear();
            }
            f(&mut s)
        }))
    }

    type CellKey = (usize, [u64; 4], usize, usize);

    fn key(e: usize, c: &QuadCell) -> CellKey {
        (
            e,
            [
                c.xi[0].to_bits(),
                c.xi[1].to_bits(),
                c.eta[0].to_bits(),
                c.eta[1].to_bits(),
            ],
            c.n_xi,
            c.n_eta,
        )
    }

    fn build(mesh: &SurfaceMesh, e: usize, c: &QuadCell) -> Rc<PointSet> {
        let mut pts = Vec::with_capacity(c.n_xi * c.n_eta);
        c.push_points(&mut pts);
        Rc::new(PointSet::new(mesh, e, &pts))
    }

    pub fn cell(mesh: &SurfaceMesh, e: usize, c: &QuadCell) -> Rc<PointSet> {
        with_store(|s| {
            s.cells
                .entry(key(e, c))
                .or_insert_with(|| build(mesh, e, c))
                .clone()
        })
        .unwrap_or_else(|| build(mesh, e, c))
    }

    pub fn field(
        fld: &dyn ExactField,
        e: usize,
        c: &QuadCell,
        set: &PointSet,
    ) -> Rc<Vec<Complex64>> {
        let k = (
            fld as *const dyn ExactField as *const () as usize,
            key(e, c),
        );
        with_store(|s| {
            s.fields
                .entry(k)
                .or_insert_with(|| Rc::new(set.field_values(fld)))
                .clone()
        })
        .unwrap_or_else(|| Rc::new(set.field_values(fld)))
    }
}

/// Sources per parallel batch; bounds the memory held by pending rows.
const BATCH: usize = 64;

/// Assembles every job in one pass over the quadrature. All jobs must share
/// the discretization.
pub fn assemble_many(
    mesh: &SurfaceMesh,
    jobs: &[AssemblyJob],
    cfg: &QuadConfig,
) -> Result<Vec<BemSystem>> {
    let Some(first) = jobs.first() else {
        return Ok(Vec::new());
    };
    let disc = first.formulation.discretization;
    if jobs.iter().any(|j| j.formulation.discretization != disc) {
        return Err(Error::Config(
            "batched jobs must share the discretization".into(),
        ));
    }
    let ctx = jobs.iter().map(JobCtx::new).collect::<Result<Vec<_>>>()?;
    if !mesh.is_closed() {
        return Err(Error::Domain(
            "boundary integral equations need a closed surface".into(),
        ));
    }
    let n = mesh.n_dofs;
    let mut systems: Vec<BemSystem> = jobs
        .iter()
        .map(|j| BemSystem {
            k: j.k,
            formulation: j.formulation,
            matrix: DMatrix::zeros(n, n),
            rhs: DMatrix::zeros(n, j.bc.n_columns()),
            n_qp1: 0,
        })
        .collect();
    let generation = point_cache::new_generation();
    match disc {
        Discretization::Collocation => {
            // HBIE-type rows perturb degenerate points; CBIE rows never do
            for needs in [false, true] {
                let idx: Vec<usize> = (0..jobs.len())
                    .filter(|&i| jobs[i].formulation.needs_normal() == needs)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let sub: Vec<JobCtx> = idx
                    .iter()
                    .map(|&i| JobCtx::new(&jobs[i]))
                    .collect::<Result<_>>()?;
                let pts = collocation_points(mesh, needs)?;
                for chunk in pts.chunks(BATCH) {
                    let rows = chunk
                        .par_iter()
                        .map(|cp| {
                            let src = Source::on_surface(mesh, &cp.locs)?;
                            let (p, xi, eta) = cp.locs[0];
                            let e = mesh.locate(p, xi, eta)?;
                            let sd = SourceData::new(mesh, src, e, xi, eta, needs)?;
                            point_cache::with_generation(generation, || {
                                source_rows(mesh, cfg, &sub, &sd)
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    for (cp, (jr, nq)) in chunk.iter().zip(rows) {
                        for (&i, r) in idx.iter().zip(jr) {
                            let s = &mut systems[i];
                            for (j, v) in r.row.into_iter().enumerate() {
                                s.matrix[(cp.dof, j)] = v;
                            }
                            for (c, v) in r.rhs.into_iter().enumerate() {
                                s.rhs[(cp.dof, c)] = v;
                            }
                            s.n_qp1 += nq;
                        }
                    }
                }
            }
        }
        Discretization::Galerkin => {
            let need_normal = jobs.iter().any(|j| j.formulation.needs_normal());
            let elems: Vec<usize> = (0..mesh.elements.len()).collect();
            for chunk in elems.chunks(BATCH.div_ceil(8).max(1)) {
                let blocks = chunk
                    .par_iter()
                    .map(|&e| {
                        point_cache::with_generation(generation, || {
                            galerkin_block(mesh, cfg, &ctx, e, need_normal)
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (&e, (blk, nq)) in chunk.iter().zip(blocks) {
                    let dofs = &mesh.elements[e].dofs;
                    for (s, (mb, rb)) in systems.iter_mut().zip(blk) {
                        for (l, &i) in dofs.iter().enumerate() {
                            for j in 0..n {
                                s.matrix[(i, j)] += mb[l * n + j];
                            }
                            for c in 0..rb[l].len() {
                                s.rhs[(i, c)] += rb[l][c];
                            }
                        }
                        s.n_qp1 += nq;
                    }
                }
            }
        }
    }
    Ok(systems)
}

type GalerkinBlock = (Vec<(Vec<Complex64>, Vec<Vec<Complex64>>)>, usize);

/// Test-function-weighted rows of one outer element for every job.
fn galerkin_block(
    mesh: &SurfaceMesh,
    cfg: &QuadConfig,
    jobs: &[JobCtx],
    e: usize,
    need_normal: bool,
) -> Result<GalerkinBlock> {
    let n = mesh.n_dofs;
    let el = &mesh.elements[e];
    let nl = el.dofs.len();
    let (px, py) = mesh.patches[el.patch].degrees();
    let mut outer = Vec::new();
    let (gx, _) = gauss_legendre(px + 1 + cfg.n_eqp1)?;
    let (gy, _) = gauss_legendre(py + 1 + cfg.n_eqp1)?;
    crate::quadrature::tensor_points(el.xi, el.eta, gx.len(), gy.len(), &mut outer);
    let mut out: Vec<(Vec<Complex64>, Vec<Vec<Complex64>>)> = jobs
        .iter()
        .map(|j| {
            (
                vec![Complex64::new(0.0, 0.0); nl * n],
                vec![vec![Complex64::new(0.0, 0.0); j.ncols]; nl],
            )
        })
        .collect();
    let mut buf = ElementEval::default();
    let mut n_qp1 = 0;
    for &QuadPoint { xi, eta, weight } in &outer {
        mesh.eval_element(e, xi, eta, &mut buf);
        let wx = weight * buf.area_normal().norm();
        if wx == 0.0 {
            continue;
        }
        let test = buf.basis.r.clone();
        let src = Source {
            point: buf.point,
            on_elements: vec![(e, xi, eta)],
        };
        let sd = SourceData::new(mesh, src, e, xi, eta, need_normal)?;
        let (rows, nq) = source_rows(mesh, cfg, jobs, &sd)?;
        n_qp1 += nq;
        for ((mb, rb), jr) in out.iter_mut().zip(rows) {
            for (l, &t) in test.iter().enumerate() {
                let f = wx * t;
                if f == 0.0 {
                    continue;
                }
                let dst = &mut mb[l * n..(l + 1) * n];
                for (a, v) in dst.iter_mut().zip(&jr.row) {
                    *a += f * v;
                }
                for (a, v) in rb[l].iter_mut().zip(&jr.rhs) {
                    *a += f * v;
                }
            }
        }
    }
    Ok((out, n_qp1))
}

/// Assembles a single system.
pub fn assemble(
    mesh: &SurfaceMesh,
    k: f64,
    formulation: BieFormulation,
    bc: BoundaryCondition,
    cfg: &QuadConfig,
) -> Result<BemSystem> {
    let mut v = assemble_many(mesh, &[AssemblyJob { k, formulation, bc }], cfg)?;
    Ok(v.remove(0))
}

#[cfg(test)]
mod tests;
