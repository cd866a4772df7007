use std::io::Write;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::patch::{NurbsPatch, PatchBasis, SurfaceFrame};

/// Relative merge tolerance for coincident control points.
pub const MERGE_TOL: f64 = 1e-10;

/// One nonzero knot-span rectangle of a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub patch: usize,
    pub span_xi: usize,
    pub span_eta: usize,
    pub xi: [f64; 2],
    pub eta: [f64; 2],
    /// Global DOF of each local basis function (`xi` fastest).
    pub dofs: Vec<usize>,
    /// Largest physical diagonal.
    pub diag: f64,
    /// Physical point at the parametric center.
    pub center_point: Vec3,
}

impl Element {
    pub fn param_area(&self) -> f64 {
        (self.xi[1] - self.xi[0]) * (self.eta[1] - self.eta[0])
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.xi[0] + self.xi[1]),
            0.5 * (self.eta[0] + self.eta[1]),
        )
    }

    /// Closed-rectangle containment with a relative tolerance.
    pub fn contains(&self, xi: f64, eta: f64, tol: f64) -> bool {
        let tx = tol * (self.xi[1] - self.xi[0]);
        let ty = tol * (self.eta[1] - self.eta[0]);
        xi >= self.xi[0] - tx
            && xi <= self.xi[1] + tx
            && eta >= self.eta[0] - ty
            && eta <= self.eta[1] + ty
    }
}

/// Reference to a control point / basis function of one patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDof {
    pub patch: usize,
    pub i: usize,
    pub j: usize,
}

/// Conforming multi-patch surface with global basis numbering.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub patches: Vec<NurbsPatch>,
    /// Per patch, global index of each local basis function (`i + n_xi j`).
    pub global_map: Vec<Vec<usize>>,
    pub elements: Vec<Element>,
    pub n_dofs: usize,
    /// Local basis functions merged into each global DOF, in numbering order.
    pub owners: Vec<Vec<LocalDof>>,
    /// Bounding-box diagonal.
    pub char_length: f64,
}

/// Basis values and geometry at a point of one element.
#[derive(Debug, Clone, Default)]
pub struct ElementEval {
    pub basis: PatchBasis,
    pub point: Vec3,
    pub d_xi: Vec3,
    pub d_eta: Vec3,
}

impl ElementEval {
    /// Unnormalised normal `d_xi x d_eta`; its length is the surface Jacobian.
    pub fn area_normal(&self) -> Vec3 {
        self.d_xi.cross(&self.d_eta)
    }

    pub fn frame(&self) -> SurfaceFrame {
        SurfaceFrame::from_tangents(self.point, self.d_xi, self.d_eta)
    }
}

/// Union-find with path halving.
fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Builds the global numbering by merging coincident control points.
pub fn build_conforming_mesh(patches: Vec<NurbsPatch>) -> Result<SurfaceMesh> {
    if patches.is_empty() {
        return Err(Error::Domain("mesh needs at least one patch".into()));
    }
    let mut all: Vec<(usize, usize, Vec3)> = Vec::new();
    for (pi, p) in patches.iter().enumerate() {
        for (l, cp) in p.control_points.iter().enumerate() {
            all.push((pi, l, *cp));
        }
    }
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for (_, _, c) in &all {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let char_length = (hi - lo).norm().max(f64::MIN_POSITIVE);
    let tol = MERGE_TOL * char_length;

    let n = all.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| all[a].2.x.total_cmp(&all[b].2.x));
    let mut parent: Vec<usize> = (0..n).collect();
    for a in 0..n {
        let ia = order[a];
        for &ib in order[a + 1..].iter() {
            if all[ib].2.x - all[ia].2.x > tol {
                break;
            }
            if (all[ib].2 - all[ia].2).norm() <= tol {
                let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    // Boundary points without a partner that nearly touch another patch signal a gap.
    let is_boundary = |pi: usize, l: usize| {
        let p = &patches[pi];
        let (i, j) = (l % p.n_xi(), l / p.n_xi());
        i == 0 || j == 0 || i + 1 == p.n_xi() || j + 1 == p.n_eta()
    };
    let mut group_size = vec![0usize; n];
    for a in 0..n {
        let r = find(&mut parent, a);
        group_size[r] += 1;
    }
    for a in 0..n {
        if !is_boundary(all[a].0, all[a].1) || group_size[find(&mut parent, a)] > 1 {
            continue;
        }
        for b in 0..n {
            if all[b].0 == all[a].0 || !is_boundary(all[b].0, all[b].1) {
                continue;
            }
            let gap = (all[b].2 - all[a].2).norm();
            if gap > tol && gap < 1e-4 * char_length {
                return Err(Error::NonConforming {
                    patch_a: all[a].0.min(all[b].0),
                    patch_b: all[a].0.max(all[b].0),
                    gap,
                });
            }
        }
    }

    let mut root_to_global = vec![usize::MAX; n];
    let mut global_map: Vec<Vec<usize>> = patches
        .iter()
        .map(|p| vec![0; p.control_points.len()])
        .collect();
    let mut owners: Vec<Vec<LocalDof>> = Vec::new();
    for a in 0..n {
        let r = find(&mut parent, a);
        if root_to_global[r] == usize::MAX {
            root_to_global[r] = owners.len();
            owners.push(Vec::new());
        }
        let g = root_to_global[r];
        let (pi, l, _) = all[a];
        let nx = patches[pi].n_xi();
        global_map[pi][l] = g;
        owners[g].push(LocalDof {
            patch: pi,
            i: l % nx,
            j: l / nx,
        });
    }

    let mut elements = Vec::new();
    for (pi, p) in patches.iter().enumerate() {
        let (pd, qd) = p.degrees();
        let kx = p.knots_xi.values();
        let ky = p.knots_eta.values();
        for sy in p.knots_eta.spans() {
            for sx in p.knots_xi.spans() {
                let mut dofs = Vec::with_capacity((pd + 1) * (qd + 1));
                for b in 0..=qd {
                    for c in 0..=pd {
                        dofs.push(global_map[pi][p.index(sx - pd + c, sy - qd + b)]);
                    }
                }
                let mut e = Element {
                    patch: pi,
                    span_xi: sx,
                    span_eta: sy,
                    xi: [kx[sx], kx[sx + 1]],
                    eta: [ky[sy], ky[sy + 1]],
                    dofs,
                    diag: 0.0,
                    center_point: Vec3::zeros(),
                };
                let mut buf = PatchBasis::default();
                let mut corner = |u: f64, v: f64| p.basis_in_spans(sx, sy, u, v, &mut buf).0;
                let c00 = corner(e.xi[0], e.eta[0]);
                let c11 = corner(e.xi[1], e.eta[1]);
                let c10 = corner(e.xi[1], e.eta[0]);
                let c01 = corner(e.xi[0], e.eta[1]);
                e.diag = (c11 - c00).norm().max((c01 - c10).norm());
                e.center_point = corner(0.5 * (e.xi[0] + e.xi[1]), 0.5 * (e.eta[0] + e.eta[1]));
                elements.push(e);
            }
        }
    }

    Ok(SurfaceMesh {
        n_dofs: owners.len(),
        patches,
        global_map,
        elements,
        owners,
        char_length,
    })
}

impl SurfaceMesh {
    pub fn max_degree(&self) -> usize {
        self.patches
            .iter()
            .map(|p| p.degrees().0.max(p.degrees().1))
            .max()
            .unwrap_or(0)
    }

    /// Evaluates geometry and rational basis at `(xi, eta)` using element `e`'s spans.
    pub fn eval_element(&self, e: usize, xi: f64, eta: f64, out: &mut ElementEval) {
        let el = &self.elements[e];
        let (x, dx, dy) =
            self.patches[el.patch].basis_in_spans(el.span_xi, el.span_eta, xi, eta, &mut out.basis);
        out.point = x;
        out.d_xi = dx;
        out.d_eta = dy;
    }

    /// Physical point of element `e` at a parameter.
    pub fn element_point(&self, e: usize, xi: f64, eta: f64) -> Vec3 {
        let mut buf = ElementEval::default();
        self.eval_element(e, xi, eta, &mut buf);
        buf.point
    }

    /// Elements of `patch` whose closed parameter rectangle contains `(xi, eta)`.
    pub fn elements_containing(&self, patch: usize, xi: f64, eta: f64) -> Vec<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.patch == patch && e.contains(xi, eta, 1e-12))
            .map(|(i, _)| i)
            .collect()
    }

    /// Some element of `patch` containing the parameter.
    pub fn locate(&self, patch: usize, xi: f64, eta: f64) -> Result<usize> {
        self.elements_containing(patch, xi, eta)
            .first()
            .copied()
            .ok_or_else(|| Error::Domain(format!("parameter ({xi}, {eta}) not in patch {patch}")))
    }

    /// Global dofs along the four parameter edges of a patch, in the order
    /// xi = min, xi = max, eta = min, eta = max.
    fn edge_dofs(&self, patch: usize) -> [Vec<usize>; 4] {
        let p = &self.patches[patch];
        let (nx, ny) = (p.n_xi(), p.n_eta());
        let g = &self.global_map[patch];
        [
            (0..ny).map(|j| g[p.index(0, j)]).collect(),
            (0..ny).map(|j| g[p.index(nx - 1, j)]).collect(),
            (0..nx).map(|i| g[p.index(i, 0)]).collect(),
            (0..nx).map(|i| g[p.index(i, ny - 1)]).collect(),
        ]
    }

    /// Which patch edges collapse to a single point (poles).
    pub fn collapsed_edges(&self, patch: usize) -> [bool; 4] {
        self.edge_dofs(patch).map(|d| d.iter().all(|&g| g == d[0]))
    }

    /// True when every non-degenerate patch edge is glued to another edge.
    pub fn is_closed(&self) -> bool {
        (0..self.patches.len()).all(|pi| {
            let collapsed = self.collapsed_edges(pi);
            self.edge_dofs(pi)
                .iter()
                .zip(collapsed)
                .all(|(d, c)| c || d.iter().all(|&g| self.owners[g].len() >= 2))
        })
    }

    /// Greville parameter of a local basis function.
    pub fn greville_param(&self, d: LocalDof) -> (f64, f64) {
        let p = &self.patches[d.patch];
        (p.knots_xi.greville()[d.i], p.knots_eta.greville()[d.j])
    }

    /// Total surface area by Gauss quadrature.
    pub fn area(&self) -> f64 {
        let mut buf = ElementEval::default();
        let (x, w) =
            crate::quadrature::gauss_legendre(self.max_degree() + 4).expect("positive order");
        let mut a = 0.0;
        for (ei, el) in self.elements.iter().enumerate() {
            let (sx, sy) = (0.5 * (el.xi[1] - el.xi[0]), 0.5 * (el.eta[1] - el.eta[0]));
            for (a1, w1) in x.iter().zip(&w) {
                for (a2, w2) in x.iter().zip(&w) {
                    self.eval_element(
                        ei,
                        el.xi[0] + sx * (a1 + 1.0),
                        el.eta[0] + sy * (a2 + 1.0),
                        &mut buf,
                    );
                    a += w1 * w2 * sx * sy * buf.area_normal().norm();
                }
            }
        }
        a
    }

    /// Evaluates `sum_j u_j R_j` at a parameter of element `e`.
    pub fn eval_field<T>(&self, e: usize, xi: f64, eta: f64, coeffs: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        let mut buf = ElementEval::default();
        self.eval_element(e, xi, eta, &mut buf);
        let el = &self.elements[e];
        el.dofs
            .iter()
            .zip(&buf.basis.r)
            .fold(T::default(), |acc, (&d, &r)| acc + coeffs[d] * r)
    }

    /// Writes a legacy-ASCII VTK polydata tessellation with `n` quads per element side.
    pub fn write_vtk<W: Write>(&self, mut w: W, n: usize) -> Result<()> {
        let n = n.max(1);
        let mut pts = Vec::new();
        let mut buf = ElementEval::default();
        for (ei, el) in self.elements.iter().enumerate() {
            for b in 0..=n {
                for a in 0..=n {
                    let xi = el.xi[0] + (el.xi[1] - el.xi[0]) * a as f64 / n as f64;
                    let eta = el.eta[0] + (el.eta[1] - el.eta[0]) * b as f64 / n as f64;
                    self.eval_element(ei, xi, eta, &mut buf);
                    pts.push(buf.point);
                }
            }
        }
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "igabem surface mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET POLYDATA")?;
        writeln!(w, "POINTS {} double", pts.len())?;
        for p in &pts {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
        }
        let nq = self.elements.len() * n * n;
        writeln!(w, "POLYGONS {} {}", nq, 5 * nq)?;
        let stride = (n + 1) * (n + 1);
        for e in 0..self.elements.len() {
            for b in 0..n {
                for a in 0..n {
                    let o = e * stride + a + (n + 1) * b;
                    writeln!(w, "4 {} {} {} {}", o, o + 1, o + n + 2, o + n + 1)?;
                }
            }
        }
        Ok(())
    }
}

/// Frame of `patch` at a parameter.
pub fn eval_frame(mesh: &SurfaceMesh, patch: usize, xi: f64, eta: f64) -> Result<SurfaceFrame> {
    mesh.patches
        .get(patch)
        .ok_or_else(|| Error::Domain(format!("no patch {patch}")))?
        .frame(xi, eta)
}
