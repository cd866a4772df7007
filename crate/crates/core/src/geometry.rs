//! Exact NURBS benchmark geometries and NACA 00xx profile coefficients.

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nurbs::{
    build_conforming_mesh, elevate_degree, refine_uniform_with, KnotVector, NurbsPatch, SurfaceMesh,
};
use crate::vec3::{v3, Vec3};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GeometrySpec {
    SpherePar1 { radius: f64 },
    SpherePar2 { radius: f64 },
    Torus { r_o: f64, r_i: f64 },
    Cube { a: f64 },
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GeometrySpec::SpherePar1 { radius } | GeometrySpec::SpherePar2 { radius } => {
                radius > 0.0
            }
            GeometrySpec::Torus { r_o, r_i } => r_o > r_i && r_i > 0.0,
            GeometrySpec::Cube { a } => a > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "invalid geometry parameters: {self:?}"
            )))
        }
    }

    /// Degree of the coarsest exact parametrization.
    pub fn base_degree(&self) -> usize {
        match self {
            GeometrySpec::SpherePar1 { .. } | GeometrySpec::Torus { .. } => 2,
            GeometrySpec::SpherePar2 { .. } => 4,
            GeometrySpec::Cube { .. } => 1,
        }
    }

    pub fn patches(&self) -> Result<Vec<NurbsPatch>> {
        self.validate()?;
        match *self {
            GeometrySpec::SpherePar1 { radius } => Ok(vec![sphere_par1_patch(radius)?]),
            GeometrySpec::SpherePar2 { radius } => sphere_par2_patches(radius),
            GeometrySpec::Torus { r_o, r_i } => Ok(vec![torus_patch(r_o, r_i)?]),
            GeometrySpec::Cube { a } => cube_patches(a),
        }
    }

    /// Mesh `M_m`: the coarse geometry elevated to `degree` (when given) and
    /// then uniformly refined `m - 1` times.
    pub fn mesh(&self, degree: Option<usize>, m: usize) -> Result<SurfaceMesh> {
        self.mesh_with_continuity(degree, None, m)
    }

    /// Like [`GeometrySpec::mesh`], with inserted knots of continuity
    /// `continuity` (default `p - 1`).
    pub fn mesh_with_continuity(
        &self,
        degree: Option<usize>,
        continuity: Option<usize>,
        m: usize,
    ) -> Result<SurfaceMesh> {
        if m == 0 {
            return Err(Error::Config("mesh index starts at 1".into()));
        }
        let p = degree.unwrap_or(self.base_degree());
        if p < self.base_degree() {
            return Err(Error::Config(format!(
                "degree {p} is below the exact geometry degree {}",
                self.base_degree()
            )));
        }
        let cont = continuity.unwrap_or(p.saturating_sub(1));
        if cont >= p.max(1) {
            return Err(Error::Config(format!(
                "continuity {cont} must be below degree {p}"
            )));
        }
        let mult = p - cont;
        let patches = self
            .patches()?
            .iter()
            .map(|pa| elevate_degree(pa, p, p).and_then(|e| refine_uniform_with(&e, m - 1, mult)))
            .collect::<Result<Vec<_>>>()?;
        build_conforming_mesh(patches)
    }
}

fn homogeneous_patch(
    kx: KnotVector,
    ky: KnotVector,
    net: impl IntoIterator<Item = (Vec3, f64)>,
) -> Result<NurbsPatch> {
    let (pts, w): (Vec<_>, Vec<_>) = net.into_iter().unzip();
    NurbsPatch::new(kx, ky, pts, w)
}

/// Full circle as 4 quarter arcs: (x, y, w) for the 9 control points.
fn circle_net() -> [(f64, f64, f64); 9] {
    let s = 1.0 / SQRT2;
    [
        (1.0, 0.0, 1.0),
        (1.0, 1.0, s),
        (0.0, 1.0, 1.0),
        (-1.0, 1.0, s),
        (-1.0, 0.0, 1.0),
        (-1.0, -1.0, s),
        (0.0, -1.0, 1.0),
        (1.0, -1.0, s),
        (1.0, 0.0, 1.0),
    ]
}

fn quarter_knots(n_arcs: usize) -> Result<KnotVector> {
    let mut v = vec![0.0; 3];
    for k in 1..n_arcs {
        let u = k as f64 / n_arcs as f64;
        v.extend([u, u]);
    }
    v.extend([1.0; 3]);
    KnotVector::new(v, 2)
}

/// Single patch, 4 x 2 quarter-arc elements; the rows j = 0 and j = 4 collapse to the poles.
fn sphere_par1_patch(r: f64) -> Result<NurbsPatch> {
    let s = 1.0 / SQRT2;
    // meridian from south to north pole: (rho, z, w)
    let meridian = [
        (0.0, -1.0, 1.0),
        (1.0, -1.0, s),
        (1.0, 0.0, 1.0),
        (1.0, 1.0, s),
        (0.0, 1.0, 1.0),
    ];
    let circle = circle_net();
    let net = meridian.iter().flat_map(|&(rho, z, wm)| {
        circle
            .iter()
            .map(move |&(cx, cy, wc)| (v3(r * rho * cx, r * rho * cy, r * z), wm * wc))
    });
    homogeneous_patch(quarter_knots(4)?, quarter_knots(2)?, net)
}

/// Control net of the +z tile in homogeneous form (w x, w y, w z, w), 5 x 5,
/// index `[i][j]` with i along x and j along y.
fn sphere_par2_tile() -> [[[f64; 4]; 5]; 5] {
    let s3 = 3f64.sqrt();
    let mut h = [[[0.0; 4]; 5]; 5];
    h[0][0] = [
        4.0 * (1.0 - s3),
        4.0 * (1.0 - s3),
        4.0 * (s3 - 1.0),
        4.0 * (3.0 - s3),
    ];
    h[1][0] = [
        -SQRT2,
        SQRT2 * (s3 - 4.0),
        SQRT2 * (4.0 - s3),
        SQRT2 * (3.0 * s3 - 2.0),
    ];
    h[2][0] = [
        0.0,
        4.0 * (1.0 - 2.0 * s3) / 3.0,
        4.0 * (2.0 * s3 - 1.0) / 3.0,
        4.0 * (5.0 - s3) / 3.0,
    ];
    h[1][1] = [
        -(3.0 * s3 - 2.0) / 2.0,
        (2.0 - 3.0 * s3) / 2.0,
        (s3 + 6.0) / 2.0,
        (s3 + 6.0) / 2.0,
    ];
    h[2][1] = [
        0.0,
        SQRT2 * (2.0 * s3 - 7.0) / 3.0,
        5.0 * 6f64.sqrt() / 3.0,
        SQRT2 * (s3 + 6.0) / 3.0,
    ];
    h[2][2] = [
        0.0,
        0.0,
        4.0 * (5.0 - s3) / 3.0,
        4.0 * (5.0 * s3 - 1.0) / 9.0,
    ];
    // mirror in y = x
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let src = h[j][i];
        h[i][j] = [src[1], src[0], src[2], src[3]];
    }
    // mirror in x = 0
    for i in 3..5 {
        for j in 0..3 {
            let src = h[4 - i][j];
            h[i][j] = [-src[0], src[1], src[2], src[3]];
        }
    }
    // mirror in y = 0
    for i in 0..5 {
        for j in 3..5 {
            let src = h[i][4 - j];
            h[i][j] = [src[0], -src[1], src[2], src[3]];
        }
    }
    h
}

/// Proper rotations carrying +z to each of the six cube directions.
fn cube_rotations() -> [Matrix3<f64>; 6] {
    [
        Matrix3::identity(),
        Matrix3::new(1., 0., 0., 0., -1., 0., 0., 0., -1.),
        Matrix3::new(0., 0., 1., 0., 1., 0., -1., 0., 0.),
        Matrix3::new(0., 0., -1., 0., 1., 0., 1., 0., 0.),
        Matrix3::new(1., 0., 0., 0., 0., 1., 0., -1., 0.),
        Matrix3::new(1., 0., 0., 0., 0., -1., 0., 1., 0.),
    ]
}

fn sphere_par2_patches(r: f64) -> Result<Vec<NurbsPatch>> {
    let h = sphere_par2_tile();
    let kv = KnotVector::open_uniform(4, &[])?;
    let net = (0..5)
        .flat_map(|j| (0..5).map(move |i| (j, i)))
        .map(|(j, i)| {
            let [wx, wy, wz, w] = h[i][j];
            (v3(wx, wy, wz) * (r / w), w)
        });
    let tile = homogeneous_patch(kv.clone(), kv, net)?;
    Ok(cube_rotations()
        .iter()
        .map(|m| tile.transformed(m))
        .collect())
}

/// Single patch, 4 x 4 quarter-arc elements: xi around the z axis, eta around the tube.
fn torus_patch(r_o: f64, r_i: f64) -> Result<NurbsPatch> {
    let circle = circle_net();
    let net = circle.iter().flat_map(|&(tc, tz, wt)| {
        let rho = r_o + r_i * tc;
        circle
            .iter()
            .map(move |&(cx, cy, wc)| (v3(rho * cx, rho * cy, r_i * tz), wt * wc))
    });
    homogeneous_patch(quarter_knots(4)?, quarter_knots(4)?, net)
}

fn cube_patches(a: f64) -> Result<Vec<NurbsPatch>> {
    let h = 0.5 * a;
    let kv = KnotVector::open_uniform(1, &[])?;
    let pts = vec![v3(-h, -h, h), v3(h, -h, h), v3(-h, h, h), v3(h, h, h)];
    let top = NurbsPatch::new(kv.clone(), kv, pts, vec![1.0; 4])?;
    Ok(cube_rotations()
        .iter()
        .map(|m| top.transformed(m))
        .collect())
}

pub fn make_sphere_par1(radius: f64) -> Result<SurfaceMesh> {
    GeometrySpec::SpherePar1 { radius }.mesh(None, 1)
}

pub fn make_sphere_par2(radius: f64) -> Result<SurfaceMesh> {
    GeometrySpec::SpherePar2 { radius }.mesh(None, 1)
}

pub fn make_torus(r_o: f64, r_i: f64) -> Result<SurfaceMesh> {
    GeometrySpec::Torus { r_o, r_i }.mesh(None, 1)
}

pub fn make_cube(a: f64) -> Result<SurfaceMesh> {
    GeometrySpec::Cube { a }.mesh(None, 1)
}

/// NACA 00xx thickness coefficients of `f_t(x) = 5t(a0 sqrt(x) + a1 x + ... + a4 x^4)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NacaCoefficients {
    pub a: [f64; 5],
}

pub const NACA_A0: f64 = 0.2969;

/// Solves for a1..a4 given a0 = 0.2969, a closed trailing edge, maximum
/// thickness t/2 at x = 0.3 and trailing edge slope `-5t * te_slope`.
pub fn solve_naca_coefficients(te_slope: f64) -> Result<NacaCoefficients> {
    let x = 0.3f64;
    let a0 = NACA_A0;
    // rows: f(1) = 0, f(0.3) = 1/10, f'(0.3) = 0, f'(1) = -te_slope (all divided by 5t)
    let m = Matrix4::new(
        1.0,
        1.0,
        1.0,
        1.0,
        x,
        x * x,
        x.powi(3),
        x.powi(4),
        1.0,
        2.0 * x,
        3.0 * x * x,
        4.0 * x.powi(3),
        1.0,
        2.0,
        3.0,
        4.0,
    );
    let rhs = Vector4::new(
        -a0,
        0.1 - a0 * x.sqrt(),
        -a0 / (2.0 * x.sqrt()),
        -te_slope - 0.5 * a0,
    );
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular NACA system".into()))?;
    Ok(NacaCoefficients {
        a: [a0, sol[0], sol[1], sol[2], sol[3]],
    })
}

impl Default for NacaCoefficients {
    fn default() -> Self {
        solve_naca_coefficients(0.243895).expect("NACA system is nonsingular")
    }
}

fn check_chord(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("chord position {x} outside [0, 1]")))
    }
}

pub fn naca_thickness(c: &NacaCoefficients, t: f64, x: f64) -> Result<f64> {
    check_chord(x)?;
    let a = &c.a;
    Ok(5.0 * t * (a[0] * x.sqrt() + x * (a[1] + x * (a[2] + x * (a[3] + x * a[4])))))
}

/// First and second derivative of the thickness function for `x` in (0, 1].
pub fn naca_thickness_derivs(c: &NacaCoefficients, t: f64, x: f64) -> Result<(f64, f64)> {
    check_chord(x)?;
    if x == 0.0 {
        return Err(Error::Singularity);
    }
    let a = &c.a;
    let d1 = a[0] / (2.0 * x.sqrt()) + a[1] + x * (2.0 * a[2] + x * (3.0 * a[3] + 4.0 * x * a[4]));
    let d2 = -a[0] / (4.0 * x * x.sqrt()) + 2.0 * a[2] + x * (6.0 * a[3] + 12.0 * x * a[4]);
    Ok((5.0 * t * d1, 5.0 * t * d2))
}

pub fn naca_leading_edge_radius(c: &NacaCoefficients, t: f64) -> f64 {
    12.5 * c.a[0] * c.a[0] * t * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_points(mesh: &SurfaceMesh, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pi = rng.gen_range(0..mesh.patches.len());
                let pa = &mesh.patches[pi];
                let xi = rng.gen_range(pa.knots_xi.first()..=pa.knots_xi.last());
                let eta = rng.gen_range(pa.knots_eta.first()..=pa.knots_eta.last());
                pa.point(xi, eta).unwrap()
            })
            .collect()
    }

    #[test]
    fn sphere_par1_layout() {
        let m = make_sphere_par1(1.0).unwrap();
        assert_eq!(m.patches.len(), 1);
        assert_eq!(m.elements.len(), 8);
        assert_eq!(m.n_dofs, 8 * 3 + 2);
        let pa = &m.patches[0];
        // equator row, first element corner and its neighbour
        assert!((pa.control_points[pa.index(0, 2)] - v3(1., 0., 0.)).norm() < 1e-15);
        assert_eq!(pa.weights[pa.index(0, 2)], 1.0);
        assert!((pa.weights[pa.index(1, 2)] - 1.0 / SQRT2).abs() < 1e-15);
        for x in sample_points(&m, 500, 1) {
            assert!((x.norm() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn sphere_par2_layout() {
        let m = make_sphere_par2(2.5).unwrap();
        assert_eq!(m.patches.len(), 6);
        assert_eq!(m.elements.len(), 6);
        assert_eq!(m.n_dofs, 98);
        let h = sphere_par2_tile();
        let s3 = 3f64.sqrt();
        assert!((h[2][2][3] - 4.0 * (5.0 * s3 - 1.0) / 9.0).abs() < 1e-15);
        for x in sample_points(&m, 500, 2) {
            assert!((x.norm() - 2.5).abs() < 1e-13 * 2.5, "{}", x.norm());
        }
        // outward orientation
        for e in 0..m.elements.len() {
            let pa = &m.patches[m.elements[e].patch];
            let f = pa.frame(0.3, 0.6).unwrap();
            assert!(f.normal.dot(&f.point) > 0.0);
            assert!(f.jacobian > 1e-8);
        }
    }

    #[test]
    fn torus_layout() {
        let (ro, ri) = (2.0, 1.0);
        let m = make_torus(ro, ri).unwrap();
        assert_eq!(m.elements.len(), 16);
        assert_eq!(m.n_dofs, 64);
        let pa = &m.patches[0];
        assert!((pa.point(0.0, 0.0).unwrap() - v3(3., 0., 0.)).norm() < 1e-15);
        assert!((pa.control_points[pa.index(1, 1)] - v3(3., 3., 1.)).norm() < 1e-15);
        assert!((pa.weights[pa.index(1, 1)] - 0.5).abs() < 1e-15);
        for x in sample_points(&m, 500, 3) {
            let rho = x.x.hypot(x.y);
            assert!(((rho - ro).powi(2) + x.z * x.z - ri * ri).abs() < 1e-12);
        }
        let f = pa.frame(0.1, 0.05).unwrap();
        let c = v3(f.point.x, f.point.y, 0.0).normalize() * ro;
        assert!(f.normal.dot(&(f.point - c)) > 0.0);
    }

    #[test]
    fn cube_layout() {
        let m = make_cube(2.0).unwrap();
        assert_eq!(m.n_dofs, 8);
        assert!((m.area() - 24.0).abs() < 1e-12);
        for pa in &m.patches {
            let f = pa.frame(0.5, 0.5).unwrap();
            assert!((f.normal - f.point.normalize()).norm() < 1e-14);
        }
    }

    #[test]
    fn refined_families() {
        let m = GeometrySpec::SpherePar2 { radius: 1.0 }
            .mesh(None, 4)
            .unwrap();
        assert_eq!(m.elements.len(), 384);
        assert_eq!(m.n_dofs, 728);
        let m = GeometrySpec::SpherePar1 { radius: 1.0 }
            .mesh(Some(4), 2)
            .unwrap();
        assert_eq!(m.elements.len(), 32);
        for x in sample_points(&m, 300, 4) {
            assert!((x.norm() - 1.0).abs() < 1e-13);
        }
        assert!(GeometrySpec::Cube { a: 1.0 }.mesh(None, 0).is_err());
        assert!(GeometrySpec::Torus { r_o: 1.0, r_i: 1.0 }
            .patches()
            .is_err());
    }

    #[test]
    fn naca_coefficients() {
        let c = solve_naca_coefficients(0.243895).unwrap();
        let golden = [
            0.2969,
            -0.12651673270629464,
            -0.34981592496061949,
            0.28392704804012290,
            -0.10449439037320877,
        ];
        for (a, g) in c.a.iter().zip(golden) {
            assert!((a - g).abs() < 1e-12, "{a} vs {g}");
        }
        let t = 0.2;
        assert_eq!(naca_thickness(&c, t, 0.0).unwrap(), 0.0);
        assert!(naca_thickness(&c, t, 1.0).unwrap().abs() < 1e-14);
        assert!((naca_thickness(&c, t, 0.3).unwrap() - t / 2.0).abs() < 1e-14);
        assert!(naca_thickness_derivs(&c, t, 0.3).unwrap().0.abs() < 1e-13);
        assert!((naca_thickness_derivs(&c, t, 1.0).unwrap().0 + 5.0 * t * 0.243895).abs() < 1e-13);
        assert!(naca_thickness(&c, t, 1.2).is_err());
    }

    #[test]
    fn naca_leading_edge_radius_matches_curvature() {
        let c = NacaCoefficients::default();
        let t = 0.12;
        let r = naca_leading_edge_radius(&c, t);
        let mut prev = f64::INFINITY;
        for k in 6..12 {
            let x = 10f64.powi(-k);
            let (d1, d2) = naca_thickness_derivs(&c, t, x).unwrap();
            let rc = (1.0 + d1 * d1).powf(1.5) / d2.abs();
            let err = (rc - r).abs() / r;
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-4);
    }
}
