use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::analytic::MfsSolution;
use crate::geometry::GeometrySpec;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn all_formulations() -> Vec<BieFormulation> {
    [Discretization::Collocation, Discretization::Galerkin]
        .into_iter()
        .flat_map(|d| {
            BieKind::ALL
                .into_iter()
                .map(move |k| BieFormulation::new(k, d))
        })
        .collect()
}

fn sphere(p: Option<usize>, m: usize) -> SurfaceMesh {
    GeometrySpec::SpherePar1 { radius: 1.0 }.mesh(p, m).unwrap()
}

/// `assemble_many` per discretization, results in job order.
fn assemble_all(mesh: &SurfaceMesh, jobs: &[AssemblyJob]) -> Vec<BemSystem> {
    let cfg = QuadConfig::default();
    let mut out = Vec::new();
    for d in [Discretization::Collocation, Discretization::Galerkin] {
        let sub: Vec<AssemblyJob> = jobs
            .iter()
            .filter(|j| j.formulation.discretization == d)
            .cloned()
            .collect();
        if !sub.is_empty() {
            out.extend(assemble_many(mesh, &sub, &cfg).unwrap());
        }
    }
    out
}

fn rel_l2(mesh: &SurfaceMesh, u: &[Complex64], f: &MfsSolution) -> f64 {
    crate::postprocess::l2_surface_error(mesh, u, &|x| f.value(x))
        .unwrap()
        .relative
        .unwrap()
}

#[test]
fn incident_direction_examples() {
    let d = incident_direction(240.0, 30.0);
    let want = v3(0.4330127018922193, 0.75, -0.5);
    assert!((d - want).norm() < 1e-12, "{d:?}");
    assert!((incident_direction(0.0, 0.0) - v3(-1.0, 0.0, 0.0)).norm() < 1e-15);
    assert!((incident_direction(17.0, -63.0).norm() - 1.0).abs() < 1e-15);
}

#[test]
fn neumann_rigid_cancels_incident_flux() {
    let mesh = sphere(None, 1);
    let (k, amp) = (3.0, c(0.7, -0.2));
    let d = incident_direction(35.0, 20.0);
    let frame = mesh.patches[0].frame(0.3, 0.6).unwrap();
    let pinc = |x: &Vec3| amp * (I * k * d.dot(x)).exp();
    let h = 1e-6;
    let dn = (pinc(&(frame.point + frame.normal * h)) - pinc(&(frame.point - frame.normal * h)))
        / (2.0 * h);
    let g = neumann_rigid(k, amp, &d, &frame);
    assert!((g + dn).norm() < 1e-8, "{g} vs {dn}");
}

#[test]
fn formulation_labels_round_trip() {
    for f in all_formulations() {
        let s = f.to_string();
        let back: BieFormulation = s.parse().unwrap();
        assert_eq!(back, f, "{s}");
    }
    assert_eq!(
        "GBM".parse::<BieFormulation>().unwrap().discretization,
        Discretization::Galerkin
    );
    assert!("BM".parse::<BieFormulation>().is_err());
    assert!("CXBIE".parse::<BieFormulation>().is_err());
}

#[test]
fn collocation_points_cover_dofs() {
    let mesh = sphere(Some(2), 1);
    for needs_normal in [false, true] {
        let pts = collocation_points(&mesh, needs_normal).unwrap();
        assert_eq!(pts.len(), mesh.n_dofs);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(p.dof, i);
            assert!(!p.locs.is_empty());
        }
        let n_pert = pts.iter().filter(|p| p.perturbed).count();
        if needs_normal {
            assert!(n_pert > 0, "polar points need a normal");
        } else {
            assert_eq!(n_pert, 0);
        }
    }
}

#[test]
fn cube_collocation_points_are_corners() {
    let mesh = GeometrySpec::Cube { a: 1.0 }.mesh(Some(1), 1).unwrap();
    let pts = collocation_points(&mesh, false).unwrap();
    assert_eq!(pts.len(), 8);
    for p in &pts {
        let (e_patch, xi, eta) = p.locs[0];
        let e = mesh.locate(e_patch, xi, eta).unwrap();
        let x = mesh.element_point(e, xi, eta);
        for i in 0..3 {
            assert!((x[i].abs() - 0.5).abs() < 1e-12, "{x:?}");
        }
    }
}

#[test]
fn pulsating_sphere_is_reproduced() {
    // a point source at the centre has constant traces, which every degree-2
    // spline space contains
    let mesh = sphere(Some(2), 1);
    let k = 2.0;
    let field = MfsSolution::point(k);
    let jobs: Vec<AssemblyJob> = all_formulations()
        .into_iter()
        .map(|formulation| AssemblyJob {
            k,
            formulation,
            bc: BoundaryCondition::field(field.clone()),
        })
        .collect();
    for sys in assemble_all(&mesh, &jobs) {
        let sol = solve(&sys).unwrap();
        let err = rel_l2(&mesh, &sol.column(0), &field);
        assert!(err < 1e-5, "{}: {err:e}", sys.formulation);
    }
}

#[test]
fn systems_are_finite_and_consistent() {
    // the projection of a smooth exact solution nearly satisfies every system
    let mesh = sphere(Some(2), 2);
    let k = 1.5;
    let field = MfsSolution::cube_layout(k, 1.0);
    let ba = best_approximation(&mesh, |x| field.value(x), 2).unwrap();
    let u = DMatrix::from_column_slice(mesh.n_dofs, 1, &ba);
    let jobs: Vec<AssemblyJob> = all_formulations()
        .into_iter()
        .map(|formulation| AssemblyJob {
            k,
            formulation,
            bc: BoundaryCondition::field(field.clone()),
        })
        .collect();
    let systems = assemble_all(&mesh, &jobs);
    for sys in &systems {
        assert!(sys.is_finite(), "{}", sys.formulation);
        assert_eq!(sys.n_dofs(), mesh.n_dofs);
        let r = (&sys.matrix * &u - &sys.rhs).norm() / sys.rhs.norm();
        // hypersingular collocation rows see the projection error through a 1/h operator
        let hyper = sys.formulation.discretization == Discretization::Collocation
            && matches!(sys.formulation.kind, BieKind::Hbie | BieKind::Bm);
        let tol = if hyper { 0.5 } else { 0.02 };
        assert!(r < tol, "{}: residual {r:e}", sys.formulation);
    }
}

#[test]
fn batched_assembly_matches_single() {
    let mesh = sphere(Some(2), 1);
    let k = 2.5;
    let bc = BoundaryCondition::plane_wave(c(1.0, 0.0), incident_direction(240.0, 30.0));
    let forms = ["GCBIE", "GRCBIE2", "GBM", "GHBIE"].map(|s| s.parse::<BieFormulation>().unwrap());
    let jobs: Vec<AssemblyJob> = forms
        .iter()
        .map(|&formulation| AssemblyJob {
            k,
            formulation,
            bc: bc.clone(),
        })
        .collect();
    let cfg = QuadConfig::default();
    let many = assemble_many(&mesh, &jobs, &cfg).unwrap();
    for (f, sys) in forms.iter().zip(&many) {
        let one = assemble(&mesh, k, *f, bc.clone(), &cfg).unwrap();
        assert!(
            (&one.matrix - &sys.matrix).norm() <= 1e-12 * one.matrix.norm(),
            "{f}"
        );
        assert!(
            (&one.rhs - &sys.rhs).norm() <= 1e-12 * one.rhs.norm(),
            "{f}"
        );
        assert_eq!(one.n_qp1, sys.n_qp1);
    }
}

#[test]
fn rigid_sphere_collocation_matches_series() {
    let mesh = sphere(Some(2), 2);
    let (k, amp) = (1.0, c(1.0, 0.0));
    let d = incident_direction(240.0, 30.0);
    let exact = crate::analytic::RigidSphere::new(k, 1.0, amp, d).unwrap();
    let f: BieFormulation = "CCBIE".parse().unwrap();
    let sys = assemble(
        &mesh,
        k,
        f,
        BoundaryCondition::plane_wave(amp, d),
        &QuadConfig::default(),
    )
    .unwrap();
    let u = solve(&sys).unwrap().column(0);
    let err = crate::postprocess::l2_surface_error(&mesh, &u, &|x| exact.total(x).unwrap())
        .unwrap()
        .relative
        .unwrap();
    assert!(err < 2e-2, "{err:e}");
}

fn system(a: DMatrix<Complex64>, b: DMatrix<Complex64>) -> BemSystem {
    BemSystem {
        k: 1.0,
        formulation: "CCBIE".parse().unwrap(),
        matrix: a,
        rhs: b,
        n_qp1: 0,
    }
}

#[test]
fn solve_identity_and_random() {
    let b = DMatrix::from_fn(4, 2, |i, j| c(i as f64, j as f64));
    let sol = solve(&system(DMatrix::identity(4, 4), b.clone())).unwrap();
    assert_eq!(sol.coeffs, b);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 50;
    let a = DMatrix::from_fn(n, n, |i, j| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            + if i == j {
                c(n as f64, 0.0)
            } else {
                c(0.0, 0.0)
            }
    });
    let x = DMatrix::from_fn(n, 3, |_, _| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let sol = solve(&system(a.clone(), &a * &x)).unwrap();
    assert!((sol.coeffs - x).norm() < 1e-12);
    assert!(sol.residuals.iter().all(|r| *r < 1e-14));
}

#[test]
fn solve_rejects_bad_systems() {
    let z = DMatrix::<Complex64>::zeros(3, 3);
    assert!(matches!(
        solve(&system(z, DMatrix::zeros(3, 1))),
        Err(Error::Solver(_))
    ));
    assert!(solve(&system(DMatrix::identity(3, 3), DMatrix::zeros(2, 1))).is_err());
    let mut a = DMatrix::<Complex64>::identity(3, 3);
    a[(0, 1)] = c(f64::NAN, 0.0);
    assert!(solve(&system(a, DMatrix::zeros(3, 1))).is_err());
}

#[test]
fn best_approximation_reproduces_constants() {
    let mesh = GeometrySpec::Torus { r_o: 1.0, r_i: 0.5 }
        .mesh(None, 1)
        .unwrap();
    let u = best_approximation(&mesh, |_| c(2.0, -1.0), 0).unwrap();
    for v in u {
        assert!((v - c(2.0, -1.0)).norm() < 1e-10);
    }
}
