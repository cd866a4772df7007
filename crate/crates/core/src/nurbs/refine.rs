use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::knots::KnotVector;
use super::patch::NurbsPatch;

type Hom = [f64; 4];

/// Boehm insertion of a single knot into a homogeneous curve.
fn insert_knot_curve(knots: &[f64], p: usize, ctrl: &[Hom], u: f64) -> (Vec<f64>, Vec<Hom>) {
    let n = ctrl.len();
    // span index k with knots[k] <= u < knots[k+1]
    let mut k = p;
    while k + 1 < knots.len() && knots[k + 1] <= u {
        k += 1;
    }
    let mut new_knots = Vec::with_capacity(knots.len() + 1);
    new_knots.extend_from_slice(&knots[..=k]);
    new_knots.push(u);
    new_knots.extend_from_slice(&knots[k + 1..]);
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i + p <= k {
            out.push(ctrl[i]);
        } else if i > k {
            out.push(ctrl[i - 1]);
        } else {
            let a = (u - knots[i]) / (knots[i + p] - knots[i]);
            let mut q = [0.0; 4];
            for c in 0..4 {
                q[c] = (1.0 - a) * ctrl[i - 1][c] + a * ctrl[i][c];
            }
            out.push(q);
        }
    }
    (new_knots, out)
}

fn validate_insertion(kv: &KnotVector, new: &[f64]) -> Result<()> {
    for &u in new {
        if !(u > kv.first() && u < kv.last()) {
            return Err(Error::Domain(format!(
                "inserted knot {u} not strictly inside [{}, {}]",
                kv.first(),
                kv.last()
            )));
        }
        let m = kv.multiplicity(u) + new.iter().filter(|&&v| v == u).count();
        if m > kv.degree() {
            return Err(Error::Multiplicity {
                u,
                multiplicity: m,
                degree: kv.degree(),
            });
        }
    }
    Ok(())
}

/// Rows of the homogeneous net along one direction.
fn rows(net: &[Hom], nx: usize, ny: usize, along_xi: bool) -> Vec<Vec<Hom>> {
    if along_xi {
        (0..ny)
            .map(|j| (0..nx).map(|i| net[i + nx * j]).collect())
            .collect()
    } else {
        (0..nx)
            .map(|i| (0..ny).map(|j| net[i + nx * j]).collect())
            .collect()
    }
}

fn assemble_rows(rows: &[Vec<Hom>], along_xi: bool) -> (Vec<Hom>, usize, usize) {
    let (a, b) = (rows.len(), rows[0].len());
    let (nx, ny) = if along_xi { (b, a) } else { (a, b) };
    let mut net = vec![[0.0; 4]; nx * ny];
    for (r, row) in rows.iter().enumerate() {
        for (s, h) in row.iter().enumerate() {
            let (i, j) = if along_xi { (s, r) } else { (r, s) };
            net[i + nx * j] = *h;
        }
    }
    (net, nx, ny)
}

/// Inserts knots in both parametric directions; the geometry map is unchanged.
pub fn h_refine(
    patch: &NurbsPatch,
    new_knots_xi: &[f64],
    new_knots_eta: &[f64],
) -> Result<NurbsPatch> {
    validate_insertion(&patch.knots_xi, new_knots_xi)?;
    validate_insertion(&patch.knots_eta, new_knots_eta)?;
    if new_knots_xi.is_empty() && new_knots_eta.is_empty() {
        return Ok(patch.clone());
    }
    let mut net = patch.homogeneous();
    let (mut nx, mut ny) = (patch.n_xi(), patch.n_eta());
    let mut kx = patch.knots_xi.values().to_vec();
    let mut ky = patch.knots_eta.values().to_vec();
    let (p, q) = patch.degrees();
    for (along_xi, new) in [(true, new_knots_xi), (false, new_knots_eta)] {
        for &u in new {
            let mut rs = rows(&net, nx, ny, along_xi);
            let mut knots_out = Vec::new();
            for row in rs.iter_mut() {
                let (k, r) = if along_xi {
                    insert_knot_curve(&kx, p, row, u)
                } else {
                    insert_knot_curve(&ky, q, row, u)
                };
                *row = r;
                knots_out = k;
            }
            if along_xi {
                kx = knots_out;
            } else {
                ky = knots_out;
            }
            let (n2, a, b) = assemble_rows(&rs, along_xi);
            net = n2;
            nx = a;
            ny = b;
        }
    }
    NurbsPatch::from_homogeneous(KnotVector::new(kx, p)?, KnotVector::new(ky, q)?, &net)
}

/// Midpoints of all nonzero spans.
pub fn span_midpoints(kv: &KnotVector) -> Vec<f64> {
    let b = kv.breakpoints();
    b.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Uniform refinement: every nonzero span is halved `times` times in both directions.
pub fn refine_uniform(patch: &NurbsPatch, times: usize) -> Result<NurbsPatch> {
    refine_uniform_with(patch, times, 1)
}

/// Uniform refinement inserting each midpoint `multiplicity` times, so new
/// knots carry continuity `p - multiplicity`.
pub fn refine_uniform_with(
    patch: &NurbsPatch,
    times: usize,
    multiplicity: usize,
) -> Result<NurbsPatch> {
    let mut out = patch.clone();
    let rep = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .flat_map(|u| std::iter::repeat_n(u, multiplicity))
            .collect()
    };
    for _ in 0..times {
        let mx = rep(span_midpoints(&out.knots_xi));
        let my = rep(span_midpoints(&out.knots_eta));
        out = h_refine(&out, &mx, &my)?;
    }
    Ok(out)
}

/// Knot vector of degree `p + t` with every distinct knot's multiplicity raised by `t`.
fn elevated_knots(kv: &KnotVector, t: usize) -> Result<KnotVector> {
    let mut v = Vec::new();
    for u in kv.breakpoints() {
        let m = kv.multiplicity(u) + t;
        v.extend(std::iter::repeat_n(u, m));
    }
    KnotVector::new(v, kv.degree() + t)
}

/// Re-represents each homogeneous row curve in the elevated space by
/// interpolation at the Greville abscissae of the new basis. The elevated space
/// contains the original curve, so the interpolant reproduces it exactly.
fn elevate_rows(kv: &KnotVector, new_kv: &KnotVector, rows: &[Vec<Hom>]) -> Result<Vec<Vec<Hom>>> {
    let g = new_kv.greville();
    let n = new_kv.n_basis();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (r, &u) in g.iter().enumerate() {
        let b = new_kv.eval_in_span(new_kv.find_span(u), u, 0);
        for (c, v) in b.ders[0].iter().enumerate() {
            a[(r, b.first + c)] = *v;
        }
    }
    let lu = a.lu();
    let mut rhs = DMatrix::<f64>::zeros(n, 4 * rows.len());
    for (r, &u) in g.iter().enumerate() {
        let b = kv.eval_in_span(kv.find_span(u), u, 0);
        for (ri, row) in rows.iter().enumerate() {
            for c in 0..4 {
                let mut s = 0.0;
                for (l, v) in b.ders[0].iter().enumerate() {
                    s += v * row[b.first + l][c];
                }
                rhs[(r, 4 * ri + c)] = s;
            }
        }
    }
    let sol = lu.solve(&rhs).ok_or_else(|| {
        Error::Solver("singular collocation matrix during degree elevation".into())
    })?;
    Ok((0..rows.len())
        .map(|ri| {
            (0..n)
                .map(|i| {
                    [
                        sol[(i, 4 * ri)],
                        sol[(i, 4 * ri + 1)],
                        sol[(i, 4 * ri + 2)],
                        sol[(i, 4 * ri + 3)],
                    ]
                })
                .collect()
        })
        .collect())
}

/// Raises the patch degrees to `(p_xi, p_eta)`, keeping the continuity at every knot.
pub fn elevate_degree(patch: &NurbsPatch, p_xi: usize, p_eta: usize) -> Result<NurbsPatch> {
    let (p, q) = patch.degrees();
    if p_xi < p || p_eta < q {
        return Err(Error::Domain(format!(
            "target degrees ({p_xi}, {p_eta}) below current ({p}, {q})"
        )));
    }
    if (p_xi, p_eta) == (p, q) {
        return Ok(patch.clone());
    }
    let mut net = patch.homogeneous();
    let (mut nx, mut ny) = (patch.n_xi(), patch.n_eta());
    let mut kx = patch.knots_xi.clone();
    let mut ky = patch.knots_eta.clone();
    if p_xi > p {
        let new_kv = elevated_knots(&kx, p_xi - p)?;
        let rs = elevate_rows(&kx, &new_kv, &rows(&net, nx, ny, true))?;
        let (n2, a, b) = assemble_rows(&rs, true);
        net = n2;
        nx = a;
        ny = b;
        kx = new_kv;
    }
    if p_eta > q {
        let new_kv = elevated_knots(&ky, p_eta - q)?;
        let rs = elevate_rows(&ky, &new_kv, &rows(&net, nx, ny, false))?;
        let (n2, _, _) = assemble_rows(&rs, false);
        net = n2;
        ky = new_kv;
    }
    NurbsPatch::from_homogeneous(kx, ky, &net)
}
