use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open (clamped) knot vector with its polynomial degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    values: Vec<f64>,
    degree: usize,
}

/// Nonzero basis functions at a parameter together with their derivatives.
///
/// `ders[d][r]` is the `d`-th derivative of basis function `first + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub first: usize,
    pub ders: Vec<Vec<f64>>,
}

impl KnotVector {
    pub fn new(values: Vec<f64>, degree: usize) -> Result<Self> {
        let n = values.len();
        if n < 2 * (degree + 1) {
            return Err(Error::Domain(format!(
                "knot vector of length {n} too short for degree {degree}"
            )));
        }
        if values.windows(2).any(|w| w[1] < w[0]) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "knot vector must be finite and nondecreasing".into(),
            ));
        }
        let (a, b) = (values[0], values[n - 1]);
        if b <= a {
            return Err(Error::Domain("knot vector has an empty range".into()));
        }
        let start = values.iter().take_while(|&&v| v == a).count();
        let end = values.iter().rev().take_while(|&&v| v == b).count();
        if start != degree + 1 || end != degree + 1 {
            return Err(Error::Domain(format!(
                "knot vector is not open: end multiplicities ({start}, {end}) for degree {degree}"
            )));
        }
        let kv = Self { values, degree };
        for u in kv.distinct_interior() {
            let m = kv.multiplicity(u);
            if m > degree.max(1) {
                return Err(Error::Multiplicity {
                    u,
                    multiplicity: m,
                    degree,
                });
            }
        }
        Ok(kv)
    }

    /// Open knot vector on `[0, 1]` with the given interior knots.
    pub fn open_uniform(degree: usize, interior: &[f64]) -> Result<Self> {
        let mut v = vec![0.0; degree + 1];
        v.extend_from_slice(interior);
        v.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(v, degree)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn multiplicity(&self, u: f64) -> usize {
        self.values.iter().filter(|&&v| v == u).count()
    }

    /// Distinct knots strictly inside the range.
    pub fn distinct_interior(&self) -> Vec<f64> {
        let (a, b) = (self.first(), self.last());
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.values {
            if v > a && v < b && out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    /// Distinct knots including the end values.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.values {
            if out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    /// Index `i` of the nonzero span `[u_i, u_{i+1})` containing `u`; the last
    /// nonempty span is returned at the right end.
    pub fn find_span(&self, u: f64) -> usize {
        let p = self.degree;
        let n = self.n_basis();
        if u >= self.values[n] {
            return n - 1;
        }
        if u <= self.values[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.values[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Span indices of all nonzero-measure knot intervals.
    pub fn spans(&self) -> Vec<usize> {
        let p = self.degree;
        (p..self.n_basis())
            .filter(|&i| self.values[i + 1] > self.values[i])
            .collect()
    }

    /// Greville abscissae, one per basis function. Degree zero uses span midpoints.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return self
                .values
                .windows(2)
                .map(|w| 0.5 * (w[0] + w[1]))
                .collect();
        }
        (0..self.n_basis())
            .map(|i| self.values[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Nonzero basis functions and derivatives at `u`, restricted to span `span`.
    pub fn eval_in_span(&self, span: usize, u: f64, num_derivs: usize) -> BasisEval {
        let p = self.degree;
        let k = &self.values;
        let nd = num_derivs.min(p);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; num_derivs + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0].iter_mut().for_each(|v| *v = 0.0);
            a[0][0] = 1.0;
            for kk in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - kk as isize;
                let pk = p - kk;
                if r >= kk {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize) - 1 <= pk as isize {
                    kk - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                    d += a[s2][kk] * ndu[r][pk];
                }
                ders[kk][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for kk in 1..=nd {
            for v in ders[kk].iter_mut() {
                *v *= fac;
            }
            fac *= (p - kk) as f64;
        }
        BasisEval {
            first: span - p,
            ders,
        }
    }
}

/// Largest degree supported by the allocation-free evaluation path.
pub const MAX_DEGREE: usize = 15;

impl KnotVector {
    /// Allocation-free evaluation of the `p+1` nonzero basis functions in `span`
    /// and their first derivatives, written to `n[..=p]` and `dn[..=p]`.
    pub fn eval_first_derivs(&self, span: usize, u: f64, n: &mut [f64], dn: &mut [f64]) {
        let p = self.degree;
        let k = &self.values;
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        let mut prev = [0.0; MAX_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=p {
            if j == p {
                prev[..p].copy_from_slice(&n[..p]);
            }
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        if p == 0 {
            dn[0] = 0.0;
            return;
        }
        let pf = p as f64;
        for r in 0..=p {
            let i = span - p + r;
            let mut d = 0.0;
            if r >= 1 {
                let den = k[i + p] - k[i];
                if den > 0.0 {
                    d += prev[r - 1] / den;
                }
            }
            if r < p {
                let den = k[i + p + 1] - k[i + 1];
                if den > 0.0 {
                    d -= prev[r] / den;
                }
            }
            dn[r] = pf * d;
        }
    }
}

/// Evaluates the nonzero basis functions of `knots` at `u` with `num_derivs` derivatives.
pub fn eval_basis(knots: &KnotVector, u: f64, num_derivs: usize) -> Result<BasisEval> {
    if !(u >= knots.first() && u <= knots.last()) {
        return Err(Error::Domain(format!(
            "parameter {u} outside knot range [{}, {}]",
            knots.first(),
            knots.last()
        )));
    }
    if num_derivs > knots.degree() {
        return Err(Error::Domain(format!(
            "requested {num_derivs} derivatives for degree {}",
            knots.degree()
        )));
    }
    Ok(knots.eval_in_span(knots.find_span(u), u, num_derivs))
}

/// Greville abscissae of an open knot vector.
pub fn greville_abscissae(knots: &KnotVector) -> Vec<f64> {
    knots.greville()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct Cox-de Boor recursion, right-continuous except at the final knot.
    fn cox_de_boor(k: &[f64], i: usize, p: usize, u: f64) -> f64 {
        if p == 0 {
            let last = *k.last().unwrap();
            let inside = (k[i] <= u && u < k[i + 1]) || (u == last && k[i] < u && k[i + 1] == last);
            return if inside { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if k[i + p] > k[i] {
            v += (u - k[i]) / (k[i + p] - k[i]) * cox_de_boor(k, i, p - 1, u);
        }
        if k[i + p + 1] > k[i + 1] {
            v += (k[i + p + 1] - u) / (k[i + p + 1] - k[i + 1]) * cox_de_boor(k, i + 1, p - 1, u);
        }
        v
    }

    #[test]
    fn bernstein_values() {
        let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        let b = eval_basis(&kv, 0.0, 0).unwrap();
        assert_eq!(b.ders[0], vec![1.0, 0.0, 0.0]);
        let b = eval_basis(&kv, 0.5, 0).unwrap();
        for (x, y) in b.ders[0].iter().zip([0.25, 0.5, 0.25]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_recursive_definition() {
        let k = vec![0., 0., 0., 0.5, 1., 1., 1.];
        let kv = KnotVector::new(k.clone(), 2).unwrap();
        for s in 0..=200 {
            let u = s as f64 / 200.0;
            let b = eval_basis(&kv, u, 0).unwrap();
            for i in 0..kv.n_basis() {
                let local = if i >= b.first && i <= b.first + 2 {
                    b.ders[0][i - b.first]
                } else {
                    0.0
                };
                assert!(
                    (local - cox_de_boor(&k, i, 2, u)).abs() < 1e-14,
                    "u={u} i={i}"
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kv = KnotVector::new(vec![0., 0., 0., 0., 0.3, 0.6, 0.6, 1., 1., 1., 1.], 3).unwrap();
        let h = 1e-6;
        for &u in &[0.1, 0.45, 0.7, 0.95] {
            let b = eval_basis(&kv, u, 2).unwrap();
            let bp = kv.eval_in_span(kv.find_span(u), u + h, 1);
            let bm = kv.eval_in_span(kv.find_span(u), u - h, 1);
            for r in 0..4 {
                let fd = (bp.ders[0][r] - bm.ders[0][r]) / (2.0 * h);
                assert!((fd - b.ders[1][r]).abs() < 1e-6);
                let fd2 = (bp.ders[1][r] - bm.ders[1][r]) / (2.0 * h);
                assert!((fd2 - b.ders[2][r]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn greville_examples() {
        let g = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2)
            .unwrap()
            .greville();
        assert_eq!(g, vec![0.0, 0.5, 1.0]);
        let g = KnotVector::new(vec![0., 0., 0., 0.5, 1., 1., 1.], 2)
            .unwrap()
            .greville();
        assert_eq!(g, vec![0.0, 0.25, 0.75, 1.0]);
        let g = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap().greville();
        assert_eq!(g, vec![0.0, 1.0]);
        let g = KnotVector::new(vec![0., 0.5, 1.], 0).unwrap().greville();
        assert_eq!(g, vec![0.25, 0.75]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KnotVector::new(vec![0., 0., 1., 1., 1.], 2).is_err());
        assert!(KnotVector::new(vec![0., 0., 0., 0.5, 0.5, 0.5, 1., 1., 1.], 2).is_err());
        let kv = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        assert!(eval_basis(&kv, 1.5, 0).is_err());
        assert!(eval_basis(&kv, 0.5, 2).is_err());
    }

    #[test]
    fn fast_path_agrees() {
        let kv = KnotVector::new(vec![0., 0., 0., 0., 0.3, 0.6, 0.6, 1., 1., 1., 1.], 3).unwrap();
        let mut n = [0.0; 4];
        let mut dn = [0.0; 4];
        for s in 0..=50 {
            let u = s as f64 / 50.0;
            let span = kv.find_span(u);
            let b = kv.eval_in_span(span, u, 1);
            kv.eval_first_derivs(span, u, &mut n, &mut dn);
            for r in 0..4 {
                assert!((n[r] - b.ders[0][r]).abs() < 1e-14);
                assert!((dn[r] - b.ders[1][r]).abs() < 1e-12);
            }
        }
    }
}
