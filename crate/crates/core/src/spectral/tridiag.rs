//! Symmetric tridiagonal eigenproblems and general tridiagonal LU.

/// Symmetric tridiagonal matrix with diagonal `diag` and off-diagonal `off`.
#[derive(Clone, Debug)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert!(!diag.is_empty() && off.len() + 1 == diag.len());
        SymTridiagonal { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn pivmin(&self) -> f64 {
        let m = self.off.iter().fold(1.0f64, |a, e| a.max(e * e));
        f64::MIN_POSITIVE * m
    }

    /// Number of eigenvalues strictly below `x` (Sturm count).
    pub fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin();
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `m` smallest eigenvalues in ascending order, by bisection.
    pub fn smallest_eigenvalues(&self, m: usize) -> Vec<f64> {
        let m = m.min(self.len());
        let (gl, gu) = self.gershgorin();
        let span = (gu - gl).abs().max(gl.abs()).max(gu.abs()).max(1.0);
        let gl = gl - 1e-12 * span;
        let gu = gu + 1e-12 * span;
        let pivmin = self.pivmin();
        let mut out = Vec::with_capacity(m);
        let mut floor = gl;
        for k in 0..m {
            let mut lo = floor;
            let mut hi = gu;
            loop {
                let tol = 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pivmin;
                if hi - lo <= tol {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.count_below(mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let lam = 0.5 * (lo + hi);
            out.push(lam);
            floor = lo;
        }
        out
    }

    /// Eigenvector for an accurate eigenvalue estimate by inverse iteration.
    /// Returned with unit Euclidean norm.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.len();
        if n == 1 {
            return vec![1.0];
        }
        let dl: Vec<f64> = self.off.clone();
        let du: Vec<f64> = self.off.clone();
        let d: Vec<f64> = self.diag.iter().map(|v| v - lambda).collect();
        let scale = self
            .diag
            .iter()
            .chain(self.off.iter())
            .fold(lambda.abs(), |a, v| a.max(v.abs()));
        let lu = TridiagLu::factor_perturbed(dl, d, du, f64::EPSILON * scale.max(1.0));
        // Deterministic, non-degenerate start vector.
        let mut x: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i as f64 * 0.618_033_988_75).fract() - 0.5))
            .collect();
        for _ in 0..3 {
            lu.solve_in_place(&mut x);
            let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in x.iter_mut() {
                *v /= nrm;
            }
        }
        x
    }
}

/// LU factorization with partial pivoting of a general tridiagonal matrix.
#[derive(Clone, Debug)]
pub struct TridiagLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swap: Vec<bool>,
}

impl TridiagLu {
    /// `dl` is the sub-diagonal, `d` the diagonal, `du` the super-diagonal.
    /// Returns `None` on an exactly singular pivot.
    pub fn factor(dl: Vec<f64>, d: Vec<f64>, du: Vec<f64>) -> Option<Self> {
        let lu = Self::factor_perturbed(dl, d, du, 0.0);
        if lu.d.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            None
        } else {
            Some(lu)
        }
    }

    fn factor_perturbed(mut dl: Vec<f64>, mut d: Vec<f64>, mut du: Vec<f64>, tiny: f64) -> Self {
        let n = d.len();
        assert!(dl.len() + 1 == n && du.len() + 1 == n);
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swap = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swap[i] = true;
            }
        }
        if tiny > 0.0 {
            for v in d.iter_mut() {
                if v.abs() < tiny {
                    *v = if *v < 0.0 { -tiny } else { tiny };
                }
            }
        }
        TridiagLu {
            dl,
            d,
            du,
            du2,
            swap,
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(b.len(), n);
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}
