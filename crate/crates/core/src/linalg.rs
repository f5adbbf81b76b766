//! Dense linear algebra helpers: Lyapunov equations and eigenvalue bounds.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};

/// Solver for `A^T X + X A = C` with `A` fixed (Bartels-Stewart on the real
/// Schur form of `A`, which is computed once).
pub struct LyapunovSolver {
    u: DMatrix<f64>,
    t: DMatrix<f64>,
    blocks: Vec<(usize, usize)>,
}

impl LyapunovSolver {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() || n == 0 {
            return Err(Error::Dimension(format!(
                "Lyapunov matrix must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::LyapunovFailure("non-finite matrix entries".into()));
        }
        let schur = Schur::try_new(a.clone(), f64::EPSILON, 100 * n.max(10))
            .ok_or_else(|| Error::LyapunovFailure("Schur decomposition did not converge".into()))?;
        let (u, mut t) = schur.unpack();
        let mut blocks = Vec::new();
        let mut k = 0;
        while k < n {
            if k + 1 < n {
                let sub = t[(k + 1, k)];
                let tiny = f64::EPSILON * (t[(k, k)].abs() + t[(k + 1, k + 1)].abs());
                if sub.abs() > tiny {
                    blocks.push((k, 2));
                    k += 2;
                    continue;
                }
                t[(k + 1, k)] = 0.0;
            }
            blocks.push((k, 1));
            k += 1;
        }
        Ok(LyapunovSolver { u, t, blocks })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Solves `A^T X + X A = C`; the result is symmetrized when `C` is.
    pub fn solve(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if c.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "right-hand side is {}x{}, expected {n}x{n}",
                c.nrows(),
                c.ncols()
            )));
        }
        let t = &self.t;
        let ct = self.u.transpose() * c * &self.u;
        let mut y = DMatrix::<f64>::zeros(n, n);
        for &(si, pi) in &self.blocks {
            for &(sj, pj) in &self.blocks {
                let mut rhs = ct.view((si, sj), (pi, pj)).clone_owned();
                if si > 0 {
                    let tki = t.view((0, si), (si, pi));
                    let ykj = y.view((0, sj), (si, pj));
                    rhs -= tki.transpose() * ykj;
                }
                if sj > 0 {
                    let yil = y.view((si, 0), (pi, sj));
                    let tlj = t.view((0, sj), (sj, pj));
                    rhs -= yil * tlj;
                }
                let tii = t.view((si, si), (pi, pi));
                let tjj = t.view((sj, sj), (pj, pj));
                // vec(T_ii^T Y + Y T_jj) = (I kron T_ii^T + T_jj^T kron I) vec(Y)
                let m = pi * pj;
                let mut k = DMatrix::<f64>::zeros(m, m);
                for c in 0..pj {
                    for r in 0..pi {
                        let row = c * pi + r;
                        for r2 in 0..pi {
                            k[(row, c * pi + r2)] += tii[(r2, r)];
                        }
                        for c2 in 0..pj {
                            k[(row, c2 * pi + r)] += tjj[(c2, c)];
                        }
                    }
                }
                let b = DVector::from_iterator(m, rhs.iter().copied());
                let sol = k.lu().solve(&b).ok_or_else(|| {
                    Error::LyapunovFailure("A and -A share an eigenvalue".into())
                })?;
                for c in 0..pj {
                    for r in 0..pi {
                        y[(si + r, sj + c)] = sol[c * pi + r];
                    }
                }
            }
        }
        let x = &self.u * y * self.u.transpose();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LyapunovFailure("solution is not finite".into()));
        }
        Ok(x)
    }
}

/// Solves `A^T X + X A = C`.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    LyapunovSolver::new(a)?.solve(c)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// `-inf` for an empty matrix.
pub fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// `+inf` for an empty matrix.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Largest real part of the eigenvalues of a general square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, z| a.max(z.re))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kron_oracle(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let k = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
        let b = DVector::from_iterator(n * n, c.iter().copied());
        let x = k.lu().solve(&b).unwrap();
        DMatrix::from_iterator(n, n, x.iter().copied())
    }

    #[test]
    fn matches_kronecker_oracle_with_complex_pairs() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 3.0, 0.2, 0.0, -3.0, -1.0, 0.5, 0.1, 0.0, 0.3, -2.0, 0.7, 0.4, 0.0, -0.6,
                -2.5,
            ],
        );
        let c = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.1, 0.0, 0.3, 0.1, 1.0, 0.2, 0.0, 0.0, 0.2, 3.0, 0.4, 0.3, 0.0, 0.4, 1.5,
            ],
        );
        let x = solve_lyapunov(&a, &c).unwrap();
        let oracle = kron_oracle(&a, &c);
        assert!((&x - &oracle).amax() < 1e-11);
    }

    #[test]
    fn stable_matrix_gives_positive_definite_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -2.0]);
        let c = -DMatrix::<f64>::identity(2, 2);
        let x = solve_lyapunov(&a, &c).unwrap();
        assert!(sym_min_eigenvalue(&x) > 0.0);
        let res = a.transpose() * &x + &x * &a - &c;
        assert!(res.amax() < 1e-12);
    }

    #[test]
    fn abscissa_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -2.0, -0.5]);
        assert!((spectral_abscissa(&a) + 0.5).abs() < 1e-12);
    }
}
