use std::fmt;

use serde::Serialize;

use super::MaskedOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nullspace {
    None,
    /// Project right-hand side and solution onto zero mean per fluid component.
    ProjectMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, relative residual {:.3e}{}",
            self.iterations,
            self.relative_residual,
            if self.converged { "" } else { " (not converged)" }
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub nullspace: Nullspace,
    /// Operator applied is `shift·I + A`.
    pub shift: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: 20_000,
            nullspace: Nullspace::None,
            shift: 0.0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients for `(shift·I + A) x = b`.
///
/// With [`Nullspace::ProjectMean`] the right-hand side is made compatible
/// first and the returned solution has zero mean on every fluid component.
pub fn cg_solve(op: &MaskedOperator, b: &[f64], opts: CgOptions) -> (Vec<f64>, SolveReport) {
    cg_solve_from(op, b, vec![0.0; op.len()], opts)
}

/// As [`cg_solve`], starting from `x0`.
pub fn cg_solve_from(
    op: &MaskedOperator,
    b: &[f64],
    x0: Vec<f64>,
    opts: CgOptions,
) -> (Vec<f64>, SolveReport) {
    let n = op.len();
    let mut rhs = b.to_vec();
    let project = opts.nullspace == Nullspace::ProjectMean;
    if project {
        op.project_mean(&mut rhs);
    }
    let bnorm = dot(&rhs, &rhs).sqrt();
    if bnorm == 0.0 {
        return (
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }

    let apply = |x: &[f64], y: &mut [f64]| {
        op.apply(x, y);
        if opts.shift != 0.0 {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += opts.shift * xi;
            }
        }
    };
    let inv_diag: Vec<f64> = op
        .diagonal()
        .iter()
        .map(|d| {
            let v = d + opts.shift;
            if v > 0.0 {
                1.0 / v
            } else {
                1.0
            }
        })
        .collect();

    let mut x = x0;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rnorm = dot(&r, &r).sqrt();
    let mut iterations = 0;

    while rnorm > opts.tol * bnorm && iterations < opts.max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if project {
            op.project_mean(&mut r);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rnorm = dot(&r, &r).sqrt();
        iterations += 1;
    }

    if project {
        op.project_mean(&mut x);
    }
    // true residual, not the recursively updated one
    apply(&x, &mut ax);
    let res: f64 = rhs
        .iter()
        .zip(&ax)
        .map(|(b, a)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let relative_residual = res / bnorm;
    (
        x,
        SolveReport {
            iterations,
            relative_residual,
            converged: relative_residual <= opts.tol,
        },
    )
}
