//! Cone program solver: lowers the canonical program to Clarabel, maps
//! statuses and duals back to named constraints, and provides closed-form
//! oracles for the unconstrained risk-adjusted problem.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assemble::{ConeBlock, ConeProgram};
use crate::error::{Error, Result};

/// Outcome of a cone solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Solve statistics reported alongside every solution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: u32,
    pub solve_time: f64,
    pub primal_residual: f64,
    pub duality_gap: f64,
}

/// Primal/dual solution of a [`ConeProgram`].
#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    /// Primal values for the full variable vector.
    pub primal: DVector<f64>,
    /// Dual value per constraint row, aligned with the program's rows.
    pub row_duals: DVector<f64>,
    /// Objective of the original maximization problem.
    pub objective: f64,
    pub stats: SolveStats,
}

impl ConeSolution {
    /// Duals for a named constraint, in the units of the user-level
    /// constraint function.
    pub fn duals_for(&self, prog: &ConeProgram, key: crate::assemble::ConstraintKey) -> Vec<f64> {
        prog.metadata()
            .iter()
            .find(|m| m.key == key)
            .map(|m| {
                (m.first_row..m.first_row + m.rows)
                    .map(|r| self.row_duals[r])
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Solve a canonical cone program with Clarabel.
///
/// Statuses other than `Optimal` are reported, never converted; callers
/// decide the fallback. Identical programs produce identical solutions.
pub fn solve(prog: &ConeProgram, tol: f64) -> Result<ConeSolution> {
    let n = prog.num_vars();
    let m = prog.num_rows();

    // Clarabel minimizes; negate the maximization objective.
    let q: Vec<f64> = {
        let mut q = vec![0.0; n];
        for &(col, val) in prog.objective() {
            q[col] -= val;
        }
        q
    };

    let a = triplets_to_csc(m, n, prog.row_triplets())?;
    let p = CscMatrix::new(n, n, vec![0; n + 1], vec![], vec![]);
    let b = prog.rhs().to_vec();

    let cones: Vec<SupportedConeT<f64>> = prog
        .blocks()
        .iter()
        .map(|blk| match *blk {
            ConeBlock::Zero(len) => SupportedConeT::ZeroConeT(len),
            ConeBlock::Nonnegative(len) => SupportedConeT::NonnegativeConeT(len),
            ConeBlock::SecondOrder(len) => SupportedConeT::SecondOrderConeT(len),
            ConeBlock::Power32 => SupportedConeT::PowerConeT(2.0 / 3.0),
        })
        .collect();

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(tol)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .max_iter(200)
        .build()
        .map_err(|e| Error::SolverSetup(e.to_string()))?;

    let start = Instant::now();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::SolverSetup(format!("{e:?}")))?;
    solver.solve();
    let elapsed = start.elapsed().as_secs_f64();

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        _ => SolveStatus::NumericalFailure,
    };

    let primal = DVector::from_vec(solver.solution.x.clone());
    let row_duals = DVector::from_vec(solver.solution.z.clone());
    let objective = -solver.solution.obj_val + prog.objective_constant();
    let gap = {
        let (p, d) = (solver.solution.obj_val, solver.solution.obj_val_dual);
        (p - d).abs() / f64::max(1.0, p.abs().min(d.abs()))
    };

    Ok(ConeSolution {
        status,
        primal,
        row_duals,
        objective,
        stats: SolveStats {
            iterations: solver.solution.iterations,
            solve_time: elapsed,
            primal_residual: solver.solution.r_prim,
            duality_gap: gap,
        },
    })
}

fn triplets_to_csc(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<CscMatrix<f64>> {
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(row, col, val) in triplets {
        if row >= m || col >= n {
            return Err(Error::SolverSetup(format!(
                "triplet ({row}, {col}) outside {m}x{n} matrix"
            )));
        }
        if val != 0.0 {
            by_col[col].push((row, val));
        }
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in by_col.iter_mut() {
        col.sort_by_key(|&(r, _)| r);
        // Merge duplicate entries.
        let mut last_row = usize::MAX;
        for &(r, v) in col.iter() {
            if r == last_row {
                *nzval.last_mut().unwrap() += v;
            } else {
                rowval.push(r);
                nzval.push(v);
                last_row = r;
            }
        }
        colptr.push(rowval.len());
    }
    Ok(CscMatrix::new(m, n, colptr, rowval, nzval))
}

/// Analytic solution of the unconstrained risk-adjusted problem
/// `maximize mu'w - gamma w'Sigma w  subject to 1'w = 1`:
/// `w* = (1/2gamma) Sigma^-1 (mu + nu* 1)` with
/// `nu* = (2gamma - 1'Sigma^-1 mu) / (1'Sigma^-1 1)`.
pub fn closed_form_unconstrained(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("risk aversion must be positive"));
    }
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "closed_form_unconstrained",
            expected: n,
            actual: sigma.nrows(),
        });
    }
    let chol = nalgebra::Cholesky::new(sigma.clone()).ok_or(Error::SingularMatrix)?;
    let sigma_inv_mu = chol.solve(mu);
    let ones = DVector::from_element(n, 1.0);
    let sigma_inv_one = chol.solve(&ones);
    let denom = ones.dot(&sigma_inv_one);
    if denom.abs() < f64::EPSILON {
        return Err(Error::SingularMatrix);
    }
    let nu = (2.0 * gamma - ones.dot(&sigma_inv_mu)) / denom;
    Ok((sigma_inv_mu + nu * sigma_inv_one) / (2.0 * gamma))
}

/// Mean returns for which the given fully-invested weights are optimal in
/// the risk-adjusted problem: `mu = 2 gamma Sigma w - nu 1` with the
/// convention `nu = 0`. Any `nu` recovers the same optimal portfolio.
pub fn implied_returns(
    w: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("risk aversion must be positive"));
    }
    if (w.sum() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("weights must sum to 1 for implied returns"));
    }
    if nalgebra::Cholesky::new(sigma.clone()).is_none() {
        return Err(Error::SingularMatrix);
    }
    Ok(2.0 * gamma * (sigma * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05
    }

    #[test]
    fn closed_form_identity_sigma_equal_weights() {
        let n = 4;
        let w = closed_form_unconstrained(
            &DVector::zeros(n),
            &DMatrix::identity(n, n),
            0.5,
        )
        .unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(w[i], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_weights_sum_to_one_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = 5;
            let sigma = random_spd(n, &mut rng);
            let mu = DVector::from_fn(n, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
            let gamma = rng.gen_range(0.5..5.0);
            let w = closed_form_unconstrained(&mu, &sigma, gamma).unwrap();
            assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-10);
            // KKT stationarity: mu - 2 gamma Sigma w + nu 1 = 0 for some nu.
            let grad = &mu - 2.0 * gamma * (&sigma * &w);
            let nu = -grad.mean();
            for i in 0..n {
                assert_abs_diff_eq!(grad[i] + nu, 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn implied_returns_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 6;
            let sigma = random_spd(n, &mut rng);
            let mut w = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..1.0));
            w /= w.sum();
            let gamma = rng.gen_range(0.5..4.0);
            let mu = implied_returns(&w, &sigma, gamma).unwrap();
            let back = closed_form_unconstrained(&mu, &sigma, gamma).unwrap();
            for i in 0..n {
                assert_abs_diff_eq!(back[i], w[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn implied_returns_symmetric_case_constant() {
        let n = 5;
        let w = DVector::from_element(n, 1.0 / n as f64);
        let mu = implied_returns(&w, &DMatrix::identity(n, n), 1.0).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(mu[i], 2.0 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn implied_returns_gamma_scaling_preserves_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4;
        let sigma = random_spd(n, &mut rng);
        let mut w = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        w /= w.sum();
        let mu1 = implied_returns(&w, &sigma, 1.0).unwrap();
        let mu2 = implied_returns(&w, &sigma, 2.0).unwrap();
        // Doubling gamma doubles the implied returns.
        for i in 0..n {
            assert_abs_diff_eq!(mu2[i], 2.0 * mu1[i], epsilon = 1e-12);
        }
        let back = closed_form_unconstrained(&mu2, &sigma, 2.0).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(back[i], w[i], epsilon = 1e-8);
        }
    }
}
