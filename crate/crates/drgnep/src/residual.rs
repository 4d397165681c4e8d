//! Nikaido-Isoda residual of the convexified game, per-agent dual
//! objectives, and the single-level objective they assemble into.
//!
//! With the auxiliary point `(tau', s', q)` frozen, agent i's deviation set
//! is the polyhedron
//!
//! ```text
//!     { y : H_i y <= g_i,  box,  A_bar_i^scaled y <= gs_i(x_-i, aux) },
//! ```
//!
//! and the residual is `V(x) = sum_i [ J_i(x) - min_y J_i(y, x_-i) ]`, a sum
//! of per-agent best-response gaps. Each gap is nonnegative whenever `x`
//! itself satisfies the frozen rows, and `V(x) = 0` characterizes an
//! equilibrium of the convexified game. (The fictitious extra agent that
//! owns the auxiliary variables has a constant objective, so its gap is
//! identically zero once the auxiliary point is chosen consistently; the
//! solver keeps it canonical, and this module sums over the real agents.)
//!
//! Lagrangian duality per agent gives
//!
//! ```text
//!     Jd_i(lambda) = -1/2 P*' Q_i^-1 P* - lambda' g*_i + r_i(x_-i),
//!     P* = p_i(x_-i) + H*_i' lambda,
//! ```
//!
//! with `H*_i = [H_i; box rows; A_bar_i^scaled]` and `lambda >= 0`. Weak
//! duality makes `F(x, lambda) = sum_i [J_i(x) - Jd_i(lambda_i)]` an upper
//! bound on `V(x)` that is exact at the best-response multipliers, which
//! turns equilibrium computation into minimizing the smooth `F`; the
//! analytic gradients below drive that search.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::Error;
use crate::game::GnepProblem;
use crate::qp;
use crate::reformulation::{AuxiliaryVars, BigMSystem};
use crate::Result;

/// Agent i's stacked constraint matrix `[H_i; box rows; A_bar_i^scaled]`
/// whose right side [`g_star`](Self::g_star) depends on the frozen rivals
/// and auxiliary point.
#[derive(Debug, Clone)]
pub struct StackedAgentSystem {
    pub agent: usize,
    pub h_star: DMatrix<f64>,
    local_rows: usize,
}

impl StackedAgentSystem {
    pub fn new(problem: &GnepProblem, system: &BigMSystem, agent: usize) -> Self {
        let (local, _) = problem.agents[agent].rows_with_box();
        let mk = system.stacked_rows();
        let n = problem.agent_dim(agent);
        let mut h_star = DMatrix::zeros(local.nrows() + mk, n);
        h_star.view_mut((0, 0), (local.nrows(), n)).copy_from(&local);
        h_star
            .view_mut((local.nrows(), 0), (mk, n))
            .copy_from(system.a_scaled(agent));
        StackedAgentSystem { agent, h_star, local_rows: local.nrows() }
    }

    /// Rows belonging to the private polyhedron and box.
    pub fn local_rows(&self) -> usize {
        self.local_rows
    }

    /// Right side `[g_i; box; gs_i]` at frozen `(x_-i, q, aux)`.
    pub fn g_star(
        &self,
        problem: &GnepProblem,
        system: &BigMSystem,
        x: &DVector<f64>,
        q: &[bool],
        aux: &AuxiliaryVars,
    ) -> DVector<f64> {
        let (_, local_rhs) = problem.agents[self.agent].rows_with_box();
        let shared = system.h2_rhs_for_agent(x, problem, self.agent, q, aux);
        let mut g = DVector::zeros(self.local_rows + shared.len());
        g.rows_mut(0, self.local_rows).copy_from(&local_rhs);
        g.rows_mut(self.local_rows, shared.len()).copy_from(&shared);
        g
    }
}

/// Multipliers of one agent's deviation problem, split into local and
/// shared rows. Both blocks are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVars {
    pub lambda_a: DVector<f64>,
    pub lambda_s: DVector<f64>,
}

impl DualVars {
    pub fn zeros(local_rows: usize, shared_rows: usize) -> Self {
        DualVars { lambda_a: DVector::zeros(local_rows), lambda_s: DVector::zeros(shared_rows) }
    }

    pub fn from_concat(all: &DVector<f64>, local_rows: usize) -> Self {
        DualVars {
            lambda_a: all.rows(0, local_rows).into_owned(),
            lambda_s: all.rows(local_rows, all.len() - local_rows).into_owned(),
        }
    }

    pub fn concat(&self) -> DVector<f64> {
        let n = self.lambda_a.len() + self.lambda_s.len();
        DVector::from_iterator(n, self.lambda_a.iter().chain(self.lambda_s.iter()).copied())
    }

    /// Componentwise clamp to the nonnegative orthant.
    pub fn clamp_nonnegative(&mut self) {
        self.lambda_a.iter_mut().for_each(|v| *v = v.max(0.0));
        self.lambda_s.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// One residual evaluation: the value, and per-agent best responses, gaps,
/// and multipliers.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// `sum(gaps)`.
    pub value: f64,
    pub best_responses: Vec<DVector<f64>>,
    /// `J_i(x) - J_i(y*_i, x_-i)`; nonnegative (up to QP tolerance) when x
    /// satisfies the frozen rows.
    pub gaps: Vec<f64>,
    pub duals: Vec<DualVars>,
}

/// Solve agent i's deviation QP at frozen `(x_-i, q, aux)`. Returns the
/// best response, the gap `J_i(x) - J_i(y*, x_-i)`, and the multipliers.
pub fn best_response(
    problem: &GnepProblem,
    system: &BigMSystem,
    stacked: &StackedAgentSystem,
    x: &DVector<f64>,
    q: &[bool],
    aux: &AuxiliaryVars,
) -> Result<(DVector<f64>, f64, DualVars)> {
    let i = stacked.agent;
    let others = problem.others(x, i);
    let a = &problem.agents[i];
    let c = a.price(&others);
    let g = stacked.g_star(problem, system, x, q, aux);
    let sol = qp::qp_solve(&a.q, &c, &stacked.h_star, &g)?;
    let y = sol.y;
    // The offset r_i(x_-i) cancels in the gap.
    let xi = problem.block(x, i);
    let own = 0.5 * xi.dot(&(&a.q * &xi)) + c.dot(&xi);
    let best = 0.5 * y.dot(&(&a.q * &y)) + c.dot(&y);
    let gap = own - best;
    Ok((y, gap, DualVars::from_concat(&sol.multipliers, stacked.local_rows())))
}

/// Evaluate the residual at `x` with the auxiliary point frozen: all agents'
/// deviation QPs against the same profile.
pub fn residual(
    problem: &GnepProblem,
    system: &BigMSystem,
    x: &DVector<f64>,
    q: &[bool],
    aux: &AuxiliaryVars,
) -> Result<ResidualReport> {
    let stackeds: Vec<StackedAgentSystem> = (0..problem.num_agents())
        .map(|i| StackedAgentSystem::new(problem, system, i))
        .collect();
    residual_with(problem, system, &stackeds, x, q, aux)
}

/// [`residual`] with caller-provided stacked systems (they depend only on
/// the problem, so solvers build them once).
pub fn residual_with(
    problem: &GnepProblem,
    system: &BigMSystem,
    stackeds: &[StackedAgentSystem],
    x: &DVector<f64>,
    q: &[bool],
    aux: &AuxiliaryVars,
) -> Result<ResidualReport> {
    let mut best_responses = Vec::with_capacity(stackeds.len());
    let mut gaps = Vec::with_capacity(stackeds.len());
    let mut duals = Vec::with_capacity(stackeds.len());
    for stacked in stackeds {
        let (y, gap, d) = best_response(problem, system, stacked, x, q, aux)?;
        best_responses.push(y);
        gaps.push(gap);
        duals.push(d);
    }
    Ok(ResidualReport { value: gaps.iter().sum(), best_responses, gaps, duals })
}

/// Agent i's dual objective at multipliers `lambda` (any nonnegative
/// vector): a lower bound on the deviation minimum, exact at the
/// best-response multipliers.
pub fn dual_objective(
    problem: &GnepProblem,
    system: &BigMSystem,
    stacked: &StackedAgentSystem,
    x: &DVector<f64>,
    q: &[bool],
    aux: &AuxiliaryVars,
    lambda: &DualVars,
) -> Result<f64> {
    let i = stacked.agent;
    let a = &problem.agents[i];
    let others = problem.others(x, i);
    let lam = lambda.concat();
    let p_star = a.price(&others) + stacked.h_star.tr_mul(&lam);
    let chol = Cholesky::new(a.q.clone())
        .ok_or_else(|| Error::Numerical("curvature lost definiteness".into()))?;
    let g = stacked.g_star(problem, system, x, q, aux);
    Ok(-0.5 * p_star.dot(&chol.solve(&p_star)) - lam.dot(&g) + a.offset(&others))
}

/// The single-level objective `F(x, lambda) = sum_i [J_i(x) -
/// Jd_i(lambda_i)]`: an upper bound on the residual, zero exactly at
/// equilibrium pairs.
pub fn minlp_objective(
    problem: &GnepProblem,
    system: &BigMSystem,
    stackeds: &[StackedAgentSystem],
    x: &DVector<f64>,
    q: &[bool],
    aux: &AuxiliaryVars,
    lambdas: &[DualVars],
) -> Result<f64> {
    let mut f = 0.0;
    for (stacked, lambda) in stackeds.iter().zip(lambdas) {
        f += problem.objective(stacked.agent, x)
            - dual_objective(problem, system, stacked, x, q, aux, lambda)?;
    }
    Ok(f)
}

/// Analytic gradient of [`minlp_objective`] in `x` (stacked) and each
/// agent's `lambda`. The auxiliary point is frozen data.
pub fn minlp_gradient(
    problem: &GnepProblem,
    system: &BigMSystem,
    stackeds: &[StackedAgentSystem],
    x: &DVector<f64>,
    q: &[bool],
    aux: &AuxiliaryVars,
    lambdas: &[DualVars],
) -> Result<(DVector<f64>, Vec<DualVars>)> {
    let n_agents = problem.num_agents();
    let mut grad_x = DVector::zeros(problem.total_dim());
    let mut grad_l = Vec::with_capacity(n_agents);

    // Per agent: Q_i^-1 P*_i, reused across blocks.
    let mut qinv_pstar = Vec::with_capacity(n_agents);
    for (stacked, lambda) in stackeds.iter().zip(lambdas) {
        let i = stacked.agent;
        let a = &problem.agents[i];
        let others = problem.others(x, i);
        let lam = lambda.concat();
        let p_star = a.price(&others) + stacked.h_star.tr_mul(&lam);
        let chol = Cholesky::new(a.q.clone())
            .ok_or_else(|| Error::Numerical("curvature lost definiteness".into()))?;
        let qp = chol.solve(&p_star);
        // lambda gradient: H* Q^-1 P* + g*.
        let g = stacked.g_star(problem, system, x, q, aux);
        let gl = &stacked.h_star * &qp + g;
        grad_l.push(DualVars::from_concat(&gl, stacked.local_rows()));
        qinv_pstar.push(qp);
    }

    for b in 0..n_agents {
        let nb = problem.agent_dim(b);
        let mut gb = problem.objective_grad(b, x);
        for i in 0..n_agents {
            if i == b {
                continue;
            }
            // Columns of P_i addressing agent b inside x_-i.
            let off = if b < i {
                problem.offset(b)
            } else {
                problem.offset(b) - problem.agent_dim(i)
            };
            let cols = problem.agents[i].p_cross.columns(off, nb);
            let xi = problem.block(x, i);
            gb += cols.tr_mul(&(&xi + &qinv_pstar[i]));
            gb -= system.a_scaled(b).tr_mul(&lambdas[i].lambda_s);
        }
        grad_x.rows_mut(problem.offset(b), nb).copy_from(&gb);
    }
    Ok((grad_x, grad_l))
}
