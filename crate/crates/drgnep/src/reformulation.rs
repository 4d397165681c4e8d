//! Exact mixed-integer reformulation of the distributionally robust chance
//! constraint.
//!
//! The feasibility test "distance mass >= theta*K" is equivalent, after
//! scaling the certificate by `||beta||_*` (`tau' = tau ||beta||_*`,
//! `s' = s ||beta||_*`), to the existence of `(tau', s', q)` with binary `q`
//! satisfying
//!
//! ```text
//!   (h1)  eK tau' - sum(s') >= theta K ||beta||_*
//!   (h2)  scale_j (beta_j xi_k + b_j - A_j x) + M q_k >= tau' - s'_k   (all k, j)
//!   (h3)  M (1 - q_k) >= tau' - s'_k                                  (all k)
//!   (h4)  s' >= 0
//!   (h5)  q in {0,1}^K
//! ```
//!
//! where `scale_j = ||beta||_* / ||beta_j||_*` makes the scalar substitution
//! exact even when rows of `beta` have unequal dual norms (for uniform rows
//! every `scale_j` is 1 and the rows appear verbatim). `q_k = 1` deactivates
//! sample k's rows through the big constant `M`; the matching constraint is
//! then carried by (h3). The stacked data uses Kronecker blocks
//! `beta_bar = I_K (x) beta`, `b_bar = e_K (x) b`, `A_bar_i = e_K (x) A_i`,
//! `E_bar = I_K (x) e_m`.
//!
//! For fixed `x` and fixed node `q`, the best achievable left side of (h1)
//! has a closed form: with row bounds
//! `ub_k = min(min_j scale_j(...) + M q_k, M (1 - q_k))`, the optimum of
//! `eK tau' - sum(s')` over (h2)-(h4) equals the eps*K-smallest mass of the
//! `ub` values. Everything downstream (feasibility, node pruning, witness
//! construction) reuses that one formula.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::drcc::{value_mass, EpsK, TOL_FEAS};
use crate::error::Error;
use crate::game::GnepProblem;
use crate::Result;

/// Enumerate-mode cap on K (2^12 nodes, each closed-form).
pub const ENUM_CAP: usize = 12;
/// Vertex-diagnostic cap on K.
pub const VERTEX_CAP: usize = 3;
/// Hard cap on stacked rows m*K.
pub const STACKED_CAP: usize = 20_000;
/// Safety factor applied to the interval bound for M.
pub const BIG_M_SAFETY: f64 = 1.1;

/// Scaled certificate variables `(tau', s')` (primed = multiplied by
/// `||beta||_*` relative to the distance-space certificate).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryVars {
    pub tau: f64,
    pub s: DVector<f64>,
}

/// Witness returned by [`BigMSystem::mi_feasible`].
#[derive(Debug, Clone)]
pub struct MiFeasibility {
    pub feasible: bool,
    /// Candidate row-deactivation pattern (the best one found).
    pub q: Vec<bool>,
    /// Verified auxiliary witness; present only when feasible.
    pub aux: Option<AuxiliaryVars>,
    /// Best achievable (h1) left side over all nodes.
    pub best_value: f64,
}

/// How [`BigMSystem::mi_feasible`] establishes its verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiMode {
    /// Try every `q` in {0,1}^K (K <= [`ENUM_CAP`]); each node's continuous
    /// part is closed-form.
    Enumerate,
    /// Build `(tau', s', q)` from the scaled distance certificate and verify
    /// (h1)-(h5) directly.
    Certificate,
}

/// The assembled stacked system.
#[derive(Debug, Clone)]
pub struct BigMSystem {
    /// `I_K (x) beta`, unscaled (mK x lK).
    pub beta_bar: DMatrix<f64>,
    /// `e_K (x) b`, unscaled (mK).
    pub b_bar: DVector<f64>,
    /// Per agent: `e_K (x) A_i`, unscaled (mK x n_i).
    pub a_bar: Vec<DMatrix<f64>>,
    /// `I_K (x) e_m` (mK x K): row (k,j) -> column k.
    pub e_bar: DMatrix<f64>,
    /// Row deactivation constant.
    pub big_m: f64,
    /// Per base row j: `||beta||_* / ||beta_j||_*`.
    pub row_scales: DVector<f64>,
    /// The scalar `||beta||_*` (max over rows).
    pub beta_dual: f64,
    /// Snapped integral/fractional split of eps*K.
    pub eps_k: EpsK,
    /// Right side of (h1): `theta * K * ||beta||_*`.
    pub theta_k_scaled: f64,
    k: usize,
    m: usize,
    /// Scaled constants: entry (k,j) = `scale_j (beta_j xi_k + b_j)`.
    xi_scaled: DVector<f64>,
    /// Per agent, rows scaled by `scale_j`.
    a_scaled: Vec<DMatrix<f64>>,
    /// All agents' scaled blocks side by side (mK x n).
    a_scaled_all: DMatrix<f64>,
}

/// Build the stacked system for a problem. `big_m = None` computes a valid
/// constant from the box hull via [`compute_big_m`].
pub fn assemble(problem: &GnepProblem, big_m: Option<f64>) -> Result<BigMSystem> {
    let drcc = &problem.drcc;
    let m = drcc.rows();
    let l = drcc.samples.dim();
    let k = drcc.samples.len();
    if m * k > STACKED_CAP {
        return Err(Error::TooLarge { size: m * k, cap: STACKED_CAP });
    }

    let mut beta_bar = DMatrix::zeros(m * k, l * k);
    let mut b_bar = DVector::zeros(m * k);
    let mut e_bar = DMatrix::zeros(m * k, k);
    for kk in 0..k {
        beta_bar.view_mut((kk * m, kk * l), (m, l)).copy_from(&drcc.beta);
        b_bar.rows_mut(kk * m, m).copy_from(&drcc.b);
        for j in 0..m {
            e_bar[(kk * m + j, kk)] = 1.0;
        }
    }

    let beta_dual = drcc.beta_dual_norm();
    let norms = drcc.row_dual_norms();
    let row_scales = DVector::from_iterator(m, norms.iter().map(|nj| beta_dual / nj));

    let mut a_bar = Vec::with_capacity(problem.num_agents());
    let mut a_scaled = Vec::with_capacity(problem.num_agents());
    for i in 0..problem.num_agents() {
        let ni = problem.agent_dim(i);
        let block = drcc.a.columns(problem.offset(i), ni).into_owned();
        let mut bar = DMatrix::zeros(m * k, ni);
        let mut bar_s = DMatrix::zeros(m * k, ni);
        for kk in 0..k {
            bar.view_mut((kk * m, 0), (m, ni)).copy_from(&block);
            for j in 0..m {
                let mut row = block.row(j).into_owned();
                row *= row_scales[j];
                bar_s.row_mut(kk * m + j).copy_from(&row);
            }
        }
        a_bar.push(bar);
        a_scaled.push(bar_s);
    }
    let n = problem.total_dim();
    let mut a_scaled_all = DMatrix::zeros(m * k, n);
    for i in 0..problem.num_agents() {
        a_scaled_all
            .view_mut((0, problem.offset(i)), (m * k, problem.agent_dim(i)))
            .copy_from(&a_scaled[i]);
    }

    let mut xi_scaled = DVector::zeros(m * k);
    for kk in 0..k {
        let term = &drcc.beta * drcc.samples.get(kk) + &drcc.b;
        for j in 0..m {
            xi_scaled[kk * m + j] = row_scales[j] * term[j];
        }
    }

    let big_m = match big_m {
        Some(v) => {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidData(format!("big-M must be finite and positive, got {v}")));
            }
            v
        }
        None => compute_big_m(problem),
    };

    Ok(BigMSystem {
        beta_bar,
        b_bar,
        a_bar,
        e_bar,
        big_m,
        row_scales,
        beta_dual,
        eps_k: EpsK::new(drcc.epsilon, k),
        theta_k_scaled: drcc.theta * k as f64 * beta_dual,
        k,
        m,
        xi_scaled,
        a_scaled,
        a_scaled_all,
    })
}

/// Interval analysis over the box hull shared by [`compute_big_m`] and the
/// solver's node pruning: per sample, an upper bound on the minimum scaled
/// row value (not clamped at zero), plus the global minimum row value.
fn interval_row_analysis(problem: &GnepProblem) -> (Vec<f64>, f64) {
    let drcc = &problem.drcc;
    let hull = problem.box_hull();
    let m = drcc.rows();
    let k = drcc.samples.len();
    let n = drcc.decision_dim();
    let beta_dual = drcc.beta_dual_norm();
    let norms = drcc.row_dual_norms();

    // Per base row j: interval of scale_j * A_j x over the box.
    let mut row_lo = vec![0.0f64; m];
    let mut row_hi = vec![0.0f64; m];
    for j in 0..m {
        let scale = beta_dual / norms[j];
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for c in 0..n {
            let a = scale * drcc.a[(j, c)];
            if a >= 0.0 {
                lo += a * hull.lower[c];
                hi += a * hull.upper[c];
            } else {
                lo += a * hull.upper[c];
                hi += a * hull.lower[c];
            }
        }
        row_lo[j] = lo;
        row_hi[j] = hi;
    }

    let mut per_sample = Vec::with_capacity(k);
    let mut row_min = f64::INFINITY;
    for kk in 0..k {
        let term = &drcc.beta * drcc.samples.get(kk) + &drcc.b;
        let mut bound_k = f64::INFINITY;
        for j in 0..m {
            let scale = beta_dual / norms[j];
            let c_kj = scale * term[j];
            bound_k = bound_k.min(c_kj - row_lo[j]); // max over box of row value
            row_min = row_min.min(c_kj - row_hi[j]); // min over box of row value
        }
        per_sample.push(bound_k);
    }
    (per_sample, row_min)
}

/// Per sample, an upper bound (over the whole box hull) on the minimum
/// scaled row value: no decision in the box can push sample k's scaled
/// distance above this. Used for sound node pruning.
pub fn sample_interval_bounds(problem: &GnepProblem) -> Vec<f64> {
    interval_row_analysis(problem).0
}

/// Valid deactivation constant from interval arithmetic over the box hull:
/// `M = 1.1 * max(tau'_max, tau'_max - min row value)`, floored at 1 so a
/// degenerate all-zero system still has a usable constant. Any larger M
/// keeps every (h1)-(h5) verdict unchanged.
pub fn compute_big_m(problem: &GnepProblem) -> f64 {
    let (per_sample, row_min) = interval_row_analysis(problem);
    let tau_max = per_sample.iter().fold(0.0f64, |acc, b| acc.max(b.max(0.0)));
    (BIG_M_SAFETY * tau_max.max(tau_max - row_min)).max(1.0)
}

impl BigMSystem {
    /// Number of samples K.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Base constraint rows m.
    pub fn base_rows(&self) -> usize {
        self.m
    }

    /// Stacked row count m*K.
    pub fn stacked_rows(&self) -> usize {
        self.m * self.k
    }

    /// Agent i's scaled stacked block (mK x n_i).
    pub fn a_scaled(&self, agent: usize) -> &DMatrix<f64> {
        &self.a_scaled[agent]
    }

    /// All agents' scaled blocks side by side (mK x n).
    pub fn a_scaled_all(&self) -> &DMatrix<f64> {
        &self.a_scaled_all
    }

    /// Scaled constants `scale_j (beta_j xi_k + b_j)` (mK).
    pub fn xi_scaled(&self) -> &DVector<f64> {
        &self.xi_scaled
    }

    /// Scaled (h2) row values at a stacked decision:
    /// entry (k,j) = `scale_j (beta_j xi_k + b_j - A_j x)`.
    pub fn scaled_inside(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.xi_scaled - &self.a_scaled_all * x
    }

    /// Per sample k: the minimum scaled row value (negative = violation
    /// depth; positive part = `||beta||_*` times the sample distance).
    pub fn sample_mins(&self, x: &DVector<f64>) -> DVector<f64> {
        let inside = self.scaled_inside(x);
        DVector::from_iterator(
            self.k,
            (0..self.k).map(|kk| {
                (0..self.m).map(|j| inside[kk * self.m + j]).fold(f64::INFINITY, f64::min)
            }),
        )
    }

    /// Scaled sample distances `||beta||_* * d_k`.
    pub fn scaled_distances(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sample_mins(x).map(|v| v.max(0.0))
    }

    /// Per sample upper bound on `tau' - s'_k` implied by (h2) and (h3) at
    /// node `q`: `ub_k = min(min_row_k + M q_k, M (1 - q_k))`.
    pub fn node_upper_bounds(&self, x: &DVector<f64>, q: &[bool]) -> DVector<f64> {
        let mins = self.sample_mins(x);
        self.bounds_from_mins(&mins, q)
    }

    fn bounds_from_mins(&self, mins: &DVector<f64>, q: &[bool]) -> DVector<f64> {
        DVector::from_iterator(
            self.k,
            (0..self.k).map(|kk| {
                if q[kk] {
                    (mins[kk] + self.big_m).min(0.0)
                } else {
                    mins[kk].min(self.big_m)
                }
            }),
        )
    }

    /// Best achievable (h1) left side at node `q`: the eps*K mass of the
    /// per-sample bounds.
    pub fn node_value(&self, x: &DVector<f64>, q: &[bool]) -> f64 {
        value_mass(self.node_upper_bounds(x, q).as_slice(), self.eps_k)
    }

    /// The node maximizing [`node_value`](Self::node_value): deactivate
    /// exactly the samples whose minimum row value is negative (distance
    /// zero with violation depth). Monotonicity of the mass in each bound
    /// makes this the argmax over all 2^K nodes.
    pub fn witness_q(&self, x: &DVector<f64>) -> Vec<bool> {
        self.sample_mins(x).iter().map(|v| *v < 0.0).collect()
    }

    /// Dual-optimal auxiliary point of a node: `tau'` at the
    /// (floor(eK)+1)-th smallest bound, `s'_k = (tau' - ub_k)^+`. Maximizes
    /// the (h1) left side; pins the critical rows tight.
    pub fn node_dual_aux(&self, x: &DVector<f64>, q: &[bool]) -> AuxiliaryVars {
        let ub = self.node_upper_bounds(x, q);
        let mut sorted: Vec<f64> = ub.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let tau = sorted[self.eps_k.floor.min(self.k - 1)];
        let s = DVector::from_iterator(self.k, ub.iter().map(|u| (tau - u).max(0.0)));
        AuxiliaryVars { tau, s }
    }

    /// Canonical slack-maximizing auxiliary point of a node, with (h1) held
    /// exactly tight: the uniform point `tau' = thetaK||beta||_*/(eps K)`,
    /// `s' = 0` when every bound clears it, otherwise the dual-optimal point
    /// shifted down so the (h1) surplus is zero. `None` when the node cannot
    /// reach the (h1) threshold at this `x`.
    pub fn node_slack_aux(&self, x: &DVector<f64>, q: &[bool]) -> Option<AuxiliaryVars> {
        let ub = self.node_upper_bounds(x, q);
        let target = self.theta_k_scaled;
        let ek = self.eps_k.value();
        let scale = 1.0 + target.abs();

        let fair = target / ek;
        let min_ub = ub.iter().copied().fold(f64::INFINITY, f64::min);
        if fair <= min_ub {
            return Some(AuxiliaryVars { tau: fair, s: DVector::zeros(self.k) });
        }

        let mass = value_mass(ub.as_slice(), self.eps_k);
        if mass < target - 1e-12 * scale {
            return None;
        }
        let mut sorted: Vec<f64> = ub.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let tau_star = sorted[self.eps_k.floor.min(self.k - 1)];
        let delta = ((mass - target) / ek).max(0.0);
        let s = DVector::from_iterator(self.k, ub.iter().map(|u| (tau_star - u).max(0.0)));
        Some(AuxiliaryVars { tau: tau_star - delta, s })
    }

    /// Maximum violation of (h1)-(h4) at `(x, q, aux)`; 0 when satisfied.
    pub fn h_violation(&self, x: &DVector<f64>, q: &[bool], aux: &AuxiliaryVars) -> f64 {
        let inside = self.scaled_inside(x);
        let mut worst = (self.theta_k_scaled - (self.eps_k.value() * aux.tau - aux.s.sum()))
            .max(0.0); // h1
        for kk in 0..self.k {
            let qf = if q[kk] { 1.0 } else { 0.0 };
            for j in 0..self.m {
                worst = worst
                    .max(aux.tau - aux.s[kk] - inside[kk * self.m + j] - self.big_m * qf); // h2
            }
            worst = worst.max(aux.tau - aux.s[kk] - self.big_m * (1.0 - qf)); // h3
            worst = worst.max(-aux.s[kk]); // h4
        }
        worst.max(0.0)
    }

    /// Mixed-integer feasibility of `x`: does some `(tau', s', q)` satisfy
    /// (h1)-(h5)? See [`MiMode`] for the two strategies.
    pub fn mi_feasible(&self, x: &DVector<f64>, mode: MiMode) -> Result<MiFeasibility> {
        let target = self.theta_k_scaled;
        // Same relative slack as the direct distance-space test.
        let tol = TOL_FEAS * self.beta_dual;
        match mode {
            MiMode::Enumerate => {
                if self.k > ENUM_CAP {
                    return Err(Error::TooLarge { size: self.k, cap: ENUM_CAP });
                }
                let mins = self.sample_mins(x);
                // Deterministic max over all nodes: value, then fewer
                // deactivated rows, then lower mask.
                let best = (0u64..1u64 << self.k)
                    .into_par_iter()
                    .map(|mask| {
                        let q: Vec<bool> = (0..self.k).map(|kk| mask >> kk & 1 == 1).collect();
                        let ub = self.bounds_from_mins(&mins, &q);
                        let value = value_mass(ub.as_slice(), self.eps_k);
                        (value, mask.count_ones(), mask, q)
                    })
                    .reduce(
                        || (f64::NEG_INFINITY, u32::MAX, u64::MAX, Vec::new()),
                        |a, b| {
                            let better = b.0 > a.0
                                || (b.0 == a.0 && (b.1 < a.1 || (b.1 == a.1 && b.2 < a.2)));
                            if better {
                                b
                            } else {
                                a
                            }
                        },
                    );
                let (best_value, _, _, q) = best;
                let feasible = best_value >= target - tol;
                let aux = feasible.then(|| self.node_dual_aux(x, &q));
                Ok(MiFeasibility { feasible, q, aux, best_value })
            }
            MiMode::Certificate => {
                let mins = self.sample_mins(x);
                let q: Vec<bool> = mins.iter().map(|v| *v < 0.0).collect();
                let d = mins.map(|v| v.max(0.0));
                let mut sorted: Vec<f64> = d.iter().copied().collect();
                sorted.sort_by(f64::total_cmp);
                let tau = sorted[self.eps_k.floor.min(self.k - 1)];
                let s = DVector::from_iterator(self.k, d.iter().map(|dk| (tau - dk).max(0.0)));
                let aux = AuxiliaryVars { tau, s };
                let value = self.eps_k.value() * aux.tau - aux.s.sum();
                let feasible = value >= target - tol
                    && self.h_violation(x, &q, &aux) <= 1e-9 * (1.0 + self.big_m);
                Ok(MiFeasibility {
                    feasible,
                    q,
                    aux: feasible.then_some(aux),
                    best_value: value,
                })
            }
        }
    }

    /// Right-hand side of agent i's stacked shared rows in a deviation
    /// problem: `A_bar_i^scaled y_i <= rhs` with the other agents, the node,
    /// and the auxiliary point frozen.
    pub fn h2_rhs_for_agent(
        &self,
        x: &DVector<f64>,
        problem: &GnepProblem,
        agent: usize,
        q: &[bool],
        aux: &AuxiliaryVars,
    ) -> DVector<f64> {
        let mut rhs = self.xi_scaled.clone();
        for j in 0..problem.num_agents() {
            if j != agent {
                rhs -= &self.a_scaled[j] * problem.block(x, j);
            }
        }
        for kk in 0..self.k {
            let add = if q[kk] { self.big_m } else { 0.0 } + aux.s[kk] - aux.tau;
            for j in 0..self.m {
                rhs[kk * self.m + j] += add;
            }
        }
        rhs
    }

    /// Inequality rows of the node polyhedron over the stacked variable
    /// `v = (x, tau', s')` for fixed `q`: all agents' private rows and
    /// boxes, (h2), (h3), (h1), (h4). Returns `(G, h)` with `G v <= h`.
    pub fn node_polyhedron(
        &self,
        problem: &GnepProblem,
        q: &[bool],
    ) -> (DMatrix<f64>, DVector<f64>) {
        let n = problem.total_dim();
        let mk = self.stacked_rows();
        let kk = self.k;
        let dim = n + 1 + kk;
        let local_rows: usize =
            (0..problem.num_agents()).map(|i| problem.agents[i].n_private_rows() + 2 * problem.agent_dim(i)).sum();
        let total = local_rows + mk + kk + 1 + kk;
        let mut g = DMatrix::zeros(total, dim);
        let mut h = DVector::zeros(total);
        let mut r = 0;
        for i in 0..problem.num_agents() {
            let (rows, rhs) = problem.agents[i].rows_with_box();
            let nr = rows.nrows();
            g.view_mut((r, problem.offset(i)), (nr, problem.agent_dim(i))).copy_from(&rows);
            h.rows_mut(r, nr).copy_from(&rhs);
            r += nr;
        }
        // h2: A_scaled x + tau' - s'_k <= xi_scaled + M q_k
        for row in 0..mk {
            let sample = row / self.m;
            g.view_mut((r + row, 0), (1, n)).copy_from(&self.a_scaled_all.row(row));
            g[(r + row, n)] = 1.0;
            g[(r + row, n + 1 + sample)] = -1.0;
            h[r + row] =
                self.xi_scaled[row] + if q[sample] { self.big_m } else { 0.0 };
        }
        r += mk;
        // h3: tau' - s'_k <= M (1 - q_k)
        for sample in 0..kk {
            g[(r + sample, n)] = 1.0;
            g[(r + sample, n + 1 + sample)] = -1.0;
            h[r + sample] = self.big_m * if q[sample] { 0.0 } else { 1.0 };
        }
        r += kk;
        // h1: -eK tau' + sum(s') <= -theta K ||beta||_*
        g[(r, n)] = -self.eps_k.value();
        for sample in 0..kk {
            g[(r, n + 1 + sample)] = 1.0;
        }
        h[r] = -self.theta_k_scaled;
        r += 1;
        // h4: -s'_k <= 0
        for sample in 0..kk {
            g[(r + sample, n + 1 + sample)] = -1.0;
        }
        (g, h)
    }

    /// Canonical relaxation at a fixed `x`: rows (h1)-(h4) over
    /// `(tau', s', q)` with `q` relaxed to the box `[0,1]^K`, plus the
    /// interval bound `tau' <= M` that keeps the set bounded.
    pub fn relax_canonical(&self, x: &DVector<f64>) -> RelaxedPolyhedron {
        let kk = self.k;
        let dim = 1 + 2 * kk;
        let mk = self.stacked_rows();
        let inside = self.scaled_inside(x);
        let total = 1 + mk + kk + kk + 2 * kk + 1;
        let mut g = DMatrix::zeros(total, dim);
        let mut h = DVector::zeros(total);
        let mut r = 0;
        // h1
        g[(r, 0)] = -self.eps_k.value();
        for s in 0..kk {
            g[(r, 1 + s)] = 1.0;
        }
        h[r] = -self.theta_k_scaled;
        r += 1;
        // h2: tau' - s'_k - M q_k <= inside_(k,j)
        for row in 0..mk {
            let sample = row / self.m;
            g[(r + row, 0)] = 1.0;
            g[(r + row, 1 + sample)] = -1.0;
            g[(r + row, 1 + kk + sample)] = -self.big_m;
            h[r + row] = inside[row];
        }
        r += mk;
        // h3: tau' - s'_k + M q_k <= M
        for sample in 0..kk {
            g[(r + sample, 0)] = 1.0;
            g[(r + sample, 1 + sample)] = -1.0;
            g[(r + sample, 1 + kk + sample)] = self.big_m;
            h[r + sample] = self.big_m;
        }
        r += kk;
        // h4: -s'_k <= 0
        for sample in 0..kk {
            g[(r + sample, 1 + sample)] = -1.0;
        }
        r += kk;
        // q box
        for sample in 0..kk {
            g[(r + 2 * sample, 1 + kk + sample)] = 1.0;
            h[r + 2 * sample] = 1.0;
            g[(r + 2 * sample + 1, 1 + kk + sample)] = -1.0;
        }
        r += 2 * kk;
        // interval bound on tau'
        g[(r, 0)] = 1.0;
        h[r] = self.big_m;
        RelaxedPolyhedron { rows: g, rhs: h, k: kk, relaxed_q: true }
    }
}

/// Rows of the canonical relaxation over `(tau', s'_1..K, q_1..K)`.
#[derive(Debug, Clone)]
pub struct RelaxedPolyhedron {
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub k: usize,
    /// Always true: q lives in the box, not the lattice.
    pub relaxed_q: bool,
}

/// One vertex of the relaxed polyhedron.
#[derive(Debug, Clone)]
pub struct Vertex {
    pub point: DVector<f64>,
    /// True when some q coordinate is neither 0 nor 1 (within 1e-6).
    pub fractional_q: bool,
}

/// Vertex listing of the canonical relaxation at fixed `x`.
#[derive(Debug, Clone)]
pub struct VertexReport {
    pub vertices: Vec<Vertex>,
    pub all_binary: bool,
    /// False when the relaxation is empty at this x.
    pub feasible: bool,
}

/// Enumerate all vertices of the canonical relaxation at `x` (K <=
/// [`VERTEX_CAP`]) and flag fractional q coordinates. Diagnostic only: the
/// relaxation's integrality is explored, not asserted.
pub fn vertex_diagnostic(system: &BigMSystem, x: &DVector<f64>) -> Result<VertexReport> {
    if system.k() > VERTEX_CAP {
        return Err(Error::TooLarge { size: system.k(), cap: VERTEX_CAP });
    }
    let poly = system.relax_canonical(x);
    let dim = 1 + 2 * system.k();
    let nrows = poly.rows.nrows();
    let feas_tol = 1e-7 * (1.0 + system.big_m);

    let mut vertices: Vec<Vertex> = Vec::new();
    let mut combo: Vec<usize> = (0..dim).collect();
    loop {
        // Solve the square system of the chosen active rows.
        let mut a = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for (r, &idx) in combo.iter().enumerate() {
            a.row_mut(r).copy_from(&poly.rows.row(idx));
            b[r] = poly.rhs[idx];
        }
        if let Some(sol) = nalgebra::FullPivLU::new(a.clone()).solve(&b) {
            let exact = (&a * &sol - &b).amax() <= 1e-6 * (1.0 + system.big_m);
            let feasible = exact
                && (0..nrows)
                    .all(|r| poly.rows.row(r).transpose().dot(&sol) <= poly.rhs[r] + feas_tol);
            if feasible {
                let dup = vertices
                    .iter()
                    .any(|v| (&v.point - &sol).amax() <= 1e-6 * (1.0 + system.big_m));
                if !dup {
                    let fractional_q = (0..system.k()).any(|s| {
                        let qv = sol[1 + system.k() + s];
                        qv > 1e-6 && qv < 1.0 - 1e-6
                    });
                    vertices.push(Vertex { point: sol, fractional_q });
                }
            }
        }
        if !next_combination(&mut combo, nrows) {
            break;
        }
    }
    let all_binary = vertices.iter().all(|v| !v.fractional_q);
    let feasible = !vertices.is_empty();
    Ok(VertexReport { vertices, all_binary, feasible })
}

/// Advance `combo` to the next k-subset of {0..n}; false when exhausted.
pub(crate) fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] != i + n - k {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drcc::{drcc_feasible, dual_certificate, DrccSpec, NormOrder, SampleSet};
    use crate::game::{AgentSpec, BoxBounds};
    use approx::assert_relative_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// One scalar agent, single-row constraint x1 <= xi + b with b chosen so
    /// distances at x=0 are the sample values plus b.
    fn line_problem(samples: &[f64], epsilon: f64, theta: f64, b: f64) -> GnepProblem {
        let agent = AgentSpec {
            q: DMatrix::from_row_slice(1, 1, &[1.0]),
            p0: dvec(&[0.0]),
            p_cross: DMatrix::zeros(1, 0),
            r0: 0.0,
            rho: dvec(&[]),
            h: DMatrix::zeros(0, 1),
            g: dvec(&[]),
            bounds: BoxBounds::new(dvec(&[-1.0]), dvec(&[5.0])).unwrap(),
        };
        let drcc = DrccSpec::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            dvec(&[b]),
            epsilon,
            theta,
            NormOrder::L2,
            SampleSet::new(samples.iter().map(|s| dvec(&[*s])).collect()).unwrap(),
        )
        .unwrap();
        GnepProblem::new(vec![agent], drcc).unwrap()
    }

    #[test]
    fn kronecker_blocks_scalar_rows() {
        // m = l = 1, K = 3: beta_bar is the 3x3 diagonal of beta, b_bar the
        // repeated offset, E_bar the identity.
        let p = line_problem(&[1.0, 2.0, 3.0], 1.0 / 3.0, 0.1, 7.0);
        let sys = assemble(&p, None).unwrap();
        assert_eq!(sys.beta_bar.shape(), (3, 3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(sys.beta_bar[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(sys.b_bar.as_slice(), &[7.0, 7.0, 7.0]);
        assert_eq!(sys.e_bar.shape(), (3, 3));
        assert_eq!(sys.a_bar[0].as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(sys.beta_dual, 1.0);
        assert_eq!(sys.row_scales.as_slice(), &[1.0]);
    }

    #[test]
    fn e_bar_blocks_for_two_rows() {
        // m = 2, K = 2: E_bar is block diagonal with height-2 columns of 1s.
        let agent = AgentSpec {
            q: DMatrix::from_row_slice(1, 1, &[1.0]),
            p0: dvec(&[0.0]),
            p_cross: DMatrix::zeros(1, 0),
            r0: 0.0,
            rho: dvec(&[]),
            h: DMatrix::zeros(0, 1),
            g: dvec(&[]),
            bounds: BoxBounds::new(dvec(&[0.0]), dvec(&[1.0])).unwrap(),
        };
        let drcc = DrccSpec::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            dvec(&[0.0, 0.0]),
            0.5,
            0.1,
            NormOrder::L2,
            SampleSet::new(vec![dvec(&[1.0]), dvec(&[2.0])]).unwrap(),
        )
        .unwrap();
        let p = GnepProblem::new(vec![agent], drcc).unwrap();
        let sys = assemble(&p, None).unwrap();
        assert_eq!(sys.e_bar.shape(), (4, 2));
        let expected = [(0, 0), (1, 0), (2, 1), (3, 1)];
        for (r, c) in expected {
            assert_eq!(sys.e_bar[(r, c)], 1.0);
            assert_eq!(sys.e_bar[(r, 1 - c)], 0.0);
        }
        // Unequal row norms: ||beta||_* = 2, scales (2, 1).
        assert_eq!(sys.beta_dual, 2.0);
        assert_eq!(sys.row_scales.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn big_m_on_a_point_box() {
        // Box collapsed to x = 2, one sample xi = 5, row value x <= xi:
        // inside = 5 - 2 = 3 everywhere, so tau'_max = 3, row_min = 3,
        // M = 1.1 * max(3, 0) = 3.3.
        let agent = AgentSpec {
            q: DMatrix::from_row_slice(1, 1, &[1.0]),
            p0: dvec(&[0.0]),
            p_cross: DMatrix::zeros(1, 0),
            r0: 0.0,
            rho: dvec(&[]),
            h: DMatrix::zeros(0, 1),
            g: dvec(&[]),
            bounds: BoxBounds::new(dvec(&[2.0]), dvec(&[2.0])).unwrap(),
        };
        let drcc = DrccSpec::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            dvec(&[0.0]),
            0.5,
            0.1,
            NormOrder::L2,
            SampleSet::new(vec![dvec(&[5.0])]).unwrap(),
        )
        .unwrap();
        let p = GnepProblem::new(vec![agent], drcc).unwrap();
        assert_relative_eq!(compute_big_m(&p), 3.3, epsilon = 1e-12);
    }

    #[test]
    fn node_value_equals_distance_mass_at_witness() {
        // Distances at x=0 are (1,2,3); witness q = all-zero; node value
        // equals ||beta||_* * mass = mass.
        let p = line_problem(&[-6.0, -5.0, -4.0], 1.0 / 3.0, 0.1, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[0.0]);
        assert_eq!(sys.scaled_distances(&x).as_slice(), &[1.0, 2.0, 3.0]);
        let q = sys.witness_q(&x);
        assert_eq!(q, vec![false, false, false]);
        assert_relative_eq!(sys.node_value(&x, &q), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn witness_deactivates_violated_samples() {
        // x = 3 gives inside values (-2, -1, 0): two strict violations.
        let p = line_problem(&[-6.0, -5.0, -4.0], 1.0 / 3.0, 0.1, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[3.0]);
        assert_eq!(sys.witness_q(&x), vec![true, true, false]);
    }

    #[test]
    fn slack_aux_uniform_when_threshold_clears() {
        let p = line_problem(&[-6.0, -5.0, -4.0], 1.0 / 3.0, 0.2, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[0.0]);
        let q = vec![false; 3];
        // target = 0.2*3 = 0.6, eps*K = 1, fair tau' = 0.6 <= min ub = 1.
        let aux = sys.node_slack_aux(&x, &q).unwrap();
        assert_relative_eq!(aux.tau, 0.6, epsilon = 1e-12);
        assert_eq!(aux.s.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(sys.h_violation(&x, &q, &aux), 0.0);
        // h1 is exactly tight.
        assert_relative_eq!(sys.eps_k.value() * aux.tau - aux.s.sum(), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn slack_aux_none_when_node_cannot_reach_threshold() {
        let p = line_problem(&[-6.0, -5.0, -4.0], 2.0 / 3.0, 0.3, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[1.5]);
        let q = sys.witness_q(&x);
        // ub = (0, 0.5, 1.5), eps*K = 2, mass = 0.5 < 0.9.
        assert!(sys.node_slack_aux(&x, &q).is_none());
    }

    #[test]
    fn slack_aux_shifted_certificate_tightens_h1() {
        // eps*K = 2, theta*K = 0.4: at x = 1.5 the mass is 0.5 >= 0.4, but
        // fair tau' = 0.2 > min ub = 0, so the shifted branch runs.
        let p = line_problem(&[-6.0, -5.0, -4.0], 2.0 / 3.0, 2.0 / 15.0, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[1.5]);
        let q = sys.witness_q(&x);
        let aux = sys.node_slack_aux(&x, &q).unwrap();
        assert!(sys.h_violation(&x, &q, &aux) <= 1e-12);
        let h1 = sys.eps_k.value() * aux.tau - aux.s.sum();
        assert_relative_eq!(h1, sys.theta_k_scaled, epsilon = 1e-12);
    }

    #[test]
    fn enumerate_and_certificate_agree_with_direct_test() {
        let p = line_problem(&[-6.0, -5.0, -4.0, -3.5, 1.0], 0.4, 0.35, 7.0);
        let sys = assemble(&p, None).unwrap();
        for step in 0..30 {
            let x = dvec(&[-1.0 + 0.2 * step as f64]);
            let direct = drcc_feasible(&p.drcc, &x);
            let enumed = sys.mi_feasible(&x, MiMode::Enumerate).unwrap();
            let cert = sys.mi_feasible(&x, MiMode::Certificate).unwrap();
            assert_eq!(enumed.feasible, direct, "enumerate at x = {x}");
            assert_eq!(cert.feasible, direct, "certificate at x = {x}");
            if let Some(aux) = &enumed.aux {
                assert!(sys.h_violation(&x, &enumed.q, aux) <= 1e-9 * (1.0 + sys.big_m));
            }
        }
    }

    #[test]
    fn all_relaxed_node_is_never_the_witness_with_positive_radius() {
        let p = line_problem(&[-6.0, -5.0, -4.0], 1.0 / 3.0, 0.2, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[0.0]);
        let r = sys.mi_feasible(&x, MiMode::Enumerate).unwrap();
        assert!(r.feasible);
        assert_ne!(r.q, vec![true, true, true]);
    }

    #[test]
    fn enumerate_rejects_large_k() {
        let samples: Vec<f64> = (0..13).map(|i| i as f64).collect();
        let p = line_problem(&samples, 0.3, 0.1, 7.0);
        let sys = assemble(&p, None).unwrap();
        assert!(matches!(
            sys.mi_feasible(&dvec(&[0.0]), MiMode::Enumerate),
            Err(Error::TooLarge { size: 13, cap: ENUM_CAP })
        ));
    }

    #[test]
    fn certificate_witness_is_scaled_distance_certificate() {
        // Two rows with unequal dual norms: the witness must equal the
        // distance-space certificate scaled by ||beta||_*.
        let agent = AgentSpec {
            q: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            p0: dvec(&[0.0, 0.0]),
            p_cross: DMatrix::zeros(2, 0),
            r0: 0.0,
            rho: dvec(&[]),
            h: DMatrix::zeros(0, 2),
            g: dvec(&[]),
            bounds: BoxBounds::new(dvec(&[-2.0, -2.0]), dvec(&[2.0, 2.0])).unwrap(),
        };
        let drcc = DrccSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.3, -0.1]),
            DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 2.0]),
            dvec(&[1.0, 2.0]),
            0.5,
            0.05,
            NormOrder::L2,
            SampleSet::new(vec![
                dvec(&[0.5, 1.0]),
                dvec(&[-0.2, 0.3]),
                dvec(&[1.5, -0.4]),
                dvec(&[0.0, 0.0]),
            ])
            .unwrap(),
        )
        .unwrap();
        let p = GnepProblem::new(vec![agent], drcc).unwrap();
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[0.3, -0.8]);
        let cert = dual_certificate(&p.drcc, &x);
        let mi = sys.mi_feasible(&x, MiMode::Certificate).unwrap();
        let aux = mi.aux.expect("feasible here");
        assert_relative_eq!(aux.tau, cert.tau * sys.beta_dual, epsilon = 1e-12);
        for kk in 0..4 {
            assert_relative_eq!(aux.s[kk], cert.s[kk] * sys.beta_dual, epsilon = 1e-12);
        }
    }

    #[test]
    fn node_polyhedron_contains_slack_aux_point() {
        let p = line_problem(&[-6.0, -5.0, -4.0], 1.0 / 3.0, 0.2, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[0.0]);
        let q = vec![false; 3];
        let aux = sys.node_slack_aux(&x, &q).unwrap();
        let (g, h) = sys.node_polyhedron(&p, &q);
        assert_eq!(g.ncols(), 1 + 1 + 3);
        let mut v = DVector::zeros(5);
        v[0] = x[0];
        v[1] = aux.tau;
        for kk in 0..3 {
            v[2 + kk] = aux.s[kk];
        }
        let viol = (&g * &v - &h).iter().fold(0.0f64, |m, w| m.max(*w));
        assert!(viol <= 1e-12, "violation {viol}");
    }

    #[test]
    fn doubling_m_preserves_verdicts() {
        let p = line_problem(&[-6.0, -5.0, -4.0, 2.0], 0.5, 0.3, 7.0);
        let m = compute_big_m(&p);
        let sys1 = assemble(&p, Some(m)).unwrap();
        let sys2 = assemble(&p, Some(2.0 * m)).unwrap();
        for step in 0..25 {
            let x = dvec(&[-1.0 + 0.25 * step as f64]);
            let a = sys1.mi_feasible(&x, MiMode::Enumerate).unwrap().feasible;
            let b = sys2.mi_feasible(&x, MiMode::Enumerate).unwrap().feasible;
            assert_eq!(a, b, "at x = {x}");
        }
    }

    #[test]
    fn vertex_diagnostic_small_and_infeasible() {
        let p = line_problem(&[-6.0], 0.5, 0.4, 7.0);
        let sys = assemble(&p, None).unwrap();
        // Feasible x: distance 1, mass 0.5 >= theta*K = 0.4.
        let report = vertex_diagnostic(&sys, &dvec(&[0.0])).unwrap();
        assert!(report.feasible);
        assert!(!report.vertices.is_empty());
        // Very large theta: relaxation empty.
        let p2 = line_problem(&[-6.0], 0.5, 100.0, 7.0);
        let sys2 = assemble(&p2, None).unwrap();
        let report2 = vertex_diagnostic(&sys2, &dvec(&[0.0])).unwrap();
        assert!(!report2.feasible);
        assert!(report2.vertices.is_empty());
        // Cap enforced.
        let p3 = line_problem(&[1.0, 2.0, 3.0, 4.0], 0.5, 0.1, 7.0);
        let sys3 = assemble(&p3, None).unwrap();
        assert!(vertex_diagnostic(&sys3, &dvec(&[0.0])).is_err());
    }

    #[test]
    fn h2_rhs_matches_definition() {
        let p = line_problem(&[-6.0, -5.0, -4.0], 1.0 / 3.0, 0.2, 7.0);
        let sys = assemble(&p, None).unwrap();
        let x = dvec(&[0.4]);
        let q = vec![false, true, false];
        let aux = AuxiliaryVars { tau: 0.3, s: dvec(&[0.1, 0.0, 0.2]) };
        let rhs = sys.h2_rhs_for_agent(&x, &p, 0, &q, &aux);
        // Single agent: rhs = xi_scaled + Mq + s - tau (no other agents).
        for kk in 0..3 {
            let expect = sys.xi_scaled()[kk]
                + if q[kk] { sys.big_m } else { 0.0 }
                + aux.s[kk]
                - aux.tau;
            assert_relative_eq!(rhs[kk], expect, epsilon = 1e-12);
        }
    }
}
