//! Equilibrium search.
//!
//! The feasible set of the deactivated system is a union of polyhedra, one
//! per binary deactivation pattern `q`. The solver enumerates patterns in
//! ascending weight (fewest deactivated samples first), closes whole levels
//! with interval bounds where possible, and inside each open node runs a
//! deterministic multistart projected-descent search on the Nikaido-Isoda
//! residual. A candidate only becomes a certified equilibrium after an
//! independent re-check: direct sample-distance feasibility (no
//! deactivation constants involved), private feasibility of every agent,
//! and a fresh residual evaluation at the canonical auxiliary point.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use crate::drcc::{drcc_feasible, value_mass, TOL_FEAS};
use crate::error::Error;
use crate::game::{BoxBounds, GnepProblem};
use crate::qp::qp_solve;
use crate::reformulation::{
    assemble, next_combination, sample_interval_bounds, AuxiliaryVars, BigMSystem,
};
use crate::residual::{best_response, residual, residual_with, minlp_gradient, StackedAgentSystem};
use crate::Result;

/// Descent stops when the step search cannot make progress or the raw
/// gradient drops below this.
const GRAD_TOL: f64 = 1e-8;
/// Gauss-Seidel stops when the largest block change in a sweep is below
/// this.
const BR_STEP_TOL: f64 = 1e-9;

/// Order in which deactivation patterns are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeOrdering {
    /// Fewest deactivated samples first, lexicographic within a level; the
    /// all-active pattern is visited first. Levels whose best possible
    /// mass falls short of the threshold close the rest of the lattice.
    #[default]
    AscendingWeight,
    /// Plain numeric order over bit patterns. Requires the exhaustive
    /// regime (sample count at most the enumeration threshold).
    Lexicographic,
}

/// Search options. The defaults match the library-wide contract: residual
/// tolerance 1e-6, 16 starts per node, 500 descent iterations per start,
/// exhaustive pattern enumeration up to 12 samples.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// A point certifies as an equilibrium when its residual is at most
    /// this.
    pub tol_eq: f64,
    /// Multistart points per node.
    pub max_starts: usize,
    /// Projected-descent iteration budget per start.
    pub max_iters: usize,
    /// With at most this many samples the whole lattice is enumerated, so
    /// a non-existence verdict is exhaustive; above it the node cap
    /// applies and the search may return inconclusive.
    pub enum_threshold: usize,
    /// Node cap beyond the exhaustive regime.
    pub max_nodes: usize,
    /// Seed of the deterministic multistart point set.
    pub seed: u64,
    /// Node visiting order.
    pub ordering: NodeOrdering,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_eq: 1e-6,
            max_starts: 16,
            max_iters: 500,
            enum_threshold: 12,
            max_nodes: 4096,
            seed: 42,
            ordering: NodeOrdering::AscendingWeight,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol_eq.is_finite() && self.tol_eq > 0.0) {
            return Err(Error::InvalidData(format!(
                "tol_eq must be a positive finite number, got {}",
                self.tol_eq
            )));
        }
        if self.max_starts == 0 || self.max_iters == 0 || self.max_nodes == 0 {
            return Err(Error::InvalidData(
                "max_starts, max_iters and max_nodes must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Verdict of [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumStatus {
    /// A certified generalized Nash equilibrium was found.
    Gne,
    /// Every node was closed — empty, bound-pruned, or searched with the
    /// full budget without reaching the tolerance — so no equilibrium
    /// exists at the search's resolution.
    NonExistence,
    /// The node cap was reached before the lattice was closed.
    Inconclusive,
}

impl std::fmt::Display for EquilibriumStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EquilibriumStatus::Gne => "GNE",
            EquilibriumStatus::NonExistence => "NON_EXISTENCE",
            EquilibriumStatus::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Search log for one examined node.
#[derive(Debug, Clone)]
pub struct NodeOutcome {
    /// Deactivation pattern (true = that sample's rows are switched off).
    pub q: Vec<bool>,
    /// Best residual reached in this node; infinite when the node is
    /// empty or was closed by a bound.
    pub best_value: f64,
    /// Multistart points actually run.
    pub starts_run: usize,
    /// The node's polyhedron is empty.
    pub empty: bool,
    /// Closed by the interval bound without running any starts.
    pub pruned: bool,
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub status: EquilibriumStatus,
    /// Certified equilibrium (present exactly when status is GNE).
    pub x: Option<DVector<f64>>,
    /// Canonical auxiliary variables at the equilibrium.
    pub aux: Option<AuxiliaryVars>,
    /// Deactivation witness at the equilibrium.
    pub q: Option<Vec<bool>>,
    /// The certified residual for a GNE; otherwise the smallest residual
    /// seen over all nodes (infinite when every node is empty).
    pub residual: f64,
    /// Per-node log in visiting order.
    pub per_node: Vec<NodeOutcome>,
    /// Every node's polyhedron is empty: the coupled feasible set itself
    /// is empty.
    pub feasible_set_empty: bool,
    /// Nodes examined, including bound-pruned ones.
    pub nodes_examined: usize,
    /// Wall-clock time of the search in milliseconds.
    pub wall_ms: u64,
}

/// Independent re-check of a claimed equilibrium.
#[derive(Debug, Clone)]
pub struct CertifyReport {
    /// The distributionally robust chance constraint holds at the point,
    /// checked on the direct sample-distance path.
    pub drcc_ok: bool,
    /// Every agent's private rows and box hold.
    pub local_ok: bool,
    /// Fresh Nikaido-Isoda residual at the canonical auxiliary point.
    pub residual: f64,
    /// Per-agent unilateral-improvement gaps summing to the residual.
    pub gaps: Vec<f64>,
    /// Deactivation witness used for the residual.
    pub q: Vec<bool>,
    /// Canonical auxiliary variables used for the residual.
    pub aux: AuxiliaryVars,
    /// All gates pass: feasible on both paths and residual within
    /// tolerance.
    pub certified: bool,
}

/// Re-check a claimed equilibrium through a path independent of the
/// search: direct distance-space feasibility, private feasibility, and a
/// fresh residual built from new best-response solves at the canonical
/// auxiliary point of the witness pattern.
pub fn certify(
    problem: &GnepProblem,
    system: &BigMSystem,
    x: &DVector<f64>,
    tol_eq: f64,
) -> Result<CertifyReport> {
    let drcc_ok = drcc_feasible(&problem.drcc, x);
    let local_ok = problem.locally_feasible(x, TOL_FEAS);
    let (q, aux) = canonical_node(system, x);
    let rep = residual(problem, system, x, &q, &aux)?;
    let certified = drcc_ok && local_ok && rep.value.abs() <= tol_eq;
    Ok(CertifyReport { drcc_ok, local_ok, residual: rep.value, gaps: rep.gaps, q, aux, certified })
}

/// Witness pattern and canonical auxiliary point at `x`: the slackest
/// feasible auxiliaries when the node can reach the mass threshold, the
/// dual-optimal ones otherwise (so an infeasible point still gets a
/// well-defined residual).
fn canonical_node(system: &BigMSystem, x: &DVector<f64>) -> (Vec<bool>, AuxiliaryVars) {
    let q = system.witness_q(x);
    let aux = system
        .node_slack_aux(x, &q)
        .unwrap_or_else(|| system.node_dual_aux(x, &q));
    (q, aux)
}

// ---------------------------------------------------------------------------
// Gauss-Seidel best-response iteration
// ---------------------------------------------------------------------------

/// Options for [`best_response_iteration`].
#[derive(Debug, Clone)]
pub struct BrOptions {
    /// Maximum sweeps over all agents.
    pub max_sweeps: usize,
    /// Step damping in (0, 1]: each block moves this fraction of the way
    /// to its best response.
    pub damping: f64,
    /// Stop when the largest block change in one sweep is at most this.
    pub step_tol: f64,
}

impl Default for BrOptions {
    fn default() -> Self {
        BrOptions { max_sweeps: 200, damping: 1.0, step_tol: BR_STEP_TOL }
    }
}

/// Iterate trace: the point after each sweep and its residual at the
/// canonical auxiliary point, plus whether the step criterion was met.
#[derive(Debug, Clone)]
pub struct BrTrace {
    pub points: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl BrTrace {
    /// Final iterate, if any sweep ran.
    pub fn last_point(&self) -> Option<&DVector<f64>> {
        self.points.last()
    }
}

/// Gauss-Seidel best-response iteration from `x0`: each sweep fixes the
/// witness pattern and canonical auxiliaries at the current point, then
/// updates every agent in turn with a damped step toward its best
/// response. The trace is returned whether or not the iteration settles;
/// a failed best-response solve reports the offending agent.
pub fn best_response_iteration(
    problem: &GnepProblem,
    x0: &DVector<f64>,
    opts: &BrOptions,
) -> Result<BrTrace> {
    let system = assemble(problem, None)?;
    let stackeds = stack_agents(problem, &system);
    br_iterate(problem, &system, &stackeds, x0, opts)
}

fn stack_agents(problem: &GnepProblem, system: &BigMSystem) -> Vec<StackedAgentSystem> {
    (0..problem.num_agents())
        .map(|i| StackedAgentSystem::new(problem, system, i))
        .collect()
}

fn br_iterate(
    problem: &GnepProblem,
    system: &BigMSystem,
    stackeds: &[StackedAgentSystem],
    x0: &DVector<f64>,
    opts: &BrOptions,
) -> Result<BrTrace> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidData(format!(
            "damping must lie in (0, 1], got {}",
            opts.damping
        )));
    }
    let mut x = clamp_blocks(problem, x0);
    let mut trace = BrTrace { points: Vec::new(), residuals: Vec::new(), converged: false };
    for _sweep in 0..opts.max_sweeps {
        let (q, aux) = canonical_node(system, &x);
        let mut max_change = 0.0f64;
        for (i, stacked) in stackeds.iter().enumerate() {
            let (y, _, _) = best_response(problem, system, stacked, &x, &q, &aux)
                .map_err(|e| {
                    Error::Numerical(format!("best response of agent {i} failed: {e}"))
                })?;
            let xi = problem.block(&x, i);
            let step = (&y - &xi) * opts.damping;
            if step.amax() > max_change {
                max_change = step.amax();
            }
            x = problem.with_block(&x, i, &(xi + step));
        }
        let (q, aux) = canonical_node(system, &x);
        let rep = residual_with(problem, system, stackeds, &x, &q, &aux)?;
        trace.points.push(x.clone());
        trace.residuals.push(rep.value);
        if max_change <= opts.step_tol {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Clamp each agent's block into its own box.
fn clamp_blocks(problem: &GnepProblem, x: &DVector<f64>) -> DVector<f64> {
    let mut out = x.clone();
    for i in 0..problem.num_agents() {
        let clamped = problem.agents[i].bounds.clamp(&problem.block(x, i));
        out.rows_mut(problem.offset(i), problem.agent_dim(i)).copy_from(&clamped);
    }
    out
}

/// Cheap global candidate: best-response iteration from the box center
/// with a halving damping schedule, keeping the lowest-residual endpoint.
fn br_candidate(
    problem: &GnepProblem,
    system: &BigMSystem,
    stackeds: &[StackedAgentSystem],
    hull: &BoxBounds,
    tol_eq: f64,
) -> DVector<f64> {
    let x0 = hull.center();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for damping in [1.0, 0.5, 0.25, 0.125] {
        let opts = BrOptions { max_sweeps: 60, damping, step_tol: BR_STEP_TOL };
        let Ok(trace) = br_iterate(problem, system, stackeds, &x0, &opts) else {
            continue;
        };
        let (Some(x), Some(&r)) = (trace.points.last(), trace.residuals.last()) else {
            continue;
        };
        if r.is_finite() && best.as_ref().is_none_or(|(bv, _)| r < *bv) {
            best = Some((r, x.clone()));
        }
        if trace.converged && r.abs() <= tol_eq {
            break;
        }
    }
    best.map(|(_, x)| x).unwrap_or_else(|| hull.center())
}

// ---------------------------------------------------------------------------
// Multistart point set
// ---------------------------------------------------------------------------

/// First `n` primes, used as radical-inverse bases.
fn primes(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(n);
    let mut cand = 2usize;
    while out.len() < n {
        if out.iter().all(|p| cand % p != 0) {
            out.push(cand);
        }
        cand += 1;
    }
    out
}

/// Van der Corput radical inverse of `index` in the given base.
fn radical_inverse(mut index: usize, base: usize) -> f64 {
    let mut place = 1.0;
    let mut value = 0.0;
    while index > 0 {
        place /= base as f64;
        value += place * (index % base) as f64;
        index /= base;
    }
    value
}

/// Stable 64-bit key of a deactivation pattern (FNV-1a over the bits).
fn node_key(q: &[bool]) -> u64 {
    q.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ (b as u64 + 1)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Start `s` of a node's multistart set: the best-response candidate,
/// then the box center, then a rotated low-discrepancy sequence mapped
/// onto the box hull. The rotation is keyed per (seed, node), so the set
/// is deterministic and prefix-stable in the start budget.
fn start_point(
    hull: &BoxBounds,
    shifts: &[f64],
    bases: &[usize],
    br: &DVector<f64>,
    s: usize,
) -> DVector<f64> {
    match s {
        0 => br.clone(),
        1 => hull.center(),
        _ => {
            let n = hull.dim();
            DVector::from_iterator(
                n,
                (0..n).map(|d| {
                    let u = (radical_inverse(s - 1, bases[d]) + shifts[d]).fract();
                    hull.lower[d] + u * (hull.upper[d] - hull.lower[d])
                }),
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Projected descent inside one node
// ---------------------------------------------------------------------------

/// Euclidean projection of `(x, aux)` onto the node polyhedron.
fn project_node(
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    n: usize,
    k: usize,
    x: &DVector<f64>,
    aux: &AuxiliaryVars,
) -> Result<DVector<f64>> {
    let dim = n + 1 + k;
    let mut target = DVector::zeros(dim);
    target.rows_mut(0, n).copy_from(x);
    target[n] = aux.tau;
    target.rows_mut(n + 1, k).copy_from(&aux.s);
    let identity = DMatrix::identity(dim, dim);
    let c = -&target;
    let sol = qp_solve(&identity, &c, rows, rhs)?;
    Ok(sol.y.rows(0, n).into_owned())
}

enum StartOutcome {
    /// The projection certified the node polyhedron empty.
    Empty,
    /// Numerical failure before any residual could be evaluated.
    Failed,
    Ran { value: f64, x: DVector<f64> },
}

/// `(value, lexicographic x)` order used for all reductions, so the
/// result is independent of evaluation order and thread count.
fn better_point(av: f64, ax: &DVector<f64>, bv: f64, bx: &DVector<f64>) -> bool {
    if av != bv {
        return av < bv;
    }
    for i in 0..ax.len() {
        if ax[i] != bx[i] {
            return ax[i] < bx[i];
        }
    }
    false
}

/// One multistart descent: project the start into the node, then repeat
/// residual evaluation, frozen-multiplier gradient, and a backtracking
/// projected step until the tolerance, a stationary point, or the budget.
#[allow(clippy::too_many_arguments)]
fn descend(
    problem: &GnepProblem,
    system: &BigMSystem,
    stackeds: &[StackedAgentSystem],
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    q: &[bool],
    x0: &DVector<f64>,
    opts: &SolverOptions,
) -> StartOutcome {
    let n = problem.total_dim();
    let k = q.len();
    let aux0 = system
        .node_slack_aux(x0, q)
        .unwrap_or_else(|| system.node_dual_aux(x0, q));
    let mut x = match project_node(rows, rhs, n, k, x0, &aux0) {
        Ok(v) => v,
        Err(Error::Infeasible { .. }) => return StartOutcome::Empty,
        Err(_) => return StartOutcome::Failed,
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut step = 1.0f64;

    for _ in 0..opts.max_iters {
        let aux = system
            .node_slack_aux(&x, q)
            .unwrap_or_else(|| system.node_dual_aux(&x, q));
        let Ok(rep) = residual_with(problem, system, stackeds, &x, q, &aux) else {
            break;
        };
        let value = rep.value;
        if value.is_finite()
            && best
                .as_ref()
                .is_none_or(|(bv, bx)| better_point(value, &x, *bv, bx))
        {
            best = Some((value, x.clone()));
        }
        if value <= opts.tol_eq {
            break;
        }
        let Ok((grad, _)) =
            minlp_gradient(problem, system, stackeds, &x, q, &aux, &rep.duals)
        else {
            break;
        };
        let gnorm = grad.norm();
        if gnorm <= GRAD_TOL {
            break;
        }

        // Backtracking line search along the projection arc.
        let mut t = (step * 4.0).clamp(1e-12, 1e6);
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x - &grad * t;
            let Ok(xt) = project_node(rows, rhs, n, k, &trial, &aux) else {
                t *= 0.5;
                continue;
            };
            let moved = (&xt - &x).norm();
            if moved <= 1e-14 * (1.0 + x.norm()) {
                // Projected-stationary: shrinking further cannot help.
                break;
            }
            let aux_t = system
                .node_slack_aux(&xt, q)
                .unwrap_or_else(|| system.node_dual_aux(&xt, q));
            if let Ok(rep_t) = residual_with(problem, system, stackeds, &xt, q, &aux_t) {
                if rep_t.value.is_finite() && rep_t.value <= value - 1e-4 * gnorm * moved {
                    x = xt;
                    step = t;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-13 {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    match best {
        Some((value, x)) => StartOutcome::Ran { value, x },
        None => StartOutcome::Failed,
    }
}

// ---------------------------------------------------------------------------
// Node processing and the top-level search
// ---------------------------------------------------------------------------

struct SearchCtx<'a> {
    problem: &'a GnepProblem,
    system: &'a BigMSystem,
    stackeds: &'a [StackedAgentSystem],
    hull: &'a BoxBounds,
    /// Per sample: interval upper bound (over the box hull) of its
    /// minimum scaled row value.
    interval_ubs: &'a [f64],
    br: &'a DVector<f64>,
    bases: &'a [usize],
    opts: &'a SolverOptions,
}

struct NodeSuccess {
    x: DVector<f64>,
    aux: AuxiliaryVars,
    q: Vec<bool>,
    residual: f64,
}

impl SearchCtx<'_> {
    /// Per-sample contribution caps of a node: a deactivated sample
    /// contributes at most zero, an active one at most its interval bound
    /// (never more than the deactivation constant).
    fn node_caps(&self, q: &[bool]) -> Vec<f64> {
        q.iter()
            .zip(self.interval_ubs)
            .map(|(&qi, &ub)| if qi { 0.0 } else { ub.min(self.system.big_m) })
            .collect()
    }

    /// Mass target with the same relative slack as the direct test.
    fn mass_target(&self) -> f64 {
        self.system.theta_k_scaled - TOL_FEAS * self.system.beta_dual
    }

    /// Best possible mass over all nodes of the given weight: deactivate
    /// the `weight` smallest caps (the mass is monotone per coordinate,
    /// and deactivation replaces a cap by zero).
    fn level_bound(&self, weight: usize) -> f64 {
        let caps: Vec<f64> = self.interval_ubs.iter().map(|u| u.min(self.system.big_m)).collect();
        let mut order: Vec<usize> = (0..caps.len()).collect();
        order.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]));
        let mut bounded = caps;
        for &i in order.iter().take(weight) {
            bounded[i] = 0.0;
        }
        value_mass(&bounded, self.system.eps_k)
    }

    fn process_node(&self, q: &[bool]) -> (NodeOutcome, Option<NodeSuccess>) {
        let mut outcome = NodeOutcome {
            q: q.to_vec(),
            best_value: f64::INFINITY,
            starts_run: 0,
            empty: false,
            pruned: false,
        };
        // Interval bound: no point of the box can lift this node's mass
        // to the threshold, so its polyhedron is empty.
        if value_mass(&self.node_caps(q), self.system.eps_k) < self.mass_target() {
            outcome.empty = true;
            outcome.pruned = true;
            return (outcome, None);
        }

        let (rows, rhs) = self.system.node_polyhedron(self.problem, q);
        let n = self.problem.total_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ node_key(q));
        let shifts: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();

        // Starts run in index order; the first certified success returns
        // immediately (deterministic short-circuit), while a node without
        // one must exhaust the full budget before it counts as closed.
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut empties = 0usize;
        for s in 0..self.opts.max_starts {
            let x0 = start_point(self.hull, &shifts, self.bases, self.br, s);
            match descend(
                self.problem,
                self.system,
                self.stackeds,
                &rows,
                &rhs,
                q,
                &x0,
                self.opts,
            ) {
                StartOutcome::Empty => {
                    // The projection certified the polyhedron empty; that
                    // holds for every start point, so the node is closed.
                    empties += 1;
                    break;
                }
                StartOutcome::Failed => outcome.starts_run += 1,
                StartOutcome::Ran { mut value, x } => {
                    outcome.starts_run += 1;
                    if value <= self.opts.tol_eq {
                        if let Ok(cert) = certify(self.problem, self.system, &x, self.opts.tol_eq)
                        {
                            if cert.certified {
                                outcome.best_value = cert.residual;
                                let success = NodeSuccess {
                                    x,
                                    aux: cert.aux,
                                    q: cert.q,
                                    residual: cert.residual,
                                };
                                return (outcome, Some(success));
                            }
                            // The canonical re-check is the ground truth;
                            // margins below the solver's resolution stay
                            // closed.
                            value = value.max(cert.residual);
                        }
                    }
                    if value.is_finite()
                        && best
                            .as_ref()
                            .is_none_or(|(bv, bx)| better_point(value, &x, *bv, bx))
                    {
                        best = Some((value, x));
                    }
                }
            }
        }

        let Some((value, _x)) = best else {
            if empties > 0 && outcome.starts_run == 0 {
                outcome.empty = true;
            }
            // All-failed nodes keep an infinite best value and count as
            // unresolved, which blocks a non-existence verdict.
            return (outcome, None);
        };
        outcome.best_value = value;
        (outcome, None)
    }
}

/// Search the deactivation lattice for a generalized Nash equilibrium.
///
/// Status semantics: `Gne` carries a point that passed the independent
/// certificate; `NonExistence` means every node was closed (empty, or
/// searched with the full multistart budget to a residual above
/// tolerance); `Inconclusive` means the node cap stopped the search
/// before closure. The search is deterministic for fixed options,
/// independent of thread count.
pub fn solve(problem: &GnepProblem, opts: &SolverOptions) -> Result<EquilibriumResult> {
    opts.validate()?;
    let t0 = std::time::Instant::now();
    let system = assemble(problem, None)?;
    let stackeds = stack_agents(problem, &system);
    let hull = problem.box_hull();
    let interval_ubs = sample_interval_bounds(problem);
    let br = br_candidate(problem, &system, &stackeds, &hull, opts.tol_eq);
    let bases = primes(problem.total_dim());
    let kk = problem.drcc.samples.len();

    let ctx = SearchCtx {
        problem,
        system: &system,
        stackeds: &stackeds,
        hull: &hull,
        interval_ubs: &interval_ubs,
        br: &br,
        bases: &bases,
        opts,
    };

    let exhaustive = kk <= opts.enum_threshold;
    let node_cap = if exhaustive { usize::MAX } else { opts.max_nodes };
    if opts.ordering == NodeOrdering::Lexicographic && (!exhaustive || kk >= 63) {
        return Err(Error::InvalidData(format!(
            "lexicographic ordering needs the exhaustive regime (and at most 62 samples): \
             {kk} samples, enumeration threshold {}",
            opts.enum_threshold
        )));
    }

    let mut per_node: Vec<NodeOutcome> = Vec::new();
    let mut success: Option<NodeSuccess> = None;
    let mut all_closed = true;
    let mut visited = 0usize;

    match opts.ordering {
        NodeOrdering::AscendingWeight => {
            'levels: for weight in 0..=kk {
                if ctx.level_bound(weight) < ctx.mass_target() {
                    // Every node of this weight (and, since deactivating
                    // more samples only replaces caps by zero after the
                    // best choices are taken, of any larger weight
                    // reachable by extending these) is empty. Levels are
                    // closed by proof, not by budget.
                    break;
                }
                let mut combo: Vec<usize> = (0..weight).collect();
                loop {
                    if visited >= node_cap {
                        all_closed = false;
                        break 'levels;
                    }
                    visited += 1;
                    let mut q = vec![false; kk];
                    for &j in &combo {
                        q[j] = true;
                    }
                    let (outcome, succ) = ctx.process_node(&q);
                    if !(outcome.pruned || outcome.empty || outcome.best_value.is_finite()) {
                        all_closed = false;
                    }
                    per_node.push(outcome);
                    if succ.is_some() {
                        success = succ;
                        break 'levels;
                    }
                    if !next_combination(&mut combo, kk) {
                        break;
                    }
                }
            }
        }
        NodeOrdering::Lexicographic => {
            for mask in 0u64..(1u64 << kk) {
                if visited >= node_cap {
                    all_closed = false;
                    break;
                }
                visited += 1;
                let q: Vec<bool> = (0..kk).map(|j| mask >> j & 1 == 1).collect();
                let (outcome, succ) = ctx.process_node(&q);
                if !(outcome.pruned || outcome.empty || outcome.best_value.is_finite()) {
                    all_closed = false;
                }
                per_node.push(outcome);
                if succ.is_some() {
                    success = succ;
                    break;
                }
            }
        }
    }

    let wall_ms = t0.elapsed().as_millis() as u64;
    if let Some(s) = success {
        return Ok(EquilibriumResult {
            status: EquilibriumStatus::Gne,
            x: Some(s.x),
            aux: Some(s.aux),
            q: Some(s.q),
            residual: s.residual,
            per_node,
            feasible_set_empty: false,
            nodes_examined: visited,
            wall_ms,
        });
    }
    let best_open = per_node
        .iter()
        .map(|n| n.best_value)
        .fold(f64::INFINITY, f64::min);
    let any_nonempty = per_node.iter().any(|n| !n.empty);
    let feasible_set_empty = all_closed && !any_nonempty;
    let status = if all_closed {
        EquilibriumStatus::NonExistence
    } else {
        EquilibriumStatus::Inconclusive
    };
    Ok(EquilibriumResult {
        status,
        x: None,
        aux: None,
        q: None,
        residual: best_open,
        per_node,
        feasible_set_empty,
        nodes_examined: visited,
        wall_ms,
    })
}
