//! Distributionally robust chance constraint over a Wasserstein ball.
//!
//! The shared constraint asks that `A x < beta xi + b` hold with probability
//! at least `1 - epsilon` under every distribution within Wasserstein radius
//! `theta` of the empirical distribution of `K` samples `xi_k`. Exactly one
//! deterministic test captures this:
//!
//! ```text
//!     sum of the eps*K smallest sample-to-unsafe-set distances  >=  theta*K,
//! ```
//!
//! where the "mass" uses the fractional rule
//! `sum_{i<=floor(eK)} d_(i) + (eK - floor(eK)) * d_(floor(eK)+1)` and the
//! distance from sample `xi_k` to the unsafe region given a decision `x` is
//!
//! ```text
//!     dist_k(x) = min_j (beta_j xi_k + b_j - A_j x)^+ / ||beta_j||_*,
//! ```
//!
//! with `||.||_*` the dual of the ground norm on the uncertainty space
//! (pairing 1 <-> inf, 2 <-> 2). Feasibility has an LP certificate
//! `(tau, s)`: maximize `eK tau - sum(s)` subject to `dist_k >= tau - s_k`,
//! `s >= 0`; the optimum equals the distance mass and is attained in closed
//! form, which `dual_certificate` constructs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Feasibility slack used by every `>= theta*K` comparison.
pub const TOL_FEAS: f64 = 1e-9;

/// Ground norm on the uncertainty space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    /// `||xi||_1`; dual norm is the max norm.
    L1,
    /// Euclidean; self-dual.
    L2,
    /// `||xi||_inf`; dual norm is the 1-norm.
    LInf,
}

/// Dual norm `||v||_*` of the ground norm `order`.
pub fn dual_norm(v: &DVector<f64>, order: NormOrder) -> f64 {
    match order {
        NormOrder::L1 => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        NormOrder::L2 => v.norm(),
        NormOrder::LInf => v.iter().map(|x| x.abs()).sum(),
    }
}

/// Empirical sample set; every sample lives in the uncertainty space R^l.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<DVector<f64>>,
    dim: usize,
}

impl SampleSet {
    pub fn new(samples: Vec<DVector<f64>>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.len())
            .ok_or_else(|| Error::InvalidData("sample set is empty".into()))?;
        if let Some(bad) = samples.iter().position(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "sample {bad} has dim {} but sample 0 has dim {dim}",
                samples[bad].len()
            )));
        }
        if samples.iter().flat_map(|s| s.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("sample set contains non-finite entries".into()));
        }
        Ok(SampleSet { samples, dim })
    }

    /// Number of samples K.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Uncertainty dimension l.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize) -> &DVector<f64> {
        &self.samples[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.samples.iter()
    }
}

/// The shared chance constraint: `A x < beta xi + b` with confidence
/// `1 - epsilon` over the Wasserstein ball of radius `theta`.
#[derive(Debug, Clone)]
pub struct DrccSpec {
    /// m x n decision coefficients (n = total dim across agents).
    pub a: DMatrix<f64>,
    /// m x l uncertainty coefficients.
    pub beta: DMatrix<f64>,
    /// m right-hand offsets.
    pub b: DVector<f64>,
    /// Chance level, in (0, 1).
    pub epsilon: f64,
    /// Wasserstein radius, >= 0.
    pub theta: f64,
    /// Ground norm on the uncertainty space.
    pub norm: NormOrder,
    /// Empirical samples.
    pub samples: SampleSet,
}

impl DrccSpec {
    pub fn new(
        a: DMatrix<f64>,
        beta: DMatrix<f64>,
        b: DVector<f64>,
        epsilon: f64,
        theta: f64,
        norm: NormOrder,
        samples: SampleSet,
    ) -> Result<Self> {
        let m = a.nrows();
        if beta.nrows() != m || b.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "A has {m} rows, beta {}, b {}",
                beta.nrows(),
                b.len()
            )));
        }
        if beta.ncols() != samples.dim() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} columns but samples have dim {}",
                beta.ncols(),
                samples.dim()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidData("constraint has zero rows".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidData(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::InvalidData(format!("theta must be finite and >= 0, got {theta}")));
        }
        let spec = DrccSpec { a, beta, b, epsilon, theta, norm, samples };
        for (j, nj) in spec.row_dual_norms().iter().enumerate() {
            if *nj <= 0.0 || !nj.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {j} of beta has dual norm {nj}; every row must be nonzero"
                )));
            }
        }
        Ok(spec)
    }

    /// Number of constraint rows m.
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Total decision dimension n.
    pub fn decision_dim(&self) -> usize {
        self.a.ncols()
    }

    /// Dual norm of each row of beta.
    pub fn row_dual_norms(&self) -> Vec<f64> {
        (0..self.beta.nrows())
            .map(|j| dual_norm(&self.beta.row(j).transpose(), self.norm))
            .collect()
    }

    /// The single scalar `||beta||_*` = max over rows (exact when rows agree).
    pub fn beta_dual_norm(&self) -> f64 {
        self.row_dual_norms().into_iter().fold(0.0, f64::max)
    }

    /// True when all rows of beta share one dual norm (the scalar
    /// substitution in the stacked system is exact without row scaling).
    pub fn uniform_row_norms(&self) -> bool {
        let norms = self.row_dual_norms();
        let first = norms[0];
        norms.iter().all(|n| (n - first).abs() <= 1e-12 * first.max(1.0))
    }
}

/// `eps * K` split into integral and fractional parts, with snapping so that
/// values within 1e-9 of an integer (e.g. eps = 1/3, K = 3) land on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsK {
    /// floor(eps * K) after snapping.
    pub floor: usize,
    /// eps * K - floor, clamped to [0, 1).
    pub frac: f64,
}

impl EpsK {
    pub fn new(epsilon: f64, k: usize) -> Self {
        let t = epsilon * k as f64;
        let floor = (t + 1e-9).floor().max(0.0) as usize;
        let frac = (t - floor as f64).max(0.0);
        EpsK { floor, frac }
    }

    /// The scalar eps*K used wherever it appears in a formula.
    pub fn value(&self) -> f64 {
        self.floor as f64 + self.frac
    }
}

/// Distance from sample `k` to the unsafe set at decision `x` (Lemma form:
/// row-wise positive part over the dual row norm, minimized over rows).
pub fn point_distance(spec: &DrccSpec, x: &DVector<f64>, k: usize) -> f64 {
    let norms = spec.row_dual_norms();
    let ax = &spec.a * x;
    let bxi = &spec.beta * spec.samples.get(k) + &spec.b;
    (0..spec.rows())
        .map(|j| (bxi[j] - ax[j]).max(0.0) / norms[j])
        .fold(f64::INFINITY, f64::min)
}

/// All K sample distances at `x`.
pub fn point_distances(spec: &DrccSpec, x: &DVector<f64>) -> Vec<f64> {
    (0..spec.samples.len()).map(|k| point_distance(spec, x, k)).collect()
}

/// Sorted copy (ascending, ties by original index via stable sort).
fn sorted_ascending(d: &[f64]) -> Vec<f64> {
    let mut s = d.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// The eps*K-smallest distance mass of an arbitrary value vector. Shared by
/// the direct feasibility test and the per-node closed forms of the stacked
/// system (where values may be negative).
pub fn value_mass(values: &[f64], ek: EpsK) -> f64 {
    let s = sorted_ascending(values);
    let f = ek.floor.min(s.len());
    let head: f64 = s[..f].iter().sum();
    let next = if f < s.len() { s[f] } else { *s.last().expect("nonempty") };
    head + ek.frac * next
}

/// Distance mass at `x`: sum of the eps*K smallest distances with the
/// fractional tail term.
pub fn distance_mass(spec: &DrccSpec, x: &DVector<f64>) -> f64 {
    value_mass(&point_distances(spec, x), EpsK::new(spec.epsilon, spec.samples.len()))
}

/// Exact deterministic feasibility test: mass >= theta*K (within `TOL_FEAS`).
pub fn drcc_feasible(spec: &DrccSpec, x: &DVector<f64>) -> bool {
    distance_mass(spec, x) >= spec.theta * spec.samples.len() as f64 - TOL_FEAS
}

/// Optimal point of the feasibility LP dual: certifies the distance mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub tau: f64,
    pub s: DVector<f64>,
    /// eps*K * tau - sum(s); equals the distance mass.
    pub objective: f64,
}

/// Closed-form optimal certificate: `tau = d_(floor(eK)+1)` (falling back to
/// `d_(K)` when floor(eK) = K), `s_k = (tau - d_k)^+`. Deterministic under
/// ties because the mass value is tie-independent.
pub fn dual_certificate(spec: &DrccSpec, x: &DVector<f64>) -> DualCertificate {
    let d = point_distances(spec, x);
    let ek = EpsK::new(spec.epsilon, d.len());
    let sorted = sorted_ascending(&d);
    let idx = ek.floor.min(sorted.len() - 1);
    let tau = sorted[idx];
    let s = DVector::from_iterator(d.len(), d.iter().map(|dk| (tau - dk).max(0.0)));
    let objective = ek.value() * tau - s.sum();
    DualCertificate { tau, s, objective }
}

/// Wasserstein radius suggestion `C * (ln(1/epsilon) / K)^(1 / max(dim, 2))`.
/// The constant C is measure-dependent and left to the caller.
pub fn radius_hint(epsilon: f64, k: usize, c: f64, dim: usize) -> f64 {
    let expo = 1.0 / (dim.max(2)) as f64;
    c * ((1.0 / epsilon).ln() / k as f64).powf(expo)
}
