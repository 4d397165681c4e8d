//! Randomized invariants of the feasibility machinery, the reformulation,
//! the QP engine, and the residual. Each property is stated over generated
//! instances; failures shrink to a minimal counterexample.

use drgnep::drcc::{
    distance_mass, drcc_feasible, dual_certificate, point_distances, value_mass, DrccSpec, EpsK,
    NormOrder, SampleSet,
};
use drgnep::game::{AgentSpec, BoxBounds, GnepProblem};
use drgnep::qp::{qp_solve, KKT_TOL};
use drgnep::reformulation::{assemble, MiMode};
use drgnep::residual::residual;
use drgnep::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Scalar-perturbation constraint `x1 + x2 < b + xi` over two decision
/// variables.
fn scalar_spec(samples: &[f64], epsilon: f64, theta: f64, b: f64) -> DrccSpec {
    DrccSpec::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DVector::from_element(1, b),
        epsilon,
        theta,
        NormOrder::L2,
        SampleSet::new(samples.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap(),
    )
    .unwrap()
}

/// One-agent problem on a box, coupled to a scalar-sample constraint.
fn line_problem(samples: &[f64], epsilon: f64, theta: f64, b: f64) -> GnepProblem {
    let agent = AgentSpec {
        q: DMatrix::from_element(1, 1, 2.0),
        p0: DVector::from_element(1, -1.0),
        p_cross: DMatrix::zeros(1, 0),
        r0: 0.0,
        rho: DVector::zeros(0),
        h: DMatrix::zeros(0, 1),
        g: DVector::zeros(0),
        bounds: BoxBounds::new(DVector::from_element(1, -2.0), DVector::from_element(1, 2.0))
            .unwrap(),
    };
    let drcc = DrccSpec::new(
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DVector::from_element(1, b),
        epsilon,
        theta,
        NormOrder::L2,
        SampleSet::new(samples.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap(),
    )
    .unwrap();
    GnepProblem::new(vec![agent], drcc).unwrap()
}

proptest! {
    /// The closed-form dual certificate reproduces the distance mass.
    #[test]
    fn certificate_objective_equals_the_mass(
        samples in prop::collection::vec(-4.0f64..4.0, 1..10),
        epsilon in 0.05f64..0.95,
        theta in 0.0f64..2.0,
        x1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
    ) {
        let spec = scalar_spec(&samples, epsilon, theta, 2.0);
        let x = DVector::from_row_slice(&[x1, x2]);
        let mass = distance_mass(&spec, &x);
        let cert = dual_certificate(&spec, &x);
        prop_assert!((cert.objective - mass).abs() <= 1e-9 * (1.0 + mass.abs()));
        // Certificate structure: s_k = (tau - d_k)^+ exactly.
        let d = point_distances(&spec, &x);
        for (k, dk) in d.iter().enumerate() {
            prop_assert!((cert.s[k] - (cert.tau - dk).max(0.0)).abs() <= 1e-12);
        }
    }

    /// Keeping a larger violation budget never shrinks the mass, and
    /// growing the radius never turns an infeasible point feasible.
    #[test]
    fn mass_monotone_in_epsilon_and_feasibility_antimonotone_in_theta(
        samples in prop::collection::vec(-4.0f64..4.0, 1..10),
        eps_lo in 0.05f64..0.5,
        eps_gap in 0.0f64..0.45,
        theta in 0.0f64..1.0,
        x1 in -2.0f64..2.0,
    ) {
        let spec = scalar_spec(&samples, eps_lo, theta, 2.0);
        let x = DVector::from_row_slice(&[x1, 0.0]);
        let mut d = point_distances(&spec, &x);
        d.sort_by(f64::total_cmp);
        let k = samples.len();
        let lo = value_mass(&d, EpsK::new(eps_lo, k));
        let hi = value_mass(&d, EpsK::new(eps_lo + eps_gap, k));
        prop_assert!(hi >= lo - 1e-12);

        let tight = scalar_spec(&samples, eps_lo, theta, 2.0);
        let loose = scalar_spec(&samples, eps_lo, 0.5 * theta, 2.0);
        if drcc_feasible(&tight, &x) {
            prop_assert!(drcc_feasible(&loose, &x));
        }
    }

    /// The mass does not depend on the order the samples arrive in.
    #[test]
    fn mass_invariant_under_sample_permutation(
        samples in prop::collection::vec(-4.0f64..4.0, 2..10),
        rotate in 1usize..9,
        x1 in -2.0f64..2.0,
    ) {
        let mut permuted = samples.clone();
        permuted.rotate_left(rotate % samples.len());
        let a = scalar_spec(&samples, 0.3, 0.1, 2.0);
        let b = scalar_spec(&permuted, 0.3, 0.1, 2.0);
        let x = DVector::from_row_slice(&[x1, -0.5]);
        prop_assert!((distance_mass(&a, &x) - distance_mass(&b, &x)).abs() <= 1e-12);
    }

    /// Scaling a constraint row leaves every distance unchanged.
    #[test]
    fn distances_invariant_under_row_scaling(
        samples in prop::collection::vec(-4.0f64..4.0, 1..8),
        scale in 0.1f64..10.0,
        x1 in -2.0f64..2.0,
    ) {
        let base = scalar_spec(&samples, 0.3, 0.1, 2.0);
        let scaled = DrccSpec::new(
            scale * &base.a,
            scale * &base.beta,
            scale * &base.b,
            base.epsilon,
            base.theta,
            base.norm,
            base.samples.clone(),
        ).unwrap();
        let x = DVector::from_row_slice(&[x1, 0.3]);
        let d0 = point_distances(&base, &x);
        let d1 = point_distances(&scaled, &x);
        for (a, b) in d0.iter().zip(&d1) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    /// eps*K splits into integral and fractional parts that recompose.
    #[test]
    fn eps_k_parts_recompose(epsilon in 0.01f64..0.99, k in 1usize..200) {
        let ek = EpsK::new(epsilon, k);
        prop_assert!(ek.frac >= 0.0 && ek.frac < 1.0);
        prop_assert!((ek.value() - epsilon * k as f64).abs() <= 1e-8 * (1.0 + k as f64));
        prop_assert!(ek.floor as f64 <= epsilon * k as f64 + 1e-6);
    }

    /// Binary-pattern feasibility (enumerated and certificate-built)
    /// matches the direct distance-mass test, and survives doubling M.
    #[test]
    fn mixed_binary_feasibility_equals_the_direct_test(
        samples in prop::collection::vec(-2.0f64..2.0, 1..7),
        epsilon in 0.05f64..0.95,
        theta in 0.0f64..0.8,
        b in 1.0f64..3.0,
        x1 in -2.0f64..2.0,
    ) {
        let problem = line_problem(&samples, epsilon, theta, b);
        let system = assemble(&problem, None).unwrap();
        let x = DVector::from_element(1, x1);
        let direct = drcc_feasible(&problem.drcc, &x);
        let enumerated = system.mi_feasible(&x, MiMode::Enumerate).unwrap();
        let certificate = system.mi_feasible(&x, MiMode::Certificate).unwrap();
        prop_assert_eq!(direct, enumerated.feasible);
        prop_assert_eq!(direct, certificate.feasible);

        let doubled = assemble(&problem, Some(2.0 * system.big_m)).unwrap();
        prop_assert_eq!(direct, doubled.mi_feasible(&x, MiMode::Enumerate).unwrap().feasible);
    }

    /// Random strictly convex box QPs solve to tolerance: feasible primal,
    /// nonnegative multipliers, small KKT residual.
    #[test]
    fn qp_solves_random_boxes_to_tolerance(
        diag in prop::collection::vec(0.5f64..5.0, 1..6),
        c in prop::collection::vec(-5.0f64..5.0, 1..6),
        lo in -3.0f64..0.0,
        width in 0.1f64..4.0,
    ) {
        let n = diag.len().min(c.len());
        let q = DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 });
        let cv = DVector::from_iterator(n, c.iter().copied().take(n));
        let mut g = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        for j in 0..n {
            g[(j, j)] = 1.0;
            h[j] = lo + width;
            g[(n + j, j)] = -1.0;
            h[n + j] = -lo;
        }
        let r = qp_solve(&q, &cv, &g, &h).unwrap();
        prop_assert!(r.kkt_residual <= 10.0 * KKT_TOL, "kkt {}", r.kkt_residual);
        for j in 0..n {
            prop_assert!(r.y[j] >= lo - 1e-7 && r.y[j] <= lo + width + 1e-7);
        }
        prop_assert!(r.multipliers.iter().all(|&l| l >= -1e-10));
        // Oracle: coordinate-wise clamp of the unconstrained minimizer.
        for j in 0..n {
            let free = -cv[j] / q[(j, j)];
            let expect = free.clamp(lo, lo + width);
            prop_assert!((r.y[j] - expect).abs() <= 1e-6, "y {} vs {}", r.y[j], expect);
        }
    }

    /// Contradictory rows are certified infeasible with the exact minimal
    /// uniform violation (half the gap).
    #[test]
    fn qp_certifies_contradictory_rows(
        a in -3.0f64..3.0,
        gap in 0.2f64..3.0,
    ) {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_row_slice(&[a, -(a + gap)]);
        let err = qp_solve(
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::zeros(1),
            &g,
            &h,
        ).unwrap_err();
        match err {
            Error::Infeasible { max_violation } => {
                prop_assert!(
                    (max_violation - gap / 2.0).abs() <= 1e-3 * (1.0 + gap),
                    "violation {max_violation} for gap {gap}"
                );
            }
            other => prop_assert!(false, "expected infeasibility, got {other}"),
        }
    }

    /// On points satisfying the frozen node rows the residual is a sum of
    /// true unilateral-improvement gaps, hence nonnegative.
    #[test]
    fn residual_nonnegative_at_feasible_points(
        samples in prop::collection::vec(-1.0f64..1.0, 1..6),
        epsilon in 0.1f64..0.9,
        theta in 0.0f64..0.2,
        b in 1.5f64..3.0,
        x1 in -1.5f64..1.5,
    ) {
        let problem = line_problem(&samples, epsilon, theta, b);
        let system = assemble(&problem, None).unwrap();
        let x = DVector::from_element(1, x1);
        let q = system.witness_q(&x);
        // Only nodes that can reach the mass threshold yield a feasible
        // frozen system at x.
        let Some(aux) = system.node_slack_aux(&x, &q) else {
            return Ok(());
        };
        prop_assume!(system.h_violation(&x, &q, &aux) <= 1e-9);
        let rep = residual(&problem, &system, &x, &q, &aux).unwrap();
        prop_assert!(rep.value >= -1e-7, "residual {}", rep.value);
        for gap in &rep.gaps {
            prop_assert!(*gap >= -1e-7);
        }
    }
}
