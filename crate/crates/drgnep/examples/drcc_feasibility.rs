//! The distributionally robust chance constraint by itself.
//!
//! A point is feasible when the worst distribution in the Wasserstein ball
//! still satisfies `P[A x < beta xi + b] >= 1 - epsilon`. That test is
//! exactly equivalent to a deterministic one: the sample distance mass — a
//! partial sum of per-sample distances to violation — must reach
//! `theta * K`. This example computes every ingredient by hand on a tiny
//! two-variable instance and shows the dual certificate matching the mass
//! to machine precision.
//!
//! ```text
//! cargo run --example drcc_feasibility
//! ```

use drgnep::drcc::{
    distance_mass, drcc_feasible, dual_certificate, point_distances, radius_hint, value_mass,
    DrccSpec, EpsK, NormOrder, SampleSet,
};
use nalgebra::{DMatrix, DVector};

fn main() -> drgnep::Result<()> {
    // One row over x = (x1, x2): x1 + x2 < 2 + xi, scalar perturbation xi.
    let samples = SampleSet::new(
        [-0.5, 0.0, 0.4, 1.0, -1.2]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect(),
    )?;
    let make = |theta: f64| {
        DrccSpec::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_element(1, 2.0),
            0.4,
            theta,
            NormOrder::L2,
            samples.clone(),
        )
    };

    let spec = make(0.08)?;
    let x = DVector::from_row_slice(&[0.5, 0.5]);

    // Per-sample distance to violation: how far xi_k could be pushed before
    // the row fails at x. A sample already violating contributes zero.
    let d = point_distances(&spec, &x);
    println!("distances to violation: {d:?}");

    // The mass keeps the floor(eps*K) smallest distances in full and a
    // fraction of the next one.
    let ek = EpsK::new(spec.epsilon, samples.len());
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let mass = value_mass(&sorted, ek);
    println!("eps*K = {:.9} -> mass {mass:.9}", ek.value());
    assert_eq!(mass, distance_mass(&spec, &x));

    // The dual optimum of the feasibility program reproduces the mass.
    let cert = dual_certificate(&spec, &x);
    println!(
        "dual certificate: tau={:.6}, objective {:.12} (gap to mass {:.3e})",
        cert.tau,
        cert.objective,
        (cert.objective - mass).abs()
    );

    // Feasibility flips as the radius grows past mass / K.
    for theta in [0.08, 0.10, 0.12] {
        let spec = make(theta)?;
        println!(
            "theta={theta:.2}: need mass >= {:.2}, have {mass:.2} -> feasible: {}",
            theta * samples.len() as f64,
            drcc_feasible(&spec, &x)
        );
    }

    // A measure-concentration radius suggestion for this sample size.
    println!(
        "suggested radius at epsilon=0.4, K=5: {:.6}",
        radius_hint(0.4, samples.len(), 1.0, samples.dim())
    );
    Ok(())
}
