//! Out-of-sample validation of the certified equilibrium.
//!
//! The chance constraint is calibrated on K = 10 sampled perturbations.
//! Whether the certified prices actually keep the demand floor with the
//! promised confidence is an out-of-sample question: draw fresh
//! perturbations from the true distribution and count violations. The
//! estimate comes with a 95% Wilson interval; staying below
//! epsilon (plus sampling error) is the distributional-robustness payoff.
//!
//! ```text
//! cargo run --example out_of_sample
//! ```

use drgnep::casestudy::{build_gnep, monte_carlo_violation, CsMarketParams, SamplerSpec};
use drgnep::drcc::distance_mass;
use drgnep::solver::{solve, SolverOptions};

fn main() -> drgnep::Result<()> {
    let params = CsMarketParams::default();
    let problem = build_gnep(&params, &params.samples()?)?;
    let res = solve(&problem, &SolverOptions::default())?;
    let x = res.x.expect("the default market admits an equilibrium");

    // In-sample robustness margin: distance mass vs the required theta*K.
    let required = params.theta * params.k as f64;
    let mass = distance_mass(&problem.drcc, &x);
    println!("in-sample: distance mass {mass:.6} >= required {required:.6}");

    // Out-of-sample: 200k fresh draws from the same perturbation law the
    // samples came from.
    let estimate = monte_carlo_violation(&x, &params, &params.sampler, 200_000, 7)?;
    println!(
        "out-of-sample: violation rate {:.5} (95% interval [{:.5}, {:.5}], {} draws)",
        estimate.rate, estimate.lo, estimate.hi, estimate.draws
    );
    println!(
        "budget epsilon = {}: {}",
        params.epsilon,
        if estimate.hi <= params.epsilon {
            "the whole interval sits inside the budget"
        } else if estimate.rate <= params.epsilon {
            "the point estimate sits inside the budget"
        } else {
            "violated - the radius was too small for this sample"
        }
    );

    // Robustness against a misspecified law: drift the true mean upward
    // until the demand floor actually starts to fail.
    println!("\nviolation rate when the true mean drifts above the sampled law:");
    for drift in [0.0, 10.0, 25.0, 32.5] {
        let shifted = SamplerSpec::Normal { mean: -25.0 + drift, std_dev: 5.0 };
        let est = monte_carlo_violation(&x, &params, &shifted, 200_000, 7)?;
        let note = if est.rate <= params.epsilon { "within budget" } else { "budget blown" };
        println!("  drift +{drift:>4.1}: rate {:.5}  ({note})", est.rate);
    }
    Ok(())
}
