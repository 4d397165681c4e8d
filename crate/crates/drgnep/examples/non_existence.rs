//! Certified non-existence: closing every deactivation pattern.
//!
//! When the Wasserstein radius demands more sample mass than any profile
//! in the decision box can supply, the coupled feasible set is empty and
//! no equilibrium exists. With at most `enum_threshold` samples the search
//! is exhaustive, so that verdict is a certificate, not a failure to find:
//! every node is closed as empty (projection says so), bound-pruned, or
//! searched to its full budget.
//!
//! ```text
//! cargo run --example non_existence
//! ```

use drgnep::casestudy::{build_gnep, with_tuned_theta, CsMarketParams};
use drgnep::io::override_drcc;
use drgnep::solver::{solve, EquilibriumStatus, SolverOptions};

fn main() -> drgnep::Result<()> {
    let params = CsMarketParams::default();
    let samples = params.samples()?;

    // Raise the mass threshold 5% above the best mass attainable anywhere
    // in the price box; nothing else changes.
    let tuned = with_tuned_theta(&params, &samples)?;
    println!("theta: {} -> {:.6}", params.theta, tuned.theta);

    let problem = build_gnep(&tuned, &samples)?;
    let res = solve(&problem, &SolverOptions::default())?;

    println!("status            : {}", res.status);
    println!("feasible set empty: {}", res.feasible_set_empty);
    println!("nodes examined    : {}", res.nodes_examined);
    println!("best residual seen: {}", res.residual);
    assert_eq!(res.status, EquilibriumStatus::NonExistence);
    println!("Here an interval bound over the decision box already caps every");
    println!("pattern below the required mass, so the lattice closes at once.\n");

    // A subtler emptiness: demand 90% of the samples' mass at a radius the
    // private price band cannot deliver. No a-priori bound closes this —
    // the search walks the patterns and certifies each node's polyhedron
    // empty by projection.
    let harsh = override_drcc(build_gnep(&params, &samples)?, Some(0.9), Some(100.0))?;
    let res = solve(&harsh, &SolverOptions::default())?;
    println!("epsilon=0.9, theta=100:");
    println!("status            : {}", res.status);
    println!("feasible set empty: {}", res.feasible_set_empty);
    println!("nodes examined    : {}", res.nodes_examined);
    let empty = res.per_node.iter().filter(|n| n.empty).count();
    let pruned = res.per_node.iter().filter(|n| n.pruned).count();
    println!("closed as empty   : {empty}");
    println!("closed by bound   : {pruned}");
    assert_eq!(res.status, EquilibriumStatus::NonExistence);

    // The same market at the original radius has an equilibrium — the
    // verdict is about the radius, not the market.
    let original = build_gnep(&params, &samples)?;
    let res = solve(&original, &SolverOptions::default())?;
    println!("\noriginal radius   : {} (residual {:.3e})", res.status, res.residual);
    Ok(())
}
