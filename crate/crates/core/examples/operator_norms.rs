//! Operators on W_N: the large-diagonal test, sign normalization, norm
//! certificates and the elementary entry bound.

use haar_factor::experiment::gen_operator;
use haar_factor::operators::{check_large_diagonal, elementary_bound_check, op_norm, sign_normalize};
use haar_factor::{HaarOperator, SolverOptions, SpaceTag};

fn main() -> haar_factor::Result<()> {
    let level = 4;
    let h2 = SpaceTag::Hp { p: 2.0 };
    let t = gen_operator("diag-perturb(0.2)", level, 7, h2)?;
    let flipped = HaarOperator::diagonal(level, |k| if k.level() % 2 == 0 { 0.0 } else { -2.5 })?;
    let t = t.scale(1.5).add(&flipped)?;

    let d = check_large_diagonal(&t, 0.5)?;
    println!("achieved delta = {:.4} at {} (passed at 0.5: {})", d.achieved_delta, d.weakest, d.passed);
    let n = sign_normalize(&t);
    let negative = n.signs.iter().filter(|s| **s < 0).count();
    println!("sign normalization flipped {negative} columns");

    for space in [h2, SpaceTag::Hp { p: 1.0 }, SpaceTag::HpDual { p: 3.0 }, SpaceTag::Slinf] {
        let est = op_norm(&t, space, &SolverOptions::default())?;
        println!("{space:?}: {:.4} <= ||T|| <= {:.4} (exact {})", est.lower, est.upper, est.exact);
        let entries = elementary_bound_check(&t, space, Some(est.upper))?;
        println!("    max |G[K',K]| / (|K|^s |K'|^t) = {:.4}, violations {}", entries.max_ratio, entries.violations.len());
    }
    Ok(())
}
