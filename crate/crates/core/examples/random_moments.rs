//! Moments of the random variables Y and Z: exact enumeration, closed
//! forms and the second-moment bounds.

use haar_factor::block::gamlen_gaudet;
use haar_factor::experiment::gen_operator;
use haar_factor::randomization::{exact_moments, mc_moments, variance_bound_check, MomentTarget, ENUMERATION_CAP};
use haar_factor::SpaceTag;

fn main() -> haar_factor::Result<()> {
    let h2 = SpaceTag::Hp { p: 2.0 };
    let t = gen_operator("dense-random(1)", 6, 3, h2)?;
    let c = gamlen_gaudet(2, 3, 6)?;

    for target in MomentTarget::all(&c).into_iter().step_by(7) {
        let exact = exact_moments(&t, &c, target, ENUMERATION_CAP)?;
        let mc = mc_moments(&t, &c, target, 20_000, 1)?;
        println!(
            "{:?}: mean {} (exact {}), E X^2 = {:.6e} = closed form {:.6e}: {:?}; Monte Carlo {:.6e} +- {:.1e}",
            exact.pair.iter().map(|i| i.label()).collect::<Vec<_>>(),
            exact.mean,
            exact.exact_mean.as_ref().map(|d| d.to_string()).unwrap_or_default(),
            exact.second_moment,
            exact.closed_form,
            exact.matches_closed_form,
            mc.second_moment,
            mc.second_moment_standard_error.unwrap_or(0.0),
        );
    }
    let norm = t.to_map().hilbert_norm().0;
    let v = variance_bound_check(&t, &c, h2, norm)?;
    let worst = v.entries.iter().map(|e| e.second_moment / e.bound).fold(0.0, f64::max);
    println!("alpha = {}, ||T|| = {norm:.4}: all bounds hold {}, worst ratio {worst:.4}", v.alpha, v.passed);
    Ok(())
}
