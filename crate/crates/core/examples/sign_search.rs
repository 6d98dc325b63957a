//! Choosing signs that almost diagonalize an operator on the block basis.

use haar_factor::block::gamlen_gaudet;
use haar_factor::experiment::gen_operator;
use haar_factor::operators::sign_normalize;
use haar_factor::randomization::{calibrate_eta0, event_union_bound, search_signs, BlockForm, SearchStrategy};
use haar_factor::SpaceTag;

fn main() -> haar_factor::Result<()> {
    let t = gen_operator("diag-perturb(0.05)", 8, 11, SpaceTag::Hp { p: 2.0 })?;
    let t = sign_normalize(&t).normalized;
    let c = gamlen_gaudet(2, 4, 8)?;
    let form = BlockForm::new(&t, &c)?;

    for q in [0.02, 0.5, 0.9] {
        let eta0 = calibrate_eta0(&form, q, 2_000, 0)?;
        println!("quantile {q}: eta0 = {eta0:.4e}, Chebyshev union bound {:.3}", event_union_bound(&t, &c, eta0)?);
        for strategy in [SearchStrategy::Rejection, SearchStrategy::Greedy] {
            let r = search_signs(&t, &c, eta0, 10_000, 42, strategy)?;
            println!(
                "    {strategy:?}: success {} after {} evaluations, max |Y| = {:.3e}, max |Z| = {:.3e}",
                r.success, r.attempts, r.off_diagonal_max, r.diagonal_max
            );
        }
    }
    Ok(())
}
