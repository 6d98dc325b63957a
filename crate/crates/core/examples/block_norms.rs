//! Norms of block vectors: H^p, the dual of H^p and SL^inf against the
//! closed form |U B|^(1/p).

use haar_factor::norms::{block_norm_closed_form, dual_norm_hp, norm_hp, norm_slinf};
use haar_factor::{DyadicInterval, HaarVector, SolverOptions, SpaceTag};

fn main() -> haar_factor::Result<()> {
    let level = 5;
    let members: Vec<DyadicInterval> = ["2:0", "3:5", "4:13", "5:30"].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let signs = [1.0, -1.0, -1.0, 1.0];
    let terms: Vec<_> = members.iter().copied().zip(signs).collect();
    let b = HaarVector::from_terms(level, &terms)?;

    for p in [1.0, 1.5, 2.0, 3.0] {
        let closed = block_norm_closed_form(&members, SpaceTag::Hp { p })?;
        let dual_closed = block_norm_closed_form(&members, SpaceTag::HpDual { p })?;
        let dual = dual_norm_hp(&b, p, &SolverOptions::default())?;
        println!(
            "p = {p}: ||b||_Hp = {:.6} (closed {closed:.6}), dual = {:.6} (closed {dual_closed:.6}, converged {})",
            norm_hp(&b, p)?,
            dual.value,
            dual.converged
        );
    }
    println!("||b||_SLinf = {} (closed {})", norm_slinf(&b), block_norm_closed_form(&members, SpaceTag::Slinf)?);
    Ok(())
}
