//! Dyadic intervals, Haar vectors, the pairing and the square function.

use haar_factor::dyadic::{dimension, enumerate};
use haar_factor::haar::{haar_to_step, pairing, pairing_step, square_function};
use haar_factor::{DyadicInterval, HaarVector};

fn main() -> haar_factor::Result<()> {
    let level = 3;
    println!("W_{level} has dimension {}", dimension(level));

    let i: DyadicInterval = "2:3".parse()?;
    let (plus, minus) = i.children()?;
    println!("{i} = [{}, {}), children {plus} and {minus}, index {}", i.start(), i.end(), i.index());

    // h_I = chi_{I+} - chi_{I-}; orthogonality <h_I, h_J> = |I| 1{I = J}.
    let set = enumerate(2)?;
    for a in set.iter().take(3) {
        for b in set.iter().take(3) {
            let p = pairing(&HaarVector::haar(a, 2)?, &HaarVector::haar(b, 2)?);
            print!("{p:>6} ");
        }
        println!();
    }

    let f = HaarVector::from_terms(level, &[(DyadicInterval::root(), 1.0), ("1:1".parse()?, -2.0), ("3:5".parse()?, 0.5)])?;
    let g = HaarVector::from_terms(level, &[(DyadicInterval::root(), 3.0), ("1:1".parse()?, 1.0)])?;
    println!("<f, g> = {} (coefficients), {} (step functions)", pairing(&f, &g), pairing_step(&f, &g)?);

    let step = haar_to_step(&f);
    println!("f on the cells of mesh {}: {:?}", step.mesh(), step.cells());
    println!("S(f) = {:?}", square_function(&f).cells());
    Ok(())
}
