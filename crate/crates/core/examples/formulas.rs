//! The dimension formula and the constants behind it.

use haar_factor::experiment::report_formulas;

fn main() -> haar_factor::Result<()> {
    for (n, delta, gamma, eta) in [(1, 1.0, 1.0, 1.0), (2, 0.5, 2.0, 0.5), (4, 0.25, 4.0, 0.25)] {
        let r = report_formulas(n, delta, gamma, eta)?;
        println!("n = {n}, delta = {delta}, Gamma = {gamma}, eta = {eta}");
        print!("{}", r.to_text());
        println!();
    }
    Ok(())
}
