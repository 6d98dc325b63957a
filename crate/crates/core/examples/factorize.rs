//! End to end: F T E = Id on W_2 through a perturbed identity on W_8.

use haar_factor::experiment::{run, Eta0Mode, Eta0Setting, ExperimentConfig, SpaceKind};

fn main() {
    for space in [SpaceKind::Hp, SpaceKind::Slinf] {
        let cfg = ExperimentConfig {
            space,
            n: 2,
            big_n: Some(8),
            m0: Some(4),
            eta0: Eta0Setting::Mode(Eta0Mode::Calibrate),
            generator: Some("diag-perturb(0.05)".into()),
            seed: 3,
            ..Default::default()
        };
        match run(&cfg) {
            Ok(r) => {
                let f = &r.factorization;
                println!("{:?}: delta = {:.4}, eta0 = {:.3e}", r.provenance.space, r.provenance.delta, r.provenance.eta0);
                println!("    sign search: {} attempt(s)", r.sign_search.attempts);
                println!("    ||F T E - Id|| = {:.3e} (tolerance {:.0e})", f.residual, f.tolerance);
                println!(
                    "    ||E|| ||F|| in [{:.4}, {:.4}], target (1 + eta)/delta = {:.4}, certified by {:?}",
                    f.norm_product.0, f.norm_product.1, f.norm_product_bound, r.verification.product_certificate
                );
                println!(
                    "    chain at achieved eta0 = {:.3e}: q = {:.3}, ||V|| <= {:.4}, implied eta = {:.3}",
                    f.analytic_achieved.eta0,
                    f.analytic_achieved.q.unwrap_or(f64::NAN),
                    f.analytic_achieved.v_bound.unwrap_or(f64::INFINITY),
                    f.analytic_achieved.implied_eta.unwrap_or(f64::INFINITY)
                );
            }
            Err(e) => println!("{space:?}: {e} (exit code {})", e.stage.exit_code()),
        }
    }
}
