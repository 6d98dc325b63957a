//! Gamlen-Gaudet collections and Jones' compatibility conditions.

use haar_factor::block::{gamlen_gaudet, jones_check, Condition};
use haar_factor::{BlockCollection, DyadicInterval};

fn main() -> haar_factor::Result<()> {
    let c = gamlen_gaudet(2, 3, 6)?;
    for (i, members) in c.iter() {
        let labels: Vec<String> = members.iter().map(|k| k.label()).collect();
        println!("B_{i}: |B_I| = {}  {}", c.union_measure(i), labels.join(" "));
    }
    let r = jones_check(&c, 1.0)?;
    println!("kappa = 1: passed {}, triples {}, (C4) with equality {}", r.passed, r.triples_checked, r.c4_equality);

    // Swapping the children's collections breaks the nesting condition.
    let root = DyadicInterval::root();
    let (plus, minus) = root.children()?;
    let mut members: Vec<Vec<DyadicInterval>> = c.iter().map(|(_, m)| m.to_vec()).collect();
    members.swap(plus.index(), minus.index());
    let broken = BlockCollection::new(2, 6, members)?;
    let r = jones_check(&broken, 1.0)?;
    println!("swapped children: passed {}, (C2) violations {}", r.passed, r.count(Condition::C2));
    if let Some(v) = r.violations.first() {
        println!("first violation: {v}");
    }
    Ok(())
}
