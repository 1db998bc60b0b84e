//! Branching random walks: mean population against the partition function,
//! and survival for a lazy versus a spread-out walk.

use polyorder::branching::{many_to_one_check_ct, many_to_one_check_dt, survival_experiment_dt, CTBranchParams};
use polyorder::envlat::{sample_mark_set, MarkLaw, OffspringLaw, OffspringSpec};
use polyorder::increments::IncrementDist;

fn main() -> polyorder::Result<()> {
    let offspring = OffspringSpec::new(vec![
        (OffspringLaw::dirac(0), 0.2),
        (OffspringLaw::dirac(1), 0.5),
        (OffspringLaw::dirac(2), 0.3),
    ])?;
    let stay = IncrementDist::new(1, vec![(vec![0], 1.0)])?;
    let simple = IncrementDist::new(1, vec![(vec![-1], 0.5), (vec![1], 0.5)])?;

    let dt = many_to_one_check_dt(&offspring, &simple, 5, 50_000, 1)?;
    println!("discrete: E N_t = {:.5}, simulated {:.5} +- {:.5}", dt.exact, dt.mc.mean, dt.mc.se);

    let marks = sample_mark_set(&MarkLaw::new(1.0, vec![(-0.5, 1.0)])?, 1, 1.0, 8, 2)?;
    let ct = many_to_one_check_ct(&marks, CTBranchParams::new(1.0, 0.5, 1.0)?, 50_000, 1e-6, 3)?;
    println!(
        "continuous: E N_t = {:.5} +- {:.1e}, simulated {:.5} +- {:.5}",
        ct.exact, ct.exact_radius, ct.mc.mean, ct.mc.se
    );

    for (name, p) in [("stay", &stay), ("simple", &simple)] {
        let s = survival_experiment_dt(&offspring, p, 25, 4_000, 0, 10_000, 4)?;
        println!("{name:>6}: survival to generation 25 = {:.4} +- {:.4}", s.frequency, s.se);
    }
    Ok(())
}
