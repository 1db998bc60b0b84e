//! One sampled environment, the transfer-matrix partition function, and the
//! finite-t free energy for walks of increasing randomness.

use std::sync::Arc;

use polyorder::envlat::{sample_lattice_field, EnvSpec};
use polyorder::increments::IncrementDist;
use polyorder::polymer_dt::{free_energy_estimate, mass_profiles, partition_function};

fn main() -> polyorder::Result<()> {
    let env = EnvSpec::new(vec![(-0.9, 0.5), (0.9, 0.5)])?;
    let lazy = IncrementDist::new(1, vec![(vec![-1], 0.25), (vec![0], 0.5), (vec![1], 0.25)])?;
    let t = 12;

    let field = sample_lattice_field(&env, Arc::new(lazy.reachable_window(t)), 7)?;
    println!("Z_{t} = {:.6}", partition_function(&field, &lazy, t)?.value);
    let last = mass_profiles(&field, &lazy, t)?.pop().expect("t >= 1");
    let total: f64 = last.mass.iter().sum();
    let peak = last.mass.iter().cloned().fold(0.0, f64::max);
    println!("endpoint law at time {}: {} sites, largest share {:.3}", last.time, last.sites.len(), peak / total);

    let walks = [
        ("stay", IncrementDist::new(1, vec![(vec![0], 1.0)])?),
        ("simple", IncrementDist::new(1, vec![(vec![-1], 0.5), (vec![1], 0.5)])?),
        ("lazy", lazy),
    ];
    for (name, p) in &walks {
        let fe = free_energy_estimate(&env, p, 60, 200, 11)?;
        println!("{name:>6}: (1/t) log Z = {:+.4} +- {:.4}", fe.estimate, fe.se);
    }
    Ok(())
}
