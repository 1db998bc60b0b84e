//! Sampled concave-order test on a horizon too long to enumerate.

use polyorder::envlat::EnvSpec;
use polyorder::increments::{convolve, IncrementDist};
use polyorder::polymer_dt::sample_partition_pairs;
use polyorder::stochorder::{concave_order_empirical, quantile_grid, EmpiricalOptions};

fn main() -> polyorder::Result<()> {
    let env = EnvSpec::new(vec![(-0.5, 0.5), (0.5, 0.5)])?;
    let p = IncrementDist::new(1, vec![(vec![0], 1.0)])?;
    let q = IncrementDist::new(1, vec![(vec![-1], 0.5), (vec![1], 0.5)])?;
    let pq = convolve(&p, &q)?;

    let pairs = sample_partition_pairs(&env, &p, &pq, 20, 20_000, 42)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let grid = quantile_grid(&xs, &ys, 12);
    let rep = concave_order_empirical(&xs, &ys, &grid, EmpiricalOptions { z: 3.0, paired: true, bonferroni: false })?;
    println!("verdict: {:?}, mean gap {:+.4} (se {:.4})", rep.verdict, rep.mean_gap, rep.mean_gap_se);
    for r in &rep.rows {
        println!("  a = {:8.4}  gap {:+.4}  lower {:+.4}", r.a, r.gap, r.lower);
    }
    Ok(())
}
