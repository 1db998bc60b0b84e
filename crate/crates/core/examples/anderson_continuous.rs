//! Continuous-time partition function: certified interval, path Monte Carlo,
//! and the Anderson equation solved on a box.

use polyorder::envlat::{sample_mark_set, Mark, MarkLaw, MarkSet};
use polyorder::pam_ct::{ct_partition_exact, ct_partition_mc, pam_ode_solve};

fn main() -> polyorder::Result<()> {
    let law = MarkLaw::new(1.0, vec![(-1.0, 0.5), (1.0, 0.5)])?;
    let (kappa, t) = (1.0, 1.5);
    let marks = sample_mark_set(&law, 1, t, 6, 3)?;
    println!("{} marks on [-6, 6] x [0, {t}]", marks.len());

    let iv = ct_partition_exact(&marks, kappa, t, 1e-8)?;
    println!("Z in [{:.10}, {:.10}] (box radius {}, cutoff {})", iv.lo, iv.hi, iv.box_radius, iv.cutoff);
    let mc = ct_partition_mc(&marks, kappa, t, 100_000, 5)?;
    println!("path Monte Carlo: {:.5} +- {:.5}", mc.mean, mc.se);

    let reversed = MarkSet::new(
        1,
        t,
        marks.box_radius(),
        marks.marks().iter().map(|m| Mark { time: t - m.time, site: m.site.clone(), r: m.r }).collect(),
    )?;
    let sol = pam_ode_solve(&reversed, kappa, t, 20, 0.05)?;
    println!("u(t, 0) from the reversed marks: {:.10} (error bound {:.1e})", sol.value_at_origin, sol.error_bound);
    Ok(())
}
