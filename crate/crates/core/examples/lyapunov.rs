//! Annealed exponents across jump rates: increasing in kappa for r < 1,
//! decreasing for r > 1, flat at r = 1.

use polyorder::envlat::MarkLaw;
use polyorder::pam_ct::{lyapunov_annealed_estimate, lyapunov_quenched_estimate, CtEnvOptions};

fn main() -> polyorder::Result<()> {
    let law = MarkLaw::new(1.0, vec![(-1.0, 1.0)])?;
    let opts = CtEnvOptions { dim: 1, env_radius: 25, eps: 1e-6 };
    let (t, n_env, seed) = (3.0, 2_000, 9);
    println!("{:>6} {:>18} {:>18} {:>18} {:>18}", "kappa", "r = 1/2", "r = 1", "r = 2", "quenched");
    for kappa in [0.25, 1.0, 4.0] {
        let mut row = format!("{kappa:>6}");
        for r in [0.5, 1.0, 2.0] {
            let e = lyapunov_annealed_estimate(&law, kappa, r, t, n_env, seed, opts)?;
            row += &format!(" {:>10.4} +- {:.3}", e.estimate, e.se);
        }
        match lyapunov_quenched_estimate(&law, kappa, t, n_env, seed, opts) {
            Ok(q) => row += &format!(" {:>10.4} +- {:.3}", q.estimate, q.se),
            Err(e) => row += &format!(" {e}"),
        }
        println!("{row}");
    }
    Ok(())
}
