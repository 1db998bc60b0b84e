//! Majorization decides the concave order on the K-ary tree: sufficiency by
//! enumeration, necessity by the obstacle mixture.

use polyorder::envlat::EnvSpec;
use polyorder::increments::{is_majorized, TreeIncrementDist};
use polyorder::treepoly::{necessity_check, tree_ladder_order_check, tree_theorem_sufficiency_check};

fn main() -> polyorder::Result<()> {
    let spread = TreeIncrementDist::new(vec![0.4, 0.35, 0.25])?;
    let peaked = TreeIncrementDist::new(vec![0.7, 0.2, 0.1])?;
    let env = EnvSpec::new(vec![(-1.0, 0.3), (0.5, 0.7)])?;

    let cert = is_majorized(spread.probs(), peaked.probs(), 1e-12);
    println!("spread <=_M peaked: {} (partial-sum gaps {:?})", cert.verdict, cert.gaps);

    let suff = tree_theorem_sufficiency_check(&spread, &peaked, &env, 2, 10_000_000, 1e-10)?;
    println!("Z^peaked <=_cv Z^spread: {} (worst violation {:.2e})", suff.verdict, suff.worst_violation);

    let ladder = tree_ladder_order_check(&spread, &peaked, &env, 2, 10_000_000, 1e-10)?;
    println!("interpolation ladder: {} rungs, all ordered: {}", ladder.steps.len(), ladder.verdict);

    let nec = necessity_check(&peaked, &spread, 1e-10)?;
    println!("reversed pair: order holds {}, violation {:.4}", nec.verdict, nec.worst_violation);
    Ok(())
}
