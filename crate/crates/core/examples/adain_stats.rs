//! Renormalizes a random grid to the per-channel statistics of another.

use flowstyle::tensor::{adain, channel_stats, Dims4, Grid4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> flowstyle::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = Dims4::new(1, 3, 8, 8);
    let x = Grid4::from_fn(dims, |_, c, _, _| 2.0 * rng.sample::<f32, _>(StandardNormal) + c as f32)?;
    let target = Grid4::from_fn(dims, |_, c, _, _| 0.5 * rng.sample::<f32, _>(StandardNormal) - c as f32)?;
    let out = adain(&x, &target)?;
    let (sx, st, so) = (channel_stats(&x)?, channel_stats(&target)?, channel_stats(&out)?);
    println!("channel  source(mean,std)   target(mean,std)   output(mean,std)");
    for c in 0..3 {
        println!(
            "{c:>7}  ({:+.3}, {:.3})    ({:+.3}, {:.3})    ({:+.3}, {:.3})",
            sx.mean[c], sx.std[c], st.mean[c], st.std[c], so.mean[c], so.std[c]
        );
    }
    Ok(())
}
