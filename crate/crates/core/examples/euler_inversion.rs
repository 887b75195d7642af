//! Inverts a random latent through the toy denoiser and denoises it back.

use flowstyle::pipeline::{euler_denoise, euler_invert, linear_sigmas, DenoiserConfig, ToyDenoiser};
use flowstyle::tensor::{Dims4, Grid4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> flowstyle::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Grid4::from_fn(Dims4::new(9, 4, 8, 8), |_, _, _, _| rng.sample(StandardNormal))?;
    let model = ToyDenoiser::new(DenoiserConfig::toy(4, [2, 2], 7))?;
    let sigmas = linear_sigmas(8);
    for k in 1..=6 {
        let (noise, _) = euler_invert(&model, &x0, &sigmas, k)?;
        let back = euler_denoise(&model, &noise, &sigmas)?;
        println!("K={k}: round-trip max-abs error {:.3e}", back.max_abs_diff(&x0)?);
    }
    Ok(())
}
