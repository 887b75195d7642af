//! Splits a grid into low and high frequencies, prints its radial spectrum
//! and shows that high-frequency compensation leaves the low band alone.

use flowstyle::frequency::{fft2_split, ihc_compensate, low_part, spectrum_profile, IhcConfig, LowPassFilter};
use flowstyle::tensor::{Dims4, Grid4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> flowstyle::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = Dims4::new(1, 2, 16, 16);
    let smooth = Grid4::from_fn(dims, |_, c, y, x| (y as f32 * 0.4).sin() + (x as f32 * 0.3 + c as f32).cos())?;
    let noisy = smooth.zip_map(&Grid4::from_fn(dims, |_, _, _, _| rng.sample(StandardNormal))?, |a, b| a + 0.3 * b)?;

    let filter = LowPassFilter::default();
    let split = fft2_split(&noisy, &filter)?;
    let rebuilt = split.low.add(&split.high)?;
    println!("cutoff {}: low + high reproduces the input to {:.2e}", filter.cutoff(), rebuilt.max_abs_diff(&noisy)?);

    let profile = spectrum_profile(&noisy)?;
    println!("radial spectrum:");
    for (bin, e) in profile.energy.iter().enumerate() {
        println!("  band {bin}: {e:.4} ({:.1}%)", 100.0 * profile.share(bin));
    }

    let recon = smooth.scale(1.1)?;
    let cfg = IhcConfig::constant(1, 1.0, filter)?;
    let compensated = ihc_compensate(&smooth, &recon, &noisy, &cfg, 0)?;
    let drift = low_part(&compensated, &filter)?.max_abs_diff(&low_part(&smooth, &filter)?)?;
    println!("compensation moved the input by {:.3}, its low band by {drift:.2e}", compensated.max_abs_diff(&smooth)?);
    Ok(())
}
