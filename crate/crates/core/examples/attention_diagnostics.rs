//! Summarizes first-block self-attention of the toy denoiser over the latent
//! maps of a swirling clip, writing the CSVs into a temporary directory.

use flowstyle::pipeline::{run_diagnose_attention, Motion, RunConfig, SyntheticSpec};

fn main() -> flowstyle::Result<()> {
    let dir = std::env::temp_dir().join(format!("flowstyle-diag-{}", std::process::id()));
    let mut cfg = RunConfig::toy(&dir);
    cfg.synthetic = Some(SyntheticSpec {
        frames: 9,
        height: 16,
        width: 16,
        channels: 4,
        motion: Motion::Swirl { amplitude: 1.5 },
        seed: 4,
        style_seed: 5,
    });
    let d = run_diagnose_attention(&cfg)?;
    println!("mean attention weight from query map (row) to key map (column):");
    for row in &d.temporal {
        println!("  {}", row.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join("  "));
    }
    let mass: Vec<f64> = d.spatial.iter().map(|g| g.iter().flatten().sum()).collect();
    println!("probe token {} spreads its weight over maps as {mass:.3?}", d.probe);
    println!("csv files in {}", cfg.output_dir.display());
    Ok(())
}
