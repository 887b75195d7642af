//! The two-branch stylization loop and the file-level operations behind the
//! `flowstyle` binary.
//!
//! A run encodes the content frames with the causal codec, inverts the latent
//! through the toy denoiser to recover its noise and trajectory, and then
//! denoises a reconstruction branch and a stylization branch side by side.
//! The stylization branch sees the stylized references through guided
//! attention and is pulled toward the trajectory by high-frequency
//! compensation only.

mod config;
mod denoiser;
mod inversion;
mod references;
mod schedule;
mod stylize;
mod synthetic;

use std::path::Path;

use sha2::{Digest, Sha256};

pub use config::{InputPaths, RunConfig};
pub use denoiser::{Block, ConstantVelocity, DenoiserConfig, ToyDenoiser, VelocityModel};
pub use inversion::{euler_denoise, euler_invert, Trajectory};
pub use references::{arrange_references, ReferenceArrangement, ReferencePolicy};
pub use schedule::{linear_sigmas, GuidanceSchedule, ScheduleParams};
pub use stylize::{
    build_masks, denoise_step, stylize, DenoiseState, MaskSet, StylizeInputs, StylizeOutput, StylizeSettings,
    TwoBranchContext,
};
pub use synthetic::{gen_synthetic, Motion, SyntheticClip, SyntheticSpec, CONTENT_FILE, FLOWS_FILE, STYLIZED_FILE};

use crate::attention::{attention_diagnostics, attention_with_weights, AttentionDiagnostics};
use crate::decomposition::ToyCausalCodec;
use crate::error::{Error, Result};
use crate::flow::{load_flows, reference_mask_to_sparse, save_mask};
use crate::frequency::spectrum_profile;
use crate::tensor::{load_grid, save_grid, Grid4};

/// Hex SHA-256 of a grid's file encoding.
pub fn grid_digest(grid: &Grid4) -> String {
    hex::encode(Sha256::digest(grid.to_bytes()))
}

impl StylizeSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            temporal_factor: cfg.temporal_factor,
            offset: cfg.offset,
            policy: cfg.reference_policy,
            schedule: cfg.schedule()?,
            fixed_point_iterations: cfg.fixed_point_iterations,
            dilation: cfg.dilation,
            model: cfg.model.clone(),
            codec_seed: cfg.codec_seed,
        })
    }
}

fn check_dims(cfg: &RunConfig, what: &str, g: &Grid4) -> Result<()> {
    let d = g.dims();
    if (d.maps, d.channels, d.height, d.width) != (cfg.frames, cfg.channels, cfg.height, cfg.width) {
        return Err(Error::Shape(format!(
            "{what} is {d}, config expects {} x {} x {} x {}",
            cfg.frames, cfg.channels, cfg.height, cfg.width
        )));
    }
    Ok(())
}

/// Loads the run inputs, generating and writing them first when the config
/// carries a synthetic spec.
pub fn load_inputs(cfg: &RunConfig) -> Result<StylizeInputs> {
    if let Some(spec) = &cfg.synthetic {
        let clip = gen_synthetic(spec)?;
        for p in [&cfg.inputs.content, &cfg.inputs.stylized, &cfg.inputs.flows] {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        save_grid(&clip.content, &cfg.inputs.content)?;
        save_grid(&clip.stylized, &cfg.inputs.stylized)?;
        crate::flow::save_flows(&clip.flows, &cfg.inputs.flows)?;
    }
    let content = load_grid(&cfg.inputs.content)?;
    let stylized = load_grid(&cfg.inputs.stylized)?;
    let flows = load_flows(&cfg.inputs.flows)?;
    check_dims(cfg, "content", &content)?;
    check_dims(cfg, "stylized frames", &stylized)?;
    Ok(StylizeInputs {
        content,
        stylized,
        flows,
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_attention(dir: &Path, d: &AttentionDiagnostics) -> Result<()> {
    d.write_csv(&dir.join("attention_temporal.csv"), &dir.join("attention_spatial.csv"))
}

/// Runs [`stylize`] for a config and writes every output into its
/// `output_dir`. Returns the digest of the stylized latent.
pub fn run_stylize(cfg: &RunConfig) -> Result<String> {
    let inputs = load_inputs(cfg)?;
    let out = stylize(&inputs, &StylizeSettings::from_config(cfg)?)?;
    let dir = out_dir(cfg)?;
    save_grid(&out.stylized, dir.join("stylized_latent.fvg"))?;
    save_grid(&out.reconstruction, dir.join("reconstruction_latent.fvg"))?;
    save_grid(&out.stylized_frames, dir.join("stylized_frames.fvg"))?;
    save_mask(&out.masks.flow, dir.join("flow_mask.fvm6"))?;
    save_mask(
        &reference_mask_to_sparse(&out.masks.reference, cfg.frames)?,
        dir.join("reference_mask.fvm6"),
    )?;
    write_text(&dir.join("spectrum.csv"), &spectrum_profile(&out.stylized)?.to_csv())?;
    write_attention(dir, &out.attention)?;
    let digest = grid_digest(&out.stylized);
    let summary = serde_json::json!({
        "digest": digest,
        "reference_frames": out.references.frames(),
        "reference_maps": out.references.maps(),
        "steps": cfg.steps,
    });
    write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    Ok(digest)
}

/// Inverts the encoded content and writes the noise and the stacked
/// trajectory. Returns the max-abs error of re-denoising the noise.
pub fn run_invert(cfg: &RunConfig) -> Result<f32> {
    let inputs = load_inputs(cfg)?;
    let codec = ToyCausalCodec::planted(cfg.temporal_factor, cfg.channels, cfg.offset, cfg.codec_seed)?;
    let latent = codec.encode_video(&inputs.content)?;
    let model = ToyDenoiser::new(cfg.model.clone())?;
    let sigmas = linear_sigmas(cfg.steps);
    let (noise, trajectory) = euler_invert(&model, &latent, &sigmas, cfg.fixed_point_iterations)?;
    let back = euler_denoise(&model, &noise, &sigmas)?;
    let dir = out_dir(cfg)?;
    save_grid(&noise, dir.join("inverted_noise.fvg"))?;
    save_grid(&trajectory.stacked()?, dir.join("trajectory.fvg"))?;
    back.max_abs_diff(&latent)
}

/// Writes the pixel-level flow and reference masks and the token-level flow
/// mask. Returns the number of flow correspondences.
pub fn run_masks(cfg: &RunConfig) -> Result<usize> {
    let flows = load_flows(&cfg.inputs.flows)?;
    if (flows.frames(), flows.height(), flows.width()) != (cfg.frames, cfg.height, cfg.width) {
        return Err(Error::Shape("flow file does not match the config dims".into()));
    }
    let refs = arrange_references(cfg.frames, cfg.temporal_factor, cfg.offset, cfg.reference_policy)?;
    let masks = build_masks(&flows, &refs, cfg.patch, cfg.temporal_factor, cfg.offset, cfg.dilation)?;
    let dir = out_dir(cfg)?;
    save_mask(&masks.flow, dir.join("flow_mask.fvm6"))?;
    save_mask(&reference_mask_to_sparse(&masks.reference, cfg.frames)?, dir.join("reference_mask.fvm6"))?;
    save_mask(&masks.flow_tokens, dir.join("flow_mask_tokens.fvm6"))?;
    Ok(masks.flow.len())
}

/// First-block self-attention of the toy denoiser on the clean content
/// latent, summarized per latent map.
pub fn run_diagnose_attention(cfg: &RunConfig) -> Result<AttentionDiagnostics> {
    let inputs = load_inputs(cfg)?;
    let codec = ToyCausalCodec::planted(cfg.temporal_factor, cfg.channels, cfg.offset, cfg.codec_seed)?;
    let latent = codec.encode_video(&inputs.content)?;
    let model = ToyDenoiser::new(cfg.model.clone())?;
    let maps: Vec<usize> = (0..latent.dims().maps).collect();
    let h = model.embed(&latent, &maps, 0.0)?;
    let qkv = model.blocks()[0].project(&h)?;
    let (_, w) = attention_with_weights(&qkv.q, &qkv.k, &qkv.v, None)?;
    let (th, tw) = model.token_grid(cfg.height, cfg.width)?;
    let probe = (th / 2) * tw + tw / 2;
    let d = attention_diagnostics(&w, qkv.q.positions(), qkv.k.positions(), probe)?;
    write_attention(out_dir(cfg)?, &d)?;
    Ok(d)
}
