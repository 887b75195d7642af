use crate::attention::{
    aggregate, attention_diagnostics, attention_with_weights, cross_attention_concat_kv, inject_dynamics,
    isolated_attention, out1, out2, out3, AttentionDiagnostics, AttentionMask, BranchTokens, Qkv, TokenMatrix,
    TokenPos,
};
use crate::decomposition::ToyCausalCodec;
use crate::error::{Error, Result};
use crate::flow::{
    combine_and, dilate, flow_mask, reference_masks, CorrespondenceMask, FlowFieldSequence, PoolToTokens,
    ReferenceMask, TokenPooling,
};
use crate::frequency::{ihc_compensate, reconstruction_compensate};
use crate::tensor::Grid4;

use super::denoiser::{DenoiserConfig, ToyDenoiser};
use super::inversion::{euler_invert, Trajectory};
use super::references::{arrange_references, ReferenceArrangement, ReferencePolicy};
use super::schedule::GuidanceSchedule;

/// Frame-level inputs: content frames, stylized frames (only the reference
/// frames are read) and the optical flow of the content.
#[derive(Debug, Clone, PartialEq)]
pub struct StylizeInputs {
    pub content: Grid4,
    pub stylized: Grid4,
    pub flows: FlowFieldSequence,
}

/// Model, codec and guidance settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StylizeSettings {
    pub temporal_factor: usize,
    pub offset: usize,
    pub policy: ReferencePolicy,
    pub schedule: GuidanceSchedule,
    pub fixed_point_iterations: usize,
    pub dilation: usize,
    pub model: DenoiserConfig,
    pub codec_seed: u64,
}

/// Pixel-level masks and their token-level counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    /// Flow correspondences before dilation.
    pub flow: CorrespondenceMask,
    pub reference: ReferenceMask,
    /// Dilated flow correspondences pooled to tokens.
    pub flow_tokens: CorrespondenceMask,
    /// Dilated flow correspondences gated by the reference masks, pooled.
    pub combined_tokens: CorrespondenceMask,
    pub reference_tokens: ReferenceMask,
}

/// Builds every mask the guided attention needs.
pub fn build_masks(
    flows: &FlowFieldSequence,
    references: &ReferenceArrangement,
    patch: [usize; 2],
    temporal_factor: usize,
    offset: usize,
    dilation: usize,
) -> Result<MaskSet> {
    let pooling = TokenPooling::for_video((patch[0], patch[1]), flows.frames(), temporal_factor, offset)?;
    let flow = flow_mask(flows)?;
    let dilated = dilate(&flow, dilation);
    let reference = reference_masks(flows, references.frames())?;
    Ok(MaskSet {
        flow_tokens: dilated.pool_to_tokens(&pooling)?,
        combined_tokens: combine_and(&dilated, &reference)?.pool_to_tokens(&pooling)?,
        reference_tokens: reference.pool_to_tokens(&pooling)?,
        flow,
        reference,
    })
}

/// Latents of both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseState {
    pub recon: Grid4,
    pub style: Grid4,
}

/// One branch's conditioning: the first reference as prefix tokens, later
/// references as extra tokens, and the context embeddings of all references.
#[derive(Debug, Clone)]
struct BranchConditioning {
    prefix: Grid4,
    extra: Vec<Grid4>,
    context: Vec<TokenMatrix>,
}

/// Everything fixed across the denoising loop.
#[derive(Debug, Clone)]
pub struct TwoBranchContext {
    model: ToyDenoiser,
    references: ReferenceArrangement,
    recon: BranchConditioning,
    style: BranchConditioning,
    n_prefix: usize,
    n_latent: usize,
    n_extra: usize,
    ref_indices: Vec<usize>,
    m_ref: AttentionMask,
    m_combined: AttentionMask,
    probe: usize,
}

/// Dense `(map, y, x) x (map, y, x)` lookup of a token-level mask.
fn dense(mask: &CorrespondenceMask) -> (Vec<bool>, usize) {
    let cells = mask.frames() * mask.height() * mask.width();
    let flat = |m: u16, y: u16, x: u16| (m as usize * mask.height() + y as usize) * mask.width() + x as usize;
    let mut table = vec![false; cells * cells];
    for e in mask.entries() {
        table[flat(e[0], e[1], e[2]) * cells + flat(e[3], e[4], e[5])] = true;
    }
    (table, cells)
}

impl TwoBranchContext {
    /// Encodes references, builds token positions and the attention masks.
    ///
    /// `recon_refs` and `style_refs` hold one latent map per reference frame
    /// of `references`; `latent_maps` is the map count of the video latent.
    pub fn new(
        model: ToyDenoiser,
        references: ReferenceArrangement,
        recon_refs: &Grid4,
        style_refs: &Grid4,
        masks: &MaskSet,
        latent_maps: usize,
    ) -> Result<Self> {
        if references.is_empty() || references.frames()[0] != 0 {
            return Err(Error::Config("the first reference must be frame 0".into()));
        }
        recon_refs.check_same_dims(style_refs, "reference latents")?;
        let dims = recon_refs.dims();
        if dims.maps != references.len() {
            return Err(Error::Shape(format!(
                "{} reference latents for {} references",
                dims.maps,
                references.len()
            )));
        }
        let (th, tw) = model.token_grid(dims.height, dims.width)?;
        let tokens = th * tw;
        if masks.flow_tokens.frames() != latent_maps || masks.flow_tokens.height() != th || masks.flow_tokens.width() != tw {
            return Err(Error::Shape("token masks do not match the latent token grid".into()));
        }
        let branch = |refs: &Grid4| -> Result<BranchConditioning> {
            let maps: Vec<Grid4> = (0..references.len()).map(|k| refs.map(k)).collect::<Result<_>>()?;
            Ok(BranchConditioning {
                prefix: maps[0].clone(),
                extra: maps[1..].to_vec(),
                context: maps.iter().map(|m| model.context(m)).collect::<Result<_>>()?,
            })
        };
        let recon = branch(recon_refs)?;
        let style = branch(style_refs)?;

        let n_prefix = tokens;
        let n_latent = latent_maps * tokens;
        let n_main = n_prefix + n_latent;
        let mut positions: Vec<TokenPos> = references.positions(0, th, tw);
        positions.extend((0..latent_maps).flat_map(|m| (0..th).flat_map(move |y| (0..tw).map(move |x| TokenPos::new(m, y, x)))));
        let mut extra_ref = Vec::new();
        let mut ref_indices = Vec::new();
        for k in 1..references.len() {
            for p in references.positions(k, th, tw) {
                ref_indices.push(n_prefix + (p.frame as usize * th + p.y as usize) * tw + p.x as usize);
                positions.push(p);
                extra_ref.push(k);
            }
        }
        let n_extra = extra_ref.len();
        let m_ref = AttentionMask::from_fn(n_main, n_main + n_extra, |_, j| {
            j < n_main || {
                let p = positions[j];
                masks.reference_tokens.masks()[extra_ref[j - n_main]].get(p.y as usize, p.x as usize)
            }
        });
        let (flow_table, cells) = dense(&masks.flow_tokens);
        let (comb_table, _) = dense(&masks.combined_tokens);
        let flat = |p: TokenPos| (p.frame as usize * th + p.y as usize) * tw + p.x as usize;
        let n_all = n_main + n_extra;
        let m_combined = AttentionMask::from_fn(n_all, n_all, |i, j| {
            let table = if j >= n_main { &comb_table } else { &flow_table };
            table[flat(positions[i]) * cells + flat(positions[j])]
        });
        let probe = n_prefix + (th / 2) * tw + tw / 2;
        Ok(Self {
            model,
            references,
            recon,
            style,
            n_prefix,
            n_latent,
            n_extra,
            ref_indices,
            m_ref,
            m_combined,
            probe,
        })
    }

    pub fn model(&self) -> &ToyDenoiser {
        &self.model
    }

    pub fn references(&self) -> &ReferenceArrangement {
        &self.references
    }

    /// Masks of the first stylization output and of the flow-guided output.
    pub fn masks(&self) -> (&AttentionMask, &AttentionMask) {
        (&self.m_ref, &self.m_combined)
    }

    fn hidden(&self, cond: &BranchConditioning, x: &Grid4, sigma: f32) -> Result<TokenMatrix> {
        let maps: Vec<usize> = (0..x.dims().maps).collect();
        let mut h = self.model.embed(&cond.prefix, &[0], sigma)?;
        h = h.concat(&self.model.embed(x, &maps, sigma)?)?;
        for (k, r) in cond.extra.iter().enumerate() {
            h = h.concat(&self.model.embed(r, &[self.references.maps()[k + 1]], sigma)?)?;
        }
        Ok(h)
    }

    fn split(&self, p: Qkv) -> Result<(Qkv, Qkv)> {
        let n_main = self.n_prefix + self.n_latent;
        let n = n_main + self.n_extra;
        let main = Qkv::new(p.q.rows(0..n_main), p.k.rows(0..n_main), p.v.rows(0..n_main))?;
        let extra = Qkv::new(p.q.rows(n_main..n), p.k.rows(n_main..n), p.v.rows(n_main..n))?;
        Ok((main, extra))
    }

    /// Velocities of both branches at noise level `sigma`. With `probe` set,
    /// also returns the first-block attention diagnostics of the
    /// stylization branch.
    fn velocities(
        &self,
        state: &DenoiseState,
        sigma: f32,
        xi: f32,
        beta: f32,
        gamma: f32,
        probe: bool,
    ) -> Result<(Grid4, Grid4, Option<AttentionDiagnostics>)> {
        state.recon.check_same_dims(&state.style, "branch latents")?;
        let mut hr = self.hidden(&self.recon, &state.recon, sigma)?;
        let mut hs = self.hidden(&self.style, &state.style, sigma)?;
        let mut diagnostics = None;
        for (b, block) in self.model.blocks().iter().enumerate() {
            let (r_main, r_extra) = self.split(block.project(&hr)?)?;
            let (s_main, s_extra) = self.split(block.project(&hs)?)?;
            let mut bt = BranchTokens::new(r_main, r_extra, s_main, s_extra, self.ref_indices.clone())?;
            let (or_main, or_extra) = isolated_attention(&bt)?;
            bt.style_refs.v = inject_dynamics(&bt, xi)?;
            let o1 = out1(&bt, &self.m_ref)?;
            let o2 = if beta > 0.0 { out2(&bt, &self.m_ref)? } else { o1.clone() };
            let o3 = if gamma > 0.0 { out3(&bt, &self.m_combined)? } else { o1.clone() };
            let os = aggregate(&o1, &o2, &o3, beta, gamma)?;
            if probe && b == 0 {
                let keys = bt.style.k.concat(&bt.style_refs.k)?;
                let values = bt.style.v.concat(&bt.style_refs.v)?;
                let (_, w) = attention_with_weights(&bt.style.q, &keys, &values, Some(&self.m_ref))?;
                diagnostics = Some(attention_diagnostics(&w, bt.style.q.positions(), keys.positions(), self.probe)?);
            }
            hr = block.self_residual(&hr, &or_main.concat(&or_extra)?)?;
            hs = block.self_residual(&hs, &os)?;

            let q = block.cross_query(&hr)?;
            let (mut kr, mut vr, mut vs) = (Vec::new(), Vec::new(), Vec::new());
            for (cr, cs) in self.recon.context.iter().zip(&self.style.context) {
                let (k, v) = block.cross_kv(cr)?;
                kr.push(k);
                vr.push(v);
                vs.push(block.cross_kv(cs)?.1);
            }
            hr = block.cross_residual(&hr, &cross_attention_concat_kv(&q, &kr, &vr)?)?;
            hs = block.cross_residual(&hs, &cross_attention_concat_kv(&q, &kr, &vs)?)?;
            hr = block.mlp_residual(&hr)?;
            hs = block.mlp_residual(&hs)?;
        }
        let latent = self.n_prefix..self.n_prefix + self.n_latent;
        let vr = self.model.unpatchify(&self.model.head(&hr.rows(latent.clone()))?, state.recon.dims())?;
        let vs = self.model.unpatchify(&self.model.head(&hs.rows(latent))?, state.style.dims())?;
        Ok((vr, vs, diagnostics))
    }
}

/// Advances both branches by denoising step `step`: guided attention, one
/// Euler update, then full-strength compensation of the reconstruction
/// branch and high-frequency compensation of the stylization branch toward
/// the trajectory latent.
pub fn denoise_step(
    ctx: &TwoBranchContext,
    state: &DenoiseState,
    schedule: &GuidanceSchedule,
    trajectory: &Trajectory,
    step: usize,
) -> Result<DenoiseState> {
    denoise_step_probed(ctx, state, schedule, trajectory, step, false).map(|(s, _)| s)
}

fn denoise_step_probed(
    ctx: &TwoBranchContext,
    state: &DenoiseState,
    schedule: &GuidanceSchedule,
    trajectory: &Trajectory,
    step: usize,
    probe: bool,
) -> Result<(DenoiseState, Option<AttentionDiagnostics>)> {
    if step >= schedule.steps() || trajectory.steps() != schedule.steps() {
        return Err(Error::Index(format!(
            "step {step} of a {}-step schedule and {}-step trajectory",
            schedule.steps(),
            trajectory.steps()
        )));
    }
    let sigmas = schedule.sigmas();
    let (vr, vs, diag) = ctx.velocities(
        state,
        sigmas[step],
        schedule.xi(step),
        schedule.beta(),
        schedule.gamma(step),
        probe,
    )?;
    let dt = sigmas[step + 1] - sigmas[step];
    let recon = state.recon.axpy(dt, &vr)?;
    let style = state.style.axpy(dt, &vs)?;
    let target = trajectory.at(step + 1);
    let style = ihc_compensate(&style, &recon, target, schedule.ihc(), step)?;
    let recon = reconstruction_compensate(&recon, target, schedule.lambda(step))?;
    Ok((DenoiseState { recon, style }, diag))
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct StylizeOutput {
    pub stylized: Grid4,
    pub reconstruction: Grid4,
    /// Stylized latents decoded back to frames.
    pub stylized_frames: Grid4,
    pub trajectory: Trajectory,
    /// Branch latents after every step, starting with the shared noise.
    pub recon_history: Vec<Grid4>,
    pub style_history: Vec<Grid4>,
    pub references: ReferenceArrangement,
    pub masks: MaskSet,
    pub attention: AttentionDiagnostics,
}

/// Inverts the content, then runs the two-branch loop from the inverted noise.
pub fn stylize(inputs: &StylizeInputs, settings: &StylizeSettings) -> Result<StylizeOutput> {
    let d = inputs.content.dims();
    inputs.content.check_same_dims(&inputs.stylized, "content and stylized frames")?;
    let f = &inputs.flows;
    if (f.frames(), f.height(), f.width()) != (d.maps, d.height, d.width) {
        return Err(Error::Shape(format!(
            "flows cover {}x{}x{}, frames are {}x{}x{}",
            f.frames(),
            f.height(),
            f.width(),
            d.maps,
            d.height,
            d.width
        )));
    }
    let codec = ToyCausalCodec::planted(settings.temporal_factor, d.channels, settings.offset, settings.codec_seed)?;
    let references = arrange_references(d.maps, settings.temporal_factor, settings.offset, settings.policy)?;
    let masks = build_masks(
        f,
        &references,
        settings.model.patch,
        settings.temporal_factor,
        settings.offset,
        settings.dilation,
    )?;
    let model = ToyDenoiser::new(settings.model.clone())?;
    let latent = codec.encode_video(&inputs.content)?;
    let schedule = &settings.schedule;
    let (noise, trajectory) = euler_invert(&model, &latent, schedule.sigmas(), settings.fixed_point_iterations)?;

    let recon_refs = codec.encode_frames(&inputs.content, references.frames())?;
    let style_refs = codec.encode_frames(&inputs.stylized, references.frames())?;
    let ctx = TwoBranchContext::new(model, references.clone(), &recon_refs, &style_refs, &masks, latent.dims().maps)?;

    let mut state = DenoiseState {
        recon: noise.clone(),
        style: noise,
    };
    let mut recon_history = vec![state.recon.clone()];
    let mut style_history = vec![state.style.clone()];
    let mut attention = None;
    for step in 0..schedule.steps() {
        let last = step + 1 == schedule.steps();
        let (next, diag) = denoise_step_probed(&ctx, &state, schedule, &trajectory, step, last)?;
        state = next;
        attention = attention.or(diag);
        recon_history.push(state.recon.clone());
        style_history.push(state.style.clone());
    }
    let stylized_frames = codec.decode(&state.style)?;
    Ok(StylizeOutput {
        stylized: state.style,
        reconstruction: state.recon,
        stylized_frames,
        trajectory,
        recon_history,
        style_history,
        references,
        masks,
        attention: attention.expect("last step records diagnostics"),
    })
}
