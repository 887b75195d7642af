//! Pixel tracing through optical flow.
//!
//! Builds the novel-region masks that tell each additional reference which of
//! its pixels are already covered by earlier references, and the sparse rank-6
//! correspondence mask recording where every pixel of every frame lands in
//! every other frame. Both can be pooled down to latent-token resolution.

mod correspondence;
mod field;
mod pool;
mod trace;

pub use correspondence::{
    combine_and, dilate, flow_mask, load_mask, save_mask, CorrespondenceMask, Entry,
};
pub use field::{load_flows, save_flows, FlowFieldSequence};
pub use pool::{PoolToTokens, TokenPooling};
pub use trace::{
    coverage, nearest_index, reference_masks, trace, Landing, PixelMask, Point, ReferenceMask,
};

/// Default dilation radius applied to flow masks before use in attention.
pub const DEFAULT_DILATION: usize = 1;

/// Encodes novel-region masks in the sparse mask container: a true pixel
/// `(y, x)` of the reference at frame `f` becomes the diagonal entry
/// `(f, y, x, f, y, x)`.
pub fn reference_mask_to_sparse(refs: &ReferenceMask, frames: usize) -> crate::Result<CorrespondenceMask> {
    let mut entries = Vec::new();
    for (&f, m) in refs.frames().iter().zip(refs.masks()) {
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(y, x) {
                    entries.push([f, y, x, f, y, x].map(|v| v as u16));
                }
            }
        }
    }
    CorrespondenceMask::new(frames, refs.height(), refs.width(), entries)
}
