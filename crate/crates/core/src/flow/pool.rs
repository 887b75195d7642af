use crate::decomposition::{sample_indices, SampledSequence};
use crate::error::{Error, Result};

use super::correspondence::{CorrespondenceMask, Entry};
use super::trace::{PixelMask, ReferenceMask};

/// Maps pixel-level masks onto latent tokens: spatial patches of `patch`
/// pixels become one token, and frame `S[i]` of the sampled sequence becomes
/// latent map `i`. Frames outside the sampled sequence have no latent map and
/// are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPooling {
    patch: (usize, usize),
    sampled: SampledSequence,
}

impl TokenPooling {
    pub fn new(patch: (usize, usize), sampled: SampledSequence) -> Result<Self> {
        if patch.0 == 0 || patch.1 == 0 {
            return Err(Error::Config(format!("patch {patch:?} must be >= 1")));
        }
        Ok(Self { patch, sampled })
    }

    /// Pooling for an `frames`-frame video under temporal factor `r` and
    /// offset `offset`.
    pub fn for_video(patch: (usize, usize), frames: usize, r: usize, offset: usize) -> Result<Self> {
        Self::new(patch, sample_indices(frames, r, offset)?)
    }

    pub fn patch(&self) -> (usize, usize) {
        self.patch
    }

    pub fn sampled(&self) -> &SampledSequence {
        &self.sampled
    }

    /// Latent map holding `frame`, if it is sampled.
    pub fn map_of(&self, frame: usize) -> Option<usize> {
        self.sampled.indices().iter().position(|&f| f == frame)
    }

    fn token_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (py, px) = self.patch;
        if !h.is_multiple_of(py) || !w.is_multiple_of(px) {
            return Err(Error::Shape(format!(
                "{h}x{w} pixels are not divisible into {py}x{px} patches"
            )));
        }
        Ok((h / py, w / px))
    }

    fn frame_lut(&self, frames: usize) -> Result<Vec<Option<u16>>> {
        if let Some(&f) = self.sampled.indices().iter().find(|&&f| f >= frames) {
            return Err(Error::Shape(format!(
                "sampled frame {f} outside a {frames}-frame mask"
            )));
        }
        let mut lut = vec![None; frames];
        for (i, &f) in self.sampled.indices().iter().enumerate() {
            lut[f] = Some(i as u16);
        }
        Ok(lut)
    }
}

/// OR-pooling of a pixel-resolution mask to token resolution.
pub trait PoolToTokens: Sized {
    fn pool_to_tokens(&self, pooling: &TokenPooling) -> Result<Self>;
}

impl PoolToTokens for CorrespondenceMask {
    fn pool_to_tokens(&self, pooling: &TokenPooling) -> Result<Self> {
        let (th, tw) = pooling.token_dims(self.height(), self.width())?;
        let lut = pooling.frame_lut(self.frames())?;
        let (py, px) = (pooling.patch.0 as u16, pooling.patch.1 as u16);
        let entries: Vec<Entry> = self
            .entries()
            .iter()
            .filter_map(|e| {
                let s = lut[e[0] as usize]?;
                let t = lut[e[3] as usize]?;
                Some([s, e[1] / py, e[2] / px, t, e[4] / py, e[5] / px])
            })
            .collect();
        CorrespondenceMask::new(pooling.sampled.len(), th, tw, entries)
    }
}

impl PoolToTokens for ReferenceMask {
    fn pool_to_tokens(&self, pooling: &TokenPooling) -> Result<Self> {
        let (th, tw) = pooling.token_dims(self.height(), self.width())?;
        let (py, px) = pooling.patch;
        let mut frames = Vec::with_capacity(self.frames().len());
        let mut masks = Vec::with_capacity(self.frames().len());
        for (&f, m) in self.frames().iter().zip(self.masks()) {
            let map = pooling.map_of(f).ok_or_else(|| {
                Error::Config(format!(
                    "reference frame {f} is not in the sampled sequence {:?}",
                    pooling.sampled.indices()
                ))
            })?;
            frames.push(map);
            masks.push(PixelMask::from_fn(th, tw, |ty, tx| {
                (ty * py..(ty + 1) * py).any(|y| (tx * px..(tx + 1) * px).any(|x| m.get(y, x)))
            }));
        }
        ReferenceMask::new(frames, masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_mask, FlowFieldSequence};

    #[test]
    fn unit_patch_and_stride_is_identity() {
        let m = flow_mask(&FlowFieldSequence::uniform(4, 3, 3, 1.0, -1.0).unwrap()).unwrap();
        let pooling = TokenPooling::for_video((1, 1), 4, 1, 1).unwrap();
        assert_eq!(pooling.sampled().indices(), &[0, 1, 2, 3]);
        assert_eq!(m.pool_to_tokens(&pooling).unwrap(), m);
    }

    #[test]
    fn single_pixel_entry_marks_its_token_pair() {
        let m = CorrespondenceMask::new(1, 4, 4, vec![[0, 3, 2, 0, 1, 0]]).unwrap();
        let pooling = TokenPooling::new((2, 2), sample_indices(1, 4, 1).unwrap()).unwrap();
        let p = m.pool_to_tokens(&pooling).unwrap();
        assert_eq!(p.entries(), &[[0, 1, 1, 0, 0, 0]]);
    }

    #[test]
    fn dense_identity_pools_to_token_identity() {
        let m = CorrespondenceMask::block_identity(1, 4, 4).unwrap();
        let pooling = TokenPooling::new((2, 2), sample_indices(1, 4, 1).unwrap()).unwrap();
        let p = m.pool_to_tokens(&pooling).unwrap();
        assert_eq!(p, CorrespondenceMask::block_identity(1, 2, 2).unwrap());
    }

    #[test]
    fn unsampled_frames_are_dropped_and_remapped() {
        let m = CorrespondenceMask::block_identity(9, 2, 2).unwrap();
        let pooling = TokenPooling::for_video((1, 1), 9, 4, 3).unwrap();
        let p = m.pool_to_tokens(&pooling).unwrap();
        assert_eq!(p, CorrespondenceMask::block_identity(3, 2, 2).unwrap());
    }

    #[test]
    fn reference_masks_or_pool() {
        let mut novel = PixelMask::filled(4, 4, false);
        novel.set(3, 3, true);
        let r = ReferenceMask::new(vec![0, 3], vec![PixelMask::filled(4, 4, false), novel]).unwrap();
        let pooling = TokenPooling::for_video((2, 2), 9, 4, 3).unwrap();
        let p = r.pool_to_tokens(&pooling).unwrap();
        assert_eq!(p.frames(), &[0, 1]);
        assert_eq!(p.masks()[1].data(), &[false, false, false, true]);

        let off = ReferenceMask::new(vec![0, 4], vec![PixelMask::filled(4, 4, false); 2]).unwrap();
        assert!(matches!(off.pool_to_tokens(&pooling), Err(Error::Config(_))));
    }

    #[test]
    fn indivisible_patches_are_rejected() {
        let m = CorrespondenceMask::block_identity(1, 3, 4).unwrap();
        let pooling = TokenPooling::new((2, 2), sample_indices(1, 4, 1).unwrap()).unwrap();
        assert!(matches!(m.pool_to_tokens(&pooling), Err(Error::Shape(_))));
    }
}
