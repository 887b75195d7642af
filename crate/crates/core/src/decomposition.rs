//! Appearance / dynamics decomposition over a blockwise causal codec.
//!
//! A causal video codec with temporal factor `r` keeps the first frame as its
//! own latent map and folds every following block of `r` frames into one map.
//! Encoding one frame per block independently yields an appearance-only
//! latent; subtracting it from the video latent leaves a dynamic residual that
//! can be recombined with another clip's appearance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Dims4, Grid4};

/// Temporal factor of the reference causal codec.
pub const DEFAULT_TEMPORAL_FACTOR: usize = 4;

/// Frame indices anchoring appearance: frame 0, then `r * j + offset` for
/// `j = 0 .. (N - 1) / r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSequence {
    indices: Vec<usize>,
}

impl SampledSequence {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Number of latent maps a causal codec with factor `r` produces for `frames`
/// input frames.
pub fn latent_maps(frames: usize, r: usize) -> usize {
    1 + (frames - 1) / r
}

pub fn sample_indices(frames: usize, r: usize, offset: usize) -> Result<SampledSequence> {
    if frames == 0 {
        return Err(Error::Config("cannot sample an empty video".into()));
    }
    if r == 0 {
        return Err(Error::Config("temporal factor must be >= 1".into()));
    }
    if offset > r {
        return Err(Error::Config(format!("offset {offset} exceeds temporal factor {r}")));
    }
    let mut indices = vec![0];
    for j in 0..(frames - 1) / r {
        let idx = r * j + offset;
        if idx >= frames {
            return Err(Error::Config(format!(
                "offset {offset} samples frame {idx} of a {frames}-frame video"
            )));
        }
        if idx <= *indices.last().unwrap() {
            return Err(Error::Config(format!(
                "offset {offset} samples frame {idx} twice or out of order"
            )));
        }
        indices.push(idx);
    }
    Ok(SampledSequence { indices })
}

/// Seeded linear stand-in for a causal video autoencoder.
///
/// Every frame passes through one orthogonal channel mix `A`, so the image
/// encoder is `A` per pixel and the decoder is `A^T`. The video encoder keeps
/// frame 0 as map 0 and maps each later block of `r` frames to `A` applied to
/// a fixed convex combination of the block. The decoder repeats each block
/// map over the `r` frames it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCausalCodec {
    r: usize,
    channels: usize,
    mix: Vec<f64>,
    block_weights: Vec<f64>,
}

fn orthogonal(channels: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut rows: Vec<Vec<f64>> = (0..channels)
            .map(|_| (0..channels).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for i in 0..channels {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let prev = rows[j].clone();
                for (v, p) in rows[i].iter_mut().zip(prev) {
                    *v -= dot * p;
                }
            }
            let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            return rows.into_iter().flatten().collect();
        }
    }
}

impl ToyCausalCodec {
    /// Codec with explicit block weights (`r` non-negative values summing to 1).
    pub fn with_weights(channels: usize, block_weights: Vec<f64>, seed: u64) -> Result<Self> {
        let r = block_weights.len();
        if r == 0 {
            return Err(Error::Config("temporal factor must be >= 1".into()));
        }
        if channels == 0 {
            return Err(Error::Config("codec needs at least one channel".into()));
        }
        let sum: f64 = block_weights.iter().sum();
        if block_weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "block weights must be non-negative and sum to 1, got {block_weights:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            r,
            channels,
            mix: orthogonal(channels, &mut rng),
            block_weights,
        })
    }

    /// Random positive block weights.
    pub fn seeded(r: usize, channels: usize, seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("temporal factor must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10c);
        let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        Self::with_weights(channels, raw.iter().map(|w| w / total).collect(), seed)
    }

    /// Uniform average over each block.
    pub fn block_average(r: usize, channels: usize, seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("temporal factor must be >= 1".into()));
        }
        Self::with_weights(channels, vec![1.0 / r as f64; r], seed)
    }

    /// Video encoder that reads only frame `r * j + offset` of block `j`, so
    /// the video latent coincides with the appearance latent at `offset`.
    pub fn planted(r: usize, channels: usize, offset: usize, seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("temporal factor must be >= 1".into()));
        }
        if offset == 0 || offset > r {
            return Err(Error::Config(format!("planted offset must be in 1..={r}, got {offset}")));
        }
        let mut w = vec![0.0; r];
        w[offset - 1] = 1.0;
        Self::with_weights(channels, w, seed)
    }

    pub fn temporal_factor(&self) -> usize {
        self.r
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn block_weights(&self) -> &[f64] {
        &self.block_weights
    }

    fn check_video(&self, video: &Grid4) -> Result<()> {
        let d = video.dims();
        if d.channels != self.channels {
            return Err(Error::Shape(format!(
                "codec has {} channels, video has {}",
                self.channels, d.channels
            )));
        }
        if !(d.maps - 1).is_multiple_of(self.r) {
            return Err(Error::Shape(format!(
                "{} frames do not form whole blocks of {} after the first frame",
                d.maps, self.r
            )));
        }
        Ok(())
    }

    /// `A * sum_k weight_k * frame_k` for one output map, in f64.
    fn mix_frames(&self, video: &Grid4, frames: &[(usize, f64)], out: &mut Vec<f32>) {
        let d = video.dims();
        let plane = d.plane();
        let mut combined = vec![0.0f64; d.map_len()];
        for &(f, wgt) in frames {
            if wgt == 0.0 {
                continue;
            }
            let map = &video.data()[f * d.map_len()..(f + 1) * d.map_len()];
            for (acc, &v) in combined.iter_mut().zip(map) {
                *acc += wgt * v as f64;
            }
        }
        for co in 0..self.channels {
            for p in 0..plane {
                let mut acc = 0.0;
                for ci in 0..self.channels {
                    acc += self.mix[co * self.channels + ci] * combined[ci * plane + p];
                }
                out.push(acc as f32);
            }
        }
    }

    /// Image (framewise) encoder applied to each listed frame.
    pub fn encode_frames(&self, video: &Grid4, frames: &[usize]) -> Result<Grid4> {
        let d = video.dims();
        if d.channels != self.channels {
            return Err(Error::Shape(format!(
                "codec has {} channels, video has {}",
                self.channels, d.channels
            )));
        }
        if let Some(&f) = frames.iter().find(|&&f| f >= d.maps) {
            return Err(Error::Index(format!("frame {f} of a {}-frame video", d.maps)));
        }
        let mut data = Vec::with_capacity(frames.len() * d.map_len());
        for &f in frames {
            self.mix_frames(video, &[(f, 1.0)], &mut data);
        }
        Grid4::from_computed(Dims4::new(frames.len(), d.channels, d.height, d.width), data, "image encoder")
    }

    pub fn encode_image(&self, frame: &Grid4) -> Result<Grid4> {
        if frame.dims().maps != 1 {
            return Err(Error::Shape(format!("image encoder takes one frame, got {}", frame.dims())));
        }
        self.encode_frames(frame, &[0])
    }

    /// Video encoder: `1 + (N - 1) / r` latent maps.
    pub fn encode_video(&self, video: &Grid4) -> Result<Grid4> {
        self.check_video(video)?;
        let d = video.dims();
        let maps = latent_maps(d.maps, self.r);
        let mut data = Vec::with_capacity(maps * d.map_len());
        self.mix_frames(video, &[(0, 1.0)], &mut data);
        for j in 0..maps - 1 {
            let block: Vec<(usize, f64)> = (0..self.r)
                .map(|i| (self.r * j + 1 + i, self.block_weights[i]))
                .collect();
            self.mix_frames(video, &block, &mut data);
        }
        Grid4::from_computed(Dims4::new(maps, d.channels, d.height, d.width), data, "video encoder")
    }

    /// Decoder: map 0 becomes frame 0, every later map is decoded once and
    /// repeated over its block of `r` frames.
    pub fn decode(&self, latent: &Grid4) -> Result<Grid4> {
        let d = latent.dims();
        if d.channels != self.channels {
            return Err(Error::Shape(format!(
                "codec has {} channels, latent has {}",
                self.channels, d.channels
            )));
        }
        let plane = d.plane();
        let frames = 1 + self.r * (d.maps - 1);
        let mut data = Vec::with_capacity(frames * d.map_len());
        for s in 0..d.maps {
            let map = &latent.data()[s * d.map_len()..(s + 1) * d.map_len()];
            let mut decoded = Vec::with_capacity(d.map_len());
            for ci in 0..self.channels {
                for p in 0..plane {
                    let mut acc = 0.0f64;
                    for co in 0..self.channels {
                        acc += self.mix[co * self.channels + ci] * map[co * plane + p] as f64;
                    }
                    decoded.push(acc as f32);
                }
            }
            let repeats = if s == 0 { 1 } else { self.r };
            for _ in 0..repeats {
                data.extend_from_slice(&decoded);
            }
        }
        Grid4::from_computed(Dims4::new(frames, d.channels, d.height, d.width), data, "decoder")
    }

    /// Appearance latent: independently encoded frames of the sampled
    /// sequence, stacked along the map axis.
    pub fn appearance(&self, video: &Grid4, offset: usize) -> Result<Grid4> {
        self.check_video(video)?;
        let s = sample_indices(video.dims().maps, self.r, offset)?;
        self.encode_frames(video, s.indices())
    }
}

/// Difference between a video latent and an appearance latent, kept in f64 so
/// adding the appearance back reproduces the video latent bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentResidual {
    dims: Dims4,
    data: Vec<f64>,
}

impl LatentResidual {
    pub fn between(latent: &Grid4, appearance: &Grid4) -> Result<Self> {
        latent.check_same_dims(appearance, "residual")?;
        let data = latent
            .data()
            .iter()
            .zip(appearance.data())
            .map(|(&z, &a)| z as f64 - a as f64)
            .collect();
        Ok(Self {
            dims: latent.dims(),
            data,
        })
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Residual rounded to f32.
    pub fn to_grid(&self) -> Result<Grid4> {
        Grid4::from_computed(self.dims, self.data.iter().map(|&v| v as f32).collect(), "residual")
    }

    /// `residual + appearance`.
    pub fn recompose(&self, appearance: &Grid4) -> Result<Grid4> {
        if appearance.dims() != self.dims {
            return Err(Error::Shape(format!(
                "residual is {}, appearance is {}",
                self.dims,
                appearance.dims()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(appearance.data())
            .map(|(&r, &a)| (r + a as f64) as f32)
            .collect();
        Grid4::from_computed(self.dims, data, "recompose")
    }
}

/// `E_vid(V) - appearance(V, offset)`.
pub fn dynamic_residual(codec: &ToyCausalCodec, video: &Grid4, offset: usize) -> Result<LatentResidual> {
    let z = codec.encode_video(video)?;
    let a = codec.appearance(video, offset)?;
    LatentResidual::between(&z, &a)
}

/// Decodes the carrier's dynamics on top of the donor's appearance.
pub fn swap_appearance(
    codec: &ToyCausalCodec,
    donor: &Grid4,
    carrier: &Grid4,
    offset: usize,
) -> Result<Grid4> {
    donor.check_same_dims(carrier, "swap_appearance")?;
    let dynamics = dynamic_residual(codec, carrier, offset)?;
    let appearance = codec.appearance(donor, offset)?;
    codec.decode(&dynamics.recompose(&appearance)?)
}

/// Mean absolute difference between two videos.
pub fn mean_abs_error(a: &Grid4, b: &Grid4) -> f64 {
    let n = a.data().len().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / n
}

/// Offset minimizing the two-way cross-reconstruction loss
/// `L(swap(a <- b), a) + L(swap(b <- a), b)`, ties going to the larger offset.
/// Offsets whose sampled sequence is invalid are skipped.
pub fn select_offset(
    codec: &ToyCausalCodec,
    video_a: &Grid4,
    video_b: &Grid4,
    loss: impl Fn(&Grid4, &Grid4) -> f64,
) -> Result<usize> {
    video_a.check_same_dims(video_b, "select_offset")?;
    let mut best: Option<(usize, f64)> = None;
    for offset in 0..=codec.temporal_factor() {
        if sample_indices(video_a.dims().maps, codec.temporal_factor(), offset).is_err() {
            continue;
        }
        let a_prime = swap_appearance(codec, video_a, video_b, offset)?;
        let b_prime = swap_appearance(codec, video_b, video_a, offset)?;
        let total = loss(&a_prime, video_a) + loss(&b_prime, video_b);
        if !total.is_finite() {
            return Err(Error::Numerical(format!("loss for offset {offset} is {total}")));
        }
        if best.is_none_or(|(_, l)| total <= l) {
            best = Some((offset, total));
        }
    }
    best.map(|(o, _)| o)
        .ok_or_else(|| Error::Config("no offset yields a valid sampled sequence".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(frames: usize, seed: u64) -> Grid4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid4::from_fn(Dims4::new(frames, 3, 4, 4), |_, _, _, _| rng.sample::<f32, _>(StandardNormal)).unwrap()
    }

    #[test]
    fn sampled_sequence_examples() {
        assert_eq!(sample_indices(9, 4, 3).unwrap().indices(), &[0, 3, 7]);
        assert_eq!(sample_indices(9, 4, 4).unwrap().indices(), &[0, 4, 8]);
        assert_eq!(sample_indices(1, 4, 0).unwrap().indices(), &[0]);
        assert!(matches!(sample_indices(9, 4, 0), Err(Error::Config(_))));
        assert!(matches!(sample_indices(9, 0, 0), Err(Error::Config(_))));
        assert!(matches!(sample_indices(9, 4, 5), Err(Error::Config(_))));
        // 10 frames, r = 4: blocks j = 0, 1 at offset 4 reach frame 8 < 10
        assert_eq!(sample_indices(10, 4, 4).unwrap().indices(), &[0, 4, 8]);
    }

    #[test]
    fn image_round_trip_is_identity() {
        let codec = ToyCausalCodec::seeded(4, 3, 11).unwrap();
        let v = video(1, 2);
        let rec = codec.decode(&codec.encode_image(&v).unwrap()).unwrap();
        assert!(rec.max_abs_diff(&v).unwrap() < 1e-5);
    }

    #[test]
    fn latent_map_count() {
        let codec = ToyCausalCodec::seeded(4, 3, 1).unwrap();
        for n in [1, 5, 9, 13] {
            let z = codec.encode_video(&video(n, n as u64)).unwrap();
            assert_eq!(z.dims().maps, latent_maps(n, 4));
        }
        assert!(matches!(codec.encode_video(&video(6, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn static_video_has_zero_residual_under_block_average() {
        let codec = ToyCausalCodec::block_average(4, 3, 5).unwrap();
        let frame = video(1, 9);
        let v = Grid4::stack(&vec![frame; 9]).unwrap();
        for offset in 1..=4 {
            let r = dynamic_residual(&codec, &v, offset).unwrap();
            assert!(r.data().iter().all(|v| v.abs() < 1e-5));
        }
    }

    #[test]
    fn zero_video_has_zero_residual() {
        let codec = ToyCausalCodec::seeded(4, 3, 5).unwrap();
        let v = Grid4::zeros(Dims4::new(9, 3, 4, 4)).unwrap();
        assert!(dynamic_residual(&codec, &v, 3).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn static_swap_returns_donor() {
        let codec = ToyCausalCodec::seeded(4, 3, 5).unwrap();
        let donor = Grid4::stack(&vec![video(1, 1); 9]).unwrap();
        let carrier = Grid4::stack(&vec![video(1, 2); 9]).unwrap();
        let out = swap_appearance(&codec, &donor, &carrier, 2).unwrap();
        assert!(out.max_abs_diff(&donor).unwrap() < 1e-4);
        // and back again
        let back = swap_appearance(&codec, &carrier, &out, 2).unwrap();
        assert!(back.max_abs_diff(&carrier).unwrap() < 2e-4);
    }

    #[test]
    fn planted_codec_validation() {
        assert!(ToyCausalCodec::planted(4, 3, 0, 1).is_err());
        assert!(ToyCausalCodec::planted(4, 3, 5, 1).is_err());
        assert!(matches!(ToyCausalCodec::seeded(0, 3, 1), Err(Error::Config(_))));
        assert!(ToyCausalCodec::with_weights(3, vec![0.5, 0.6], 1).is_err());
    }

    #[test]
    fn single_frame_offset_search_prefers_largest() {
        let codec = ToyCausalCodec::seeded(4, 3, 5).unwrap();
        let a = video(1, 3);
        let b = video(1, 4);
        assert_eq!(select_offset(&codec, &a, &b, mean_abs_error).unwrap(), 4);
    }
}
