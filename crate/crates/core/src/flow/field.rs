use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const FLOW_MAGIC: &[u8; 4] = b"FVFL";

/// Dense per-transition displacement fields between adjacent frames.
///
/// `forward[k]` moves pixels from frame `k` to `k + 1`; `backward[k]` moves
/// pixels from frame `k + 1` back to `k`. Each field stores `(dy, dx)` pairs in
/// pixel units, row-major over `h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFieldSequence {
    frames: usize,
    height: usize,
    width: usize,
    forward: Vec<f32>,
    backward: Vec<f32>,
}

impl FlowFieldSequence {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        forward: Vec<f32>,
        backward: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "flow dims must be >= 1, got T={frames} h={height} w={width}"
            )));
        }
        if height > u16::MAX as usize + 1 || width > u16::MAX as usize + 1 || frames > u16::MAX as usize + 1 {
            return Err(Error::Shape("flow dims exceed the 16-bit coordinate range".into()));
        }
        let expected = (frames - 1) * height * width * 2;
        for (name, f) in [("forward", &forward), ("backward", &backward)] {
            if f.len() != expected {
                return Err(Error::Shape(format!(
                    "{name} flow has {} values, expected {expected}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTensor(format!("{name} flow has non-finite values")));
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            forward,
            backward,
        })
    }

    /// All-zero motion.
    pub fn zeros(frames: usize, height: usize, width: usize) -> Result<Self> {
        let n = frames.saturating_sub(1) * height * width * 2;
        Self::new(frames, height, width, vec![0.0; n], vec![0.0; n])
    }

    /// Spatially constant motion `(dy, dx)` per step; the backward field is
    /// its negation.
    pub fn uniform(frames: usize, height: usize, width: usize, dy: f32, dx: f32) -> Result<Self> {
        Self::from_fn(frames, height, width, |_, _, _| (dy, dx), |_, _, _| (-dy, -dx))
    }

    /// Builds both field stacks from `f(k, y, x) -> (dy, dx)`.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut fwd: impl FnMut(usize, usize, usize) -> (f32, f32),
        mut bwd: impl FnMut(usize, usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let steps = frames.saturating_sub(1);
        let mut forward = Vec::with_capacity(steps * height * width * 2);
        let mut backward = Vec::with_capacity(steps * height * width * 2);
        for k in 0..steps {
            for y in 0..height {
                for x in 0..width {
                    let (a, b) = fwd(k, y, x);
                    forward.extend([a, b]);
                    let (a, b) = bwd(k, y, x);
                    backward.extend([a, b]);
                }
            }
        }
        Self::new(frames, height, width, forward, backward)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn at(field: &[f32], k: usize, h: usize, w: usize, y: usize, x: usize) -> (f32, f32) {
        let i = ((k * h + y) * w + x) * 2;
        (field[i], field[i + 1])
    }

    /// Forward displacement from frame `k` at pixel `(y, x)`.
    pub fn forward_at(&self, k: usize, y: usize, x: usize) -> (f32, f32) {
        Self::at(&self.forward, k, self.height, self.width, y, x)
    }

    /// Backward displacement from frame `k + 1` to `k` at pixel `(y, x)`.
    pub fn backward_at(&self, k: usize, y: usize, x: usize) -> (f32, f32) {
        Self::at(&self.backward, k, self.height, self.width, y, x)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + (self.forward.len() + self.backward.len()) * 4);
        out.extend_from_slice(FLOW_MAGIC);
        for d in [self.frames, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.forward.iter().chain(&self.backward) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("flow file truncated before header end".into()));
        }
        if &bytes[..4] != FLOW_MAGIC {
            return Err(Error::Format(format!("bad flow magic {:?}", &bytes[..4])));
        }
        let read = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (frames, height, width) = (read(0), read(1), read(2));
        let per = frames
            .saturating_sub(1)
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width * 2))
            .ok_or_else(|| Error::Format("flow header dims overflow".into()))?;
        let payload = &bytes[16..];
        if payload.len() != per * 2 * 4 {
            return Err(Error::Format(format!(
                "flow header needs {} payload bytes, found {}",
                per * 8,
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (forward, backward) = values.split_at(per);
        Self::new(frames, height, width, forward.to_vec(), backward.to_vec())
            .map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn save_flows(flows: &FlowFieldSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, flows.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_flows(path: impl AsRef<Path>) -> Result<FlowFieldSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FlowFieldSequence::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_file_round_trip_and_errors() {
        let f = FlowFieldSequence::from_fn(3, 2, 3, |k, y, x| (k as f32, (y * x) as f32 * 0.5), |k, y, x| (-(k as f32), x as f32 - y as f32))
            .unwrap();
        let bytes = f.to_bytes();
        assert_eq!(FlowFieldSequence::from_bytes(&bytes).unwrap(), f);
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(FlowFieldSequence::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            FlowFieldSequence::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn single_frame_has_no_fields() {
        let f = FlowFieldSequence::zeros(1, 4, 4).unwrap();
        assert_eq!(f.to_bytes().len(), 16);
        assert!(FlowFieldSequence::new(2, 2, 2, vec![0.0; 7], vec![0.0; 8]).is_err());
        assert!(FlowFieldSequence::new(2, 1, 1, vec![f32::NAN, 0.0], vec![0.0; 2]).is_err());
    }
}
