use crate::error::{Error, Result};

use super::field::FlowFieldSequence;

/// Continuous `(y, x)` position in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub y: f64,
    pub x: f64,
}

impl Point {
    pub const fn new(y: f64, x: f64) -> Self {
        Self { y, x }
    }

    pub fn pixel(y: usize, x: usize) -> Self {
        Self::new(y as f64, x as f64)
    }
}

/// Nearest pixel in `[0, n)`: round half away from zero, then clamp.
pub fn nearest_index(v: f64, n: usize) -> usize {
    let r = v.round();
    if r <= 0.0 {
        0
    } else if r >= (n - 1) as f64 {
        n - 1
    } else {
        r as usize
    }
}

/// Terminal state of a traced trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landing {
    /// Continuous endpoint.
    pub point: Point,
    /// Endpoint lies inside `[0, h) x [0, w)`.
    pub valid: bool,
}

impl Landing {
    /// Discretized landing pixel `(y, x)`.
    pub fn pixel(&self, h: usize, w: usize) -> (usize, usize) {
        (nearest_index(self.point.y, h), nearest_index(self.point.x, w))
    }
}

/// Transports `u` from frame `s` to frame `t` through the flow chain.
///
/// Each step samples the displacement at the nearest in-bounds pixel of the
/// current continuous position and adds it to that position. Intermediate
/// positions may leave the image; only the endpoint decides validity.
pub fn trace(flows: &FlowFieldSequence, s: usize, u: Point, t: usize) -> Result<Landing> {
    let n = flows.frames();
    if s >= n || t >= n {
        return Err(Error::Index(format!("trace {s} -> {t} with {n} frames")));
    }
    Ok(trace_unchecked(flows, s, u, t))
}

pub(crate) fn trace_unchecked(flows: &FlowFieldSequence, s: usize, u: Point, t: usize) -> Landing {
    let (h, w) = (flows.height(), flows.width());
    let mut p = u;
    if t >= s {
        for k in s..t {
            let (dy, dx) = flows.forward_at(k, nearest_index(p.y, h), nearest_index(p.x, w));
            p.y += dy as f64;
            p.x += dx as f64;
        }
    } else {
        for k in (t..s).rev() {
            let (dy, dx) = flows.backward_at(k, nearest_index(p.y, h), nearest_index(p.x, w));
            p.y += dy as f64;
            p.x += dx as f64;
        }
    }
    let valid = p.y >= 0.0 && p.y < h as f64 && p.x >= 0.0 && p.x < w as f64;
    Landing { point: p, valid }
}

/// Boolean `h x w` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    pub fn none(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Pointwise `self => other`.
    pub fn is_subset_of(&self, other: &PixelMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Pixels of frame `t` hit by a valid trajectory from any pixel of any source
/// frame.
pub fn coverage(flows: &FlowFieldSequence, sources: &[usize], t: usize) -> Result<PixelMask> {
    let n = flows.frames();
    if sources.is_empty() {
        return Err(Error::Config("coverage needs at least one source frame".into()));
    }
    if let Some(&bad) = sources.iter().chain(std::iter::once(&t)).find(|&&f| f >= n) {
        return Err(Error::Index(format!("frame {bad} out of range for {n} frames")));
    }
    let (h, w) = (flows.height(), flows.width());
    let mut mask = PixelMask::filled(h, w, false);
    for &a in sources {
        for y in 0..h {
            for x in 0..w {
                let landing = trace_unchecked(flows, a, Point::pixel(y, x), t);
                if landing.valid {
                    let (ly, lx) = landing.pixel(h, w);
                    mask.set(ly, lx, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Novel-region masks for an ordered reference list.
///
/// `masks[k]` is true where reference `k` shows content that no earlier
/// reference reaches through the flow. The first reference has nothing before
/// it and is all-false by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMask {
    frames: Vec<usize>,
    masks: Vec<PixelMask>,
}

impl ReferenceMask {
    pub fn new(frames: Vec<usize>, masks: Vec<PixelMask>) -> Result<Self> {
        if frames.len() != masks.len() || frames.is_empty() {
            return Err(Error::Shape(format!(
                "{} reference frames but {} masks",
                frames.len(),
                masks.len()
            )));
        }
        let (h, w) = (masks[0].height(), masks[0].width());
        if masks.iter().any(|m| m.height() != h || m.width() != w) {
            return Err(Error::Shape("reference masks disagree on size".into()));
        }
        Ok(Self { frames, masks })
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn masks(&self) -> &[PixelMask] {
        &self.masks
    }

    pub fn height(&self) -> usize {
        self.masks[0].height()
    }

    pub fn width(&self) -> usize {
        self.masks[0].width()
    }

    /// Masks of the references after the first.
    pub fn additional(&self) -> &[PixelMask] {
        &self.masks[1..]
    }

    /// Mask for the reference placed at `frame`, if any.
    pub fn for_frame(&self, frame: usize) -> Option<&PixelMask> {
        self.frames.iter().position(|&f| f == frame).map(|i| &self.masks[i])
    }
}

pub(crate) fn validate_reference_frames(refs: &[usize], frames: usize) -> Result<()> {
    if refs.first() != Some(&0) {
        return Err(Error::Config(format!("references must start at frame 0, got {refs:?}")));
    }
    if refs.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Config(format!(
            "references must be strictly increasing, got {refs:?}"
        )));
    }
    if let Some(&last) = refs.last() {
        if last >= frames {
            return Err(Error::Index(format!("reference {last} out of range for {frames} frames")));
        }
    }
    Ok(())
}

/// Builds novel-region masks: for each reference after the first, the
/// complement of the coverage by all earlier references.
pub fn reference_masks(flows: &FlowFieldSequence, refs: &[usize]) -> Result<ReferenceMask> {
    validate_reference_frames(refs, flows.frames())?;
    let (h, w) = (flows.height(), flows.width());
    let mut masks = vec![PixelMask::filled(h, w, false)];
    for k in 1..refs.len() {
        masks.push(coverage(flows, &refs[..k], refs[k])?.not());
    }
    ReferenceMask::new(refs.to_vec(), masks)
}
