use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::field::FlowFieldSequence;
use super::trace::{trace_unchecked, Point, ReferenceMask};

const MASK_MAGIC: &[u8; 4] = b"FVM6";

/// One correspondence `(s, y, x, t, y', x')`.
pub type Entry = [u16; 6];

/// Sparse boolean rank-6 tensor `M[s, y, x, t, y', x']` over `frames` frames of
/// `height x width` pixels. Entries are kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceMask {
    frames: usize,
    height: usize,
    width: usize,
    entries: Vec<Entry>,
}

impl CorrespondenceMask {
    /// Sorts and deduplicates `entries`, checking bounds.
    pub fn new(frames: usize, height: usize, width: usize, mut entries: Vec<Entry>) -> Result<Self> {
        let limit = u16::MAX as usize + 1;
        if frames == 0 || height == 0 || width == 0 || frames > limit || height > limit || width > limit {
            return Err(Error::Shape(format!(
                "mask dims T={frames} h={height} w={width} outside [1, {limit}]"
            )));
        }
        for e in &entries {
            let [s, y, x, t, y2, x2] = e.map(usize::from);
            if s >= frames || t >= frames || y >= height || y2 >= height || x >= width || x2 >= width {
                return Err(Error::Index(format!("mask entry {e:?} out of bounds")));
            }
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(Self {
            frames,
            height,
            width,
            entries,
        })
    }

    /// Identity correspondences for every frame pair, i.e. what a motionless
    /// video produces.
    pub fn block_identity(frames: usize, height: usize, width: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(frames * frames * height * width);
        for s in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for t in 0..frames {
                        entries.push([s, y, x, t, y, x].map(|v| v as u16));
                    }
                }
            }
        }
        Self::new(frames, height, width, entries)
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

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, e: &Entry) -> bool {
        self.entries.binary_search(e).is_ok()
    }

    /// Entries whose source is `(s, y, x)` and target frame is `t`.
    pub fn row(&self, s: u16, y: u16, x: u16, t: u16) -> &[Entry] {
        let lo = self.entries.partition_point(|e| e[..4] < [s, y, x, t][..]);
        let hi = self.entries.partition_point(|e| e[..4] <= [s, y, x, t][..]);
        &self.entries[lo..hi]
    }

    /// `entries(self) ⊆ entries(other)`.
    pub fn is_subset_of(&self, other: &CorrespondenceMask) -> bool {
        self.entries.iter().all(|e| other.contains(e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.entries.len() * 12);
        out.extend_from_slice(MASK_MAGIC);
        for d in [self.frames, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for v in e {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::Format("mask file truncated before header end".into()));
        }
        if &bytes[..4] != MASK_MAGIC {
            return Err(Error::Format(format!("bad mask magic {:?}", &bytes[..4])));
        }
        let read = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (frames, height, width) = (read(0), read(1), read(2));
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let payload = &bytes[24..];
        if (payload.len() as u64) != count.saturating_mul(12) {
            return Err(Error::Format(format!(
                "mask header declares {count} entries, payload holds {} bytes",
                payload.len()
            )));
        }
        let entries: Vec<Entry> = payload
            .chunks_exact(12)
            .map(|c| {
                let mut e = [0u16; 6];
                for (i, v) in e.iter_mut().enumerate() {
                    *v = u16::from_le_bytes([c[2 * i], c[2 * i + 1]]);
                }
                e
            })
            .collect();
        if entries.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Format("mask entries are not strictly sorted".into()));
        }
        Self::new(frames, height, width, entries).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn save_mask(mask: &CorrespondenceMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mask.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<CorrespondenceMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CorrespondenceMask::from_bytes(&bytes)
}

/// Traces every pixel of every frame to every frame and records the landing
/// pixel of each trajectory that ends in bounds.
pub fn flow_mask(flows: &FlowFieldSequence) -> Result<CorrespondenceMask> {
    let (n, h, w) = (flows.frames(), flows.height(), flows.width());
    let mut entries = Vec::with_capacity(n * n * h * w);
    // iteration order (s, y, x, t) with one landing each keeps entries sorted
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                for t in 0..n {
                    let landing = trace_unchecked(flows, s, Point::pixel(y, x), t);
                    if landing.valid {
                        let (ly, lx) = landing.pixel(h, w);
                        entries.push([s, y, x, t, ly, lx].map(|v| v as u16));
                    }
                }
            }
        }
    }
    Ok(CorrespondenceMask {
        frames: n,
        height: h,
        width: w,
        entries,
    })
}

/// Grows every landing into its in-bounds Chebyshev ball of `radius`.
pub fn dilate(m: &CorrespondenceMask, radius: usize) -> CorrespondenceMask {
    if radius == 0 {
        return m.clone();
    }
    let r = radius as i64;
    let (h, w) = (m.height as i64, m.width as i64);
    let mut entries = Vec::with_capacity(m.entries.len() * (2 * radius + 1).pow(2));
    for e in &m.entries {
        let (ty, tx) = (e[4] as i64, e[5] as i64);
        for y in (ty - r).max(0)..=(ty + r).min(h - 1) {
            for x in (tx - r).max(0)..=(tx + r).min(w - 1) {
                entries.push([e[0], e[1], e[2], e[3], y as u16, x as u16]);
            }
        }
    }
    entries.sort_unstable();
    entries.dedup();
    CorrespondenceMask {
        frames: m.frames,
        height: m.height,
        width: m.width,
        entries,
    }
}

/// Drops correspondences that land on already-covered content of an
/// additional reference.
///
/// An entry targeting frame `t` survives unless `t` hosts a reference after the
/// first and that reference's novel-region mask is false at the landing pixel.
/// Frames without an additional reference are left untouched.
pub fn combine_and(flow: &CorrespondenceMask, refs: &ReferenceMask) -> Result<CorrespondenceMask> {
    if refs.height() != flow.height || refs.width() != flow.width {
        return Err(Error::Shape(format!(
            "reference masks are {}x{}, flow mask is {}x{}",
            refs.height(),
            refs.width(),
            flow.height,
            flow.width
        )));
    }
    if let Some(&f) = refs.frames().iter().find(|&&f| f >= flow.frames) {
        return Err(Error::Shape(format!(
            "reference frame {f} outside a {}-frame flow mask",
            flow.frames
        )));
    }
    let mut gate: Vec<Option<&super::trace::PixelMask>> = vec![None; flow.frames];
    for (&f, m) in refs.frames().iter().zip(refs.masks()).skip(1) {
        gate[f] = Some(m);
    }
    let entries = flow
        .entries
        .iter()
        .filter(|e| match gate[e[3] as usize] {
            Some(m) => m.get(e[4] as usize, e[5] as usize),
            None => true,
        })
        .copied()
        .collect();
    Ok(CorrespondenceMask {
        frames: flow.frames,
        height: flow.height,
        width: flow.width,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::trace::{reference_masks, PixelMask};

    #[test]
    fn zero_flow_two_frames() {
        let m = flow_mask(&FlowFieldSequence::zeros(2, 2, 2).unwrap()).unwrap();
        assert_eq!(m.len(), 16);
        assert_eq!(m, CorrespondenceMask::block_identity(2, 2, 2).unwrap());
    }

    #[test]
    fn single_frame_is_identity() {
        let m = flow_mask(&FlowFieldSequence::zeros(1, 3, 4).unwrap()).unwrap();
        assert_eq!(m.len(), 12);
        assert!(m.entries().iter().all(|e| e[1] == e[4] && e[2] == e[5]));
    }

    #[test]
    fn right_shift_drops_exiting_pixels() {
        let m = flow_mask(&FlowFieldSequence::uniform(2, 2, 2, 0.0, 1.0).unwrap()).unwrap();
        for y in 0..2u16 {
            assert!(m.contains(&[0, y, 0, 1, y, 1]));
            assert!(m.row(0, y, 1, 1).is_empty());
            // backward: x=1 in frame 1 came from x=0, x=0 left the frame
            assert!(m.contains(&[1, y, 1, 0, y, 0]));
            assert!(m.row(1, y, 0, 0).is_empty());
        }
    }

    #[test]
    fn dilation_cases() {
        let base = CorrespondenceMask::new(1, 5, 5, vec![[0, 2, 2, 0, 2, 2]]).unwrap();
        assert_eq!(dilate(&base, 0), base);
        assert_eq!(dilate(&base, 1).len(), 9);
        let corner = CorrespondenceMask::new(1, 5, 5, vec![[0, 0, 0, 0, 0, 0]]).unwrap();
        let d = dilate(&corner, 1);
        assert_eq!(d.len(), 4);
        assert!(d.entries().iter().all(|e| e[..4] == [0, 0, 0, 0]));
    }

    #[test]
    fn combine_with_permissive_and_blocking_refs() {
        let flows = FlowFieldSequence::zeros(3, 2, 2).unwrap();
        let m = flow_mask(&flows).unwrap();
        let open = ReferenceMask::new(
            vec![0, 2],
            vec![PixelMask::filled(2, 2, false), PixelMask::filled(2, 2, true)],
        )
        .unwrap();
        assert_eq!(combine_and(&m, &open).unwrap(), m);

        let closed = reference_masks(&flows, &[0, 2]).unwrap();
        let c = combine_and(&m, &closed).unwrap();
        assert!(c.entries().iter().all(|e| e[3] != 2));
        assert_eq!(c.len(), m.len() - 3 * 4);

        let wrong = ReferenceMask::new(vec![0], vec![PixelMask::filled(3, 3, false)]).unwrap();
        assert!(matches!(combine_and(&m, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_file_errors() {
        let m = flow_mask(&FlowFieldSequence::uniform(3, 2, 3, 1.0, 0.0).unwrap()).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(CorrespondenceMask::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(CorrespondenceMask::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            CorrespondenceMask::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Format(_))
        ));
        let mut unsorted = bytes.clone();
        let (a, b) = (24..36, 36..48);
        let first = unsorted[a.clone()].to_vec();
        let second = unsorted[b.clone()].to_vec();
        unsorted[a].copy_from_slice(&second);
        unsorted[b].copy_from_slice(&first);
        assert!(matches!(CorrespondenceMask::from_bytes(&unsorted), Err(Error::Format(_))));
    }
}
