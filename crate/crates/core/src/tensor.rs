//! Dense latent grids, per-slice channel statistics, AdaIN renormalization,
//! and the `FVG4` binary container.
//!
//! A [`Grid4`] is laid out row-major as `(maps, channels, height, width)` with
//! width varying fastest. Statistics and renormalization operate on each
//! `(map, channel)` slice independently over its spatial extent.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Variance floor added inside the square root of every standard deviation.
pub const STD_EPS: f64 = 1e-6;

const GRID_MAGIC: &[u8; 4] = b"FVG4";

/// Extents of a [`Grid4`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub maps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims4 {
    pub const fn new(maps: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            maps,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.maps * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `(map, channel)` slices.
    pub fn slices(&self) -> usize {
        self.maps * self.channels
    }

    /// Elements in one spatial slice.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Elements in one latent map (all channels).
    pub fn map_len(&self) -> usize {
        self.channels * self.plane()
    }

    fn validate(&self) -> Result<()> {
        if self.maps == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidTensor(format!(
                "all dims must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.maps, self.channels, self.height, self.width
        )
    }
}

/// Rank-4 latent tensor of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid4 {
    dims: Dims4,
    data: Vec<f32>,
}

impl Grid4 {
    /// Builds a grid, checking the dims, the payload length and finiteness.
    pub fn new(dims: Dims4, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidTensor(format!(
                "payload has {} values, dims {dims} need {}",
                data.len(),
                dims.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims4) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims4, value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    /// Builds a grid from `f(map, channel, y, x)`.
    pub fn from_fn(dims: Dims4, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for s in 0..dims.maps {
            for c in 0..dims.channels {
                for y in 0..dims.height {
                    for x in 0..dims.width {
                        data.push(f(s, c, y, x));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn index(&self, s: usize, c: usize, y: usize, x: usize) -> usize {
        ((s * self.dims.channels + c) * self.dims.height + y) * self.dims.width + x
    }

    pub fn get(&self, s: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(s, c, y, x)]
    }

    /// Spatial slice for `(map, channel)`.
    pub fn slice(&self, s: usize, c: usize) -> &[f32] {
        let plane = self.dims.plane();
        let start = (s * self.dims.channels + c) * plane;
        &self.data[start..start + plane]
    }

    /// Iterator over the spatial slices in `(map, channel)` order.
    pub fn slices(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dims.plane())
    }

    /// All channels of one latent map as a `1 x c x h x w` grid.
    pub fn map(&self, s: usize) -> Result<Grid4> {
        if s >= self.dims.maps {
            return Err(Error::Index(format!(
                "map {s} out of range for {} maps",
                self.dims.maps
            )));
        }
        let len = self.dims.map_len();
        Ok(Grid4 {
            dims: Dims4::new(1, self.dims.channels, self.dims.height, self.dims.width),
            data: self.data[s * len..(s + 1) * len].to_vec(),
        })
    }

    /// Stacks grids along the map axis. All inputs must agree on `(c, h, w)`.
    pub fn stack(parts: &[Grid4]) -> Result<Grid4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero grids".into()))?;
        let d = first.dims;
        let mut data = Vec::new();
        let mut maps = 0;
        for p in parts {
            let pd = p.dims;
            if (pd.channels, pd.height, pd.width) != (d.channels, d.height, d.width) {
                return Err(Error::Shape(format!("cannot stack {pd} onto {d}")));
            }
            maps += pd.maps;
            data.extend_from_slice(&p.data);
        }
        Grid4::new(Dims4::new(maps, d.channels, d.height, d.width), data)
    }

    /// Builds a grid from values produced by arithmetic on already-finite
    /// grids, reporting overflow as a numerical failure.
    pub(crate) fn from_computed(dims: Dims4, data: Vec<f32>, what: &str) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{what} produced a non-finite value")));
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn check_same_dims(&self, other: &Grid4, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Elementwise `f(a, b)` over two grids of equal dims.
    pub fn zip_map(&self, other: &Grid4, f: impl Fn(f32, f32) -> f32) -> Result<Grid4> {
        self.check_same_dims(other, "elementwise op")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Grid4::from_computed(self.dims, data, "elementwise op")
    }

    pub fn add(&self, other: &Grid4) -> Result<Grid4> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Grid4) -> Result<Grid4> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f32) -> Result<Grid4> {
        let data = self.data.iter().map(|v| v * k).collect();
        Grid4::from_computed(self.dims, data, "scale")
    }

    /// `self + k * other`.
    pub fn axpy(&self, k: f32, other: &Grid4) -> Result<Grid4> {
        self.zip_map(other, |a, b| a + k * b)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Grid4) -> Result<f32> {
        self.check_same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f32::max)
    }

    /// Serializes to the `FVG4` layout.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        for d in [
            self.dims.maps,
            self.dims.channels,
            self.dims.height,
            self.dims.width,
        ] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses an `FVG4` byte buffer.
    pub fn from_bytes(bytes: &[u8]) -> Result<Grid4> {
        if bytes.len() < 20 {
            return Err(Error::Format(format!(
                "grid file truncated: {} bytes, header needs 20",
                bytes.len()
            )));
        }
        if &bytes[..4] != GRID_MAGIC {
            return Err(Error::Format(format!("bad grid magic {:?}", &bytes[..4])));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let off = 4 + 4 * i;
            *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        }
        let dims = Dims4::new(dims[0], dims[1], dims[2], dims[3]);
        let payload = &bytes[20..];
        let expected = dims.len().checked_mul(4).ok_or_else(|| {
            Error::Format(format!("header dims {dims} overflow the payload size"))
        })?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "header dims {dims} need {expected} payload bytes, found {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Grid4::new(dims, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Grid4> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("reading grid: {e}")))?;
        Grid4::from_bytes(&bytes)
    }
}

/// Writes `grid` to `path` in the `FVG4` format.
pub fn save_grid(grid: &Grid4, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, grid.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads an `FVG4` file.
pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid4> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Grid4::from_bytes(&bytes)
}

/// Per-`(map, channel)` spatial mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn slice_moments(slice: &[f32]) -> (f64, f64) {
    let n = slice.len() as f64;
    let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = slice
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, (var + STD_EPS).sqrt())
}

/// Population mean and `sqrt(var + eps)` of every spatial slice.
pub fn channel_stats(x: &Grid4) -> Result<ChannelStats> {
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTensor("channel_stats on non-finite grid".into()));
    }
    let (mean, std) = x.slices().map(slice_moments).unzip();
    Ok(ChannelStats { mean, std })
}

/// Renormalizes every slice of `x` to the mean and standard deviation of the
/// matching slice of `target`.
pub fn adain(x: &Grid4, target: &Grid4) -> Result<Grid4> {
    x.check_same_dims(target, "adain")?;
    let src = channel_stats(x)?;
    let dst = channel_stats(target)?;
    let plane = x.dims.plane();
    let mut data = Vec::with_capacity(x.data.len());
    for (i, slice) in x.data.chunks_exact(plane).enumerate() {
        let gain = dst.std[i] / src.std[i];
        for &v in slice {
            data.push(((v as f64 - src.mean[i]) * gain + dst.mean[i]) as f32);
        }
    }
    Grid4::from_computed(x.dims, data, "adain")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_2x2(v: [f32; 4]) -> Grid4 {
        Grid4::new(Dims4::new(1, 1, 2, 2), v.to_vec()).unwrap()
    }

    #[test]
    fn stats_of_small_grid() {
        let s = channel_stats(&grid_2x2([1.0, 3.0, 5.0, 7.0])).unwrap();
        assert_eq!(s.mean, vec![4.0]);
        assert!((s.std[0] - (5.0f64 + STD_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stats_of_constant_and_zero_grids() {
        let s = channel_stats(&Grid4::filled(Dims4::new(2, 3, 4, 4), 2.0).unwrap()).unwrap();
        assert!(s.mean.iter().all(|&m| m == 2.0));
        assert!(s.std.iter().all(|&d| (d - STD_EPS.sqrt()).abs() < 1e-12));
        let z = channel_stats(&Grid4::zeros(Dims4::new(1, 1, 3, 3)).unwrap()).unwrap();
        assert_eq!(z.mean, vec![0.0]);
        assert!((z.std[0] - STD_EPS.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let err = Grid4::new(Dims4::new(1, 1, 1, 2), vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::InvalidTensor(_)));
        assert!(matches!(
            Grid4::new(Dims4::new(0, 1, 1, 1), vec![]),
            Err(Error::InvalidTensor(_))
        ));
    }

    #[test]
    fn adain_to_unit_normal_stats() {
        let x = grid_2x2([1.0, 3.0, 5.0, 7.0]);
        let target = grid_2x2([-1.0, 1.0, -1.0, 1.0]);
        let tstats = channel_stats(&target).unwrap();
        assert_eq!(tstats.mean[0], 0.0);
        let out = adain(&x, &target).unwrap();
        // (v - 4) / sqrt(5 + eps) * sqrt(1 + eps)
        let expected = [-1.341_641, -0.447_214, 0.447_214, 1.341_641];
        for (o, e) in out.data().iter().zip(expected) {
            assert!((o - e).abs() < 1e-5, "{o} vs {e}");
        }
    }

    #[test]
    fn adain_identity_and_constant_source() {
        let x = grid_2x2([0.3, -1.2, 2.5, 0.9]);
        let same = adain(&x, &x).unwrap();
        assert!(same.max_abs_diff(&x).unwrap() < 1e-6);

        let c = grid_2x2([5.0; 4]);
        let out = adain(&c, &x).unwrap();
        let mu = channel_stats(&x).unwrap().mean[0] as f32;
        assert!(out.data().iter().all(|v| (v - mu).abs() < 1e-6));
    }

    #[test]
    fn adain_rejects_mismatched_dims() {
        let a = Grid4::zeros(Dims4::new(1, 1, 2, 2)).unwrap();
        let b = Grid4::zeros(Dims4::new(1, 2, 2, 2)).unwrap();
        assert!(matches!(adain(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn grid_file_errors() {
        let g = grid_2x2([1.0, 2.0, 3.0, 4.0]);
        let mut bytes = g.to_bytes();
        assert_eq!(Grid4::from_bytes(&bytes).unwrap(), g);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Grid4::from_bytes(&bad_magic), Err(Error::Format(_))));

        bytes.truncate(bytes.len() - 4);
        assert!(matches!(Grid4::from_bytes(&bytes), Err(Error::Format(_))));

        let mut header_only = g.to_bytes();
        header_only[4..8].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(Grid4::from_bytes(&header_only), Err(Error::Format(_))));
        assert!(matches!(Grid4::from_bytes(b"FVG"), Err(Error::Format(_))));
    }

    #[test]
    fn stack_and_map_round_trip() {
        let g = Grid4::from_fn(Dims4::new(3, 2, 2, 2), |s, c, y, x| (s * 8 + c * 4 + y * 2 + x) as f32)
            .unwrap();
        let maps: Vec<_> = (0..3).map(|s| g.map(s).unwrap()).collect();
        assert_eq!(Grid4::stack(&maps).unwrap(), g);
        assert!(matches!(g.map(3), Err(Error::Index(_))));
    }
}
