//! Spatial-frequency split of latent grids and the two trajectory
//! compensation paths.
//!
//! The reconstruction branch is pulled toward the recorded inversion
//! trajectory in full. The stylization branch only receives the high-pass
//! part of the AdaIN-aligned reconstruction error, so its low-frequency
//! appearance is left untouched.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{adain, Grid4};

/// Largest imaginary residue tolerated after the inverse transform.
pub const IMAG_TOLERANCE: f64 = 1e-5;

/// Default low-pass cutoff as a fraction of the maximum radial frequency.
pub const DEFAULT_CUTOFF: f64 = 0.25;

/// Ideal circular low-pass filter in centered frequency coordinates.
///
/// Frequencies are normalized so that each axis' Nyquist frequency maps to 1,
/// and the radius is divided by `sqrt(2)` so the corner frequency sits at
/// radius 1. A bin passes when its normalized radius is `<= cutoff`; a cutoff of
/// 1 therefore passes everything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassFilter {
    cutoff: f64,
}

impl Default for LowPassFilter {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

/// Signed frequency index of FFT bin `k` out of `n`.
pub(crate) fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

impl LowPassFilter {
    pub fn new(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(Error::Config(format!(
                "low-pass cutoff must lie in (0, 1], got {cutoff}"
            )));
        }
        Ok(Self { cutoff })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Whether FFT bin `(ky, kx)` of an `h x w` transform passes.
    pub fn passes(&self, h: usize, w: usize, ky: usize, kx: usize) -> bool {
        let fy = signed_freq(ky, h).abs() / (h as f64 / 2.0);
        let fx = signed_freq(kx, w).abs() / (w as f64 / 2.0);
        let radius = ((fy * fy + fx * fx) / 2.0).sqrt();
        radius <= self.cutoff + 1e-12
    }

    /// Pass mask in unshifted FFT layout, row-major `h x w`.
    pub fn mask(&self, h: usize, w: usize) -> Vec<bool> {
        (0..h)
            .flat_map(|ky| (0..w).map(move |kx| (ky, kx)))
            .map(|(ky, kx)| self.passes(h, w, ky, kx))
            .collect()
    }
}

/// Planned forward/inverse 2-D transforms for one spatial size.
struct Fft2 {
    h: usize,
    w: usize,
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row: planner.plan_fft_forward(w),
            col: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        for r in buf.chunks_exact_mut(self.w) {
            row.process(r);
        }
        let mut column = vec![Complex64::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                column[y] = buf[y * self.w + x];
            }
            col.process(&mut column);
            for y in 0..self.h {
                buf[y * self.w + x] = column[y];
            }
        }
    }

    fn forward(&self, slice: &[f32]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = slice.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        self.run(&mut buf, self.row.as_ref(), self.col.as_ref());
        buf
    }

    /// Normalized inverse transform; returns the real part and the largest
    /// imaginary residue.
    fn inverse_real(&self, mut buf: Vec<Complex64>) -> (Vec<f64>, f64) {
        self.run(&mut buf, self.row_inv.as_ref(), self.col_inv.as_ref());
        let norm = 1.0 / (self.h * self.w) as f64;
        let mut residue: f64 = 0.0;
        let re = buf
            .iter()
            .map(|c| {
                residue = residue.max((c.im * norm).abs());
                c.re * norm
            })
            .collect();
        (re, residue)
    }
}

fn check_spatial(x: &Grid4) -> Result<()> {
    let d = x.dims();
    if d.height < 2 || d.width < 2 {
        return Err(Error::Shape(format!(
            "frequency split needs h, w >= 2, got {}x{}",
            d.height, d.width
        )));
    }
    Ok(())
}

/// Low- and high-pass components of a grid.
#[derive(Debug, Clone)]
pub struct FrequencySplit {
    pub low: Grid4,
    pub high: Grid4,
}

fn split_with(x: &Grid4, filter: &LowPassFilter, keep_low: bool, keep_high: bool) -> Result<(Vec<f32>, Vec<f32>)> {
    check_spatial(x)?;
    let d = x.dims();
    let fft = Fft2::new(d.height, d.width);
    let mask = filter.mask(d.height, d.width);
    let mut low = Vec::with_capacity(if keep_low { d.len() } else { 0 });
    let mut high = Vec::with_capacity(if keep_high { d.len() } else { 0 });
    for slice in x.slices() {
        let spec = fft.forward(slice);
        for (want, pass, out) in [(keep_low, true, &mut low), (keep_high, false, &mut high)] {
            if !want {
                continue;
            }
            let filtered: Vec<Complex64> = spec
                .iter()
                .zip(&mask)
                .map(|(&c, &m)| if m == pass { c } else { Complex64::default() })
                .collect();
            let (re, residue) = fft.inverse_real(filtered);
            let scale = 1.0 + re.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if residue > IMAG_TOLERANCE * scale {
                return Err(Error::Numerical(format!(
                    "imaginary residue {residue:e} after inverse transform"
                )));
            }
            out.extend(re.into_iter().map(|v| v as f32));
        }
    }
    Ok((low, high))
}

/// Splits `x` into `F^-1(F(x) H)` and `F^-1(F(x) (1 - H))` per spatial slice.
pub fn fft2_split(x: &Grid4, filter: &LowPassFilter) -> Result<FrequencySplit> {
    let (low, high) = split_with(x, filter, true, true)?;
    Ok(FrequencySplit {
        low: Grid4::from_computed(x.dims(), low, "low-pass")?,
        high: Grid4::from_computed(x.dims(), high, "high-pass")?,
    })
}

pub fn low_part(x: &Grid4, filter: &LowPassFilter) -> Result<Grid4> {
    let (low, _) = split_with(x, filter, true, false)?;
    Grid4::from_computed(x.dims(), low, "low-pass")
}

pub fn high_part(x: &Grid4, filter: &LowPassFilter) -> Result<Grid4> {
    let (_, high) = split_with(x, filter, false, true)?;
    Grid4::from_computed(x.dims(), high, "high-pass")
}

/// Pulls the reconstruction latent toward the recorded trajectory:
/// `(1 - lambda) * x_r + lambda * target`.
///
/// Written in the convex form so `lambda = 1` lands on `target` exactly and
/// `lambda = 0` returns `x_r` exactly.
pub fn reconstruction_compensate(x_r: &Grid4, target: &Grid4, lambda: f32) -> Result<Grid4> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let keep = 1.0 - lambda;
    x_r.zip_map(target, |r, t| keep * r + lambda * t)
}

/// High-frequency compensation strength per denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct IhcConfig {
    lambdas: Vec<f32>,
    window: Range<usize>,
    filter: LowPassFilter,
}

impl IhcConfig {
    /// Validates an explicit per-step schedule. Lambda must be `>= 0`,
    /// non-increasing inside `window`, and zero outside it.
    pub fn new(lambdas: Vec<f32>, window: Range<usize>, filter: LowPassFilter) -> Result<Self> {
        if window.end > lambdas.len() || window.start > window.end {
            return Err(Error::Config(format!(
                "ihc window {window:?} does not fit {} steps",
                lambdas.len()
            )));
        }
        for (i, &l) in lambdas.iter().enumerate() {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("lambda[{i}] = {l} is not >= 0")));
            }
            if !window.contains(&i) && l != 0.0 {
                return Err(Error::Config(format!(
                    "lambda[{i}] = {l} is non-zero outside the active window {window:?}"
                )));
            }
        }
        if lambdas[window.clone()].windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::Config("lambda must be non-increasing inside the window".into()));
        }
        Ok(Self {
            lambdas,
            window,
            filter,
        })
    }

    /// Linear decay from `start` at step 0 toward 0 at the end of a window
    /// covering the first `fraction` of `steps` (rounded up).
    pub fn linear(steps: usize, fraction: f64, start: f32, filter: LowPassFilter) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!("ihc fraction {fraction} outside [0, 1]")));
        }
        let active = ((steps as f64 * fraction).ceil() as usize).min(steps);
        let lambdas = (0..steps)
            .map(|i| {
                if i < active {
                    start * (1.0 - i as f32 / active as f32)
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(lambdas, 0..active, filter)
    }

    /// The same constant strength at every step.
    pub fn constant(steps: usize, lambda: f32, filter: LowPassFilter) -> Result<Self> {
        let window = if lambda == 0.0 { 0..0 } else { 0..steps };
        Self::new(vec![lambda; steps], window, filter)
    }

    pub fn lambda(&self, step: usize) -> f32 {
        if self.window.contains(&step) {
            self.lambdas[step]
        } else {
            0.0
        }
    }

    pub fn lambdas(&self) -> &[f32] {
        &self.lambdas
    }

    pub fn window(&self) -> Range<usize> {
        self.window.clone()
    }

    pub fn filter(&self) -> &LowPassFilter {
        &self.filter
    }

    pub fn steps(&self) -> usize {
        self.lambdas.len()
    }
}

/// Adds the high-pass part of the AdaIN-aligned reconstruction error to the
/// stylization latent.
///
/// Both the trajectory target and the reconstruction latent are renormalized
/// to the statistics of `x_s` before differencing. Outside the active window,
/// or when lambda is zero, `x_s` is returned unchanged.
pub fn ihc_compensate(
    x_s: &Grid4,
    x_r: &Grid4,
    target: &Grid4,
    cfg: &IhcConfig,
    step: usize,
) -> Result<Grid4> {
    x_s.check_same_dims(x_r, "ihc_compensate")?;
    x_s.check_same_dims(target, "ihc_compensate")?;
    let lambda = cfg.lambda(step);
    if lambda == 0.0 {
        return Ok(x_s.clone());
    }
    let diff = adain(target, x_s)?.sub(&adain(x_r, x_s)?)?;
    let hf = high_part(&diff, &cfg.filter)?;
    x_s.axpy(lambda, &hf)
}

/// Mean spectral magnitude per radial frequency band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    pub energy: Vec<f64>,
}

impl SpectrumProfile {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin,energy")?;
        for (i, e) in self.energy.iter().enumerate() {
            writeln!(w, "{i},{e:.9e}")?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("csv is ascii")
    }

    /// Fraction of the summed profile that falls in `bin`.
    pub fn share(&self, bin: usize) -> f64 {
        let total: f64 = self.energy.iter().sum();
        if total == 0.0 {
            0.0
        } else {
            self.energy[bin] / total
        }
    }
}

/// Orthonormal 2-D spectrum magnitude averaged over radial bands.
///
/// Band `k` holds frequencies whose radius, measured in cycles of the shorter
/// side, lies in `[k, k + 1)`; radii beyond the last band fold into it. There
/// are `min(h, w) / 2` bands, averaged over every `(map, channel)` slice.
pub fn spectrum_profile(x: &Grid4) -> Result<SpectrumProfile> {
    check_spatial(x)?;
    let d = x.dims();
    let (h, w) = (d.height, d.width);
    let m = h.min(w);
    let bins = m / 2;
    let fft = Fft2::new(h, w);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let bin_of: Vec<usize> = (0..h)
        .flat_map(|ky| (0..w).map(move |kx| (ky, kx)))
        .map(|(ky, kx)| {
            let fy = signed_freq(ky, h) * m as f64 / h as f64;
            let fx = signed_freq(kx, w) * m as f64 / w as f64;
            ((fy * fy + fx * fx).sqrt().floor() as usize).min(bins - 1)
        })
        .collect();
    let mut sum = vec![0.0f64; bins];
    let mut count = vec![0usize; bins];
    for slice in x.slices() {
        for (c, &b) in fft.forward(slice).iter().zip(&bin_of) {
            sum[b] += c.norm() * norm;
            count[b] += 1;
        }
    }
    let energy = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(SpectrumProfile { energy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims4;

    fn ramp(dims: Dims4) -> Grid4 {
        Grid4::from_fn(dims, |s, c, y, x| ((s + 1) * (c + 2)) as f32 * ((y * 7 + x * 3) % 5) as f32 - 1.5).unwrap()
    }

    #[test]
    fn filter_passes_dc_and_is_symmetric() {
        let f = LowPassFilter::default();
        for (h, w) in [(8, 8), (6, 10), (5, 7)] {
            let m = f.mask(h, w);
            assert!(m[0]);
            for ky in 0..h {
                for kx in 0..w {
                    let ny = (h - ky) % h;
                    let nx = (w - kx) % w;
                    assert_eq!(m[ky * w + kx], m[ny * w + nx]);
                }
            }
        }
        assert!(LowPassFilter::new(0.0).is_err());
        assert!(LowPassFilter::new(1.5).is_err());
        assert!(LowPassFilter::new(1.0).unwrap().mask(8, 8).iter().all(|&b| b));
    }

    #[test]
    fn constant_grid_has_no_high_frequencies() {
        let x = Grid4::filled(Dims4::new(2, 2, 8, 8), 3.25).unwrap();
        let split = fft2_split(&x, &LowPassFilter::default()).unwrap();
        assert!(split.high.max_abs() < 1e-6);
        assert!(split.low.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn all_pass_filter_keeps_everything_low() {
        let x = ramp(Dims4::new(1, 2, 8, 6));
        let split = fft2_split(&x, &LowPassFilter::new(1.0).unwrap()).unwrap();
        assert!(split.low.max_abs_diff(&x).unwrap() < 1e-5);
        assert!(split.high.max_abs() < 1e-5);
    }

    #[test]
    fn too_small_grid_is_a_shape_error() {
        let x = Grid4::zeros(Dims4::new(1, 1, 1, 4)).unwrap();
        assert!(matches!(fft2_split(&x, &LowPassFilter::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn reconstruction_compensation_corners() {
        let d = Dims4::new(1, 1, 2, 2);
        let x_r = ramp(d);
        let target = Grid4::filled(d, 0.7).unwrap();
        assert_eq!(reconstruction_compensate(&x_r, &target, 1.0).unwrap(), target);
        assert_eq!(reconstruction_compensate(&x_r, &target, 0.0).unwrap(), x_r);
        let zero = Grid4::zeros(d).unwrap();
        let two = Grid4::filled(d, 2.0).unwrap();
        let half = reconstruction_compensate(&zero, &two, 0.5).unwrap();
        assert!(half.data().iter().all(|&v| v == 1.0));
        assert!(matches!(
            reconstruction_compensate(&x_r, &Grid4::zeros(Dims4::new(1, 1, 2, 3)).unwrap(), 0.5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn linear_schedule_shape() {
        let cfg = IhcConfig::linear(10, 0.4, 1.0, LowPassFilter::default()).unwrap();
        assert_eq!(cfg.window(), 0..4);
        assert_eq!(cfg.lambda(0), 1.0);
        assert_eq!(cfg.lambda(3), 0.25);
        assert_eq!(cfg.lambda(4), 0.0);
        assert_eq!(cfg.lambda(99), 0.0);
        assert!(IhcConfig::new(vec![0.5, 0.7], 0..2, LowPassFilter::default()).is_err());
        assert!(IhcConfig::new(vec![0.5, 0.2], 0..1, LowPassFilter::default()).is_err());
    }

    #[test]
    fn ihc_identity_cases() {
        let d = Dims4::new(1, 2, 8, 8);
        let x_s = ramp(d);
        let x_r = x_s.scale(0.5).unwrap();
        let target = Grid4::from_fn(d, |_, c, y, x| (c + y * x) as f32 * 0.1).unwrap();
        let cfg = IhcConfig::linear(8, 0.4, 1.0, LowPassFilter::default()).unwrap();

        // outside the window
        assert_eq!(ihc_compensate(&x_s, &x_r, &target, &cfg, 6).unwrap(), x_s);
        // zero difference
        let same = ihc_compensate(&x_s, &x_r, &x_r, &cfg, 0).unwrap();
        assert!(same.max_abs_diff(&x_s).unwrap() < 1e-5);
        // zero lambda everywhere
        let off = IhcConfig::constant(8, 0.0, LowPassFilter::default()).unwrap();
        assert_eq!(ihc_compensate(&x_s, &x_r, &target, &off, 0).unwrap(), x_s);
    }

    #[test]
    fn spectrum_of_constant_lives_in_dc_bin() {
        let p = spectrum_profile(&Grid4::filled(Dims4::new(1, 1, 8, 8), 1.0).unwrap()).unwrap();
        assert_eq!(p.energy.len(), 4);
        assert!(p.energy[0] > 0.0);
        assert!(p.energy[1..].iter().all(|&e| e < 1e-12));
        assert!(p.to_csv().starts_with("bin,energy\n0,"));
    }
}
