use crate::error::{Error, Result};
use crate::tensor::Grid4;

use super::denoiser::VelocityModel;

/// Latents recorded by inversion, in denoising order: `latents[0]` is the
/// noise at `sigma = 1`, `latents[steps]` the clean input.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    latents: Vec<Grid4>,
}

impl Trajectory {
    pub fn new(latents: Vec<Grid4>) -> Result<Self> {
        let first = latents
            .first()
            .ok_or_else(|| Error::Shape("empty trajectory".into()))?;
        if let Some(l) = latents.iter().find(|l| l.dims() != first.dims()) {
            return Err(Error::Shape(format!(
                "trajectory mixes {} and {}",
                first.dims(),
                l.dims()
            )));
        }
        Ok(Self { latents })
    }

    /// Number of steps, one less than the number of latents.
    pub fn steps(&self) -> usize {
        self.latents.len() - 1
    }

    pub fn latents(&self) -> &[Grid4] {
        &self.latents
    }

    /// Target latent after denoising step `i`, i.e. at `sigmas[i]`.
    pub fn at(&self, i: usize) -> &Grid4 {
        &self.latents[i]
    }

    pub fn noise(&self) -> &Grid4 {
        &self.latents[0]
    }

    /// All latents stacked along the map axis.
    pub fn stacked(&self) -> Result<Grid4> {
        Grid4::stack(&self.latents)
    }
}

fn check_sigmas(sigmas: &[f32]) -> Result<()> {
    if sigmas.len() < 2 {
        return Err(Error::Config("need at least two noise levels".into()));
    }
    if sigmas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("noise levels must strictly decrease".into()));
    }
    Ok(())
}

/// Inverts `x0` along the decreasing noise levels `sigmas`.
///
/// Each step solves the implicit relation
/// `x_i = x_{i+1} + (sigma_i - sigma_{i+1}) v(x_i, sigma_i)` with `iterations`
/// fixed-point sweeps seeded at `x_{i+1}`, so that one explicit Euler step
/// from `x_i` lands back on `x_{i+1}`.
pub fn euler_invert<M: VelocityModel + ?Sized>(
    model: &M,
    x0: &Grid4,
    sigmas: &[f32],
    iterations: usize,
) -> Result<(Grid4, Trajectory)> {
    if iterations == 0 {
        return Err(Error::Config("fixed-point iteration count must be >= 1".into()));
    }
    check_sigmas(sigmas)?;
    let steps = sigmas.len() - 1;
    let mut latents = vec![x0.clone()];
    for i in (0..steps).rev() {
        let next = latents.last().unwrap();
        let dt = sigmas[i] - sigmas[i + 1];
        let mut x = next.clone();
        for _ in 0..iterations {
            let v = model.velocity(&x, sigmas[i]).map_err(divergence)?;
            x = next.axpy(dt, &v).map_err(divergence)?;
        }
        latents.push(x);
    }
    latents.reverse();
    let trajectory = Trajectory::new(latents)?;
    Ok((trajectory.noise().clone(), trajectory))
}

fn divergence(e: Error) -> Error {
    match e {
        Error::InvalidTensor(m) | Error::Numerical(m) => Error::Numerical(format!("inversion diverged: {m}")),
        other => other,
    }
}

/// Explicit Euler sampling from `noise` along `sigmas`.
pub fn euler_denoise<M: VelocityModel + ?Sized>(model: &M, noise: &Grid4, sigmas: &[f32]) -> Result<Grid4> {
    check_sigmas(sigmas)?;
    let mut x = noise.clone();
    for i in 0..sigmas.len() - 1 {
        let v = model.velocity(&x, sigmas[i])?;
        x = x.axpy(sigmas[i + 1] - sigmas[i], &v)?;
    }
    Ok(x)
}
