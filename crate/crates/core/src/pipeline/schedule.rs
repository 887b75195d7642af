use crate::error::{Error, Result};
use crate::frequency::{IhcConfig, LowPassFilter};

/// Linearly spaced noise levels from 1 down to 0, `steps + 1` values.
pub fn linear_sigmas(steps: usize) -> Vec<f32> {
    (0..=steps).map(|i| 1.0 - i as f32 / steps as f32).collect()
}

/// Knobs of the generated schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    /// Share of steps, from the start, with compensation active.
    pub ihc_fraction: f64,
    /// Compensation strength at step 0; decays linearly inside the window.
    pub ihc_lambda: f32,
    pub lowpass_cutoff: f64,
    pub beta: f32,
    pub gamma: f32,
    /// Share of steps, from the end, with non-zero gamma.
    pub gamma_fraction: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            ihc_fraction: 0.4,
            ihc_lambda: 1.0,
            lowpass_cutoff: crate::frequency::DEFAULT_CUTOFF,
            beta: 0.3,
            gamma: 0.2,
            gamma_fraction: 0.25,
        }
    }
}

/// Per-step guidance values for the two-branch denoising loop.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSchedule {
    sigmas: Vec<f32>,
    ihc: IhcConfig,
    xi: Vec<f32>,
    beta: f32,
    gammas: Vec<f32>,
}

impl GuidanceSchedule {
    /// Explicit per-step values over the linear sigma grid.
    pub fn new(ihc: IhcConfig, xi: Vec<f32>, beta: f32, gammas: Vec<f32>) -> Result<Self> {
        let steps = ihc.steps();
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if xi.len() != steps || gammas.len() != steps {
            return Err(Error::Config(format!(
                "{steps} steps but {} xi and {} gamma values",
                xi.len(),
                gammas.len()
            )));
        }
        if let Some(x) = xi.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Config(format!("xi value {x} outside [0, 1]")));
        }
        if !(beta >= 0.0) || gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config("beta and gamma must be >= 0".into()));
        }
        let max_gamma = gammas.iter().copied().fold(0.0, f32::max);
        if beta + max_gamma > 1.0 {
            return Err(Error::Config(format!(
                "beta {beta} plus peak gamma {max_gamma} exceeds 1"
            )));
        }
        Ok(Self {
            sigmas: linear_sigmas(steps),
            ihc,
            xi,
            beta,
            gammas,
        })
    }

    /// Linearly decaying lambda over the first `ihc_fraction` of steps, xi
    /// rising linearly from 0 to 1, constant beta, and gamma only over the
    /// last `gamma_fraction` of steps.
    pub fn generate(steps: usize, p: &ScheduleParams) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("need at least 2 denoising steps, got {steps}")));
        }
        if !(0.0..=1.0).contains(&p.gamma_fraction) {
            return Err(Error::Config(format!("gamma fraction {} outside [0, 1]", p.gamma_fraction)));
        }
        let filter = LowPassFilter::new(p.lowpass_cutoff)?;
        let ihc = IhcConfig::linear(steps, p.ihc_fraction, p.ihc_lambda, filter)?;
        let xi = (0..steps).map(|i| i as f32 / (steps - 1) as f32).collect();
        let final_stage = ((steps as f64 * p.gamma_fraction).ceil() as usize).min(steps);
        let gammas = (0..steps)
            .map(|i| if i >= steps - final_stage { p.gamma } else { 0.0 })
            .collect();
        Self::new(ihc, xi, p.beta, gammas)
    }

    /// Every guidance term off: no compensation, `xi = 1`, `beta = gamma = 0`.
    pub fn unguided(steps: usize) -> Result<Self> {
        let ihc = IhcConfig::constant(steps, 0.0, LowPassFilter::default())?;
        Self::new(ihc, vec![1.0; steps], 0.0, vec![0.0; steps])
    }

    /// Same schedule with a constant compensation strength.
    pub fn with_constant_lambda(&self, lambda: f32) -> Result<Self> {
        let ihc = IhcConfig::constant(self.steps(), lambda, *self.ihc.filter())?;
        Self::new(ihc, self.xi.clone(), self.beta, self.gammas.clone())
    }

    pub fn steps(&self) -> usize {
        self.xi.len()
    }

    pub fn sigmas(&self) -> &[f32] {
        &self.sigmas
    }

    pub fn ihc(&self) -> &IhcConfig {
        &self.ihc
    }

    pub fn lambda(&self, step: usize) -> f32 {
        self.ihc.lambda(step)
    }

    pub fn xi(&self, step: usize) -> f32 {
        self.xi[step]
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn gamma(&self, step: usize) -> f32 {
        self.gammas[step]
    }

    pub fn gammas(&self) -> &[f32] {
        &self.gammas
    }
}
