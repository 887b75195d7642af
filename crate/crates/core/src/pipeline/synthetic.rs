use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{nearest_index, save_flows, FlowFieldSequence};
use crate::tensor::{save_grid, Dims4, Grid4};

pub const CONTENT_FILE: &str = "content.fvg";
pub const STYLIZED_FILE: &str = "stylized.fvg";
pub const FLOWS_FILE: &str = "flows.fvfl";

/// Motion of a synthetic clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Motion {
    /// Every frame equals frame 0; flows are zero.
    Static,
    /// Frame `k` is frame 0 moved by `k * shift` pixels, without wrap-around.
    UniformShift { shift: [i32; 2] },
    /// A smooth stationary displacement field of peak `amplitude` pixels
    /// applied once per frame.
    Swirl { amplitude: f32 },
}

/// Description of a synthetic clip and its stylized counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub motion: Motion,
    pub seed: u64,
    pub style_seed: u64,
}

/// Content frames, stylized frames and the flows of the content.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub content: Grid4,
    pub stylized: Grid4,
    pub flows: FlowFieldSequence,
}

impl SyntheticClip {
    /// Writes the three standard files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_grid(&self.content, dir.join(CONTENT_FILE))?;
        save_grid(&self.stylized, dir.join(STYLIZED_FILE))?;
        save_flows(&self.flows, dir.join(FLOWS_FILE))
    }
}

fn first_frame(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Grid4> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let waves: Vec<[f64; 4]> = (0..spec.channels * 3)
        .map(|_| {
            [
                rng.random_range(0.5..2.5),
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..TAU),
                rng.random_range(0.3..1.0),
            ]
        })
        .collect();
    let mut noise = rng.clone();
    Grid4::from_fn(Dims4::new(1, spec.channels, spec.height, spec.width), |_, c, y, x| {
        let smooth: f64 = waves[c * 3..c * 3 + 3]
            .iter()
            .map(|[fy, fx, ph, amp]| amp * (TAU * (fy * y as f64 / h + fx * x as f64 / w) + ph).sin())
            .sum();
        (smooth + 0.1 * noise.sample::<f64, _>(StandardNormal)) as f32
    })
}

fn swirl_field(amplitude: f32, h: usize, w: usize) -> impl Fn(usize, usize) -> (f32, f32) {
    move |y, x| {
        let dy = amplitude as f64 * (TAU * x as f64 / w as f64).sin();
        let dx = amplitude as f64 * (TAU * y as f64 / h as f64).sin();
        (dy as f32, dx as f32)
    }
}

/// Per-pixel seeded channel mix plus bias.
fn stylize_frames(content: &Grid4, seed: u64) -> Result<Grid4> {
    let c = content.dims().channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix: Vec<f32> = (0..c * c)
        .map(|i| (if i % (c + 1) == 0 { 0.5 } else { 0.0 }) + 0.4 * rng.sample::<f32, _>(StandardNormal))
        .collect();
    let bias: Vec<f32> = (0..c).map(|_| 0.5 * rng.sample::<f32, _>(StandardNormal)).collect();
    Grid4::from_fn(content.dims(), |s, co, y, x| {
        bias[co] + (0..c).map(|ci| mix[co * c + ci] * content.get(s, ci, y, x)).sum::<f32>()
    })
}

/// Generates the clip described by `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticClip> {
    let (t, h, w, c) = (spec.frames, spec.height, spec.width, spec.channels);
    if t == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::Config(format!("synthetic dims must be >= 1, got {t}x{c}x{h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = first_frame(spec, &mut rng)?;
    let (frames, flows) = match &spec.motion {
        Motion::Static => (vec![base; t], FlowFieldSequence::zeros(t, h, w)?),
        Motion::UniformShift { shift: [dy, dx] } => {
            let mut frames = Vec::with_capacity(t);
            for k in 0..t as i64 {
                frames.push(Grid4::from_fn(base.dims(), |_, ch, y, x| {
                    let sy = y as i64 - k * *dy as i64;
                    let sx = x as i64 - k * *dx as i64;
                    if (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx) {
                        base.get(0, ch, sy as usize, sx as usize)
                    } else {
                        rng.sample(StandardNormal)
                    }
                })?);
            }
            let flows = FlowFieldSequence::uniform(t, h, w, *dy as f32, *dx as f32)?;
            (frames, flows)
        }
        Motion::Swirl { amplitude } => {
            if !amplitude.is_finite() {
                return Err(Error::Config("swirl amplitude must be finite".into()));
            }
            let field = swirl_field(*amplitude, h, w);
            let mut frames = vec![base];
            for _ in 1..t {
                let prev = frames.last().unwrap();
                let next = Grid4::from_fn(prev.dims(), |_, ch, y, x| {
                    let (dy, dx) = field(y, x);
                    let sy = nearest_index(y as f64 - dy as f64, h);
                    let sx = nearest_index(x as f64 - dx as f64, w);
                    prev.get(0, ch, sy, sx)
                })?;
                frames.push(next);
            }
            let flows = FlowFieldSequence::from_fn(
                t,
                h,
                w,
                |_, y, x| field(y, x),
                |_, y, x| {
                    let (dy, dx) = field(y, x);
                    (-dy, -dx)
                },
            )?;
            (frames, flows)
        }
    };
    let content = Grid4::stack(&frames)?;
    let stylized = stylize_frames(&content, spec.style_seed)?;
    Ok(SyntheticClip {
        content,
        stylized,
        flows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(motion: Motion) -> SyntheticSpec {
        SyntheticSpec {
            frames: 5,
            height: 6,
            width: 8,
            channels: 2,
            motion,
            seed: 3,
            style_seed: 4,
        }
    }

    #[test]
    fn static_clip_is_constant() {
        let clip = gen_synthetic(&spec(Motion::Static)).unwrap();
        for k in 1..5 {
            assert_eq!(clip.content.map(k).unwrap(), clip.content.map(0).unwrap());
        }
        assert_eq!(clip.flows, FlowFieldSequence::zeros(5, 6, 8).unwrap());
    }

    #[test]
    fn shift_moves_content() {
        let clip = gen_synthetic(&spec(Motion::UniformShift { shift: [0, 1] })).unwrap();
        for k in 0..5 {
            for y in 0..6 {
                for x in k..8 {
                    assert_eq!(clip.content.get(k, 1, y, x), clip.content.get(0, 1, y, x - k));
                }
            }
        }
        assert_eq!(clip.flows.forward_at(2, 3, 3), (0.0, 1.0));
    }

    #[test]
    fn swirl_is_seed_stable() {
        let s = spec(Motion::Swirl { amplitude: 1.5 });
        assert_eq!(gen_synthetic(&s).unwrap(), gen_synthetic(&s).unwrap());
        let mut other = s.clone();
        other.seed = 99;
        assert_ne!(gen_synthetic(&s).unwrap().content, gen_synthetic(&other).unwrap().content);
    }

    #[test]
    fn unknown_motion_is_rejected() {
        let json = r#"{"frames":2,"height":2,"width":2,"channels":1,"motion":{"kind":"zoom"},"seed":1,"style_seed":2}"#;
        assert!(serde_json::from_str::<SyntheticSpec>(json).is_err());
    }
}
