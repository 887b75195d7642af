use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{attention, Qkv, TokenMatrix, TokenPos};
use crate::error::{Error, Result};
use crate::tensor::{Dims4, Grid4};

const LN_EPS: f64 = 1e-5;

/// Velocity field of a rectified-flow model: `x_sigma = (1 - sigma) x_0 + sigma eps`
/// moves with `dx / dsigma = v(x, sigma)`.
pub trait VelocityModel {
    fn velocity(&self, x: &Grid4, sigma: f32) -> Result<Grid4>;
}

/// Shape and seed of a [`ToyDenoiser`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub patch: [usize; 2],
    pub d_model: usize,
    pub blocks: usize,
    pub seed: u64,
    /// Gain of the output head; small values keep the velocity smooth in `x`.
    pub head_scale: f32,
}

impl DenoiserConfig {
    pub fn toy(channels: usize, patch: [usize; 2], seed: u64) -> Self {
        Self {
            channels,
            patch,
            d_model: 16,
            blocks: 2,
            seed,
            head_scale: 0.5,
        }
    }
}

/// Dense `out x in` weights and a bias.
#[derive(Debug, Clone, PartialEq)]
struct Linear {
    inp: usize,
    out: usize,
    w: Vec<f32>,
    b: Vec<f32>,
}

impl Linear {
    fn seeded(inp: usize, out: usize, gain: f32, rng: &mut ChaCha8Rng) -> Self {
        let std = gain / (inp as f32).sqrt();
        let w = (0..inp * out).map(|_| std * rng.sample::<f32, _>(StandardNormal)).collect();
        let b = (0..out).map(|_| 0.02 * rng.sample::<f32, _>(StandardNormal)).collect();
        Self { inp, out, w, b }
    }

    fn apply_row(&self, x: &[f32], out: &mut Vec<f32>) {
        for o in 0..self.out {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            let acc: f64 = row.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum();
            out.push((acc + self.b[o] as f64) as f32);
        }
    }

    fn apply(&self, x: &TokenMatrix) -> Result<TokenMatrix> {
        let mut data = Vec::with_capacity(x.n() * self.out);
        for i in 0..x.n() {
            self.apply_row(x.row(i), &mut data);
        }
        x.with_data(self.out, data)
    }
}

fn layer_norm(x: &TokenMatrix) -> Result<TokenMatrix> {
    let d = x.d();
    let mut data = Vec::with_capacity(x.n() * d);
    for i in 0..x.n() {
        let row = x.row(i);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        data.extend(row.iter().map(|&v| ((v as f64 - mean) * inv) as f32));
    }
    x.with_data(d, data)
}

fn gelu(v: f32) -> f32 {
    let v = v as f64;
    (0.5 * v * (1.0 + (0.797_884_560_802_865_4 * (v + 0.044_715 * v * v * v)).tanh())) as f32
}

fn add(a: &TokenMatrix, b: &TokenMatrix) -> Result<TokenMatrix> {
    a.zip_map(b, |x, y| x + y)
}

/// Sinusoidal features of `value` at geometric frequencies.
fn sinusoid(value: f64, d: usize, base: f64) -> impl Iterator<Item = f32> {
    (0..d).map(move |i| {
        let freq = base.powf(-((i / 2) as f64) / (d / 2).max(1) as f64);
        let a = value * freq;
        (if i % 2 == 0 { a.sin() } else { a.cos() }) as f32
    })
}

/// One transformer block: self-attention, cross-attention and an MLP, each
/// on a layer-normed input with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    cq: Linear,
    ck: Linear,
    cv: Linear,
    co: Linear,
    up: Linear,
    down: Linear,
}

impl Block {
    fn seeded(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: Linear::seeded(d, d, 1.0, rng),
            wk: Linear::seeded(d, d, 1.0, rng),
            wv: Linear::seeded(d, d, 1.0, rng),
            wo: Linear::seeded(d, d, 0.5, rng),
            cq: Linear::seeded(d, d, 1.0, rng),
            ck: Linear::seeded(d, d, 1.0, rng),
            cv: Linear::seeded(d, d, 1.0, rng),
            co: Linear::seeded(d, d, 0.5, rng),
            up: Linear::seeded(d, 2 * d, 1.0, rng),
            down: Linear::seeded(2 * d, d, 0.5, rng),
        }
    }

    /// Self-attention projections of the normalized hidden state.
    pub fn project(&self, h: &TokenMatrix) -> Result<Qkv> {
        let n = layer_norm(h)?;
        Qkv::new(self.wq.apply(&n)?, self.wk.apply(&n)?, self.wv.apply(&n)?)
    }

    /// `h + attn W_o`.
    pub fn self_residual(&self, h: &TokenMatrix, attn: &TokenMatrix) -> Result<TokenMatrix> {
        add(h, &self.wo.apply(attn)?)
    }

    /// Cross-attention query of the normalized hidden state.
    pub fn cross_query(&self, h: &TokenMatrix) -> Result<TokenMatrix> {
        self.cq.apply(&layer_norm(h)?)
    }

    /// Cross-attention keys and values of one context embedding.
    pub fn cross_kv(&self, context: &TokenMatrix) -> Result<(TokenMatrix, TokenMatrix)> {
        Ok((self.ck.apply(context)?, self.cv.apply(context)?))
    }

    /// `h + out W_co`.
    pub fn cross_residual(&self, h: &TokenMatrix, out: &TokenMatrix) -> Result<TokenMatrix> {
        add(h, &self.co.apply(out)?)
    }

    /// `h + W_down gelu(W_up norm(h))`.
    pub fn mlp_residual(&self, h: &TokenMatrix) -> Result<TokenMatrix> {
        let up = self.up.apply(&layer_norm(h)?)?;
        let act = up.with_data(up.d(), up.data().iter().map(|&v| gelu(v)).collect())?;
        add(h, &self.down.apply(&act)?)
    }
}

/// Seeded, untrained patch transformer standing in for a video diffusion
/// backbone.
///
/// Latent maps are cut into `py x px` patches; each patch becomes one token
/// with position `(map, ty, tx)`. The positional embedding depends on
/// `(ty, tx)` only, so identical maps stay identical through every block.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    config: DenoiserConfig,
    embed: Linear,
    context: Linear,
    blocks: Vec<Block>,
    head: Linear,
}

impl ToyDenoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        let [py, px] = config.patch;
        if config.channels == 0 || py == 0 || px == 0 || config.d_model < 2 || config.blocks == 0 {
            return Err(Error::Config(format!("degenerate denoiser config {config:?}")));
        }
        if !(config.head_scale.is_finite() && config.head_scale > 0.0) {
            return Err(Error::Config(format!("head scale must be > 0, got {}", config.head_scale)));
        }
        let p = config.channels * py * px;
        let d = config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embed = Linear::seeded(p, d, 1.0, &mut rng);
        let context = Linear::seeded(p, d, 1.0, &mut rng);
        let blocks = (0..config.blocks).map(|_| Block::seeded(d, &mut rng)).collect();
        let head = Linear::seeded(d, p, config.head_scale, &mut rng);
        Ok(Self {
            config,
            embed,
            context,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Token grid of one latent map.
    pub fn token_grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let [py, px] = self.config.patch;
        if !height.is_multiple_of(py) || !width.is_multiple_of(px) {
            return Err(Error::Shape(format!(
                "{height}x{width} latents are not divisible into {py}x{px} patches"
            )));
        }
        Ok((height / py, width / px))
    }

    /// Raw patch vectors of `latent`, map `i` placed at position map `maps[i]`.
    pub fn patchify(&self, latent: &Grid4, maps: &[usize]) -> Result<TokenMatrix> {
        let dims = latent.dims();
        if dims.channels != self.config.channels {
            return Err(Error::Shape(format!(
                "denoiser has {} channels, latent has {}",
                self.config.channels, dims.channels
            )));
        }
        if maps.len() != dims.maps {
            return Err(Error::Shape(format!("{} map labels for {} maps", maps.len(), dims.maps)));
        }
        let [py, px] = self.config.patch;
        let (th, tw) = self.token_grid(dims.height, dims.width)?;
        let p = dims.channels * py * px;
        let mut data = Vec::with_capacity(dims.maps * th * tw * p);
        let mut positions = Vec::with_capacity(dims.maps * th * tw);
        for (s, &label) in maps.iter().enumerate() {
            for ty in 0..th {
                for tx in 0..tw {
                    positions.push(TokenPos::new(label, ty, tx));
                    for c in 0..dims.channels {
                        for dy in 0..py {
                            for dx in 0..px {
                                data.push(latent.get(s, c, ty * py + dy, tx * px + dx));
                            }
                        }
                    }
                }
            }
        }
        TokenMatrix::with_positions(p, data, positions)
    }

    /// Inverse of [`patchify`](Self::patchify) for `dims`, reading rows in order.
    pub fn unpatchify(&self, tokens: &TokenMatrix, dims: Dims4) -> Result<Grid4> {
        let [py, px] = self.config.patch;
        let (th, tw) = self.token_grid(dims.height, dims.width)?;
        let p = dims.channels * py * px;
        if tokens.d() != p || tokens.n() != dims.maps * th * tw {
            return Err(Error::Shape(format!(
                "{} tokens of width {} cannot fill {dims}",
                tokens.n(),
                tokens.d()
            )));
        }
        Grid4::from_fn(dims, |s, c, y, x| {
            let row = tokens.row((s * th + y / py) * tw + x / px);
            row[(c * py + y % py) * px + x % px]
        })
    }

    /// Hidden state of `latent` at noise level `sigma`.
    pub fn embed(&self, latent: &Grid4, maps: &[usize], sigma: f32) -> Result<TokenMatrix> {
        let patches = self.patchify(latent, maps)?;
        let d = self.config.d_model;
        let time: Vec<f32> = sinusoid(sigma as f64 * 1000.0, d, 1e4).map(|v| 0.5 * v).collect();
        let mut data = Vec::with_capacity(patches.n() * d);
        for (i, pos) in patches.positions().iter().enumerate() {
            let start = data.len();
            self.embed.apply_row(patches.row(i), &mut data);
            let py_feat = sinusoid(pos.y as f64, d / 2, 64.0);
            let px_feat = sinusoid(pos.x as f64, d - d / 2, 64.0);
            for ((v, pe), t) in data[start..].iter_mut().zip(py_feat.chain(px_feat)).zip(&time) {
                *v += pe + t;
            }
        }
        patches.with_data(d, data)
    }

    /// Context tokens of a reference latent for cross-attention: patch vectors
    /// averaged over the four quadrants of the token grid, projected to the
    /// model width.
    pub fn context(&self, reference: &Grid4) -> Result<TokenMatrix> {
        let patches = self.patchify(reference, &vec![0; reference.dims().maps])?;
        let (th, tw) = self.token_grid(reference.dims().height, reference.dims().width)?;
        let (qh, qw) = (th.min(2), tw.min(2));
        let p = patches.d();
        let mut pooled = vec![0.0f64; qh * qw * p];
        let mut counts = vec![0usize; qh * qw];
        for (i, pos) in patches.positions().iter().enumerate() {
            let q = (pos.y as usize * qh / th) * qw + pos.x as usize * qw / tw;
            counts[q] += 1;
            for (acc, &v) in pooled[q * p..(q + 1) * p].iter_mut().zip(patches.row(i)) {
                *acc += v as f64;
            }
        }
        let data: Vec<f32> = pooled
            .chunks(p)
            .zip(&counts)
            .flat_map(|(chunk, &n)| chunk.iter().map(move |&v| (v / n as f64) as f32))
            .collect();
        let quadrants = TokenMatrix::from_rows(p, data)?;
        self.context.apply(&quadrants)
    }

    /// Output head: hidden state to patch-space velocity.
    pub fn head(&self, h: &TokenMatrix) -> Result<TokenMatrix> {
        self.head.apply(&layer_norm(h)?)
    }
}

impl VelocityModel for ToyDenoiser {
    /// Plain self-attention over the latent tokens, no references and no
    /// cross-attention conditioning.
    fn velocity(&self, x: &Grid4, sigma: f32) -> Result<Grid4> {
        let maps: Vec<usize> = (0..x.dims().maps).collect();
        let mut h = self.embed(x, &maps, sigma)?;
        for b in &self.blocks {
            let qkv = b.project(&h)?;
            let a = attention(&qkv.q, &qkv.k, &qkv.v)?;
            h = b.self_residual(&h, &a)?;
            h = b.mlp_residual(&h)?;
        }
        let v = self.head(&h)?;
        self.unpatchify(&v, x.dims())
    }
}

/// Velocity that ignores `x`: `v(x, sigma) = field * (1 + sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantVelocity {
    pub field: Grid4,
}

impl VelocityModel for ConstantVelocity {
    fn velocity(&self, x: &Grid4, sigma: f32) -> Result<Grid4> {
        x.check_same_dims(&self.field, "constant velocity")?;
        self.field.scale(1.0 + sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(seed: u64, dims: Dims4) -> Grid4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid4::from_fn(dims, |_, _, _, _| rng.sample::<f32, _>(StandardNormal)).unwrap()
    }

    #[test]
    fn patchify_round_trip() {
        let model = ToyDenoiser::new(DenoiserConfig::toy(3, [2, 2], 1)).unwrap();
        let x = grid(4, Dims4::new(2, 3, 4, 6));
        let t = model.patchify(&x, &[0, 1]).unwrap();
        assert_eq!(t.n(), 12);
        assert_eq!(t.positions()[7], TokenPos::new(1, 0, 1));
        assert_eq!(model.unpatchify(&t, x.dims()).unwrap(), x);
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = ToyDenoiser::new(DenoiserConfig::toy(2, [2, 2], 5)).unwrap();
        let b = ToyDenoiser::new(DenoiserConfig::toy(2, [2, 2], 5)).unwrap();
        let c = ToyDenoiser::new(DenoiserConfig::toy(2, [2, 2], 6)).unwrap();
        let x = grid(1, Dims4::new(2, 2, 4, 4));
        let va = a.velocity(&x, 0.5).unwrap();
        assert_eq!(va, b.velocity(&x, 0.5).unwrap());
        assert_ne!(va, c.velocity(&x, 0.5).unwrap());
    }

    #[test]
    fn identical_maps_stay_identical() {
        let model = ToyDenoiser::new(DenoiserConfig::toy(2, [2, 2], 9)).unwrap();
        let one = grid(2, Dims4::new(1, 2, 4, 4));
        let x = Grid4::stack(&[one.clone(), one.clone(), one]).unwrap();
        let v = model.velocity(&x, 0.3).unwrap();
        assert_eq!(v.map(0).unwrap(), v.map(2).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let model = ToyDenoiser::new(DenoiserConfig::toy(2, [2, 2], 9)).unwrap();
        let odd = grid(2, Dims4::new(1, 2, 3, 4));
        assert!(matches!(model.velocity(&odd, 0.5), Err(Error::Shape(_))));
        let chans = grid(2, Dims4::new(1, 3, 4, 4));
        assert!(matches!(model.velocity(&chans, 0.5), Err(Error::Shape(_))));
        let mut cfg = DenoiserConfig::toy(2, [2, 2], 9);
        cfg.blocks = 0;
        assert!(matches!(ToyDenoiser::new(cfg), Err(Error::Config(_))));
    }
}
