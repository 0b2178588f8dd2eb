//! Procedural water images.
//!
//! A render starts from a blue-gray water color, optionally blended with a
//! tint and shifted by a random white balance, under a soft lighting
//! gradient with faint sensor noise. Each
//! contamination stage adds one particulate layer on top of the previous
//! ones:
//!
//! | stage | layer added | look                                   |
//! |-------|-------------|----------------------------------------|
//! | 1     | sand        | coarse yellow-brown grains, 1-2 px     |
//! | 2     | salt        | fine white speckle                     |
//! | 3     | pepper      | fine dark speckle                      |
//! | 4     | oil paint   | large soft blobs with a swirl pattern  |
//!
//! Every layer draws from its own random stream, so the stage-k render of a
//! seed is the stage-(k-1) render plus one layer. Oil paint is composited
//! beneath the particles. Darkness multiplies the final image by
//! `1 - 0.7 * darkness`, and pixels are quantized to 8-bit levels so a PNG
//! round trip is exact.

use std::f64::consts::TAU;

use super::{DataError, ImageSample, SampleMeta, Source, Tint, IMAGE_SIZE};
use crate::label::Label;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const MAX_STAGE: u8 = 4;

/// Turbidity ceiling for clean, untinted, fully lit renders: the 99th
/// percentile of [`super::turbidity_score`] over seeds 0..1000. Recomputed by
/// the `clean_turbidity_ceiling_is_current` test.
pub const CLEAN_TURBIDITY_CEILING: f64 = 3.179355505258594e-5;

const WATER: [f64; 3] = [0.60, 0.67, 0.73];
const TINT_STRENGTH: f64 = 0.25;
/// Per-channel camera gain spread: each render scales R, G, B by independent
/// factors in `1 ± WHITE_BALANCE`.
const WHITE_BALANCE: f64 = 0.25;
const NOISE_SIGMA: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub tint: Tint,
    pub stage: u8,
    pub darkness: f64,
    pub seed: u64,
}

struct Canvas {
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn blend(&mut self, x: i64, y: i64, color: [f64; 3], alpha: f64) {
        let n = IMAGE_SIZE as i64;
        if x < 0 || y < 0 || x >= n || y >= n || alpha <= 0.0 {
            return;
        }
        let p = &mut self.px[(y * n + x) as usize];
        for c in 0..3 {
            p[c] = p[c] * (1.0 - alpha) + color[c] * alpha;
        }
    }
}

fn base_layer(tint: Tint, rng: &mut SeededRng) -> Canvas {
    let water: [f64; 3] = match tint.rgb() {
        Some(t) => std::array::from_fn(|c| WATER[c] * (1.0 - TINT_STRENGTH) + t[c] * TINT_STRENGTH),
        None => WATER,
    };
    let gains: [f64; 3] = std::array::from_fn(|_| rng.range(1.0 - WHITE_BALANCE, 1.0 + WHITE_BALANCE));
    let water: [f64; 3] = std::array::from_fn(|c| water[c] * gains[c]);
    let level = rng.range(0.94, 1.04);
    let angle = rng.range(0.0, TAU);
    let slope = rng.range(0.0, 0.05);
    let (dx, dy) = (angle.cos(), angle.sin());
    let n = IMAGE_SIZE as f64;
    let mut px = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (u, v) = ((x as f64 + 0.5) / n - 0.5, (y as f64 + 0.5) / n - 0.5);
            let light = level * (1.0 + slope * (u * dx + v * dy) - 0.04 * (u * u + v * v));
            px.push(std::array::from_fn(|c| water[c] * light + NOISE_SIGMA * rng.normal()));
        }
    }
    Canvas { px }
}

fn sand(canvas: &mut Canvas, rng: &mut SeededRng) {
    let grains = 90 + rng.below(50);
    for _ in 0..grains {
        let (cx, cy) = (rng.range(-1.0, 65.0), rng.range(-1.0, 65.0));
        let radius = rng.range(0.9, 2.2);
        let t = rng.uniform();
        let shade = rng.range(0.8, 1.1);
        let color: [f64; 3] = std::array::from_fn(|c| {
            let light = [0.80, 0.68, 0.44][c];
            let dark = [0.52, 0.38, 0.22][c];
            (light * (1.0 - t) + dark * t) * shade
        });
        let r = radius.ceil() as i64 + 1;
        for y in (cy as i64 - r)..=(cy as i64 + r) {
            for x in (cx as i64 - r)..=(cx as i64 + r) {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let alpha = 0.92 * (1.0 - ((d - radius + 0.5).max(0.0))).clamp(0.0, 1.0);
                canvas.blend(x, y, color, alpha);
            }
        }
    }
}

fn speckle(canvas: &mut Canvas, rng: &mut SeededRng, count: usize, color: [f64; 3], alpha: f64) {
    for _ in 0..count {
        let x = rng.below(IMAGE_SIZE) as i64;
        let y = rng.below(IMAGE_SIZE) as i64;
        let jitter = rng.range(0.9, 1.05);
        let c = std::array::from_fn(|i| (color[i] * jitter).min(1.0));
        canvas.blend(x, y, c, alpha);
        if rng.bernoulli(0.25) {
            let (ox, oy) = if rng.bernoulli(0.5) { (1, 0) } else { (0, 1) };
            canvas.blend(x + ox, y + oy, c, alpha);
        }
    }
}

fn oil_paint(canvas: &mut Canvas, rng: &mut SeededRng) {
    const PAINTS: [[f64; 3]; 5] = [
        [0.85, 0.12, 0.45],
        [0.10, 0.55, 0.25],
        [0.95, 0.62, 0.08],
        [0.15, 0.20, 0.75],
        [0.92, 0.92, 0.20],
    ];
    let blobs = 3 + rng.below(3);
    for _ in 0..blobs {
        let color = PAINTS[rng.below(PAINTS.len())];
        let (cx, cy) = (rng.range(8.0, 56.0), rng.range(8.0, 56.0));
        let radius = rng.range(14.0, 22.0);
        let wave = TAU / rng.range(5.0, 8.0);
        let arms = (1 + rng.below(3)) as f64;
        let phase = rng.range(0.0, TAU);
        for y in 0..IMAGE_SIZE as i64 {
            for x in 0..IMAGE_SIZE as i64 {
                let (ux, uy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let d = (ux * ux + uy * uy).sqrt();
                let falloff = (-(d / radius).powi(2)).exp();
                if falloff < 0.02 {
                    continue;
                }
                let swirl = 0.5 + 0.5 * (wave * d + arms * uy.atan2(ux) + phase).sin();
                let streak = std::array::from_fn(|c| {
                    let dark = 0.2 * color[c];
                    let sheen = 0.4 * color[c] + 0.6;
                    dark + (sheen - dark) * swirl
                });
                canvas.blend(x, y, streak, 0.9 * falloff);
            }
        }
    }
}

/// Renders one image. Deterministic in `params`.
pub fn generate_sample(params: SampleParams) -> Result<ImageSample, DataError> {
    if params.stage > MAX_STAGE {
        return Err(DataError::InvalidStage(params.stage));
    }
    if !(0.0..=1.0).contains(&params.darkness) {
        return Err(DataError::InvalidDarkness(params.darkness));
    }
    let stream = |tag| SeededRng::derive(params.seed, tag);
    let mut canvas = base_layer(params.tint, &mut stream(0));
    let stage = params.stage;
    if stage >= 4 {
        oil_paint(&mut canvas, &mut stream(4));
    }
    if stage >= 1 {
        sand(&mut canvas, &mut stream(1));
    }
    if stage >= 2 {
        let count = 220 + stream(12).below(80);
        speckle(&mut canvas, &mut stream(2), count, [0.98, 0.98, 0.97], 0.9);
    }
    if stage >= 3 {
        let count = 100 + stream(13).below(40);
        speckle(&mut canvas, &mut stream(3), count, [0.07, 0.06, 0.05], 0.85);
    }

    let gain = 1.0 - 0.7 * params.darkness;
    let n = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0; 3 * n];
    for (i, p) in canvas.px.iter().enumerate() {
        for c in 0..3 {
            data[c * n + i] = ((p[c] * gain).clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
    Ok(ImageSample {
        pixels: Tensor::new(vec![3, IMAGE_SIZE, IMAGE_SIZE], data)?,
        label: if stage == 0 { Label::Clean } else { Label::Contaminated },
        meta: SampleMeta {
            tint: params.tint,
            stage,
            darkness: params.darkness,
            source: Source::Synthetic { seed: params.seed },
        },
    })
}
