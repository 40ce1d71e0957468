//! Parametric weather corruptions. Every function is a pure function of the
//! input sequence and the spec, so a manifest entry is enough to replay it.

use ndarray::{Array2, Axis};
use rand::Rng;

use super::{DegradationKind, DegradationSpec, FrameSequence, Motion};
use crate::error::{Error, Result};
use crate::seed;

const RAIN_LAYER: u64 = 1;
const SNOW_LAYER: u64 = 2;
const HAZE_LAYER: u64 = 3;
const DROP_LAYER: u64 = 4;
const SNOW_SPAWN: u64 = 5;

/// Dispatches on `spec.kind`.
pub fn degrade(seq: &FrameSequence, spec: &DegradationSpec) -> Result<FrameSequence> {
    match spec.kind {
        DegradationKind::Rain => apply_rain(seq, spec),
        DegradationKind::Haze => apply_haze(seq, spec),
        DegradationKind::Snow => apply_snow(seq, spec),
        DegradationKind::RainRaindrop | DegradationKind::SnowFog => apply_combo(seq, spec),
    }
}

/// Bright oriented streaks falling along `spec.motion`.
pub fn apply_rain(seq: &FrameSequence, spec: &DegradationSpec) -> Result<FrameSequence> {
    spec.expect(&[DegradationKind::Rain])?;
    Ok(rain(seq, spec.intensity, spec.motion, spec.seed))
}

/// Atmospheric scattering toward a grey airlight over a synthetic depth ramp.
pub fn apply_haze(seq: &FrameSequence, spec: &DegradationSpec) -> Result<FrameSequence> {
    spec.expect(&[DegradationKind::Haze])?;
    let (tr, airlight) = haze_field(seq.height(), seq.width(), 2.5 * spec.intensity, spec.seed);
    haze_with_transmission(seq, &tr, airlight)
}

/// Soft drifting flakes, each living a few frames before respawning.
pub fn apply_snow(seq: &FrameSequence, spec: &DegradationSpec) -> Result<FrameSequence> {
    spec.expect(&[DegradationKind::Snow])?;
    Ok(snow(seq, spec.intensity, spec.motion, spec.seed))
}

/// `rain_raindrop`: rain followed by static refractive drops on the lens.
/// `snow_fog`: snow followed by a shallow haze.
pub fn apply_combo(seq: &FrameSequence, spec: &DegradationSpec) -> Result<FrameSequence> {
    spec.expect(&DegradationKind::UNSEEN)?;
    if spec.intensity == 0.0 {
        return Ok(seq.clone());
    }
    match spec.kind {
        DegradationKind::RainRaindrop => Ok(raindrops(&rain(seq, spec.intensity, spec.motion, spec.seed), spec.intensity, spec.seed)),
        _ => {
            let snowy = snow(seq, spec.intensity, spec.motion, spec.seed);
            let (tr, airlight) = haze_field(seq.height(), seq.width(), 1.2 * spec.intensity, spec.seed);
            haze_with_transmission(&snowy, &tr, airlight)
        }
    }
}

/// `I = J * tr + A * (1 - tr)` with a per-pixel transmission shared by all
/// frames.
pub fn haze_with_transmission(seq: &FrameSequence, tr: &Array2<f32>, airlight: f32) -> Result<FrameSequence> {
    if tr.dim() != (seq.height(), seq.width()) {
        return Err(Error::ShapeMismatch(format!(
            "transmission {:?} vs frames {}x{}",
            tr.dim(),
            seq.height(),
            seq.width()
        )));
    }
    let mut out = seq.clone();
    for mut frame in out.frames.outer_iter_mut() {
        for mut plane in frame.outer_iter_mut() {
            ndarray::Zip::from(&mut plane).and(tr).for_each(|p, &t| *p = (*p * t + airlight * (1.0 - t)).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

fn haze_field(h: usize, w: usize, beta: f64, seed: u64) -> (Array2<f32>, f32) {
    let mut rng = seed::rng(seed, &[seed::tag::DEGRADE, HAZE_LAYER]);
    let airlight = rng.random_range(0.7..1.0);
    let vertical = rng.random_range(0.6..1.0);
    let flip = rng.random_bool(0.5);
    let bump_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let tr = Array2::from_shape_fn((h, w), |(y, x)| {
        let yn = 1.0 - (y as f64 + 0.5) / h as f64;
        let mut xn = (x as f64 + 0.5) / w as f64;
        if flip {
            xn = 1.0 - xn;
        }
        let bump = 0.08 * (std::f64::consts::TAU * xn + bump_phase).sin();
        let depth = (0.15 + 0.85 * (vertical * yn + (1.0 - vertical) * xn) + bump).clamp(0.0, 1.0);
        (-beta * depth).exp() as f32
    });
    (tr, airlight as f32)
}

fn add_layer(seq: &FrameSequence, layers: &[Array2<f32>]) -> FrameSequence {
    let mut out = seq.clone();
    for (mut frame, layer) in out.frames.outer_iter_mut().zip(layers) {
        for mut plane in frame.outer_iter_mut() {
            ndarray::Zip::from(&mut plane).and(layer).for_each(|p, &l| *p = (*p + l.min(1.0)).clamp(0.0, 1.0));
        }
    }
    out
}

/// Bilinear splat with toroidal wrap.
fn splat(layer: &mut Array2<f32>, x: f64, y: f64, v: f64) {
    let (h, w) = layer.dim();
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
            let yy = (y0 as i64 + oy).rem_euclid(h as i64) as usize;
            let xx = (x0 as i64 + ox).rem_euclid(w as i64) as usize;
            layer[[yy, xx]] += (v * wx * wy) as f32;
        }
    }
}

fn direction(m: Motion) -> (f64, f64) {
    let n = (m.dx * m.dx + m.dy * m.dy).sqrt();
    if n < 1e-9 {
        (0.0, 1.0)
    } else {
        (m.dx / n, m.dy / n)
    }
}

fn rain(seq: &FrameSequence, intensity: f64, motion: Motion, seed: u64) -> FrameSequence {
    if intensity == 0.0 {
        return seq.clone();
    }
    let (h, w) = (seq.height(), seq.width());
    let mut rng = seed::rng(seed, &[seed::tag::DEGRADE, RAIN_LAYER]);
    let count = (intensity * (h * w) as f64 / 50.0).round().max(1.0) as usize;
    let (ux, uy) = direction(motion);
    let streaks: Vec<[f64; 5]> = (0..count)
        .map(|_| {
            [
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.6..1.2) * (4.0 + 8.0 * intensity),
                rng.random_range(0.2..0.5) * (0.6 + 0.4 * intensity),
                rng.random_range(0.8..1.2),
            ]
        })
        .collect();
    let layers: Vec<Array2<f32>> = (0..seq.len())
        .map(|f| {
            let mut layer = Array2::zeros((h, w));
            for &[x0, y0, len, bright, speed] in &streaks {
                let hx = x0 + motion.dx * speed * f as f64;
                let hy = y0 + motion.dy * speed * f as f64;
                let steps = (len * 2.0).ceil() as usize;
                for i in 0..steps {
                    let d = i as f64 * 0.5;
                    splat(&mut layer, hx - ux * d, hy - uy * d, bright * 0.5);
                }
            }
            layer
        })
        .collect();
    add_layer(seq, &layers)
}

fn snow(seq: &FrameSequence, intensity: f64, motion: Motion, seed: u64) -> FrameSequence {
    if intensity == 0.0 {
        return seq.clone();
    }
    let (h, w) = (seq.height(), seq.width());
    let mut rng = seed::rng(seed, &[seed::tag::DEGRADE, SNOW_LAYER]);
    let count = (intensity * (h * w) as f64 / 45.0).round().max(1.0) as usize;
    struct Flake {
        life: usize,
        offset: usize,
        radius: f64,
        bright: f64,
        speed: f64,
        wobble: f64,
        freq: f64,
        phase: f64,
    }
    let flakes: Vec<Flake> = (0..count)
        .map(|_| {
            let life = rng.random_range(8..=20);
            Flake {
                life,
                offset: rng.random_range(0..life),
                radius: rng.random_range(0.6..1.8),
                bright: rng.random_range(0.4..0.9) * (0.6 + 0.4 * intensity),
                speed: rng.random_range(0.6..1.4),
                wobble: rng.random_range(0.0..1.0),
                freq: rng.random_range(0.2..0.6),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    let layers: Vec<Array2<f32>> = (0..seq.len())
        .map(|f| {
            let mut layer = Array2::<f32>::zeros((h, w));
            for (p, fl) in flakes.iter().enumerate() {
                let generation = (f + fl.offset) / fl.life;
                let age = ((f + fl.offset) % fl.life) as f64;
                let mut spawn = seed::rng(seed, &[seed::tag::DEGRADE, SNOW_SPAWN, p as u64, generation as u64]);
                let sx: f64 = spawn.random_range(0.0..w as f64);
                let sy: f64 = spawn.random_range(0.0..h as f64);
                let cx = sx + motion.dx * fl.speed * age + fl.wobble * (fl.freq * age + fl.phase).sin();
                let cy = sy + motion.dy * fl.speed * age;
                let fade = (std::f64::consts::PI * (age + 0.5) / fl.life as f64).sin().sqrt();
                let reach = (3.0 * fl.radius).ceil() as i64;
                for oy in -reach..=reach {
                    for ox in -reach..=reach {
                        let px = cx.floor() + ox as f64 + 0.5;
                        let py = cy.floor() + oy as f64 + 0.5;
                        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                        let v = fl.bright * fade * (-d2 / (2.0 * fl.radius * fl.radius)).exp();
                        let yy = (py.floor() as i64).rem_euclid(h as i64) as usize;
                        let xx = (px.floor() as i64).rem_euclid(w as i64) as usize;
                        layer[[yy, xx]] += v as f32;
                    }
                }
            }
            layer
        })
        .collect();
    add_layer(seq, &layers)
}

fn box_blur(plane: ndarray::ArrayView2<f32>, r: i64) -> Array2<f32> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for yy in (y as i64 - r).max(0)..=(y as i64 + r).min(h as i64 - 1) {
            for xx in (x as i64 - r).max(0)..=(x as i64 + r).min(w as i64 - 1) {
                acc += plane[[yy as usize, xx as usize]];
                n += 1.0;
            }
        }
        acc / n
    })
}

fn raindrops(seq: &FrameSequence, intensity: f64, seed: u64) -> FrameSequence {
    let (h, w) = (seq.height(), seq.width());
    let mut rng = seed::rng(seed, &[seed::tag::DEGRADE, DROP_LAYER]);
    let count = (intensity * (h * w) as f64 / 300.0).round().max(1.0) as usize;
    let scale = h.min(w) as f64 / 64.0;
    let drops: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(2.5..6.0) * scale,
            )
        })
        .collect();
    let mask = Array2::from_shape_fn((h, w), |(y, x)| {
        drops
            .iter()
            .map(|&(cx, cy, r)| {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let t = ((d - (r - 1.0)) / 1.5).clamp(0.0, 1.0);
                1.0 - t * t * (3.0 - 2.0 * t)
            })
            .fold(0.0f64, f64::max) as f32
    });
    let mut out = seq.clone();
    for mut frame in out.frames.outer_iter_mut() {
        for mut plane in frame.axis_iter_mut(Axis(0)) {
            let blurred = box_blur(plane.view(), 2);
            ndarray::Zip::from(&mut plane).and(&blurred).and(&mask).for_each(|p, &b, &m| {
                let lens = (1.08 * b + 0.06).min(1.0);
                *p = (*p * (1.0 - m) + lens * m).clamp(0.0, 1.0);
            });
        }
    }
    out
}
