//! PSNR / SSIM on `[0, 1]` frame stacks and corpus-level aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{load_frames, DegradationKind, FrameSequence, Manifest, Role};
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_pair(a: &ArrayView4<f32>, b: &ArrayView4<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::Dimension("empty frame stack".into()));
    }
    Ok(())
}

/// Mean over frames of `10 log10(1 / mse)`, each frame capped at 100 dB.
pub fn psnr(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    psnr_frames(a.frames.view(), b.frames.view())
}

pub fn psnr_frames(a: ArrayView4<f32>, b: ArrayView4<f32>) -> Result<f64> {
    check_pair(&a, &b)?;
    let per_frame: Vec<f64> = a
        .outer_iter()
        .zip(b.outer_iter())
        .map(|(fa, fb)| {
            let mse = ndarray::Zip::from(&fa).and(&fb).fold(0.0f64, |s, &x, &y| s + (x as f64 - y as f64).powi(2)) / fa.len() as f64;
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
            }
        })
        .collect();
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(h - 10) x (w - 10)`.
fn filter_valid(x: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let n = k.len();
    let rows = Array2::from_shape_fn((h, w - n + 1), |(y, xo)| (0..n).map(|i| k[i] * x[[y, xo + i]]).sum::<f64>());
    Array2::from_shape_fn((h - n + 1, w - n + 1), |(yo, xo)| (0..n).map(|i| k[i] * rows[[yo + i, xo]]).sum::<f64>())
}

/// Mean SSIM of one plane over all fully contained Gaussian windows.
pub fn ssim_plane(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Result<f64> {
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let k = gaussian_window();
    let x = a.mapv(|v| v as f64);
    let y = b.mapv(|v| v as f64);
    let mx = filter_valid(&x, &k);
    let my = filter_valid(&y, &k);
    let sxx = filter_valid(&(&x * &x), &k);
    let syy = filter_valid(&(&y * &y), &k);
    let sxy = filter_valid(&(&x * &y), &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    ndarray::Zip::from(&mx).and(&my).and(&sxx).and(&syy).and(&sxy).for_each(|&mx, &my, &sxx, &syy, &sxy| {
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cov = sxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    });
    Ok(total / mx.len() as f64)
}

/// 11x11 Gaussian-window SSIM (sigma 1.5, K1 0.01, K2 0.03, range 1),
/// averaged over windows, channels and frames.
pub fn ssim(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    ssim_frames(a.frames.view(), b.frames.view())
}

pub fn ssim_frames(a: ArrayView4<f32>, b: ArrayView4<f32>) -> Result<f64> {
    check_pair(&a, &b)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.outer_iter().zip(b.outer_iter()) {
        for (pa, pb) in fa.axis_iter(Axis(0)).zip(fb.axis_iter(Axis(0))) {
            total += ssim_plane(pa, pb)?;
            n += 1;
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub kind: Option<DegradationKind>,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub psnr: f64,
    pub ssim: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: Vec<VideoScore>,
    pub per_kind: BTreeMap<String, MeanScore>,
    pub overall: MeanScore,
    /// Resolved configuration of the run, if the caller supplies one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

fn mean_of<'a>(scores: impl Iterator<Item = &'a VideoScore>) -> MeanScore {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for v in scores {
        p += v.psnr;
        s += v.ssim;
        n += 1;
    }
    let d = n.max(1) as f64;
    MeanScore { psnr: p / d, ssim: s / d, count: n }
}

impl EvalReport {
    pub fn from_scores(videos: Vec<VideoScore>) -> Self {
        let mut kinds: Vec<String> = videos.iter().map(|v| kind_label(v.kind)).collect();
        kinds.sort();
        kinds.dedup();
        let per_kind = kinds
            .into_iter()
            .map(|k| {
                let m = mean_of(videos.iter().filter(|v| kind_label(v.kind) == k));
                (k, m)
            })
            .collect();
        let overall = mean_of(videos.iter());
        EvalReport { videos, per_kind, overall, config: None }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>9} {:>8}", "video", "PSNR(dB)", "SSIM");
        for v in &self.videos {
            let _ = writeln!(out, "{:<28} {:>9.3} {:>8.4}", v.video_id, v.psnr, v.ssim);
        }
        let _ = writeln!(out, "{:-<47}", "");
        for (k, m) in &self.per_kind {
            let _ = writeln!(out, "{:<28} {:>9.3} {:>8.4}", format!("{k} (n={})", m.count), m.psnr, m.ssim);
        }
        let _ = writeln!(out, "{:<28} {:>9.3} {:>8.4}", format!("overall (n={})", self.overall.count), self.overall.psnr, self.overall.ssim);
        out
    }
}

fn kind_label(kind: Option<DegradationKind>) -> String {
    kind.map_or_else(|| "unknown".to_string(), |k| k.name().to_string())
}

pub fn score_video(video_id: &str, kind: Option<DegradationKind>, restored: &FrameSequence, clean: &FrameSequence) -> Result<VideoScore> {
    let shape_err = |e: Error| match e {
        Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("{video_id}: {m}")),
        other => other,
    };
    Ok(VideoScore {
        video_id: video_id.to_string(),
        kind,
        psnr: psnr(restored, clean).map_err(shape_err)?,
        ssim: ssim(restored, clean).map_err(shape_err)?,
    })
}

/// Scores every video directory under `restored_dir` against the clean
/// frames at `clean_root/<video_id>/clean`. Each restored id must appear in
/// the manifest.
pub fn evaluate_corpus(restored_dir: &Path, clean_root: &Path, manifest: &Manifest) -> Result<EvalReport> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(restored_dir).map_err(|e| Error::io(restored_dir, e))? {
        let entry = entry.map_err(|e| Error::io(restored_dir, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::IdMismatch(format!("no restored videos in {}", restored_dir.display())));
    }
    let mut scores = Vec::new();
    for id in ids {
        let clean_entry = manifest
            .find(&id, Role::Clean)
            .ok_or_else(|| Error::IdMismatch(format!("restored video {id} is not in the manifest")))?;
        let kind = manifest.find(&id, Role::Degraded).and_then(|e| e.kind);
        let restored = load_frames(&restored_dir.join(&id))?;
        let clean = load_frames(&Manifest::frame_dir(clean_root, clean_entry))?;
        scores.push(score_video(&id, kind, &restored, &clean)?);
    }
    Ok(EvalReport::from_scores(scores))
}
