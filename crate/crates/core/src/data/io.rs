use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{DegradationKind, FrameSequence, Motion};
use crate::error::{Error, Result};

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:05}.png"))
}

/// Writes `frame_00000.png`, ... as 8-bit RGB, replacing any frames already
/// in `dir`.
pub fn save_frames(seq: &FrameSequence, dir: &Path) -> Result<()> {
    if seq.channels() != 3 {
        return Err(Error::ShapeMismatch(format!("PNG frames need 3 channels, got {}", seq.channels())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if frame_index(&path).is_some() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    let (h, w) = (seq.height(), seq.width());
    for (i, frame) in seq.frames.outer_iter().enumerate() {
        let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Rgb(std::array::from_fn(|c| (frame[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        let path = frame_path(dir, i);
        img.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

fn frame_index(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("frame_")?.strip_suffix(".png")?.parse().ok()
}

/// Reads a contiguous `frame_00000.png ...` run. A gap in the numbering is
/// reported as the first missing file.
pub fn load_frames(dir: &Path) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(i) = frame_index(&path) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    let n = indices.last().map_or(1, |&m| m + 1);
    if let Some(missing) = (0..n).find(|i| indices.binary_search(i).is_err()) {
        return Err(Error::MissingFrame(frame_path(dir, missing)));
    }
    let mut frames: Option<Array4<f32>> = None;
    for i in 0..n {
        let path = frame_path(dir, i);
        let img = image::open(&path).map_err(|source| Error::Image { path: path.clone(), source })?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let arr = frames.get_or_insert_with(|| Array4::zeros([n, 3, h, w]));
        if arr.shape()[2] != h || arr.shape()[3] != w {
            return Err(Error::InconsistentResolution {
                path,
                detail: format!("{w}x{h}, expected {}x{}", arr.shape()[3], arr.shape()[2]),
            });
        }
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                arr[[i, c, y as usize, x as usize]] = p[c] as f32 / 255.0;
            }
        }
    }
    Ok(FrameSequence::new(frames.unwrap()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clean,
    Degraded,
}

impl Role {
    pub fn dir_name(self) -> &'static str {
        match self {
            Role::Clean => "clean",
            Role::Degraded => "degraded",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One stored frame directory. For clean entries `seed` is the scene seed;
/// for degraded entries it is the degradation seed and the scene comes from
/// the clean entry with the same `video_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DegradationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
    pub seed: u64,
    pub n_frames: usize,
    pub resolution: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, rename = "video")]
    pub videos: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.videos {
            if e.video_id.is_empty() || e.video_id.contains(['/', '\\']) || e.video_id.starts_with('.') {
                return Err(Error::MalformedManifest(format!("invalid video id {:?}", e.video_id)));
            }
            if !seen.insert((e.video_id.as_str(), e.role)) {
                return Err(Error::MalformedManifest(format!("duplicate entry {} ({:?})", e.video_id, e.role)));
            }
            let degraded = e.role == Role::Degraded;
            let given = [e.kind.is_some(), e.intensity.is_some(), e.motion.is_some()];
            if given.iter().any(|&g| g != degraded) {
                return Err(Error::MalformedManifest(format!(
                    "{}: kind, intensity and motion must be given exactly for degraded entries",
                    e.video_id
                )));
            }
            if let Some(i) = e.intensity {
                if !(0.0..=1.0).contains(&i) {
                    return Err(Error::MalformedManifest(format!("{}: intensity {i} outside [0, 1]", e.video_id)));
                }
            }
            if e.n_frames == 0 || e.resolution == 0 {
                return Err(Error::MalformedManifest(format!("{}: empty video", e.video_id)));
            }
        }
        Ok(())
    }

    pub fn find(&self, video_id: &str, role: Role) -> Option<&ManifestEntry> {
        self.videos.iter().find(|e| e.video_id == video_id && e.role == role)
    }

    /// Degraded entries, optionally filtered.
    pub fn degraded<'a>(&'a self, split: Option<Split>) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.videos.iter().filter(move |e| e.role == Role::Degraded && split.is_none_or(|s| e.split == s))
    }

    pub fn frame_dir(root: &Path, entry: &ManifestEntry) -> PathBuf {
        root.join(&entry.video_id).join(entry.role.dir_name())
    }
}

pub fn save_manifest(manifest: &Manifest, root: &Path) -> Result<()> {
    manifest.validate()?;
    let text = toml::to_string_pretty(manifest).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Reads `manifest.toml` from a corpus root (or the given file directly).
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::MalformedManifest(format!("{}: {e}", file.display())))?;
    manifest.validate()?;
    Ok(manifest)
}
