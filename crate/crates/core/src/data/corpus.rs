use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::io::{save_frames, save_manifest, Manifest, ManifestEntry, Role, Split};
use super::{degrade, gen_clean_video, DegradationKind, DegradationSpec, FrameSequence, Motion};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seen_kinds: Vec<DegradationKind>,
    pub unseen_kinds: Vec<DegradationKind>,
    pub train_videos_per_seen_kind: usize,
    pub test_videos_per_seen_kind: usize,
    pub test_videos_per_unseen_kind: usize,
    pub n_frames: usize,
    pub resolution: usize,
    pub intensity: IntensityRange,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seen_kinds: DegradationKind::SEEN.to_vec(),
            unseen_kinds: DegradationKind::UNSEEN.to_vec(),
            train_videos_per_seen_kind: 16,
            test_videos_per_seen_kind: 4,
            test_videos_per_unseen_kind: 8,
            n_frames: 20,
            resolution: 64,
            intensity: IntensityRange { min: 0.4, max: 0.8 },
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.seen_kinds.iter().find(|k| !k.is_seen()) {
            return Err(Error::Parameter(format!("data.seen_kinds: {k} is not a single-weather kind")));
        }
        if let Some(k) = self.unseen_kinds.iter().find(|k| k.is_seen()) {
            return Err(Error::Parameter(format!("data.unseen_kinds: {k} is a seen kind")));
        }
        if self.n_frames == 0 || self.resolution == 0 {
            return Err(Error::Parameter("data.n_frames and data.resolution must be positive".into()));
        }
        let IntensityRange { min, max } = self.intensity;
        if !(0.0 <= min && min <= max && max <= 1.0) {
            return Err(Error::Parameter(format!("data.intensity needs 0 <= min <= max <= 1 (got {min}..{max})")));
        }
        Ok(())
    }

    /// Manifest of every video this config describes, without touching disk.
    pub fn plan(&self, base_seed: u64) -> Result<Manifest> {
        self.validate()?;
        let mut videos = Vec::new();
        let groups = self
            .seen_kinds
            .iter()
            .flat_map(|&k| [(k, Split::Train, self.train_videos_per_seen_kind), (k, Split::Test, self.test_videos_per_seen_kind)])
            .chain(self.unseen_kinds.iter().map(|&k| (k, Split::Test, self.test_videos_per_unseen_kind)));
        for (kind, split, count) in groups {
            let split_name = match split {
                Split::Train => "train",
                Split::Test => "test",
            };
            for i in 0..count {
                let video_id = format!("{kind}_{split_name}_{i:03}");
                let key = [kind as u64, split as u64, i as u64];
                let mut rng = seed::rng(base_seed, &[seed::tag::SPLIT, key[0], key[1], key[2]]);
                let IntensityRange { min, max } = self.intensity;
                let intensity = if max > min { rng.random_range(min..=max) } else { min };
                let motion = sample_motion(kind, &mut rng);
                let common = ManifestEntry {
                    video_id,
                    split,
                    role: Role::Clean,
                    kind: None,
                    intensity: None,
                    motion: None,
                    seed: seed::derive(base_seed, &[seed::tag::SCENE, key[0], key[1], key[2]]),
                    n_frames: self.n_frames,
                    resolution: self.resolution,
                };
                videos.push(ManifestEntry {
                    role: Role::Degraded,
                    kind: Some(kind),
                    intensity: Some(intensity),
                    motion: Some(motion),
                    seed: seed::derive(base_seed, &[seed::tag::DEGRADE, key[0], key[1], key[2]]),
                    ..common.clone()
                });
                videos.push(common);
            }
        }
        let manifest = Manifest { videos };
        manifest.validate()?;
        Ok(manifest)
    }
}

fn sample_motion(kind: DegradationKind, rng: &mut impl Rng) -> Motion {
    match kind {
        DegradationKind::Rain | DegradationKind::RainRaindrop => {
            Motion { dx: rng.random_range(-1.5..1.5), dy: rng.random_range(3.0..6.0) }
        }
        DegradationKind::Snow | DegradationKind::SnowFog => {
            Motion { dx: rng.random_range(-0.6..0.6), dy: rng.random_range(0.6..1.6) }
        }
        DegradationKind::Haze => Motion::STILL,
    }
}

/// Regenerates the frames an entry describes from its seeds alone.
pub fn replay_entry(manifest: &Manifest, entry: &ManifestEntry) -> Result<FrameSequence> {
    let clean_entry = match entry.role {
        Role::Clean => entry,
        Role::Degraded => manifest
            .find(&entry.video_id, Role::Clean)
            .ok_or_else(|| Error::MalformedManifest(format!("{} has no clean entry", entry.video_id)))?,
    };
    let clean = gen_clean_video(clean_entry.n_frames, clean_entry.resolution, clean_entry.seed)?;
    match (entry.role, entry.kind, entry.intensity, entry.motion) {
        (Role::Clean, ..) => Ok(clean),
        (Role::Degraded, Some(kind), Some(intensity), Some(motion)) => {
            degrade(&clean, &DegradationSpec::new(kind, intensity, motion, entry.seed)?)
        }
        _ => Err(Error::MalformedManifest(format!("{} lacks a degradation spec", entry.video_id))),
    }
}

/// Writes every planned video under `root/<video_id>/<role>/` plus the
/// manifest. Rerunning with the same inputs rewrites identical files.
pub fn generate_corpus(cfg: &CorpusConfig, base_seed: u64, root: &Path) -> Result<Manifest> {
    let manifest = cfg.plan(base_seed)?;
    for entry in manifest.videos.iter().filter(|e| e.role == Role::Clean) {
        let clean = replay_entry(&manifest, entry)?;
        save_frames(&clean, &Manifest::frame_dir(root, entry))?;
        let deg = manifest.find(&entry.video_id, Role::Degraded).unwrap();
        let spec = DegradationSpec::new(deg.kind.unwrap(), deg.intensity.unwrap(), deg.motion.unwrap(), deg.seed)?;
        save_frames(&degrade(&clean, &spec)?, &Manifest::frame_dir(root, deg))?;
    }
    save_manifest(&manifest, root)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::super::load_frames;
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            train_videos_per_seen_kind: 1,
            test_videos_per_seen_kind: 1,
            test_videos_per_unseen_kind: 1,
            n_frames: 3,
            resolution: 16,
            ..Default::default()
        }
    }

    #[test]
    fn default_plan_counts() {
        let m = CorpusConfig::default().plan(0).unwrap();
        let train = m.degraded(Some(Split::Train)).count();
        let unseen = m.degraded(Some(Split::Test)).filter(|e| !e.kind.unwrap().is_seen()).count();
        assert_eq!(train, 3 * 16);
        assert_eq!(unseen, 2 * 8);
        assert_eq!(m.videos.len(), 2 * (3 * 20 + 16));
    }

    #[test]
    fn written_corpus_matches_replay() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_corpus(&small(), 5, dir.path()).unwrap();
        for e in &m.videos {
            let stored = load_frames(&Manifest::frame_dir(dir.path(), e)).unwrap();
            let replayed = replay_entry(&m, e).unwrap();
            let err = (&stored.frames - &replayed.frames).mapv(f32::abs).fold(0.0f32, |a, &b| a.max(b));
            assert!(err <= 1.0 / 255.0, "{}: {err}", e.video_id);
        }
        assert_eq!(replay_entry(&m, &m.videos[0]).unwrap(), replay_entry(&m, &m.videos[0]).unwrap());
    }

    #[test]
    fn rejects_misplaced_kinds() {
        let cfg = CorpusConfig { seen_kinds: vec![DegradationKind::SnowFog], ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
