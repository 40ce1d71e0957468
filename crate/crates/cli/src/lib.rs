//! Command implementations behind the `diffvid` binary. Each command is a
//! plain function so that runs can also be driven in-process.

pub mod config;

// The numeric kernels allocate and free many large temporaries; the system
// allocator returns each to the OS and spends as long in the kernel as in
// the math.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffvid_core::data::{generate_corpus, load_frames, load_manifest, save_frames, Manifest, Role, Split};
use diffvid_core::denoiser::init_weights;
use diffvid_core::metrics::{evaluate_corpus, EvalReport};
use diffvid_core::noise::{correlation_stats, ArmaParams, NoiseModel};
use diffvid_core::train::{load_checkpoint, save_checkpoint, train_loop, Checkpoint, OptimizerState, TrainSet};
use diffvid_core::tta::{restore_stream, TTAConfig};
use diffvid_core::{seed, Error, Result};
use serde::Serialize;
use serde_json::json;

pub use config::{reference_config, EvalConfig, NoiseStatsConfig, RunConfig, VideoSelection, RESOLVED_CONFIG_FILE};

pub const CHECKPOINT_FILE: &str = "checkpoint.dvck";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RESTORE_LOG_FILE: &str = "restore_log.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const NOISE_STATS_JSON_FILE: &str = "noise_stats.json";
pub const NOISE_STATS_TABLE_FILE: &str = "noise_stats.txt";
pub const NOISE_STATS_PLOT_FILE: &str = "noise_stats.svg";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn open(path: PathBuf, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(JsonLines { path, out: BufWriter::new(file) })
    }

    fn push(&mut self, value: &impl Serialize) -> Result<()> {
        let line = serde_json::to_string(value).expect("log records serialize");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Generates the toy corpus under `out`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let manifest = generate_corpus(&cfg.data, cfg.seed, out)?;
    cfg.echo_into(out)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    pub start_iter: usize,
}

/// Trains on every training video in the corpus (the union of the seen
/// kinds). With `resume`, weights, optimizer state, schedule and seed come
/// from the checkpoint and the iteration counter continues up to
/// `cfg.train.total_iters`; the log is appended to.
pub fn cmd_train(cfg: &RunConfig, corpus: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = load_manifest(corpus)?;
    let set = TrainSet::from_corpus(corpus, &manifest)?;
    let (mut weights, mut state, sched, train_cfg, base_seed) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let train = diffvid_core::train::TrainConfig { total_iters: cfg.train.total_iters, ..ck.train };
            (ck.weights, ck.opt_state, ck.sched, train, ck.seed)
        }
        None => {
            let weights = init_weights(&cfg.model, cfg.seed)?;
            let state = OptimizerState::new(&weights);
            (weights, state, cfg.schedule.build()?, cfg.train.clone(), cfg.seed)
        }
    };
    train_cfg.validate()?;
    cfg.echo_into(out)?;
    let start_iter = state.step;
    let mut log = JsonLines::open(out.join(TRAIN_LOG_FILE), resume.is_some())?;
    let every = train_cfg.checkpoint_every;
    let total = train_cfg.total_iters;
    let snapshot = |weights: &diffvid_core::denoiser::ModelWeights, state: &OptimizerState| Checkpoint {
        weights: weights.clone(),
        opt_state: state.clone(),
        sched: sched.clone(),
        train: train_cfg.clone(),
        seed: base_seed,
    };
    let losses = train_loop(&mut weights, &mut state, &set, &sched, &train_cfg, base_seed, |rec, w, st| {
        log.push(rec)?;
        if rec.iter % 100 == 0 || rec.iter + 1 == total {
            eprintln!("iter {:>6}/{total}  loss {:.5}  lr {:.3e}", rec.iter, rec.loss, rec.lr);
        }
        if every > 0 && st.step % every == 0 && st.step < total {
            save_checkpoint(&snapshot(w, st), &out.join(format!("checkpoint_{:06}.dvck", st.step)))?;
        }
        Ok(())
    })?;
    log.finish()?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&snapshot(&weights, &state), &checkpoint)?;
    Ok(TrainSummary { checkpoint, losses, start_iter })
}

/// Where `cmd_restore` reads degraded frames from.
#[derive(Clone, Debug)]
pub enum RestoreInput {
    /// One directory of `frame_*.png`; the video id is the directory name.
    Frames(PathBuf),
    /// The test-split degraded videos of a corpus, filtered by `eval.videos`.
    Corpus(PathBuf),
}

#[derive(Clone, Debug)]
pub struct RestoreSummary {
    pub videos: Vec<String>,
    pub clips: usize,
    pub warnings: usize,
}

/// Per-video base seed: stable under changes to the video list.
pub fn video_seed(base: u64, video_id: &str) -> u64 {
    video_id.bytes().fold(seed::derive(base, &[video_id.len() as u64]), |s, b| seed::derive(s, &[b as u64]))
}

fn restore_inputs(cfg: &RunConfig, input: &RestoreInput) -> Result<Vec<(String, PathBuf)>> {
    match input {
        RestoreInput::Frames(dir) => {
            let id = dir
                .file_name()
                .and_then(|n| n.to_str())
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::Parameter(format!("cannot name a video after {}", dir.display())))?;
            // `<root>/<id>/degraded` is named after the video, not the role.
            let id = if id == Role::Degraded.dir_name() {
                dir.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()).unwrap_or(id)
            } else {
                id
            };
            Ok(vec![(id.to_string(), dir.clone())])
        }
        RestoreInput::Corpus(root) => {
            let manifest = load_manifest(root)?;
            let mut per_kind = std::collections::BTreeMap::<String, usize>::new();
            let mut out = Vec::new();
            for e in manifest.degraded(Some(Split::Test)) {
                let seen = e.kind.is_some_and(|k| k.is_seen());
                let wanted = match cfg.eval.videos {
                    VideoSelection::SeenTest => seen,
                    VideoSelection::UnseenTest => !seen,
                    VideoSelection::AllTest => true,
                };
                let count = per_kind.entry(e.kind.map_or_else(String::new, |k| k.name().to_string())).or_default();
                if wanted && (cfg.eval.max_videos_per_kind == 0 || *count < cfg.eval.max_videos_per_kind) {
                    *count += 1;
                    out.push((e.video_id.clone(), Manifest::frame_dir(root, e)));
                }
            }
            if out.is_empty() {
                return Err(Error::MalformedManifest(format!("no test videos selected in {}", root.display())));
            }
            Ok(out)
        }
    }
}

/// Restores each input video into `out/<video_id>/` and writes a sidecar
/// log with one `adapt` record per adaptation step and one `clip` record per
/// clip. The sampling noise is the one the checkpoint was trained with.
/// Adaptation faults are logged and counted, not raised.
pub fn cmd_restore(cfg: &RunConfig, checkpoint: &Path, input: &RestoreInput, out: &Path, tta: bool) -> Result<RestoreSummary> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let tta_cfg = TTAConfig { enabled: tta, ..cfg.tta.clone() };
    tta_cfg.validate(ck.weights.config.n_frames)?;
    let videos = restore_inputs(cfg, input)?;
    cfg.echo_into(out)?;
    let mut log = JsonLines::open(out.join(RESTORE_LOG_FILE), false)?;
    let mut summary = RestoreSummary { videos: Vec::new(), clips: 0, warnings: 0 };
    for (id, dir) in videos {
        let timer = Instant::now();
        let frames = load_frames(&dir)?;
        let outcome = restore_stream(&frames, &ck.weights, &ck.sched, &ck.train.noise, &tta_cfg, video_seed(cfg.seed, &id), &id)?;
        save_frames(&outcome.restored, &out.join(&id))?;
        for c in &outcome.clips {
            for a in &c.adaptation {
                log.push(&json!({
                    "event": "adapt", "video_id": id, "clip": c.clip, "timestep": a.timestep,
                    "loss": a.loss, "lr": tta_cfg.adapt_lr, "wall_ms": a.wall_ms,
                }))?;
            }
            log.push(&json!({
                "event": "clip", "video_id": id, "clip": c.clip, "start_frame": c.start_frame,
                "adapt_steps": c.adaptation.len(), "fault": c.fault, "wall_ms": c.wall_ms,
            }))?;
            if let Some(f) = &c.fault {
                eprintln!("warning: {id} clip {}: adaptation reverted: {f}", c.clip);
            }
        }
        eprintln!("restored {id} ({} clips, {:.1} s)", outcome.clips.len(), timer.elapsed().as_secs_f64());
        summary.clips += outcome.clips.len();
        summary.warnings += outcome.fault_count();
        summary.videos.push(id);
    }
    log.finish()?;
    Ok(summary)
}

/// Scores `restored/<video_id>/` against the corpus clean frames and writes
/// `report.json` and `report.txt` into `out`.
pub fn cmd_eval(cfg: &RunConfig, restored: &Path, corpus: &Path, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let manifest = load_manifest(corpus)?;
    let mut report = evaluate_corpus(restored, corpus, &manifest)?;
    report.config = Some(cfg.to_toml());
    cfg.echo_into(out)?;
    write_file(&out.join(REPORT_JSON_FILE), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write_file(&out.join(REPORT_TABLE_FILE), report.to_table())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseStatsRow {
    pub phi: f64,
    pub tau: f64,
    pub rho_adjacent: f64,
    /// Standard error of the mean over clips.
    pub std_err: f64,
    pub clips: usize,
}

/// Mean adjacent-frame correlation of sampled noise over the `(phi, tau)`
/// grid. Pairs outside the admissible region are skipped.
pub fn noise_stats(cfg: &NoiseStatsConfig, base_seed: u64) -> Result<Vec<NoiseStatsRow>> {
    let shape = [cfg.n_frames, cfg.channels, cfg.resolution, cfg.resolution];
    let mut rows = Vec::new();
    for &phi in &cfg.phi {
        for &tau in &cfg.tau {
            let Ok(arma) = ArmaParams::new(phi, tau) else {
                eprintln!("skipping (phi={phi}, tau={tau}): not an admissible pair");
                continue;
            };
            let model = NoiseModel::Temporal { arma };
            let rhos = (0..cfg.clips)
                .map(|i| Ok(correlation_stats(&model.sample(shape, seed::derive(base_seed, &[i as u64]))?)?.rho_adjacent))
                .collect::<Result<Vec<f64>>>()?;
            let n = rhos.len() as f64;
            let mean = rhos.iter().sum::<f64>() / n;
            let var = rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            rows.push(NoiseStatsRow { phi, tau, rho_adjacent: mean, std_err: (var / n).sqrt(), clips: cfg.clips });
        }
    }
    Ok(rows)
}

pub fn noise_stats_table(rows: &[NoiseStatsRow]) -> String {
    let mut s = format!("{:>6} {:>6} {:>10} {:>10}\n", "phi", "tau", "rho_adj", "std_err");
    for r in rows {
        let _ = writeln!(s, "{:>6.2} {:>6.2} {:>10.4} {:>10.4}", r.phi, r.tau, r.rho_adjacent, r.std_err);
    }
    s
}

/// Correlation against phi, one polyline per tau.
pub fn noise_stats_svg(rows: &[NoiseStatsRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.phi), b.max(r.phi)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |phi: f64| M + (phi - lo) / span * (W - 2.0 * M);
    let y = |rho: f64| H - M - rho.clamp(-0.1, 1.0) / 1.0 * (H - 2.0 * M);
    let mut taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
    let _ = writeln!(s, "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", y(0.0), W - M, y(0.0));
    let _ = writeln!(s, "<line x1=\"{M}\" y1=\"{}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>", y(0.0), y(1.0));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\">phi</text>", W / 2.0, H - 8.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"{}\" font-size=\"12\">rho_adj</text>", M - 10.0);
    for (i, tau) in taus.iter().enumerate() {
        let color = colors[i % colors.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.tau == *tau)
            .map(|r| format!("{:.1},{:.1}", x(r.phi), y(r.rho_adjacent)))
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">tau={tau}</text>", W - M - 60.0, M + 14.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

/// Runs the grid and, with `out`, writes the table, JSON rows, the plot (if
/// enabled) and the config echo there.
pub fn cmd_noise_stats(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<NoiseStatsRow>> {
    cfg.validate()?;
    let rows = noise_stats(&cfg.noise_stats, cfg.seed)?;
    if let Some(dir) = out {
        cfg.echo_into(dir)?;
        write_file(&dir.join(NOISE_STATS_TABLE_FILE), noise_stats_table(&rows))?;
        write_file(&dir.join(NOISE_STATS_JSON_FILE), serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
        if cfg.noise_stats.plot {
            write_file(&dir.join(NOISE_STATS_PLOT_FILE), noise_stats_svg(&rows))?;
        }
    }
    Ok(rows)
}
