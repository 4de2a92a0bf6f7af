//! Command-level workflows: each reads from disk and writes its artifacts
//! under an output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use avs_core::metrics::MetricReport;
use avs_core::model::AvsModel;
use avs_core::types::TaskSetting;
use avs_core::ParamStore;
use avs_data::image::write_indexed_mask;
use avs_data::{Dataset, LoaderOptions, Split};
use serde::Serialize;

use crate::analysis::{cluster_audio_embeddings, clusters_to_tsv, export_heatmaps};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::engine::{self, check_compatible, evaluate, model_from_checkpoint, predict_masks, prepare_all, EpochLog, Prepared, TrainOutcome};
use crate::error::{Result, TrainError};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| TrainError::io(path, e))
}

/// Trains per `cfg`, writing the resolved config, a JSONL epoch log and the
/// last and best checkpoints to `cfg.output_dir`.
pub fn run_train(cfg: &TrainConfig, mut progress: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.check()?;
    let ds = Dataset::open(&cfg.data_root, cfg.setting.into(), cfg.loader.clone())?;
    let setting = ds.setting();
    let model = engine::build_model(cfg, &setting)?;
    let train = prepare_all(&model, &ds.load_split(Split::Train)?)?;
    let valid = prepare_all(&model, &ds.load_split(cfg.eval_split)?)?;
    let params = engine::initial_params(cfg, &model)?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| TrainError::io(out, e))?;
    let mut resolved = cfg.clone();
    resolved.model = model.config.clone();
    resolved.epochs = Some(cfg.epochs());
    write_file(&out.join(RESOLVED_CONFIG), &resolved.to_toml())?;
    let log_path = out.join(METRICS_LOG);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| TrainError::io(&log_path, e))?);
    let mut io_err = None;
    let outcome = engine::train(cfg, &setting, &model, params, &train, &valid, |rec| {
        let line = serde_json::to_string(rec).expect("log serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            io_err.get_or_insert(e);
        }
        progress(rec);
    })?;
    if let Some(e) = io_err {
        return Err(TrainError::io(&log_path, e));
    }
    outcome.last.save(&out.join(LAST_CHECKPOINT))?;
    outcome.best.save(&out.join(BEST_CHECKPOINT))?;
    Ok(outcome)
}

/// A checkpoint together with the prepared videos of one split.
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub model: AvsModel,
    pub setting: TaskSetting,
    pub dataset: Dataset,
    pub videos: Vec<Prepared>,
}

impl Loaded {
    pub fn params(&self) -> &ParamStore<f32> {
        &self.checkpoint.params
    }
}

/// Loads `checkpoint` and the `split` of the matching subset under
/// `data_root` (defaults to the root recorded in the checkpoint).
pub fn load_for_inference(checkpoint: &Path, data_root: Option<&Path>, split: Split, loader: Option<LoaderOptions>) -> Result<Loaded> {
    let ck = Checkpoint::load(checkpoint)?;
    let (model, _) = model_from_checkpoint(&ck)?;
    let root = data_root.map_or_else(|| ck.config.data_root.clone(), Path::to_path_buf);
    let dataset = Dataset::open(&root, ck.config.setting.into(), loader.unwrap_or_else(|| ck.config.loader.clone()))?;
    let setting = dataset.setting();
    check_compatible(&ck, &setting)?;
    let videos = prepare_all(&model, &dataset.load_split(split)?)?;
    Ok(Loaded { checkpoint: ck, model, setting, dataset, videos })
}

#[derive(Serialize)]
struct VideoLine<'a> {
    video_id: &'a str,
    miou: f64,
    f_score: f64,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    split: &'a str,
    #[serde(flatten)]
    report: &'a MetricReport,
    per_video: Vec<VideoLine<'a>>,
}

/// Scores a checkpoint on `split`; with `out_dir`, writes `metrics.txt`
/// (`key=value`) and `metrics.json` (including per-video scores).
pub fn run_eval(loaded: &Loaded, split: Split, out_dir: Option<&Path>) -> Result<MetricReport> {
    let (report, acc) = evaluate(&loaded.model, loaded.params(), &loaded.videos, &loaded.setting)?;
    if let Some(dir) = out_dir {
        write_file(&dir.join("metrics.txt"), &format!("split={}\n{}", split.as_str(), report.to_kv()))?;
        let json = EvalJson {
            split: split.as_str(),
            report: &report,
            per_video: acc.scores().map(|(id, s)| VideoLine { video_id: id, miou: s.miou, f_score: s.f_score }).collect(),
        };
        write_file(&dir.join("metrics.json"), &serde_json::to_string_pretty(&json).expect("report serializes"))?;
    }
    Ok(report)
}

/// Writes palette-encoded masks `<out>/<video>/<t>.png` for every frame.
pub fn run_predict(loaded: &Loaded, out_dir: &Path) -> Result<usize> {
    let mut written = 0;
    for v in &loaded.videos {
        let masks = predict_masks(&loaded.model, loaded.params(), v, &loaded.setting)?;
        let dir = out_dir.join(&v.id);
        fs::create_dir_all(&dir).map_err(|e| TrainError::io(&dir, e))?;
        for t in 0..masks.clips {
            write_indexed_mask(&dir.join(format!("{t}.png")), masks.width, masks.height, masks.frame(t), &loaded.dataset.palette)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Heatmaps for the selected videos (all when `videos` is empty).
pub fn run_heatmaps(loaded: &Loaded, stage: usize, videos: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for v in loaded.videos.iter().filter(|v| videos.is_empty() || videos.contains(&v.id)) {
        paths.extend(export_heatmaps(&loaded.model, loaded.params(), v, stage, out_dir)?);
    }
    if paths.is_empty() && !videos.is_empty() {
        return Err(TrainError::Mismatch(format!("none of {videos:?} found in the split")));
    }
    Ok(paths)
}

/// Clusters the audio embeddings of every clip in the split and writes a TSV.
pub fn run_cluster(loaded: &Loaded, k: usize, seed: u64, out: &Path) -> Result<usize> {
    let points = cluster_audio_embeddings(&loaded.model, loaded.params(), &loaded.videos, k, seed)?;
    write_file(out, &clusters_to_tsv(&points))?;
    Ok(points.len())
}
