//! Training loop, evaluation and parameter transfer.

use std::collections::BTreeMap;
use std::time::Instant;

use avs_core::audio::LogMel;
use avs_core::fusion::FusionMode;
use avs_core::metrics::{score_video, MetricAccumulator, MetricReport, DEFAULT_BETA2};
use avs_core::model::{AvsModel, ModelOutputs};
use avs_core::objectives::{self, AvmVariant, ObjectiveInputs, PairingPool};
use avs_core::optim::Adam;
use avs_core::types::{activate, AudibleSample, MaskVolume, TaskSetting};
use avs_core::{Graph, ParamStore, Tensor, Var};
use avs_data::{Dataset, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EpochRecord};
use crate::config::{InitMode, TrainConfig};
use crate::error::{Result, TrainError};

/// A video ready for the network: normalized frames and log-mel input.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub frames: Tensor<f32>,
    pub logmel: Tensor<f32>,
    pub gt: MaskVolume,
    pub supervised: Vec<bool>,
}

impl Prepared {
    pub fn clips(&self) -> usize {
        self.gt.clips
    }

    /// Left-right mirror of frames and masks.
    pub fn flipped(&self) -> Self {
        let (t, h, w, c) = self.frames.dims4().expect("rank-4 frames");
        let src = self.frames.data();
        let frames = Tensor::from_fn(&[t, h, w, c], |i| {
            let (ch, x, row) = (i % c, (i / c) % w, i / (c * w));
            src[(row * w + (w - 1 - x)) * c + ch]
        });
        let gt = MaskVolume::new(t, h, w, (0..t * h * w).map(|i| self.gt.data()[i - i % w + (w - 1 - i % w)]).collect()).expect("same shape");
        Self { frames, gt, ..self.clone() }
    }
}

pub fn prepare(model: &AvsModel, logmel: &LogMel, sample: &AudibleSample) -> Result<Prepared> {
    let t = sample.clips();
    let mel = logmel.compute(&sample.waveform)?;
    if mel.shape()[0] != t {
        return Err(TrainError::Mismatch(format!("{}: audio covers {} clips, frames {t}", sample.id, mel.shape()[0])));
    }
    Ok(Prepared {
        id: sample.id.clone(),
        frames: model.normalize_frames(&sample.frames),
        logmel: mel,
        gt: sample.gt_masks.clone().unwrap_or_else(|| MaskVolume::zeros(t, sample.height(), sample.width())),
        supervised: sample.supervised_frames.clone(),
    })
}

pub fn prepare_all(model: &AvsModel, samples: &[AudibleSample]) -> Result<Vec<Prepared>> {
    let logmel = LogMel::new(model.config.spectrogram.clone())?;
    samples.iter().map(|s| prepare(model, &logmel, s)).collect()
}

/// Opens the subset matching `cfg.setting` and prepares one split.
pub fn load_prepared(cfg: &TrainConfig, model: &AvsModel, split: Split) -> Result<Vec<Prepared>> {
    let ds = Dataset::open(&cfg.data_root, cfg.setting.into(), cfg.loader.clone())?;
    prepare_all(model, &ds.load_split(split)?)
}

/// The task setting implied by the dataset on disk.
pub fn dataset_setting(cfg: &TrainConfig) -> Result<TaskSetting> {
    let ds = Dataset::open(&cfg.data_root, cfg.setting.into(), cfg.loader.clone())?;
    Ok(ds.setting())
}

/// Copies every parameter of `source` whose name exists in `target`. Any
/// shape disagreement aborts with the full list of offending names.
pub fn transfer_init(target: &mut ParamStore<f32>, source: &ParamStore<f32>) -> Result<usize> {
    let mismatched: Vec<String> = target
        .iter()
        .filter_map(|(name, t)| match source.get(name) {
            Ok(s) if s.shape() != t.shape() => Some(format!("{name} {:?} vs {:?}", s.shape(), t.shape())),
            _ => None,
        })
        .collect();
    if !mismatched.is_empty() {
        return Err(TrainError::IncompatibleShapes(mismatched));
    }
    let mut copied = 0;
    for (name, t) in target.iter_mut() {
        if let Ok(s) = source.get(name) {
            *t = s.clone();
            copied += 1;
        }
    }
    Ok(copied)
}

/// Hard masks for every frame of one video.
pub fn predict_masks(model: &AvsModel, params: &ParamStore<f32>, p: &Prepared, setting: &TaskSetting) -> Result<MaskVolume> {
    let mut g = Graph::with_params(params);
    let x = g.constant(p.frames.clone());
    let a = g.constant(p.logmel.clone());
    let out = model.forward(&mut g, x, a, false)?;
    let setting = TaskSetting { clips_per_video: p.clips(), ..*setting };
    Ok(activate(g.value(out.scores), &setting)?.1)
}

/// Scores supervised frames of every video; valid and test videos are
/// supervised throughout.
pub fn evaluate(model: &AvsModel, params: &ParamStore<f32>, data: &[Prepared], setting: &TaskSetting) -> Result<(MetricReport, MetricAccumulator)> {
    let mut acc = MetricAccumulator::new();
    for p in data {
        let pred = predict_masks(model, params, p, setting)?;
        let idx: Vec<usize> = (0..p.clips()).filter(|&t| p.supervised[t]).collect();
        acc.add(p.id.clone(), score_video(&pred.select(&idx), &p.gt.select(&idx), setting.num_classes, DEFAULT_BETA2)?);
    }
    Ok((acc.report(setting.num_classes), acc))
}

/// Line of the JSONL metrics log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    #[serde(flatten)]
    pub record: EpochRecord,
    pub lr: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
}

struct StepLoss {
    total: f64,
    main: f64,
    avm: Option<f64>,
}

fn accumulate(into: &mut BTreeMap<String, Tensor<f32>>, grads: BTreeMap<String, Tensor<f32>>, scale: f32) {
    for (name, g) in grads {
        let g = g.map(|v| v * scale);
        match into.get_mut(&name) {
            Some(acc) => acc.add_assign(&g),
            None => {
                into.insert(name, g);
            }
        }
    }
}

/// Stacks `[T_i, ...]` tensors along the clip axis.
fn stack_clips(g: &mut Graph<'_, f32>, xs: &[Var]) -> Var {
    if xs.len() == 1 {
        return xs[0];
    }
    let mut shape = g.shape(xs[0]).to_vec();
    let flat: Vec<Var> = xs
        .iter()
        .map(|&x| {
            let n = g.value(x).len();
            g.reshape(x, &[1, n])
        })
        .collect();
    let cat = g.concat(&flat);
    shape[0] = xs.iter().map(|&x| g.shape(x)[0]).sum();
    g.reshape(cat, &shape)
}

fn batch_gradients(
    model: &AvsModel,
    params: &ParamStore<f32>,
    cfg: &TrainConfig,
    setting: &TaskSetting,
    clips: &[Prepared],
) -> Result<(StepLoss, BTreeMap<String, Tensor<f32>>)> {
    let stages = [1, 2, 3, 4];
    let n = clips.len() as f32;
    let mut grads = BTreeMap::new();
    let mut loss = StepLoss { total: 0.0, main: 0.0, avm: None };
    let pooled = cfg.loss.avm_variant == AvmVariant::Vv && cfg.loss.vv_pool == PairingPool::Batch && cfg.loss.uses_avm(setting);
    let forward = |g: &mut Graph<'_, f32>, p: &Prepared| -> Result<ModelOutputs> {
        let x = g.constant(p.frames.clone());
        let a = g.constant(p.logmel.clone());
        Ok(model.forward(g, x, a, false)?)
    };
    if !pooled {
        for p in clips {
            let mut g = Graph::with_params(params);
            let out = forward(&mut g, p)?;
            let probs = objectives::probabilities(&mut g, out.scores, setting);
            let inp = ObjectiveInputs { probs, fused: &out.fused, stages: &stages, audio: out.audio, gt: &p.gt, supervised: &p.supervised };
            let terms = objectives::total_loss(&mut g, &cfg.loss, setting, &inp)?;
            loss.total += f64::from(g.value(terms.total).data()[0]) / f64::from(n);
            loss.main += f64::from(g.value(terms.main).data()[0]) / f64::from(n);
            if let Some(a) = terms.avm {
                *loss.avm.get_or_insert(0.0) += f64::from(g.value(a).data()[0]) / f64::from(n);
            }
            accumulate(&mut grads, g.backward(terms.total).into_params(), 1.0 / n);
        }
        return Ok((loss, grads));
    }
    let mut g = Graph::with_params(params);
    let mut mains = Vec::new();
    let (mut masks, mut audio) = (Vec::new(), Vec::new());
    let mut fused: [Vec<Var>; 4] = Default::default();
    for p in clips {
        let out = forward(&mut g, p)?;
        let probs = objectives::probabilities(&mut g, out.scores, setting);
        mains.push(objectives::main_loss(&mut g, probs, &p.gt, &p.supervised, cfg.loss.eps)?);
        masks.push(objectives::foreground(&mut g, probs));
        audio.push(out.audio);
        for (s, z) in fused.iter_mut().zip(out.fused) {
            s.push(z);
        }
    }
    let mask = stack_clips(&mut g, &masks);
    let audio = stack_clips(&mut g, &audio);
    let fused: Vec<Var> = fused.iter().map(|zs| stack_clips(&mut g, zs)).collect();
    let avm = objectives::avm_vv_loss(&mut g, mask, &fused, audio)?;
    let mut main = mains[0];
    for &m in &mains[1..] {
        main = g.add(main, m);
    }
    let main = g.scale(main, 1.0 / n);
    let weighted = g.scale(avm, cfg.loss.effective_lambda(setting) as f32);
    let total = g.add(main, weighted);
    loss.total = f64::from(g.value(total).data()[0]);
    loss.main = f64::from(g.value(main).data()[0]);
    loss.avm = Some(f64::from(g.value(avm).data()[0]));
    Ok((loss, g.backward(total).into_params()))
}

/// Builds the model for `cfg` with the class count of `setting`.
pub fn build_model(cfg: &TrainConfig, setting: &TaskSetting) -> Result<AvsModel> {
    if setting.kind != cfg.setting {
        return Err(TrainError::Mismatch(format!("config trains {} but the dataset is {}", cfg.setting, setting.kind)));
    }
    let mut mc = cfg.model.clone();
    mc.num_classes = setting.num_classes;
    Ok(AvsModel::new(mc)?)
}

/// Initial parameters: seeded, optionally overwritten from a checkpoint.
pub fn initial_params(cfg: &TrainConfig, model: &AvsModel) -> Result<ParamStore<f32>> {
    let mut params = model.init::<f32>(cfg.seed);
    if cfg.init == InitMode::FromCheckpoint {
        let path = cfg.init_checkpoint.as_ref().expect("checked by config");
        transfer_init(&mut params, &Checkpoint::load(path)?.params)?;
    }
    Ok(params)
}

/// Runs `cfg.epochs()` epochs over `train`, validating on `valid` after each
/// epoch. Batches are drawn in a seed-determined order; updates are serial.
pub fn train(
    cfg: &TrainConfig,
    setting: &TaskSetting,
    model: &AvsModel,
    mut params: ParamStore<f32>,
    train: &[Prepared],
    valid: &[Prepared],
    mut log: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.check()?;
    if train.is_empty() {
        return Err(TrainError::Mismatch("no training videos".into()));
    }
    let mut snapshot = cfg.clone();
    snapshot.model = model.config.clone();
    let mut opt = Adam::new(cfg.adam.clone());
    let epochs = cfg.epochs();
    let per_epoch = if cfg.max_train_videos == 0 { train.len() } else { cfg.max_train_videos.min(train.len()) };
    let steps_per_epoch = per_epoch.div_ceil(cfg.batch_size);
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut step = 0;
    for epoch in 1..=epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(per_epoch);
        let (mut sum_total, mut sum_main, mut sum_avm) = (0.0, 0.0, None::<f64>);
        let mut lr = cfg.lr;
        for batch in order.chunks(cfg.batch_size) {
            let clips: Vec<Prepared> = batch
                .iter()
                .map(|&i| if cfg.hflip && rng.random_bool(0.5) { train[i].flipped() } else { train[i].clone() })
                .collect();
            let (loss, grads) = batch_gradients(model, &params, cfg, setting, &clips)?;
            if !loss.total.is_finite() {
                return Err(TrainError::Divergence { epoch, step, loss: loss.total });
            }
            lr = cfg.lr_at(step, epochs * steps_per_epoch);
            opt.step(&mut params, &grads, lr)?;
            step += 1;
            let w = batch.len() as f64 / per_epoch as f64;
            sum_total += loss.total * w;
            sum_main += loss.main * w;
            if let Some(a) = loss.avm {
                *sum_avm.get_or_insert(0.0) += a * w;
            }
        }
        let val = if valid.is_empty() { None } else { Some(evaluate(model, &params, valid, setting)?.0) };
        let record = EpochRecord {
            epoch,
            train_loss: sum_total,
            main_loss: sum_main,
            avm_loss: sum_avm,
            val_miou: val.as_ref().map(|r| r.miou),
            val_f_score: val.as_ref().map(|r| r.f_score),
        };
        history.push(record.clone());
        log(&EpochLog { record, lr, seconds: started.elapsed().as_secs_f64() });
        let score = val.as_ref().map_or(f64::NEG_INFINITY, |r| r.miou);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            let ck = Checkpoint { config: snapshot.clone(), epoch, history: history.clone(), params: params.clone() };
            best = Some((score, ck));
        }
    }
    let last = Checkpoint { config: snapshot, epoch: epochs, history, params };
    let best = best.map(|(_, c)| c).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { last, best })
}

/// Model and setting recorded in a checkpoint.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(AvsModel, TaskSetting)> {
    let mc = &ck.config.model;
    let setting = TaskSetting::new(ck.config.setting, mc.num_classes, ck.config.setting_clips())?;
    Ok((AvsModel::new(mc.clone())?, setting))
}

/// Fails unless the checkpoint was trained for the dataset's setting.
pub fn check_compatible(ck: &Checkpoint, setting: &TaskSetting) -> Result<()> {
    if ck.config.setting != setting.kind || ck.config.model.num_classes != setting.num_classes {
        return Err(TrainError::Mismatch(format!(
            "checkpoint is {} with {} classes, dataset is {} with {} classes",
            ck.config.setting, ck.config.model.num_classes, setting.kind, setting.num_classes
        )));
    }
    Ok(())
}

pub fn fusion_stages(model: &AvsModel) -> Vec<usize> {
    if model.config.fusion == FusionMode::Tpavi {
        model.config.fused_stages()
    } else {
        vec![]
    }
}
