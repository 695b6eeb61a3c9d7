//! Dataset ingestion, the two training stages, full-image enhancement and
//! evaluation reports.
//!
//! Training is a single deterministic sequence: the per-step sample (pair
//! index, crop position, flip) is drawn from a counter-seeded RNG, so a run
//! is reproducible from (seed, config, data) alone and can resume from a
//! checkpoint without replaying the data stream.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::Config;
use crate::image::{load_png, Image, ImageError};
use crate::iqa::{self, IqaError, MetricReport, NiqeModel, METRIC_ORDER};
use crate::losses::{
    decom_loss, enhance_loss, joint_loss, DecomLossTerms, EnhanceTargets, ExposureBundle,
    FeatureExtractor, JointLossTerms,
};
use crate::nets::{AdjustNet, DecomNet, EnhanceNet, NetError};
use crate::tensor::{adam_step, AdamState, Tensor, TensorError};
use crate::wls::{frequency_split, FrequencySplit, WlsError, WlsParams};

/// Seed for the frozen content-loss feature extractor; independent of the
/// training seed so content-loss magnitudes are comparable across runs.
const FX_SEED: u64 = 0x5eed_f00d;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Image(#[from] ImageError),
    #[error("file {name:?} present in {present_in} but missing from {missing_from}")]
    Unpaired {
        name: String,
        present_in: String,
        missing_from: String,
    },
    #[error("pair {name:?}: low image is {low_h}x{low_w} but high image is {high_h}x{high_w}")]
    DimensionMismatch {
        name: String,
        low_h: usize,
        low_w: usize,
        high_h: usize,
        high_w: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("pair {name:?}: {patch}x{patch} patch does not fit a {h}x{w} image")]
    PatchTooLarge {
        name: String,
        patch: usize,
        h: usize,
        w: usize,
    },
    #[error("frequency split failed: {0}")]
    Wls(#[from] WlsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at step {step}: {breakdown}")]
    NanLoss { step: usize, breakdown: String },
    #[error("metric failure: {0}")]
    Iqa(#[from] IqaError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// dataset

#[derive(Debug, Clone)]
pub struct Pair {
    pub name: String,
    pub low_path: PathBuf,
    pub high_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub pairs: Vec<Pair>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn png_names(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Pair `<low_dir>/*.png` with `<high_dir>/*.png` by identical filename and
/// verify every pair decodes to equal dimensions.
pub fn ingest(low_dir: &Path, high_dir: &Path) -> Result<PairedDataset, PipelineError> {
    let low_names = png_names(low_dir)?;
    let high_names = png_names(high_dir)?;
    for n in &low_names {
        if !high_names.contains(n) {
            return Err(PipelineError::Unpaired {
                name: n.clone(),
                present_in: low_dir.display().to_string(),
                missing_from: high_dir.display().to_string(),
            });
        }
    }
    for n in &high_names {
        if !low_names.contains(n) {
            return Err(PipelineError::Unpaired {
                name: n.clone(),
                present_in: high_dir.display().to_string(),
                missing_from: low_dir.display().to_string(),
            });
        }
    }
    let mut pairs = Vec::with_capacity(low_names.len());
    for name in low_names {
        let low_path = low_dir.join(&name);
        let high_path = high_dir.join(&name);
        let low = load_png(&low_path)?;
        let high = load_png(&high_path)?;
        if low.height != high.height || low.width != high.width {
            return Err(PipelineError::DimensionMismatch {
                name,
                low_h: low.height,
                low_w: low.width,
                high_h: high.height,
                high_w: high.width,
            });
        }
        pairs.push(Pair {
            name,
            low_path,
            high_path,
        });
    }
    Ok(PairedDataset { pairs })
}

// ---------------------------------------------------------------------------
// WLS split cache

fn cache_key(name: &str, params: &WlsParams) -> String {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    name.hash(&mut h);
    params.lambda.to_bits().hash(&mut h);
    params.alpha.to_bits().hash(&mut h);
    params.eps.to_bits().hash(&mut h);
    params.per_channel.hash(&mut h);
    format!("{:016x}.wls", h.finish())
}

fn write_split_cache(path: &Path, low: &Image) -> Result<(), PipelineError> {
    let mut buf = Vec::with_capacity(16 + low.data.len() * 8);
    buf.extend_from_slice(b"WLSC");
    for v in [low.height as u32, low.width as u32, low.channels as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &low.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(io_err(path))
}

fn read_split_cache(path: &Path, expect: &Image) -> Option<Image> {
    let buf = std::fs::read(path).ok()?;
    if buf.len() < 16 || &buf[..4] != b"WLSC" {
        return None;
    }
    let dim = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(4), dim(8), dim(12));
    if (h, w, c) != (expect.height, expect.width, expect.channels)
        || buf.len() != 16 + h * w * c * 8
    {
        return None;
    }
    let data = buf[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Some(Image::new(h, w, c, data))
}

/// Frequency split with an optional on-disk cache keyed by (name, params).
/// The cached base layer is stored at full precision, so cached and
/// uncached runs are bit-identical.
pub fn split_cached(
    img: &Image,
    params: &WlsParams,
    cache_dir: Option<&Path>,
    name: &str,
) -> Result<FrequencySplit, PipelineError> {
    let cache_path = cache_dir.map(|d| d.join(cache_key(name, params)));
    if let Some(p) = &cache_path {
        if let Some(low) = read_split_cache(p, img) {
            let high = Image::new(
                img.height,
                img.width,
                img.channels,
                img.data.iter().zip(&low.data).map(|(i, l)| i - l).collect(),
            );
            return Ok(FrequencySplit {
                low_freq: low,
                high_freq: high,
                params: *params,
            });
        }
    }
    let split = frequency_split(img, params)?;
    if let Some(p) = &cache_path {
        std::fs::create_dir_all(p.parent().unwrap()).map_err(io_err(p))?;
        write_split_cache(p, &split.low_freq)?;
    }
    Ok(split)
}

// ---------------------------------------------------------------------------
// training

struct LoadedPair {
    name: String,
    low: Image,
    high: Image,
    low_split: FrequencySplit,
    high_split: FrequencySplit,
}

/// Decode every pair and compute its full-image frequency split up front.
/// Random crops are then taken from the split layers, so augmentation never
/// re-runs the solver.
fn load_pairs(ds: &PairedDataset, cfg: &Config) -> Result<Vec<LoadedPair>, PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let cache = if cfg.train.wls_cache_dir.is_empty() {
        None
    } else {
        Some(PathBuf::from(&cfg.train.wls_cache_dir))
    };
    let mut out = Vec::with_capacity(ds.len());
    for pair in &ds.pairs {
        let low = load_png(&pair.low_path)?;
        let high = load_png(&pair.high_path)?;
        let low_split = split_cached(
            &low,
            &cfg.wls,
            cache.as_deref(),
            &format!("{}.low", pair.name),
        )?;
        let high_split = split_cached(
            &high,
            &cfg.wls,
            cache.as_deref(),
            &format!("{}.high", pair.name),
        )?;
        out.push(LoadedPair {
            name: pair.name.clone(),
            low,
            high,
            low_split,
            high_split,
        });
    }
    Ok(out)
}

/// One augmented training view of a pair: identically positioned crops of
/// the images and their split layers, optionally mirrored.
struct Sample {
    low: Image,
    high: Image,
    low_lf: Image,
    low_hf: Image,
    high_lf: Image,
    high_hf: Image,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn draw_sample(
    pairs: &[LoadedPair],
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sample, PipelineError> {
    let p = &pairs[rng.gen_range(0..pairs.len())];
    let (h, w) = (p.low.height, p.low.width);
    if h < patch || w < patch {
        return Err(PipelineError::PatchTooLarge {
            name: p.name.clone(),
            patch,
            h,
            w,
        });
    }
    let y0 = rng.gen_range(0..=h - patch);
    let x0 = rng.gen_range(0..=w - patch);
    let flip = rng.gen_bool(0.5);
    let view = |img: &Image| {
        let c = img.crop(y0, x0, patch, patch);
        if flip {
            c.flip_horizontal()
        } else {
            c
        }
    };
    Ok(Sample {
        low: view(&p.low),
        high: view(&p.high),
        low_lf: view(&p.low_split.low_freq),
        low_hf: view(&p.low_split.high_freq),
        high_lf: view(&p.high_split.low_freq),
        high_hf: view(&p.high_split.high_freq),
    })
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub initial_total: f64,
    pub final_total: f64,
    pub steps_run: usize,
}

fn save_named(
    params: &[(String, Tensor<f32>)],
    opt: Option<(&AdamState<f32>, &[(String, Tensor<f32>)])>,
    path: &Path,
) -> Result<(), PipelineError> {
    let mut ckpt = Checkpoint::new();
    for (name, t) in params {
        ckpt.insert(name, t);
    }
    if let Some((state, order)) = opt {
        let (m, v) = state.moments();
        for (i, (name, t)) in order.iter().enumerate() {
            if i < m.len() {
                ckpt.insert_raw(&format!("opt.m.{name}"), t.shape().to_vec(), m[i].clone());
                ckpt.insert_raw(&format!("opt.v.{name}"), t.shape().to_vec(), v[i].clone());
            }
        }
        ckpt.insert_raw("opt.step", vec![1], vec![state.step_count as f32]);
    }
    ckpt.save(path)?;
    Ok(())
}

fn load_named(params: &[(String, Tensor<f32>)], ckpt: &Checkpoint) -> Result<(), PipelineError> {
    for (name, t) in params {
        ckpt.load_into(name, t)?;
    }
    Ok(())
}

/// Restore parameters + optimizer state written by `save_named`; returns the
/// completed step count.
fn load_resume(
    params: &[(String, Tensor<f32>)],
    state: &mut AdamState<f32>,
    path: &Path,
) -> Result<usize, PipelineError> {
    let ckpt = Checkpoint::load(path)?;
    load_named(params, &ckpt)?;
    if let Some((_, step)) = ckpt.get_raw("opt.step") {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, _) in params {
            let (_, md) = ckpt.get_raw(&format!("opt.m.{name}")).ok_or_else(|| {
                CheckpointError::MissingTensor {
                    name: format!("opt.m.{name}"),
                }
            })?;
            let (_, vd) = ckpt.get_raw(&format!("opt.v.{name}")).ok_or_else(|| {
                CheckpointError::MissingTensor {
                    name: format!("opt.v.{name}"),
                }
            })?;
            m.push(md.to_vec());
            v.push(vd.to_vec());
        }
        let step = step[0] as u64;
        state.restore(m, v, step);
        Ok(step as usize)
    } else {
        Ok(0)
    }
}

fn check_finite(
    step: usize,
    terms: &[(&str, f64)],
    total: f64,
) -> Result<(), PipelineError> {
    if total.is_finite() {
        return Ok(());
    }
    let mut breakdown = String::new();
    for (name, v) in terms {
        let _ = write!(breakdown, "{name}={v:.6e} ");
    }
    let _ = write!(breakdown, "total={total:.6e}");
    Err(PipelineError::NanLoss { step, breakdown })
}

fn log_row(file: &mut std::fs::File, path: &Path, step: usize, values: &[f64]) -> Result<(), PipelineError> {
    let mut line = step.to_string();
    for v in values {
        let _ = write!(line, ",{v:.6e}");
    }
    writeln!(file, "{line}").map_err(io_err(path))
}

struct TrainPlan {
    steps_per_epoch: usize,
    total_steps: usize,
}

fn plan(cfg: &Config, n_pairs: usize) -> TrainPlan {
    let steps_per_epoch = (n_pairs / cfg.train.batch_size.max(1)).max(1);
    let mut total_steps = steps_per_epoch * cfg.train.epochs;
    if cfg.train.max_steps > 0 {
        total_steps = total_steps.min(cfg.train.max_steps);
    }
    TrainPlan {
        steps_per_epoch,
        total_steps,
    }
}

const STAGE1_TERMS: [&str; 5] = [
    "l_r",
    "l_recon_low",
    "l_recon_high",
    "l_recon_low_mutual",
    "l_recon_high_mutual",
];

fn decom_term_values(t: &DecomLossTerms<f32>) -> Vec<f64> {
    [
        &t.l_r,
        &t.l_recon_low,
        &t.l_recon_high,
        &t.l_recon_low_mutual,
        &t.l_recon_high_mutual,
        &t.total,
    ]
    .iter()
    .map(|x| x.item() as f64)
    .collect()
}

/// Stage 1: train the decomposition net on paired crops. Writes
/// `train_log.csv` (one row per step, every loss term) and a checkpoint per
/// epoch plus the final `decom.ckpt` into `out_dir`.
pub fn train_stage1(
    ds: &PairedDataset,
    cfg: &Config,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let pairs = load_pairs(ds, cfg)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let net = DecomNet::<f32>::new(&cfg.net, true, &mut init_rng);
    let named = net.named_params();
    let params: Vec<Tensor<f32>> = named.iter().map(|(_, t)| t.clone()).collect();
    let mut state = AdamState::with_betas(cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.epsilon);
    let done = match resume {
        Some(p) => load_resume(&named, &mut state, p)?,
        None => 0,
    };

    let log_path = out_dir.join("train_log.csv");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(done > 0)
        .write(true)
        .truncate(done == 0)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    if done == 0 {
        writeln!(log, "step,{},total", STAGE1_TERMS.join(",")).map_err(io_err(&log_path))?;
    }

    let plan = plan(cfg, pairs.len());
    let mut initial_total = f64::NAN;
    let mut final_total = f64::NAN;
    for step in done..plan.total_steps {
        let epoch = step / plan.steps_per_epoch;
        state.lr = (cfg.adam.lr * cfg.train.lr_decay.powi(epoch as i32)) as f32;
        let mut rng = step_rng(cfg.train.seed, step);

        let mut batch_total: Option<Tensor<f32>> = None;
        let mut term_sums = vec![0.0; STAGE1_TERMS.len() + 1];
        for _ in 0..cfg.train.batch_size.max(1) {
            let s = draw_sample(&pairs, cfg.train.patch_size, &mut rng)?;
            let (low_img, high_img) = if cfg.train.decom_full_input {
                (&s.low, &s.high)
            } else {
                (&s.low_lf, &s.high_lf)
            };
            let low_t = low_img.to_tensor::<f32>();
            let high_t = high_img.to_tensor::<f32>();
            let d_low = net.forward(&low_t)?;
            let d_high = net.forward(&high_t)?;
            let terms = decom_loss(
                ExposureBundle {
                    image: &low_t,
                    reflectance: &d_low.reflectance,
                    illumination: &d_low.illumination,
                },
                ExposureBundle {
                    image: &high_t,
                    reflectance: &d_high.reflectance,
                    illumination: &d_high.illumination,
                },
            )?;
            for (acc, v) in term_sums.iter_mut().zip(decom_term_values(&terms)) {
                *acc += v;
            }
            batch_total = Some(match batch_total {
                Some(t) => crate::tensor::ops::add(&t, &terms.total)?,
                None => terms.total,
            });
        }
        let scale = 1.0 / cfg.train.batch_size.max(1) as f64;
        let loss = crate::tensor::ops::scale(&batch_total.unwrap(), scale);
        for v in term_sums.iter_mut() {
            *v *= scale;
        }
        let total = *term_sums.last().unwrap();
        let labeled: Vec<(&str, f64)> = STAGE1_TERMS.iter().copied().zip(term_sums.iter().copied()).collect();
        check_finite(step, &labeled, total)?;
        if step == done {
            initial_total = total;
        }
        final_total = total;

        loss.backward()?;
        adam_step(&params, &mut state)?;
        for p in &params {
            p.zero_grad();
        }
        log_row(&mut log, &log_path, step, &term_sums)?;

        let end_of_epoch = (step + 1) % plan.steps_per_epoch == 0;
        if end_of_epoch || step + 1 == plan.total_steps {
            let path = out_dir.join(format!("decom_epoch_{:03}.ckpt", epoch));
            save_named(&named, Some((&state, &named)), &path)?;
        }
    }
    let final_path = out_dir.join("decom.ckpt");
    save_named(&named, Some((&state, &named)), &final_path)?;
    Ok(TrainOutcome {
        checkpoint: final_path,
        log: log_path,
        initial_total,
        final_total,
        steps_run: plan.total_steps - done,
    })
}

const STAGE2_TERMS: [&str; 6] = ["l_hf", "l_en_r", "l_en_l", "l_enhance", "l_colour", "l_content"];

fn joint_term_values(t: &JointLossTerms<f32>) -> Vec<f64> {
    [&t.l_hf, &t.l_en_r, &t.l_en_l, &t.l_enhance, &t.l_colour, &t.l_content, &t.total]
        .iter()
        .map(|x| x.item() as f64)
        .collect()
}

/// Stage 2: freeze the decomposition net from `stage1_ckpt` and jointly
/// train the enhancement and adjustment nets. Targets come from the frozen
/// decomposition of the normal-light member of each pair.
pub fn train_stage2(
    ds: &PairedDataset,
    cfg: &Config,
    stage1_ckpt: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let pairs = load_pairs(ds, cfg)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let decom = DecomNet::<f32>::new(&cfg.net, false, &mut init_rng);
    load_named(&decom.named_params(), &Checkpoint::load(stage1_ckpt)?)?;
    let enhance = EnhanceNet::<f32>::new(&cfg.net, true, &mut init_rng);
    let adjust = AdjustNet::<f32>::new(&cfg.net, true, &mut init_rng);
    let fx = FeatureExtractor::<f32>::new(
        cfg.loss.content_taps.clone(),
        &mut ChaCha8Rng::seed_from_u64(FX_SEED),
    );

    let mut named = enhance.named_params();
    named.extend(adjust.named_params());
    let params: Vec<Tensor<f32>> = named.iter().map(|(_, t)| t.clone()).collect();
    let mut state = AdamState::with_betas(cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.epsilon);
    let done = match resume {
        Some(p) => load_resume(&named, &mut state, p)?,
        None => 0,
    };

    let log_path = out_dir.join("train_log.csv");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(done > 0)
        .write(true)
        .truncate(done == 0)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    if done == 0 {
        writeln!(log, "step,{},total", STAGE2_TERMS.join(",")).map_err(io_err(&log_path))?;
    }

    let plan = plan(cfg, pairs.len());
    let mut initial_total = f64::NAN;
    let mut final_total = f64::NAN;
    for step in done..plan.total_steps {
        let epoch = step / plan.steps_per_epoch;
        state.lr = (cfg.adam.lr * cfg.train.lr_decay.powi(epoch as i32)) as f32;
        let mut rng = step_rng(cfg.train.seed, step);

        let mut batch_total: Option<Tensor<f32>> = None;
        let mut term_sums = vec![0.0; STAGE2_TERMS.len() + 1];
        for _ in 0..cfg.train.batch_size.max(1) {
            let s = draw_sample(&pairs, cfg.train.patch_size, &mut rng)?;
            let (low_in, high_in) = if cfg.train.decom_full_input {
                (&s.low, &s.high)
            } else {
                (&s.low_lf, &s.high_lf)
            };
            let d_low = decom.forward(&low_in.to_tensor::<f32>())?;
            let d_high = decom.forward(&high_in.to_tensor::<f32>())?.detach();
            let hf_low = s.low_hf.to_tensor::<f32>();
            let hf_high = s.high_hf.to_tensor::<f32>();
            let enhanced = enhance.forward(&hf_low, &d_low)?;
            let adjusted = adjust.forward(&enhanced)?;
            let branch = enhance_loss(
                &enhanced,
                &EnhanceTargets {
                    hf_high: &hf_high,
                    reflectance_high: &d_high.reflectance,
                    illumination_high: &d_high.illumination,
                },
            )?;
            let high_t = s.high.to_tensor::<f32>();
            let terms = joint_loss(&adjusted, &high_t, branch, &fx)?;
            for (acc, v) in term_sums.iter_mut().zip(joint_term_values(&terms)) {
                *acc += v;
            }
            batch_total = Some(match batch_total {
                Some(t) => crate::tensor::ops::add(&t, &terms.total)?,
                None => terms.total,
            });
        }
        let scale = 1.0 / cfg.train.batch_size.max(1) as f64;
        let loss = crate::tensor::ops::scale(&batch_total.unwrap(), scale);
        for v in term_sums.iter_mut() {
            *v *= scale;
        }
        let total = *term_sums.last().unwrap();
        let labeled: Vec<(&str, f64)> = STAGE2_TERMS.iter().copied().zip(term_sums.iter().copied()).collect();
        check_finite(step, &labeled, total)?;
        if step == done {
            initial_total = total;
        }
        final_total = total;

        loss.backward()?;
        adam_step(&params, &mut state)?;
        for p in &params {
            p.zero_grad();
        }
        log_row(&mut log, &log_path, step, &term_sums)?;

        let end_of_epoch = (step + 1) % plan.steps_per_epoch == 0;
        if end_of_epoch || step + 1 == plan.total_steps {
            let path = out_dir.join(format!("joint_epoch_{:03}.ckpt", epoch));
            save_named(&named, Some((&state, &named)), &path)?;
        }
    }
    let final_path = out_dir.join("joint.ckpt");
    save_named(&named, Some((&state, &named)), &final_path)?;
    Ok(TrainOutcome {
        checkpoint: final_path,
        log: log_path,
        initial_total,
        final_total,
        steps_run: plan.total_steps - done,
    })
}

// ---------------------------------------------------------------------------
// inference

pub struct Models {
    pub decom: DecomNet<f32>,
    pub enhance: EnhanceNet<f32>,
    pub adjust: AdjustNet<f32>,
}

impl Models {
    /// Build untrained nets from the config (weights are overwritten by
    /// checkpoint loads, seed only affects discarded initial values).
    pub fn fresh(cfg: &Config) -> Models {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Models {
            decom: DecomNet::new(&cfg.net, false, &mut rng),
            enhance: EnhanceNet::new(&cfg.net, false, &mut rng),
            adjust: AdjustNet::new(&cfg.net, false, &mut rng),
        }
    }

    /// Load `decom.ckpt` and `joint.ckpt` from a checkpoint directory.
    pub fn load(dir: &Path, cfg: &Config) -> Result<Models, PipelineError> {
        let models = Models::fresh(cfg);
        load_named(&models.decom.named_params(), &Checkpoint::load(&dir.join("decom.ckpt"))?)?;
        let joint = Checkpoint::load(&dir.join("joint.ckpt"))?;
        load_named(&models.enhance.named_params(), &joint)?;
        load_named(&models.adjust.named_params(), &joint)?;
        Ok(models)
    }
}

pub struct EnhanceResult {
    pub final_image: Image,
    /// Inspection layers in pipeline order; signed high-frequency layers are
    /// shifted by +0.5 so they survive a PNG dump.
    pub intermediates: Vec<(&'static str, Image)>,
}

/// Full-image forward chain. The input is replicate-padded up to the
/// network's divisibility requirement and the output cropped back, so
/// output dimensions always equal input dimensions.
pub fn enhance_image(
    img: &Image,
    models: &Models,
    cfg: &Config,
) -> Result<EnhanceResult, PipelineError> {
    let div = cfg.net.divisibility();
    let padded = img.pad_to_multiple(div);
    let split = frequency_split(&padded, &cfg.wls)?;
    let decom_in = if cfg.train.decom_full_input {
        &padded
    } else {
        &split.low_freq
    };
    let d = models.decom.forward(&decom_in.to_tensor::<f32>())?;
    let hf = split.high_freq.to_tensor::<f32>();
    let enhanced = models.enhance.forward(&hf, &d)?;
    let adjusted = models.adjust.forward(&enhanced)?;

    let crop = |t: &Tensor<f32>| {
        Image::from_tensor(t).crop(0, 0, img.height, img.width)
    };
    let shift_half = |i: Image| i.map(|v| v + 0.5);
    let final_image = crop(&adjusted).clamp01();
    let intermediates = vec![
        ("lf", split.low_freq.crop(0, 0, img.height, img.width)),
        ("hf", shift_half(split.high_freq.crop(0, 0, img.height, img.width))),
        ("reflectance", crop(&d.reflectance)),
        ("illumination", crop(&d.illumination)),
        ("hf_enhanced", shift_half(crop(&enhanced.hf_enhanced))),
        ("reflectance_enhanced", crop(&enhanced.reflectance_enhanced)),
        ("illumination_enhanced", crop(&enhanced.illumination_enhanced)),
        ("adjusted", final_image.clone()),
    ];
    Ok(EnhanceResult {
        final_image,
        intermediates,
    })
}

// ---------------------------------------------------------------------------
// evaluation

pub struct EvalOutcome {
    /// Per-pair reports in dataset order; failures keep their message.
    pub rows: Vec<(String, Result<MetricReport, String>)>,
    /// Arithmetic mean per metric over finite values only.
    pub mean: MetricReport,
    /// Per metric, how many non-finite values the mean excludes.
    pub excluded: HashMap<String, usize>,
}

impl EvalOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = METRIC_ORDER
            .iter()
            .copied()
            .filter(|n| self.mean.get(n).is_some() || self.excluded.contains_key(*n))
            .collect();
        let mut out = format!("name,{}\n", names.join(","));
        for (name, row) in &self.rows {
            match row {
                Ok(report) => {
                    let vals: Vec<String> = names
                        .iter()
                        .map(|n| match report.get(n) {
                            Some(v) if v.is_finite() => format!("{v:.3}"),
                            Some(_) => "inf".to_string(),
                            None => String::new(),
                        })
                        .collect();
                    let _ = writeln!(out, "{name},{}", vals.join(","));
                }
                Err(e) => {
                    let _ = writeln!(out, "{name},error: {}", e.replace(',', ";"));
                }
            }
        }
        let mean_vals: Vec<String> = names
            .iter()
            .map(|n| match self.mean.get(n) {
                Some(v) => format!("{v:.3}"),
                None => String::new(),
            })
            .collect();
        let _ = writeln!(out, "mean,{}", mean_vals.join(","));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = self.to_csv().replace(',', "  ");
        for (metric, n) in &self.excluded {
            let _ = writeln!(
                out,
                "note: {metric} mean excludes {n} infinite value(s)"
            );
        }
        let failures = self.failures();
        if failures > 0 {
            let _ = writeln!(out, "note: partial results, {failures} image(s) failed");
        }
        out
    }
}

/// Enhance every low image and score it against its normal-light reference.
/// Per-image failures are recorded with the filename and evaluation
/// continues.
pub fn evaluate(
    ds: &PairedDataset,
    models: &Models,
    cfg: &Config,
    niqe_model: Option<&NiqeModel>,
) -> Result<EvalOutcome, PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(ds.len());
    for pair in &ds.pairs {
        let row = (|| -> Result<MetricReport, PipelineError> {
            let low = load_png(&pair.low_path)?;
            let high = load_png(&pair.high_path)?;
            let out = enhance_image(&low, models, cfg)?;
            let mut report = MetricReport::full_reference(&out.final_image, &high)?;
            if let Some(model) = niqe_model {
                report.set("niqe", iqa::niqe(&out.final_image, model)?);
            }
            Ok(report)
        })();
        rows.push((
            pair.name.clone(),
            row.map_err(|e| format!("{}: {e}", pair.name)),
        ));
    }

    let (mean, excluded) = summarize(&rows);
    Ok(EvalOutcome {
        rows,
        mean,
        excluded,
    })
}

/// Per-metric mean over finite values, plus a count of excluded non-finite
/// ones.
pub fn summarize(
    rows: &[(String, Result<MetricReport, String>)],
) -> (MetricReport, HashMap<String, usize>) {
    let mut mean = MetricReport::new();
    let mut excluded = HashMap::new();
    for metric in METRIC_ORDER {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut skipped = 0usize;
        for (_, row) in rows {
            if let Ok(report) = row {
                match report.get(metric) {
                    Some(v) if v.is_finite() => {
                        sum += v;
                        count += 1;
                    }
                    Some(_) => skipped += 1,
                    None => {}
                }
            }
        }
        if count > 0 {
            mean.set(metric, sum / count as f64);
        }
        if skipped > 0 {
            excluded.insert(metric.to_string(), skipped);
        }
    }
    (mean, excluded)
}
