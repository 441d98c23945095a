//! Optimization loop: Adam with cosine learning-rate decay, deep-supervised
//! loss, per-scene data parallelism with a fixed reduction order, validation
//! by Polis distance, best-checkpoint retention, and MC-dropout prediction.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::{Error, Result};
use crate::geometry::{resample, Polyline};
use crate::losses::{contour_loss, deep_supervision_loss};
use crate::metrics::polis;
use crate::model::{
    forward, init_params, predict, save_checkpoint, Mode, ModelParams, SnakeConfig,
};
use crate::par::maybe_par_map;
use crate::tensor::{NdArray, Tape};

/// Optimizer and schedule hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a numbered checkpoint every this many epochs (0 = only the best).
    pub checkpoint_every: usize,
    /// Report Polis distances halved (averaged over both directions).
    pub polis_halved: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr_init: 1e-3,
            lr_final: 4e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 0,
            polis_halved: false,
        }
    }
}

impl TrainConfig {
    // The negated comparison is NaN-strict: a NaN learning rate must also fail.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr_final < self.lr_init) {
            return Err(Error::invalid(format!(
                "lr_final ({}) must be below lr_init ({})",
                self.lr_final, self.lr_init
            )));
        }
        if self.lr_final <= 0.0 || !self.lr_init.is_finite() {
            return Err(Error::invalid("learning rates must be positive and finite"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0,1), got {b}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::invalid("eps must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Cosine decay from `lr_init` at step 0 to `lr_final` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_final: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond schedule end {total_steps}"
        )));
    }
    let phase = PI * step as f64 / total_steps as f64;
    Ok(lr_final + 0.5 * (lr_init - lr_final) * (1.0 + phase.cos()))
}

/// Adam moment buffers, aligned with a parameter set by path.
#[derive(Clone, Debug)]
pub struct OptimState {
    m: BTreeMap<String, NdArray>,
    v: BTreeMap<String, NdArray>,
    step: u64,
}

impl OptimState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, NdArray> = params
            .iter()
            .map(|(k, t)| (k.clone(), NdArray::zeros(t.shape())))
            .collect();
        OptimState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, NdArray>,
    state: &mut OptimState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (path, g) in grads {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(path.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (path, p) in params.iter_mut() {
        let g = grads
            .get(path)
            .ok_or_else(|| Error::invalid(format!("gradient missing for `{path}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match parameter `{path}` {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state.m.get_mut(path).expect("state mirrors params");
        let v = state.v.get_mut(path).expect("state mirrors params");
        let (md, vd, pd, gd) = (m.data_mut(), v.data_mut(), p.data_mut(), g.data());
        for i in 0..gd.len() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// One per-epoch line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_polis_px: f64,
    pub lr: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_polis_px,lr\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_polis_px, row.lr
        ));
    }
    out
}

/// Result of a training run. `params` is the retained (best-validation)
/// parameter set; `diverged` names the epoch whose loss went non-finite when
/// training stopped early. A `best_epoch` of 0 means no epoch finished and
/// the initial parameters were retained.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_polis: f64,
    pub diverged: Option<usize>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent stream seed for (base, salt, index).
pub(crate) fn mix_seed(base: u64, salt: u64, k: u64) -> u64 {
    splitmix64(splitmix64(base ^ salt.rotate_left(32)).wrapping_add(k))
}

const SALT_INIT: u64 = 0x1;
const SALT_SHUFFLE: u64 = 0x2;
const SALT_SCENE: u64 = 0x3;
const SALT_MC: u64 = 0x4;

fn scene_loss_and_grads(
    scene: &Scene,
    truth_v: &Polyline,
    params: &ModelParams,
    cfg: &SnakeConfig,
    rng_seed: u64,
) -> Result<(f64, BTreeMap<String, NdArray>)> {
    let tape = Tape::new();
    let vars = params.to_vars(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let contours = forward(&tape, &scene.model_input(), &vars, cfg, Mode::Train, &mut rng)?;
    let loss = if cfg.deep_supervision {
        deep_supervision_loss(&tape, &contours, truth_v, &cfg.loss)?
    } else {
        contour_loss(&tape, *contours.last().expect("iterations >= 1"), truth_v, &cfg.loss)?
    };
    let value = tape.value(loss).scalar_value();
    if value.is_finite() {
        tape.backward(loss)?;
    }
    let grads = vars
        .iter()
        .map(|(k, &v)| (k.clone(), tape.grad(v)))
        .collect();
    Ok((value, grads))
}

/// Mean test-time Polis distance (pixels) of eval-mode predictions against
/// each scene's stored truth.
pub fn mean_eval_polis_px(
    scenes: &[Scene],
    params: &ModelParams,
    cfg: &SnakeConfig,
    halved: bool,
) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::invalid("no scenes to evaluate"));
    }
    let per: Vec<Result<f64>> = maybe_par_map(scenes.len(), |i| {
        let scene = &scenes[i];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let contours = predict(&scene.model_input(), params, cfg, Mode::Eval, &mut rng)?;
        let pred = contours.last().expect("iterations >= 1");
        let (h, w) = (scene.image.shape()[0], scene.image.shape()[1]);
        Ok(polis(
            &pred.to_pixel_coords(h, w),
            &scene.truth.to_pixel_coords(h, w),
            halved,
        ))
    });
    let mut sum = 0.0;
    for r in per {
        sum += r?;
    }
    Ok(sum / scenes.len() as f64)
}

/// Full training run over pre-split scene lists. Scenes' ground truth is
/// resampled to the configured vertex count (top-to-bottom) once up front.
/// With an empty validation list, the last epoch's parameters are retained
/// and `val_polis_px` is recorded as NaN.
pub fn train(
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    snake_cfg: &SnakeConfig,
    train_cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    snake_cfg.validate()?;
    train_cfg.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let truths: Vec<Polyline> = train_scenes
        .iter()
        .map(|s| resample(&s.truth.oriented_top_to_bottom(), snake_cfg.vertices))
        .collect::<Result<_>>()?;

    let mut params = init_params(
        snake_cfg,
        &mut ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, SALT_INIT, 0)),
    )?;
    let mut state = OptimState::new(&params);

    let n = train_scenes.len();
    let steps_per_epoch = n.div_ceil(train_cfg.batch_size);
    let total_steps = train_cfg.epochs * steps_per_epoch;

    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut diverged = None;
    let mut global_step = 0usize;

    'epochs: for epoch in 1..=train_cfg.epochs {
        let epoch_lr = cosine_lr(global_step, total_steps, train_cfg.lr_init, train_cfg.lr_final)?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, SALT_SHUFFLE, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let lr = cosine_lr(global_step, total_steps, train_cfg.lr_init, train_cfg.lr_final)?;
            let base_slot = (batch_idx * train_cfg.batch_size) as u64;
            let results: Vec<Result<(f64, BTreeMap<String, NdArray>)>> =
                maybe_par_map(batch.len(), |j| {
                    let idx = batch[j];
                    let seed = mix_seed(
                        train_cfg.seed,
                        SALT_SCENE,
                        (epoch as u64) << 32 | (base_slot + j as u64),
                    );
                    scene_loss_and_grads(
                        &train_scenes[idx],
                        &truths[idx],
                        &params,
                        snake_cfg,
                        seed,
                    )
                });

            let mut batch_loss = 0.0;
            let mut grad_sum: BTreeMap<String, NdArray> = BTreeMap::new();
            for r in results {
                let (value, grads) = r?;
                batch_loss += value;
                for (path, g) in grads {
                    match grad_sum.get_mut(&path) {
                        Some(acc) => {
                            let ad = acc.data_mut();
                            for (a, b) in ad.iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                        None => {
                            grad_sum.insert(path, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                diverged = Some(epoch);
                break 'epochs;
            }
            for g in grad_sum.values_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            adam_step(&mut params, &grad_sum, &mut state, lr, train_cfg)?;
            global_step += 1;
            loss_sum += batch_loss * batch.len() as f64;
        }

        let train_loss = loss_sum / n as f64;
        let val_polis_px = if val_scenes.is_empty() {
            f64::NAN
        } else {
            mean_eval_polis_px(val_scenes, &params, snake_cfg, train_cfg.polis_halved)?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_polis_px,
            lr: epoch_lr,
        });

        let improved = if val_scenes.is_empty() {
            true
        } else {
            val_polis_px < best_val
        };
        if improved {
            best = params.clone();
            best_epoch = epoch;
            best_val = val_polis_px;
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&best, dir.join("best.ckpt"))?;
            }
        }
        if train_cfg.checkpoint_every > 0
            && epoch % train_cfg.checkpoint_every == 0
        {
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&params, dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
    }

    Ok(TrainOutput {
        params: best,
        log,
        best_epoch,
        best_val_polis: best_val,
        diverged,
    })
}

/// Deterministic prediction plus MC-dropout samples and their mean Polis
/// distance (pixels) from the deterministic contour.
#[derive(Clone, Debug)]
pub struct McPrediction {
    pub deterministic: Polyline,
    pub samples: Vec<Polyline>,
    pub uncertainty: f64,
}

pub fn mc_predict(
    image: &NdArray,
    params: &ModelParams,
    cfg: &SnakeConfig,
    n_samples: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<McPrediction> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one MC sample"));
    }
    let mut mc_cfg = cfg.clone();
    mc_cfg.dropout_rate = dropout_rate;
    mc_cfg.validate()?;
    if image.rank() != 3 {
        return Err(Error::shape(format!(
            "expected [1,H,W] image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let deterministic = predict(image, params, cfg, Mode::Eval, &mut rng)?
        .pop()
        .expect("iterations >= 1");

    let samples: Vec<Polyline> = maybe_par_map(n_samples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_MC, k as u64));
        predict(image, params, &mc_cfg, Mode::Mc, &mut rng)
            .map(|mut c| c.pop().expect("iterations >= 1"))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let det_px = deterministic.to_pixel_coords(h, w);
    let uncertainty = samples
        .iter()
        .map(|s| polis(&s.to_pixel_coords(h, w), &det_px, false))
        .sum::<f64>()
        / n_samples as f64;

    Ok(McPrediction {
        deterministic,
        samples,
        uncertainty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenConfig};
    use crate::losses::{LossConfig, LossKind};

    fn tiny_snake() -> SnakeConfig {
        SnakeConfig {
            vertices: 8,
            iterations: 2,
            dilations: vec![1, 2],
            head_width: 6,
            backbone_channels: vec![4, 8],
            feature_stride: 4,
            dropout_rate: 0.1,
            loss: LossConfig {
                kind: LossKind::SoftDtw,
                gamma: 0.01,
            },
            ..SnakeConfig::default()
        }
    }

    fn tiny_scenes(count: usize, size: usize) -> Vec<Scene> {
        let cfg = GenConfig {
            size,
            count,
            seed: 11,
            ..GenConfig::default()
        };
        generate_dataset(&cfg).unwrap()
    }

    #[test]
    fn cosine_lr_endpoints_and_midpoint() {
        assert!((cosine_lr(0, 100, 1e-3, 4e-5).unwrap() - 1e-3).abs() < 1e-15);
        assert!((cosine_lr(100, 100, 1e-3, 4e-5).unwrap() - 4e-5).abs() < 1e-15);
        assert!((cosine_lr(50, 100, 1e-3, 4e-5).unwrap() - 5.2e-4).abs() < 1e-12);
        assert!(cosine_lr(1, 0, 1e-3, 4e-5).is_err());
        assert!(cosine_lr(101, 100, 1e-3, 4e-5).is_err());
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let cfg = TrainConfig::default();
        let mut params = ModelParams::new();
        params.insert("w", NdArray::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let before = params.clone();
        let mut state = OptimState::new(&params);
        let grads: BTreeMap<String, NdArray> =
            [("w".to_string(), NdArray::zeros(&[2]))].into_iter().collect();
        adam_step(&mut params, &grads, &mut state, 1e-3, &cfg).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let cfg = TrainConfig::default();
        let mut params = ModelParams::new();
        params.insert("w", NdArray::from_vec(&[1], vec![0.5]).unwrap());
        let mut state = OptimState::new(&params);
        let grads: BTreeMap<String, NdArray> =
            [("w".to_string(), NdArray::from_vec(&[1], vec![1.0]).unwrap())]
                .into_iter()
                .collect();
        adam_step(&mut params, &grads, &mut state, 1e-3, &cfg).unwrap();
        let delta = 0.5 - params.get("w").unwrap().data()[0];
        assert!((delta - 1e-3).abs() < 1e-10, "delta = {delta}");
    }

    #[test]
    fn adam_rejects_nan_grad_naming_path() {
        let cfg = TrainConfig::default();
        let mut params = ModelParams::new();
        params.insert("layer.weight", NdArray::zeros(&[1]));
        let mut state = OptimState::new(&params);
        let grads: BTreeMap<String, NdArray> = [(
            "layer.weight".to_string(),
            NdArray::from_vec(&[1], vec![f64::NAN]).unwrap(),
        )]
        .into_iter()
        .collect();
        match adam_step(&mut params, &grads, &mut state, 1e-3, &cfg) {
            Err(Error::NonFiniteGradient(path)) => assert_eq!(path, "layer.weight"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut params = ModelParams::new();
            params.insert("w", NdArray::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
            let mut state = OptimState::new(&params);
            for i in 0..10 {
                let grads: BTreeMap<String, NdArray> = [(
                    "w".to_string(),
                    NdArray::from_vec(&[3], vec![0.1 * i as f64, -0.2, 0.05]).unwrap(),
                )]
                .into_iter()
                .collect();
                adam_step(&mut params, &grads, &mut state, 1e-3, &cfg).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_epoch_smoke() {
        let scenes = tiny_scenes(2, 32);
        let cfg = tiny_snake();
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let out = train(&scenes, &scenes, &cfg, &tcfg, None).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(out.log[0].train_loss.is_finite() && out.log[0].train_loss > 0.0);
        assert!(out.log[0].val_polis_px.is_finite());
        assert_eq!(out.best_epoch, 1);
        assert!(out.diverged.is_none());
    }

    #[test]
    fn training_is_deterministic() {
        let scenes = tiny_scenes(3, 32);
        let cfg = tiny_snake();
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&scenes, &scenes, &cfg, &tcfg, None).unwrap();
        let b = train(&scenes, &scenes, &cfg, &tcfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn loss_descends_on_tiny_overfit() {
        let scenes = tiny_scenes(2, 32);
        let cfg = tiny_snake();
        let tcfg = TrainConfig {
            epochs: 8,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let out = train(&scenes, &scenes, &cfg, &tcfg, None).unwrap();
        let first = out.log.first().unwrap().train_loss;
        let last = out.log.last().unwrap().train_loss;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn log_csv_shape() {
        let log = vec![EpochLog {
            epoch: 1,
            train_loss: 0.5,
            val_polis_px: 3.25,
            lr: 1e-3,
        }];
        let csv = log_to_csv(&log);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,val_polis_px,lr"));
        assert_eq!(lines.next(), Some("1,0.5,3.25,0.001"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn checkpoints_written_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = tiny_scenes(2, 32);
        let cfg = tiny_snake();
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            checkpoint_every: 1,
            ..TrainConfig::default()
        };
        let out = train(&scenes, &scenes, &cfg, &tcfg, Some(dir.path())).unwrap();
        let best = crate::model::load_checkpoint(dir.path().join("best.ckpt")).unwrap();
        crate::model::check_shapes(&best, &cfg).unwrap();
        assert_eq!(best, out.params);
        assert!(dir.path().join("epoch_0001.ckpt").exists());
        assert!(dir.path().join("epoch_0002.ckpt").exists());

        // Round trip preserves validation polis exactly.
        let before = mean_eval_polis_px(&scenes, &out.params, &cfg, false).unwrap();
        let after = mean_eval_polis_px(&scenes, &best, &cfg, false).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn mc_predict_contracts() {
        let scenes = tiny_scenes(1, 32);
        let cfg = tiny_snake();
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let img = scenes[0].model_input();

        assert!(mc_predict(&img, &params, &cfg, 0, 0.2, 1).is_err());

        let zero = mc_predict(&img, &params, &cfg, 4, 0.0, 1).unwrap();
        assert_eq!(zero.uncertainty, 0.0);
        for s in &zero.samples {
            assert_eq!(s, &zero.deterministic);
        }

        let a = mc_predict(&img, &params, &cfg, 4, 0.3, 7).unwrap();
        let b = mc_predict(&img, &params, &cfg, 4, 0.3, 7).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!((a.uncertainty - b.uncertainty).abs() == 0.0);
        assert!(a.uncertainty >= 0.0);
    }
}
