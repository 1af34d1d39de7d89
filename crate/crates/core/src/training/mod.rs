//! Mini-batch SGD with momentum, step-decayed learning rate, augmentation,
//! periodic validation and best-checkpoint retention.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array2, Array4, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{Checkpoint, Network};
use crate::preprocess::{augment, AugmentParams, PixelStats};
use crate::{Error, Result};

const EXACT_PERIODS: u64 = 4096;

/// Continuous exponential decay `a0 · r^(g/s)`.
///
/// Whole decay periods are applied by repeated multiplication so that
/// `g = k·s` lands on `a0·r·…·r` with no `powf` rounding. Past
/// `EXACT_PERIODS` periods it falls back to one `powf`.
pub fn lr_at_step(a0: f64, r: f64, s: u64, g: u64) -> f64 {
    let (k, rem) = (g / s, g % s);
    if k > EXACT_PERIODS {
        return a0 * r.powf(g as f64 / s as f64);
    }
    let mut a = a0;
    for _ in 0..k {
        a *= r;
    }
    if rem > 0 {
        a *= r.powf(rem as f64 / s as f64);
    }
    a
}

/// The update read literally as a recursion, `a_g = a_{g-1} · r^(g/s)`,
/// which compounds to `a0 · r^(g(g+1) / 2s)`.
pub fn lr_at_step_recursive(a0: f64, r: f64, s: u64, g: u64) -> f64 {
    let exponent = (g as f64) * (g as f64 + 1.0) / (2.0 * s as f64);
    a0 * r.powf(exponent)
}

/// Which network is being trained; picks batch size and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Cnn,
    Vggnet,
    Engagement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub decay_step: u64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub augment: AugmentParams,
    pub eval_every: u64,
    pub recursive_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.002,
            decay_rate: 0.8,
            decay_step: 500,
            momentum: 0.9,
            batch_size: 28,
            max_steps: 20_000,
            seed: 42,
            augment: AugmentParams::default(),
            eval_every: 200,
            recursive_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn for_role(role: ModelRole) -> Self {
        let base = TrainConfig::default();
        match role {
            ModelRole::Cnn => base,
            ModelRole::Vggnet => TrainConfig {
                initial_lr: 0.001,
                ..base
            },
            ModelRole::Engagement => TrainConfig {
                batch_size: 32,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay_rate must be in (0, 1], got {}", self.decay_rate));
        }
        if self.decay_step == 0 {
            return bad("decay_step must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    pub fn lr(&self, g: u64) -> f64 {
        if self.recursive_decay {
            lr_at_step_recursive(self.initial_lr, self.decay_rate, self.decay_step, g)
        } else {
            lr_at_step(self.initial_lr, self.decay_rate, self.decay_step, g)
        }
    }
}

/// Momentum SGD: `v ← μ·v + ∇`, `θ ← θ − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    velocity: IndexMap<String, ArrayD<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum: momentum as f32,
            velocity: IndexMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut IndexMap<String, ArrayD<f32>>, grads: &IndexMap<String, ArrayD<f32>>, lr: f64) {
        let lr = lr as f32;
        for (name, g) in grads {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let mu = self.momentum;
            v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
            let p = params.get_mut(name).expect("gradient for a known parameter");
            p.zip_mut_with(v, |p, &v| *p -= lr * v);
        }
    }
}

/// Normalized single-channel inputs with class ids.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub images: Vec<Array2<f32>>,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn new(images: Vec<Array2<f32>>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images for {} labels", images.len(), labels.len())));
        }
        Ok(TrainData { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Array4<f32> {
        let views: Vec<_> = idx
            .iter()
            .map(|&i| self.images[i].view().insert_axis(Axis(0)).insert_axis(Axis(0)))
            .collect();
        ndarray::concatenate(Axis(0), &views).expect("equal image sizes")
    }
}

/// Predicted class per sample, inference mode, in chunks of `chunk`.
pub fn predict(net: &Network<f32>, data: &TrainData, chunk: usize) -> Result<(Vec<usize>, Array2<f32>)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut probs = Array2::zeros((0, net.spec().num_classes));
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let p = net.forward(&data.batch(part))?;
        for row in p.outer_iter() {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            preds.push(best.0);
        }
        probs.append(Axis(0), p.view()).unwrap();
    }
    Ok((preds, probs))
}

pub fn accuracy_on(net: &Network<f32>, data: &TrainData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Training("accuracy of an empty dataset".into()));
    }
    let (preds, _) = predict(net, data, 64)?;
    let hits = preds.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
}

pub struct TrainRun {
    pub log: Vec<LogEntry>,
    /// Checkpoint with the highest validation accuracy (earliest on ties),
    /// or the final weights when no validation set was given.
    pub best: Checkpoint,
    pub best_step: u64,
    pub best_val_acc: Option<f64>,
    pub last: Network<f32>,
}

/// Trains `net` in place of a private copy. `log_sink` receives the log as
/// JSON lines while training runs.
pub fn train(
    net: &Network<f32>,
    train_set: &TrainData,
    valid: Option<&TrainData>,
    cfg: &TrainConfig,
    pixel_stats: Option<&PixelStats>,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if let Some(&bad) = train_set.labels.iter().find(|&&y| y >= net.spec().num_classes) {
        return Err(Error::Training(format!(
            "label {bad} outside the model's {} classes",
            net.spec().num_classes
        )));
    }
    let valid = valid.filter(|v| !v.is_empty());

    let mut net = net.clone();
    let mut opt = Sgd::new(cfg.momentum);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(1);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(2);

    let mut log = Vec::new();
    let mut best: Option<(u64, f64, Checkpoint)> = None;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;

    for g in 0..cfg.max_steps {
        if cursor >= order.len() {
            order = (0..train_set.len()).collect();
            let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch));
            order.shuffle(&mut shuffle_rng);
            epoch += 1;
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let idx = &order[cursor..end];
        cursor = end;

        let views: Vec<Array2<f32>> = idx
            .iter()
            .map(|&i| augment(&train_set.images[i], &mut aug_rng, &cfg.augment))
            .collect();
        let x = {
            let v: Vec<_> = views.iter().map(|a| a.view().insert_axis(Axis(0)).insert_axis(Axis(0))).collect();
            ndarray::concatenate(Axis(0), &v).expect("equal image sizes")
        };
        let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();

        let lr = cfg.lr(g);
        let out = net.gradients(&x, &labels, Some(&mut drop_rng))?;
        let loss = out.loss as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became {loss} at step {g} (lr {lr:e}, batch of {})",
                labels.len()
            )));
        }
        opt.step(net.params_mut(), &out.grads, lr);

        let step = g + 1;
        let evaluate = step % cfg.eval_every == 0 || step == cfg.max_steps;
        let val_acc = match (evaluate, valid) {
            (true, Some(v)) => Some(accuracy_on(&net, v)?),
            _ => None,
        };
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((step, acc, Checkpoint::from_network(&net, pixel_stats.cloned(), step, Some(acc))));
            }
        }
        let entry = LogEntry { step, loss, lr, val_acc };
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(sink, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        log.push(entry);
    }

    let final_step = cfg.max_steps;
    let (best_step, best_val_acc, best) = match best {
        Some((s, a, c)) => (s, Some(a), c),
        None => (final_step, None, Checkpoint::from_network(&net, pixel_stats.cloned(), final_step, None)),
    };
    Ok(TrainRun {
        log,
        best,
        best_step,
        best_val_acc,
        last: net,
    })
}

pub fn save_checkpoint(run: &TrainRun, path: &Path) -> Result<()> {
    run.best.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_small_cnn_with, SmallCnnConfig};

    #[test]
    fn lr_examples() {
        assert_eq!(lr_at_step(0.002, 0.8, 500, 0), 0.002);
        assert!((lr_at_step(0.002, 0.8, 500, 500) - 0.0016).abs() < 1e-18);
        assert!((lr_at_step(0.001, 0.8, 500, 1000) - 0.00064).abs() < 1e-18);
        // halfway through a period is the geometric mean of its ends
        let mid = lr_at_step(1.0, 0.64, 10, 5);
        assert!((mid - 0.8).abs() < 1e-15);
        // far past the exact range: closed form, no long loop
        let far = lr_at_step(1.0, 0.999_999, 1, u64::MAX);
        assert_eq!(far, 0.999_999f64.powf(u64::MAX as f64));
        let k = EXACT_PERIODS + 1;
        let rel = (lr_at_step(1.0, 0.9999, 3, 3 * k) / 0.9999f64.powi(k as i32) - 1.0).abs();
        assert!(rel < 1e-12);
    }

    #[test]
    fn recursive_reading_compounds() {
        assert_eq!(lr_at_step_recursive(0.002, 0.8, 500, 0), 0.002);
        // a_1 = a_0 · r^(1/s), a_2 = a_1 · r^(2/s)
        let a2 = 0.002 * 0.8f64.powf(1.0 / 500.0) * 0.8f64.powf(2.0 / 500.0);
        assert!((lr_at_step_recursive(0.002, 0.8, 500, 2) - a2).abs() < 1e-15);
        assert!(lr_at_step_recursive(0.002, 0.8, 500, 1000) < lr_at_step(0.002, 0.8, 500, 1000));
    }

    #[test]
    fn role_presets() {
        assert_eq!(TrainConfig::default().momentum, 0.9);
        assert_eq!(TrainConfig::for_role(ModelRole::Engagement).batch_size, 32);
        assert_eq!(TrainConfig::for_role(ModelRole::Cnn).batch_size, 28);
        assert_eq!(TrainConfig::for_role(ModelRole::Vggnet).initial_lr, 0.001);
        assert_eq!(TrainConfig::for_role(ModelRole::Engagement).initial_lr, 0.002);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { decay_rate: 0.0, ..ok.clone() },
            TrainConfig { decay_rate: 1.5, ..ok.clone() },
            TrainConfig { decay_step: 0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: TrainConfig = toml::from_str("initial_lr = 0.01\nbatch_size = 4\n[augment]\ncrop_pad = 0\n").unwrap();
        assert_eq!(parsed.batch_size, 4);
        assert_eq!(parsed.augment.crop_pad, 0);
        assert_eq!(parsed.decay_step, 500);
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }

    #[test]
    fn sgd_without_momentum_on_quadratic() {
        // L = ½·a·θ², ∇ = a·θ, one step gives θ(1 − ηa)
        let (a, theta, eta) = (3.0f32, 0.7f32, 0.05f64);
        let mut params = IndexMap::from([("w".to_string(), ArrayD::from_elem(vec![1], theta))]);
        let grads = IndexMap::from([("w".to_string(), ArrayD::from_elem(vec![1], a * theta))]);
        Sgd::new(0.0).step(&mut params, &grads, eta);
        let expect = theta as f64 * (1.0 - eta * a as f64);
        assert!((params["w"][[0]] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn momentum_accumulates() {
        let mut params = IndexMap::from([("w".to_string(), ArrayD::from_elem(vec![1], 0.0f32))]);
        let grads = IndexMap::from([("w".to_string(), ArrayD::from_elem(vec![1], 1.0f32))]);
        let mut opt = Sgd::new(0.5);
        opt.step(&mut params, &grads, 1.0);
        opt.step(&mut params, &grads, 1.0);
        // v1 = 1, v2 = 1.5
        assert!((params["w"][[0]] + 2.5).abs() < 1e-6);
    }

    fn tiny_net() -> Network<f32> {
        let cfg = SmallCnnConfig {
            conv_filters: [2, 2],
            fc_width: 4,
            ..Default::default()
        };
        Network::init(build_small_cnn_with(2, &cfg).unwrap(), 1).unwrap()
    }

    fn toy(n: usize) -> TrainData {
        let images = (0..n)
            .map(|i| Array2::from_shape_fn((48, 48), |(r, c)| ((r * 3 + c * (i + 1)) % 7) as f32 - 3.0))
            .collect();
        TrainData::new(images, (0..n).map(|i| i % 2).collect()).unwrap()
    }

    #[test]
    fn empty_training_set_fails() {
        let cfg = TrainConfig { max_steps: 2, ..Default::default() };
        assert!(matches!(
            train(&tiny_net(), &TrainData::default(), None, &cfg, None, None),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let cfg = TrainConfig { max_steps: 5, ..Default::default() };
        let mut data = toy(4);
        data.images[2][[10, 10]] = f32::NAN;
        let err = train(&tiny_net(), &data, None, &cfg, None, None).err().unwrap();
        assert!(err.to_string().contains("at step 0"), "{err}");
    }

    #[test]
    fn log_and_best_checkpoint() {
        let cfg = TrainConfig {
            max_steps: 6,
            eval_every: 2,
            batch_size: 3,
            ..Default::default()
        };
        let data = toy(5);
        let mut sink = Vec::new();
        let run = train(&tiny_net(), &data, Some(&data), &cfg, None, Some(&mut sink)).unwrap();
        assert_eq!(run.log.len(), 6);
        let evaluated: Vec<f64> = run.log.iter().filter_map(|e| e.val_acc).collect();
        assert_eq!(evaluated.len(), 3);
        let max = evaluated.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(run.best_val_acc, Some(max));
        assert_eq!(run.best.val_metric, Some(max));
        let lines: Vec<&str> = std::str::from_utf8(&sink).unwrap().lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[1].contains("\"val_acc\""));
        assert!(!lines[0].contains("val_acc"));
        assert_eq!(run.log[1].lr, cfg.lr(1));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = TrainConfig {
            max_steps: 4,
            batch_size: 2,
            ..Default::default()
        };
        let data = toy(6);
        let a = train(&tiny_net(), &data, None, &cfg, None, None).unwrap();
        let b = train(&tiny_net(), &data, None, &cfg, None, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.last.params(), b.last.params());
    }
}
