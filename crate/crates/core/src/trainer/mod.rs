//! Optimisation loop: batch sampling, combined loss, Adam with a
//! warmup-then-linear-decay schedule, checkpoints and a metrics log.

mod checkpoint;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{derive_rng, sample_batch, Batch, MonoCorpus, ParallelCorpus, Vocabulary};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::objectives::{LossBreakdown, LossContext, ObjectiveWeights, Objectives, DEFAULT_MASK_RATE};
use crate::tensor::{Graph, Scalar, Tensor};

pub use checkpoint::{checkpoint_precision, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub objectives: Objectives,
    pub weights: ObjectiveWeights,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; absent means no clipping. Written out
    /// as `inf` so that config files without a null still round-trip.
    #[serde(serialize_with = "clip_as_inf")]
    pub clip_norm: Option<f64>,
    pub mask_rate: f64,
    /// Write a checkpoint every this many steps (0 disables periodic checkpoints).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            warmup_steps: 200,
            peak_lr: 2e-3,
            batch_size: 16,
            objectives: Objectives::ALL,
            weights: ObjectiveWeights::default(),
            adam: AdamConfig::default(),
            clip_norm: Some(1.0),
            mask_rate: DEFAULT_MASK_RATE,
            checkpoint_every: 500,
        }
    }
}

fn clip_as_inf<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(v.unwrap_or(f64::INFINITY))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps > 0 && self.warmup_steps >= self.steps {
            return Err(Error::config(
                "train.warmup_steps",
                format!("{} must be below steps={}", self.warmup_steps, self.steps),
            ));
        }
        if !(self.peak_lr > 0.0) || !self.peak_lr.is_finite() {
            return Err(Error::config("train.peak_lr", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be at least 2"));
        }
        if self.objectives.sa {
            let parallel_slots = if self.objectives.mlm { self.batch_size / 2 } else { self.batch_size };
            if parallel_slots < 2 {
                return Err(Error::config(
                    "train.batch_size",
                    "sentence alignment needs at least 2 parallel pairs per batch",
                ));
            }
        }
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return Err(Error::config("train.mask_rate", "must lie in (0, 1]"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::config("train.adam", "need betas in [0, 1) and eps > 0"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("train.clip_norm", "must be positive"));
            }
        }
        for (name, w) in [("mlm", self.weights.mlm), ("sa", self.weights.sa), ("wa", self.weights.wa)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::config(format!("train.weights.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak` over `[0, warmup]`, then linear decay to 0 at `total`.
pub fn lr_schedule(step: u64, warmup: u64, total: u64, peak: f64) -> Result<f64> {
    if warmup >= total {
        return Err(Error::config(
            "train.warmup_steps",
            format!("{warmup} must be below steps={total}"),
        ));
    }
    if step > total {
        return Err(Error::Input(format!("step {step} beyond total {total}")));
    }
    Ok(if step <= warmup {
        peak * step as f64 / warmup.max(1) as f64
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    })
}

/// Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Updates applied so far.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { m: zeros(), v: zeros(), t: 0 }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::lit(1.0 - cfg.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - cfg.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + one_b1 * *gi;
            }
            let v = self.v[k].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + one_b2 * *gi * *gi;
            }
            let (m, v) = (self.m[k].data(), self.v[k].data());
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Corpora the loop samples from.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub vocab: Vocabulary,
    pub mono: Vec<MonoCorpus>,
    pub parallel: Vec<ParallelCorpus>,
    pub smoothing: f64,
}

/// Everything needed to continue training exactly where it stopped.
/// Per-step randomness is derived from `(seed, step)`, so no generator
/// state is carried.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub encoder: Encoder<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lr: f64,
    pub mlm: f64,
    pub sa: f64,
    pub wa: f64,
    pub total: f64,
    pub wall_ms: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(encoder: Encoder<T>, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(encoder.params().tensors());
        Ok(TrainState {
            encoder,
            adam,
            config,
            seed,
            step: 0,
        })
    }

    /// Draws the batch for the current step.
    pub fn sample(&self, data: &TrainingData) -> Result<Batch> {
        let obj = self.config.objectives;
        let mono: &[MonoCorpus] = if obj.mlm { &data.mono } else { &[] };
        let parallel: &[ParallelCorpus] = if obj.uses_parallel() { &data.parallel } else { &[] };
        let mut rng = derive_rng(self.seed, &["batch", &self.step.to_string()]);
        sample_batch(mono, parallel, self.config.batch_size, data.smoothing, &mut rng)
    }

    /// One optimisation step on a freshly drawn batch.
    pub fn train_step(&mut self, data: &TrainingData) -> Result<(LossBreakdown, f64)> {
        let batch = self.sample(data)?;
        self.train_step_on(&batch, &data.vocab)
    }

    /// One optimisation step on `batch`; returns the breakdown and the learning rate used.
    pub fn train_step_on(&mut self, batch: &Batch, vocab: &Vocabulary) -> Result<(LossBreakdown, f64)> {
        let step = self.step.to_string();
        let mut mask_rng = derive_rng(self.seed, &["mask", &step]);
        let mut dropout_rng = derive_rng(self.seed, &["dropout", &step]);
        let mut graph = Graph::new();
        let bound = self.encoder.bind(&mut graph);
        let ctx = LossContext {
            encoder: &self.encoder,
            vocab,
            objectives: self.config.objectives,
            weights: self.config.weights,
            mask_rate: self.config.mask_rate,
        };
        let (loss, breakdown) = ctx.combined_loss(&mut graph, &bound, batch, &mut mask_rng, Some(&mut dropout_rng))?;
        if !breakdown.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                breakdown: breakdown.to_string(),
            });
        }
        let mut grads = graph.backward(loss)?;
        let mut grads: Vec<Tensor<T>> = bound
            .vars()
            .iter()
            .zip(self.encoder.params().tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        if let Some(limit) = self.config.clip_norm {
            clip_global_norm(&mut grads, limit);
        }
        let lr = lr_schedule(self.step, self.config.warmup_steps, self.config.steps, self.config.peak_lr)?;
        self.adam
            .update(self.encoder.params_mut().tensors_mut(), &grads, lr, &self.config.adam);
        if let Some(name) = self.encoder.params().first_non_finite() {
            return Err(Error::Divergence {
                step: self.step,
                breakdown: format!("{breakdown}; {name} is no longer finite"),
            });
        }
        self.step += 1;
        Ok((breakdown, lr))
    }

    /// Runs until `config.steps`, calling `on_step` after every step.
    pub fn run(
        &mut self,
        data: &TrainingData,
        mut on_step: impl FnMut(&Self, &MetricsRecord) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.config.steps {
            let started = Instant::now();
            let step = self.step;
            let (b, lr) = self.train_step(data)?;
            let record = MetricsRecord {
                step,
                lr,
                mlm: b.mlm,
                sa: b.sa,
                wa: b.wa,
                total: b.total,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            on_step(self, &record)?;
        }
        Ok(())
    }
}

/// Rescales all gradients together when their joint L2 norm exceeds `limit`.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], limit: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let v = v.to_f64().unwrap();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > limit {
        let s = T::lit(limit / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Appends one JSON line per record.
pub struct MetricsLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("metrics serialise");
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = crate::corpus::text::read_text(path)?;
    text.lines()
        .enumerate()
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 10, 100, 1e-4).unwrap(), 0.0);
        assert_eq!(lr_schedule(10_000, 10_000, 20_000, 1e-4).unwrap(), 1e-4);
        assert!((lr_schedule(600, 100, 1100, 1e-4).unwrap() - 5e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(1100, 100, 1100, 1e-4).unwrap(), 0.0);
        assert!(matches!(lr_schedule(0, 100, 100, 1e-4), Err(Error::Config { .. })));
    }

    #[test]
    fn schedule_peaks_only_at_warmup() {
        let (w, t, peak) = (37, 211, 3e-4);
        let lrs: Vec<f64> = (0..=t).map(|s| lr_schedule(s, w, t, peak).unwrap()).collect();
        let max = lrs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, peak);
        assert_eq!(lrs.iter().position(|&l| l == max), Some(w as usize));
        for pair in lrs.windows(2) {
            assert!((pair[1] - pair[0]).abs() <= peak / (t - w).min(w) as f64 + 1e-18);
        }
    }

    #[test]
    fn clip_rescales_to_limit() {
        let mut g = vec![Tensor::<f64>::vector(vec![3.0, 0.0]), Tensor::vector(vec![0.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((g[1].data()[1] - 0.8).abs() < 1e-15);
        let before = g.clone();
        clip_global_norm(&mut g, f64::INFINITY);
        assert_eq!(g, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::vector(vec![1.0, -1.0])];
        let g = vec![Tensor::<f64>::vector(vec![0.5, -2.0])];
        let mut adam = AdamState::new(&p);
        adam.update(&mut p, &g, 0.1, &AdamConfig::default());
        // bias-corrected first step is lr * sign(g)
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = TrainConfig::default();
        c.warmup_steps = c.steps;
        assert!(c.validate().unwrap_err().to_string().contains("train.warmup_steps"));
        let mut c = TrainConfig::default();
        c.batch_size = 3;
        assert!(c.validate().unwrap_err().to_string().contains("train.batch_size"));
        c.objectives = "mlm".parse().unwrap();
        assert!(c.validate().is_ok());
    }
}
