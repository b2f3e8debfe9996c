//! Noise-prediction training of the main network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mask_column, Conditioning, TryOnModel};
use super::schedule::add_noise;
use super::tape::Tape;
use super::tensor::{LatentImage, Matrix};
use super::unet::{UNetInput, UNetToy};
use super::DiffusionError;
use crate::data::TryOnSample;
use crate::exec::Exec;
use crate::mask::{agnostic_image, random_dilation_augment, DilationSpec, Mask};

/// Mean squared error between true and predicted noise.
pub fn ldm_loss(noise: &LatentImage, predicted: &LatentImage) -> Result<f64, DiffusionError> {
    noise.ensure_same_shape(predicted, "predicted noise")?;
    let n = noise.tokens.len() as f64;
    Ok(noise
        .tokens
        .data
        .iter()
        .zip(&predicted.tokens.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Parameter update rule for the main network.
pub trait Optimizer: Send {
    fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, d) in p.data.iter_mut().zip(&g.data) {
                *w -= self.lr * d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g.data[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g.data[j] * g.data[j];
                p.data[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { lr: 2e-3 }
    }
}

impl OptimizerConfig {
    pub fn build(self) -> Box<dyn Optimizer> {
        match self {
            OptimizerConfig::Sgd { lr } => Box::new(Sgd { lr }),
            OptimizerConfig::Adam { lr } => Box::new(Adam::new(lr)),
        }
    }
}

/// Loss of the main network on one noised latent, plus gradients for every
/// main-network parameter (in `UNetToy::params` order).
pub fn loss_and_grads(
    main: &UNetToy,
    cond: &Conditioning,
    z0: &LatentImage,
    noise: &LatentImage,
    t: usize,
    model: &TryOnModel,
) -> Result<(f64, Vec<Matrix>), DiffusionError> {
    let zt = add_noise(z0, t, noise, &model.schedule)?;
    let x = model.main_input(cond, &zt)?;
    let mut tape = Tape::new();
    let f = main.forward_on(
        &mut tape,
        &UNetInput {
            x: &x,
            height: zt.height,
            width: zt.width,
            t,
            text: &cond.text,
            reference_kv: Some(&cond.reference_kv),
        },
    )?;
    let target = tape.leaf(noise.tokens.clone());
    let loss = tape.mse(f.output, target);
    let value = tape.value(loss).data[0];
    let grads = tape.backward(loss);
    let g = f
        .params
        .iter()
        .zip(&main.params)
        .map(|(v, p)| grads.get_or_zeros(*v, p))
        .collect();
    Ok((value, g))
}

/// Loss only; used for finite-difference probes.
pub fn loss_value(
    main: &UNetToy,
    cond: &Conditioning,
    z0: &LatentImage,
    noise: &LatentImage,
    t: usize,
    model: &TryOnModel,
) -> Result<f64, DiffusionError> {
    let zt = add_noise(z0, t, noise, &model.schedule)?;
    let x = model.main_input(cond, &zt)?;
    let pred = main.forward(&UNetInput {
        x: &x,
        height: zt.height,
        width: zt.width,
        t,
        text: &cond.text,
        reference_kv: Some(&cond.reference_kv),
    })?;
    ldm_loss(noise, &LatentImage::from_tokens(zt.height, zt.width, pred)?)
}

/// One training sample with its fixed parts precomputed: person latent,
/// reference keys/values for the clothing and the encoded main prompt.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub person: crate::raster::RgbImage,
    pub person_latent: LatentImage,
    pub fine: Mask,
    pub coarse: Mask,
    pub base: Conditioning,
}

impl TrainExample {
    pub fn new(
        model: &TryOnModel,
        sample: &TryOnSample,
        fine: Mask,
        coarse: Mask,
        main_prompt: &str,
        reference_prompt: &str,
    ) -> Result<Self, DiffusionError> {
        let person_latent = model.codec.encode(&sample.person)?;
        let clothing_latent = model.codec.encode(&sample.clothing)?;
        let latent_mask = coarse.resize_to_latent(model.codec.factor)?;
        let agnostic = model.codec.encode(&agnostic_image(&sample.person, &coarse)?)?;
        let base = model.condition(&latent_mask, &agnostic, &clothing_latent, main_prompt, reference_prompt)?;
        Ok(Self {
            person: sample.person.clone(),
            person_latent,
            fine,
            coarse,
            base,
        })
    }

    /// Conditioning under a freshly drawn dilated mask.
    pub fn augmented(&self, model: &TryOnModel, spec: &DilationSpec) -> Result<Conditioning, DiffusionError> {
        let dilated = random_dilation_augment(&self.fine, &self.coarse, spec)?;
        let agnostic = model.codec.encode(&agnostic_image(&self.person, &dilated)?)?;
        Ok(Conditioning {
            mask: mask_column(&dilated.resize_to_latent(model.codec.factor)?),
            agnostic,
            ..self.base.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
}

/// One optimizer step on the batch-mean loss. Each sample draws its own
/// dilation, timestep and noise from `rng` (in batch order, so results do
/// not depend on `exec`); the reference network is never touched.
pub fn train_step(
    model: &mut TryOnModel,
    optimizer: &mut dyn Optimizer,
    batch: &[TrainExample],
    n_max: usize,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Result<StepReport, DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::RangeViolation("empty training batch".into()));
    }
    let draws: Vec<(u64, usize, u64)> = batch
        .iter()
        .map(|_| (rng.random(), rng.random_range(1..=model.schedule.timesteps), rng.random()))
        .collect();
    let frozen: &TryOnModel = model;
    let per_sample = exec.try_map_range(batch.len(), |i| {
        let (mask_seed, t, noise_seed) = draws[i];
        let ex = &batch[i];
        let spec = DilationSpec {
            n_max,
            rng_seed: mask_seed,
            element: Default::default(),
        };
        let cond = ex.augmented(frozen, &spec)?;
        let z0 = &ex.person_latent;
        let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = LatentImage::from_tokens(z0.height, z0.width, Matrix::randn(z0.tokens.rows, z0.tokens.cols, 1.0, &mut nrng))?;
        loss_and_grads(&frozen.main, &cond, z0, &noise, t, frozen)
    })?;

    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Matrix> = model.main.params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
    for (l, g) in per_sample {
        loss += l * scale;
        for (acc, d) in grads.iter_mut().zip(&g) {
            acc.add_assign(&d.scale(scale));
        }
    }
    let grad_norm = grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(DiffusionError::NonFiniteLoss(loss));
    }
    optimizer.step(&mut model.main.params, &grads);
    Ok(StepReport { loss, grad_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Upper bound on dilation iterations; 0 derives it from the image size.
    pub n_max: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            n_max: 0,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

/// Per-step losses and gradient norms of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

impl TrainLog {
    /// Mean loss of the first `window` steps.
    pub fn initial_mean(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.losses.len().max(1));
        self.losses.iter().take(w).sum::<f64>() / w as f64
    }

    /// Mean loss of the last `window` steps.
    pub fn final_mean(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.losses.len().max(1));
        self.losses.iter().rev().take(w).sum::<f64>() / w as f64
    }

    /// `1 - final / initial` over `window`-step means.
    pub fn reduction(&self, window: usize) -> f64 {
        1.0 - self.final_mean(window) / self.initial_mean(window)
    }
}

/// Runs `cfg.steps` optimizer steps. Batches walk `examples` cyclically;
/// all randomness comes from a ChaCha8 stream seeded with `cfg.seed`.
pub fn train_loop(
    model: &mut TryOnModel,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    exec: Exec,
    mut on_step: impl FnMut(usize, &StepReport),
) -> Result<TrainLog, DiffusionError> {
    if examples.is_empty() || cfg.batch_size == 0 {
        return Err(DiffusionError::RangeViolation("training needs examples and a nonzero batch size".into()));
    }
    let n_max = if cfg.n_max == 0 {
        let m = &examples[0].fine;
        crate::mask::default_n_max(m.height, m.width)
    } else {
        cfg.n_max
    };
    let mut optimizer = cfg.optimizer.build();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<TrainExample> = (0..cfg.batch_size)
            .map(|j| examples[(step * cfg.batch_size + j) % examples.len()].clone())
            .collect();
        let report = train_step(model, optimizer.as_mut(), &batch, n_max, &mut rng, exec)?;
        on_step(step, &report);
        log.losses.push(report.loss);
        log.grad_norms.push(report.grad_norm);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn lat(rows: usize, f: impl Fn(usize) -> f64) -> LatentImage {
        LatentImage::from_tokens(rows, 1, Matrix::from_fn(rows, 1, |r, _| f(r))).unwrap()
    }

    #[test]
    fn loss_contract() {
        let e = lat(6, |r| r as f64 * 0.3);
        assert_eq!(ldm_loss(&e, &e).unwrap(), 0.0);
        let shifted = lat(6, |r| r as f64 * 0.3 + 1.0);
        assert!((ldm_loss(&e, &shifted).unwrap() - 1.0).abs() < 1e-15);
        assert!(ldm_loss(&e, &lat(5, |_| 0.0)).is_err());
    }

    #[test]
    fn loss_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = LatentImage::from_tokens(4, 3, Matrix::randn(12, 4, 1.0, &mut rng)).unwrap();
        let b = LatentImage::from_tokens(4, 3, Matrix::randn(12, 4, 1.0, &mut rng)).unwrap();
        let mut s = 0.0;
        for i in 0..12 {
            for c in 0..4 {
                let d = a.tokens.get(i, c) - b.tokens.get(i, c);
                s += d * d;
            }
        }
        assert!((ldm_loss(&a, &b).unwrap() - s / 48.0).abs() < 1e-14);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap()];
        let g = vec![Matrix::from_vec(1, 2, vec![0.5, -0.5]).unwrap()];
        let mut opt = Adam::new(0.1);
        opt.step(&mut p, &g);
        assert!((p[0].data[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn loop_is_deterministic_and_logs_every_step() {
        use crate::data::synthetic::{generate_samples, SyntheticConfig};
        use crate::mask::{build_coarse_mask, build_fine_mask};
        let examples: Vec<TrainExample> = generate_samples(&SyntheticConfig { count: 2, ..Default::default() })
            .iter()
            .map(|(s, _)| {
                let m = TryOnModel::new(Default::default()).unwrap();
                TrainExample::new(&m, s, build_fine_mask(s).unwrap(), build_coarse_mask(s).unwrap(), "a person", "a shirt").unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            ..Default::default()
        };
        let run = |exec| {
            let mut m = TryOnModel::new(Default::default()).unwrap();
            let mut seen = 0;
            let log = train_loop(&mut m, &examples, &cfg, exec, |_, _| seen += 1).unwrap();
            assert_eq!(seen, 3);
            (log, m)
        };
        let (a, ma) = run(Exec::Sequential);
        let (b, mb) = run(Exec::Parallel);
        assert_eq!(a.losses.len(), 3);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert!(a.losses.iter().all(|l| l.is_finite()));
    }
}
