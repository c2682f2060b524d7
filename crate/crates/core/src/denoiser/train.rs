#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pipeline_loss_and_grad, AttentionParams, CloudPair, GThetaConfig};
use crate::diffusion::{forward_diffuse_sampled, DiffusionConfig, FocalParams};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::matrixspace::MatchMatrix;

/// A source/target pair with its ground-truth matching matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub source: PointCloud,
    pub target: PointCloud,
    pub e0: MatchMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale the gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub focal: FocalParams,
    pub gtheta: GThetaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 1.0,
            momentum: 0.9,
            grad_clip: Some(1.0),
            seed: 0,
            focal: FocalParams::default(),
            gtheta: GThetaConfig::default(),
        }
    }
}

/// SGD-with-momentum state. Iteration `k` draws its scene, timestep and
/// noise from stream `k` of the seeded generator, so a restored trainer
/// continues exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: AttentionParams,
    pub velocity: Vec<f64>,
    pub iteration: usize,
    pub history: Vec<f64>,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(params: AttentionParams, config: TrainConfig) -> Self {
        let velocity = alloc::vec![0.0; params.num_params()];
        Self {
            params,
            velocity,
            iteration: 0,
            history: Vec::new(),
            config,
        }
    }

    /// One optimisation step; returns its loss.
    pub fn step(&mut self, dataset: &[TrainingExample], diffusion: &DiffusionConfig) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.iteration as u64);
        let example = &dataset[rng.random_range(0..dataset.len())];
        let t = rng.random_range(1..=diffusion.schedule.t_max());
        let et = forward_diffuse_sampled(&example.e0, t, diffusion, &mut rng)?.projected;
        let pair = CloudPair::new(&example.source, &example.target);
        let out = pipeline_loss_and_grad(&self.params, &et, pair, &example.e0, &self.config.gtheta, self.config.focal)?;
        let mut grad = out.grads.to_flat();
        if grad.iter().any(|g| !g.is_finite()) || !out.loss.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        if let Some(limit) = self.config.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                grad.iter_mut().for_each(|g| *g *= limit / norm);
            }
        }
        let mut flat = self.params.to_flat();
        let (lr, mom) = (self.config.learning_rate, self.config.momentum);
        for ((p, v), g) in flat.iter_mut().zip(&mut self.velocity).zip(&grad) {
            *v = mom * *v + g;
            *p -= lr * *v;
        }
        if lr != 0.0 {
            self.params.set_flat(&flat)?;
        }
        self.iteration += 1;
        self.history.push(out.loss);
        Ok(out.loss)
    }

    /// Steps until `config.iterations` have been run in total.
    pub fn run(&mut self, dataset: &[TrainingExample], diffusion: &DiffusionConfig) -> Result<()> {
        while self.iteration < self.config.iterations {
            self.step(dataset, diffusion)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: AttentionParams,
    pub history: Vec<f64>,
}

/// Trains the attention feature network of `g_θ` on the focal loss of its
/// predictions from forward-diffused ground truth.
pub fn train_denoiser(
    params: AttentionParams,
    dataset: &[TrainingExample],
    diffusion: &DiffusionConfig,
    config: TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(params, config);
    trainer.run(dataset, diffusion)?;
    Ok(TrainOutcome {
        params: trainer.params,
        history: trainer.history,
    })
}

/// Mean focal loss of `params` over every example at `timesteps`, with
/// forward noise drawn from `seed`. Gives a fixed yardstick for comparing
/// parameters before and after training.
pub fn mean_loss(
    params: &AttentionParams,
    dataset: &[TrainingExample],
    diffusion: &DiffusionConfig,
    config: &TrainConfig,
    timesteps: &[usize],
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() || timesteps.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for example in dataset {
        let pair = CloudPair::new(&example.source, &example.target);
        for &t in timesteps {
            let et = forward_diffuse_sampled(&example.e0, t, diffusion, &mut rng)?.projected;
            total += pipeline_loss_and_grad(params, &et, pair, &example.e0, &config.gtheta, config.focal)?.loss;
        }
    }
    Ok(total / (dataset.len() * timesteps.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::PositionalEncoding;
    use crate::geometry::{Descriptors, Vec3};
    use crate::matrixspace::ground_truth_matrix;

    fn example(seed: u64, n: usize, d: usize) -> TrainingExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let desc: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noisy: Vec<f64> = desc.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
        let source = PointCloud::new(pts.clone()).unwrap().with_descriptors(Descriptors::from_flat(d, desc).unwrap()).unwrap();
        let target = PointCloud::new(pts).unwrap().with_descriptors(Descriptors::from_flat(d, noisy).unwrap()).unwrap();
        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        TrainingExample {
            source,
            target,
            e0: ground_truth_matrix(n, n, &pairs, 100).unwrap(),
        }
    }

    fn params(d: usize) -> AttentionParams {
        AttentionParams::random(d, 2, PositionalEncoding::new(1, d, 1.0).unwrap(), 7).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = [example(1, 8, 4)];
        let cfg = TrainConfig {
            iterations: 20,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let p = params(4);
        let out = train_denoiser(p.clone(), &data, &DiffusionConfig::default(), cfg).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.history.len(), 20);
    }

    #[test]
    fn single_pair_loss_halves() {
        let data = [example(2, 12, 8)];
        let cfg = TrainConfig {
            iterations: 200,
            ..TrainConfig::default()
        };
        let out = train_denoiser(params(8), &data, &DiffusionConfig::default(), cfg).unwrap();
        let first: f64 = out.history[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = out.history[190..].iter().sum::<f64>() / 10.0;
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn uniform_target_stays_finite() {
        let mut ex = example(3, 6, 4);
        ex.e0 = MatchMatrix::uniform(6, 6);
        let cfg = TrainConfig {
            iterations: 50,
            ..TrainConfig::default()
        };
        let out = train_denoiser(params(4), &[ex], &DiffusionConfig::default(), cfg).unwrap();
        assert!(out.history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = [example(4, 6, 4), example(5, 6, 4)];
        let diffusion = DiffusionConfig::default();
        let cfg = TrainConfig {
            iterations: 30,
            ..TrainConfig::default()
        };
        let full = train_denoiser(params(4), &data, &diffusion, cfg).unwrap();
        let mut part = Trainer::new(params(4), TrainConfig { iterations: 12, ..cfg });
        part.run(&data, &diffusion).unwrap();
        let mut resumed = part.clone();
        resumed.config.iterations = 30;
        resumed.run(&data, &diffusion).unwrap();
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.history, full.history);
    }

    #[test]
    fn empty_dataset() {
        assert_eq!(
            train_denoiser(params(4), &[], &DiffusionConfig::default(), TrainConfig::default()).unwrap_err(),
            Error::EmptyDataset
        );
    }
}
