//! Adam training on random windows of a byte corpus.

use moegeom_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::transformer::MoeTransformer;
use crate::ModelError;

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: &ModelConfig, model: &MoeTransformer<T>) -> Self {
        let shapes: Vec<Vec<T>> = model.params().iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, model: &mut MoeTransformer<T>, grads: &MoeTransformer<T>) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let step = T::lit(self.lr / (1.0 - self.beta1.powi(self.t)));
        let corr2 = T::lit(1.0 / (1.0 - self.beta2.powi(self.t)));
        let eps = T::lit(self.eps);
        let grads = grads.params();
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(&grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                p[i] -= step * m[i] / ((v[i] * corr2).sqrt() + eps);
            }
        }
    }
}

/// Samples `batch` windows of `seq + 1` bytes; returns inputs and shifted targets.
pub fn sample_batch<R: Rng>(rng: &mut R, corpus: &[u8], batch: usize, seq: usize) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(batch * seq);
    let mut targets = Vec::with_capacity(batch * seq);
    for _ in 0..batch {
        let o = rng.random_range(0..=corpus.len() - seq - 1);
        inputs.extend(corpus[o..o + seq].iter().map(|&b| b as usize));
        targets.extend(corpus[o + 1..o + seq + 1].iter().map(|&b| b as usize));
    }
    (inputs, targets)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: MoeTransformer<T>,
    /// Mean batch cross-entropy before each update.
    pub losses: Vec<f64>,
}

/// Trains a freshly initialised model for `steps` updates.
pub fn train<T: Scalar>(config: &ModelConfig, corpus: &[u8], steps: usize) -> Result<TrainOutcome<T>, ModelError> {
    train_with_progress(config, corpus, steps, |_, _| {})
}

/// As [`train`], calling `progress(step, loss)` after every update.
///
/// Initialisation uses the seed directly; batches come from a second ChaCha
/// stream of the same seed, so the data order is identical for every router.
pub fn train_with_progress<T: Scalar>(
    config: &ModelConfig,
    corpus: &[u8],
    steps: usize,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome<T>, ModelError> {
    let mut model = MoeTransformer::<T>::new(config.clone())?;
    let needed = config.block_size + 1;
    if corpus.len() < needed {
        return Err(ModelError::CorpusTooShort {
            len: corpus.len(),
            needed,
        });
    }
    if config.vocab_size < 256 {
        if let Some(&b) = corpus.iter().find(|&&b| b as usize >= config.vocab_size) {
            return Err(ModelError::InvalidToken {
                token: b as usize,
                position: corpus.iter().position(|&c| c == b).unwrap_or(0),
                vocab: config.vocab_size,
            });
        }
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(1);
    let mut adam = Adam::new(config, &model);
    let mut grads = MoeTransformer::<T>::zeros(config);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (inputs, targets) = sample_batch(&mut data_rng, corpus, config.batch_size, config.block_size);
        let fwd = model.forward(&inputs, config.batch_size)?;
        let (loss, dlogits) = model.loss(&fwd, &targets);
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(ModelError::Diverged { step, loss });
        }
        grads.clear();
        model.backward(&fwd, &dlogits, &mut grads);
        drop(fwd);
        adam.step(&mut model, &grads);
        losses.push(loss);
        progress(step, loss);
    }
    Ok(TrainOutcome { model, losses })
}
