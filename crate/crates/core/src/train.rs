//! Balancing, splitting and SGD-with-momentum training of the regressor.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::eval::EvalRecord;
use crate::features::check_feature_dims;
use crate::lstm::{backward_into, forward, predict, Gradients, LstmNetwork};
use crate::physics::bin_index;
use crate::rng::Rng;
use crate::types::{DatasetManifest, Sample};

/// Stream ids carved out of the training seed.
const SPLIT_STREAM: u64 = 0x5350_4c49_0000_0000;
const BALANCE_STREAM: u64 = 0x4241_4c41_0000_0000;
const SHUFFLE_STREAM: u64 = 0x5348_5546_0000_0000;
const INIT_STREAM: u64 = 0x494e_4954_0000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub balance_bin_mps: f64,
    pub balance_cap: Option<usize>,
    /// Fraction of (balanced) records assigned to training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults (minibatches of 32).
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 20,
            early_stop_patience: 3,
            balance_bin_mps: 0.25,
            balance_cap: None,
            train_fraction: 0.76,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-size minibatches of 256.
    pub fn full_size() -> Self {
        Self {
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rate", "must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "train config",
                "batch size and epochs must be positive",
            ));
        }
        if !(self.balance_bin_mps.is_finite() && self.balance_bin_mps > 0.0) {
            return Err(Error::invalid("balance bin", "must be positive"));
        }
        if self.balance_cap == Some(0) {
            return Err(Error::invalid("balance cap", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction", "must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn split_rng(&self) -> Rng {
        Rng::new(self.seed).derive(SPLIT_STREAM)
    }

    pub fn balance_rng(&self) -> Rng {
        Rng::new(self.seed).derive(BALANCE_STREAM)
    }

    pub fn init_rng(&self) -> Rng {
        Rng::new(self.seed).derive(INIT_STREAM)
    }
}

/// `Σ (y − ŷ)² / N` over `(y, ŷ)` pairs.
pub fn mse_loss(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    let sum: f64 = pairs.iter().map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(sum / pairs.len() as f64)
}

/// Indices kept after capping every `floor(label / bin)` bin at `cap`
/// records, sampled uniformly without replacement; ascending order.
pub fn balance_indices(
    labels: &[f64],
    bin_mps: f64,
    cap: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if cap == 0 {
        return Err(Error::invalid("balance cap", "must be at least 1"));
    }
    if !(bin_mps.is_finite() && bin_mps > 0.0) {
        return Err(Error::invalid("balance bin", "must be positive"));
    }
    let mut bins: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        bins.entry(bin_index(y, bin_mps)).or_default().push(i);
    }
    let mut keep = Vec::with_capacity(labels.len());
    for members in bins.values() {
        if members.len() <= cap {
            keep.extend_from_slice(members);
        } else {
            keep.extend(
                index::sample(rng, members.len(), cap)
                    .iter()
                    .map(|j| members[j]),
            );
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn balance_dataset(
    manifest: &DatasetManifest,
    bin_mps: f64,
    cap: usize,
    rng: &mut Rng,
) -> Result<DatasetManifest> {
    let keep = balance_indices(&manifest.labels(), bin_mps, cap, rng)?;
    Ok(manifest.select(&keep))
}

/// Seeded uniform split into `(train, validation)` index lists, each in
/// ascending order. Both sides get at least one index.
pub fn split_indices(
    n: usize,
    train_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid("split", "need at least two records"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train fraction", "must be in (0, 1)"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (libm::round(n as f64 * train_fraction) as usize).clamp(1, n - 1);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// `v ← μ v + g`, `θ ← θ − lr · v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "optimizer state",
            expected: params.len(),
            found: if grads.len() != params.len() {
                grads.len()
            } else {
                velocity.len()
            },
        });
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v + g;
        *p -= cfg.learning_rate * *v;
    }
    Ok(())
}

/// Sum of squared errors over `batch` and the gradient of
/// `Σ (ŷ − y)² / len(batch)`.
pub fn batch_gradient(net: &LstmNetwork, batch: &[&Sample]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(net.config());
    let scale = 2.0 / batch.len() as f64;
    let mut sum_sq = 0.0;
    for s in batch {
        let (y_hat, cache) = forward(net, &s.features)?;
        let e = y_hat - s.label_mps;
        sum_sq += e * e;
        backward_into(net, &cache, scale * e, &mut grads)?;
    }
    Ok((sum_sq, grads))
}

pub fn evaluate(net: &LstmNetwork, samples: &[Sample]) -> Result<Vec<EvalRecord>> {
    samples
        .iter()
        .map(|s| {
            Ok(EvalRecord {
                clip_id: s.clip_id.clone(),
                y: s.label_mps,
                y_hat: predict(net, &s.features)?,
                source_tag: s.source_tag,
            })
        })
        .collect()
}

fn rmse_of(net: &LstmNetwork, samples: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let e = predict(net, &s.features)? - s.label_mps;
        sum += e * e;
    }
    Ok(libm::sqrt(sum / samples.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean squared error of the minibatch predictions made during the epoch.
    pub train_mse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the lowest validation RMSE.
    pub network: LstmNetwork,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl FitOutcome {
    pub fn best_val_rmse(&self) -> f64 {
        self.history[self.best_epoch - 1].val_rmse
    }
}

pub fn fit(
    net: &LstmNetwork,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    fit_with(net, train, val, cfg, |_| {})
}

/// Minibatch SGD with momentum on the squared-error loss, validating after
/// every epoch and stopping once `early_stop_patience` consecutive epochs
/// fail to improve the validation RMSE (the first such epoch when the
/// patience is zero). `on_epoch` sees each epoch's statistics as they land.
pub fn fit_with(
    net: &LstmNetwork,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let d_train = check_feature_dims(train)?;
    let d_val = check_feature_dims(val)?;
    for d in [d_train, d_val] {
        if d != net.config().input_size {
            return Err(Error::InconsistentFeatureDimension {
                expected: net.config().input_size,
                found: d,
            });
        }
    }

    let mut net = net.clone();
    let mut velocity = vec![0.0; net.params().len()];
    let mut rng = Rng::new(cfg.seed).derive(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut sq_err = vec![0.0; train.len()];
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(LstmNetwork, f64, usize)> = None;
    let mut stale_epochs = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros(net.config());
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let s = &train[i];
                let (y_hat, cache) = forward(&net, &s.features)?;
                let e = y_hat - s.label_mps;
                if !e.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                sq_err[i] = e * e;
                backward_into(&net, &cache, scale * e, &mut grads)?;
            }
            sgd_momentum_step(net.params_mut(), grads.as_slice(), &mut velocity, cfg)?;
        }

        let train_mse = sq_err.iter().sum::<f64>() / train.len() as f64;
        let val_rmse = rmse_of(&net, val)?;
        if !train_mse.is_finite() || !val_rmse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let stats = EpochStats {
            epoch,
            train_mse,
            val_rmse,
        };
        on_epoch(&stats);
        history.push(stats);

        if best.as_ref().map_or(true, |(_, b, _)| val_rmse < *b) {
            best = Some((net.clone(), val_rmse, epoch));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }

    let (network, _, best_epoch) = best.expect("at least one epoch runs");
    Ok(FitOutcome {
        network,
        history,
        best_epoch,
        stopped_early,
    })
}
