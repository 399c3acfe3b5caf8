//! Cross-entropy training with a newbob learning-rate schedule, plus the
//! fine-tuning variant used for adaptation.
//!
//! Both schedules share one SGD core: shuffle with a seeded ChaCha stream,
//! take minibatch gradient steps, evaluate CV frame error once per epoch,
//! and keep a snapshot of the best-CV parameters seen so far. Relative CV
//! improvement below [`IMPROVEMENT_THRESHOLD`] counts a strike (and, for
//! newbob, halves the learning rate); [`STOP_STRIKES`] successive strikes
//! stop the run. The best snapshot is returned, never the last epoch.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::forward::forward_cache;
use crate::net::params::Parameters;
use crate::net::spec::{pooled_positions, ConvSpec, Head, NetworkSpec};
use crate::net::Scalar;

/// Minimum relative CV frame-error improvement that counts as progress.
pub const IMPROVEMENT_THRESHOLD: f64 = 0.005;
/// Successive non-improvements before training stops.
pub const STOP_STRIKES: u32 = 2;

/// Supervised training hyperparameters (newbob schedule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs that run at lr0 before halving decisions begin.
    pub constant_epochs: u32,
    pub minibatch: usize,
    /// L2 decay toward zero, applied to weights only.
    pub l2: f64,
    pub max_epochs: u32,
    /// Seed for the shuffling stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.008,
            constant_epochs: 4,
            minibatch: 256,
            l2: 0.0,
            max_epochs: 20,
            seed: 0,
        }
    }
}

/// Adaptation hyperparameters. The learning rate is halved every epoch
/// starting from lr0, and early stopping watches CV from the original
/// domain so adaptation cannot silently trade away matched accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub lr0: f64,
    pub l2: f64,
    pub minibatch: usize,
    pub max_epochs: u32,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lr0: 0.004,
            l2: 0.001,
            minibatch: 256,
            max_epochs: 8,
            seed: 0,
        }
    }
}

fn validate_sgd(lr0: f64, l2: f64, minibatch: usize, label: &str) -> Result<()> {
    if !lr0.is_finite() || lr0 < 0.0 {
        return Err(Error::config(format!(
            "{label}.lr0 must be finite and non-negative"
        )));
    }
    if !l2.is_finite() || l2 < 0.0 {
        return Err(Error::config(format!(
            "{label}.l2 must be finite and non-negative"
        )));
    }
    if minibatch == 0 {
        return Err(Error::config(format!("{label}.minibatch must be positive")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sgd(self.lr0, self.l2, self.minibatch, "train")?;
        if self.constant_epochs == 0 {
            return Err(Error::config(
                "train.constant_epochs must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sgd(self.lr0, self.l2, self.minibatch, "adapt")
    }
}

/// Stacked input rows with one label per row.
#[derive(Debug, Clone)]
pub struct FrameSet<F> {
    pub inputs: Array2<F>,
    pub labels: Vec<u32>,
}

impl<F: Scalar> FrameSet<F> {
    pub fn new(inputs: Array2<F>, labels: Vec<u32>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::input(format!(
                "frame set has {} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(FrameSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate_for(&self, spec: &NetworkSpec, label: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::input(format!("{label} frame set is empty")));
        }
        if self.inputs.ncols() != spec.input_dim() {
            return Err(Error::input(format!(
                "{label} frame set width {} does not match spec input_dim {}",
                self.inputs.ncols(),
                spec.input_dim()
            )));
        }
        if let Some(&bad) = self
            .labels
            .iter()
            .find(|&&l| l as usize >= spec.num_classes)
        {
            return Err(Error::input(format!(
                "{label} frame set has label {bad}, but the net has {} classes",
                spec.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub frame_error_rate: f64,
    pub mean_cross_entropy: f64,
}

/// Argmax with ties resolved to the lowest class index.
pub(crate) fn argmax_row<F: Scalar>(row: ndarray::ArrayView1<F>) -> u32 {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best as u32
}

/// Frame error rate and mean cross-entropy over a frame set.
pub fn evaluate<F: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<F>,
    set: &FrameSet<F>,
) -> Result<Metrics> {
    set.validate_for(spec, "evaluation")?;
    let mut errors = 0usize;
    let mut ce = 0.0f64;
    let chunk = 512usize;
    let n = set.len();
    let mut at = 0usize;
    while at < n {
        let end = (at + chunk).min(n);
        let x = set.inputs.slice(ndarray::s![at..end, ..]);
        let post = forward_cache(spec, params, &x)?.posteriors;
        for (r, &label) in set.labels[at..end].iter().enumerate() {
            if argmax_row(post.row(r)) != label {
                errors += 1;
            }
            ce -= post[[r, label as usize]].to_f64().ln();
        }
        at = end;
    }
    Ok(Metrics {
        frame_error_rate: errors as f64 / n as f64,
        mean_cross_entropy: ce / n as f64,
    })
}

/// Mean cross-entropy over a batch and its gradient for every parameter.
pub fn gradients<F: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<F>,
    inputs: &ndarray::ArrayView2<F>,
    labels: &[u32],
) -> Result<(f64, Parameters<F>)> {
    if inputs.nrows() != labels.len() {
        return Err(Error::input(format!(
            "gradient batch has {} rows but {} labels",
            inputs.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= spec.num_classes) {
        return Err(Error::input(format!(
            "gradient batch has label {bad}, but the net has {} classes",
            spec.num_classes
        )));
    }
    let cache = forward_cache(spec, params, inputs)?;
    let rows = inputs.nrows();
    let inv_rows = F::from_f64(1.0 / rows as f64);

    let mut ce = 0.0f64;
    let mut dlogits = cache.posteriors.clone();
    for (r, &label) in labels.iter().enumerate() {
        ce -= cache.posteriors[[r, label as usize]].to_f64().ln();
        dlogits[[r, label as usize]] = dlogits[[r, label as usize]] - F::one();
    }
    dlogits.mapv_inplace(|v| v * inv_rows);
    ce /= rows as f64;

    let mut grads: Parameters<F> = Parameters::zeros_like(spec)?;
    let last_hidden = cache
        .hidden
        .last()
        .expect("spec has at least one hidden layer");
    grads.output.w = last_hidden.t().dot(&dlogits);
    grads.output.b = dlogits.sum_axis(ndarray::Axis(0));
    let mut dact = dlogits.dot(&params.output.w.t());

    for i in (0..params.dense.len()).rev() {
        let act = &cache.hidden[i];
        let mut dz = dact;
        ndarray::Zip::from(&mut dz).and(act).for_each(|g, &a| {
            *g = *g * a * (F::one() - a);
        });
        let below = if i == 0 {
            &cache.head_out
        } else {
            &cache.hidden[i - 1]
        };
        grads.dense[i].w = below.t().dot(&dz);
        grads.dense[i].b = dz.sum_axis(ndarray::Axis(0));
        dact = dz.dot(&params.dense[i].w.t());
    }

    match &spec.head {
        Head::None => {}
        Head::Freq { conv } => {
            let branch = cache.freq.as_ref().expect("freq head was evaluated");
            let (gw, gb) = branch_grads(branch, conv, &dact.view(), 0);
            let g = grads.freq.as_mut().expect("zeros_like matches spec");
            g.w = gw;
            g.b = gb;
        }
        Head::TimeFreq { time, freq } => {
            let tcache = cache.time.as_ref().expect("time head was evaluated");
            let fcache = cache.freq.as_ref().expect("freq head was evaluated");
            let (gw, gb) = branch_grads(tcache, time, &dact.view(), 0);
            let g = grads.time.as_mut().expect("zeros_like matches spec");
            g.w = gw;
            g.b = gb;
            let (gw, gb) = branch_grads(fcache, freq, &dact.view(), tcache.act.ncols());
            let g = grads.freq.as_mut().expect("zeros_like matches spec");
            g.w = gw;
            g.b = gb;
        }
    }
    Ok((ce, grads))
}

/// Routes gradients through sigmoid and max pooling back to the patch
/// matrix product of one convolution branch. `col_offset` locates the
/// branch inside the concatenated head output.
fn branch_grads<F: Scalar>(
    branch: &crate::net::forward::BranchCache<F>,
    conv: &ConvSpec,
    dhead: &ndarray::ArrayView2<F>,
    col_offset: usize,
) -> (Array2<F>, ndarray::Array1<F>) {
    let rows = branch.act.nrows();
    let pooled = pooled_positions(branch.positions, conv.pool_width);
    let mut dlin = Array2::<F>::zeros((rows * branch.positions, conv.num_filters));
    for r in 0..rows {
        for f in 0..conv.num_filters {
            for j in 0..pooled {
                let col = f * pooled + j;
                let a = branch.act[[r, col]];
                let g = dhead[[r, col_offset + col]] * a * (F::one() - a);
                let p = branch.argmax[[r, col]];
                dlin[[r * branch.positions + p, f]] = dlin[[r * branch.positions + p, f]] + g;
            }
        }
    }
    let gw = branch.patches.t().dot(&dlin);
    let gb = dlin.sum_axis(ndarray::Axis(0));
    (gw, gb)
}

/// One epoch's entry in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_ce: f64,
    pub cv_frame_error: f64,
}

pub type TrainingLog = Vec<EpochRecord>;

enum Schedule {
    Newbob { constant_epochs: u32 },
    HalveEachEpoch,
}

#[allow(clippy::too_many_arguments)]
fn run_sgd<F: Scalar>(
    spec: &NetworkSpec,
    init: &Parameters<F>,
    train_set: &FrameSet<F>,
    cv_set: &FrameSet<F>,
    lr0: f64,
    l2: f64,
    minibatch: usize,
    max_epochs: u32,
    seed: u64,
    schedule: Schedule,
) -> Result<(Parameters<F>, TrainingLog)> {
    spec.validate()?;
    init.validate_shapes(spec)?;
    train_set.validate_for(spec, "training")?;
    cv_set.validate_for(spec, "cv")?;

    let mut cur = init.clone();
    let mut best: Option<(f64, Parameters<F>)> = None;
    let mut log = TrainingLog::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lr = lr0;
    let mut strikes = 0u32;
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Array2::<F>::zeros((minibatch.min(n), spec.input_dim()));

    for epoch in 1..=max_epochs {
        if let Schedule::HalveEachEpoch = schedule {
            lr = lr0 * 0.5f64.powi(epoch as i32 - 1);
        }
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0f64;
        for batch in order.chunks(minibatch) {
            let mut x = batch_x.slice_mut(ndarray::s![..batch.len(), ..]);
            let mut labels = Vec::with_capacity(batch.len());
            for (r, &idx) in batch.iter().enumerate() {
                x.row_mut(r).assign(&train_set.inputs.row(idx));
                labels.push(train_set.labels[idx]);
            }
            let (ce, grads) = gradients(spec, &cur, &x.view(), &labels)?;
            if !ce.is_finite() {
                return Err(Error::runtime(format!(
                    "training diverged at epoch {epoch}: non-finite cross-entropy"
                )));
            }
            ce_sum += ce * batch.len() as f64;
            cur.sgd_step(&grads, lr, l2);
        }
        if !cur.all_finite() {
            return Err(Error::runtime(format!(
                "training diverged at epoch {epoch}: non-finite parameters"
            )));
        }
        let train_ce = ce_sum / n as f64;
        let cv = evaluate(spec, &cur, cv_set)?.frame_error_rate;
        log.push(EpochRecord {
            epoch,
            lr,
            train_ce,
            cv_frame_error: cv,
        });

        let prev_best = best.as_ref().map(|(e, _)| *e);
        if prev_best.map_or(true, |b| cv < b) {
            best = Some((cv, cur.clone()));
        }
        let improved = prev_best.map_or(true, |b| cv <= b * (1.0 - IMPROVEMENT_THRESHOLD));
        let deciding = match schedule {
            Schedule::Newbob { constant_epochs } => epoch > constant_epochs,
            Schedule::HalveEachEpoch => true,
        };
        if deciding && !improved {
            strikes += 1;
            if let Schedule::Newbob { .. } = schedule {
                lr *= 0.5;
            }
        } else if improved {
            strikes = 0;
        }
        if strikes >= STOP_STRIKES {
            break;
        }
    }
    match best {
        Some((_, params)) => Ok((params, log)),
        None => Ok((cur, log)),
    }
}

/// Supervised training with the newbob schedule. Returns the parameters of
/// the best-CV epoch and the per-epoch log.
pub fn train<F: Scalar>(
    spec: &NetworkSpec,
    init: &Parameters<F>,
    train_set: &FrameSet<F>,
    cv_set: &FrameSet<F>,
    cfg: &TrainConfig,
) -> Result<(Parameters<F>, TrainingLog)> {
    cfg.validate()?;
    run_sgd(
        spec,
        init,
        train_set,
        cv_set,
        cfg.lr0,
        cfg.l2,
        cfg.minibatch,
        cfg.max_epochs,
        cfg.seed,
        Schedule::Newbob {
            constant_epochs: cfg.constant_epochs,
        },
    )
}

/// Fine-tunes on an adaptation set while early stopping watches a CV set
/// from the original domain.
pub fn adapt_finetune<F: Scalar>(
    spec: &NetworkSpec,
    init: &Parameters<F>,
    adapt_set: &FrameSet<F>,
    cv_set: &FrameSet<F>,
    cfg: &AdaptConfig,
) -> Result<(Parameters<F>, TrainingLog)> {
    cfg.validate()?;
    run_sgd(
        spec,
        init,
        adapt_set,
        cv_set,
        cfg.lr0,
        cfg.l2,
        cfg.minibatch,
        cfg.max_epochs,
        cfg.seed,
        Schedule::HalveEachEpoch,
    )
}
