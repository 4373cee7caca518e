use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datahub::{Dataset, SampleRef};
use crate::error::{Error, Result};
use crate::recmodel::{BackboneParams, PatchGate, Scorer, TowerNodes};
use crate::rng::stream_rng;
use crate::tensor::{AdamConfig, AdamState, Gradients, Graph, ParamSet, Tape, Tensor};

use super::{patch_rows, ParamBasis, MetaPatchVector};

/// Name of the code on the device tape; the only trainable tensor there.
pub const CODE_PARAM: &str = "code";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sampled unseen items per local click.
    pub negatives: usize,
    pub gate: PatchGate,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 1,
            negatives: 4,
            gate: PatchGate::ALL_ON,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("device lr must be >= 0, batch size and epochs positive".into()));
        }
        Ok(())
    }
}

/// One simulated device: its code and this round's local clicks.
#[derive(Clone, Debug)]
pub struct DeviceState {
    pub code: MetaPatchVector,
    /// Local positives in chronological order.
    pub buffer: Vec<SampleRef>,
    pub steps: u64,
}

impl DeviceState {
    pub fn new(device: usize, code_dim: usize) -> Self {
        Self {
            code: MetaPatchVector::zeros(device, code_dim),
            buffer: Vec::new(),
            steps: 0,
        }
    }

    pub fn device(&self) -> usize {
        self.code.device
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceStatus {
    Trained,
    /// Nothing to learn from; the code is left as is.
    Empty,
    /// A non-finite loss or code appeared; the code was restored.
    Reverted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceOutcome {
    pub device: usize,
    pub status: DeviceStatus,
    /// Mean loss over the first epoch's examples before and after training.
    pub loss_before: f64,
    pub loss_after: f64,
    pub steps: u64,
}

/// Frozen cloud snapshot shared read-only by all devices of a round.
pub struct DeviceContext<'a> {
    pub data: &'a Dataset,
    pub backbone: &'a BackboneParams,
    pub scorer: &'a Scorer,
    pub basis: &'a ParamBasis,
}

/// Mean pointwise cross-entropy of the patched model over `features` rows,
/// with the code as the only trainable tensor.
pub fn local_loss(
    ctx: &DeviceContext,
    code: &[f64],
    features: &Tensor,
    labels: &[f64],
    gate: PatchGate,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let c = tape.param(CODE_PARAM, Tensor::matrix(1, code.len(), code.to_vec())?);
    let thetas = [0, 1, 2].map(|l| tape.constant(ctx.basis.theta(l).clone()));
    let rows = patch_rows(&mut tape, &c, &thetas)?;
    let n = labels.len();
    let rows = crate::recmodel::expand_patch_rows(&mut tape, &rows, &vec![0; n])?;
    let tower = TowerNodes::bind(&mut tape, ctx.backbone, false);
    let f = tape.constant(features.clone());
    let logits = tower.logits(&mut tape, &ctx.backbone.config, &f, Some(&rows), gate)?;
    let l = tape.bce_with_logits(&logits, labels.to_vec())?;
    let loss = tape.mean(&l)?;
    let value = tape.value(&loss).item();
    Ok((value, tape.backward(loss)?))
}

fn rows_of(t: &Tensor, idx: &[usize]) -> Tensor {
    let (_, c) = t.dims2().expect("features are rank 2");
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), c, data).expect("row copy")
}

/// Trains the device code on its buffer with the backbone and basis frozen.
///
/// Every epoch pairs each local click with freshly drawn negatives and walks
/// the shuffled examples in mini-batches. Randomness comes from a stream keyed
/// by `(seed, device, round)`, so devices can run in any order.
pub fn personalize(
    state: &mut DeviceState,
    ctx: &DeviceContext,
    config: &LocalTrainConfig,
    seed: u64,
    round: u64,
) -> Result<DeviceOutcome> {
    config.validate()?;
    let device = state.device();
    if state.buffer.is_empty() {
        log::debug!("device {device}: empty buffer, skipping");
        return Ok(DeviceOutcome {
            device,
            status: DeviceStatus::Empty,
            loss_before: f64::NAN,
            loss_after: f64::NAN,
            steps: 0,
        });
    }
    let mut rng = stream_rng(seed, "device", device as u64, round);
    let saved = state.code.clone();
    let mut params = ParamSet::new();
    params.insert(CODE_PARAM, Tensor::matrix(1, state.code.values.len(), state.code.values.clone())?);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let max_history = ctx.backbone.config.max_history;

    let mut first_epoch: Option<(Tensor, Vec<f64>)> = None;
    let mut loss_before = f64::NAN;
    let mut steps = 0;
    let mut failed = false;
    'epochs: for _ in 0..config.epochs {
        let mut examples = ctx.data.with_negatives(&state.buffer, config.negatives, &mut rng);
        examples.shuffle(&mut rng);
        let batch = ctx.data.batch(&examples, max_history);
        let features = ctx.scorer.features(&batch)?;
        if first_epoch.is_none() {
            let code = params.get(CODE_PARAM)?.data().to_vec();
            loss_before = local_loss(ctx, &code, &features, &batch.labels, config.gate)?.0;
            first_epoch = Some((features.clone(), batch.labels.clone()));
        }
        let order: Vec<usize> = (0..examples.len()).collect();
        for chunk in order.chunks(config.batch_size) {
            let f = rows_of(&features, chunk);
            let labels: Vec<f64> = chunk.iter().map(|&i| batch.labels[i]).collect();
            let code = params.get(CODE_PARAM)?.data().to_vec();
            let (loss, grads) = local_loss(ctx, &code, &f, &labels, config.gate)?;
            if !loss.is_finite() || !grads.all_finite() {
                failed = true;
                break 'epochs;
            }
            adam.step(&mut params, &grads)?;
            steps += 1;
            if !params.all_finite() {
                failed = true;
                break 'epochs;
            }
        }
    }
    if failed {
        log::warn!("device {device}: non-finite local loss in round {round}, code reverted");
        state.code = saved;
        return Ok(DeviceOutcome {
            device,
            status: DeviceStatus::Reverted,
            loss_before,
            loss_after: f64::NAN,
            steps,
        });
    }
    state.code.values = params.get(CODE_PARAM)?.data().to_vec();
    state.steps += steps;
    let (f, y) = first_epoch.expect("at least one epoch");
    let loss_after = local_loss(ctx, &state.code.values, &f, &y, config.gate)?.0;
    Ok(DeviceOutcome {
        device,
        status: DeviceStatus::Trained,
        loss_before,
        loss_after,
        steps,
    })
}
