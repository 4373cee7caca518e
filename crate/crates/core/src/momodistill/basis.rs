use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::datahub::{Dataset, SampleRef, PROFILE_DIM};
use crate::error::{Error, Result};
use crate::metapatch::{patch_rows, ParamBasis, BASIS_NAMES};
use crate::recmodel::{expand_patch_rows, BackboneParams, PatchGate, Scorer, TowerNodes};
use crate::rng::stream_rng;
use crate::tensor::{AdamConfig, AdamState, Eager, Gradients, Graph, ParamSet, Tape, Tensor};

use super::encoder::{encode_nodes, ENC_W1, ENC_W2, ENC_W3};
use super::{AuxEncoderParams, DistillConfig, EpochLoss, TeacherBundle, TrainReport};

/// Scale of the initial basis entries.
pub const BASIS_INIT_STD: f64 = 1e-3;

/// One mini-batch of the basis stage with the frozen backbone's tower inputs
/// already computed.
pub struct BasisBatch {
    pub features: Tensor,
    pub labels: Vec<f64>,
    /// `[devices, code_dim]` uploaded codes of the distinct devices.
    pub codes: Tensor,
    /// `[devices, PROFILE_DIM]`
    pub profiles: Tensor,
    pub row_of_sample: Vec<usize>,
    pub teacher: Option<Vec<f64>>,
}

impl BasisBatch {
    pub fn build(
        scorer: &Scorer,
        data: &Dataset,
        refs: &[SampleRef],
        teachers: &TeacherBundle,
        teacher_probs: Option<&[f64]>,
        code_dim: usize,
    ) -> Result<Self> {
        let batch = data.batch(refs, scorer.config().max_history);
        let features = scorer.features(&batch)?;
        let mut slot: BTreeMap<u32, usize> = BTreeMap::new();
        let mut devices = Vec::new();
        let row_of_sample = refs
            .iter()
            .map(|r| {
                *slot.entry(r.user).or_insert_with(|| {
                    devices.push(r.user as usize);
                    devices.len() - 1
                })
            })
            .collect();
        let mut codes = Vec::with_capacity(devices.len() * code_dim);
        let mut profiles = Vec::with_capacity(devices.len() * PROFILE_DIM);
        for &d in &devices {
            match teachers.code(d) {
                Some(c) => codes.extend_from_slice(c),
                None => codes.extend(std::iter::repeat_n(0.0, code_dim)),
            }
            profiles.extend_from_slice(&data.profiles[d].features);
        }
        Ok(Self {
            features,
            labels: batch.labels,
            codes: Tensor::matrix(devices.len(), code_dim, codes)?,
            profiles: Tensor::matrix(devices.len(), PROFILE_DIM, profiles)?,
            row_of_sample,
            teacher: teacher_probs.map(<[f64]>::to_vec),
        })
    }
}

fn basis_objective<G: Graph>(
    g: &mut G,
    basis: &ParamBasis,
    enc: &AuxEncoderParams,
    backbone: &BackboneParams,
    b: &BasisBatch,
    beta: f64,
    gate: PatchGate,
    trainable: bool,
) -> Result<(G::Node, (f64, f64))> {
    let thetas = BASIS_NAMES.map(|n| g.leaf(n, basis.tensors.get(n).expect("basis").clone(), trainable));
    let w = [ENC_W1, ENC_W2, ENC_W3].map(|n| g.leaf(n, enc.tensors.get(n).expect("encoder").clone(), trainable));
    let codes = g.constant(b.codes.clone());
    let profiles = g.constant(b.profiles.clone());
    let u = encode_nodes(g, &w, &codes, &profiles)?;
    let rows = patch_rows(g, &u, &thetas)?;
    let rows = expand_patch_rows(g, &rows, &b.row_of_sample)?;
    let tower = TowerNodes::bind(g, backbone, false);
    let f = g.constant(b.features.clone());
    let logits = tower.logits(g, &backbone.config, &f, Some(&rows), gate)?;
    let ce = g.bce_with_logits(&logits, b.labels.clone())?;
    let ce = g.mean(&ce)?;
    let ce_v = g.value(&ce).item();
    match &b.teacher {
        Some(p) if beta != 0.0 => {
            let kl = g.kl_bernoulli(&logits, p.clone())?;
            let kl = g.mean(&kl)?;
            let kl_v = g.value(&kl).item();
            let s = g.scale(&kl, beta)?;
            Ok((g.add(&ce, &s)?, (ce_v, kl_v)))
        }
        _ => Ok((ce, (ce_v, 0.0))),
    }
}

/// Loss and gradients of the basis stage on one batch; only the basis and
/// encoder tensors are trainable.
pub fn basis_loss(
    basis: &ParamBasis,
    enc: &AuxEncoderParams,
    backbone: &BackboneParams,
    batch: &BasisBatch,
    beta: f64,
    gate: PatchGate,
) -> Result<((f64, f64, f64), Gradients)> {
    let mut tape = Tape::new();
    let (loss, (ce, kl)) = basis_objective(&mut tape, basis, enc, backbone, batch, beta, gate, true)?;
    let total = tape.value(&loss).item();
    Ok(((ce, kl, total), tape.backward(loss)?))
}

/// Examples with negatives, grouped by device: devices in shuffled order,
/// each device's examples shuffled and kept contiguous, so a mini-batch spans
/// few devices.
fn grouped_examples(data: &Dataset, positives: &[SampleRef], negatives: usize, seed: u64, round: u64, epoch: u64) -> Vec<SampleRef> {
    let mut rng = stream_rng(seed, "basis", round, epoch);
    let examples = data.with_negatives(positives, negatives, &mut rng);
    let mut by_device: BTreeMap<u32, Vec<SampleRef>> = BTreeMap::new();
    for e in examples {
        by_device.entry(e.user).or_default().push(e);
    }
    let mut groups: Vec<Vec<SampleRef>> = by_device.into_values().collect();
    groups.shuffle(&mut rng);
    for g in groups.iter_mut() {
        g.shuffle(&mut rng);
    }
    groups.concat()
}

/// Basis distillation with the backbone fixed: the proxy of each device is
/// the fixed backbone patched by `Theta * U(code, profile)`, trained towards
/// the labels and the device's teacher.
#[allow(clippy::too_many_arguments)]
pub fn distill_basis(
    basis: &ParamBasis,
    enc: &AuxEncoderParams,
    backbone: &BackboneParams,
    teachers: &TeacherBundle,
    data: &Dataset,
    positives: &[SampleRef],
    config: &DistillConfig,
    seed: u64,
    round: u64,
) -> Result<(ParamBasis, AuxEncoderParams, TrainReport)> {
    config.validate()?;
    if positives.is_empty() {
        return Err(Error::Data("no training examples for the basis".into()));
    }
    if enc.code_dim != basis.code_dim {
        return Err(Error::shape("distill_basis", format!("encoder width {} vs basis width {}", enc.code_dim, basis.code_dim)));
    }
    let scorer = Scorer::new(backbone)?;
    let mut params = ParamSet::new();
    params.extend(basis.tensors.clone());
    params.extend(enc.tensors.clone());
    let split = |p: &ParamSet| -> Result<(ParamBasis, AuxEncoderParams)> {
        let mut b = ParamSet::new();
        let mut e = ParamSet::new();
        for (name, t) in p.iter() {
            if name.starts_with("basis.") {
                b.insert(name, t.clone());
            } else {
                e.insert(name, t.clone());
            }
        }
        Ok((
            ParamBasis::from_tensors(&backbone.config, basis.code_dim, b)?,
            AuxEncoderParams::from_tensors(e)?,
        ))
    };
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut report = TrainReport::default();
    let use_kl = config.beta != 0.0;
    let mut first: Option<Vec<BasisBatch>> = None;
    let measure = |batches: &[BasisBatch], p: &ParamSet| -> Result<f64> {
        let (b, e) = split(p)?;
        let mut g = Eager;
        let (mut acc, mut n) = (0.0, 0usize);
        for bb in batches {
            let (loss, _) = basis_objective(&mut g, &b, &e, backbone, bb, config.beta, config.gate, false)?;
            acc += g.value(&loss).item() * bb.labels.len() as f64;
            n += bb.labels.len();
        }
        Ok(acc / n as f64)
    };
    for epoch in 0..config.epochs {
        let examples = grouped_examples(data, positives, config.negatives, seed, round, epoch as u64);
        let probs = if use_kl {
            let (p, fb) = teachers.probabilities(data, &examples, config.gate)?;
            if epoch == 0 {
                report.fallback_devices = fb;
            }
            Some(p)
        } else {
            None
        };
        let mut batches = Vec::new();
        for (chunk, start) in examples.chunks(config.batch_size).zip((0..examples.len()).step_by(config.batch_size)) {
            let p = probs.as_deref().map(|p| &p[start..start + chunk.len()]);
            batches.push(BasisBatch::build(&scorer, data, chunk, teachers, p, basis.code_dim)?);
        }
        if epoch == 0 && config.track_objective {
            report.objective_before = Some(measure(&batches, &params)?);
        }
        let (mut ce, mut kl, mut total, mut n) = (0.0, 0.0, 0.0, 0usize);
        for bb in &batches {
            let (b, e) = split(&params)?;
            let ((c, k, t), grads) = basis_loss(&b, &e, backbone, bb, config.beta, config.gate)?;
            if !t.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!("basis training, round {round} epoch {epoch}")));
            }
            adam.step(&mut params, &grads)?;
            report.steps += 1;
            let w = bb.labels.len() as f64;
            ce += c * w;
            kl += k * w;
            total += t * w;
            n += bb.labels.len();
        }
        if !params.all_finite() {
            return Err(Error::NonFinite(format!("basis parameters, round {round} epoch {epoch}")));
        }
        let n = n as f64;
        report.epochs.push(EpochLoss {
            epoch,
            ce: ce / n,
            kl: kl / n,
            total: total / n,
        });
        if epoch == 0 && config.track_objective {
            first = Some(batches);
        }
    }
    if let Some(batches) = first {
        report.objective_after = Some(measure(&batches, &params)?);
    }
    let (b, e) = split(&params)?;
    Ok((b, e, report))
}

/// Initial basis and encoder: basis entries `N(0, BASIS_INIT_STD^2)`, encoder
/// with `W1 = 0`, then one basis-distillation pass in which every device code
/// is zero and the teacher is the pretrained cloud model.
pub fn pretrain_basis(
    backbone: Arc<BackboneParams>,
    data: &Dataset,
    positives: &[SampleRef],
    code_dim: usize,
    config: &DistillConfig,
    seed: u64,
) -> Result<(ParamBasis, AuxEncoderParams, TrainReport)> {
    let mut rng = stream_rng(seed, "basis-init", 0, 0);
    let basis = ParamBasis::random(&backbone.config, code_dim, BASIS_INIT_STD, &mut rng)?;
    let enc = AuxEncoderParams::init(code_dim, PROFILE_DIM, &mut rng);
    let teachers = TeacherBundle::new(backbone.clone(), Arc::new(basis.clone()), &[])?;
    let (b, e, mut report) = distill_basis(&basis, &enc, &backbone, &teachers, data, positives, config, seed, 0)?;
    // every device is a zero-code device here, not a missing upload
    report.fallback_devices = 0;
    Ok((b, e, report))
}
