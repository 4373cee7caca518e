use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datahub::{Dataset, SampleRef};
use crate::error::{Error, Result};
use crate::recmodel::{BackboneParams, EmbedNodes, PatchGate, TowerNodes};
use crate::rng::stream_rng;
use crate::tensor::{AdamConfig, AdamState, Gradients, Graph, Tape};

use super::TeacherBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the KL term against the teacher.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sampled unseen items per click.
    pub negatives: usize,
    pub gate: PatchGate,
    /// Evaluate the full objective on the first epoch's examples before and
    /// after training.
    pub track_objective: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            lr: 1e-3,
            batch_size: 1024,
            epochs: 1,
            negatives: 4,
            gate: PatchGate::ALL_ON,
            track_objective: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.lr >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config("beta and lr must be >= 0, batch size positive".into()));
        }
        Ok(())
    }
}

/// Mean losses over one epoch's mini-batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ce: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub steps: u64,
    /// Examples whose device had no uploaded code (teacher = cloud model).
    pub fallback_devices: usize,
    pub objective_before: Option<f64>,
    pub objective_after: Option<f64>,
}

/// CE (and, with teacher probabilities, `beta * KL`) of the backbone on one
/// batch. Every backbone tensor is trainable.
pub fn backbone_loss(
    params: &BackboneParams,
    data: &Dataset,
    refs: &[SampleRef],
    teacher: Option<(&[f64], f64)>,
) -> Result<((f64, f64, f64), Gradients)> {
    let mut tape = Tape::new();
    let (loss, parts) = backbone_objective(&mut tape, params, data, refs, teacher, true)?;
    let total = tape.value(&loss).item();
    Ok(((parts.0, parts.1, total), tape.backward(loss)?))
}

fn backbone_objective<G: Graph>(
    g: &mut G,
    params: &BackboneParams,
    data: &Dataset,
    refs: &[SampleRef],
    teacher: Option<(&[f64], f64)>,
    trainable: bool,
) -> Result<(G::Node, (f64, f64))> {
    let batch = data.batch(refs, params.config.max_history);
    batch.validate(&params.config)?;
    let embed = EmbedNodes::bind(g, params, trainable);
    let proj = embed.project(g)?;
    let e = embed.embed(g, &proj, &params.config, &batch)?;
    let tower = TowerNodes::bind(g, params, trainable);
    let logits = tower.logits(g, &params.config, &e.features, None, PatchGate::ALL_OFF)?;
    let ce = g.bce_with_logits(&logits, batch.labels.clone())?;
    let ce = g.mean(&ce)?;
    let ce_v = g.value(&ce).item();
    match teacher {
        Some((p, beta)) if beta != 0.0 => {
            let kl = g.kl_bernoulli(&logits, p.to_vec())?;
            let kl = g.mean(&kl)?;
            let kl_v = g.value(&kl).item();
            let s = g.scale(&kl, beta)?;
            Ok((g.add(&ce, &s)?, (ce_v, kl_v)))
        }
        _ => Ok((ce, (ce_v, 0.0))),
    }
}

fn objective(params: &BackboneParams, data: &Dataset, refs: &[SampleRef], teacher: Option<(&[f64], f64)>, chunk: usize) -> Result<f64> {
    let mut g = crate::tensor::Eager;
    let mut acc = 0.0;
    for (c, idx) in refs.chunks(chunk).zip((0..refs.len()).step_by(chunk)) {
        let t = teacher.map(|(p, b)| (&p[idx..idx + c.len()], b));
        let (loss, _) = backbone_objective(&mut g, params, data, c, t, false)?;
        acc += g.value(&loss).item() * c.len() as f64;
    }
    Ok(acc / refs.len() as f64)
}

/// Shared loop of [`incremental_train`] and [`distill_backbone`]: identical
/// example streams, with the KL term added only when a teacher is given and
/// `beta != 0`.
fn train_backbone(
    backbone: &BackboneParams,
    data: &Dataset,
    positives: &[SampleRef],
    config: &DistillConfig,
    teacher: Option<&TeacherBundle>,
    seed: u64,
    round: u64,
) -> Result<(BackboneParams, TrainReport)> {
    config.validate()?;
    if positives.is_empty() {
        return Err(Error::Data("no training examples for the backbone".into()));
    }
    let mut params = backbone.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut report = TrainReport::default();
    let use_kl = teacher.is_some() && config.beta != 0.0;
    let mut first: Option<(Vec<SampleRef>, Option<Vec<f64>>)> = None;
    for epoch in 0..config.epochs {
        let mut rng = stream_rng(seed, "backbone", round, epoch as u64);
        let mut examples = data.with_negatives(positives, config.negatives, &mut rng);
        examples.shuffle(&mut rng);
        let probs = match teacher {
            Some(t) if use_kl => {
                let (p, fb) = t.probabilities(data, &examples, config.gate)?;
                if epoch == 0 {
                    report.fallback_devices = fb;
                }
                Some(p)
            }
            _ => None,
        };
        if epoch == 0 && config.track_objective {
            let t = probs.as_deref().map(|p| (p, config.beta));
            report.objective_before = Some(objective(&params, data, &examples, t, config.batch_size)?);
            first = Some((examples.clone(), probs.clone()));
        }
        let (mut ce, mut kl, mut total, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (b, start) in examples.chunks(config.batch_size).zip((0..examples.len()).step_by(config.batch_size)) {
            let t = probs.as_deref().map(|p| (&p[start..start + b.len()], config.beta));
            let ((c, k, tot), grads) = backbone_loss(&params, data, b, t)?;
            if !tot.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!("backbone training, round {round} epoch {epoch}")));
            }
            adam.step(&mut params.tensors, &grads)?;
            report.steps += 1;
            let w = b.len() as f64;
            ce += c * w;
            kl += k * w;
            total += tot * w;
            n += b.len();
        }
        if !params.tensors.all_finite() {
            return Err(Error::NonFinite(format!("backbone parameters, round {round} epoch {epoch}")));
        }
        let n = n as f64;
        report.epochs.push(EpochLoss {
            epoch,
            ce: ce / n,
            kl: kl / n,
            total: total / n,
        });
    }
    if let Some((examples, probs)) = first {
        let t = probs.as_deref().map(|p| (p, config.beta));
        report.objective_after = Some(objective(&params, data, &examples, t, config.batch_size)?);
    }
    Ok((params, report))
}

/// Model-over-data update: Adam on the pointwise cross-entropy alone.
pub fn incremental_train(
    backbone: &BackboneParams,
    data: &Dataset,
    positives: &[SampleRef],
    config: &DistillConfig,
    seed: u64,
    round: u64,
) -> Result<(BackboneParams, TrainReport)> {
    train_backbone(backbone, data, positives, config, None, seed, round)
}

/// Backbone distillation: the student starts from the teacher snapshot and
/// minimises `CE + beta * KL(teacher || student)`, where each example's
/// teacher is the snapshot patched with its device's uploaded code.
pub fn distill_backbone(
    teachers: &TeacherBundle,
    data: &Dataset,
    positives: &[SampleRef],
    config: &DistillConfig,
    seed: u64,
    round: u64,
) -> Result<(BackboneParams, TrainReport)> {
    train_backbone(&teachers.backbone, data, positives, config, Some(teachers), seed, round)
}
