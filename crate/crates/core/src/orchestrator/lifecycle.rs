use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datahub::{
    build_splits, filter_min_interactions, load_dataset, parse_movielens, synth_generate, Dataset, SampleRef,
    Splits,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, group_users, metrics_rows, EvalReport, GroupPartition, METRICS_HEADER};
use crate::metapatch::{
    decode_recycle, encode_recycle, generate_patches, personalize, DeviceContext, DeviceState, DeviceStatus,
    MetaPatchVector, ParamBasis,
};
use crate::momodistill::{
    distill_backbone, distill_basis, encode, encode_loss_trace, incremental_train, pretrain_basis, AuxEncoderParams,
    EpochLoss, TeacherBundle, TrainReport,
};
use crate::recmodel::{BackboneConfig, BackboneParams, Scorer};
use crate::rng::stream_rng;

use super::evaluate::score_cases;
use super::{CodeCarry, Mode, RunConfig, Source};

/// Dataset, splits and long-tail groups of a run.
pub struct Prepared {
    pub data: Dataset,
    pub splits: Splits,
    pub partition: GroupPartition,
}

pub fn load_source(source: &Source) -> Result<Dataset> {
    match source {
        Source::Synthetic(spec) => Ok(synth_generate(spec)?.0),
        Source::MovieLens { dir, min_interactions } => {
            let ml = parse_movielens(dir)?;
            let (log, profiles, report) = filter_min_interactions(&ml.log, &ml.profiles, *min_interactions)?;
            log::info!(
                "movielens: {} users, {} items, {} interactions after filtering ({} users, {} items removed)",
                log.n_users,
                log.n_items,
                log.len(),
                report.removed_users,
                report.removed_items
            );
            Dataset::new(log, profiles)
        }
        Source::Stored(dir) => Ok(load_dataset(dir)?.0),
    }
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let data = load_source(&config.source)?;
    prepare_with(config, data)
}

pub fn prepare_with(config: &RunConfig, data: Dataset) -> Result<Prepared> {
    let splits = build_splits(&data, &config.split, config.seed)?;
    let partition = group_users(&splits.train_counts(), config.groups);
    Ok(Prepared { data, splits, partition })
}

/// Device phase summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DevicePhaseStats {
    pub trained: usize,
    pub empty: usize,
    pub reverted: usize,
    pub mean_loss_before: f64,
    pub mean_loss_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 0 is pretraining.
    pub round: usize,
    pub stages: Vec<String>,
    pub devices: Option<DevicePhaseStats>,
    pub backbone: Option<TrainReport>,
    pub basis: Option<TrainReport>,
    pub evals: BTreeMap<String, EvalReport>,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    PretrainBackbone,
    PretrainBasis,
    EvalPretrain,
    Device(usize),
    Incremental(usize),
    DistillBackbone(usize),
    DistillBasis(usize),
    Eval(usize),
}

impl Stage {
    pub fn label(self) -> String {
        match self {
            Stage::PretrainBackbone => "pretrain-backbone".into(),
            Stage::PretrainBasis => "pretrain-basis".into(),
            Stage::EvalPretrain => "eval-pretrain".into(),
            Stage::Device(t) => format!("r{t}-device"),
            Stage::Incremental(t) => format!("r{t}-incremental"),
            Stage::DistillBackbone(t) => format!("r{t}-distill-backbone"),
            Stage::DistillBasis(t) => format!("r{t}-distill-basis"),
            Stage::Eval(t) => format!("r{t}-eval"),
        }
    }

    fn round(self) -> usize {
        match self {
            Stage::PretrainBackbone | Stage::PretrainBasis | Stage::EvalPretrain => 0,
            Stage::Device(t) | Stage::Incremental(t) | Stage::DistillBackbone(t) | Stage::DistillBasis(t) | Stage::Eval(t) => t,
        }
    }
}

/// Stages of a run in execution order. Within a round the backbone is always
/// distilled before the basis.
pub fn plan(config: &RunConfig) -> Vec<Stage> {
    let mut s = vec![Stage::PretrainBackbone, Stage::PretrainBasis, Stage::EvalPretrain];
    for t in 1..=config.rounds() {
        match config.mode {
            Mode::BaselineIncremental => s.push(Stage::Incremental(t)),
            Mode::DcclEOnly => s.push(Stage::Device(t)),
            Mode::DcclFull => {
                s.push(Stage::Device(t));
                s.push(Stage::DistillBackbone(t));
                s.push(Stage::DistillBasis(t));
            }
        }
        s.push(Stage::Eval(t));
    }
    s
}

pub const STATE_DIR: &str = "state";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Progress {
    completed: Vec<String>,
    reports: Vec<RoundReport>,
    current: Option<RoundReport>,
    metrics: String,
    trace: Vec<EpochLoss>,
}

/// Everything a stage may read from earlier stages.
struct Live {
    backbone: Option<Arc<BackboneParams>>,
    basis: Option<Arc<ParamBasis>>,
    encoder: Option<AuxEncoderParams>,
    /// Current code of every device that has one.
    codes: BTreeMap<usize, Vec<f64>>,
    /// This round's recycle table.
    uploads: Vec<MetaPatchVector>,
    /// Backbone distilled this round, pending the basis stage.
    student: Option<Arc<BackboneParams>>,
}

fn codes_to_vectors(codes: &BTreeMap<usize, Vec<f64>>) -> Vec<MetaPatchVector> {
    codes
        .iter()
        .map(|(&device, v)| MetaPatchVector {
            device,
            values: v.clone(),
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Live {
    fn empty() -> Self {
        Self {
            backbone: None,
            basis: None,
            encoder: None,
            codes: BTreeMap::new(),
            uploads: Vec::new(),
            student: None,
        }
    }

    fn save(&self, dir: &Path, code_dim: usize) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sync = |name: &str, save: &dyn Fn(&Path) -> Result<()>, present: bool| -> Result<()> {
            let p = dir.join(name);
            if present {
                let tmp = p.with_extension("tmp");
                save(&tmp)?;
                fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))
            } else if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))
            } else {
                Ok(())
            }
        };
        sync("backbone.ckpt", &|p| self.backbone.as_ref().expect("present").save(p), self.backbone.is_some())?;
        sync("student.ckpt", &|p| self.student.as_ref().expect("present").save(p), self.student.is_some())?;
        sync(
            "basis.ckpt",
            &|p| {
                let b = self.backbone.as_ref().expect("basis saved with a backbone");
                self.basis.as_ref().expect("present").save(p, &b.config)
            },
            self.basis.is_some(),
        )?;
        sync("encoder.ckpt", &|p| self.encoder.as_ref().expect("present").save(p), self.encoder.is_some())?;
        write(&dir.join("codes.csv"), &encode_recycle(&codes_to_vectors(&self.codes), code_dim))?;
        write(&dir.join("uploads.csv"), &encode_recycle(&self.uploads, code_dim))
    }

    fn load(dir: &Path) -> Result<Self> {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        let backbone = opt("backbone.ckpt").map(|p| BackboneParams::load(&p).map(Arc::new)).transpose()?;
        let student = opt("student.ckpt").map(|p| BackboneParams::load(&p).map(Arc::new)).transpose()?;
        let basis = opt("basis.ckpt").map(|p| ParamBasis::load(&p).map(Arc::new)).transpose()?;
        let encoder = opt("encoder.ckpt").map(|p| AuxEncoderParams::load(&p)).transpose()?;
        let read = |name: &str| -> Result<Vec<MetaPatchVector>> {
            let p = dir.join(name);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            decode_recycle(&text, &p, &[])
        };
        Ok(Self {
            backbone,
            basis,
            encoder,
            codes: read("codes.csv")?.into_iter().map(|c| (c.device, c.values)).collect(),
            uploads: read("uploads.csv")?,
            student,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from `state/` in the output directory if present.
    pub resume: bool,
    /// Return right after this stage has been persisted.
    pub stop_after: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<RoundReport>,
    /// False when the run stopped early through `stop_after`.
    pub finished: bool,
    pub output: PathBuf,
}

/// Runs the whole lifecycle with fresh state.
pub fn run_lifecycle(config: &RunConfig) -> Result<Vec<RoundReport>> {
    Ok(run_lifecycle_with(config, &RunOptions::default())?.reports)
}

pub fn run_lifecycle_with(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome> {
    let prepared = prepare(config)?;
    run_prepared(config, &prepared, options)
}

struct Runner<'a> {
    config: &'a RunConfig,
    p: &'a Prepared,
    out: PathBuf,
}

fn stage_err(stage: Stage) -> impl FnOnce(Error) -> Error {
    move |e| Error::Stage {
        stage: stage.label(),
        source: Box::new(e),
    }
}

pub fn run_prepared(config: &RunConfig, p: &Prepared, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let out = config.output.clone();
    let state_dir = out.join(STATE_DIR);
    fs::create_dir_all(out.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&out, e))?;
    let progress_path = state_dir.join("progress.json");
    let (mut progress, mut live) = if options.resume && progress_path.exists() {
        let text = fs::read_to_string(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
        let progress: Progress = serde_json::from_str(&text)?;
        (progress, Live::load(&state_dir)?)
    } else {
        if state_dir.exists() {
            fs::remove_dir_all(&state_dir).map_err(|e| Error::io(&state_dir, e))?;
        }
        (Progress::default(), Live::empty())
    };
    write(&out.join("config.txt"), &config.to_text())?;
    let runner = Runner {
        config,
        p,
        out: out.clone(),
    };
    let stages = plan(config);
    for (i, label) in progress.completed.iter().enumerate() {
        if stages.get(i).map(|s| s.label()).as_deref() != Some(label) {
            return Err(Error::Config(format!(
                "saved progress ({label} at step {i}) does not match this configuration"
            )));
        }
    }
    for &stage in &stages[progress.completed.len()..] {
        let started = Instant::now();
        let round = stage.round();
        let mut report = match progress.current.take() {
            Some(r) if r.round == round => r,
            _ => RoundReport {
                round,
                ..RoundReport::default()
            },
        };
        log::info!("stage {}", stage.label());
        runner
            .run_stage(stage, &mut live, &mut report, &mut progress)
            .map_err(stage_err(stage))?;
        report.stages.push(stage.label());
        report.wall_seconds += started.elapsed().as_secs_f64();
        let ends_round = matches!(stage, Stage::EvalPretrain | Stage::Eval(_));
        if ends_round {
            for (name, r) in &report.evals {
                progress.metrics.push_str(&metrics_rows(&format!("r{round}/{name}"), r));
            }
            progress.reports.push(report);
            runner.write_outputs(&progress).map_err(stage_err(stage))?;
        } else {
            progress.current = Some(report);
        }
        progress.completed.push(stage.label());
        live.save(&state_dir, config.code_dim).map_err(stage_err(stage))?;
        write(&progress_path, &serde_json::to_string(&progress)?)?;
        if options.stop_after.as_deref() == Some(stage.label().as_str()) {
            return Ok(RunOutcome {
                reports: progress.reports,
                finished: false,
                output: out,
            });
        }
    }
    Ok(RunOutcome {
        reports: progress.reports,
        finished: true,
        output: out,
    })
}

impl Runner<'_> {
    fn write_outputs(&self, progress: &Progress) -> Result<()> {
        write(&self.out.join("metrics.csv"), &format!("{METRICS_HEADER}{}", progress.metrics))?;
        write(&self.out.join("round_report.json"), &(serde_json::to_string_pretty(&progress.reports)? + "\n"))?;
        write(&self.out.join("loss_trace.csv"), &encode_loss_trace(&progress.trace))
    }

    fn ckpt(&self, name: String) -> PathBuf {
        self.out.join(CHECKPOINT_DIR).join(name)
    }

    fn slice_positives(&self, round: usize) -> Vec<SampleRef> {
        let k = self.config.interval;
        self.p.splits.slice_positives(&self.p.data, (round - 1) * k..round * k)
    }

    fn eval(&self, scorer: &Scorer, patches: impl Fn(usize) -> Result<Option<[crate::recmodel::GeneratedPatch; 3]>> + Sync) -> Result<EvalReport> {
        let cases = score_cases(&self.p.data, &self.p.splits.cases, scorer, self.config.device.gate, patches)?;
        evaluate(&cases, Some(&self.p.partition), self.config.ndcg)
    }

    fn trace(progress: &mut Progress, r: &TrainReport) {
        let base = progress.trace.len();
        progress.trace.extend(r.epochs.iter().map(|e| EpochLoss { epoch: base + e.epoch, ..*e }));
    }

    fn run_stage(&self, stage: Stage, live: &mut Live, report: &mut RoundReport, progress: &mut Progress) -> Result<()> {
        let c = self.config;
        let data = &self.p.data;
        match stage {
            Stage::PretrainBackbone => {
                let mut bc = BackboneConfig::new(data.log.n_users, data.log.n_items, data.log.n_categories);
                bc.max_history = c.max_history;
                let mut rng = stream_rng(c.seed, "backbone-init", 0, 0);
                let init = BackboneParams::init(&bc, &mut rng)?;
                let positives = self.p.splits.pretrain_positives(data);
                let (b, r) = incremental_train(&init, data, &positives, &c.pretrain, c.seed, 0)?;
                Self::trace(progress, &r);
                report.backbone = Some(r);
                b.save(&self.ckpt("backbone_r0.ckpt".into()))?;
                live.backbone = Some(Arc::new(b));
            }
            Stage::PretrainBasis => {
                let backbone = live.backbone.clone().expect("pretrained backbone");
                let positives = self.p.splits.pretrain_positives(data);
                let (basis, enc, r) = pretrain_basis(backbone.clone(), data, &positives, c.code_dim, &c.pretrain_basis, c.seed)?;
                Self::trace(progress, &r);
                report.basis = Some(r);
                basis.save(&self.ckpt("basis_r0.ckpt".into()), &backbone.config)?;
                enc.save(&self.ckpt("encoder_r0.ckpt".into()))?;
                live.basis = Some(Arc::new(basis));
                live.encoder = Some(enc);
            }
            Stage::EvalPretrain => {
                let scorer = Scorer::new(live.backbone.as_ref().expect("backbone"))?;
                report.evals.insert("cloud".into(), self.eval(&scorer, |_| Ok(None))?);
            }
            Stage::Incremental(t) => {
                let backbone = live.backbone.clone().expect("backbone");
                let (b, r) = incremental_train(&backbone, data, &self.slice_positives(t), &c.cloud, c.seed, t as u64)?;
                Self::trace(progress, &r);
                report.backbone = Some(r);
                live.backbone = Some(Arc::new(b));
            }
            Stage::Device(t) => self.device_phase(t, live, report)?,
            Stage::DistillBackbone(t) => {
                let teachers = self.teachers(live)?;
                let (b, r) = distill_backbone(&teachers, data, &self.slice_positives(t), &c.cloud, c.seed, t as u64)?;
                Self::trace(progress, &r);
                report.backbone = Some(r);
                live.student = Some(Arc::new(b));
            }
            Stage::DistillBasis(t) => {
                let teachers = self.teachers(live)?;
                let student = live.student.take().ok_or_else(|| Error::Config("basis stage ran before backbone stage".into()))?;
                let basis = live.basis.clone().expect("basis");
                let enc = live.encoder.clone().expect("encoder");
                let (nb, ne, r) = distill_basis(&basis, &enc, &student, &teachers, data, &self.slice_positives(t), &c.cloud, c.seed, t as u64)?;
                Self::trace(progress, &r);
                report.basis = Some(r);
                live.backbone = Some(student);
                live.basis = Some(Arc::new(nb));
                live.encoder = Some(ne);
            }
            Stage::Eval(t) => self.end_of_round(t, live, report)?,
        }
        Ok(())
    }

    fn teachers(&self, live: &Live) -> Result<TeacherBundle> {
        TeacherBundle::new(
            live.backbone.clone().expect("backbone"),
            live.basis.clone().expect("basis"),
            &live.uploads,
        )
    }

    fn device_phase(&self, t: usize, live: &mut Live, report: &mut RoundReport) -> Result<()> {
        let c = self.config;
        let data = &self.p.data;
        let backbone = live.backbone.clone().expect("backbone");
        let basis = live.basis.clone().expect("basis");
        let enc = live.encoder.clone().expect("encoder");
        let k = c.interval;
        let mut states: Vec<DeviceState> = self
            .p
            .splits
            .users
            .iter()
            .map(|s| -> Result<DeviceState> {
                let mut st = DeviceState::new(s.user, c.code_dim);
                let prev = live.codes.get(&s.user).cloned().unwrap_or_else(|| vec![0.0; c.code_dim]);
                st.code.values = match c.code_carry {
                    CodeCarry::Reset => vec![0.0; c.code_dim],
                    CodeCarry::Keep => prev,
                    CodeCarry::Encode => encode(&enc, &prev, &data.profiles[s.user].features)?,
                };
                let lo = s.slices[(t - 1) * k].start;
                let hi = s.slices[t * k - 1].end;
                st.buffer = (lo..hi).map(|i| data.positive(s.user, i)).collect();
                Ok(st)
            })
            .collect::<Result<_>>()?;
        let scorer = Scorer::new(&backbone)?;
        let ctx = DeviceContext {
            data,
            backbone: &backbone,
            scorer: &scorer,
            basis: &basis,
        };
        let outcomes = states
            .par_iter_mut()
            .map(|st| personalize(st, &ctx, &c.device, c.seed, t as u64))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = DevicePhaseStats::default();
        let mut uploads = Vec::new();
        for (st, o) in states.iter().zip(&outcomes) {
            match o.status {
                DeviceStatus::Trained => {
                    stats.trained += 1;
                    stats.mean_loss_before += o.loss_before;
                    stats.mean_loss_after += o.loss_after;
                    uploads.push(st.code.clone());
                }
                DeviceStatus::Empty => stats.empty += 1,
                DeviceStatus::Reverted => stats.reverted += 1,
            }
        }
        if stats.trained > 0 {
            stats.mean_loss_before /= stats.trained as f64;
            stats.mean_loss_after /= stats.trained as f64;
        }
        live.codes = states.into_iter().map(|s| (s.code.device, s.code.values)).collect();
        live.uploads = uploads;
        write(
            &self.out.join(format!("recycle_round_{t}.csv")),
            &encode_recycle(&live.uploads, c.code_dim),
        )?;
        let codes = &live.codes;
        let e = self.eval(&scorer, |u| {
            codes
                .get(&u)
                .map(|v| generate_patches(&basis, &MetaPatchVector { device: u, values: v.clone() }))
                .transpose()
        })?;
        report.evals.insert("dccl-e".into(), e);
        report.devices = Some(stats);
        Ok(())
    }

    fn end_of_round(&self, t: usize, live: &mut Live, report: &mut RoundReport) -> Result<()> {
        let c = self.config;
        let backbone = live.backbone.clone().expect("backbone");
        let basis = live.basis.clone().expect("basis");
        let enc = live.encoder.clone().expect("encoder");
        let scorer = Scorer::new(&backbone)?;
        match c.mode {
            Mode::BaselineIncremental => {
                report.evals.insert("din".into(), self.eval(&scorer, |_| Ok(None))?);
            }
            Mode::DcclEOnly => {}
            Mode::DcclFull => {
                report.evals.insert("cloud".into(), self.eval(&scorer, |_| Ok(None))?);
                let uploaded: BTreeMap<usize, &Vec<f64>> = live.uploads.iter().map(|u| (u.device, &u.values)).collect();
                let zero = vec![0.0; c.code_dim];
                let profiles = &self.p.data.profiles;
                let m = self.eval(&scorer, |u| {
                    let code = uploaded.get(&u).copied().unwrap_or(&zero);
                    let z = encode(&enc, code, &profiles[u].features)?;
                    generate_patches(&basis, &MetaPatchVector { device: u, values: z }).map(Some)
                })?;
                report.evals.insert("dccl-m".into(), m);
            }
        }
        backbone.save(&self.ckpt(format!("backbone_r{t}.ckpt")))?;
        basis.save(&self.ckpt(format!("basis_r{t}.ckpt")), &backbone.config)?;
        enc.save(&self.ckpt(format!("encoder_r{t}.ckpt")))?;
        Ok(())
    }
}

/// Device codes persisted in a run's state directory.
pub fn load_device_codes(output: &Path) -> Result<Vec<MetaPatchVector>> {
    let p = output.join(STATE_DIR).join("codes.csv");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    decode_recycle(&text, &p, &[])
}
