//! Multi-arm experiment recipes built on the lifecycle.
//!
//! Arms that agree on everything pretraining depends on share one pretrained
//! state: it is produced once, copied into each arm's directory and resumed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalmetrics::metrics_rows;
use crate::recmodel::PatchGate;

use super::lifecycle::{prepare, run_prepared, RoundReport, RunOptions};
use super::{Mode, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    /// Incremental baseline against full DCCL.
    Rq1,
    /// Per-group macro-AUC of the baseline and one-round DCCL-e.
    Rq2,
    /// Short, medium and long intervals over the same slices.
    Rq3,
    /// One round with a single junction enabled, once per junction.
    JunctionAblation,
    /// One round: incremental baseline, DCCL-e and DCCL-m.
    OneRoundAblation,
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rq1" => Ok(Self::Rq1),
            "rq2" => Ok(Self::Rq2),
            "rq3" => Ok(Self::Rq3),
            "junction-ablation" => Ok(Self::JunctionAblation),
            "one-round-ablation" => Ok(Self::OneRoundAblation),
            _ => Err(Error::Config(format!("unknown recipe {s:?}"))),
        }
    }
}

impl Recipe {
    pub const ALL: [Recipe; 5] = [
        Recipe::Rq1,
        Recipe::Rq2,
        Recipe::Rq3,
        Recipe::JunctionAblation,
        Recipe::OneRoundAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rq1 => "rq1",
            Self::Rq2 => "rq2",
            Self::Rq3 => "rq3",
            Self::JunctionAblation => "junction-ablation",
            Self::OneRoundAblation => "one-round-ablation",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Arm {
    pub name: String,
    pub config: RunConfig,
    /// Evaluations reported for this arm, e.g. `din` or `dccl-m`.
    pub evals: Vec<&'static str>,
}

fn arm(base: &RunConfig, name: &str, f: impl FnOnce(&mut RunConfig), evals: Vec<&'static str>) -> Arm {
    let mut config = base.clone();
    config.output = base.output.join(name);
    f(&mut config);
    Arm {
        name: name.into(),
        config,
        evals,
    }
}

/// Slice count used by the interval study: the configured count when it
/// splits into quarters, otherwise 4.
pub fn interval_slices(base: &RunConfig) -> usize {
    if base.split.slices.is_multiple_of(4) {
        base.split.slices
    } else {
        4
    }
}

pub fn arms(recipe: Recipe, base: &RunConfig) -> Vec<Arm> {
    let one = |c: &mut RunConfig| c.round_limit = Some(1);
    match recipe {
        Recipe::Rq1 => vec![
            arm(base, "baseline", |c| c.mode = Mode::BaselineIncremental, vec!["din"]),
            arm(base, "dccl", |c| c.mode = Mode::DcclFull, vec!["dccl-e", "dccl-m"]),
        ],
        Recipe::Rq2 => vec![
            arm(
                base,
                "baseline",
                |c| {
                    one(c);
                    c.mode = Mode::BaselineIncremental
                },
                vec!["din"],
            ),
            arm(
                base,
                "dccl-e",
                |c| {
                    one(c);
                    c.mode = Mode::DcclEOnly
                },
                vec!["dccl-e"],
            ),
        ],
        Recipe::Rq3 => {
            let slices = interval_slices(base);
            [("short", slices / 4), ("medium", slices / 2), ("long", slices)]
                .into_iter()
                .map(|(name, interval)| {
                    arm(
                        base,
                        name,
                        |c| {
                            c.mode = Mode::DcclFull;
                            c.split.slices = slices;
                            c.interval = interval;
                            c.round_limit = None;
                        },
                        vec!["dccl-e", "dccl-m"],
                    )
                })
                .collect()
        }
        Recipe::JunctionAblation => (0..3)
            .map(|j| {
                let mut g = [false; 3];
                g[j] = true;
                arm(
                    base,
                    &format!("junction-{}", j + 1),
                    |c| {
                        one(c);
                        c.mode = Mode::DcclFull;
                        c.device.gate = PatchGate(g);
                        c.cloud.gate = PatchGate(g);
                    },
                    vec!["dccl-e", "dccl-m"],
                )
            })
            .collect(),
        Recipe::OneRoundAblation => vec![
            arm(
                base,
                "din",
                |c| {
                    one(c);
                    c.mode = Mode::BaselineIncremental
                },
                vec!["din"],
            ),
            arm(
                base,
                "dccl",
                |c| {
                    one(c);
                    c.mode = Mode::DcclFull
                },
                vec!["dccl-e", "dccl-m"],
            ),
        ],
    }
}

/// Everything the shared pretraining stages depend on.
fn pretrain_key(c: &RunConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        source: &'a super::Source,
        split: &'a crate::datahub::SplitPlan,
        code_dim: usize,
        seed: u64,
        pretrain: &'a crate::momodistill::DistillConfig,
        pretrain_basis: &'a crate::momodistill::DistillConfig,
        groups: usize,
        max_history: usize,
        ndcg: crate::evalmetrics::NdcgForm,
    }
    Ok(serde_json::to_string(&Key {
        source: &c.source,
        split: &c.split,
        code_dim: c.code_dim,
        seed: c.seed,
        pretrain: &c.pretrain,
        pretrain_basis: &c.pretrain_basis,
        groups: c.groups,
        max_history: c.max_history,
        ndcg: c.ndcg,
    })?)
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let entry = entry.map_err(|e| Error::io(from, e))?;
        let dst = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &dst)?;
        } else {
            fs::copy(entry.path(), &dst).map_err(|e| Error::io(&dst, e))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub arm: Arm,
    pub reports: Vec<RoundReport>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub recipe: Recipe,
    pub arms: Vec<ArmResult>,
}

impl ExperimentReport {
    /// Last-round metric rows of every arm, named `arm/eval`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(crate::evalmetrics::METRICS_HEADER);
        for a in &self.arms {
            let Some(last) = a.reports.last() else { continue };
            for e in &a.arm.evals {
                if let Some(r) = last.evals.get(*e) {
                    s.push_str(&metrics_rows(&format!("{}/{e}", a.arm.name), r));
                }
            }
        }
        s
    }

    /// One row per arm, round and evaluation, including the pretrained model
    /// as round 0.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("arm,interval,round,eval,hit_rate_10,ndcg_10,macro_auc\n");
        for a in &self.arms {
            for r in &a.reports {
                for (name, e) in &r.evals {
                    let _ = writeln!(
                        s,
                        "{},{},{},{name},{:e},{:e},{:e}",
                        a.arm.name,
                        a.arm.config.interval,
                        r.round,
                        e.hit_rate.get(&10).copied().unwrap_or(f64::NAN),
                        e.ndcg.get(&10).copied().unwrap_or(f64::NAN),
                        e.macro_auc
                    );
                }
            }
        }
        s
    }

    /// `method,group,macro_auc` for the last round of every arm.
    pub fn group_csv(&self) -> String {
        let mut s = String::from("method,group,macro_auc\n");
        for a in &self.arms {
            let Some(last) = a.reports.last() else { continue };
            for e in &a.arm.evals {
                if let Some(r) = last.evals.get(*e) {
                    for (g, v) in r.group_auc.iter().enumerate() {
                        let _ = writeln!(s, "{}/{e},{},{v:e}", a.arm.name, g + 1);
                    }
                }
            }
        }
        s
    }

    /// Final value of an evaluation of an arm.
    pub fn final_eval(&self, arm: &str, eval: &str) -> Option<&crate::evalmetrics::EvalReport> {
        let a = self.arms.iter().find(|a| a.arm.name == arm)?;
        a.reports.last()?.evals.get(eval)
    }
}

/// Runs every arm of `recipe` under `base.output` and writes `summary.csv`,
/// `trace.csv` and `groups.csv` there.
pub fn run_experiment(recipe: Recipe, base: &RunConfig) -> Result<ExperimentReport> {
    let arms = arms(recipe, base);
    for a in &arms {
        a.config.validate()?;
    }
    fs::create_dir_all(&base.output).map_err(|e| Error::io(&base.output, e))?;
    let mut shared: Vec<(String, std::path::PathBuf)> = Vec::new();
    let mut results = Vec::new();
    let mut prepared_cache: Option<(String, super::lifecycle::Prepared)> = None;
    for a in arms {
        let key = pretrain_key(&a.config)?;
        if prepared_cache.as_ref().map(|(k, _)| k) != Some(&key) {
            prepared_cache = Some((key.clone(), prepare(&a.config)?));
        }
        let prepared = &prepared_cache.as_ref().expect("just set").1;
        let pre_dir = match shared.iter().find(|(k, _)| *k == key) {
            Some((_, d)) => d.clone(),
            None => {
                let dir = base.output.join(format!("pretrain-{}", shared.len()));
                let mut c = a.config.clone();
                c.output = dir.clone();
                c.round_limit = Some(0);
                run_prepared(&c, prepared, &RunOptions::default())?;
                shared.push((key, dir.clone()));
                dir
            }
        };
        if a.config.output.exists() {
            fs::remove_dir_all(&a.config.output).map_err(|e| Error::io(&a.config.output, e))?;
        }
        copy_dir(&pre_dir, &a.config.output)?;
        log::info!("experiment {} arm {}", recipe.name(), a.name);
        let out = run_prepared(
            &a.config,
            prepared,
            &RunOptions {
                resume: true,
                stop_after: None,
            },
        )?;
        results.push(ArmResult {
            arm: a,
            reports: out.reports,
        });
    }
    let report = ExperimentReport { recipe, arms: results };
    let write = |name: &str, text: String| -> Result<()> {
        let p = base.output.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("summary.csv", report.summary_csv())?;
    write("trace.csv", report.trace_csv())?;
    write("groups.csv", report.group_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn junction_ablation_has_three_single_gates() {
        let a = arms(Recipe::JunctionAblation, &RunConfig::default());
        let gates: Vec<_> = a.iter().map(|a| a.config.device.gate.0).collect();
        assert_eq!(gates, vec![[true, false, false], [false, true, false], [false, false, true]]);
        assert!(a.iter().all(|a| a.config.rounds() == 1));
    }

    #[test]
    fn short_interval_has_more_rounds() {
        let a = arms(Recipe::Rq3, &RunConfig::default());
        let rounds: Vec<_> = a.iter().map(|a| a.config.rounds()).collect();
        assert_eq!(rounds, vec![4, 2, 1]);
        assert!(a.iter().all(|a| a.config.split.slices == 4));
    }

    #[test]
    fn recipe_names_parse() {
        for r in Recipe::ALL {
            assert_eq!(r.name().parse::<Recipe>().unwrap(), r);
        }
        assert!("rq4".parse::<Recipe>().is_err());
    }
}
