use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

use super::dataset::sample_unseen_distinct;
use super::{Dataset, SampleRef};

/// How each user's events before the held-out last one are divided.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Share of the pre-test events (rounded down) used for pretraining.
    pub pretrain_fraction: f64,
    /// Number of chronological slices the collaborative phase is cut into.
    pub slices: usize,
    /// Sampled negatives per evaluation case.
    pub eval_negatives: usize,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            pretrain_fraction: 0.5,
            slices: 1,
            eval_negatives: 100,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pretrain_fraction) {
            return Err(Error::Config(format!("pretrain fraction {} outside [0, 1]", self.pretrain_fraction)));
        }
        if self.slices == 0 || self.eval_negatives == 0 {
            return Err(Error::Config("slices and eval negatives must be positive".into()));
        }
        Ok(())
    }
}

/// Event index ranges of one user, into `log.user_events(user)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: usize,
    pub pretrain: Range<usize>,
    pub slices: Vec<Range<usize>>,
    pub test: usize,
}

impl UserSplit {
    pub fn dccl(&self) -> Range<usize> {
        self.pretrain.end..self.test
    }

    /// Pre-test events, i.e. the user's training volume.
    pub fn train_count(&self) -> usize {
        self.test
    }
}

/// Held-out last event ranked against sampled unseen items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub user: usize,
    /// Index of the held-out event in the user's events.
    pub pos: usize,
    pub ground_truth: usize,
    /// Distinct, sorted, never interacted with by the user.
    pub negatives: Vec<usize>,
}

impl EvalCase {
    /// Ground truth first, then the negatives.
    pub fn candidates(&self) -> Vec<SampleRef> {
        std::iter::once((self.ground_truth, 1.0))
            .chain(self.negatives.iter().map(|&n| (n, 0.0)))
            .map(|(item, label)| SampleRef {
                user: self.user as u32,
                pos: self.pos as u32,
                item: item as u32,
                label,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub plan: SplitPlan,
    pub users: Vec<UserSplit>,
    pub cases: Vec<EvalCase>,
    /// Users dropped for having fewer than three events or too few unseen
    /// items to draw negatives from.
    pub excluded: Vec<usize>,
}

fn cut(range: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    let n = range.len();
    (0..parts)
        .map(|s| range.start + s * n / parts..range.start + (s + 1) * n / parts)
        .collect()
}

/// Leave-one-out split: the last event of every user is the evaluation
/// case; the rest is divided chronologically into a pretraining part and a
/// collaborative part, the latter cut into `plan.slices` slices.
pub fn build_splits(data: &Dataset, plan: &SplitPlan, seed: u64) -> Result<Splits> {
    plan.validate()?;
    let mut users = Vec::new();
    let mut cases = Vec::new();
    let mut excluded = Vec::new();
    for u in 0..data.log.n_users {
        let n = data.log.user_events(u).len();
        if n < 3 {
            excluded.push(u);
            continue;
        }
        let test = n - 1;
        let mut rng = stream_rng(seed, "eval-negatives", u as u64, 0);
        let Some(negatives) = sample_unseen_distinct(&mut rng, data.log.n_items, &data.seen(u), plan.eval_negatives) else {
            excluded.push(u);
            continue;
        };
        let p = ((test as f64) * plan.pretrain_fraction).floor() as usize;
        users.push(UserSplit {
            user: u,
            pretrain: 0..p,
            slices: cut(p..test, plan.slices),
            test,
        });
        cases.push(EvalCase {
            user: u,
            pos: test,
            ground_truth: data.log.user_events(u)[test].item,
            negatives,
        });
    }
    if users.is_empty() {
        return Err(Error::Data("no user has enough events for a split".into()));
    }
    if !excluded.is_empty() {
        log::warn!("{} users excluded from the split", excluded.len());
    }
    Ok(Splits {
        plan: plan.clone(),
        users,
        cases,
        excluded,
    })
}

impl Splits {
    pub fn pretrain_positives(&self, data: &Dataset) -> Vec<SampleRef> {
        self.positives(data, |s| s.pretrain.clone())
    }

    /// Positives of slices `slices` (a range of slice indices).
    pub fn slice_positives(&self, data: &Dataset, slices: Range<usize>) -> Vec<SampleRef> {
        self.positives(data, |s| {
            let lo = s.slices[slices.start].start;
            let hi = s.slices[slices.end - 1].end;
            lo..hi
        })
    }

    pub fn dccl_positives(&self, data: &Dataset) -> Vec<SampleRef> {
        self.positives(data, UserSplit::dccl)
    }

    fn positives(&self, data: &Dataset, range: impl Fn(&UserSplit) -> Range<usize>) -> Vec<SampleRef> {
        self.users
            .iter()
            .flat_map(|s| range(s).map(move |k| data.positive(s.user, k)))
            .collect()
    }

    /// Pre-test event counts of the split users, aligned with `users`.
    pub fn train_counts(&self) -> Vec<(usize, usize)> {
        self.users.iter().map(|s| (s.user, s.train_count())).collect()
    }
}
