//! Leave-one-out ranking metrics and the long-tail user partition.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIT_KS: [usize; 3] = [1, 5, 10];
pub const NDCG_KS: [usize; 2] = [5, 10];
pub const DEFAULT_GROUPS: usize = 20;

/// Ground truth rank among its candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub user: usize,
    /// 1-based.
    pub rank: usize,
    /// Ground truth first, then the negatives.
    pub scores: Vec<f64>,
}

/// Ranks `scores[0]` (the ground truth) against `scores[1..]`. Negatives
/// tied with the ground truth count as ranked above it.
pub fn rank_case(user: usize, scores: Vec<f64>) -> Result<RankedCase> {
    if scores.len() < 2 {
        return Err(Error::Data(format!("user {user}: need a ground truth and at least one negative")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i} of user {user}")));
    }
    let gt = scores[0];
    let rank = 1 + scores[1..].iter().filter(|&&s| s >= gt).count();
    Ok(RankedCase { user, rank, scores })
}

fn nonempty(cases: &[RankedCase]) -> Result<()> {
    if cases.is_empty() {
        return Err(Error::Data("no evaluation cases".into()));
    }
    Ok(())
}

pub fn hit_rate_at_k(cases: &[RankedCase], k: usize) -> Result<f64> {
    nonempty(cases)?;
    Ok(cases.iter().filter(|c| c.rank <= k).count() as f64 / cases.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NdcgForm {
    /// `1 / log2(R + 1)` for a hit.
    #[default]
    Standard,
    /// `(2^hit - 1) / log2(hit + 1)`, which is the hit indicator itself.
    Indicator,
}

impl std::str::FromStr for NdcgForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "indicator" => Ok(Self::Indicator),
            _ => Err(Error::Config(format!("ndcg must be `standard` or `indicator`, got {s:?}"))),
        }
    }
}

pub fn ndcg_at_k(cases: &[RankedCase], k: usize, form: NdcgForm) -> Result<f64> {
    nonempty(cases)?;
    let total: f64 = cases
        .iter()
        .map(|c| {
            let hit = c.rank <= k;
            match (form, hit) {
                (_, false) => 0.0,
                (NdcgForm::Standard, true) => 1.0 / ((c.rank + 1) as f64).log2(),
                (NdcgForm::Indicator, true) => 1.0,
            }
        })
        .sum();
    Ok(total / cases.len() as f64)
}

/// Share of (positive, negative) pairs ordered correctly; ties earn half.
/// `None` when either side is empty.
pub fn user_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (positives.len() * negatives.len()) as f64)
}

/// Unweighted mean of per-user AUCs. Users with an empty side are skipped;
/// their count is returned.
pub fn macro_auc(users: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, usize)> {
    let aucs: Vec<f64> = users.iter().filter_map(|(p, n)| user_auc(p, n)).collect();
    if aucs.is_empty() {
        return Err(Error::Data("no user has both positive and negative scores".into()));
    }
    let skipped = users.len() - aucs.len();
    if skipped > 0 {
        log::warn!("{skipped} users without both positives and negatives left out of macro-AUC");
    }
    Ok((aucs.iter().sum::<f64>() / aucs.len() as f64, skipped))
}

fn case_auc(c: &RankedCase) -> Option<f64> {
    user_auc(&c.scores[..1], &c.scores[1..])
}

/// Users sorted by descending training count (ties by ascending id) and cut
/// into contiguous groups whose sizes differ by at most one. Group 0 holds
/// the most active users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<Vec<usize>>,
    pub group_of: BTreeMap<usize, usize>,
}

pub fn group_users(counts: &[(usize, usize)], n_groups: usize) -> GroupPartition {
    let mut order = counts.to_vec();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = order.len();
    let g = n_groups.min(n).max(1);
    if g < n_groups {
        log::warn!("only {n} users; using {g} groups instead of {n_groups}");
    }
    let groups: Vec<Vec<usize>> = (0..g)
        .map(|i| order[i * n / g..(i + 1) * n / g].iter().map(|p| p.0).collect())
        .collect();
    let group_of = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, us)| us.iter().map(move |&u| (u, gi)))
        .collect();
    GroupPartition { groups, group_of }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub hit_rate: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub macro_auc: f64,
    /// Macro-AUC per group, head first; empty without a partition.
    pub group_auc: Vec<f64>,
    pub group_hit_rate_10: Vec<f64>,
}

pub fn evaluate(cases: &[RankedCase], partition: Option<&GroupPartition>, form: NdcgForm) -> Result<EvalReport> {
    nonempty(cases)?;
    let mut hit_rate = BTreeMap::new();
    for k in HIT_KS {
        hit_rate.insert(k, hit_rate_at_k(cases, k)?);
    }
    let mut ndcg = BTreeMap::new();
    for k in NDCG_KS {
        ndcg.insert(k, ndcg_at_k(cases, k, form)?);
    }
    let sets = |cs: &[&RankedCase]| -> Vec<(Vec<f64>, Vec<f64>)> {
        cs.iter().map(|c| (c.scores[..1].to_vec(), c.scores[1..].to_vec())).collect()
    };
    let all: Vec<&RankedCase> = cases.iter().collect();
    let (auc, _) = macro_auc(&sets(&all))?;
    let mut group_auc = Vec::new();
    let mut group_hit = Vec::new();
    if let Some(p) = partition {
        let mut members: Vec<Vec<&RankedCase>> = vec![Vec::new(); p.groups.len()];
        for c in cases {
            if let Some(&g) = p.group_of.get(&c.user) {
                members[g].push(c);
            }
        }
        for m in &members {
            let aucs: Vec<f64> = m.iter().filter_map(|c| case_auc(c)).collect();
            group_auc.push(if aucs.is_empty() { f64::NAN } else { aucs.iter().sum::<f64>() / aucs.len() as f64 });
            group_hit.push(if m.is_empty() {
                f64::NAN
            } else {
                m.iter().filter(|c| c.rank <= 10).count() as f64 / m.len() as f64
            });
        }
    }
    Ok(EvalReport {
        cases: cases.len(),
        hit_rate,
        ndcg,
        macro_auc: auc,
        group_auc,
        group_hit_rate_10: group_hit,
    })
}

pub const METRICS_HEADER: &str = "metric,name,K,group,value\n";

/// Rows of `metrics.csv` for one named evaluation.
pub fn metrics_rows(name: &str, r: &EvalReport) -> String {
    let mut s = String::new();
    for (k, v) in &r.hit_rate {
        let _ = writeln!(s, "hit_rate,{name},{k},all,{v:e}");
    }
    for (k, v) in &r.ndcg {
        let _ = writeln!(s, "ndcg,{name},{k},all,{v:e}");
    }
    let _ = writeln!(s, "macro_auc,{name},,all,{:e}", r.macro_auc);
    for (g, v) in r.group_auc.iter().enumerate() {
        let _ = writeln!(s, "macro_auc,{name},,{},{v:e}", g + 1);
    }
    for (g, v) in r.group_hit_rate_10.iter().enumerate() {
        let _ = writeln!(s, "hit_rate,{name},10,{},{v:e}", g + 1);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(rank: usize) -> RankedCase {
        RankedCase { user: 0, rank, scores: vec![] }
    }

    #[test]
    fn rank_extremes() {
        let mut s: Vec<f64> = (0..101).map(|i| i as f64).collect();
        s[0] = 1000.0;
        assert_eq!(rank_case(0, s.clone()).unwrap().rank, 1);
        s[0] = -1.0;
        assert_eq!(rank_case(0, s).unwrap().rank, 101);
    }

    #[test]
    fn ties_are_pessimistic() {
        assert_eq!(rank_case(0, vec![0.5, 0.5, 0.1]).unwrap().rank, 2);
        assert!(rank_case(0, vec![f64::NAN, 0.1]).is_err());
    }

    #[test]
    fn hit_rate_counts() {
        let cs = [case(1), case(7), case(50)];
        assert_eq!(hit_rate_at_k(&cs, 5).unwrap(), 1.0 / 3.0);
        assert_eq!(hit_rate_at_k(&[case(1)], 1).unwrap(), 1.0);
        assert!(hit_rate_at_k(&[], 1).is_err());
    }

    #[test]
    fn ndcg_values() {
        assert_eq!(ndcg_at_k(&[case(1)], 10, NdcgForm::Standard).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[case(3)], 10, NdcgForm::Standard).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&[case(11)], 10, NdcgForm::Standard).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&[case(3)], 10, NdcgForm::Indicator).unwrap(), 1.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(user_auc(&[0.9], &[0.3, 0.7]), Some(1.0));
        assert_eq!(user_auc(&[0.5], &[0.3, 0.7]), Some(0.5));
        let (m, skipped) = macro_auc(&[(vec![0.9], vec![0.3, 0.7]), (vec![0.5], vec![0.3, 0.7]), (vec![], vec![0.1])]).unwrap();
        assert_eq!(m, 0.75);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn grouping() {
        let counts: Vec<(usize, usize)> = (0..40).map(|u| (u, 7)).collect();
        let p = group_users(&counts, 20);
        assert_eq!(p.groups.len(), 20);
        assert!(p.groups.iter().all(|g| g.len() == 2));
        assert_eq!(p.groups[0], vec![0, 1]);
        assert_eq!(p.groups[19], vec![38, 39]);
        let few = group_users(&[(0, 1), (1, 5)], 20);
        assert_eq!(few.groups, vec![vec![1], vec![0]]);
    }
}
