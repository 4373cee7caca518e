//! Synthetic long-tailed interaction generator.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

use super::{Dataset, Interaction, InteractionLog, UserProfile, PROFILE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub clusters: usize,
    pub users: usize,
    pub items: usize,
    /// Exponent of the rank/activity power law.
    pub alpha: f64,
    /// Probability that an event ignores the home cluster.
    pub noise: f64,
    pub seed: u64,
    pub min_events: usize,
    /// Mean events per user; the surplus over `min_events` is spread by the
    /// power law.
    pub mean_events: usize,
    pub max_events: usize,
    /// Zipf exponent of item popularity inside a cluster.
    pub item_skew: f64,
    /// Zipf exponent of home-cluster popularity; 0 draws home clusters
    /// uniformly.
    pub cluster_skew: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clusters: 20,
            users: 2000,
            items: 5000,
            alpha: 1.2,
            noise: 0.1,
            seed: 0,
            min_events: 5,
            mean_events: 20,
            max_events: 200,
            item_skew: 0.8,
            cluster_skew: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.users == 0 || self.items == 0 {
            return Err(Error::Config("cluster, user and item counts must be positive".into()));
        }
        if self.clusters > self.items {
            return Err(Error::Config(format!(
                "{} clusters cannot partition {} items",
                self.clusters, self.items
            )));
        }
        if !(self.alpha > 0.0) || !(0.0..=1.0).contains(&self.noise) || self.item_skew < 0.0 || self.cluster_skew < 0.0 {
            return Err(Error::Config("alpha must be positive, noise in [0, 1], skews non-negative".into()));
        }
        if self.min_events < 3 || self.min_events > self.mean_events || self.mean_events > self.max_events {
            return Err(Error::Config("need 3 <= min_events <= mean_events <= max_events".into()));
        }
        Ok(())
    }

    /// Items `[start, end)` of cluster `c`.
    pub fn cluster_items(&self, c: usize) -> std::ops::Range<usize> {
        c * self.items / self.clusters..(c + 1) * self.items / self.clusters
    }

    /// Event count per user.
    ///
    /// Users are ranked in random order and user of rank `r` receives
    /// `min_events + surplus * r^-alpha / H`, where `H` normalises the weights
    /// so the surplus adds up to `users * (mean_events - min_events)`, capped
    /// at `max_events` and at the smallest cluster size.
    fn activity<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut ranks: Vec<usize> = (1..=self.users).collect();
        ranks.shuffle(rng);
        let h: f64 = (1..=self.users).map(|r| (r as f64).powf(-self.alpha)).sum();
        let surplus = (self.users * (self.mean_events - self.min_events)) as f64;
        let cap = (0..self.clusters)
            .map(|c| self.cluster_items(c).len())
            .min()
            .unwrap_or(0)
            .min(self.max_events)
            .max(self.min_events);
        ranks
            .iter()
            .map(|&r| {
                let extra = surplus * (r as f64).powf(-self.alpha) / h;
                (self.min_events + extra.round() as usize).min(cap)
            })
            .collect()
    }
}

/// Draws from a fixed discrete distribution by inverse CDF.
struct Cdf(Vec<f64>);

impl Cdf {
    fn new(weights: impl Iterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let mut c: Vec<f64> = weights
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        for v in c.iter_mut() {
            *v /= acc;
        }
        Cdf(c)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let x: f64 = rng.gen();
        self.0.partition_point(|&c| c <= x).min(self.0.len() - 1)
    }
}

/// Per-user facts the generator decided, kept for analysis and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub home_cluster: Vec<usize>,
    pub activity: Vec<usize>,
}

/// Generates a log where every user belongs to one of `clusters` taste
/// clusters; items are partitioned into the same number of categories.
///
/// Profiles hold a 7-dim signature of the home cluster plus the user's
/// activity decile scaled to [-1, 1].
pub fn synth_generate(spec: &SynthSpec) -> Result<(Dataset, SynthTruth)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, "synth", 0, 0);
    let item_category: Vec<usize> = (0..spec.items)
        .map(|i| (0..spec.clusters).find(|&c| spec.cluster_items(c).contains(&i)).expect("partition"))
        .collect();
    let popularity: Vec<(std::ops::Range<usize>, Vec<usize>, Cdf)> = (0..spec.clusters)
        .map(|c| {
            let range = spec.cluster_items(c);
            let mut order: Vec<usize> = range.clone().collect();
            order.shuffle(&mut rng);
            let cdf = Cdf::new((1..=order.len()).map(|r| (r as f64).powf(-spec.item_skew)));
            (range, order, cdf)
        })
        .collect();
    let signatures: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            let v: Vec<f64> = (0..PROFILE_DIM - 1).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut cluster_order: Vec<usize> = (0..spec.clusters).collect();
    cluster_order.shuffle(&mut rng);
    let cluster_cdf = Cdf::new((1..=spec.clusters).map(|r| (r as f64).powf(-spec.cluster_skew)));
    let home: Vec<usize> = (0..spec.users).map(|_| cluster_order[cluster_cdf.draw(&mut rng)]).collect();
    let activity = spec.activity(&mut rng);

    let mut sorted = activity.clone();
    sorted.sort_unstable();
    let decile = |n: usize| (sorted.partition_point(|&v| v < n) * 10 / spec.users).min(9);

    let mut rows = Vec::new();
    let mut seen = vec![false; spec.items];
    for u in 0..spec.users {
        let mut picked = Vec::with_capacity(activity[u]);
        let start: i64 = rng.gen_range(0..1_000_000);
        let (range, order, cdf) = &popularity[home[u]];
        for k in 0..activity[u] {
            let mut item = None;
            for _ in 0..64 {
                let cand = if rng.gen::<f64>() < spec.noise {
                    rng.gen_range(0..spec.items)
                } else {
                    order[cdf.draw(&mut rng)]
                };
                if !seen[cand] {
                    item = Some(cand);
                    break;
                }
            }
            // popular items exhausted: fall back to any unseen item of the
            // home cluster, then of the catalogue
            let item = item
                .or_else(|| range.clone().find(|&i| !seen[i]))
                .or_else(|| (0..spec.items).find(|&i| !seen[i]));
            let Some(item) = item else { break };
            seen[item] = true;
            picked.push(item);
            rows.push(Interaction {
                user: u,
                item,
                category: item_category[item],
                timestamp: start + 1000 * k as i64 + rng.gen_range(0..1000),
            });
        }
        for i in picked {
            seen[i] = false;
        }
    }
    let profiles = (0..spec.users)
        .map(|u| {
            let mut f = signatures[home[u]].clone();
            f.push(2.0 * decile(activity[u]) as f64 / 9.0 - 1.0);
            UserProfile { user: u, features: f }
        })
        .collect();
    let log = InteractionLog::new(rows, spec.users, spec.items, spec.clusters, item_category)?;
    let data = Dataset::new(log, profiles)?;
    Ok((
        data,
        SynthTruth {
            home_cluster: home,
            activity,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            users: 300,
            items: 1000,
            clusters: 10,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noise_free_users_stay_home() {
        let spec = SynthSpec { noise: 0.0, ..small(1) };
        let (d, truth) = synth_generate(&spec).unwrap();
        for u in 0..spec.users {
            assert!(d.log.user_events(u).iter().all(|e| e.category == truth.home_cluster[u]));
        }
    }

    #[test]
    fn same_seed_same_log() {
        let a = synth_generate(&small(4)).unwrap();
        let b = synth_generate(&small(4)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(5)).unwrap();
        assert_ne!(a.0.log, c.0.log);
    }

    #[test]
    fn degenerate_spec_rejected() {
        let spec = SynthSpec { clusters: 11, items: 10, ..small(0) };
        assert!(matches!(synth_generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn activity_is_long_tailed_and_chronological() {
        let (d, truth) = synth_generate(&small(2)).unwrap();
        let mut a = truth.activity.clone();
        a.sort_unstable();
        assert!(a[0] >= 5);
        assert!(a[a.len() - 1] > 5 * a[a.len() / 2]);
        for u in 0..300 {
            let ev = d.log.user_events(u);
            assert_eq!(ev.len(), truth.activity[u]);
            assert!(ev.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        }
    }
}
