use rand::Rng;

use crate::error::{Error, Result};
use crate::recmodel::{Batch, BatchBuilder, Sample};

use super::{Interaction, InteractionLog, UserProfile, PROFILE_DIM};

/// A log plus one profile per user.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub log: InteractionLog,
    pub profiles: Vec<UserProfile>,
}

/// Compact reference to a training or evaluation example: the candidate
/// `item` scored for `user` with the history that precedes the user's event
/// at index `pos`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRef {
    pub user: u32,
    pub pos: u32,
    pub item: u32,
    pub label: f32,
}

impl Dataset {
    pub fn new(log: InteractionLog, profiles: Vec<UserProfile>) -> Result<Self> {
        if profiles.len() != log.n_users {
            return Err(Error::Data(format!("{} profiles for {} users", profiles.len(), log.n_users)));
        }
        for (u, p) in profiles.iter().enumerate() {
            if p.user != u || p.features.len() != PROFILE_DIM || p.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("bad profile for user {u}")));
            }
        }
        Ok(Self { log, profiles })
    }

    /// Events of `user` whose timestamp is strictly before that of the event
    /// at `pos`.
    pub fn history(&self, user: usize, pos: usize) -> &[Interaction] {
        let ev = self.log.user_events(user);
        let t = ev[pos].timestamp;
        &ev[..ev[..pos].partition_point(|e| e.timestamp < t)]
    }

    /// Sorted distinct items the user interacted with anywhere in the log.
    pub fn seen(&self, user: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.log.user_events(user).iter().map(|e| e.item).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn positive(&self, user: usize, pos: usize) -> SampleRef {
        SampleRef {
            user: user as u32,
            pos: pos as u32,
            item: self.log.user_events(user)[pos].item as u32,
            label: 1.0,
        }
    }

    pub fn sample(&self, r: &SampleRef) -> Sample {
        let h = self.history(r.user as usize, r.pos as usize);
        Sample {
            device: r.user as usize,
            item: r.item as usize,
            category: self.log.item_category[r.item as usize],
            history_items: h.iter().map(|e| e.item).collect(),
            history_categories: h.iter().map(|e| e.category).collect(),
            label: f64::from(r.label),
        }
    }

    pub fn batch(&self, refs: &[SampleRef], max_history: usize) -> Batch {
        let mut b = BatchBuilder::new(max_history);
        let mut hi = Vec::new();
        let mut hc = Vec::new();
        for r in refs {
            let h = self.history(r.user as usize, r.pos as usize);
            hi.clear();
            hc.clear();
            hi.extend(h.iter().map(|e| e.item));
            hc.extend(h.iter().map(|e| e.category));
            let item = r.item as usize;
            b.push(r.user as usize, item, self.log.item_category[item], &hi, &hc, f64::from(r.label));
        }
        b.build()
    }

    /// Each positive followed by `per_positive` negatives: uniform items the
    /// user never interacted with, sharing the positive's history.
    pub fn with_negatives<R: Rng + ?Sized>(&self, positives: &[SampleRef], per_positive: usize, rng: &mut R) -> Vec<SampleRef> {
        let mut out = Vec::with_capacity(positives.len() * (1 + per_positive));
        let mut seen_user = usize::MAX;
        let mut seen = Vec::new();
        for p in positives {
            out.push(*p);
            if per_positive == 0 {
                continue;
            }
            if p.user as usize != seen_user {
                seen_user = p.user as usize;
                seen = self.seen(seen_user);
            }
            if seen.len() >= self.log.n_items {
                continue;
            }
            for _ in 0..per_positive {
                let item = sample_unseen(rng, self.log.n_items, &seen);
                out.push(SampleRef { item: item as u32, label: 0.0, ..*p });
            }
        }
        out
    }
}

/// One uniform draw from `0..n_items` outside the sorted set `seen`.
/// `seen` must leave at least one item free.
pub fn sample_unseen<R: Rng + ?Sized>(rng: &mut R, n_items: usize, seen: &[usize]) -> usize {
    debug_assert!(seen.len() < n_items);
    // k-th free item, found by skipping over the seen ones below it
    let mut k = rng.gen_range(0..n_items - seen.len());
    for &s in seen {
        if s <= k {
            k += 1;
        } else {
            break;
        }
    }
    k
}

/// `count` distinct draws outside `seen`, or `None` when too few items remain.
pub fn sample_unseen_distinct<R: Rng + ?Sized>(rng: &mut R, n_items: usize, seen: &[usize], count: usize) -> Option<Vec<usize>> {
    let free = n_items.checked_sub(seen.len())?;
    if free < count {
        return None;
    }
    let picks = rand::seq::index::sample(rng, free, count);
    let mut out: Vec<usize> = picks
        .into_iter()
        .map(|mut k| {
            for &s in seen {
                if s <= k {
                    k += 1;
                } else {
                    break;
                }
            }
            k
        })
        .collect();
    out.sort_unstable();
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unseen_draws_avoid_seen_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seen = vec![0, 2, 3, 7, 9];
        let mut hits = [0usize; 10];
        for _ in 0..5000 {
            hits[sample_unseen(&mut rng, 10, &seen)] += 1;
        }
        for s in &seen {
            assert_eq!(hits[*s], 0);
        }
        for free in [1, 4, 5, 6, 8] {
            assert!(hits[free] > 800, "{hits:?}");
        }
    }

    #[test]
    fn distinct_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seen = vec![1, 5];
        let d = sample_unseen_distinct(&mut rng, 12, &seen, 10).unwrap();
        assert_eq!(d, vec![0, 2, 3, 4, 6, 7, 8, 9, 10, 11]);
        assert!(sample_unseen_distinct(&mut rng, 12, &seen, 11).is_none());
    }

    #[test]
    fn history_excludes_same_timestamp() {
        let rows = vec![
            Interaction { user: 0, item: 0, category: 0, timestamp: 1 },
            Interaction { user: 0, item: 1, category: 0, timestamp: 2 },
            Interaction { user: 0, item: 2, category: 0, timestamp: 2 },
        ];
        let log = InteractionLog::new(rows, 1, 3, 1, vec![0; 3]).unwrap();
        let ds = Dataset::new(log, vec![UserProfile { user: 0, features: vec![0.0; 8] }]).unwrap();
        assert_eq!(ds.history(0, 2).len(), 1);
        assert_eq!(ds.history(0, 1).len(), 1);
        assert_eq!(ds.history(0, 0).len(), 0);
    }
}
