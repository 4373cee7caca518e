use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of user profile features fed to the auxiliary encoder.
pub const PROFILE_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub category: usize,
    pub timestamp: i64,
}

/// Implicit-feedback events with dense ids, grouped per user in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    /// Sorted by `(user, timestamp)`; ties keep their ingestion order.
    interactions: Vec<Interaction>,
    user_offsets: Vec<usize>,
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Category of every item.
    pub item_category: Vec<usize>,
}

impl InteractionLog {
    pub fn new(
        mut interactions: Vec<Interaction>,
        n_users: usize,
        n_items: usize,
        n_categories: usize,
        item_category: Vec<usize>,
    ) -> Result<Self> {
        if item_category.len() != n_items {
            return Err(Error::Data(format!(
                "{} item categories for {n_items} items",
                item_category.len()
            )));
        }
        if let Some(&c) = item_category.iter().find(|&&c| c >= n_categories) {
            return Err(Error::Data(format!("category {c} out of range ({n_categories})")));
        }
        for r in &interactions {
            if r.user >= n_users || r.item >= n_items {
                return Err(Error::Data(format!("interaction {r:?} outside id ranges")));
            }
            if r.category != item_category[r.item] {
                return Err(Error::Data(format!("interaction {r:?} disagrees with item category")));
            }
        }
        interactions.sort_by_key(|r| (r.user, r.timestamp));
        let mut user_offsets = vec![0; n_users + 1];
        for r in &interactions {
            user_offsets[r.user + 1] += 1;
        }
        for u in 0..n_users {
            user_offsets[u + 1] += user_offsets[u];
        }
        Ok(Self {
            interactions,
            user_offsets,
            n_users,
            n_items,
            n_categories,
            item_category,
        })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Events of `user` in chronological order.
    pub fn user_events(&self, user: usize) -> &[Interaction] {
        &self.interactions[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    pub fn user_counts(&self) -> Vec<usize> {
        self.user_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_items];
        for r in &self.interactions {
            c[r.item] += 1;
        }
        c
    }

    /// Keeps the events whose flag in `keep` (aligned with
    /// [`interactions`](Self::interactions)) is set and re-densifies user,
    /// item and category ids, preserving order. Returns the new log and, per
    /// new user id, the old user id.
    pub fn retain_and_remap(&self, keep: &[bool]) -> Result<(InteractionLog, Vec<usize>)> {
        if keep.len() != self.interactions.len() {
            return Err(Error::Data(format!("{} flags for {} interactions", keep.len(), self.len())));
        }
        let kept: Vec<Interaction> = self
            .interactions
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| *r)
            .collect();
        let mut user_map = vec![usize::MAX; self.n_users];
        let mut item_map = vec![usize::MAX; self.n_items];
        let mut cat_map = vec![usize::MAX; self.n_categories];
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut cats = Vec::new();
        let mark = |map: &mut Vec<usize>, list: &mut Vec<usize>, id: usize| {
            if map[id] == usize::MAX {
                map[id] = 0;
                list.push(id);
            }
        };
        for r in &kept {
            mark(&mut user_map, &mut users, r.user);
            mark(&mut item_map, &mut items, r.item);
            mark(&mut cat_map, &mut cats, r.category);
        }
        users.sort_unstable();
        items.sort_unstable();
        cats.sort_unstable();
        for (new, &old) in users.iter().enumerate() {
            user_map[old] = new;
        }
        for (new, &old) in items.iter().enumerate() {
            item_map[old] = new;
        }
        for (new, &old) in cats.iter().enumerate() {
            cat_map[old] = new;
        }
        let remapped = kept
            .iter()
            .map(|r| Interaction {
                user: user_map[r.user],
                item: item_map[r.item],
                category: cat_map[r.category],
                timestamp: r.timestamp,
            })
            .collect();
        let item_category = items.iter().map(|&old| cat_map[self.item_category[old]]).collect();
        let log = InteractionLog::new(remapped, users.len(), items.len(), cats.len(), item_category)?;
        Ok((log, users))
    }
}

/// Profile features `u` of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: usize,
    pub features: Vec<f64>,
}
