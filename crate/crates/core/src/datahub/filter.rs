use serde::Serialize;

use crate::error::{Error, Result};

use super::{InteractionLog, UserProfile};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub threshold: usize,
    pub passes: usize,
    pub removed_users: usize,
    pub removed_items: usize,
    pub removed_interactions: usize,
}

/// Repeatedly drops users and items with fewer than `threshold` events until
/// nothing changes, then re-densifies ids. `profiles` (indexed by old user id)
/// are carried over to the surviving users.
pub fn filter_min_interactions(
    log: &InteractionLog,
    profiles: &[UserProfile],
    threshold: usize,
) -> Result<(InteractionLog, Vec<UserProfile>, FilterReport)> {
    if threshold == 0 {
        return Err(Error::Config("filter threshold must be at least 1".into()));
    }
    let mut alive = vec![true; log.len()];
    let mut passes = 0;
    loop {
        passes += 1;
        let mut uc = vec![0usize; log.n_users];
        let mut ic = vec![0usize; log.n_items];
        for (r, &a) in log.interactions().iter().zip(&alive) {
            if a {
                uc[r.user] += 1;
                ic[r.item] += 1;
            }
        }
        let mut changed = false;
        for (r, a) in log.interactions().iter().zip(alive.iter_mut()) {
            if *a && (uc[r.user] < threshold || ic[r.item] < threshold) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept = alive.iter().filter(|&&a| a).count();
    if kept == 0 {
        return Err(Error::Data(format!(
            "no interactions survive a minimum of {threshold} per user and item; lower the threshold"
        )));
    }
    let (filtered, old_users) = log.retain_and_remap(&alive)?;
    let out_profiles = old_users
        .iter()
        .enumerate()
        .map(|(new, &old)| UserProfile {
            user: new,
            features: profiles[old].features.clone(),
        })
        .collect();
    let report = FilterReport {
        threshold,
        passes,
        removed_users: log.n_users - filtered.n_users,
        removed_items: log.n_items - filtered.n_items,
        removed_interactions: log.len() - filtered.len(),
    };
    Ok((filtered, out_profiles, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::Interaction;

    fn log_from(pairs: &[(usize, usize)]) -> (InteractionLog, Vec<UserProfile>) {
        let n_users = pairs.iter().map(|p| p.0).max().unwrap() + 1;
        let n_items = pairs.iter().map(|p| p.1).max().unwrap() + 1;
        let rows = pairs
            .iter()
            .enumerate()
            .map(|(t, &(user, item))| Interaction { user, item, category: 0, timestamp: t as i64 })
            .collect();
        let log = InteractionLog::new(rows, n_users, n_items, 1, vec![0; n_items]).unwrap();
        let profiles = (0..n_users).map(|u| UserProfile { user: u, features: vec![u as f64; 8] }).collect();
        (log, profiles)
    }

    #[test]
    fn threshold_one_keeps_everything() {
        let (log, profiles) = log_from(&[(0, 0), (1, 1), (1, 0), (2, 2)]);
        let (out, p, report) = filter_min_interactions(&log, &profiles, 1).unwrap();
        assert_eq!(out, log);
        assert_eq!(p, profiles);
        assert_eq!(report.removed_interactions, 0);
    }

    #[test]
    fn sparse_user_removed() {
        // user 1 has two events, everyone else three; items are all popular
        let mut pairs = vec![];
        for u in [0, 2, 3] {
            for i in 0..3 {
                pairs.push((u, i));
            }
        }
        pairs.push((1, 0));
        pairs.push((1, 1));
        let (log, profiles) = log_from(&pairs);
        let (out, p, report) = filter_min_interactions(&log, &profiles, 3).unwrap();
        assert_eq!(out.n_users, 3);
        assert_eq!(report.removed_users, 1);
        assert_eq!(p.iter().map(|p| p.features[0]).collect::<Vec<_>>(), vec![0.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_result_is_an_error() {
        let (log, profiles) = log_from(&[(0, 0), (1, 1)]);
        let err = filter_min_interactions(&log, &profiles, 5).unwrap_err();
        assert!(err.to_string().contains("lower the threshold"));
    }
}
