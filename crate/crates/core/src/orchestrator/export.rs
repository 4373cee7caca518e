//! Per-device code table with each device's dominant training category, for
//! external projection and plotting.

use std::fmt::Write as _;

use crate::datahub::{Dataset, Splits};
use crate::metapatch::MetaPatchVector;

/// Most frequent category among the user's training events; ties go to the
/// lowest category id.
pub fn dominant_category(data: &Dataset, splits: &Splits, user: usize) -> Option<usize> {
    let s = splits.users.iter().find(|s| s.user == user)?;
    let events = &data.log.user_events(user)[..s.test];
    let mut counts = vec![0usize; data.log.n_categories];
    for e in events {
        counts[e.category] += 1;
    }
    let best = *counts.iter().max()?;
    (best > 0).then(|| counts.iter().position(|&c| c == best).expect("max exists"))
}

/// `device_id,category,theta_0,...`. Readable with `read_recycle`.
pub fn export_metapatch_table(data: &Dataset, splits: &Splits, codes: &[MetaPatchVector], code_dim: usize) -> String {
    let mut s = String::from("device_id,category");
    for k in 0..code_dim {
        let _ = write!(s, ",theta_{k}");
    }
    s.push('\n');
    for c in codes {
        let cat = dominant_category(data, splits, c.device).map_or(String::new(), |c| c.to_string());
        let _ = write!(s, "{},{cat}", c.device);
        for v in &c.values {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::datahub::{build_splits, synth_generate, SplitPlan, SynthSpec};
    use crate::metapatch::decode_recycle;

    #[test]
    fn shape_and_round_trip() {
        let spec = SynthSpec {
            users: 100,
            items: 200,
            clusters: 4,
            ..SynthSpec::default()
        };
        let (data, _) = synth_generate(&spec).unwrap();
        let splits = build_splits(&data, &SplitPlan::default(), 0).unwrap();
        let codes: Vec<_> = splits
            .users
            .iter()
            .map(|s| MetaPatchVector {
                device: s.user,
                values: (0..32).map(|k| (s.user * 32 + k) as f64 * 0.1).collect(),
            })
            .collect();
        let text = export_metapatch_table(&data, &splits, &codes, 32);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), codes.len() + 1);
        assert!(lines.iter().all(|l| l.split(',').count() == 34));
        let back = decode_recycle(&text, Path::new("t.csv"), &["category"]).unwrap();
        assert_eq!(back, codes);
    }
}
