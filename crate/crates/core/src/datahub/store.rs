//! Normalized dataset file and its JSON manifest.
//!
//! ```text
//! dccl-dataset 1 users=U items=I categories=C interactions=N profile_dim=8
//! C <item:10> <category:10>                        (I lines)
//! P <user:10> <f_0> ... <f_7>                      (U lines)
//! E <user:10> <item:10> <category:10> <time:20>    (N lines)
//! ```
//!
//! Profile values use the shortest round-trip float notation, so a save and
//! load reproduces every bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Interaction, InteractionLog, SplitPlan, UserProfile, PROFILE_DIM};

const MAGIC: &str = "dccl-dataset 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub interactions: usize,
    pub seed: u64,
    pub filter_threshold: Option<usize>,
    pub split: SplitPlan,
}

impl Manifest {
    pub fn describe(data: &Dataset, source: impl Into<String>, seed: u64, filter_threshold: Option<usize>, split: SplitPlan) -> Self {
        Self {
            source: source.into(),
            users: data.log.n_users,
            items: data.log.n_items,
            categories: data.log.n_categories,
            interactions: data.log.len(),
            seed,
            filter_threshold,
            split,
        }
    }
}

pub const DATASET_FILE: &str = "dataset.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn encode_dataset(data: &Dataset) -> String {
    let log = &data.log;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{MAGIC} users={} items={} categories={} interactions={} profile_dim={PROFILE_DIM}",
        log.n_users,
        log.n_items,
        log.n_categories,
        log.len()
    );
    for (i, c) in log.item_category.iter().enumerate() {
        let _ = writeln!(s, "C {i:>10} {c:>10}");
    }
    for p in &data.profiles {
        let _ = write!(s, "P {:>10}", p.user);
        for v in &p.features {
            let _ = write!(s, " {v:e}");
        }
        s.push('\n');
    }
    for e in log.interactions() {
        let _ = writeln!(s, "E {:>10} {:>10} {:>10} {:>20}", e.user, e.item, e.category, e.timestamp);
    }
    s
}

pub fn decode_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| err(1, format!("missing '{MAGIC}' header")))?;
    let mut counts = [None; 5];
    let keys = ["users", "items", "categories", "interactions", "profile_dim"];
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(1, format!("bad header field {kv:?}")))?;
        let slot = keys.iter().position(|&x| x == k).ok_or_else(|| err(1, format!("unknown header key {k:?}")))?;
        counts[slot] = Some(v.parse::<usize>().map_err(|_| err(1, format!("bad count {v:?}")))?);
    }
    let [Some(n_users), Some(n_items), Some(n_cats), Some(n_events), Some(dim)] = counts else {
        return Err(err(1, "incomplete header".into()));
    };
    if dim != PROFILE_DIM {
        return Err(err(1, format!("profile_dim {dim}, expected {PROFILE_DIM}")));
    }
    let mut item_category = Vec::with_capacity(n_items);
    let mut profiles = Vec::with_capacity(n_users);
    let mut events = Vec::with_capacity(n_events);
    for (no, line) in lines {
        let mut f = line.split_whitespace();
        let tag = f.next().unwrap_or("");
        let nums: Vec<&str> = f.collect();
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(no, format!("bad integer {s:?}")));
        match tag {
            "C" if nums.len() == 2 => {
                if int(nums[0])? != item_category.len() {
                    return Err(err(no, "item ids out of order".into()));
                }
                item_category.push(int(nums[1])?);
            }
            "P" if nums.len() == 1 + PROFILE_DIM => {
                let user = int(nums[0])?;
                let features = nums[1..]
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| err(no, format!("bad value {s:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                profiles.push(UserProfile { user, features });
            }
            "E" if nums.len() == 4 => events.push(Interaction {
                user: int(nums[0])?,
                item: int(nums[1])?,
                category: int(nums[2])?,
                timestamp: nums[3].parse().map_err(|_| err(no, format!("bad timestamp {:?}", nums[3])))?,
            }),
            "" => {}
            _ => return Err(err(no, format!("unrecognised record {line:?}"))),
        }
    }
    if item_category.len() != n_items || profiles.len() != n_users || events.len() != n_events {
        return Err(err(
            text.lines().count(),
            format!(
                "header promises {n_items}/{n_users}/{n_events} records, found {}/{}/{}",
                item_category.len(),
                profiles.len(),
                events.len()
            ),
        ));
    }
    let log = InteractionLog::new(events, n_users, n_items, n_cats, item_category)?;
    Dataset::new(log, profiles)
}

/// Writes `dataset.txt` and `manifest.json` into `dir`.
pub fn save_dataset(dir: &Path, data: &Dataset, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(DATASET_FILE);
    std::fs::write(&p, encode_dataset(data)).map_err(|e| Error::io(&p, e))?;
    let m = dir.join(MANIFEST_FILE);
    std::fs::write(&m, serde_json::to_string_pretty(manifest)? + "\n").map_err(|e| Error::io(&m, e))
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let p: PathBuf = dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let data = decode_dataset(&text, &p)?;
    let m = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?)?;
    if manifest.users != data.log.n_users || manifest.interactions != data.log.len() {
        return Err(Error::Data(format!("{} does not describe {}", m.display(), p.display())));
    }
    Ok((data, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{synth_generate, SynthSpec};

    #[test]
    fn round_trip() {
        let spec = SynthSpec { users: 50, items: 200, clusters: 4, seed: 3, ..SynthSpec::default() };
        let (data, _) = synth_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::describe(&data, "synthetic", 3, None, SplitPlan::default());
        save_dataset(dir.path(), &data, &m).unwrap();
        let (back, m2) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(m2, m);
    }

    #[test]
    fn truncated_file_rejected() {
        let spec = SynthSpec { users: 10, items: 50, clusters: 2, ..SynthSpec::default() };
        let (data, _) = synth_generate(&spec).unwrap();
        let text = encode_dataset(&data);
        let cut: String = text.lines().take(30).collect::<Vec<_>>().join("\n");
        assert!(decode_dataset(&cut, Path::new("x")).is_err());
    }
}
