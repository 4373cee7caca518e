use rayon::prelude::*;

use crate::datahub::{Dataset, EvalCase};
use crate::error::Result;
use crate::evalmetrics::{rank_case, RankedCase};
use crate::recmodel::{DevicePatches, GeneratedPatch, PatchGate, Scorer};

/// Ranks every case with the cloud model, patched per user by `patches`
/// (`None` for a user means the unpatched model).
pub fn score_cases<F>(data: &Dataset, cases: &[EvalCase], scorer: &Scorer, gate: PatchGate, patches: F) -> Result<Vec<RankedCase>>
where
    F: Fn(usize) -> Result<Option<[GeneratedPatch; 3]>> + Sync,
{
    let max_history = scorer.config().max_history;
    cases
        .par_iter()
        .map(|c| {
            let refs = c.candidates();
            let batch = data.batch(&refs, max_history);
            let logits = match patches(c.user)? {
                Some(p) if gate.any_open() => {
                    let dp = DevicePatches::shared(&p, batch.len());
                    scorer.logits(&batch, Some(&dp), gate)?
                }
                _ => scorer.logits(&batch, None, gate)?,
            };
            rank_case(c.user, logits)
        })
        .collect()
}
