use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::datahub::{Dataset, SampleRef};
use crate::error::Result;
use crate::metapatch::{generate_patches, MetaPatchVector, ParamBasis};
use crate::recmodel::{BackboneParams, DevicePatches, PatchGate, Scorer};

/// Frozen snapshot of the previous cloud round plus the uploaded codes.
pub struct TeacherBundle {
    pub backbone: Arc<BackboneParams>,
    pub basis: Arc<ParamBasis>,
    codes: BTreeMap<usize, Vec<f64>>,
    scorer: Scorer,
}

impl TeacherBundle {
    pub fn new(backbone: Arc<BackboneParams>, basis: Arc<ParamBasis>, codes: &[MetaPatchVector]) -> Result<Self> {
        let scorer = Scorer::new(&backbone)?;
        Ok(Self {
            backbone,
            basis,
            codes: codes.iter().map(|c| (c.device, c.values.clone())).collect(),
            scorer,
        })
    }

    /// Code of `device`, or `None` when the device uploaded nothing.
    pub fn code(&self, device: usize) -> Option<&[f64]> {
        self.codes.get(&device).map(Vec::as_slice)
    }

    pub fn codes(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.codes
    }

    /// Teacher click probabilities for `refs`, in order. Devices without an
    /// uploaded code are scored by the snapshot cloud model alone; their
    /// number is returned alongside.
    pub fn probabilities(&self, data: &Dataset, refs: &[SampleRef], gate: PatchGate) -> Result<(Vec<f64>, usize)> {
        let mut by_device: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in refs.iter().enumerate() {
            by_device.entry(r.user).or_default().push(i);
        }
        let groups: Vec<(u32, Vec<usize>)> = by_device.into_iter().collect();
        let max_history = self.backbone.config.max_history;
        let scored: Vec<(Vec<(usize, f64)>, bool)> = groups
            .par_iter()
            .map(|(device, idx)| -> Result<(Vec<(usize, f64)>, bool)> {
                let sub: Vec<SampleRef> = idx.iter().map(|&i| refs[i]).collect();
                let batch = data.batch(&sub, max_history);
                let (probs, fallback) = match self.code(*device as usize) {
                    Some(values) if gate.any_open() => {
                        let code = MetaPatchVector {
                            device: *device as usize,
                            values: values.to_vec(),
                        };
                        let patches = generate_patches(&self.basis, &code)?;
                        let dp = DevicePatches::shared(&patches, batch.len());
                        (self.scorer.probabilities(&batch, Some(&dp), gate)?, false)
                    }
                    Some(_) => (self.scorer.probabilities(&batch, None, gate)?, false),
                    None => (self.scorer.probabilities(&batch, None, gate)?, true),
                };
                Ok((idx.iter().copied().zip(probs).collect(), fallback))
            })
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; refs.len()];
        let mut fallbacks = 0;
        for (pairs, fb) in scored {
            fallbacks += usize::from(fb);
            for (i, p) in pairs {
                out[i] = p;
            }
        }
        Ok((out, fallbacks))
    }
}
