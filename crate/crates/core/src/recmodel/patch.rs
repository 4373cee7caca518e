use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Junction, PatchSite};

/// Per-junction switch; a closed gate drops the patch response entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGate(pub [bool; 3]);

impl PatchGate {
    pub const ALL_ON: PatchGate = PatchGate([true; 3]);
    pub const ALL_OFF: PatchGate = PatchGate([false; 3]);

    pub fn only(j: Junction) -> Self {
        let mut g = [false; 3];
        g[j.index()] = true;
        PatchGate(g)
    }

    pub fn is_open(&self, j: Junction) -> bool {
        self.0[j.index()]
    }

    pub fn any_open(&self) -> bool {
        self.0.iter().any(|&b| b)
    }
}

impl Default for PatchGate {
    fn default() -> Self {
        Self::ALL_ON
    }
}

/// Flattened parameters of one bottleneck patch.
///
/// Layout: down matrix `w x b` (row-major), bottleneck bias `b`, up matrix
/// `b x w` (row-major), output bias `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPatch {
    pub site: PatchSite,
    pub params: Vec<f64>,
}

impl GeneratedPatch {
    pub fn new(site: PatchSite, params: Vec<f64>) -> Result<Self> {
        if params.len() != site.param_count() {
            return Err(Error::shape(
                "patch",
                format!(
                    "{} expects {} parameters, got {}",
                    site.junction.name(),
                    site.param_count(),
                    params.len()
                ),
            ));
        }
        Ok(Self { site, params })
    }

    pub fn zeros(site: PatchSite) -> Self {
        Self {
            site,
            params: vec![0.0; site.param_count()],
        }
    }

    fn bounds(&self) -> [usize; 4] {
        let (w, b) = (self.site.width, self.site.bottleneck);
        [w * b, w * b + b, 2 * w * b + b, 2 * w * b + b + w]
    }

    pub fn down(&self) -> &[f64] {
        &self.params[..self.bounds()[0]]
    }

    pub fn bottleneck_bias(&self) -> &[f64] {
        let b = self.bounds();
        &self.params[b[0]..b[1]]
    }

    pub fn up(&self) -> &[f64] {
        let b = self.bounds();
        &self.params[b[1]..b[2]]
    }

    pub fn output_bias(&self) -> &[f64] {
        let b = self.bounds();
        &self.params[b[2]..b[3]]
    }

    pub fn from_parts(
        site: PatchSite,
        down: &[f64],
        bottleneck_bias: &[f64],
        up: &[f64],
        output_bias: &[f64],
    ) -> Result<Self> {
        let (w, b) = (site.width, site.bottleneck);
        if down.len() != w * b || bottleneck_bias.len() != b || up.len() != b * w || output_bias.len() != w {
            return Err(Error::shape(
                "patch",
                format!(
                    "parts {}/{}/{}/{} for width {w}, bottleneck {b}",
                    down.len(),
                    bottleneck_bias.len(),
                    up.len(),
                    output_bias.len()
                ),
            ));
        }
        let mut params = Vec::with_capacity(site.param_count());
        params.extend_from_slice(down);
        params.extend_from_slice(bottleneck_bias);
        params.extend_from_slice(up);
        params.extend_from_slice(output_bias);
        Ok(Self { site, params })
    }
}

/// Patch parameters for a batch: one row per distinct device at each site,
/// plus the row each batch entry uses.
#[derive(Clone, Debug, PartialEq)]
pub struct DevicePatches {
    /// `[devices, K_l]` per junction.
    pub rows: [Tensor; 3],
    pub row_of_sample: Vec<usize>,
}

impl DevicePatches {
    /// The same patches applied to every one of `batch_len` samples.
    pub fn shared(patches: &[GeneratedPatch; 3], batch_len: usize) -> Self {
        let rows = [0, 1, 2].map(|i| Tensor::vector(patches[i].params.clone()).reshaped(vec![1, patches[i].params.len()]).expect("row"));
        Self {
            rows,
            row_of_sample: vec![0; batch_len],
        }
    }
}
