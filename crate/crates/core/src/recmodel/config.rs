use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three patch junctions in the tower.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Junction {
    /// After the first tower layer.
    J1,
    /// After the second tower layer.
    J2,
    /// After the classifier layer, i.e. the input of the output transform.
    J3,
}

impl Junction {
    pub const ALL: [Junction; 3] = [Junction::J1, Junction::J2, Junction::J3];

    pub fn index(self) -> usize {
        match self {
            Junction::J1 => 0,
            Junction::J2 => 1,
            Junction::J3 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Junction::J1 => "j1",
            Junction::J2 => "j2",
            Junction::J3 => "j3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub user_dim: usize,
    pub item_dim: usize,
    pub category_dim: usize,
    /// Width of the query, key and value projections.
    pub attention_dim: usize,
    /// Hidden widths of the two tower layers (junctions J1 and J2).
    pub tower: [usize; 2],
    /// Width of the classifier layer feeding the output transform (junction J3).
    pub classifier_dim: usize,
    /// Bottleneck width of the patch at each junction.
    pub bottlenecks: [usize; 3],
    pub max_history: usize,
}

impl BackboneConfig {
    pub fn new(n_users: usize, n_items: usize, n_categories: usize) -> Self {
        Self {
            n_users,
            n_items,
            n_categories,
            user_dim: 8,
            item_dim: 8,
            category_dim: 8,
            attention_dim: 32,
            tower: [64, 32],
            classifier_dim: 32,
            bottlenecks: [32, 16, 32],
            max_history: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_categories", self.n_categories),
            ("user_dim", self.user_dim),
            ("item_dim", self.item_dim),
            ("category_dim", self.category_dim),
            ("attention_dim", self.attention_dim),
            ("tower[0]", self.tower[0]),
            ("tower[1]", self.tower[1]),
            ("classifier_dim", self.classifier_dim),
            ("bottlenecks[0]", self.bottlenecks[0]),
            ("bottlenecks[1]", self.bottlenecks[1]),
            ("bottlenecks[2]", self.bottlenecks[2]),
            ("max_history", self.max_history),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Width of the concatenated feature vector entering the tower.
    pub fn tower_input_dim(&self) -> usize {
        self.user_dim + self.item_dim + self.category_dim + self.attention_dim
    }

    pub fn junction_width(&self, j: Junction) -> usize {
        match j {
            Junction::J1 => self.tower[0],
            Junction::J2 => self.tower[1],
            Junction::J3 => self.classifier_dim,
        }
    }

    pub fn site(&self, j: Junction) -> PatchSite {
        PatchSite {
            junction: j,
            width: self.junction_width(j),
            bottleneck: self.bottlenecks[j.index()],
        }
    }

    pub fn sites(&self) -> [PatchSite; 3] {
        Junction::ALL.map(|j| self.site(j))
    }
}

/// Geometry of the bottleneck patch attached at one junction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSite {
    pub junction: Junction,
    /// Width `w` of the layer output being patched.
    pub width: usize,
    /// Bottleneck width `b`.
    pub bottleneck: usize,
}

impl PatchSite {
    /// `2wb + b + w`: down matrix, bottleneck bias, up matrix, output bias.
    pub fn param_count(&self) -> usize {
        2 * self.width * self.bottleneck + self.bottleneck + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDims {
    pub per_site: [usize; 3],
    pub total: usize,
}

pub fn patch_dims(config: &BackboneConfig) -> PatchDims {
    let per_site = config.sites().map(|s| s.param_count());
    PatchDims {
        per_site,
        total: per_site.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_patch_budget() {
        let dims = patch_dims(&BackboneConfig::new(10, 10, 2));
        assert_eq!(dims.per_site, [4192, 1072, 2112]);
        assert_eq!(dims.total, 7376);
        assert!(32.0 / (dims.total as f64) < 0.005);
    }

    #[test]
    fn wider_layers_cost_more() {
        let base = BackboneConfig::new(10, 10, 2);
        let total = patch_dims(&base).total;
        for i in 0..5 {
            let mut c = base.clone();
            match i {
                0 => c.tower[0] += 1,
                1 => c.tower[1] += 1,
                2 => c.classifier_dim += 1,
                3 => c.bottlenecks[0] += 1,
                _ => c.bottlenecks[2] += 1,
            }
            assert!(patch_dims(&c).total > total);
        }
    }

    #[test]
    fn zero_width_rejected() {
        let mut c = BackboneConfig::new(10, 10, 2);
        c.attention_dim = 0;
        assert!(c.validate().is_err());
    }
}
