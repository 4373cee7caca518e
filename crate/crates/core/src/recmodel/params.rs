use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

use super::BackboneConfig;

pub const USER_EMB: &str = "emb.user";
pub const ITEM_EMB: &str = "emb.item";
pub const CAT_EMB: &str = "emb.cat";
pub const Q_ITEM: &str = "attn.q_item";
pub const Q_CAT: &str = "attn.q_cat";
pub const K_ITEM: &str = "attn.k_item";
pub const K_CAT: &str = "attn.k_cat";
pub const V_ITEM: &str = "attn.v_item";
pub const V_CAT: &str = "attn.v_cat";
pub const TOWER_W: [&str; 3] = ["tower.w1", "tower.w2", "tower.w3"];
pub const TOWER_B: [&str; 3] = ["tower.b1", "tower.b2", "tower.b3"];
pub const OUT_W: &str = "out.w";
pub const OUT_B: &str = "out.b";

/// Weights of the cloud model: embeddings, attention projections and tower.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub tensors: ParamSet,
}

impl BackboneParams {
    /// Expected shape of every named tensor.
    pub fn layout(config: &BackboneConfig) -> Vec<(&'static str, Vec<usize>)> {
        let a = config.attention_dim;
        let widths = [config.tower[0], config.tower[1], config.classifier_dim];
        let fan_in = [config.tower_input_dim(), widths[0], widths[1]];
        let mut out = vec![
            (USER_EMB, vec![config.n_users, config.user_dim]),
            (ITEM_EMB, vec![config.n_items, config.item_dim]),
            (CAT_EMB, vec![config.n_categories, config.category_dim]),
            (Q_ITEM, vec![config.item_dim, a]),
            (Q_CAT, vec![config.category_dim, a]),
            (K_ITEM, vec![config.item_dim, a]),
            (K_CAT, vec![config.category_dim, a]),
            (V_ITEM, vec![config.item_dim, a]),
            (V_CAT, vec![config.category_dim, a]),
        ];
        for l in 0..3 {
            out.push((TOWER_W[l], vec![fan_in[l], widths[l]]));
            out.push((TOWER_B[l], vec![widths[l]]));
        }
        out.push((OUT_W, vec![config.classifier_dim, 1]));
        out.push((OUT_B, vec![1]));
        out
    }

    /// Small random embeddings, He-scaled tower weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut tensors = ParamSet::new();
        for (name, shape) in Self::layout(config) {
            let t = if name.starts_with("emb.") {
                Tensor::randn(&shape, 0.1, rng)
            } else if name.starts_with("attn.") {
                Tensor::randn(&shape, (1.0 / shape[0] as f64).sqrt(), rng)
            } else if name.starts_with("tower.w") {
                Tensor::randn(&shape, (2.0 / shape[0] as f64).sqrt(), rng)
            } else if name == OUT_W {
                Tensor::randn(&shape, (1.0 / shape[0] as f64).sqrt(), rng)
            } else {
                Tensor::zeros(&shape)
            };
            tensors.insert(name, t);
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn zeros(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut tensors = ParamSet::new();
        for (name, shape) in Self::layout(config) {
            tensors.insert(name, Tensor::zeros(&shape));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Wraps loaded tensors after checking them against the layout.
    pub fn from_tensors(config: BackboneConfig, tensors: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        if tensors.len() != layout.len() {
            return Err(Error::Data(format!(
                "backbone has {} tensors, expected {}",
                tensors.len(),
                layout.len()
            )));
        }
        for (name, shape) in layout {
            let t = tensors.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "backbone",
                    format!("{name}: expected {shape:?}, got {:?}", t.shape()),
                ));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).expect("backbone layout is validated on construction")
    }

    pub fn fingerprint(&self) -> String {
        self.tensors.fingerprint()
    }
}
