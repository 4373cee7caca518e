use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Eager, Graph, Tensor};

use super::params::*;
use super::{Batch, BackboneConfig, BackboneParams, DevicePatches, GeneratedPatch, PatchGate, PatchSite, Sample};

/// Embedding tables and attention projections bound on a graph.
pub struct EmbedNodes<N> {
    pub user: N,
    pub item: N,
    pub category: N,
    pub q_item: N,
    pub q_cat: N,
    pub k_item: N,
    pub k_cat: N,
    pub v_item: N,
    pub v_cat: N,
}

/// Tower layers and output transform bound on a graph.
pub struct TowerNodes<N> {
    pub weights: [N; 3],
    pub biases: [N; 3],
    pub out_w: N,
    pub out_b: N,
}

/// Item and category tables pushed through the query/key/value projections.
///
/// Projecting the tables once and gathering rows is the same linear map as
/// projecting each gathered embedding, at a fraction of the cost for long
/// histories.
pub struct Projections<N> {
    pub item_q: N,
    pub cat_q: N,
    pub item_k: N,
    pub cat_k: N,
    pub item_v: N,
    pub cat_v: N,
}

pub struct Embedded<N> {
    /// `[B, tower_input_dim]`
    pub features: N,
    /// `[B, width]` attention weights over the padded history.
    pub attention: N,
}

impl<N: Clone> EmbedNodes<N> {
    pub fn bind<G: Graph<Node = N>>(g: &mut G, p: &BackboneParams, trainable: bool) -> Self {
        let mut leaf = |name: &str| g.leaf(name, p.get(name).clone(), trainable);
        Self {
            user: leaf(USER_EMB),
            item: leaf(ITEM_EMB),
            category: leaf(CAT_EMB),
            q_item: leaf(Q_ITEM),
            q_cat: leaf(Q_CAT),
            k_item: leaf(K_ITEM),
            k_cat: leaf(K_CAT),
            v_item: leaf(V_ITEM),
            v_cat: leaf(V_CAT),
        }
    }

    pub fn project<G: Graph<Node = N>>(&self, g: &mut G) -> Result<Projections<N>> {
        Ok(Projections {
            item_q: g.matmul(&self.item, &self.q_item)?,
            cat_q: g.matmul(&self.category, &self.q_cat)?,
            item_k: g.matmul(&self.item, &self.k_item)?,
            cat_k: g.matmul(&self.category, &self.k_cat)?,
            item_v: g.matmul(&self.item, &self.v_item)?,
            cat_v: g.matmul(&self.category, &self.v_cat)?,
        })
    }

    /// User and candidate embeddings concatenated with the attention-pooled
    /// history, where the candidate is the query over history keys.
    pub fn embed<G: Graph<Node = N>>(
        &self,
        g: &mut G,
        proj: &Projections<N>,
        config: &BackboneConfig,
        batch: &Batch,
    ) -> Result<Embedded<N>> {
        let b = batch.len();
        let a = config.attention_dim;
        let w = batch.width;
        let user = g.gather(&self.user, batch.users.clone())?;
        let item = g.gather(&self.item, batch.items.clone())?;
        let cat = g.gather(&self.category, batch.categories.clone())?;

        let qi = g.gather(&proj.item_q, batch.items.clone())?;
        let qc = g.gather(&proj.cat_q, batch.categories.clone())?;
        let query = g.add(&qi, &qc)?;

        let ki = g.gather(&proj.item_k, batch.hist_items.clone())?;
        let kc = g.gather(&proj.cat_k, batch.hist_categories.clone())?;
        let keys = g.add(&ki, &kc)?;
        let keys = g.reshape(&keys, vec![b, w * a])?;
        let vi = g.gather(&proj.item_v, batch.hist_items.clone())?;
        let vc = g.gather(&proj.cat_v, batch.hist_categories.clone())?;
        let values = g.add(&vi, &vc)?;
        let values = g.reshape(&values, vec![b, w * a])?;

        let scores = g.batched_matvec(&keys, &query, w, a)?;
        let scores = g.scale(&scores, 1.0 / (a as f64).sqrt())?;
        let attention = g.softmax(&scores, Some(batch.hist_len.clone()))?;
        let pooled = g.batched_vecmat(&attention, &values, w, a)?;
        let features = g.concat(&[&user, &item, &cat, &pooled])?;
        Ok(Embedded { features, attention })
    }
}

impl<N: Clone> TowerNodes<N> {
    pub fn bind<G: Graph<Node = N>>(g: &mut G, p: &BackboneParams, trainable: bool) -> Self {
        let mut leaf = |name: &str| g.leaf(name, p.get(name).clone(), trainable);
        Self {
            weights: TOWER_W.map(&mut leaf),
            biases: TOWER_B.map(&mut leaf),
            out_w: leaf(OUT_W),
            out_b: leaf(OUT_B),
        }
    }

    /// Tower logits `[B, 1]`. At each junction with an open gate and a patch
    /// row set, the layer output `v` becomes `v + h(v)`.
    pub fn logits<G: Graph<Node = N>>(
        &self,
        g: &mut G,
        config: &BackboneConfig,
        features: &N,
        patches: Option<&[N; 3]>,
        gate: PatchGate,
    ) -> Result<N> {
        let mut h = features.clone();
        for (l, site) in config.sites().iter().enumerate() {
            let z = g.matmul(&h, &self.weights[l])?;
            let z = g.bias_add(&z, &self.biases[l])?;
            h = g.relu(&z)?;
            if let Some(rows) = patches {
                if gate.is_open(site.junction) {
                    h = apply_patch(g, &h, &rows[l], site)?;
                }
            }
        }
        let z = g.matmul(&h, &self.out_w)?;
        g.bias_add(&z, &self.out_b)
    }
}

/// `v + up * tanh(down * v + b_bottleneck) + b_out` with per-row parameters
/// taken from `flat` (`[B, K_l]`).
pub fn apply_patch<G: Graph>(g: &mut G, v: &G::Node, flat: &G::Node, site: &PatchSite) -> Result<G::Node> {
    let (w, b) = (site.width, site.bottleneck);
    let wb = w * b;
    let down = g.slice_cols(flat, 0, wb)?;
    let b_mid = g.slice_cols(flat, wb, wb + b)?;
    let up = g.slice_cols(flat, wb + b, 2 * wb + b)?;
    let b_out = g.slice_cols(flat, 2 * wb + b, 2 * wb + b + w)?;
    let t = g.batched_vecmat(v, &down, w, b)?;
    let t = g.add(&t, &b_mid)?;
    let t = g.tanh(&t)?;
    let r = g.batched_vecmat(&t, &up, b, w)?;
    let r = g.add(&r, &b_out)?;
    g.add(v, &r)
}

/// Expands per-device patch rows to one row per batch entry.
pub fn expand_patch_rows<G: Graph>(g: &mut G, rows: &[G::Node; 3], row_of_sample: &[usize]) -> Result<[G::Node; 3]> {
    let a = g.gather(&rows[0], row_of_sample.to_vec())?;
    let b = g.gather(&rows[1], row_of_sample.to_vec())?;
    let c = g.gather(&rows[2], row_of_sample.to_vec())?;
    Ok([a, b, c])
}

/// Inference-only view of a backbone with the history projections cached.
pub struct Scorer {
    config: BackboneConfig,
    embed: EmbedNodes<Arc<Tensor>>,
    proj: Projections<Arc<Tensor>>,
    tower: TowerNodes<Arc<Tensor>>,
}

impl Scorer {
    pub fn new(params: &BackboneParams) -> Result<Self> {
        let mut g = Eager;
        let embed = EmbedNodes::bind(&mut g, params, false);
        let proj = embed.project(&mut g)?;
        let tower = TowerNodes::bind(&mut g, params, false);
        Ok(Self {
            config: params.config.clone(),
            embed,
            proj,
            tower,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Tower input features `[B, tower_input_dim]`.
    pub fn features(&self, batch: &Batch) -> Result<Tensor> {
        batch.validate(&self.config)?;
        let mut g = Eager;
        let e = self.embed.embed(&mut g, &self.proj, &self.config, batch)?;
        Ok(Arc::try_unwrap(e.features).unwrap_or_else(|a| (*a).clone()))
    }

    pub fn attention(&self, batch: &Batch) -> Result<Tensor> {
        batch.validate(&self.config)?;
        let mut g = Eager;
        let e = self.embed.embed(&mut g, &self.proj, &self.config, batch)?;
        Ok((*e.attention).clone())
    }

    /// Logits from precomputed tower features.
    pub fn logits_from_features(
        &self,
        features: &Tensor,
        patches: Option<&DevicePatches>,
        gate: PatchGate,
    ) -> Result<Vec<f64>> {
        let mut g = Eager;
        let f = g.constant(features.clone());
        let expanded = match patches {
            Some(p) => {
                let rows = [0, 1, 2].map(|i| g.constant(p.rows[i].clone()));
                if p.row_of_sample.len() != features.dims2().map_or(0, |d| d.0) {
                    return Err(Error::shape(
                        "patched_forward",
                        format!("{} patch rows for {:?} features", p.row_of_sample.len(), features.shape()),
                    ));
                }
                Some(expand_patch_rows(&mut g, &rows, &p.row_of_sample)?)
            }
            None => None,
        };
        let logits = self.tower.logits(&mut g, &self.config, &f, expanded.as_ref(), gate)?;
        Ok(logits.data().to_vec())
    }

    pub fn logits(&self, batch: &Batch, patches: Option<&DevicePatches>, gate: PatchGate) -> Result<Vec<f64>> {
        let features = self.features(batch)?;
        self.logits_from_features(&features, patches, gate)
    }

    pub fn probabilities(&self, batch: &Batch, patches: Option<&DevicePatches>, gate: PatchGate) -> Result<Vec<f64>> {
        Ok(self
            .logits(batch, patches, gate)?
            .into_iter()
            .map(crate::tensor::ops::sigmoid)
            .collect())
    }
}

/// Click probability of the cloud model for one sample.
pub fn backbone_forward(params: &BackboneParams, sample: &Sample) -> Result<f64> {
    let scorer = Scorer::new(params)?;
    let batch = Batch::from_samples(std::slice::from_ref(sample), params.config.max_history);
    Ok(scorer.probabilities(&batch, None, PatchGate::ALL_OFF)?[0])
}

/// Click probability of the cloud model with `patches` inserted at the
/// junctions opened by `gate`.
pub fn patched_forward(
    params: &BackboneParams,
    patches: &[GeneratedPatch; 3],
    gate: PatchGate,
    sample: &Sample,
) -> Result<f64> {
    for (p, site) in patches.iter().zip(params.config.sites()) {
        if p.site != site {
            return Err(Error::shape(
                "patched_forward",
                format!("patch for {:?} does not fit site {:?}", p.site, site),
            ));
        }
    }
    let scorer = Scorer::new(params)?;
    let batch = Batch::from_samples(std::slice::from_ref(sample), params.config.max_history);
    let dp = DevicePatches::shared(patches, 1);
    Ok(scorer.probabilities(&batch, Some(&dp), gate)?[0])
}
