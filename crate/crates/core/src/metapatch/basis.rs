use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::recmodel::checkpoint::{config_meta, load_checkpoint, meta_config, save_checkpoint};
use crate::recmodel::{BackboneConfig, GeneratedPatch, PatchSite};
use crate::tensor::{Graph, ParamSet, Tensor};

/// Default length of the per-device code.
pub const DEFAULT_CODE_DIM: usize = 32;

pub const BASIS_NAMES: [&str; 3] = ["basis.j1", "basis.j2", "basis.j3"];

/// Shared matrices `Theta_l` (`K_l x code_dim`) that expand a device code
/// into patch parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBasis {
    pub sites: [PatchSite; 3],
    pub code_dim: usize,
    pub tensors: ParamSet,
}

impl ParamBasis {
    pub fn zeros(config: &BackboneConfig, code_dim: usize) -> Result<Self> {
        Self::build(config, code_dim, Tensor::zeros)
    }

    /// Entries drawn from `N(0, std^2)`.
    pub fn random<R: Rng + ?Sized>(config: &BackboneConfig, code_dim: usize, std: f64, rng: &mut R) -> Result<Self> {
        Self::build(config, code_dim, |shape| Tensor::randn(shape, std, rng))
    }

    fn build(config: &BackboneConfig, code_dim: usize, mut make: impl FnMut(&[usize]) -> Tensor) -> Result<Self> {
        config.validate()?;
        let sites = config.sites();
        let total: usize = sites.iter().map(|s| s.param_count()).sum();
        if code_dim == 0 || code_dim >= total {
            return Err(Error::Config(format!(
                "code dimension {code_dim} must lie in 1..{total} (total patch parameters)"
            )));
        }
        let mut tensors = ParamSet::new();
        for (name, site) in BASIS_NAMES.iter().zip(&sites) {
            tensors.insert(*name, make(&[site.param_count(), code_dim]));
        }
        Ok(Self { sites, code_dim, tensors })
    }

    pub fn from_tensors(config: &BackboneConfig, code_dim: usize, tensors: ParamSet) -> Result<Self> {
        let expected = Self::zeros(config, code_dim)?;
        for (name, t) in expected.tensors.iter() {
            let got = tensors.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::shape("basis", format!("{name}: {:?}, expected {:?}", got.shape(), t.shape())));
            }
            if !got.all_finite() {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        if tensors.len() != 3 {
            return Err(Error::Data(format!("basis has {} tensors, expected 3", tensors.len())));
        }
        Ok(Self {
            sites: expected.sites,
            code_dim,
            tensors,
        })
    }

    pub fn theta(&self, l: usize) -> &Tensor {
        self.tensors.get(BASIS_NAMES[l]).expect("basis tensor")
    }

    pub fn fingerprint(&self) -> String {
        self.tensors.fingerprint()
    }

    pub fn save(&self, path: &Path, config: &BackboneConfig) -> Result<()> {
        let mut meta = config_meta(config);
        meta.insert("kind".into(), "basis".into());
        meta.insert("code_dim".into(), self.code_dim.to_string());
        save_checkpoint(path, &meta, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_checkpoint(path)?;
        let config = meta_config(&meta)?;
        let code_dim = meta
            .get("code_dim")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: missing code_dim", path.display())))?;
        Self::from_tensors(&config, code_dim, tensors)
    }
}

/// Per-device code `theta_hat`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaPatchVector {
    pub device: usize,
    pub values: Vec<f64>,
}

impl MetaPatchVector {
    pub fn zeros(device: usize, code_dim: usize) -> Self {
        Self {
            device,
            values: vec![0.0; code_dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// `theta_l = Theta_l * theta_hat` for every site.
pub fn generate_patches(basis: &ParamBasis, code: &MetaPatchVector) -> Result<[GeneratedPatch; 3]> {
    if code.values.len() != basis.code_dim {
        return Err(Error::shape(
            "generate_patches",
            format!("code of length {} for basis of width {}", code.values.len(), basis.code_dim),
        ));
    }
    let make = |l: usize| -> Result<GeneratedPatch> {
        let t = basis.theta(l);
        let params = (0..basis.sites[l].param_count())
            .map(|k| t.row(k).iter().zip(&code.values).map(|(a, b)| a * b).sum())
            .collect();
        GeneratedPatch::new(basis.sites[l], params)
    };
    Ok([make(0)?, make(1)?, make(2)?])
}

/// Patch rows `[codes, K_l]` for a `[codes, code_dim]` node of codes.
pub fn patch_rows<G: Graph>(g: &mut G, codes: &G::Node, thetas: &[G::Node; 3]) -> Result<[G::Node; 3]> {
    Ok([
        g.matmul_transb(codes, &thetas[0])?,
        g.matmul_transb(codes, &thetas[1])?,
        g.matmul_transb(codes, &thetas[2])?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> BackboneConfig {
        BackboneConfig {
            tower: [6, 4],
            classifier_dim: 5,
            bottlenecks: [2, 3, 2],
            ..BackboneConfig::new(3, 4, 2)
        }
    }

    #[test]
    fn zero_code_gives_zero_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ParamBasis::random(&small(), 4, 1.0, &mut rng).unwrap();
        let p = generate_patches(&b, &MetaPatchVector::zeros(0, 4)).unwrap();
        assert!(p.iter().all(|p| p.params.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_basis_selects_column() {
        let cfg = small();
        let k1 = cfg.site(crate::recmodel::Junction::J1).param_count();
        let mut b = ParamBasis::zeros(&cfg, k1 - 1).unwrap();
        for i in 0..k1 - 1 {
            b.tensors.get_mut(BASIS_NAMES[0]).unwrap().data_mut()[i * (k1 - 1) + i] = 1.0;
        }
        let mut code = MetaPatchVector::zeros(0, k1 - 1);
        code.values[3] = 1.0;
        let p = generate_patches(&b, &code).unwrap();
        let expect: Vec<f64> = (0..k1).map(|k| if k == 3 { 1.0 } else { 0.0 }).collect();
        assert_eq!(p[0].params, expect);
    }

    #[test]
    fn matches_brute_force_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = ParamBasis::random(&small(), 5, 1.0, &mut rng).unwrap();
        let code = MetaPatchVector {
            device: 0,
            values: (0..5).map(|i| i as f64 - 1.5).collect(),
        };
        let p = generate_patches(&b, &code).unwrap();
        for l in 0..3 {
            let t = b.theta(l);
            let (rows, cols) = t.dims2().unwrap();
            for k in 0..rows {
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += t.data()[k * cols + j] * code.values[j];
                }
                assert!((acc - p[l].params[k]).abs() <= 1e-12 * (1.0 + acc.abs()));
            }
        }
    }

    #[test]
    fn wrong_code_length_rejected() {
        let b = ParamBasis::zeros(&small(), 4).unwrap();
        assert!(generate_patches(&b, &MetaPatchVector::zeros(0, 3)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small();
        let b = ParamBasis::random(&cfg, 4, 0.3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("basis.ckpt");
        b.save(&p, &cfg).unwrap();
        assert_eq!(ParamBasis::load(&p).unwrap(), b);
    }
}
