use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::recmodel::checkpoint::{load_checkpoint, save_checkpoint, Meta};
use crate::tensor::{Graph, ParamSet, Tensor};

pub const ENC_W1: &str = "enc.w1";
pub const ENC_W2: &str = "enc.w2";
pub const ENC_W3: &str = "enc.w3";

/// `U(code, u) = W1 tanh(W2 code + W3 u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxEncoderParams {
    pub code_dim: usize,
    pub profile_dim: usize,
    pub tensors: ParamSet,
}

impl AuxEncoderParams {
    pub fn zeros(code_dim: usize, profile_dim: usize) -> Self {
        let mut tensors = ParamSet::new();
        tensors.insert(ENC_W1, Tensor::zeros(&[code_dim, code_dim]));
        tensors.insert(ENC_W2, Tensor::zeros(&[code_dim, code_dim]));
        tensors.insert(ENC_W3, Tensor::zeros(&[code_dim, profile_dim]));
        Self {
            code_dim,
            profile_dim,
            tensors,
        }
    }

    /// `W1 = 0`, so the encoder starts out emitting zeros; `W2`, `W3` are
    /// `N(0, 1/fan_in)`.
    pub fn init<R: Rng + ?Sized>(code_dim: usize, profile_dim: usize, rng: &mut R) -> Self {
        let mut e = Self::zeros(code_dim, profile_dim);
        e.tensors.insert(ENC_W2, Tensor::randn(&[code_dim, code_dim], 1.0 / (code_dim as f64).sqrt(), rng));
        e.tensors.insert(ENC_W3, Tensor::randn(&[code_dim, profile_dim], 1.0 / (profile_dim as f64).sqrt(), rng));
        e
    }

    pub fn from_tensors(tensors: ParamSet) -> Result<Self> {
        let w3 = tensors.get(ENC_W3)?;
        let (code_dim, profile_dim) = w3.dims2().filter(|_| w3.shape().len() == 2).ok_or_else(|| Error::shape("encoder", "W3 must be rank 2"))?;
        let expect = Self::zeros(code_dim, profile_dim);
        for (name, t) in expect.tensors.iter() {
            if tensors.get(name)?.shape() != t.shape() {
                return Err(Error::shape("encoder", format!("{name}: {:?}", tensors.get(name)?.shape())));
            }
        }
        if !tensors.all_finite() {
            return Err(Error::NonFinite("encoder".into()));
        }
        Ok(Self {
            code_dim,
            profile_dim,
            tensors,
        })
    }

    pub fn fingerprint(&self) -> String {
        self.tensors.fingerprint()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = Meta::new();
        meta.insert("kind".into(), "encoder".into());
        save_checkpoint(path, &meta, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(load_checkpoint(path)?.1)
    }
}

/// Batched encoder on a graph: `codes [n, K]`, `profiles [n, d]` -> `[n, K]`.
pub fn encode_nodes<G: Graph>(g: &mut G, w: &[G::Node; 3], codes: &G::Node, profiles: &G::Node) -> Result<G::Node> {
    let a = g.matmul_transb(codes, &w[1])?;
    let b = g.matmul_transb(profiles, &w[2])?;
    let s = g.add(&a, &b)?;
    let t = g.tanh(&s)?;
    g.matmul_transb(&t, &w[0])
}

/// Encoder output for one device.
pub fn encode(enc: &AuxEncoderParams, code: &[f64], profile: &[f64]) -> Result<Vec<f64>> {
    if code.len() != enc.code_dim || profile.len() != enc.profile_dim {
        return Err(Error::shape(
            "encode",
            format!(
                "code {} / profile {} for encoder {}x{}",
                code.len(),
                profile.len(),
                enc.code_dim,
                enc.profile_dim
            ),
        ));
    }
    let mut g = crate::tensor::Eager;
    let w = [ENC_W1, ENC_W2, ENC_W3].map(|n| g.constant(enc.tensors.get(n).expect("encoder tensor").clone()));
    let c = g.constant(Tensor::matrix(1, code.len(), code.to_vec())?);
    let p = g.constant(Tensor::matrix(1, profile.len(), profile.to_vec())?);
    Ok(encode_nodes(&mut g, &w, &c, &p)?.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_w1_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = AuxEncoderParams::init(4, 3, &mut rng);
        assert_eq!(encode(&e, &[1.0, -2.0, 0.5, 3.0], &[1.0, 1.0, -1.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn zero_inputs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e = AuxEncoderParams::init(4, 3, &mut rng);
        e.tensors.insert(ENC_W1, Tensor::randn(&[4, 4], 1.0, &mut rng));
        assert_eq!(encode(&e, &[0.0; 4], &[0.0; 3]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, d) = (5, 3);
        let mut e = AuxEncoderParams::init(k, d, &mut rng);
        e.tensors.insert(ENC_W1, Tensor::randn(&[k, k], 1.0, &mut rng));
        let code: Vec<f64> = (0..k).map(|i| 0.3 * i as f64 - 0.5).collect();
        let prof = vec![1.0, -0.5, 0.25];
        let w = |n: &str, i: usize, j: usize, cols: usize| e.tensors.get(n).unwrap().data()[i * cols + j];
        let hidden: Vec<f64> = (0..k)
            .map(|i| {
                let a: f64 = (0..k).map(|j| w(ENC_W2, i, j, k) * code[j]).sum();
                let b: f64 = (0..d).map(|j| w(ENC_W3, i, j, d) * prof[j]).sum();
                (a + b).tanh()
            })
            .collect();
        let got = encode(&e, &code, &prof).unwrap();
        for i in 0..k {
            let want: f64 = (0..k).map(|j| w(ENC_W1, i, j, k) * hidden[j]).sum();
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = AuxEncoderParams::zeros(4, 3);
        assert!(encode(&e, &[0.0; 3], &[0.0; 3]).is_err());
    }
}
