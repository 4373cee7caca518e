//! Fixtures and checks shared by the integration and acceptance suites.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dccl::datahub::{synth_generate, Dataset, SampleRef, SynthSpec, PROFILE_DIM};
use dccl::metapatch::{local_loss, DeviceContext, ParamBasis};
use dccl::momodistill::{backbone_loss, basis_loss, encode_nodes, AuxEncoderParams, BasisBatch, ENC_W1, ENC_W2, ENC_W3};
use dccl::recmodel::{apply_patch, BackboneConfig, BackboneParams, EmbedNodes, Junction, PatchGate, PatchSite, Scorer};
use dccl::tensor::{grad_check, relative_error, Gradients, Graph, ParamSet, Tape, Tensor, Var, FD_STEP};
use dccl::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A few dozen users over three clusters.
pub fn tiny_data(seed: u64) -> Dataset {
    let spec = SynthSpec {
        users: 24,
        items: 60,
        clusters: 3,
        min_events: 5,
        mean_events: 8,
        max_events: 15,
        seed,
        ..SynthSpec::default()
    };
    synth_generate(&spec).unwrap().0
}

/// Narrow layers so finite differences stay cheap.
pub fn narrow_config(data: &Dataset) -> BackboneConfig {
    let mut c = BackboneConfig::new(data.log.n_users, data.log.n_items, data.log.n_categories);
    c.user_dim = 3;
    c.item_dim = 3;
    c.category_dim = 2;
    c.attention_dim = 4;
    c.tower = [6, 5];
    c.classifier_dim = 4;
    c.bottlenecks = [3, 2, 3];
    c.max_history = 6;
    c
}

/// Positives of every user plus one sampled negative each.
pub fn some_refs(data: &Dataset, n: usize, r: &mut impl Rng) -> Vec<SampleRef> {
    let mut pos: Vec<SampleRef> = (0..data.log.n_users)
        .flat_map(|u| (1..data.log.user_events(u).len()).map(move |i| (u, i)))
        .map(|(u, i)| data.positive(u, i))
        .collect();
    pos.shuffle(r);
    pos.truncate(n);
    data.with_negatives(&pos, 1, r)
}

fn random_params(shapes: &[(&str, &[usize])], r: &mut impl Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        p.insert(*name, Tensor::randn(shape, 1.0, r));
    }
    p
}

/// Worst relative error between analytic gradients and central differences
/// of `value`, over `picks` random entries per tensor plus each tensor's
/// largest-gradient entry.
pub fn fd_against(
    params: &ParamSet,
    grads: &Gradients,
    picks: usize,
    r: &mut impl Rng,
    value: impl Fn(&ParamSet) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let g = grads.get(name);
        let mut idx: Vec<usize> = (0..picks).map(|_| r.gen_range(0..t.len())).collect();
        if let Some(g) = g {
            let top = (0..g.len())
                .max_by(|&a, &b| g.data()[a].abs().total_cmp(&g.data()[b].abs()))
                .unwrap_or(0);
            idx.push(top);
        }
        for i in idx {
            let orig = t.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + FD_STEP;
            let up = value(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - FD_STEP;
            let down = value(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.map_or(0.0, |g| g.data()[i]);
            let e = relative_error(analytic, numeric);
            if e > 5e-5 && std::env::var("FD_DEBUG").is_ok() {
                eprintln!("{name}[{i}] analytic {analytic:e} numeric {numeric:e} up {up:e} down {down:e}");
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Scalar `sum(x * w)` with a fixed random `w`, so every output entry gets a
/// distinct upstream gradient.
fn weigh(t: &mut Tape, x: &Var, r: &mut impl Rng) -> Result<Var> {
    let shape = t.value(x).shape().to_vec();
    let w = t.constant(Tensor::randn(&shape, 1.0, r));
    let y = t.mul(x, &w)?;
    t.sum(&y)
}

/// Every differentiable op and composite, checked at one seed. Returns the
/// worst relative error per check.
pub fn grad_fidelity(seed: u64) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let mut r = rng(seed);
    let w_seed: u64 = r.gen();

    macro_rules! op {
        ($name:expr, $shapes:expr, |$t:ident, $v:ident| $body:expr) => {{
            let params = random_params($shapes, &mut r);
            let rep = grad_check(&params, FD_STEP, |$t: &mut Tape, $v: &BTreeMap<String, Var>| {
                let mut wr = rng(w_seed);
                let y = $body?;
                weigh($t, &y, &mut wr)
            })?;
            out.insert($name.to_string(), rep.max_rel_error);
        }};
    }

    op!("matmul", &[("a", &[3, 4]), ("b", &[4, 2])], |t, v| t.matmul(&v["a"], &v["b"]));
    op!("matmul_transb", &[("a", &[3, 4]), ("b", &[5, 4])], |t, v| t.matmul_transb(&v["a"], &v["b"]));
    op!("add", &[("a", &[2, 3]), ("b", &[2, 3])], |t, v| t.add(&v["a"], &v["b"]));
    op!("mul", &[("a", &[2, 3]), ("b", &[2, 3])], |t, v| t.mul(&v["a"], &v["b"]));
    op!("bias_add", &[("x", &[3, 4]), ("b", &[4])], |t, v| t.bias_add(&v["x"], &v["b"]));
    op!("concat", &[("a", &[2, 3]), ("b", &[2, 1]), ("c", &[2, 2])], |t, v| t
        .concat(&[&v["a"], &v["b"], &v["c"]]));
    op!("tanh", &[("x", &[3, 3])], |t, v| t.tanh(&v["x"]));
    op!("relu", &[("x", &[3, 3])], |t, v| t.relu(&v["x"]));
    op!("sigmoid", &[("x", &[3, 3])], |t, v| t.sigmoid(&v["x"]));
    op!("softmax", &[("x", &[3, 5])], |t, v| t.softmax(&v["x"], None));
    op!("softmax_masked", &[("x", &[3, 5])], |t, v| t.softmax(&v["x"], Some(vec![5, 2, 1])));
    op!("gather", &[("table", &[4, 3])], |t, v| t.gather(&v["table"], vec![2, 0, 2, 3, 2]));
    op!("mean", &[("x", &[3, 4])], |t, v| {
        let m = t.mean(&v["x"])?;
        t.mul(&m, &m)
    });
    op!("sum", &[("x", &[3, 4])], |t, v| {
        let s = t.sum(&v["x"])?;
        t.mul(&s, &s)
    });
    op!("scale", &[("x", &[2, 3])], |t, v| t.scale(&v["x"], -1.7));
    op!("reshape", &[("x", &[2, 6])], |t, v| t.reshape(&v["x"], vec![3, 4]));
    op!("slice_cols", &[("x", &[3, 6])], |t, v| t.slice_cols(&v["x"], 1, 4));
    op!("batched_vecmat", &[("x", &[2, 3]), ("m", &[2, 12])], |t, v| t.batched_vecmat(&v["x"], &v["m"], 3, 4));
    op!("batched_matvec", &[("m", &[2, 12]), ("x", &[2, 3])], |t, v| t.batched_matvec(&v["m"], &v["x"], 4, 3));
    let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    op!("bce_with_logits", &[("z", &[6, 1])], |t, v| t.bce_with_logits(&v["z"], labels.clone()));
    let teacher: Vec<f64> = (0..6).map(|_| r.gen_range(0.02..0.98)).collect();
    op!("kl_bernoulli", &[("z", &[6, 1])], |t, v| t.kl_bernoulli(&v["z"], teacher.clone()));

    // bottleneck patch with per-row parameters
    let site = PatchSite {
        junction: Junction::J1,
        width: 4,
        bottleneck: 2,
    };
    let k = site.param_count();
    op!("patch_bottleneck", &[("v", &[3, 4]), ("flat", &[3, k])], |t, v| apply_patch(
        t, &v["v"], &v["flat"], &site
    ));

    // encoder U(code, u) = W1 tanh(W2 code + W3 u)
    op!(
        "aux_encoder",
        &[
            (ENC_W1, &[5, 5]),
            (ENC_W2, &[5, 5]),
            (ENC_W3, &[5, PROFILE_DIM]),
            ("codes", &[3, 5]),
            ("profiles", &[3, PROFILE_DIM]),
        ],
        |t, v| encode_nodes(t, &[v[ENC_W1], v[ENC_W2], v[ENC_W3]], &v["codes"], &v["profiles"])
    );

    let data = tiny_data(seed);
    let config = narrow_config(&data);
    let backbone = BackboneParams::init(&config, &mut r)?;
    // inflate the default init so the check sees non-trivial curvature
    let mut tensors = backbone.tensors.clone();
    for name in backbone.tensors.names().map(str::to_string).collect::<Vec<_>>() {
        for x in tensors.get_mut(&name)?.data_mut() {
            *x = *x * 3.0 + r.gen_range(-0.1..0.1);
        }
    }
    let backbone = BackboneParams::from_tensors(config.clone(), tensors)?;
    let refs = some_refs(&data, 6, &mut r);

    // attention block: embeddings, projections, masked softmax, pooling
    {
        let batch = data.batch(&refs, config.max_history);
        let run = |p: &ParamSet| -> Result<(f64, Gradients)> {
            let b = BackboneParams::from_tensors(config.clone(), p.clone())?;
            let mut t = Tape::new();
            let e = EmbedNodes::bind(&mut t, &b, true);
            let proj = e.project(&mut t)?;
            let emb = e.embed(&mut t, &proj, &config, &batch)?;
            let mut wr = rng(w_seed);
            let loss = weigh(&mut t, &emb.features, &mut wr)?;
            Ok((t.value(&loss).item(), t.backward(loss)?))
        };
        let (_, grads) = run(&backbone.tensors)?;
        let e = fd_against(&backbone.tensors, &grads, 4, &mut r, |p| Ok(run(p)?.0))?;
        out.insert("attention_block".into(), e);
    }

    // backbone objective: pointwise cross-entropy plus weighted KL
    {
        let teacher: Vec<f64> = (0..refs.len()).map(|_| r.gen_range(0.05..0.95)).collect();
        let beta = 0.7;
        let (_, grads) = backbone_loss(&backbone, &data, &refs, Some((&teacher, beta)))?;
        let e = fd_against(&backbone.tensors, &grads, 4, &mut r, |p| {
            let b = BackboneParams::from_tensors(config.clone(), p.clone())?;
            Ok(backbone_loss(&b, &data, &refs, Some((&teacher, beta)))?.0 .2)
        })?;
        out.insert("backbone_objective".into(), e);
        let (_, grads) = backbone_loss(&backbone, &data, &refs, None)?;
        let e = fd_against(&backbone.tensors, &grads, 4, &mut r, |p| {
            let b = BackboneParams::from_tensors(config.clone(), p.clone())?;
            Ok(backbone_loss(&b, &data, &refs, None)?.0 .2)
        })?;
        out.insert("cross_entropy".into(), e);
    }

    let code_dim = 4;
    let basis = ParamBasis::random(&config, code_dim, 0.3, &mut r)?;
    let scorer = Scorer::new(&backbone)?;
    let batch = data.batch(&refs, config.max_history);
    let features = scorer.features(&batch)?;

    // device objective: only the code is trainable
    {
        let ctx = DeviceContext {
            data: &data,
            backbone: &backbone,
            scorer: &scorer,
            basis: &basis,
        };
        let code: Vec<f64> = (0..code_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (_, grads) = local_loss(&ctx, &code, &features, &batch.labels, PatchGate::ALL_ON)?;
        let mut p = ParamSet::new();
        p.insert(dccl::metapatch::CODE_PARAM, Tensor::matrix(1, code_dim, code)?);
        let e = fd_against(&p, &grads, code_dim, &mut r, |p| {
            let c = p.get(dccl::metapatch::CODE_PARAM)?.data().to_vec();
            Ok(local_loss(&ctx, &c, &features, &batch.labels, PatchGate::ALL_ON)?.0)
        })?;
        out.insert("device_objective".into(), e);
    }

    // basis and encoder objective
    {
        let devices = 3;
        let enc = {
            let mut e = AuxEncoderParams::init(code_dim, PROFILE_DIM, &mut r);
            e.tensors.insert(ENC_W1, Tensor::randn(&[code_dim, code_dim], 0.5, &mut r));
            e
        };
        let bb = BasisBatch {
            features: features.clone(),
            labels: batch.labels.clone(),
            codes: Tensor::randn(&[devices, code_dim], 1.0, &mut r),
            profiles: Tensor::randn(&[devices, PROFILE_DIM], 1.0, &mut r),
            row_of_sample: (0..refs.len()).map(|i| i % devices).collect(),
            teacher: Some((0..refs.len()).map(|_| r.gen_range(0.05..0.95)).collect()),
        };
        let beta = 0.6;
        let (_, grads) = basis_loss(&basis, &enc, &backbone, &bb, beta, PatchGate::ALL_ON)?;
        let mut joint = basis.tensors.clone();
        joint.extend(enc.tensors.clone());
        let e = fd_against(&joint, &grads, 6, &mut r, |p| {
            let mut bt = ParamSet::new();
            let mut et = ParamSet::new();
            for (n, t) in p.iter() {
                if n.starts_with("enc.") {
                    et.insert(n, t.clone());
                } else {
                    bt.insert(n, t.clone());
                }
            }
            let b = ParamBasis::from_tensors(&config, code_dim, bt)?;
            let en = AuxEncoderParams::from_tensors(et)?;
            Ok(basis_loss(&b, &en, &backbone, &bb, beta, PatchGate::ALL_ON)?.0 .2)
        })?;
        out.insert("basis_objective".into(), e);
    }
    Ok(out)
}

/// Brute-force metric oracles over raw score lists (ground truth first).
pub mod oracle {
    /// Rank of the ground truth by sorting, ties placed ahead of it.
    pub fn rank(scores: &[f64]) -> usize {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // stable sort by descending score with the ground truth last among equals
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then((a == 0).cmp(&(b == 0))));
        order.iter().position(|&i| i == 0).unwrap() + 1
    }

    pub fn hit_rate(cases: &[Vec<f64>], k: usize) -> f64 {
        cases.iter().map(|s| if rank(s) <= k { 1.0 } else { 0.0 }).sum::<f64>() / cases.len() as f64
    }

    pub fn ndcg(cases: &[Vec<f64>], k: usize) -> f64 {
        cases
            .iter()
            .map(|s| {
                let r = rank(s);
                if r <= k {
                    std::f64::consts::LN_2 / ((r + 1) as f64).ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / cases.len() as f64
    }

    /// Probability that a random negative scores below the ground truth,
    /// by enumerating every pair.
    pub fn macro_auc(cases: &[Vec<f64>]) -> f64 {
        let per: Vec<f64> = cases
            .iter()
            .map(|s| {
                let neg = &s[1..];
                let mut wins = 0.0;
                for n in neg {
                    wins += match s[0].partial_cmp(n).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
                wins / neg.len() as f64
            })
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    }
}

/// A fixture of 1 to 8 cases with 2 to 12 candidates each, scores drawn from
/// a coarse grid so ties occur.
pub fn metric_fixture(r: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = r.gen_range(1..=8);
    (0..n)
        .map(|_| {
            let m = r.gen_range(2..=12);
            (0..m).map(|_| r.gen_range(-4i32..=4) as f64 * 0.25).collect()
        })
        .collect()
}

/// A lifecycle small enough to run many times: two slices, one epoch each.
pub fn small_run(output: &std::path::Path) -> dccl::orchestrator::RunConfig {
    let mut c = dccl::orchestrator::RunConfig::default();
    for (k, v) in [
        ("synth.users", "60"),
        ("synth.items", "240"),
        ("synth.clusters", "4"),
        ("synth.mean_events", "12"),
        ("synth.max_events", "40"),
        ("slices", "2"),
        ("eval_negatives", "20"),
        ("groups", "4"),
        ("pretrain.epochs", "1"),
        ("pretrain.batch_size", "64"),
        ("pretrain_basis.batch_size", "64"),
        ("cloud.batch_size", "64"),
        ("device.batch_size", "8"),
    ] {
        c.set(k, v).unwrap();
    }
    c.output = output.to_path_buf();
    c
}
