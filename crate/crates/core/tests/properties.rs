mod common;

use std::sync::Arc;

use common::{metric_fixture, narrow_config, oracle, rng, some_refs, tiny_data};
use dccl::datahub::{synth_generate, SynthSpec};
use dccl::evalmetrics::{evaluate, hit_rate_at_k, ndcg_at_k, rank_case, NdcgForm, RankedCase};
use dccl::metapatch::{generate_patches, MetaPatchVector, ParamBasis};
use dccl::momodistill::{distill_backbone, incremental_train, kl_bernoulli, DistillConfig, TeacherBundle};
use dccl::recmodel::{backbone_forward, patch_dims, patched_forward, BackboneConfig, BackboneParams, PatchGate};
use rand::Rng;

fn ranked(fixture: &[Vec<f64>]) -> Vec<RankedCase> {
    fixture.iter().enumerate().map(|(u, s)| rank_case(u, s.clone()).unwrap()).collect()
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(11);
    for _ in 0..200 {
        let fx = metric_fixture(&mut r);
        let cases = ranked(&fx);
        for k in [1, 5, 10] {
            assert!((hit_rate_at_k(&cases, k).unwrap() - oracle::hit_rate(&fx, k)).abs() <= 1e-12);
        }
        for k in [5, 10] {
            assert!((ndcg_at_k(&cases, k, NdcgForm::Standard).unwrap() - oracle::ndcg(&fx, k)).abs() <= 1e-12);
        }
        let rep = evaluate(&cases, None, NdcgForm::Standard).unwrap();
        assert!((rep.macro_auc - oracle::macro_auc(&fx)).abs() <= 1e-12);
    }
}

#[test]
fn macro_auc_ignores_monotone_transforms() {
    let transforms: [fn(f64) -> f64; 5] = [
        |x| x * x * x,
        f64::exp,
        |x| 3.0 * x - 7.0,
        f64::atan,
        |x| x.sinh() + x,
    ];
    let mut r = rng(12);
    for _ in 0..50 {
        let fx = metric_fixture(&mut r);
        let base = evaluate(&ranked(&fx), None, NdcgForm::Standard).unwrap().macro_auc;
        for f in transforms {
            let moved: Vec<Vec<f64>> = fx.iter().map(|s| s.iter().map(|&x| f(x)).collect()).collect();
            let got = evaluate(&ranked(&moved), None, NdcgForm::Standard).unwrap().macro_auc;
            assert_eq!(got, base);
        }
    }
}

#[test]
fn kl_is_nonnegative() {
    let mut r = rng(13);
    for _ in 0..100_000 {
        let (p, q): (f64, f64) = (r.gen(), r.gen());
        assert!(kl_bernoulli(p, q) >= 0.0, "kl({p}, {q})");
    }
    assert!((kl_bernoulli(0.9, 0.5) - 0.368064).abs() < 1e-6);
}

#[test]
fn default_patch_budget_is_small() {
    let d = patch_dims(&BackboneConfig::new(100, 100, 10));
    assert_eq!(d.per_site, [4192, 1072, 2112]);
    assert_eq!(d.total, 7376);
    assert!(32.0 / (d.total as f64) < 0.005);
}

#[test]
fn zero_code_and_closed_gate_leave_the_backbone_alone() {
    let (data, _) = synth_generate(&SynthSpec {
        users: 60,
        items: 300,
        clusters: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut r = rng(14);
    let config = BackboneConfig::new(data.log.n_users, data.log.n_items, data.log.n_categories);
    let params = BackboneParams::init(&config, &mut r).unwrap();
    let basis = ParamBasis::random(&config, 32, 0.5, &mut r).unwrap();
    let zero = generate_patches(&basis, &MetaPatchVector::zeros(0, 32)).unwrap();
    let live = generate_patches(
        &basis,
        &MetaPatchVector {
            device: 0,
            values: (0..32).map(|_| r.gen_range(-1.0..1.0)).collect(),
        },
    )
    .unwrap();
    for s in some_refs(&data, 100, &mut r).iter().take(100) {
        let sample = data.sample(s);
        let plain = backbone_forward(&params, &sample).unwrap();
        assert_eq!(patched_forward(&params, &zero, PatchGate::ALL_ON, &sample).unwrap().to_bits(), plain.to_bits());
        assert_eq!(patched_forward(&params, &live, PatchGate::ALL_OFF, &sample).unwrap().to_bits(), plain.to_bits());
    }
}

#[test]
fn zero_beta_distillation_is_incremental_training() {
    let data = tiny_data(15);
    let mut r = rng(15);
    let config = narrow_config(&data);
    let backbone = Arc::new(BackboneParams::init(&config, &mut r).unwrap());
    let basis = Arc::new(ParamBasis::random(&config, 4, 0.3, &mut r).unwrap());
    let codes: Vec<MetaPatchVector> = (0..data.log.n_users)
        .step_by(2)
        .map(|u| MetaPatchVector {
            device: u,
            values: (0..4).map(|_| r.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let teachers = TeacherBundle::new(backbone.clone(), basis, &codes).unwrap();
    let positives: Vec<_> = (0..data.log.n_users)
        .flat_map(|u| (1..data.log.user_events(u).len()).map(move |i| (u, i)))
        .map(|(u, i)| data.positive(u, i))
        .collect();
    let dc = DistillConfig {
        beta: 0.0,
        epochs: 2,
        batch_size: 16,
        ..DistillConfig::default()
    };
    let (a, _) = incremental_train(&backbone, &data, &positives, &dc, 3, 1).unwrap();
    let (b, _) = distill_backbone(&teachers, &data, &positives, &dc, 3, 1).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let (c, _) = distill_backbone(&teachers, &data, &positives, &DistillConfig { beta: 0.5, ..dc }, 3, 1).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}
