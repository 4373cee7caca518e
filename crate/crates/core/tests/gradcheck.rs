mod common;

#[test]
fn every_op_and_composite_matches_finite_differences() {
    for seed in 0..3 {
        let report = common::grad_fidelity(seed).unwrap();
        for (name, err) in &report {
            assert!(*err <= 1e-4, "seed {seed}: {name} relative error {err:e}");
        }
        assert!(report.len() >= 28, "checks run: {:?}", report.keys());
    }
}
