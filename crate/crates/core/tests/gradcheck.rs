mod common;

use common::{op_cases, run_case, transformer_gradcheck};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>()) {
        for case in op_cases(seed) {
            let report = run_case(&case).unwrap();
            prop_assert!(report.passed(), "{}: {:?}", case.name, report.failures.first());
            prop_assert!(report.checked > 0, "{}", case.name);
        }
    }
}

#[test]
fn transformer_matches_finite_differences() {
    for seed in 0..3 {
        let report = transformer_gradcheck(seed).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", &report.failures[..report.failures.len().min(3)]);
        assert!(report.checked > 500);
    }
}
