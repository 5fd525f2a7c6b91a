mod common;

use proptest::prelude::*;
use spid_chain::sim::gini;

proptest! {
    #[test]
    fn gini_matches_double_sum(x in prop::collection::vec(0u64..1_000, 1..40)) {
        prop_assert_eq!(gini(&x), common::naive_gini(&x));
        if let Some(g) = gini(&x) {
            prop_assert!((0.0..1.0).contains(&g));
        }
    }
}

#[test]
fn gini_closed_forms() {
    assert_eq!(gini(&[5; 10]), Some(0.0));
    let mut one = vec![0u64; 10];
    one[3] = 42;
    assert_eq!(gini(&one), Some(0.9));
    assert_eq!(gini(&[0, 0, 0]), None);
}
