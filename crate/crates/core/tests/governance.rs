mod common;
#[path = "support/lifecycle.rs"]
mod lifecycle;

#[test]
fn live_is_unreachable_without_a_passing_test_run() {
    let e = lifecycle::explore();
    assert!(e.reached_live);
    eprintln!("explored {} states, {} transitions", e.states, e.transitions);
    assert_eq!(e.states, e.reference_states);
}
