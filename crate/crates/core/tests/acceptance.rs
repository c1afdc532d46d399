//! Acceptance gate: every criterion must pass at its stated tolerance.
//! One line per criterion is printed (run with `--nocapture` to see them
//! as they finish).

use kbrw_core::acceptance::{run_all, AcceptanceConfig};

#[test]
fn acceptance_suite() {
    let results = run_all(&AcceptanceConfig::default());
    let mut all_ok = true;
    for r in &results {
        println!("{}", r.line());
        all_ok &= r.passed;
    }
    assert!(
        all_ok,
        "acceptance failures:\n{}",
        results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.line())
            .collect::<Vec<_>>()
            .join("\n")
    );
}
