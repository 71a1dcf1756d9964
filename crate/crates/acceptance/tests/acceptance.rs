use std::collections::BTreeSet;
use std::process::ExitCode;

/// Criteria the model cannot meet as specified; they must still fail
/// rather than silently pass.
const EXPECTED_FAILURES: [&str; 2] = ["tilt_bound", "curvature_sweep"];

fn main() -> ExitCode {
    let verdicts = magpen_acceptance::run_all(|v| println!("{}", v.line()));
    let failed: BTreeSet<&str> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    let expected: BTreeSet<&str> = EXPECTED_FAILURES.into_iter().collect();
    let passed = verdicts.len() - failed.len();
    println!("acceptance: {passed} passed, {} failed ({} expected)", failed.len(), expected.len());
    if failed == expected {
        ExitCode::SUCCESS
    } else {
        for id in failed.symmetric_difference(&expected) {
            println!("unexpected outcome: {id}");
        }
        ExitCode::FAILURE
    }
}
