//! End-to-end acceptance checks. Runs as a plain binary so every check
//! prints its verdict line whether it passes or not.

mod fields;
mod metrics;
mod motion;
mod oracle;
mod skin;
mod transfer;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Outcome;

const CHECKS: [(&str, Check); 14] = [
    ("skeleton field round trip", fields::round_trip),
    ("confidence correctness", fields::confidence),
    ("clustering conformance", fields::clustering),
    ("bvh oracle equivalence and speed", transfer::bvh_oracle),
    ("skin transfer fidelity", transfer::fidelity),
    ("partition of unity", transfer::partition_of_unity),
    ("skin embedding round trip", skin::round_trip),
    ("sinkhorn oracle", metrics::sinkhorn_oracle),
    ("metric axioms", metrics::axioms),
    ("metric separation", metrics::separation),
    ("icp protocol", metrics::icp),
    ("pose sampler statistics", motion::sampler),
    ("kinematics sanity", motion::kinematics),
    ("cli determinism", cli::determinism),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in CHECKS.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id == *f || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check)
            .unwrap_or_else(|_| Outcome::new(false, "panicked"));
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "[{verdict}] {id} {name}: {} ({:.1} s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        if !outcome.pass {
            failed += 1;
        }
    }
    println!("{} of {ran} acceptance checks passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
