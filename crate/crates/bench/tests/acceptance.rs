//! Acceptance criteria 1-11, one line per criterion. Parts listed in
//! `KNOWN_FAILURES` are reported as FAIL but do not fail the target; any other
//! failure, or a known failure that starts passing, does.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use wmlr_bench::checks::{self, KNOWN_FAILURES};

fn main() -> ExitCode {
    let start = Instant::now();
    let mut unexpected = Vec::new();
    let mut seen_known = BTreeSet::new();
    for id in checks::ALL {
        let t = Instant::now();
        let outcome = match checks::run(id) {
            Ok(o) => o,
            Err(e) => {
                println!("[FAIL] criterion {id:>2}: {} (error: {e})", checks::name(id));
                unexpected.push(format!("criterion {id}: {e}"));
                continue;
            }
        };
        println!("{outcome}");
        println!("       ({:.1} s)", t.elapsed().as_secs_f64());
        for part in outcome.failing_parts() {
            if KNOWN_FAILURES.contains(&(id, part)) {
                seen_known.insert((id, part.to_string()));
            } else {
                unexpected.push(format!("criterion {id}: {part}"));
            }
        }
    }
    for (id, part) in KNOWN_FAILURES {
        if !seen_known.contains(&(id, part.to_string())) {
            unexpected.push(format!("criterion {id}: known failure {part:?} no longer fails; update KNOWN_FAILURES"));
        }
    }
    let passed = checks::ALL.len() - seen_known.iter().map(|k| k.0).collect::<BTreeSet<_>>().len();
    println!(
        "\nacceptance: {passed}/{} criteria pass, {} known failing part(s), {} unexpected, {:.0} s",
        checks::ALL.len(),
        seen_known.len(),
        unexpected.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            println!("unexpected: {u}");
        }
        ExitCode::FAILURE
    }
}
