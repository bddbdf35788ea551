//! Every acceptance criterion at its stated size and tolerance, one line each.

use osl_core::verify::{run_criterion, Fault, CRITERIA};

fn main() {
    let mut failed = Vec::new();
    for n in 1..=CRITERIA.len() {
        let outcome = run_criterion(n, true, Fault::None);
        println!("{outcome}");
        if !outcome.passed {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", CRITERIA.len());
    } else {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
}
