//! Orchestration behind the `swarm-mc` binary: experiment suites and the
//! CSV layouts the subcommands write.

pub mod suite;

use std::fmt::Write as _;

use swarm_mc::meanfield::EntropyRecord;

/// `step,chi2,kl,min_ratio,max_ratio,dissipation`; the dissipation column is
/// empty when it was not computed.
pub fn entropy_csv(records: &[EntropyRecord]) -> String {
    let mut s = String::from("step,chi2,kl,min_ratio,max_ratio,dissipation\n");
    for r in records {
        let diss = if r.dissipation.is_nan() {
            String::new()
        } else {
            r.dissipation.to_string()
        };
        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.chi2, r.kl, r.min_ratio, r.max_ratio, diss);
    }
    s
}
