use fqpe_core::gradsuite::*;
use std::time::Instant;
fn main() {
    let t = Instant::now();
    let filter = std::env::args().nth(1);
    run_suite(&SuiteOptions::default(), filter.as_deref(), |e| {
        println!(
            "{:32} {:.3e} pass={} checked={} skipped={} worst={} {:.1}s",
            e.name,
            e.max_rel_error,
            e.passed(),
            e.coords_checked,
            e.coords_skipped,
            e.worst_point,
            t.elapsed().as_secs_f64()
        )
    })
    .unwrap();
}
