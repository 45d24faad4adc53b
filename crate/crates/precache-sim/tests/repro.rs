// temp repro runner
use precache_sim::config::{Mode, SimConfig};
use precache_sim::harness::{self, fuzz::case_source};
use precache_sim::isa::assemble;

#[test]
#[ignore]
fn repro() {
    let (src, paging) = case_source(1, 4, 1);
    println!("paging={paging}\n{src}");
    for mode in [Mode::Baseline, Mode::Precache] {
        println!("--- {mode} ---");
        let prog = assemble(&src).unwrap();
        let cfg = SimConfig { mode, cores: 1, paging, max_cycles: 300_000, ..SimConfig::default() };
        let out = harness::run_program(&cfg, &prog);
        println!("cycles={} committed={}", out.stats.cycles, out.stats.committed);
    }
}
