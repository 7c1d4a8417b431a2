//! A small ablation over the module variants and LANet counts, run on a
//! reduced budget so it finishes in a few minutes.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs] [train_count] [jobs]
//! ```

use maf::ablation::{mean_acc, plan, report_csv, run_ablation, Variant, LANET_COUNTS, LANET_SWEEP};
use maf::config_file::RunConfig;
use maf::synth::{generate_synthetic, SynthSpec};

fn main() -> maf::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));
    let count: usize = args.next().map_or(256, |s| s.parse().expect("train count"));
    let jobs: usize = args.next().map_or_else(rayon::current_num_threads, |s| s.parse().expect("jobs"));

    let mut run = RunConfig::default();
    run.train.epochs = epochs;
    run.seeds = vec![0, 1];
    let spec = SynthSpec::new(run.model.image_size, count, 1).with_occlusion(0.5);
    let train_set = generate_synthetic(&spec)?;
    let test_set = generate_synthetic(&SynthSpec { seed: 2, count: count / 2, ..spec })?;

    println!("{} jobs planned", plan(&run).len());
    let rows = run_ablation(&run, &train_set, &test_set, jobs, None, |job, acc, _| {
        println!("  {:<18} n={} seed={} acc={acc:.4}", job.variant, job.n, job.seed);
    })?;
    print!("{}", report_csv(&rows));
    for v in Variant::ALL {
        if let Some(acc) = mean_acc(&rows, v.name(), run.model.num_lanets) {
            println!("{:<18} mean acc {acc:.4}", v.name());
        }
    }
    for n in LANET_COUNTS {
        if let Some(acc) = mean_acc(&rows, LANET_SWEEP, n) {
            println!("N={n:<16} mean acc {acc:.4}");
        }
    }
    Ok(())
}
