//! Module ablation and LANet-count sweeps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::save_checkpoint;
use crate::config_file::{render_model_config, RunConfig};
use crate::error::{MafError, Result};
use crate::model::{init_params, MafConfig};
use crate::synth::Sample;
use crate::tensor_file::write_atomic;
use crate::train::{evaluate, train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    BackboneOnly,
    PlusLlfe,
    PlusMlfeDrop,
    NoDrop,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::BackboneOnly,
        Variant::PlusLlfe,
        Variant::PlusMlfeDrop,
        Variant::NoDrop,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BackboneOnly => "backbone_only",
            Variant::PlusLlfe => "plus_llfe",
            Variant::PlusMlfeDrop => "plus_mlfe_drop",
            Variant::NoDrop => "mlfe_llfe_no_drop",
            Variant::Full => "full",
        }
    }

    pub fn configure(self, base: &MafConfig) -> MafConfig {
        let mut c = base.clone();
        match self {
            Variant::BackboneOnly => (c.use_mlfe, c.use_llfe) = (false, false),
            Variant::PlusLlfe => (c.use_mlfe, c.use_llfe) = (false, true),
            Variant::PlusMlfeDrop => (c.use_mlfe, c.use_llfe) = (true, false),
            Variant::NoDrop => {
                (c.use_mlfe, c.use_llfe) = (true, true);
                (c.p_map, c.p_head) = (0.0, 0.0);
            }
            Variant::Full => (c.use_mlfe, c.use_llfe) = (true, true),
        }
        c
    }
}

/// Row label used for the LANet-count sweep.
pub const LANET_SWEEP: &str = "lanet_sweep";
pub const LANET_COUNTS: [usize; 4] = [1, 2, 3, 4];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationJob {
    pub variant: &'static str,
    pub n: usize,
    pub seed: u64,
    pub config: MafConfig,
}

impl AblationJob {
    pub fn dir_name(&self) -> String {
        format!("{}-n{}-seed{}", self.variant, self.n, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub n: usize,
    pub seed: u64,
    pub acc: f64,
    pub f1: f64,
}

/// Every variant over every seed, then every LANet count over every seed.
pub fn plan(run: &RunConfig) -> Vec<AblationJob> {
    let mut jobs = Vec::new();
    for v in Variant::ALL {
        for &seed in &run.seeds {
            jobs.push(AblationJob {
                variant: v.name(),
                n: run.model.num_lanets,
                seed,
                config: v.configure(&run.model),
            });
        }
    }
    for n in LANET_COUNTS {
        for &seed in &run.seeds {
            let config = MafConfig {
                num_lanets: n,
                ..Variant::Full.configure(&run.model)
            };
            jobs.push(AblationJob {
                variant: LANET_SWEEP,
                n,
                seed,
                config,
            });
        }
    }
    jobs
}

/// Trains `config` from `init_params(config, seed)` with trainer seed `seed`
/// and returns test accuracy and F1.
pub fn run_job(
    config: &MafConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    train_set: &[Sample],
    test_set: &[Sample],
    out: Option<&Path>,
) -> Result<(f64, f64)> {
    let tc = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let (params, history) = train(config, init_params(config, seed)?, train_set, test_set, &tc)?;
    let eval = evaluate(&params, test_set, config)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| MafError::io(dir, e))?;
        write_atomic(&dir.join("history.csv"), history.to_csv().as_bytes())?;
        save_checkpoint(dir.join("model.ckpt"), config, &params)?;
    }
    Ok((eval.acc, eval.f1))
}

/// Runs the plan on at most `jobs` worker threads. Jobs that resolve to the
/// same configuration and seed are trained once and reported under each
/// label. When `out` is given, each trained job writes its history and
/// checkpoint to its own subdirectory.
pub fn run_ablation(
    run: &RunConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    jobs: usize,
    out: Option<&Path>,
    on_done: impl Fn(&AblationJob, f64, f64) + Sync,
) -> Result<Vec<AblationRow>> {
    run.validate()?;
    let planned = plan(run);
    let mut unique: Vec<&AblationJob> = Vec::new();
    let mut index: HashMap<(String, u64), usize> = HashMap::new();
    let slots: Vec<usize> = planned
        .iter()
        .map(|job| {
            let key = (render_model_config(&job.config), job.seed);
            *index.entry(key).or_insert_with(|| {
                unique.push(job);
                unique.len() - 1
            })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MafError::Contract(format!("cannot start worker pool: {e}")))?;
    let results = pool.install(|| {
        unique
            .par_iter()
            .map(|job| {
                let dir = out.map(|o| o.join(job.dir_name()));
                let r = run_job(&job.config, &run.train, job.seed, train_set, test_set, dir.as_deref())?;
                on_done(job, r.0, r.1);
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    Ok(planned
        .iter()
        .zip(slots)
        .map(|(job, slot)| AblationRow {
            variant: job.variant.to_string(),
            n: job.n,
            seed: job.seed,
            acc: results[slot].0,
            f1: results[slot].1,
        })
        .collect())
}

pub const REPORT_HEADER: &str = "variant,n,seed,acc,f1";

pub fn report_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6},{:.6}", r.variant, r.n, r.seed, r.acc, r.f1);
    }
    s
}

/// Mean accuracy over the rows matching `variant` and `n`.
pub fn mean_acc(rows: &[AblationRow], variant: &str, n: usize) -> Option<f64> {
    let accs: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.n == n)
        .map(|r| r.acc)
        .collect();
    (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_row_count() {
        let mut run = RunConfig::toy();
        run.seeds = vec![1, 2, 3];
        assert_eq!(plan(&run).len(), 5 * 3 + 4 * 3);
    }

    #[test]
    fn variants_toggle_modules() {
        let base = MafConfig::toy();
        let nd = Variant::NoDrop.configure(&base);
        assert!(nd.use_mlfe && nd.use_llfe && nd.p_map == 0.0 && nd.p_head == 0.0);
        let b = Variant::BackboneOnly.configure(&base);
        assert!(!b.use_mlfe && !b.use_llfe);
        assert_eq!(Variant::Full.configure(&base), base);
    }
}
