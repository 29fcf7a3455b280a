//! Batches of independent experiments from one seeded generator.
//!
//! Item seeds are drawn in order from a ChaCha8 stream seeded with the
//! sweep seed, so the summary depends only on the configuration and not on
//! scheduling or `--jobs`.

use std::path::PathBuf;

use nilflow::flow::{rescale_to_sphere, type3_certificate, FlowOptions};
use nilflow::io::{save_trace, write_json};
use nilflow::soliton::{detect_convergence, orbit_invariants, OrbitInvariants, SOLITON_TOL};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::experiment::{type3_report, FlowKind, Tolerances};
use crate::source::Generator;

/// Default tolerance for merging limit fingerprints into one cluster.
pub const FINGERPRINT_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub generator: Generator,
    pub count: usize,
    pub seed: u64,
    pub kind: FlowKind,
    pub t_max: f64,
    pub tolerances: Tolerances,
    /// Worker threads; 0 lets rayon choose.
    pub jobs: usize,
    /// Per-item trace and result files.
    pub out_dir: Option<PathBuf>,
    pub fingerprint_tol: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.count == 0 {
            return Err(CliError::Config("--count must be at least 1".into()));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(CliError::Config(format!(
                "--t-max must be positive and finite, got {}",
                self.t_max
            )));
        }
        if self.fingerprint_tol.is_nan() || self.fingerprint_tol < 0.0 {
            return Err(CliError::Config(
                "--fingerprint-tol must be nonnegative".into(),
            ));
        }
        self.tolerances.validate()?;
        if let Some(dir) = &self.out_dir {
            if !dir.is_dir() {
                return Err(CliError::Config(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Seeds of the items in order.
    pub fn item_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count).map(|_| rng.next_u64()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    CheckFailed,
    ConfigError,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize)]
pub struct ItemResult {
    pub index: usize,
    pub seed: u64,
    pub status: ItemStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub t_final: Option<f64>,
    /// Only for the normalized flow.
    pub converged: Option<bool>,
    pub gradient_norm_at_limit: Option<f64>,
    pub cauchy_spread: Option<f64>,
    pub soliton_constant: Option<f64>,
    /// 1 − sup t‖μ‖²/(2n) along the unnormalized flow.
    pub type3_margin: Option<f64>,
    pub type3_ok: Option<bool>,
    pub final_invariants: Option<OrbitInvariants>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cluster {
    pub representative: OrbitInvariants,
    pub items: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub generator: String,
    pub count: usize,
    pub seed: u64,
    pub flow: FlowKind,
    pub t_max: f64,
    pub tolerances: Tolerances,
    pub fingerprint_tol: f64,
    pub completed: usize,
    pub failed: usize,
    /// Among completed items; absent unless the flow is normalized.
    pub fraction_converged: Option<f64>,
    pub clusters: Vec<Cluster>,
    pub worst_type3_margin: Option<f64>,
    pub items: Vec<ItemResult>,
}

impl SweepSummary {
    /// 0 if every item passed, 3 if any item hit a numerical failure, 2 on
    /// configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        let has = |s| self.items.iter().any(|i| i.status == s);
        if has(ItemStatus::NumericalFailure) {
            3
        } else if has(ItemStatus::ConfigError) {
            2
        } else if has(ItemStatus::CheckFailed) {
            1
        } else {
            0
        }
    }
}

fn item_stem(config: &SweepConfig, index: usize) -> Option<PathBuf> {
    let width = config.count.saturating_sub(1).to_string().len().max(3);
    config
        .out_dir
        .as_ref()
        .map(|d| d.join(format!("item-{index:0width$}")))
}

fn run_item(config: &SweepConfig, opts: &FlowOptions, index: usize, seed: u64) -> ItemResult {
    let mut item = ItemResult {
        index,
        seed,
        status: ItemStatus::Ok,
        error: None,
        t_final: None,
        converged: None,
        gradient_norm_at_limit: None,
        cauchy_spread: None,
        soliton_constant: None,
        type3_margin: None,
        type3_ok: None,
        final_invariants: None,
    };
    if let Err(e) = fill_item(config, opts, &mut item) {
        item.status = match e {
            CliError::Config(_) => ItemStatus::ConfigError,
            CliError::Numerical(_) => ItemStatus::NumericalFailure,
            CliError::CheckFailed(_) => ItemStatus::CheckFailed,
        };
        item.error = Some(e.to_string());
    }
    if let Some(stem) = item_stem(config, index) {
        if let Err(e) = write_json(&stem.with_extension("json"), &item) {
            log::error!("item {index}: {e}");
        }
    }
    item
}

fn fill_item(config: &SweepConfig, opts: &FlowOptions, item: &mut ItemResult) -> CliResult<()> {
    let mut b0 = config.generator.generate(item.seed);
    if config.kind == FlowKind::Normalized {
        b0 = rescale_to_sphere(&b0)?;
    }
    let trace = config.kind.integrate(&b0, config.t_max, opts)?;
    item.t_final = Some(trace.t_final());
    item.final_invariants = Some(orbit_invariants(trace.last()));
    if let Some(stem) = item_stem(config, item.index) {
        save_trace(&stem.with_extension("csv"), &trace)?;
    }

    let type3 = if config.kind == FlowKind::Unnormalized {
        type3_certificate(&trace)
    } else {
        type3_report(&b0, config.t_max, opts)?
    };
    item.type3_margin = Some(1.0 - type3.sup_t_mu2_over_2n);
    item.type3_ok = Some(type3.bound_ok);

    let mut passed = type3.bound_ok;
    if config.kind == FlowKind::Normalized {
        let rep = match detect_convergence(&trace, SOLITON_TOL) {
            Ok(r) => r,
            Err(nilflow::Error::NotConverged(r)) => *r,
            Err(e) => return Err(e.into()),
        };
        item.converged = Some(rep.converged);
        item.gradient_norm_at_limit = Some(rep.gradient_norm_at_limit);
        item.cauchy_spread = Some(rep.cauchy_spread);
        item.soliton_constant = Some(rep.certificate.c);
        passed &= rep.converged;
    }
    if !passed {
        item.status = ItemStatus::CheckFailed;
    }
    Ok(())
}

/// Greedy clustering in item order, so the result is deterministic.
pub fn cluster(fingerprints: &[(usize, &OrbitInvariants)], tol: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for &(index, inv) in fingerprints {
        match clusters
            .iter_mut()
            .find(|c| c.representative.matches(inv, tol))
        {
            Some(c) => c.items.push(index),
            None => clusters.push(Cluster {
                representative: inv.clone(),
                items: vec![index],
            }),
        }
    }
    clusters
}

pub fn sweep(config: &SweepConfig) -> CliResult<SweepSummary> {
    config.validate()?;
    let opts = config.tolerances.flow_options();
    let seeds = config.item_seeds();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    log::info!(
        "sweep of {} items from {} on {} threads",
        config.count,
        config.generator,
        pool.current_num_threads()
    );
    let items: Vec<ItemResult> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &s)| run_item(config, &opts, i, s))
            .collect()
    });

    let completed: Vec<&ItemResult> = items
        .iter()
        .filter(|i| matches!(i.status, ItemStatus::Ok | ItemStatus::CheckFailed))
        .collect();
    let fraction_converged =
        (config.kind == FlowKind::Normalized && !completed.is_empty()).then(|| {
            completed
                .iter()
                .filter(|i| i.converged == Some(true))
                .count() as f64
                / completed.len() as f64
        });
    let fingerprints: Vec<(usize, &OrbitInvariants)> = completed
        .iter()
        .filter_map(|i| i.final_invariants.as_ref().map(|f| (i.index, f)))
        .collect();
    let worst_type3_margin = completed
        .iter()
        .filter_map(|i| i.type3_margin)
        .reduce(f64::min);

    Ok(SweepSummary {
        generator: config.generator.to_string(),
        count: config.count,
        seed: config.seed,
        flow: config.kind,
        t_max: config.t_max,
        tolerances: config.tolerances,
        fingerprint_tol: config.fingerprint_tol,
        completed: completed.len(),
        failed: config.count - completed.len(),
        fraction_converged,
        clusters: cluster(&fingerprints, config.fingerprint_tol),
        worst_type3_margin,
        items,
    })
}
