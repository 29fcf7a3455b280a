//! Single experiments: one initial bracket, one flow, a set of checks.

use std::path::{Path, PathBuf};

use nilflow::algebra::nilpotency_degree;
use nilflow::bch::{metric_field_2step, metric_field_fit, MetricField};
use nilflow::flow::{
    check_equivalence, compare_flows, integrate_bracket_flow, integrate_innerproduct_flow_at,
    integrate_normalized_flow, integrate_r_normalized, rescale_to_sphere, type3_certificate,
    verify_flow_identities, EquivalenceReport, FlowOptions, FlowTrace, Rate, Type3Report,
};
use nilflow::io::{matrix_rows, save_trace, write_json, BracketJson};
use nilflow::ode::StepStats;
use nilflow::soliton::{detect_convergence, soliton_residual, ConvergenceReport, SOLITON_TOL};
use nilflow::Bracket;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::source::BracketSource;

/// Relative tolerance of the finite-difference identity check.
pub const IDENTITY_TOL: f64 = 1e-4;
/// The identity check integrates the unnormalized flow on [0, min(t_max, IDENTITY_WINDOW)].
pub const IDENTITY_WINDOW: f64 = 2.0;
/// Sample spacing cap for the identity check.
pub const IDENTITY_H_MAX: f64 = 2.5e-4;
/// Largest relative bracket or metric residual accepted by the equivalence check.
pub const EQUIVALENCE_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowKind {
    /// μ′ = δ_μ(Ric_μ).
    Unnormalized,
    /// r = tr Ric², on the sphere ‖μ‖ = 2.
    Normalized,
    /// r = ρ.
    Constant { rho: f64 },
}

impl FlowKind {
    pub fn rate(&self) -> Rate {
        match self {
            FlowKind::Unnormalized => Rate::Zero,
            FlowKind::Normalized => Rate::RicciSquared,
            FlowKind::Constant { rho } => Rate::Constant(*rho),
        }
    }

    pub fn integrate(
        &self,
        b0: &Bracket,
        t_max: f64,
        opts: &FlowOptions,
    ) -> nilflow::Result<FlowTrace> {
        match self {
            FlowKind::Unnormalized => integrate_bracket_flow(b0, t_max, opts),
            FlowKind::Normalized => integrate_normalized_flow(b0, t_max, opts),
            FlowKind::Constant { .. } => integrate_r_normalized(b0, self.rate(), t_max, opts),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// d scal/dt = 2 tr Ric² and d‖μ‖²/dt = −8 tr Ric² by finite differences.
    Identities,
    /// t‖μ(t)‖² ≤ 2n and t‖Ric‖ ≤ √3 n/2 along the unnormalized flow.
    Type3,
    /// Bracket flow, h(t) and the inner-product flow agree.
    Equivalence,
    /// The normalized flow reaches a soliton.
    Convergence,
}

impl Check {
    pub const ALL: [Check; 4] = [
        Check::Identities,
        Check::Type3,
        Check::Equivalence,
        Check::Convergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Check::Identities => "identities",
            Check::Type3 => "type3",
            Check::Equivalence => "equivalence",
            Check::Convergence => "convergence",
        }
    }
}

/// Integrator settings shared by every subcommand that runs a flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
}

/// Default rtol and atol. Tighter than the library default so that the
/// convergence threshold sits well above the integration error floor.
pub const DEFAULT_ODE_TOL: f64 = 1e-12;

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_ODE_TOL,
            atol: DEFAULT_ODE_TOL,
            h_max: FlowOptions::default().h_max,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> CliResult<()> {
        for (name, v) in [("rtol", self.rtol), ("atol", self.atol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!(
                    "--{name} must be positive, got {v}"
                )));
            }
        }
        if self.h_max.is_nan() || self.h_max <= 0.0 {
            return Err(CliError::Config(format!(
                "--h-max must be positive, got {}",
                self.h_max
            )));
        }
        Ok(())
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            rtol: self.rtol,
            atol: self.atol,
            h_max: self.h_max,
            ..FlowOptions::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outputs {
    /// Trace CSV; snapshots go to `<trace>.brackets.json`.
    pub trace: Option<PathBuf>,
    pub certificate: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Metric field of the final bracket.
    pub metric_field: Option<PathBuf>,
}

impl Outputs {
    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [
            &self.trace,
            &self.certificate,
            &self.summary,
            &self.metric_field,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub source: BracketSource,
    pub kind: FlowKind,
    pub t_max: f64,
    pub tolerances: Tolerances,
    /// Scale the initial bracket onto ‖μ‖ = 2 first.
    pub rescale: bool,
    /// Integrate h(t) along the trace and store it with the snapshots.
    pub with_h: bool,
    /// Integrate the inner-product flow at the trace times.
    pub with_ip_flow: bool,
    pub checks: Vec<Check>,
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(CliError::Config(format!(
                "--t-max must be positive and finite, got {}",
                self.t_max
            )));
        }
        self.tolerances.validate()?;
        if self.checks.contains(&Check::Convergence) && self.kind != FlowKind::Normalized {
            return Err(CliError::Config(
                "the convergence check needs --kind normalized".into(),
            ));
        }
        if self.with_ip_flow && self.outputs.trace.is_none() && self.outputs.summary.is_none() {
            log::warn!(
                "--with-ip-flow without --trace: results appear only in the summary on stdout"
            );
        }
        for p in self.outputs.paths() {
            check_writable(p)?;
        }
        Ok(())
    }
}

/// Fails early when the parent directory of an output path is missing.
pub fn check_writable(p: &Path) -> CliResult<()> {
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    if p.is_dir() {
        return Err(CliError::Config(format!(
            "output path {} is a directory",
            p.display()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub source: String,
    pub n: usize,
    pub flow: FlowKind,
    pub t_max: f64,
    pub tolerances: Tolerances,
    pub initial_norm: f64,
    pub samples: usize,
    pub t_final: f64,
    pub final_bracket: BracketJson,
    pub stats: StepStats,
    pub max_norm_drift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_flow: Option<Value>,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    pub artifacts: Vec<String>,
}

/// Compact form of [`EquivalenceReport`] without the per-sample vectors.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceSummary {
    pub samples: usize,
    pub max_bracket_residual: f64,
    pub max_metric_residual: f64,
    pub max_metric_residual_rel: f64,
    pub max_scal_residual: f64,
    pub max_h_form_residual: f64,
    pub min_abs_det_h: f64,
}

impl EquivalenceSummary {
    pub fn of(r: &EquivalenceReport) -> Self {
        Self {
            samples: r.times.len(),
            max_bracket_residual: r.max_bracket_residual,
            max_metric_residual: r.max_metric_residual,
            max_metric_residual_rel: r.max_metric_residual_rel,
            max_scal_residual: r.max_scal_residual,
            max_h_form_residual: r.max_h_form_residual,
            min_abs_det_h: r.min_abs_det_h,
        }
    }

    pub fn passes(&self) -> bool {
        self.max_bracket_residual < EQUIVALENCE_TOL
            && self.max_metric_residual_rel < EQUIVALENCE_TOL
    }
}

/// Certificate file: the convergence report (or a plain soliton
/// certificate of the final bracket) plus the bracket it refers to.
#[derive(Clone, Debug, Serialize)]
struct CertificateFile<'a, T: Serialize> {
    bracket: BracketJson,
    #[serde(flatten)]
    report: &'a T,
}

pub fn type3_report(b0: &Bracket, t_max: f64, opts: &FlowOptions) -> CliResult<Type3Report> {
    Ok(type3_certificate(&integrate_bracket_flow(b0, t_max, opts)?))
}

fn identities_check(b0: &Bracket, t_max: f64) -> CliResult<CheckResult> {
    let opts = FlowOptions {
        rtol: 1e-11,
        atol: 1e-11,
        h_max: IDENTITY_H_MAX,
        ..FlowOptions::default()
    };
    let window = t_max.min(IDENTITY_WINDOW);
    let trace = integrate_bracket_flow(b0, window, &opts)?;
    let rep = verify_flow_identities(&trace)?;
    Ok(CheckResult {
        name: Check::Identities.name(),
        passed: rep.passes(IDENTITY_TOL),
        detail: json!({
            "window": window,
            "samples": rep.times.len(),
            "max_scal_rel_err": rep.max_scal_rel_err,
            "max_norm_rel_err": rep.max_norm_rel_err,
            "tolerance": IDENTITY_TOL,
        }),
    })
}

/// Loads and prepares the initial bracket.
pub fn initial_bracket(source: &BracketSource, rescale: bool) -> CliResult<Bracket> {
    let b = source.load()?;
    if rescale {
        Ok(rescale_to_sphere(&b)?)
    } else {
        Ok(b)
    }
}

pub fn metric_field_of(b: &Bracket) -> CliResult<MetricField> {
    let degree = nilpotency_degree(b)?;
    Ok(if degree <= 2 {
        metric_field_2step(b)?
    } else {
        metric_field_fit(b)?
    })
}

/// Runs the flow and the requested checks and writes the artifacts.
pub fn run(config: &ExperimentConfig) -> CliResult<RunSummary> {
    config.validate()?;
    let b0 = initial_bracket(&config.source, config.rescale)?;
    let opts = config.tolerances.flow_options();
    log::info!(
        "{} flow from {} (n = {}, t_max = {})",
        config.kind.rate().label(),
        config.source.describe(),
        b0.dim(),
        config.t_max
    );
    let mut trace = config.kind.integrate(&b0, config.t_max, &opts)?;
    if config.with_h {
        trace = trace.with_h(&opts.ode())?;
    }
    let mut artifacts = Vec::new();

    let ip_flow = if config.with_ip_flow {
        let ip = integrate_innerproduct_flow_at(&b0, &trace.times, &opts, config.kind.rate())?;
        if let Some(path) = &config.outputs.trace {
            let mut p = path.as_os_str().to_owned();
            p.push(".ip.json");
            let p = PathBuf::from(p);
            let metrics: Vec<_> = ip.metrics.iter().map(matrix_rows).collect();
            write_json(&p, &json!({ "times": ip.times, "metrics": metrics }))?;
            artifacts.push(p.display().to_string());
        }
        let mut detail = json!({ "stats": ip.stats });
        if let Some(h) = &trace.h {
            detail["comparison"] =
                serde_json::to_value(EquivalenceSummary::of(&compare_flows(&trace, h, &ip)?))?;
        }
        Some(detail)
    } else {
        None
    };

    let mut checks = Vec::new();
    let mut convergence: Option<ConvergenceReport> = None;
    for check in &config.checks {
        let result = match check {
            Check::Identities => identities_check(&b0, config.t_max)?,
            Check::Type3 => {
                let rep = if config.kind == FlowKind::Unnormalized {
                    type3_certificate(&trace)
                } else {
                    type3_report(&b0, config.t_max, &opts)?
                };
                CheckResult {
                    name: check.name(),
                    passed: rep.bound_ok,
                    detail: serde_json::to_value(&rep)?,
                }
            }
            Check::Equivalence => {
                let rep = EquivalenceSummary::of(&check_equivalence(
                    &b0,
                    config.t_max,
                    &opts,
                    config.kind.rate(),
                )?);
                CheckResult {
                    name: check.name(),
                    passed: rep.passes(),
                    detail: serde_json::to_value(&rep)?,
                }
            }
            Check::Convergence => {
                let rep = match detect_convergence(&trace, SOLITON_TOL) {
                    Ok(r) => r,
                    Err(nilflow::Error::NotConverged(r)) => *r,
                    Err(e) => return Err(e.into()),
                };
                let result = CheckResult {
                    name: check.name(),
                    passed: rep.converged,
                    detail: json!({
                        "converged": rep.converged,
                        "gradient_norm_at_limit": rep.gradient_norm_at_limit,
                        "cauchy_spread": rep.cauchy_spread,
                        "soliton_constant": rep.certificate.c,
                        "ricci_spectrum": rep.certificate.ricci_spectrum,
                        "tolerance": SOLITON_TOL,
                    }),
                };
                convergence = Some(rep);
                result
            }
        };
        log::info!(
            "check {}: {}",
            result.name,
            if result.passed { "pass" } else { "FAIL" }
        );
        checks.push(result);
    }

    if let Some(path) = &config.outputs.trace {
        save_trace(path, &trace)?;
        artifacts.push(path.display().to_string());
        artifacts.push(nilflow::io::sidecar_path(path).display().to_string());
    }
    if let Some(path) = &config.outputs.certificate {
        let bracket = BracketJson::from_bracket(trace.last());
        match &convergence {
            Some(rep) => write_json(
                path,
                &CertificateFile {
                    bracket,
                    report: rep,
                },
            )?,
            None => {
                let cert = soliton_residual(trace.last(), SOLITON_TOL)?;
                write_json(
                    path,
                    &CertificateFile {
                        bracket,
                        report: &cert,
                    },
                )?
            }
        }
        artifacts.push(path.display().to_string());
    }
    if let Some(path) = &config.outputs.metric_field {
        write_json(path, &metric_field_of(trace.last())?.to_json())?;
        artifacts.push(path.display().to_string());
    }

    let all_passed = checks.iter().all(|c| c.passed);
    let summary = RunSummary {
        source: config.source.describe(),
        n: b0.dim(),
        flow: config.kind,
        t_max: config.t_max,
        tolerances: config.tolerances,
        initial_norm: b0.norm(),
        samples: trace.len(),
        t_final: trace.t_final(),
        final_bracket: BracketJson::from_bracket(trace.last()),
        stats: trace.stats,
        max_norm_drift: trace.max_norm_drift,
        ip_flow,
        checks,
        all_passed,
        artifacts,
    };
    if let Some(path) = &config.outputs.summary {
        write_json(path, &summary)?;
    }
    Ok(summary)
}
