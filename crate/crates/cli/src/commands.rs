//! The one-shot subcommands that do not integrate a flow over long times.

use nilflow::algebra::{validate_bracket, ValidationReport, DEFAULT_TOL};
use nilflow::bch::{metric_convergence_distance, MetricFieldJson};
use nilflow::curvature::{
    ricci_energy, ricci_energy_gradient, ricci_sign_check, ricci_spectrum, riemann_at_origin,
    CurvaturePack,
};
use nilflow::io::BracketJson;
use nilflow::soliton::{
    critical_point_check, orbit_invariants, soliton_residual, OrbitInvariants, SolitonCertificate,
};
use nilflow::Bracket;
use serde::Serialize;

use crate::error::CliResult;
use crate::experiment::{metric_field_of, EquivalenceSummary, FlowKind, Tolerances};
use nilflow::flow::check_equivalence;

#[derive(Clone, Debug, Serialize)]
pub struct Validation {
    pub n: usize,
    pub valid: bool,
    #[serde(flatten)]
    pub report: ValidationReport,
}

pub fn validate(b: &Bracket, tol: f64) -> Validation {
    let report = validate_bracket(b, tol);
    Validation {
        n: b.dim(),
        valid: report.skew_ok && report.jacobi_ok && report.nilpotent,
        report,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    pub n: usize,
    pub norm: f64,
    #[serde(flatten)]
    pub pack: CurvaturePack,
    pub ricci_spectrum: Vec<f64>,
    /// F = tr Ric².
    pub energy: f64,
    pub energy_gradient_norm: f64,
    pub riemann_norm: f64,
    pub has_positive_ricci: bool,
    pub has_negative_ricci: bool,
}

pub fn curvature(b: &Bracket) -> CurvatureReport {
    let (pos, neg) = ricci_sign_check(b);
    CurvatureReport {
        n: b.dim(),
        norm: b.norm(),
        pack: CurvaturePack::new(b),
        ricci_spectrum: ricci_spectrum(b),
        energy: ricci_energy(b),
        energy_gradient_norm: ricci_energy_gradient(b).norm(),
        riemann_norm: riemann_at_origin(b).norm,
        has_positive_ricci: pos,
        has_negative_ricci: neg,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolitonReport {
    pub bracket: BracketJson,
    #[serde(flatten)]
    pub certificate: SolitonCertificate,
    /// Whether the tangential gradient of F vanishes on the sphere.
    pub critical_point: bool,
    pub invariants: OrbitInvariants,
}

pub fn soliton(b: &Bracket, tol: f64) -> CliResult<SolitonReport> {
    Ok(SolitonReport {
        bracket: BracketJson::from_bracket(b),
        certificate: soliton_residual(b, tol)?,
        critical_point: critical_point_check(b, tol)?,
        invariants: orbit_invariants(b),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceOutcome {
    pub flow: FlowKind,
    pub t_max: f64,
    #[serde(flatten)]
    pub summary: EquivalenceSummary,
    pub passed: bool,
}

pub fn equivalence(
    b: &Bracket,
    kind: FlowKind,
    t_max: f64,
    tolerances: &Tolerances,
) -> CliResult<EquivalenceOutcome> {
    let rep = check_equivalence(b, t_max, &tolerances.flow_options(), kind.rate())?;
    let summary = EquivalenceSummary::of(&rep);
    Ok(EquivalenceOutcome {
        flow: kind,
        t_max,
        passed: summary.passes(),
        summary,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricFieldReport {
    pub field: MetricFieldJson,
    /// Distance to the metric of a second bracket, when one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<MetricDistance>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricDistance {
    pub radius: f64,
    pub order: usize,
    pub value: f64,
}

pub fn metric_field(
    b: &Bracket,
    other: Option<&Bracket>,
    radius: f64,
    order: usize,
) -> CliResult<MetricFieldReport> {
    let field = metric_field_of(b)?.to_json();
    let distance = match other {
        Some(o) => Some(MetricDistance {
            radius,
            order,
            value: metric_convergence_distance(b, o, radius, order)?,
        }),
        None => None,
    };
    Ok(MetricFieldReport { field, distance })
}

/// Default tolerance of `validate`.
pub const VALIDATE_TOL: f64 = DEFAULT_TOL;
