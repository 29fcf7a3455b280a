//! Nilsoliton detection and limits of the normalized flow.
//!
//! g_μ is a Ricci soliton exactly when Ric_μ = cI + D with D a derivation,
//! equivalently when μ is a critical point of F = tr Ric² on its sphere.
//! Taking the inner product with Ric and using tr(Ric D) = 0 gives
//! c = tr Ric² / scal = −4F/‖μ‖², which is checked against the solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::algebra::{
    central_series, delta, derivation_basis, nilpotency_degree_with_tol, vn_inner, Bracket,
    Operator, VTangent, DEFAULT_TOL,
};
use crate::curvature::{
    ricci_energy, ricci_energy_gradient, ricci_operator, ricci_spectrum, scalar_curvature,
};
use crate::error::{Error, Result};
use crate::flow::FlowTrace;
use crate::linalg::svd;

/// Default relative tolerance for soliton and convergence decisions.
pub const SOLITON_TOL: f64 = 1e-8;

/// Rank threshold for the least-squares projection.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct SolitonCertificate {
    pub c: f64,
    #[serde(rename = "D", serialize_with = "crate::io::serialize_matrix")]
    pub d: Operator,
    /// ‖Ric_μ − cI − D‖.
    pub residual: f64,
    /// ‖δ_μ(D)‖.
    pub derivation_residual: f64,
    pub is_soliton: bool,
    pub ricci_spectrum: Vec<f64>,
    /// −4 tr Ric² / ‖μ‖², the value c must take at a soliton.
    pub c_from_energy: f64,
    /// |c·n + tr D − scal_μ|.
    pub trace_identity_residual: f64,
    pub derivation_dim: usize,
}

/// Least-squares projection of Ric_μ onto span{I} ⊕ Der(μ).
pub fn soliton_residual(b: &Bracket, tol: f64) -> Result<SolitonCertificate> {
    let n = b.dim();
    let norm2 = b.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::ZeroBracket);
    }
    let ric = ricci_operator(b);
    let der = derivation_basis(b, DEFAULT_TOL);
    let cols = 1 + der.len();
    let mut a = DMatrix::zeros(n * n, cols);
    a.column_mut(0)
        .copy_from_slice(Operator::identity(n, n).as_slice());
    for (m, d) in der.iter().enumerate() {
        a.column_mut(m + 1).copy_from_slice(d.as_slice());
    }
    let rhs = DVector::from_column_slice(ric.as_slice());
    let f = svd(&a);
    let x = f.solve(&rhs, RANK_TOL * f.max());
    let c = x[0];
    let mut d = Operator::zeros(n, n);
    for (m, basis) in der.iter().enumerate() {
        d += basis * x[m + 1];
    }
    let residual = (&ric - Operator::identity(n, n) * c - &d).norm();
    let derivation_residual = delta(b, &d)?.norm();
    let scal = scalar_curvature(b);
    Ok(SolitonCertificate {
        c,
        residual,
        derivation_residual,
        is_soliton: residual < tol * ric.norm(),
        ricci_spectrum: ricci_spectrum(b),
        c_from_energy: -4.0 * ricci_energy(b) / norm2,
        trace_identity_residual: (c * n as f64 + d.trace() - scal).abs(),
        derivation_dim: der.len(),
        d,
    })
}

/// Component of grad F orthogonal to μ.
pub fn tangential_gradient(b: &Bracket) -> VTangent {
    let g = ricci_energy_gradient(b);
    let ns = b.norm_squared();
    if ns == 0.0 {
        return g;
    }
    let radial = vn_inner(&g, b).expect("same dimension") / ns;
    g.axpy(-radial, b).expect("same dimension")
}

/// True iff μ is critical for F on its sphere: the tangential gradient is
/// below `tol` relative to ‖grad F‖ (or grad F itself is below `tol`).
pub fn critical_point_check(b: &Bracket, tol: f64) -> Result<bool> {
    if b.norm_squared() == 0.0 {
        return Err(Error::ZeroBracket);
    }
    let g = ricci_energy_gradient(b).norm();
    let tangential = tangential_gradient(b).norm();
    Ok(g < tol || tangential < tol * g)
}

/// Straight-line fit y ≈ slope·x + intercept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares of y on x; `None` for fewer than three points or
/// constant x.
pub fn log_linear_fit(x: &[f64], y: &[f64]) -> Option<TailFit> {
    let m = x.len().min(y.len());
    if m < 3 {
        return None;
    }
    let mx = x[..m].iter().sum::<f64>() / m as f64;
    let my = y[..m].iter().sum::<f64>() / m as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(TailFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: m,
    })
}

/// Scalar checks at a limit λ of the normalized flow, with r∞ = tr Ric_λ².
#[derive(Clone, Debug, Serialize)]
pub struct LimitChecks {
    pub r_inf: f64,
    /// ‖δ_λ(Ric_λ + r∞ I)‖.
    pub stationarity_residual: f64,
    /// Smallest eigenvalue of Ric_λ + r∞ I.
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
    pub scal: f64,
}

pub fn limit_checks(lambda: &Bracket) -> LimitChecks {
    let n = lambda.dim();
    let ric = ricci_operator(lambda);
    let r_inf = ric.dot(&ric);
    let shifted = &ric + Operator::identity(n, n) * r_inf;
    let stationarity_residual = delta(lambda, &shifted).expect("same dimension").norm();
    let min_eigenvalue = SymmetricEigen::new(shifted)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    LimitChecks {
        r_inf,
        stationarity_residual,
        min_eigenvalue,
        positive_definite: min_eigenvalue > 0.0,
        scal: scalar_curvature(lambda),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    #[serde(skip)]
    pub limit: Bracket,
    /// ‖tangential grad F‖ at the final sample.
    pub gradient_norm_at_limit: f64,
    /// max ‖μ(t_i) − μ(t_final)‖ over the trailing window.
    pub cauchy_spread: f64,
    pub window: usize,
    pub certificate: SolitonCertificate,
    pub limit_checks: LimitChecks,
    /// Fit of log ‖μ(t) − λ‖ against t over samples whose distance lies in
    /// (1e−11, 1e−3], when there are enough of them.
    pub tail_fit: Option<TailFit>,
}

/// Trailing window: the larger of 10% of the samples and 50 samples.
pub fn convergence_window(len: usize) -> usize {
    (len / 10).max(50).min(len)
}

/// Declares convergence of a normalized trace when the tangential gradient
/// and the Cauchy spread over the trailing window are both below `tol` and
/// the final bracket certifies as a soliton.
/// Distances to the limit used by the tail fit lie in (floor, ceiling].
const TAIL_FLOOR: f64 = 1e-11;
const TAIL_CEILING: f64 = 1e-3;

pub fn detect_convergence(trace: &FlowTrace, tol: f64) -> Result<ConvergenceReport> {
    if trace.is_empty() {
        return Err(Error::TooFewSamples {
            needed: 1,
            found: 0,
        });
    }
    let limit = trace.last().clone();
    if limit.norm_squared() == 0.0 {
        return Err(Error::ZeroBracket);
    }
    let window = convergence_window(trace.len());
    let start = trace.len() - window;
    let cauchy_spread = trace.brackets[start..]
        .iter()
        .map(|b| b.sub(&limit).expect("same dimension").norm())
        .fold(0.0, f64::max);
    let gradient_norm_at_limit = tangential_gradient(&limit).norm();
    let certificate = soliton_residual(&limit, tol)?;

    // Tail fit over the asymptotic band: close enough to the limit for the
    // linearization to dominate, far enough above the rounding floor.
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, b) in trace.times.iter().zip(&trace.brackets) {
        let d = b.sub(&limit).expect("same dimension").norm();
        if d > TAIL_FLOOR && d <= TAIL_CEILING {
            xs.push(*t);
            ys.push(d.ln());
        }
    }
    let tail_fit = log_linear_fit(&xs, &ys);

    let report = ConvergenceReport {
        converged: gradient_norm_at_limit < tol && cauchy_spread < tol && certificate.is_soliton,
        gradient_norm_at_limit,
        cauchy_spread,
        window,
        limit_checks: limit_checks(&limit),
        certificate,
        tail_fit,
        limit,
    };
    if report.converged {
        Ok(report)
    } else {
        Err(Error::NotConverged(Box::new(report)))
    }
}

/// O(n)-invariant fingerprint of a bracket.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrbitInvariants {
    pub ricci_spectrum: Vec<f64>,
    pub norm: f64,
    pub energy: f64,
    pub degree: Option<usize>,
    pub central_series: Vec<usize>,
}

impl OrbitInvariants {
    /// Flattened as [spectrum…, ‖μ‖, F, degree, central series…]; a missing
    /// degree is encoded as −1.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.ricci_spectrum.clone();
        v.push(self.norm);
        v.push(self.energy);
        v.push(self.degree.map_or(-1.0, |d| d as f64));
        v.extend(self.central_series.iter().map(|&d| d as f64));
        v
    }

    /// Same integer data and continuous data within `tol`.
    pub fn matches(&self, other: &OrbitInvariants, tol: f64) -> bool {
        self.degree == other.degree
            && self.central_series == other.central_series
            && self.ricci_spectrum.len() == other.ricci_spectrum.len()
            && self
                .ricci_spectrum
                .iter()
                .zip(&other.ricci_spectrum)
                .all(|(a, b)| (a - b).abs() <= tol)
            && (self.norm - other.norm).abs() <= tol
            && (self.energy - other.energy).abs() <= tol
    }
}

/// Rank tolerance for the central series of brackets produced by flows.
const INVARIANT_RANK_TOL: f64 = 1e-8;

pub fn orbit_invariants(b: &Bracket) -> OrbitInvariants {
    let degree = nilpotency_degree_with_tol(b, INVARIANT_RANK_TOL).ok();
    let central = central_series(b, INVARIANT_RANK_TOL).unwrap_or_default();
    OrbitInvariants {
        ricci_spectrum: ricci_spectrum(b),
        norm: b.norm(),
        energy: ricci_energy(b),
        degree,
        central_series: central,
    }
}
