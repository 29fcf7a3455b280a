//! Bracket flows μ′ = δ_μ(Ric_μ) + r μ, the companion linear flow
//! h′ = −(Ric_μ(t) + r I) h, and the Ricci flow of inner products on a
//! fixed bracket.
//!
//! The three are related by μ(t) = h(t).μ₀ and ⟨·,·⟩_t = ⟨h(t)·, h(t)·⟩.
//! [`check_equivalence`] integrates them independently and reports how far
//! apart they drift.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::algebra::{
    adapted_frame, delta, gl_action_with_inverse, jacobi_residual, nilpotency_degree,
    validate_bracket, vn_inner, AdaptedFrame, Bracket, Operator, VTangent, DEFAULT_TOL,
};
use crate::curvature::{ricci_derivative, ricci_operator, riemann_at_origin, scalar_curvature};
use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::ode::{integrate, OdeOptions, StepStats};

/// Normalizing rate r(μ) in μ′ = δ_μ(Ric_μ) + r μ.
#[derive(Clone)]
pub enum Rate {
    /// Unnormalized bracket flow.
    Zero,
    Constant(f64),
    /// r = tr Ric_μ², which keeps ‖μ‖ = 2 fixed (scal ≡ −1).
    RicciSquared,
    Custom(Arc<dyn Fn(&Bracket) -> f64 + Send + Sync>),
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Rate {
    pub fn label(&self) -> String {
        match self {
            Rate::Zero => "zero".into(),
            Rate::Constant(rho) => format!("constant({rho})"),
            Rate::RicciSquared => "tr_ric2".into(),
            Rate::Custom(_) => "custom".into(),
        }
    }

    fn eval(&self, b: &Bracket, ric: &Operator) -> f64 {
        match self {
            Rate::Zero => 0.0,
            Rate::Constant(rho) => *rho,
            Rate::RicciSquared => ric.dot(ric),
            Rate::Custom(f) => f(b),
        }
    }

    pub fn value(&self, b: &Bracket) -> f64 {
        self.eval(b, &ricci_operator(b))
    }

    /// d/dt r(μ(t)) given μ′.
    fn derivative(&self, b: &Bracket, ric: &Operator, velocity: &VTangent) -> f64 {
        match self {
            Rate::Zero | Rate::Constant(_) => 0.0,
            Rate::RicciSquared => {
                let d = ricci_derivative(b, velocity).expect("same dimension");
                2.0 * ric.dot(&d)
            }
            Rate::Custom(f) => {
                let scale = velocity.norm();
                if scale == 0.0 {
                    return 0.0;
                }
                let eps = 1e-6 * b.norm().max(1.0) / scale;
                let plus = b.axpy(eps, velocity).expect("same dimension");
                let minus = b.axpy(-eps, velocity).expect("same dimension");
                (f(&plus) - f(&minus)) / (2.0 * eps)
            }
        }
    }
}

/// How the bracket ODE is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Integrates the entries of μ directly. Rounding that leaves the
    /// nilpotent variety can grow, so long normalized runs may drift to a
    /// non-nilpotent critical point.
    Direct,
    /// Writes μ = k.λ with k orthogonal and λ(F_a, F_b) ⊂ F_{a+b} for the
    /// filtration F of the initial central series, in an adapted basis.
    /// λ′ = δ_λ(B) with B lower triangular keeps this zero pattern exactly,
    /// so iterates stay nilpotent and the central series cannot grow.
    #[default]
    Adapted,
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    /// Every accepted step is stored until this many samples exist.
    pub max_samples: usize,
    /// Past the cap, a sample is stored once t ≥ growth · t_last.
    pub log_growth: f64,
    pub max_steps: usize,
    pub scheme: Scheme,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            h_max: f64::INFINITY,
            max_samples: 20_000,
            log_growth: 1.01,
            max_steps: 5_000_000,
            scheme: Scheme::Adapted,
        }
    }
}

impl FlowOptions {
    pub fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            h_max: self.h_max,
            h_init: None,
            max_steps: self.max_steps,
        }
    }
}

/// Per-sample scalar diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mu_norm: f64,
    pub scal: f64,
    pub tr_ric2: f64,
    /// ‖grad F‖ = ‖δ_μ(Ric_μ)‖.
    pub grad_norm: f64,
    pub r: f64,
    pub jacobi_residual: f64,
}

impl Diagnostics {
    pub fn of(b: &Bracket, rate: &Rate) -> Self {
        let ric = ricci_operator(b);
        let grad = delta(b, &ric).expect("same dimension");
        Self {
            mu_norm: b.norm(),
            scal: scalar_curvature(b),
            tr_ric2: ric.dot(&ric),
            grad_norm: grad.norm(),
            r: rate.eval(b, &ric),
            jacobi_residual: jacobi_residual(b),
        }
    }
}

/// Sampled solution of a bracket flow. Immutable once produced.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub n: usize,
    pub rate: Rate,
    pub times: Vec<f64>,
    pub brackets: Vec<Bracket>,
    /// h(t_i), filled in by [`FlowTrace::with_h`].
    pub h: Option<Vec<Operator>>,
    pub diagnostics: Vec<Diagnostics>,
    pub stats: StepStats,
    /// Largest | ‖μ‖ − target | corrected by the normalization guard.
    pub max_norm_drift: f64,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &Bracket {
        &self.brackets[0]
    }

    pub fn last(&self) -> &Bracket {
        self.brackets.last().expect("trace is never empty")
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("trace is never empty")
    }

    /// Attaches h(t) from [`cointegrate_h`].
    pub fn with_h(mut self, opts: &OdeOptions) -> Result<Self> {
        self.h = Some(cointegrate_h(&self, opts)?);
        Ok(self)
    }
}

/// μ′ = δ_μ(Ric_μ) + r(μ) μ.
pub fn bracket_velocity(b: &Bracket, rate: &Rate) -> VTangent {
    let ric = ricci_operator(b);
    velocity_with(b, &ric, rate)
}

fn velocity_with(b: &Bracket, ric: &Operator, rate: &Rate) -> VTangent {
    let v = delta(b, ric).expect("same dimension");
    let r = rate.eval(b, ric);
    if r == 0.0 {
        v
    } else {
        v.axpy(r, b).expect("same dimension")
    }
}

fn pack(b: &Bracket) -> Vec<f64> {
    let n = b.dim();
    let mut out = Vec::with_capacity(n * n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..n {
                out.push(b.get(i, j, k));
            }
        }
    }
    out
}

fn unpack(n: usize, y: &[f64]) -> Bracket {
    let mut it = y.iter();
    Bracket::from_fn(n, |_, _, _| *it.next().expect("state length matches"))
}

struct Sampler<'a> {
    rate: &'a Rate,
    opts: &'a FlowOptions,
    t_end: f64,
    times: Vec<f64>,
    brackets: Vec<Bracket>,
    diagnostics: Vec<Diagnostics>,
}

impl Sampler<'_> {
    fn push(&mut self, t: f64, b: Bracket) {
        self.diagnostics.push(Diagnostics::of(&b, self.rate));
        self.times.push(t);
        self.brackets.push(b);
    }

    fn offer(&mut self, t: f64, b: Bracket) {
        let last = *self.times.last().expect("initial sample present");
        let dense = self.times.len() < self.opts.max_samples;
        if dense || t >= self.t_end || t >= last * self.opts.log_growth {
            self.push(t, b);
        }
    }
}

fn check_initial(b0: &Bracket, t_max: f64) -> Result<()> {
    if t_max.is_nan() || t_max <= 0.0 || !t_max.is_finite() {
        return Err(Error::Schema(format!(
            "t_max must be positive and finite, got {t_max}"
        )));
    }
    if !b0.is_finite() {
        return Err(Error::Schema(
            "initial bracket has non-finite entries".into(),
        ));
    }
    let report = validate_bracket(b0, DEFAULT_TOL);
    if !report.jacobi_ok {
        return Err(Error::Schema(format!(
            "initial bracket violates the Jacobi identity (residual {:.3e})",
            report.jacobi_residual
        )));
    }
    nilpotency_degree(b0)?;
    Ok(())
}

/// Norm of the canonical coordinates packed by [`pack`], as a bracket norm.
fn packed_norm(y: &[f64]) -> f64 {
    2f64.sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `y` onto the target norm when the drift exceeds 1e−12.
fn renormalize(y: &mut [f64], target: f64, max_drift: &mut f64, t: f64) -> bool {
    let norm = packed_norm(y);
    let drift = (norm - target).abs();
    if drift <= 1e-12 {
        return false;
    }
    let s = target / norm;
    y.iter_mut().for_each(|v| *v *= s);
    *max_drift = max_drift.max(drift);
    log::debug!("renormalized at t = {t:.6e}, drift {drift:.3e}");
    true
}

/// State layout of the adapted scheme: k row-major, then the entries of λ
/// in the filtered slots of the initial frame.
struct AdaptedLayout {
    n: usize,
    slots: Vec<(usize, usize, usize)>,
}

impl AdaptedLayout {
    fn new(frame: &AdaptedFrame) -> Self {
        let n = frame.q.nrows();
        let mut slots = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    if frame.allows(i, j, k) {
                        slots.push((i, j, k));
                    }
                }
            }
        }
        Self { n, slots }
    }

    fn pack(&self, k: &Operator, lambda: &Bracket) -> Vec<f64> {
        let n = self.n;
        let mut y = Vec::with_capacity(n * n + self.slots.len());
        for i in 0..n {
            for j in 0..n {
                y.push(k[(i, j)]);
            }
        }
        y.extend(self.slots.iter().map(|&(i, j, c)| lambda.get(i, j, c)));
        y
    }

    fn frame(&self, y: &[f64]) -> Operator {
        Operator::from_row_slice(self.n, self.n, &y[..self.n * self.n])
    }

    fn bracket(&self, y: &[f64]) -> Bracket {
        let mut b = Bracket::zero(self.n);
        for (&(i, j, c), &v) in self.slots.iter().zip(&y[self.n * self.n..]) {
            b.set(i, j, c, v);
        }
        b
    }

    fn push_forward(&self, y: &[f64]) -> Bracket {
        orthogonal_push(&self.frame(y), &self.bracket(y))
    }
}

/// k.λ for orthogonal k, using kᵀ as the inverse.
fn orthogonal_push(k: &Operator, lambda: &Bracket) -> Bracket {
    let n = lambda.dim();
    let kt = k.transpose();
    let mut out = Bracket::zero(n);
    for (i, j, c, v) in lambda.canonical_entries() {
        // k λ(kᵀ x, kᵀ y) = Σ v (kᵀ x)_i (kᵀ y)_j k e_c, antisymmetrized.
        for a in 0..n {
            for b in (a + 1)..n {
                let w = v * (kt[(i, a)] * kt[(j, b)] - kt[(j, a)] * kt[(i, b)]);
                if w == 0.0 {
                    continue;
                }
                for d in 0..n {
                    out.set(a, b, d, out.get(a, b, d) + w * k[(d, c)]);
                }
            }
        }
    }
    out
}

/// Replaces k by the orthogonal factor of its polar decomposition when
/// ‖kᵀk − I‖ exceeds 1e−13.
fn reorthonormalize(k: &mut Operator) -> bool {
    let n = k.nrows();
    let defect = (k.transpose() * &*k - Operator::identity(n, n)).norm();
    if defect <= 1e-13 {
        return false;
    }
    let f = svd(&*k);
    *k = f.u * f.v.transpose();
    true
}

/// B = diag(A) + 2 strict_lower(A) for symmetric A, so A − B is skew.
fn lower_part(a: &Operator) -> Operator {
    let n = a.nrows();
    Operator::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => a[(i, i)],
        std::cmp::Ordering::Greater => 2.0 * a[(i, j)],
        std::cmp::Ordering::Less => 0.0,
    })
}

fn adapted_rhs(layout: &AdaptedLayout, rate: &Rate, y: &[f64], dy: &mut [f64]) {
    let n = layout.n;
    let k = layout.frame(y);
    let lambda = layout.bracket(y);
    let ric = ricci_operator(&lambda);
    let r = match rate {
        Rate::Custom(f) => f(&orthogonal_push(&k, &lambda)),
        _ => rate.eval(&lambda, &ric),
    };
    let mut a = ric;
    for i in 0..n {
        a[(i, i)] += r;
    }
    let b = lower_part(&a);
    let skew = &a - &b;
    let dk = -(&k * &skew);
    let dl = delta(&lambda, &b).expect("same dimension");
    for i in 0..n {
        for j in 0..n {
            dy[i * n + j] = dk[(i, j)];
        }
    }
    for (slot, out) in layout.slots.iter().zip(&mut dy[n * n..]) {
        *out = dl.get(slot.0, slot.1, slot.2);
    }
}

fn run_flow(
    b0: &Bracket,
    rate: Rate,
    t_max: f64,
    opts: &FlowOptions,
    renormalize_to: Option<f64>,
) -> Result<FlowTrace> {
    let n = b0.dim();
    let mut sampler = Sampler {
        rate: &rate,
        opts,
        t_end: t_max,
        times: Vec::new(),
        brackets: Vec::new(),
        diagnostics: Vec::new(),
    };
    sampler.push(0.0, b0.clone());
    let mut max_drift = 0.0f64;
    let result = if n < 2 {
        // n = 1: V_1 = {0}
        sampler.push(t_max, b0.clone());
        Ok(StepStats::default())
    } else {
        match opts.scheme {
            Scheme::Direct => {
                let mut y = pack(b0);
                integrate(
                    |_, y, dy| {
                        let v = bracket_velocity(&unpack(n, y), &rate);
                        dy.copy_from_slice(&pack(&v));
                        Ok(())
                    },
                    0.0,
                    &mut y,
                    t_max,
                    &opts.ode(),
                    |t, y| {
                        let changed = renormalize_to
                            .is_some_and(|target| renormalize(y, target, &mut max_drift, t));
                        sampler.offer(t, unpack(n, y));
                        Ok(changed)
                    },
                )
            }
            Scheme::Adapted => {
                let frame = adapted_frame(b0, DEFAULT_TOL)?;
                log::debug!("adapted frame: discarded {:.3e}", frame.discarded);
                let layout = AdaptedLayout::new(&frame);
                let mut y = layout.pack(&frame.q, &frame.bracket);
                let nk = n * n;
                integrate(
                    |_, y, dy| {
                        adapted_rhs(&layout, &rate, y, dy);
                        Ok(())
                    },
                    0.0,
                    &mut y,
                    t_max,
                    &opts.ode(),
                    |t, y| {
                        let mut k = layout.frame(y);
                        let mut changed = reorthonormalize(&mut k);
                        if changed {
                            for i in 0..n {
                                for j in 0..n {
                                    y[i * n + j] = k[(i, j)];
                                }
                            }
                        }
                        if let Some(target) = renormalize_to {
                            changed |= renormalize(&mut y[nk..], target, &mut max_drift, t);
                        }
                        sampler.offer(t, layout.push_forward(y));
                        Ok(changed)
                    },
                )
            }
        }
    };
    if renormalize_to.is_some() && max_drift > 0.0 {
        log::info!("normalized flow: largest norm drift corrected {max_drift:.3e}");
    }
    let Sampler {
        times,
        brackets,
        diagnostics,
        ..
    } = sampler;
    let make = |stats: StepStats| FlowTrace {
        n,
        rate: rate.clone(),
        times,
        brackets,
        h: None,
        diagnostics,
        stats,
        max_norm_drift: max_drift,
    };
    match result {
        Ok(stats) => Ok(make(stats)),
        Err(Error::StepSizeUnderflow { t, h, .. }) => Err(Error::StepSizeUnderflow {
            t,
            h,
            trace: Some(Box::new(make(StepStats::default()))),
        }),
        Err(e) => Err(e),
    }
}

/// μ′ = δ_μ(Ric_μ + r I) = δ_μ(Ric_μ) + r μ.
pub fn integrate_r_normalized(
    b0: &Bracket,
    rate: Rate,
    t_max: f64,
    opts: &FlowOptions,
) -> Result<FlowTrace> {
    check_initial(b0, t_max)?;
    run_flow(b0, rate, t_max, opts, None)
}

/// Unnormalized bracket flow μ′ = δ_μ(Ric_μ).
pub fn integrate_bracket_flow(b0: &Bracket, t_max: f64, opts: &FlowOptions) -> Result<FlowTrace> {
    integrate_r_normalized(b0, Rate::Zero, t_max, opts)
}

/// Norm of the sphere on which the normalized flow lives.
pub const SPHERE_NORM: f64 = 2.0;

/// μ′ = δ_μ(Ric_μ) + tr(Ric_μ²) μ on ‖μ‖ = 2, with the norm re-imposed
/// after each step whose drift exceeds 1e−12.
pub fn integrate_normalized_flow(
    b0: &Bracket,
    t_max: f64,
    opts: &FlowOptions,
) -> Result<FlowTrace> {
    let norm = b0.norm();
    if (norm - SPHERE_NORM).abs() >= 1e-10 {
        return Err(Error::BadNormalization { norm });
    }
    check_initial(b0, t_max)?;
    run_flow(b0, Rate::RicciSquared, t_max, opts, Some(SPHERE_NORM))
}

/// Scales a nonzero bracket onto the sphere ‖μ‖ = 2.
pub fn rescale_to_sphere(b: &Bracket) -> Result<Bracket> {
    let norm = b.norm();
    if norm == 0.0 {
        return Err(Error::ZeroBracket);
    }
    Ok(b.scaled(SPHERE_NORM / norm))
}

/// Piecewise cubic Hermite data for t ↦ Ric_μ(t) + r(t) I.
struct GeneratorSpline {
    values: Vec<Operator>,
    slopes: Vec<Operator>,
}

impl GeneratorSpline {
    fn new(trace: &FlowTrace) -> Self {
        let n = trace.n;
        let mut values = Vec::with_capacity(trace.len());
        let mut slopes = Vec::with_capacity(trace.len());
        for b in &trace.brackets {
            let ric = ricci_operator(b);
            let vel = velocity_with(b, &ric, &trace.rate);
            let r = trace.rate.eval(b, &ric);
            let dr = trace.rate.derivative(b, &ric, &vel);
            let dric = ricci_derivative(b, &vel).expect("same dimension");
            values.push(&ric + Operator::identity(n, n) * r);
            slopes.push(dric + Operator::identity(n, n) * dr);
        }
        Self { values, slopes }
    }

    fn eval(&self, i: usize, t0: f64, t1: f64, t: f64) -> Operator {
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.values[i] * h00
            + &self.slopes[i] * (h10 * h)
            + &self.values[i + 1] * h01
            + &self.slopes[i + 1] * (h11 * h)
    }
}

/// h′ = −(Ric_μ(t) + r(t) I) h, h(0) = I, integrated interval by interval
/// along the stored samples with Ric interpolated by cubic Hermite.
///
/// The state is the propagator of the current step, started at I and
/// folded into h after each accepted step, so the error control is relative
/// to h even when h decays exponentially.
pub fn cointegrate_h(trace: &FlowTrace, opts: &OdeOptions) -> Result<Vec<Operator>> {
    if trace.is_empty() {
        return Err(Error::TooFewSamples {
            needed: 1,
            found: 0,
        });
    }
    let n = trace.n;
    let identity: Vec<f64> = Operator::identity(n, n).as_slice().to_vec();
    let spline = GeneratorSpline::new(trace);
    let mut out = Vec::with_capacity(trace.len());
    let mut h = Operator::identity(n, n);
    out.push(h.clone());
    for i in 0..trace.len() - 1 {
        let (t0, t1) = (trace.times[i], trace.times[i + 1]);
        let mut y = identity.clone();
        integrate(
            |t, y, dy| {
                let p = Operator::from_column_slice(n, n, y);
                let a = spline.eval(i, t0, t1, t);
                let d = -(a * p);
                dy.copy_from_slice(d.as_slice());
                Ok(())
            },
            t0,
            &mut y,
            t1,
            opts,
            |_, y| {
                h = Operator::from_column_slice(n, n, y) * &h;
                y.copy_from_slice(&identity);
                Ok(true)
            },
        )
        .map_err(|e| match e {
            Error::StepSizeUnderflow { t, h, .. } => Error::StepSizeUnderflow {
                t,
                h,
                trace: Some(Box::new(trace.clone())),
            },
            other => other,
        })?;
        h = Operator::from_column_slice(n, n, &y) * &h;
        out.push(h.clone());
    }
    Ok(out)
}

/// Solution of ⟨·,·⟩′ = −2 ric(⟨·,·⟩) − 2r ⟨·,·⟩ on a fixed bracket, stored
/// as Gram matrices in the canonical basis.
#[derive(Clone, Debug)]
pub struct InnerProductTrace {
    pub times: Vec<f64>,
    pub metrics: Vec<Operator>,
    pub stats: StepStats,
}

/// With G = L Lᵀ, the basis L⁻ᵀ e_i is G-orthonormal and the bracket in it
/// is Lᵀ.μ.
pub fn orthonormal_frame_bracket(b: &Bracket, g: &Operator) -> Option<(Operator, Bracket)> {
    let l = g.clone().cholesky()?.l();
    // Lᵀ is triangular, so its inverse stays accurate however anisotropic
    // G becomes.
    let lt_inv = l
        .solve_lower_triangular(&Operator::identity(l.nrows(), l.nrows()))?
        .transpose();
    let lam = gl_action_with_inverse(&l.transpose(), &lt_inv, b);
    Some((l, lam))
}

/// Ricci operator of (b, G) as an endomorphism: L⁻ᵀ Ric_{Lᵀ.b} Lᵀ.
pub fn innerproduct_ricci_operator(b: &Bracket, g: &Operator) -> Result<Operator> {
    let (l, lam) =
        orthonormal_frame_bracket(b, g).ok_or(Error::LossOfPositivity { t: f64::NAN })?;
    let lt = l.transpose();
    let lt_inv = lt
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix { ratio: 0.0 })?;
    Ok(lt_inv * ricci_operator(&lam) * lt)
}

/// Scalar curvature of (b, G).
pub fn innerproduct_scalar_curvature(b: &Bracket, g: &Operator) -> Result<f64> {
    let (_, lam) =
        orthonormal_frame_bracket(b, g).ok_or(Error::LossOfPositivity { t: f64::NAN })?;
    Ok(scalar_curvature(&lam))
}

fn innerproduct_rhs(b: &Bracket, g: &Operator, rate: &Rate, t: f64) -> Result<Operator> {
    let (l, lam) = orthonormal_frame_bracket(b, g).ok_or(Error::LossOfPositivity { t })?;
    let ric = ricci_operator(&lam);
    let r = rate.eval(&lam, &ric);
    let ric_form = &l * ric * l.transpose();
    let mut d = ric_form * -2.0 - g * (2.0 * r);
    let sym = (&d + d.transpose()) * 0.5;
    d.copy_from(&sym);
    Ok(d)
}

/// Whether the inner-product flow needs the sphere guard: the normalized
/// rate started on ‖μ‖ = 2. Off the sphere that rate makes the scale mode
/// unstable, so drift from integration error grows like e^{2Ft}.
fn ip_sphere_guard(b0: &Bracket, rate: &Rate) -> bool {
    matches!(rate, Rate::RicciSquared) && (b0.norm() - SPHERE_NORM).abs() < 1e-10
}

/// Factor c with ‖μ_{cG}‖ = 2, where μ_G is the bracket in a G-orthonormal
/// frame; ‖μ_{cG}‖ = c^{−1/2} ‖μ_G‖. None when no rescaling is needed.
fn ip_sphere_factor(b0: &Bracket, g: &Operator, t: f64) -> Result<Option<f64>> {
    let (_, lam) = orthonormal_frame_bracket(b0, g).ok_or(Error::LossOfPositivity { t })?;
    let norm = lam.norm();
    if (norm - SPHERE_NORM).abs() <= 1e-12 {
        return Ok(None);
    }
    Ok(Some((norm / SPHERE_NORM).powi(2)))
}

/// Integrates the inner-product flow from G(t0) = `g` to `t1`, calling
/// `record` after every accepted step.
///
/// The state is Ĝ with G = L Ĝ Lᵀ, where L Lᵀ is G at the start of the
/// current step; the frame is re-based after every step. Error control is
/// therefore relative to G, which under the normalized flow decays
/// exponentially and at different rates in different directions.
#[allow(clippy::too_many_arguments)]
fn innerproduct_segment(
    b0: &Bracket,
    rate: &Rate,
    opts: &FlowOptions,
    g: &mut Operator,
    t0: f64,
    t1: f64,
    guard: bool,
    mut record: impl FnMut(f64, &Operator),
) -> Result<StepStats> {
    let n = b0.dim();
    let cholesky = |g: &Operator, t: f64| -> Result<Operator> {
        Ok(g.clone()
            .cholesky()
            .ok_or(Error::LossOfPositivity { t })?
            .l())
    };
    let frame = RefCell::new(cholesky(g, t0)?);
    let metric = |l: &Operator, y: &[f64]| {
        let g = l * Operator::from_column_slice(n, n, y) * l.transpose();
        (&g + g.transpose()) * 0.5
    };
    let mut y: Vec<f64> = Operator::identity(n, n).as_slice().to_vec();
    let stats = integrate(
        |t, y, dy| {
            let l = frame.borrow();
            let dg = innerproduct_rhs(b0, &metric(&l, y), rate, t)?;
            let half = l
                .solve_lower_triangular(&dg)
                .ok_or(Error::LossOfPositivity { t })?;
            let dg_hat = l
                .solve_lower_triangular(&half.transpose())
                .ok_or(Error::LossOfPositivity { t })?;
            dy.copy_from_slice(dg_hat.as_slice());
            Ok(())
        },
        t0,
        &mut y,
        t1,
        &opts.ode(),
        |t, y| {
            let mut gt = metric(&frame.borrow(), y);
            if guard {
                if let Some(c) = ip_sphere_factor(b0, &gt, t)? {
                    gt *= c;
                }
            }
            record(t, &gt);
            *frame.borrow_mut() = cholesky(&gt, t)?;
            y.copy_from_slice(Operator::identity(n, n).as_slice());
            Ok(true)
        },
    )?;
    *g = metric(&frame.borrow(), &y);
    Ok(stats)
}

/// Integrates the inner-product flow and stores every accepted step.
pub fn integrate_innerproduct_flow(
    b0: &Bracket,
    t_max: f64,
    opts: &FlowOptions,
    rate: Rate,
) -> Result<InnerProductTrace> {
    check_initial(b0, t_max)?;
    let n = b0.dim();
    let mut times = vec![0.0];
    let mut metrics = vec![Operator::identity(n, n)];
    let mut g = Operator::identity(n, n);
    let guard = ip_sphere_guard(b0, &rate);
    let stats = innerproduct_segment(b0, &rate, opts, &mut g, 0.0, t_max, guard, |t, g| {
        times.push(t);
        metrics.push(g.clone());
    })?;
    Ok(InnerProductTrace {
        times,
        metrics,
        stats,
    })
}

/// Integrates the inner-product flow and reports G exactly at `times`
/// (increasing, starting at 0).
pub fn integrate_innerproduct_flow_at(
    b0: &Bracket,
    times: &[f64],
    opts: &FlowOptions,
    rate: Rate,
) -> Result<InnerProductTrace> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Schema(
            "output times must start at 0 and increase strictly".into(),
        ));
    }
    if times.len() > 1 {
        check_initial(b0, *times.last().expect("nonempty"))?;
    }
    let n = b0.dim();
    let guard = ip_sphere_guard(b0, &rate);
    let mut g = Operator::identity(n, n);
    let mut metrics = vec![g.clone()];
    let mut stats = StepStats::default();
    for w in times.windows(2) {
        let s = innerproduct_segment(b0, &rate, opts, &mut g, w[0], w[1], guard, |_, _| {})?;
        stats.merge(&s);
        metrics.push(g.clone());
    }
    Ok(InnerProductTrace {
        times: times.to_vec(),
        metrics,
        stats,
    })
}

/// Sample-wise comparison of the three flows.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub times: Vec<f64>,
    /// ‖μ(t) − h(t).μ₀‖ / ‖μ(t)‖.
    pub bracket_residual: Vec<f64>,
    /// ‖G(t) − h(t)ᵀh(t)‖ (Frobenius).
    pub metric_residual: Vec<f64>,
    /// ‖G(t) − h(t)ᵀh(t)‖ / ‖G(t)‖.
    pub metric_residual_rel: Vec<f64>,
    /// |scal(G(t), μ₀) − scal_μ(t)|.
    pub scal_residual: Vec<f64>,
    /// ‖h Ric(G(t)) − Ric_μ(t) h‖ / ‖Ric_μ(t) h‖: how far the integrated
    /// form h′ = −Ric_μ(t) h is from h′ = −h Ric(g(t)).
    pub h_form_residual: Vec<f64>,
    pub max_bracket_residual: f64,
    pub max_metric_residual: f64,
    pub max_metric_residual_rel: f64,
    pub max_scal_residual: f64,
    pub max_h_form_residual: f64,
    pub min_abs_det_h: f64,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Runs bracket flow, h(t) and inner-product flow from `b0` on [0, t_max]
/// and compares them at the bracket-trace samples. With r = tr Ric² and
/// `b0` on the sphere both flows use the sphere guard.
pub fn check_equivalence(
    b0: &Bracket,
    t_max: f64,
    opts: &FlowOptions,
    rate: Rate,
) -> Result<EquivalenceReport> {
    let trace = if ip_sphere_guard(b0, &rate) {
        integrate_normalized_flow(b0, t_max, opts)?
    } else {
        integrate_r_normalized(b0, rate.clone(), t_max, opts)?
    };
    let h = cointegrate_h(&trace, &opts.ode())?;
    let ip = integrate_innerproduct_flow_at(b0, &trace.times, opts, rate)?;
    compare_flows(&trace, &h, &ip)
}

pub fn compare_flows(
    trace: &FlowTrace,
    h: &[Operator],
    ip: &InnerProductTrace,
) -> Result<EquivalenceReport> {
    if h.len() != trace.len() || ip.metrics.len() != trace.len() {
        return Err(Error::DimensionMismatch {
            expected: trace.len(),
            found: h.len().min(ip.metrics.len()),
        });
    }
    let b0 = trace.initial();
    let mut rep = EquivalenceReport {
        times: trace.times.clone(),
        bracket_residual: Vec::new(),
        metric_residual: Vec::new(),
        metric_residual_rel: Vec::new(),
        scal_residual: Vec::new(),
        h_form_residual: Vec::new(),
        max_bracket_residual: 0.0,
        max_metric_residual: 0.0,
        max_metric_residual_rel: 0.0,
        max_scal_residual: 0.0,
        max_h_form_residual: 0.0,
        min_abs_det_h: f64::INFINITY,
    };
    for ((mu, hi), g) in trace.brackets.iter().zip(h).zip(&ip.metrics) {
        // h(t) of a normalized flow degenerates exponentially, so the
        // conditioning guard of gl_action would reject it late in a run.
        let hinv = hi
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularMatrix { ratio: 0.0 })?;
        let pushed = gl_action_with_inverse(hi, &hinv, b0);
        let denom = mu.norm().max(f64::MIN_POSITIVE);
        rep.bracket_residual.push(mu.sub(&pushed)?.norm() / denom);
        let hth = hi.transpose() * hi;
        let dm = (g - &hth).norm();
        rep.metric_residual.push(dm);
        rep.metric_residual_rel.push(dm / g.norm());
        rep.scal_residual
            .push((innerproduct_scalar_curvature(b0, g)? - scalar_curvature(mu)).abs());
        let ric_mu_h = ricci_operator(mu) * hi;
        let h_ric_g = hi * innerproduct_ricci_operator(b0, g)?;
        let scale = ric_mu_h.norm();
        rep.h_form_residual.push(if scale == 0.0 {
            (h_ric_g).norm()
        } else {
            (h_ric_g - ric_mu_h).norm() / scale
        });
        rep.min_abs_det_h = rep.min_abs_det_h.min(hi.determinant().abs());
    }
    rep.max_bracket_residual = max_of(&rep.bracket_residual);
    rep.max_metric_residual = max_of(&rep.metric_residual);
    rep.max_metric_residual_rel = max_of(&rep.metric_residual_rel);
    rep.max_scal_residual = max_of(&rep.scal_residual);
    rep.max_h_form_residual = max_of(&rep.h_form_residual);
    Ok(rep)
}

/// Curvature-decay bounds along an unnormalized trace.
#[derive(Clone, Debug, Serialize)]
pub struct Type3Report {
    /// sup t·‖Riem_μ(t)‖ over samples; an empirical type-III constant.
    pub sup_t_riem: f64,
    /// sup t·‖μ(t)‖²/(2n), which must not exceed 1.
    pub sup_t_mu2_over_2n: f64,
    /// sup t·‖Ric_μ(t)‖ / (√3 n / 2), which must not exceed 1.
    pub sup_t_ric_over_bound: f64,
    pub bound_ok: bool,
}

pub fn type3_certificate(trace: &FlowTrace) -> Type3Report {
    let n = trace.n as f64;
    let mut rep = Type3Report {
        sup_t_riem: 0.0,
        sup_t_mu2_over_2n: 0.0,
        sup_t_ric_over_bound: 0.0,
        bound_ok: true,
    };
    let ric_bound = 3f64.sqrt() * n / 2.0;
    for ((t, b), d) in trace
        .times
        .iter()
        .zip(&trace.brackets)
        .zip(&trace.diagnostics)
    {
        if b.is_zero() {
            continue;
        }
        rep.sup_t_riem = rep.sup_t_riem.max(t * riemann_at_origin(b).norm);
        rep.sup_t_mu2_over_2n = rep
            .sup_t_mu2_over_2n
            .max(t * d.mu_norm * d.mu_norm / (2.0 * n));
        rep.sup_t_ric_over_bound = rep
            .sup_t_ric_over_bound
            .max(t * d.tr_ric2.sqrt() / ric_bound);
    }
    rep.bound_ok = rep.sup_t_mu2_over_2n <= 1.0 && rep.sup_t_ric_over_bound <= 1.0;
    rep
}

/// Finite-difference check of d/dt scal = 2 tr Ric² and d/dt ‖μ‖² = −8 tr Ric².
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    /// Interior sample times at which the check was made.
    pub times: Vec<f64>,
    pub scal_rel_err: Vec<f64>,
    pub norm_rel_err: Vec<f64>,
    pub max_scal_rel_err: f64,
    pub max_norm_rel_err: f64,
}

impl IdentityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_scal_rel_err < tol && self.max_norm_rel_err < tol
    }
}

/// Derivative at the middle node of the quadratic through three samples.
fn three_point_derivative(t: [f64; 3], f: [f64; 3]) -> f64 {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    -h2 / (h1 * (h1 + h2)) * f[0] + (h2 - h1) / (h1 * h2) * f[1] + h1 / (h2 * (h1 + h2)) * f[2]
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    let diff = (approx - exact).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / exact.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn verify_flow_identities(trace: &FlowTrace) -> Result<IdentityReport> {
    if trace.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            found: trace.len(),
        });
    }
    let mut rep = IdentityReport {
        times: Vec::new(),
        scal_rel_err: Vec::new(),
        norm_rel_err: Vec::new(),
        max_scal_rel_err: 0.0,
        max_norm_rel_err: 0.0,
    };
    let d = &trace.diagnostics;
    for i in 1..trace.len() - 1 {
        let t = [trace.times[i - 1], trace.times[i], trace.times[i + 1]];
        let scal = [d[i - 1].scal, d[i].scal, d[i + 1].scal];
        let norm2 = [
            d[i - 1].mu_norm.powi(2),
            d[i].mu_norm.powi(2),
            d[i + 1].mu_norm.powi(2),
        ];
        let f = d[i].tr_ric2;
        rep.times.push(t[1]);
        rep.scal_rel_err
            .push(rel_err(three_point_derivative(t, scal), 2.0 * f));
        rep.norm_rel_err
            .push(rel_err(three_point_derivative(t, norm2), -8.0 * f));
    }
    rep.max_scal_rel_err = max_of(&rep.scal_rel_err);
    rep.max_norm_rel_err = max_of(&rep.norm_rel_err);
    Ok(rep)
}

/// ⟨v, μ⟩ for the flow velocity, useful to confirm d/dt ‖μ‖² = 2⟨μ′, μ⟩.
pub fn radial_speed(b: &Bracket, rate: &Rate) -> f64 {
    vn_inner(&bracket_velocity(b, rate), b).expect("same dimension")
}
