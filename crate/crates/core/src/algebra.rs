//! Structure constants of skew-symmetric brackets on ℝⁿ and the linear
//! algebra around them: validation (Jacobi, nilpotency), the GL(n)-action,
//! the O(n)-invariant inner product on V_n, the infinitesimal action δ_μ
//! and its transpose, and derivation algebras.
//!
//! Coefficients are stored densely as `μ_ij^k = ⟨μ(e_i, e_j), e_k⟩` with
//! both halves of the antisymmetric pair present, so reads are a single
//! index. Every constructor mirrors `(i, j)` onto `(j, i)`.

use nalgebra::{DMatrix, DVector};

use crate::dual::Ring;
use crate::error::{Error, Result};
use crate::linalg::svd;

/// Real n×n matrix: Ricci operators, derivations, h(t), elements of GL(n).
pub type Operator = DMatrix<f64>;

/// Default absolute tolerance for Jacobi and rank decisions on unit-scale brackets.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Condition number above which [`gl_action`] logs a warning.
const CONDITION_WARN: f64 = 1e12;

/// An element of V_n: a bilinear skew-symmetric map ℝⁿ × ℝⁿ → ℝⁿ.
///
/// Jacobi and nilpotency are not enforced here; see [`validate_bracket`].
#[derive(Clone, Debug, PartialEq)]
pub struct Bracket {
    n: usize,
    coeffs: Vec<f64>,
}

/// Velocity vectors and δ_μ images share the storage of [`Bracket`] and
/// carry no algebraic constraint beyond skew-symmetry.
pub type VTangent = Bracket;

impl Bracket {
    pub fn zero(n: usize) -> Self {
        assert!(n > 0, "dimension must be positive");
        Self {
            n,
            coeffs: vec![0.0; n * n * n],
        }
    }

    /// Builds a bracket from `f(i, j, k)` evaluated on canonical pairs `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut b = Self::zero(n);
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..n {
                    b.set(i, j, k, f(i, j, k));
                }
            }
        }
        b
    }

    /// Builds a bracket from zero-based `(i, j, k, value)` triples with `i != j`.
    /// Entries with `i > j` are stored as `-value` on `(j, i)`.
    pub fn from_entries(n: usize, entries: &[(usize, usize, usize, f64)]) -> Self {
        let mut b = Self::zero(n);
        for &(i, j, k, v) in entries {
            b.set(i, j, k, v);
        }
        b
    }

    /// Takes an arbitrary n³ array and keeps its skew part `(μ_ij − μ_ji)/2`.
    pub fn from_raw(n: usize, raw: &[f64]) -> Self {
        assert_eq!(
            raw.len(),
            n * n * n,
            "raw coefficient array has wrong length"
        );
        let mut b = Self::zero(n);
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..n {
                    let v = 0.5 * (raw[(i * n + j) * n + k] - raw[(j * n + i) * n + k]);
                    b.set(i, j, k, v);
                }
            }
        }
        b
    }

    /// μ(e₁, e₂) = c·e₃ on ℝ³.
    pub fn heisenberg(c: f64) -> Self {
        Self::from_entries(3, &[(0, 1, 2, c)])
    }

    /// Model filiform bracket μ(e₁, e_i) = a_i e_{i+1}, i = 2..n−1, with
    /// `constants = [a_2, …, a_{n−1}]`, so n = constants.len() + 2.
    pub fn filiform(constants: &[f64]) -> Self {
        let n = constants.len() + 2;
        let entries: Vec<_> = constants
            .iter()
            .enumerate()
            .map(|(idx, &a)| (0, idx + 1, idx + 2, a))
            .collect();
        Self::from_entries(n, &entries)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coeffs[self.idx(i, j, k)]
    }

    /// Sets μ_ij^k and μ_ji^k = −μ_ij^k.
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        if i == j {
            assert!(value == 0.0, "diagonal structure constants must vanish");
            return;
        }
        let a = self.idx(i, j, k);
        let b = self.idx(j, i, k);
        self.coeffs[a] = value;
        self.coeffs[b] = -value;
    }

    /// Full n³ coefficient array, row-major in `(i, j, k)`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Nonzero canonical entries `(i, j, k, value)` with `i < j`.
    pub fn canonical_entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let n = self.n;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..n {
                    let v = self.get(i, j, k);
                    if v != 0.0 {
                        out.push((i, j, k, v));
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&v| v == 0.0)
    }

    /// Largest |μ_ij^k + μ_ji^k| over all stored entries.
    pub fn skew_defect(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max((self.get(i, j, k) + self.get(j, i, k)).abs());
                }
            }
        }
        worst
    }

    /// μ(x, y) for coordinates in any [`Ring`].
    #[allow(clippy::needless_range_loop)]
    pub fn apply<T: Ring>(&self, x: &[T], y: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let xy = x[i] * y[j];
                let base = self.idx(i, j, 0);
                for (k, o) in out.iter_mut().enumerate() {
                    let c = self.coeffs[base + k];
                    if c != 0.0 {
                        *o = *o + T::from_f64(c) * xy;
                    }
                }
            }
        }
        out
    }

    /// μ(e_i, e_j) as a vector.
    pub fn basis_bracket(&self, i: usize, j: usize) -> DVector<f64> {
        let base = self.idx(i, j, 0);
        DVector::from_column_slice(&self.coeffs[base..base + self.n])
    }

    /// Matrix of ad_μ x = μ(x, ·).
    pub fn ad(&self, x: &[f64]) -> Operator {
        let n = self.n;
        Operator::from_fn(n, n, |k, j| (0..n).map(|i| x[i] * self.get(i, j, k)).sum())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            coeffs: self.coeffs.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        check_dim(self.n, other.n)?;
        Ok(Self {
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn norm_squared(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum()
    }

    /// ‖μ‖ for the inner product summing over all ordered pairs (i, j).
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// ⟨a, b⟩ = Σ_{i,j,k} a_ij^k b_ij^k over all ordered pairs (i, j).
pub fn vn_inner(a: &VTangent, b: &VTangent) -> Result<f64> {
    check_dim(a.n, b.n)?;
    Ok(a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x * y).sum())
}

pub fn vn_norm(b: &VTangent) -> f64 {
    b.norm()
}

/// ⟨α, β⟩ = tr(α βᵀ) on 𝔤𝔩_n.
pub fn gl_inner(a: &Operator, b: &Operator) -> f64 {
    a.dot(b)
}

/// Outcome of [`validate_bracket`]. Failures are carried in the report.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub skew_ok: bool,
    /// Largest ∞-norm of the cyclic Jacobiator over basis triples.
    pub jacobi_residual: f64,
    pub jacobi_ok: bool,
    pub nilpotent: bool,
    /// Nilpotency degree k_μ; 0 for the zero bracket.
    pub degree: Option<usize>,
    /// Dimensions of C⁰ ⊇ C¹ ⊇ … of the descending central series.
    pub central_series: Vec<usize>,
    pub messages: Vec<String>,
}

/// max over i < j < k of ‖μ(μ(e_i,e_j),e_k) + μ(μ(e_j,e_k),e_i) + μ(μ(e_k,e_i),e_j)‖_∞.
///
/// The cyclic sum is totally antisymmetric for skew μ, so ordered triples
/// add nothing.
pub fn jacobi_residual(b: &Bracket) -> f64 {
    let n = b.n;
    let mut worst = 0.0f64;
    // nested(i, j, k) = μ(μ(e_i, e_j), e_k)
    let nested = |i: usize, j: usize, k: usize, out: &mut [f64]| {
        for a in 0..n {
            let c = b.get(i, j, a);
            if c == 0.0 {
                continue;
            }
            for (m, o) in out.iter_mut().enumerate() {
                *o += c * b.get(a, k, m);
            }
        }
    };
    let mut acc = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                acc.iter_mut().for_each(|v| *v = 0.0);
                nested(i, j, k, &mut acc);
                nested(j, k, i, &mut acc);
                nested(k, i, j, &mut acc);
                for v in &acc {
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

/// Orthonormal basis (as columns) of the span of `vectors`, dropping
/// directions with singular value at most `abs_tol`.
pub(crate) fn orthonormal_span(
    n: usize,
    vectors: &[DVector<f64>],
    abs_tol: f64,
) -> Vec<DVector<f64>> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let f = svd(&DMatrix::from_columns(vectors));
    let basis: Vec<_> = (0..f.rank(abs_tol))
        .map(|k| f.u.column(k).clone_owned())
        .collect();
    debug_assert!(basis.iter().all(|v| v.len() == n));
    basis
}

/// Orthonormal bases of C¹, C², … of the descending central series
/// C⁰ = ℝⁿ, C^{m+1} = μ(ℝⁿ, C^m), ending with the first zero term (empty).
/// Rank decisions are relative to ‖μ‖.
pub fn central_series_bases(b: &Bracket, tol: f64) -> Result<Vec<Vec<DVector<f64>>>> {
    let n = b.n;
    let scale = b.norm();
    if scale == 0.0 {
        return Ok(vec![Vec::new()]);
    }
    let abs_tol = tol * scale;
    let mut current: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut out = Vec::new();
    for _ in 0..=n {
        let mut images = Vec::with_capacity(n * current.len());
        for v in &current {
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                images.push(DVector::from_vec(b.apply(&e, v.as_slice())));
            }
        }
        let next = orthonormal_span(n, &images, abs_tol);
        let prev_dim = current.len();
        if next.is_empty() {
            out.push(next);
            return Ok(out);
        }
        if next.len() >= prev_dim {
            return Err(Error::NotNilpotent {
                stable_dim: next.len(),
            });
        }
        out.push(next.clone());
        current = next;
    }
    Err(Error::NotNilpotent {
        stable_dim: current.len(),
    })
}

/// Dimensions of the descending central series, starting with n and
/// ending with the first zero.
pub fn central_series(b: &Bracket, tol: f64) -> Result<Vec<usize>> {
    let mut dims = vec![b.n];
    dims.extend(central_series_bases(b, tol)?.iter().map(Vec::len));
    Ok(dims)
}

/// Orthonormal frame adapted to the descending central series.
///
/// Basis vector e_i sits in layer w_i = a when it spans part of
/// C^{a−1} ⊖ C^a. Since μ(C^a, C^b) ⊂ C^{a+b+1}, the bracket in this frame
/// only uses slots with w_k ≥ w_i + w_j, a subset of the strictly
/// triangular slots k > max(i, j).
#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    /// Orthogonal matrix with μ = q.λ.
    pub q: Operator,
    /// λ restricted to the filtered slots.
    pub bracket: Bracket,
    /// Layer of each basis vector, starting at 1, nondecreasing.
    pub layers: Vec<usize>,
    /// Norm of the entries of qᵀ.μ outside the filtered slots that were
    /// dropped.
    pub discarded: f64,
}

impl AdaptedFrame {
    /// Whether λ(e_i, e_j) may have an e_k component.
    pub fn allows(&self, i: usize, j: usize, k: usize) -> bool {
        is_filtered_slot(&self.layers, i, j, k)
    }
}

/// w_k ≥ w_i + w_j for layer weights w.
#[inline]
pub fn is_filtered_slot(layers: &[usize], i: usize, j: usize, k: usize) -> bool {
    layers[k] >= layers[i] + layers[j]
}

/// Orders an orthonormal basis along the central series (ℝⁿ ⊖ C¹ first,
/// the last nonzero C^m at the end) and drops the rounding outside the
/// filtered slots.
pub fn adapted_frame(b: &Bracket, tol: f64) -> Result<AdaptedFrame> {
    let n = b.n;
    let series = central_series_bases(b, tol)?;
    // Build from the deepest layer outwards.
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut layers: Vec<Vec<DVector<f64>>> = Vec::new();
    let full: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut spaces: Vec<&Vec<DVector<f64>>> = vec![&full];
    spaces.extend(series.iter().filter(|s| !s.is_empty()));
    for space in spaces.iter().rev() {
        let projected: Vec<DVector<f64>> = space
            .iter()
            .map(|v| {
                let mut w = v.clone();
                for u in &chosen {
                    w -= u * u.dot(v);
                }
                w
            })
            .collect();
        let fresh = orthonormal_span(n, &projected, 1e-8);
        chosen.extend(fresh.iter().cloned());
        layers.push(fresh);
    }
    layers.reverse();
    let weights: Vec<usize> = layers
        .iter()
        .enumerate()
        .flat_map(|(a, layer)| std::iter::repeat_n(a + 1, layer.len()))
        .collect();
    let columns: Vec<DVector<f64>> = layers.into_iter().flatten().collect();
    if columns.len() != n {
        return Err(Error::SingularMatrix { ratio: 0.0 });
    }
    let q = DMatrix::from_columns(&columns);
    let rotated = gl_action(&q.transpose(), b)?;
    let mut discarded = 0.0;
    let mut lambda = Bracket::zero(n);
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..n {
                let v = rotated.get(i, j, k);
                if is_filtered_slot(&weights, i, j, k) {
                    lambda.set(i, j, k, v);
                } else {
                    discarded += 2.0 * v * v;
                }
            }
        }
    }
    Ok(AdaptedFrame {
        q,
        bracket: lambda,
        layers: weights,
        discarded: discarded.sqrt(),
    })
}

/// Smallest m with C^m = 0, with the zero bracket reported as degree 0.
pub fn nilpotency_degree(b: &Bracket) -> Result<usize> {
    nilpotency_degree_with_tol(b, DEFAULT_TOL)
}

pub fn nilpotency_degree_with_tol(b: &Bracket, tol: f64) -> Result<usize> {
    let dims = central_series(b, tol)?;
    let first_zero = dims.len() - 1;
    Ok(if first_zero == 1 { 0 } else { first_zero })
}

/// Checks skew-symmetry, the Jacobi identity and nilpotency.
///
/// `tol` is applied to the Jacobiator relative to ‖μ‖² and to rank
/// decisions relative to ‖μ‖.
pub fn validate_bracket(b: &Bracket, tol: f64) -> ValidationReport {
    let mut messages = Vec::new();
    let skew_ok = b.skew_defect() == 0.0 && b.is_finite();
    if !b.is_finite() {
        messages.push("bracket has non-finite entries".to_string());
    } else if !skew_ok {
        messages.push(format!("skew-symmetry defect {:.3e}", b.skew_defect()));
    }
    let jacobi_residual = jacobi_residual(b);
    let jacobi_ok = jacobi_residual <= tol * b.norm_squared().max(f64::MIN_POSITIVE);
    if !jacobi_ok {
        messages.push(format!(
            "Jacobi identity fails: residual {jacobi_residual:.3e}"
        ));
    }
    let (nilpotent, degree, central) = match central_series(b, tol) {
        Ok(dims) => {
            let first_zero = dims.len() - 1;
            let degree = if first_zero == 1 { 0 } else { first_zero };
            (true, Some(degree), dims)
        }
        Err(Error::NotNilpotent { stable_dim }) => {
            messages.push(format!(
                "not nilpotent: central series stabilizes at dimension {stable_dim}"
            ));
            (false, None, Vec::new())
        }
        Err(e) => {
            messages.push(e.to_string());
            (false, None, Vec::new())
        }
    };
    ValidationReport {
        skew_ok,
        jacobi_residual,
        jacobi_ok,
        nilpotent,
        degree,
        central_series: central,
        messages,
    }
}

/// Ratio σ_min/σ_max of a square matrix.
pub(crate) fn inverse_condition(g: &Operator) -> f64 {
    let s = svd(g).s;
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        0.0
    } else {
        s.last().copied().unwrap_or(0.0) / max
    }
}

/// g.μ(x, y) = g μ(g⁻¹x, g⁻¹y).
pub fn gl_action(g: &Operator, b: &Bracket) -> Result<Bracket> {
    let n = b.n;
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g.nrows(),
        });
    }
    let ratio = inverse_condition(g);
    if ratio <= 1e-14 {
        return Err(Error::SingularMatrix { ratio });
    }
    if ratio < 1.0 / CONDITION_WARN {
        log::warn!("gl_action: condition number {:.3e}", 1.0 / ratio);
    }
    let ginv = g
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix { ratio })?;
    Ok(gl_action_with_inverse(g, &ginv, b))
}

/// g.μ given g⁻¹, without the conditioning check of [`gl_action`].
pub(crate) fn gl_action_with_inverse(g: &Operator, ginv: &Operator, b: &Bracket) -> Bracket {
    let n = b.n;
    let src = &b.coeffs;
    let at = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    // t1[i,b,c] = Σ_a ginv[a,i] μ[a,b,c]
    let mut t1 = vec![0.0; n * n * n];
    for i in 0..n {
        for a in 0..n {
            let w = ginv[(a, i)];
            if w == 0.0 {
                continue;
            }
            for bb in 0..n {
                for c in 0..n {
                    t1[at(i, bb, c)] += w * src[at(a, bb, c)];
                }
            }
        }
    }
    // t2[i,j,c] = Σ_b ginv[b,j] t1[i,b,c]
    let mut t2 = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for bb in 0..n {
                let w = ginv[(bb, j)];
                if w == 0.0 {
                    continue;
                }
                for c in 0..n {
                    t2[at(i, j, c)] += w * t1[at(i, bb, c)];
                }
            }
        }
    }
    // out[i,j,k] = Σ_c g[k,c] t2[i,j,c]
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[at(i, j, k)] = (0..n).map(|c| g[(k, c)] * t2[at(i, j, c)]).sum();
            }
        }
    }
    Bracket::from_raw(n, &out)
}

/// δ_μ(α) = μ(α·, ·) + μ(·, α·) − α μ(·, ·), so that π(α)μ = −δ_μ(α).
pub fn delta(b: &Bracket, alpha: &Operator) -> Result<VTangent> {
    let n = b.n;
    check_dim(n, alpha.nrows())?;
    check_dim(n, alpha.ncols())?;
    let mut out = Bracket::zero(n);
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..n {
                let mut v = 0.0;
                for a in 0..n {
                    v += alpha[(a, i)] * b.get(a, j, k);
                    v += alpha[(a, j)] * b.get(i, a, k);
                    v -= alpha[(k, a)] * b.get(i, j, a);
                }
                out.set(i, j, k, v);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`delta`] for ⟨·,·⟩ on V_n and tr(αβᵀ) on 𝔤𝔩_n:
/// δ_μᵗ(v)_pq = 2 Σ_{j,k} μ_pj^k v_qj^k − Σ_{i,j} v_ij^p μ_ij^q.
pub fn delta_transpose(b: &Bracket, v: &VTangent) -> Result<Operator> {
    let n = b.n;
    check_dim(n, v.n)?;
    let mut out = Operator::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s += 2.0 * b.get(p, j, k) * v.get(q, j, k);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    s -= v.get(i, j, p) * b.get(i, j, q);
                }
            }
            out[(p, q)] = s;
        }
    }
    Ok(out)
}

/// Elementary matrix E_pq.
pub(crate) fn elementary(n: usize, p: usize, q: usize) -> Operator {
    let mut e = Operator::zeros(n, n);
    e[(p, q)] = 1.0;
    e
}

/// Matrix of α ↦ δ_μ(α) with columns indexed by p·n + q (α = E_pq) and rows
/// by canonical entries (i < j, k), zero-padded to at least n² rows.
fn delta_matrix(b: &Bracket) -> DMatrix<f64> {
    let n = b.n;
    let canonical = n * n * (n - 1) / 2;
    let rows = canonical.max(n * n);
    let mut m = DMatrix::zeros(rows, n * n);
    for p in 0..n {
        for q in 0..n {
            let d = delta(b, &elementary(n, p, q)).expect("dimensions agree");
            let mut row = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    for k in 0..n {
                        m[(row, p * n + q)] = d.get(i, j, k);
                        row += 1;
                    }
                }
            }
        }
    }
    m
}

/// Orthonormal basis (for tr(αβᵀ)) of Der(μ) = ker δ_μ, by thresholding
/// singular values at `tol` relative to the largest one.
pub fn derivation_basis(b: &Bracket, tol: f64) -> Vec<Operator> {
    let n = b.n;
    let f = svd(&delta_matrix(b));
    let rank = f.rank(tol * f.max());
    (rank..n * n)
        .map(|col| Operator::from_fn(n, n, |p, q| f.v[(p * n + q, col)]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> Operator {
        Operator::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn zero_bracket_validates_with_degree_zero() {
        let r = validate_bracket(&Bracket::zero(3), DEFAULT_TOL);
        assert!(r.skew_ok && r.nilpotent && r.jacobi_ok);
        assert_eq!(r.jacobi_residual, 0.0);
        assert_eq!(r.degree, Some(0));
    }

    #[test]
    fn heisenberg_is_two_step() {
        let r = validate_bracket(&Bracket::heisenberg(1.0), DEFAULT_TOL);
        assert_eq!(r.jacobi_residual, 0.0);
        assert!(r.nilpotent);
        assert_eq!(r.degree, Some(2));
        assert_eq!(r.central_series, vec![3, 1, 0]);
    }

    #[test]
    fn solvable_nonnilpotent_is_rejected() {
        // μ(e1, e2) = e1
        let b = Bracket::from_entries(2, &[(0, 1, 0, 1.0)]);
        let r = validate_bracket(&b, DEFAULT_TOL);
        assert_eq!(r.jacobi_residual, 0.0);
        assert!(!r.nilpotent);
        assert!(matches!(
            nilpotency_degree(&b),
            Err(Error::NotNilpotent { .. })
        ));
    }

    #[test]
    fn filiform_degrees() {
        assert_eq!(
            nilpotency_degree(&Bracket::filiform(&[1.0, 1.0])).unwrap(),
            3
        );
        assert_eq!(
            nilpotency_degree(&Bracket::filiform(&[1.0, 2.0, 0.5])).unwrap(),
            4
        );
        assert_eq!(
            central_series(&Bracket::filiform(&[1.0, 1.0]), DEFAULT_TOL).unwrap(),
            vec![4, 2, 1, 0]
        );
    }

    #[test]
    fn adapted_frame_triangularizes() {
        let f = Bracket::filiform(&[1.0, 2.0, -0.5]);
        let g = Operator::from_fn(5, 5, |i, j| {
            if i == j {
                1.0
            } else {
                0.1 * (i as f64 - j as f64)
            }
        });
        let b = gl_action(&g, &f).unwrap();
        let frame = adapted_frame(&b, DEFAULT_TOL).unwrap();
        assert!((frame.q.transpose() * &frame.q - Operator::identity(5, 5)).amax() < 1e-12);
        assert!(frame.discarded < 1e-12);
        let back = gl_action(&frame.q, &frame.bracket).unwrap();
        assert!(back.sub(&b).unwrap().norm() < 1e-12);
        assert_eq!(frame.layers, vec![1, 1, 2, 3, 4]);
        for (i, j, k, _) in frame.bracket.canonical_entries() {
            assert!(frame.allows(i, j, k) && k > i.max(j));
        }
    }

    #[test]
    fn jacobi_failure_is_reported() {
        // μ(e1,e2)=e3, μ(e3,e4)=e1: the cyclic sum on (e1,e2,e4) is e1.
        let b = Bracket::from_entries(4, &[(0, 1, 2, 1.0), (2, 3, 0, 1.0)]);
        let r = validate_bracket(&b, DEFAULT_TOL);
        assert!(r.jacobi_residual > 0.5);
        assert!(!r.jacobi_ok);
    }

    #[test]
    fn scalar_action_rescales() {
        let h = Bracket::heisenberg(1.0);
        let g = Operator::identity(3, 3) * 4.0;
        let out = gl_action(&g, &h).unwrap();
        assert!((out.get(0, 1, 2) - 0.25).abs() < 1e-15);
        assert_eq!(gl_action(&Operator::identity(3, 3), &h).unwrap(), h);
    }

    #[test]
    fn swapping_generators_flips_sign() {
        let h = Bracket::heisenberg(1.0);
        let mut g = Operator::zeros(3, 3);
        g[(0, 1)] = 1.0;
        g[(1, 0)] = 1.0;
        g[(2, 2)] = 1.0;
        let out = gl_action(&g, &h).unwrap();
        assert!((out.get(0, 1, 2) + 1.0).abs() < 1e-15);
        assert!((out.norm() - h.norm()).abs() < 1e-15);
    }

    #[test]
    fn singular_action_errors() {
        let mut g = Operator::identity(3, 3);
        g[(2, 2)] = 0.0;
        assert!(matches!(
            gl_action(&g, &Bracket::heisenberg(1.0)),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn inner_product_counts_ordered_pairs() {
        assert_eq!(Bracket::heisenberg(1.0).norm_squared(), 2.0);
        assert_eq!(Bracket::heisenberg(2.0).norm_squared(), 8.0);
        let z = Bracket::zero(3);
        assert_eq!(vn_inner(&z, &Bracket::heisenberg(3.0)).unwrap(), 0.0);
        assert!(matches!(
            vn_inner(&z, &Bracket::zero(4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn delta_of_identity_is_bracket() {
        let b = Bracket::filiform(&[1.0, -2.0]);
        let d = delta(&b, &Operator::identity(4, 4)).unwrap();
        assert_eq!(d, b);
    }

    #[test]
    fn delta_on_heisenberg_diagonal() {
        let (a, bb, c) = (0.3, -1.1, 2.5);
        let d = delta(&Bracket::heisenberg(1.0), &diag(&[a, bb, c])).unwrap();
        let expected = Bracket::heisenberg(a + bb - c);
        assert!(d.sub(&expected).unwrap().norm() < 1e-15);
        let zero = delta(&Bracket::zero(3), &diag(&[a, bb, c])).unwrap();
        assert!(zero.is_zero());
    }

    #[test]
    fn delta_transpose_of_zero_bracket_vanishes() {
        let v = Bracket::heisenberg(2.0);
        let t = delta_transpose(&Bracket::zero(3), &v).unwrap();
        assert_eq!(t.norm(), 0.0);
    }

    #[test]
    fn delta_transpose_matches_elementary_pairing() {
        let b = Bracket::filiform(&[1.0, 0.7]);
        let v = Bracket::from_fn(4, |i, j, k| ((i + 2 * j + 3 * k) % 5) as f64 - 2.0);
        let t = delta_transpose(&b, &v).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                let lhs = vn_inner(&delta(&b, &elementary(4, p, q)).unwrap(), &v).unwrap();
                assert!((lhs - t[(p, q)]).abs() < 1e-12, "entry ({p},{q})");
            }
        }
    }

    #[test]
    fn derivation_dimensions() {
        assert_eq!(derivation_basis(&Bracket::zero(2), DEFAULT_TOL).len(), 4);
        assert_eq!(
            derivation_basis(&Bracket::heisenberg(1.0), DEFAULT_TOL).len(),
            6
        );
        assert_eq!(
            derivation_basis(&Bracket::filiform(&[1.0, 1.0]), DEFAULT_TOL).len(),
            7
        );
    }

    #[test]
    fn derivation_basis_is_orthonormal_and_annihilated() {
        let b = Bracket::filiform(&[1.0, 2.0, -0.5]);
        let basis = derivation_basis(&b, DEFAULT_TOL);
        for (a, da) in basis.iter().enumerate() {
            assert!(delta(&b, da).unwrap().norm() < 1e-12);
            for (c, dc) in basis.iter().enumerate() {
                let expect = if a == c { 1.0 } else { 0.0 };
                assert!((gl_inner(da, dc) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn from_raw_keeps_skew_part() {
        let raw: Vec<f64> = (0..27).map(|v| v as f64).collect();
        let b = Bracket::from_raw(3, &raw);
        assert_eq!(b.skew_defect(), 0.0);
        assert_eq!(b.get(0, 1, 2), 0.5 * (raw[5] - raw[11]));
    }
}
