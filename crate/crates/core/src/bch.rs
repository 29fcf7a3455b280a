//! The nilpotent group law on ℝⁿ in exponential coordinates and the
//! left-invariant metric g_μ as explicit polynomial data.
//!
//! The product x·y = x + y + p_μ(x, y) is evaluated from Dynkin's form of
//! the Baker–Campbell–Hausdorff series. For a bracket of nilpotency degree
//! k every right-nested commutator with more than k letters vanishes, so
//! truncating at words of length k is exact. Words are evaluated once per
//! product by sharing suffixes: N(w₀w₁…) = μ(w₀, N(w₁…)).

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algebra::{nilpotency_degree, nilpotency_degree_with_tol, Bracket, Operator};
use crate::dual::{Dual, Ring};
use crate::error::{Error, Result};

/// A point of the group (ℝⁿ, ·_μ) in exponential coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPoint(pub Vec<f64>);

impl GroupPoint {
    pub fn origin(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dynkin coefficients of log(eˣeʸ) grouped by word in {x, y}.
///
/// A word w₀…w_{L−1} is encoded with letter w_p at bit p (x = 0, y = 1).
#[derive(Clone, Debug)]
pub struct BchSeries {
    depth: usize,
    coeffs: Vec<Vec<f64>>,
}

impl BchSeries {
    pub fn new(depth: usize) -> Self {
        let depth = depth.max(1);
        assert!(depth <= 20, "BCH depth {depth} is out of range");
        let mut coeffs: Vec<Vec<f64>> = (0..=depth).map(|len| vec![0.0; 1 << len]).collect();
        let factorial: Vec<f64> = (0..=depth)
            .scan(1.0, |acc, k| {
                if k > 0 {
                    *acc *= k as f64;
                }
                Some(*acc)
            })
            .collect();
        // Sum over sequences (r₁,s₁,…,r_m,s_m) with r_i + s_i ≥ 1 of
        // (−1)^{m−1}/m · [x^{r₁} y^{s₁} …] / (L · Π r_i! s_i!).
        struct Walk<'a> {
            depth: usize,
            factorial: &'a [f64],
            coeffs: &'a mut Vec<Vec<f64>>,
        }
        impl Walk<'_> {
            fn go(&mut self, word: usize, len: usize, pairs: usize, denom: f64) {
                for r in 0..=(self.depth - len) {
                    for s in 0..=(self.depth - len - r) {
                        if r + s == 0 {
                            continue;
                        }
                        let mut w = word;
                        for p in (len + r)..(len + r + s) {
                            w |= 1 << p;
                        }
                        let new_len = len + r + s;
                        let m = pairs + 1;
                        let d = denom * self.factorial[r] * self.factorial[s];
                        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                        self.coeffs[new_len][w] += sign / (m as f64 * new_len as f64 * d);
                        if new_len < self.depth {
                            self.go(w, new_len, m, d);
                        }
                    }
                }
            }
        }
        Walk {
            depth,
            factorial: &factorial,
            coeffs: &mut coeffs,
        }
        .go(0, 0, 0, 1.0);
        Self { depth, coeffs }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Coefficient of the right-nested commutator of `word` (`false` = x, `true` = y).
    pub fn coefficient(&self, word: &[bool]) -> f64 {
        if word.is_empty() || word.len() > self.depth {
            return 0.0;
        }
        let code = word
            .iter()
            .enumerate()
            .fold(0usize, |acc, (p, &y)| if y { acc | (1 << p) } else { acc });
        self.coeffs[word.len()][code]
    }

    /// x·y = Σ_w c_w [w₀, [w₁, …, w_{L−1}]] (words of length one give x + y).
    pub fn product<T: Ring>(&self, b: &Bracket, x: &[T], y: &[T]) -> Vec<T> {
        let n = b.dim();
        let mut out: Vec<T> = x.iter().zip(y).map(|(&a, &c)| a + c).collect();
        // nested[code] for the current length
        let mut nested: Vec<Vec<T>> = vec![x.to_vec(), y.to_vec()];
        for len in 2..=self.depth {
            let mut next = Vec::with_capacity(1 << len);
            for code in 0..(1usize << len) {
                let first = if code & 1 == 0 { x } else { y };
                let rest = &nested[code >> 1];
                next.push(b.apply(first, rest));
            }
            for (code, v) in next.iter().enumerate() {
                let c = self.coeffs[len][code];
                if c != 0.0 {
                    let c = T::from_f64(c);
                    for k in 0..n {
                        out[k] = out[k] + c * v[k];
                    }
                }
            }
            nested = next;
        }
        out
    }
}

/// Group law of a nilpotent bracket together with its truncated series.
#[derive(Clone, Debug)]
pub struct GroupLaw {
    bracket: Bracket,
    series: BchSeries,
}

impl GroupLaw {
    pub fn new(b: &Bracket) -> Result<Self> {
        let degree = nilpotency_degree(b)?;
        Ok(Self::with_depth(b, degree))
    }

    /// Uses the given truncation depth without checking nilpotency.
    pub fn with_depth(b: &Bracket, depth: usize) -> Self {
        Self {
            bracket: b.clone(),
            series: BchSeries::new(depth),
        }
    }

    pub fn bracket(&self) -> &Bracket {
        &self.bracket
    }

    pub fn product(&self, x: &GroupPoint, y: &GroupPoint) -> GroupPoint {
        GroupPoint(self.series.product(&self.bracket, &x.0, &y.0))
    }

    /// d/dy (z·y) at y = x, by one dual evaluation per column.
    pub fn differential_at(&self, z: &GroupPoint, x: &GroupPoint) -> Operator {
        let n = self.bracket.dim();
        let zd: Vec<Dual> = z.0.iter().map(|&v| Dual::constant(v)).collect();
        let mut j = Operator::zeros(n, n);
        for col in 0..n {
            let yd: Vec<Dual> =
                x.0.iter()
                    .enumerate()
                    .map(|(i, &v)| Dual::new(v, if i == col { 1.0 } else { 0.0 }))
                    .collect();
            let out = self.series.product(&self.bracket, &zd, &yd);
            for (row, d) in out.iter().enumerate() {
                j[(row, col)] = d.dot;
            }
        }
        j
    }

    /// dL_μ(−x)|_x, whose columns are e_i + ∂p_μ/∂y_i(−x, x).
    pub fn left_translation_differential(&self, x: &GroupPoint) -> Operator {
        self.differential_at(&x.inverse(), x)
    }

    /// (g_μ)_ij(x) = ⟨dL_μ(−x)|_x e_i, dL_μ(−x)|_x e_j⟩.
    pub fn metric_at(&self, x: &GroupPoint) -> Operator {
        let j = self.left_translation_differential(x);
        j.transpose() * j
    }
}

pub fn bch_product(b: &Bracket, x: &GroupPoint, y: &GroupPoint) -> Result<GroupPoint> {
    Ok(GroupLaw::new(b)?.product(x, y))
}

pub fn left_translation_differential(b: &Bracket, x: &GroupPoint) -> Result<Operator> {
    Ok(GroupLaw::new(b)?.left_translation_differential(x))
}

pub fn metric_at(b: &Bracket, x: &GroupPoint) -> Result<Operator> {
    Ok(GroupLaw::new(b)?.metric_at(x))
}

/// Multi-index α with x^α = Π x_i^{α_i}.
pub type MultiIndex = Vec<u32>;

/// All multi-indices in n variables with |α| ≤ degree, graded then lexicographic.
pub fn monomials(n: usize, degree: usize) -> Vec<MultiIndex> {
    fn rec(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() == n - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=left).rev() {
            prefix.push(a);
            rec(n, left - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree as u32 {
        rec(n, total, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

fn monomial_value(alpha: &[u32], x: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(x)
        .map(|(&a, &v)| v.powi(a as i32))
        .product()
}

/// Polynomial coefficients (g_μ)_ij(x) = Σ_α a_α^{ij} x^α.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    n: usize,
    degree: usize,
    terms: BTreeMap<MultiIndex, Operator>,
}

impl MetricField {
    pub fn new(n: usize, degree: usize, terms: BTreeMap<MultiIndex, Operator>) -> Self {
        Self { n, degree, terms }
    }

    pub fn constant_identity(n: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; n], Operator::identity(n, n));
        Self::new(n, 0, terms)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Upper bound on the total degree of the coefficients.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> &BTreeMap<MultiIndex, Operator> {
        &self.terms
    }

    /// Coefficient matrix of x^α (zero if absent).
    pub fn coefficient(&self, alpha: &[u32]) -> Operator {
        self.terms
            .get(alpha)
            .cloned()
            .unwrap_or_else(|| Operator::zeros(self.n, self.n))
    }

    pub fn eval(&self, x: &[f64]) -> Operator {
        let mut g = Operator::zeros(self.n, self.n);
        for (alpha, c) in &self.terms {
            g += c * monomial_value(alpha, x);
        }
        g
    }

    /// ∂^β of every coefficient polynomial.
    pub fn derivative(&self, beta: &[u32]) -> MetricField {
        let mut terms = BTreeMap::new();
        for (alpha, c) in &self.terms {
            if alpha.iter().zip(beta).any(|(a, b)| a < b) {
                continue;
            }
            let mut factor = 1.0;
            let mut reduced = alpha.clone();
            for (i, &b) in beta.iter().enumerate() {
                for t in 0..b {
                    factor *= (alpha[i] - t) as f64;
                }
                reduced[i] -= b;
            }
            terms.insert(reduced, c * factor);
        }
        let order: u32 = beta.iter().sum();
        MetricField::new(self.n, self.degree.saturating_sub(order as usize), terms)
    }

    pub fn difference(&self, other: &MetricField) -> Result<MetricField> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut terms = self.terms.clone();
        for (alpha, c) in &other.terms {
            terms
                .entry(alpha.clone())
                .and_modify(|v| *v -= c)
                .or_insert_with(|| -c);
        }
        Ok(MetricField::new(
            self.n,
            self.degree.max(other.degree),
            terms,
        ))
    }

    pub fn to_json(&self) -> MetricFieldJson {
        let mut coefficients = Vec::new();
        for (alpha, c) in &self.terms {
            for i in 0..self.n {
                for j in i..self.n {
                    let value = c[(i, j)];
                    if value != 0.0 {
                        coefficients.push(MetricCoefficient {
                            i: i + 1,
                            j: j + 1,
                            alpha: alpha.clone(),
                            value,
                        });
                    }
                }
            }
        }
        MetricFieldJson {
            n: self.n,
            degree: self.degree,
            coefficients,
        }
    }

    pub fn from_json(json: &MetricFieldJson) -> Result<Self> {
        let n = json.n;
        let mut terms: BTreeMap<MultiIndex, Operator> = BTreeMap::new();
        for c in &json.coefficients {
            if c.i == 0 || c.j == 0 || c.i > n || c.j > n || c.i > c.j || c.alpha.len() != n {
                return Err(Error::Schema(format!(
                    "metric coefficient (i={}, j={}, alpha={:?}) is out of range",
                    c.i, c.j, c.alpha
                )));
            }
            let m = terms
                .entry(c.alpha.clone())
                .or_insert_with(|| Operator::zeros(n, n));
            m[(c.i - 1, c.j - 1)] = c.value;
            m[(c.j - 1, c.i - 1)] = c.value;
        }
        Ok(Self::new(n, json.degree, terms))
    }
}

/// Serialized form of a [`MetricField`]; indices are 1-based with i ≤ j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricFieldJson {
    pub n: usize,
    pub degree: usize,
    pub coefficients: Vec<MetricCoefficient>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCoefficient {
    pub i: usize,
    pub j: usize,
    pub alpha: Vec<u32>,
    pub value: f64,
}

fn unit(n: usize, i: usize) -> MultiIndex {
    let mut a = vec![0; n];
    a[i] = 1;
    a
}

/// Closed form for k_μ ≤ 2:
/// (g_μ)_ij(x) = δ_ij − ½ Σ_k (μ_kj^i + μ_ki^j) x_k + ¼ Σ_{k,l} (Σ_r μ_ki^r μ_lj^r) x_k x_l.
pub fn metric_field_2step(b: &Bracket) -> Result<MetricField> {
    let degree = nilpotency_degree(b)?;
    if degree > 2 {
        return Err(Error::DegreeTooHigh { degree });
    }
    Ok(two_step_formula(b))
}

fn two_step_formula(b: &Bracket) -> MetricField {
    let n = b.dim();
    let mut terms = BTreeMap::new();
    terms.insert(vec![0; n], Operator::identity(n, n));
    if b.is_zero() {
        return MetricField::new(n, 0, terms);
    }
    for k in 0..n {
        let c = Operator::from_fn(n, n, |i, j| -0.5 * (b.get(k, j, i) + b.get(k, i, j)));
        terms.insert(unit(n, k), c);
    }
    let s = |k: usize, l: usize, i: usize, j: usize| -> f64 {
        (0..n).map(|r| b.get(k, i, r) * b.get(l, j, r)).sum()
    };
    for k in 0..n {
        for l in k..n {
            let c = Operator::from_fn(n, n, |i, j| {
                if k == l {
                    0.25 * s(k, k, i, j)
                } else {
                    0.25 * (s(k, l, i, j) + s(l, k, i, j))
                }
            });
            let mut alpha = vec![0; n];
            alpha[k] += 1;
            alpha[l] += 1;
            terms.insert(alpha, c);
        }
    }
    MetricField::new(n, 2, terms)
}

/// Recovers the coefficients of g_μ by interpolating [`metric_at`] on a
/// unisolvent set for total degree 2(k_μ − 1).
pub fn metric_field_fit(b: &Bracket) -> Result<MetricField> {
    let degree = nilpotency_degree(b)?;
    metric_field_fit_with_depth(b, degree)
}

/// Interpolation with an explicit nilpotency depth (polynomial degree 2(depth − 1)).
///
/// The sample set is the simplex lattice {α ∈ ℕⁿ : |α| ≤ d}, centred and
/// scaled into [−1, 1]ⁿ. Affine images of that lattice are unisolvent for
/// polynomials of total degree d, so the Vandermonde system is square and
/// nonsingular.
pub fn metric_field_fit_with_depth(b: &Bracket, depth: usize) -> Result<MetricField> {
    let n = b.dim();
    if depth <= 1 {
        return Ok(MetricField::constant_identity(n));
    }
    let d = 2 * (depth - 1);
    let law = GroupLaw::with_depth(b, depth);
    let basis = monomials(n, d);
    let centre = d as f64 / (n as f64 + 1.0);
    let scale = 2.0 / d as f64;
    let points: Vec<Vec<f64>> = basis
        .iter()
        .map(|a| a.iter().map(|&v| (v as f64 - centre) * scale).collect())
        .collect();
    let m = basis.len();
    let vandermonde = Operator::from_fn(m, m, |p, q| monomial_value(&basis[q], &points[p]));
    let npairs = n * (n + 1) / 2;
    let mut rhs = Operator::zeros(m, npairs);
    for (p, x) in points.iter().enumerate() {
        let g = law.metric_at(&GroupPoint(x.clone()));
        let mut col = 0;
        for i in 0..n {
            for j in i..n {
                rhs[(p, col)] = g[(i, j)];
                col += 1;
            }
        }
    }
    let sol = vandermonde
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularMatrix { ratio: 0.0 })?;
    let mut terms = BTreeMap::new();
    for (q, alpha) in basis.into_iter().enumerate() {
        let mut c = Operator::zeros(n, n);
        let mut col = 0;
        for i in 0..n {
            for j in i..n {
                c[(i, j)] = sol[(q, col)];
                c[(j, i)] = sol[(q, col)];
                col += 1;
            }
        }
        terms.insert(alpha, c);
    }
    Ok(MetricField::new(n, d, terms))
}

/// Polynomial field of g_μ for a bracket of known depth.
fn field_for_depth(b: &Bracket, depth: usize) -> Result<MetricField> {
    if depth <= 2 {
        Ok(two_step_formula(b))
    } else {
        metric_field_fit_with_depth(b, depth)
    }
}

/// Rank tolerance used when brackets come from numerical flows.
const FLOW_RANK_TOL: f64 = 1e-8;

/// Sample set for [`metric_convergence_distance`]: the 3ⁿ lattice {−1,0,1}ⁿ
/// scaled into the ball plus 100 seeded uniform points in the ball.
pub fn ball_samples(n: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    let lattice_scale = radius / (n as f64).sqrt();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            x.push(((c % 3) as f64 - 1.0) * lattice_scale);
            c /= 3;
        }
        pts.push(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..100 {
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let len = DVector::from_vec(dir.clone()).norm().max(f64::MIN_POSITIVE);
        let u: f64 = rand::Rng::random(&mut rng);
        let r = radius * u.powf(1.0 / n as f64);
        pts.push(dir.iter().map(|v| v * r / len).collect());
    }
    pts
}

/// sup over the sample set in the ball of the given radius and over all
/// derivative orders |β| ≤ p (including β = 0) of |∂^β(g_{b1} − g_{b2})_ij|.
pub fn metric_convergence_distance(
    b1: &Bracket,
    b2: &Bracket,
    radius: f64,
    p: usize,
) -> Result<f64> {
    let n = b1.dim();
    if b2.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b2.dim(),
        });
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::Schema(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let depth = nilpotency_degree_with_tol(b1, FLOW_RANK_TOL)?
        .max(nilpotency_degree_with_tol(b2, FLOW_RANK_TOL)?);
    let diff = field_for_depth(b1, depth)?.difference(&field_for_depth(b2, depth)?)?;
    let points = ball_samples(n, radius);
    let mut worst = 0.0f64;
    for beta in monomials(n, p) {
        let dfield = diff.derivative(&beta);
        if dfield.terms.values().all(|c| c.amax() == 0.0) {
            continue;
        }
        for x in &points {
            worst = worst.max(dfield.eval(x).amax());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(v: &[f64]) -> GroupPoint {
        GroupPoint(v.to_vec())
    }

    #[test]
    fn low_order_dynkin_coefficients() {
        let s = BchSeries::new(4);
        let (x, y) = (false, true);
        // log(eˣeʸ) = x + y + ½[x,y] + 1/12[x,[x,y]] − 1/12[y,[x,y]] − 1/24[y,[x,[x,y]]] + …
        // Per-word coefficients are not unique (Jacobi), but antisymmetrized
        // pairs must combine to the classical values.
        assert!((s.coefficient(&[x]) - 1.0).abs() < 1e-15);
        assert!((s.coefficient(&[y]) - 1.0).abs() < 1e-15);
        let c2 = s.coefficient(&[x, y]) - s.coefficient(&[y, x]);
        assert!((c2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn abelian_product_is_addition() {
        let z = Bracket::zero(3);
        let p = bch_product(&z, &pt(&[1.0, 2.0, 3.0]), &pt(&[-0.5, 0.5, 4.0])).unwrap();
        assert_eq!(p.0, vec![0.5, 2.5, 7.0]);
    }

    #[test]
    fn heisenberg_product() {
        let h = Bracket::heisenberg(1.0);
        let (a, b, a2, b2) = (0.7, -1.3, 2.1, 0.4);
        let p = bch_product(&h, &pt(&[a, b, 0.0]), &pt(&[a2, b2, 0.0])).unwrap();
        let expect = [a + a2, b + b2, 0.5 * (a * b2 - b * a2)];
        for (u, v) in p.0.iter().zip(expect) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_and_inverse() {
        let f = Bracket::filiform(&[1.0, 1.0]);
        let law = GroupLaw::new(&f).unwrap();
        let x = pt(&[0.3, -1.2, 0.8, 2.0]);
        let o = GroupPoint::origin(4);
        assert_eq!(law.product(&o, &x), x);
        assert_eq!(law.product(&x, &o), x);
        let inv = law.product(&x, &x.inverse());
        assert!(inv.0.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn non_nilpotent_bracket_has_no_group_law() {
        let b = Bracket::from_entries(2, &[(0, 1, 0, 1.0)]);
        assert!(matches!(
            bch_product(&b, &GroupPoint::origin(2), &GroupPoint::origin(2)),
            Err(Error::NotNilpotent { .. })
        ));
    }

    #[test]
    fn heisenberg_metric_closed_form() {
        let h = Bracket::heisenberg(1.0);
        let (x1, x2, x3) = (0.6, -1.4, 2.2);
        let g = metric_at(&h, &pt(&[x1, x2, x3])).unwrap();
        let expect = Operator::from_row_slice(
            3,
            3,
            &[
                1.0 + x2 * x2 / 4.0,
                -x1 * x2 / 4.0,
                x2 / 2.0,
                -x1 * x2 / 4.0,
                1.0 + x1 * x1 / 4.0,
                -x1 / 2.0,
                x2 / 2.0,
                -x1 / 2.0,
                1.0,
            ],
        );
        assert!((g - expect).amax() < 1e-15);
    }

    #[test]
    fn zero_bracket_metric_is_flat() {
        let z = Bracket::zero(3);
        assert_eq!(
            metric_at(&z, &pt(&[1.0, -2.0, 3.0])).unwrap(),
            Operator::identity(3, 3)
        );
        assert_eq!(
            left_translation_differential(&z, &pt(&[1.0, -2.0, 3.0])).unwrap(),
            Operator::identity(3, 3)
        );
        let field = metric_field_2step(&z).unwrap();
        assert_eq!(field.eval(&[4.0, 5.0, 6.0]), Operator::identity(3, 3));
        let fit = metric_field_fit(&z).unwrap();
        assert_eq!(fit.terms().len(), 1);
    }

    #[test]
    fn differential_matches_central_differences() {
        let f = Bracket::filiform(&[1.0, -0.6]);
        let law = GroupLaw::new(&f).unwrap();
        let x = pt(&[0.4, 1.1, -0.3, 0.9]);
        let j = law.left_translation_differential(&x);
        let h = 1e-6;
        for col in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.0[col] += h;
            xm.0[col] -= h;
            let fp = law.product(&x.inverse(), &xp);
            let fm = law.product(&x.inverse(), &xm);
            for row in 0..4 {
                let fd = (fp.0[row] - fm.0[row]) / (2.0 * h);
                assert!((fd - j[(row, col)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn two_step_requires_degree_two() {
        assert!(matches!(
            metric_field_2step(&Bracket::filiform(&[1.0, 1.0])),
            Err(Error::DegreeTooHigh { degree: 3 })
        ));
    }

    #[test]
    fn heisenberg_field_coefficients() {
        let f = metric_field_2step(&Bracket::heisenberg(1.0)).unwrap();
        // g13 = x2/2, g23 = −x1/2, g11 = 1 + x2²/4, g12 = −x1x2/4
        assert!((f.coefficient(&[0, 1, 0])[(0, 2)] - 0.5).abs() < 1e-15);
        assert!((f.coefficient(&[1, 0, 0])[(1, 2)] + 0.5).abs() < 1e-15);
        assert!((f.coefficient(&[0, 2, 0])[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((f.coefficient(&[1, 1, 0])[(0, 1)] + 0.25).abs() < 1e-15);
        assert_eq!(f.coefficient(&[0, 0, 0]), Operator::identity(3, 3));
    }

    #[test]
    fn fitted_linear_coefficients() {
        let f = Bracket::filiform(&[1.0, 2.0]);
        let field = metric_field_fit(&f).unwrap();
        assert_eq!(field.degree(), 4);
        for r in 0..4 {
            let c = field.coefficient(&unit(4, r));
            for i in 0..4 {
                for j in 0..4 {
                    let expect = -0.5 * (f.get(r, j, i) + f.get(r, i, j));
                    assert!((c[(i, j)] - expect).abs() < 1e-10);
                }
            }
        }
        assert!((field.coefficient(&[0, 0, 0, 0]) - Operator::identity(4, 4)).amax() < 1e-10);
        // field reproduces the pipeline away from the sample set
        let x = [0.37, -0.81, 0.55, 1.2];
        let direct = metric_at(&f, &pt(&x)).unwrap();
        assert!((field.eval(&x) - direct).amax() < 1e-9);
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(3, 2).len(), 10);
        assert_eq!(monomials(4, 4).len(), 70);
        assert_eq!(monomials(2, 0), vec![vec![0, 0]]);
    }

    #[test]
    fn derivative_of_field() {
        let f = metric_field_2step(&Bracket::heisenberg(1.0)).unwrap();
        let d = f.derivative(&[0, 2, 0]);
        // ∂²/∂x2² g11 = 1/2
        assert!((d.eval(&[3.0, 4.0, 5.0])[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let f = metric_field_2step(&Bracket::heisenberg(1.5)).unwrap();
        let json = serde_json::to_string(&f.to_json()).unwrap();
        let back = MetricField::from_json(&serde_json::from_str(&json).unwrap()).unwrap();
        let x = [0.2, -0.9, 1.4];
        assert!((back.eval(&x) - f.eval(&x)).amax() < 1e-15);
    }

    #[test]
    fn distance_to_self_is_zero() {
        let h = Bracket::heisenberg(1.0);
        assert_eq!(metric_convergence_distance(&h, &h, 2.0, 2).unwrap(), 0.0);
        assert!(matches!(
            metric_convergence_distance(&h, &Bracket::zero(4), 2.0, 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
