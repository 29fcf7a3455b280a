//! Curvature of the left-invariant metric g_μ at the origin.
//!
//! Everything here is an algebraic function of the structure constants:
//! the Ricci operator, scalar curvature, the (0,4) curvature tensor, the
//! functional F(μ) = tr Ric_μ² with its gradient, the Laplacian
//! Δ_μ = S ∘ δ_μᵗ δ_μ and the moment map 4 Ric_μ / ‖μ‖².

use nalgebra::SymmetricEigen;
use rand::Rng;
use serde::Serialize;

use crate::algebra::{delta, delta_transpose, Bracket, Operator, VTangent};
use crate::error::{Error, Result};
use crate::sample::random_nilpotent;

/// Symmetry tolerance for Ricci operators of unit-scale brackets.
pub const TAU_SYM: f64 = 1e-10;

/// Ric_μ = −½ Σ (ad e_i)ᵗ ad e_i + ¼ Σ ad e_i (ad e_i)ᵗ, entrywise
/// Ric_pq = −½ Σ_{j,k} μ_pj^k μ_qj^k + ¼ Σ_{i,j} μ_ij^p μ_ij^q.
///
/// Defined on all of V_n, not only on Lie brackets.
pub fn ricci_operator(b: &Bracket) -> Operator {
    let n = b.dim();
    let mut ric = Operator::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s -= 0.5 * b.get(p, j, k) * b.get(q, j, k);
                    s += 0.25 * b.get(j, k, p) * b.get(j, k, q);
                }
            }
            ric[(p, q)] = s;
            ric[(q, p)] = s;
        }
    }
    ric
}

/// scal_μ = −¼‖μ‖².
pub fn scalar_curvature(b: &Bracket) -> f64 {
    -0.25 * b.norm_squared()
}

/// Ricci operator together with its trace and norm.
#[derive(Clone, Debug, Serialize)]
pub struct CurvaturePack {
    #[serde(serialize_with = "crate::io::serialize_matrix")]
    pub ric: Operator,
    pub scal: f64,
    /// ‖ric_μ‖ = sqrt(tr Ric_μ²).
    pub ric_norm: f64,
}

impl CurvaturePack {
    pub fn new(b: &Bracket) -> Self {
        let ric = ricci_operator(b);
        let ric_norm = ric.norm();
        Self {
            ric,
            scal: scalar_curvature(b),
            ric_norm,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (&self.ric - self.ric.transpose()).amax() <= TAU_SYM * self.ric.amax().max(1.0)
    }
}

/// Eigenvalues of Ric_μ in ascending order.
pub fn ricci_spectrum(b: &Bracket) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(ricci_operator(b))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// (has a positive Ricci direction, has a negative Ricci direction).
pub fn ricci_sign_check(b: &Bracket) -> (bool, bool) {
    let scale = b.norm_squared();
    if scale == 0.0 {
        return (false, false);
    }
    let ev = ricci_spectrum(b);
    let thresh = 1e-12 * scale;
    (
        ev.iter().any(|&l| l > thresh),
        ev.iter().any(|&l| l < -thresh),
    )
}

/// F(μ) = tr Ric_μ².
pub fn ricci_energy(b: &Bracket) -> f64 {
    let ric = ricci_operator(b);
    ric.dot(&ric)
}

/// grad F at μ, which is −δ_μ(Ric_μ).
pub fn ricci_energy_gradient(b: &Bracket) -> VTangent {
    delta(b, &ricci_operator(b))
        .expect("Ricci operator has the bracket's dimension")
        .scaled(-1.0)
}

/// Differential of μ ↦ Ric_μ along v. Ric is quadratic, so the
/// polarization (Ric(μ+v) − Ric(μ−v))/2 is exact.
pub fn ricci_derivative(b: &Bracket, v: &VTangent) -> Result<Operator> {
    let plus = ricci_operator(&b.add(v)?);
    let minus = ricci_operator(&b.sub(v)?);
    Ok((plus - minus) * 0.5)
}

/// Δ_μ(α) = S(δ_μᵗ δ_μ(α)) with S(α) = (α + αᵗ)/2.
pub fn laplacian(b: &Bracket, alpha: &Operator) -> Result<Operator> {
    let t = delta_transpose(b, &delta(b, alpha)?)?;
    Ok((&t + t.transpose()) * 0.5)
}

/// m(μ) = 4 Ric_μ / ‖μ‖².
pub fn moment_map(b: &Bracket) -> Result<Operator> {
    let ns = b.norm_squared();
    if ns == 0.0 {
        return Err(Error::ZeroBracket);
    }
    Ok(ricci_operator(b) * (4.0 / ns))
}

/// Curvature tensor of g_μ at the origin in the canonical orthonormal basis.
///
/// `R_abcd = ⟨R(e_a, e_b) e_d, e_c⟩` with `R(x, y) = ∇_x∇_y − ∇_y∇_x − ∇_{μ(x,y)}`,
/// so that `Σ_k R_ikjk = ric_ij`.
#[derive(Clone, Debug)]
pub struct RiemannTensor {
    n: usize,
    entries: Vec<f64>,
    pub norm: f64,
}

impl RiemannTensor {
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let n = self.n;
        self.entries[((a * n + b) * n + c) * n + d]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Σ_k R_ikjk.
    pub fn ricci_contraction(&self) -> Operator {
        let n = self.n;
        Operator::from_fn(n, n, |i, j| (0..n).map(|k| self.get(i, k, j, k)).sum())
    }

    /// Largest violation of the skew, pair and first Bianchi symmetries.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let r = self.get(a, b, c, d);
                        worst = worst
                            .max((r + self.get(b, a, c, d)).abs())
                            .max((r + self.get(a, b, d, c)).abs())
                            .max((r - self.get(c, d, a, b)).abs())
                            .max((r + self.get(b, c, a, d) + self.get(c, a, b, d)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Levi-Civita connection operators Γ_r = ∇_{e_r} on left-invariant fields,
/// from the Koszul formula
/// ⟨∇_{e_r} e_j, e_i⟩ = ½(μ_rj^i − μ_ji^r + μ_ir^j).
pub fn connection_operators(b: &Bracket) -> Vec<Operator> {
    let n = b.dim();
    (0..n)
        .map(|r| {
            Operator::from_fn(n, n, |i, j| {
                0.5 * (b.get(r, j, i) - b.get(j, i, r) + b.get(i, r, j))
            })
        })
        .collect()
}

pub fn riemann_at_origin(b: &Bracket) -> RiemannTensor {
    let n = b.dim();
    let gamma = connection_operators(b);
    let mut entries = vec![0.0; n * n * n * n];
    for a in 0..n {
        for bb in 0..n {
            let mut r = &gamma[a] * &gamma[bb] - &gamma[bb] * &gamma[a];
            for (c, g) in gamma.iter().enumerate() {
                let w = b.get(a, bb, c);
                if w != 0.0 {
                    r -= g * w;
                }
            }
            // R(e_a, e_b) e_d has component c at r[(c, d)].
            for c in 0..n {
                for d in 0..n {
                    entries[((a * n + bb) * n + c) * n + d] = r[(c, d)];
                }
            }
        }
    }
    let norm = entries.iter().map(|v| v * v).sum::<f64>().sqrt();
    RiemannTensor { n, entries, norm }
}

/// Sampled lower estimate of max ‖Riem_λ‖ over unit-norm nilpotent λ.
/// This is only an estimate of the dimension constant; it is never asserted
/// as a sharp value.
pub fn estimate_riemann_sphere_max<R: Rng + ?Sized>(n: usize, samples: usize, rng: &mut R) -> f64 {
    (0..samples)
        .map(|_| riemann_at_origin(&random_nilpotent(n, rng)).norm)
        .fold(0.0, f64::max)
}
