//! Random nilpotent brackets and matrices for tests, sweeps and property checks.
//!
//! Uniform sampling of the nilpotent variety is not available, so we draw
//! from explicit families: 2-step brackets Λ²ℝ^m → ℝ^{n−m} (Jacobi holds
//! because the image is central), model filiform brackets with random
//! constants, and GL(n)-pushes of either.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::algebra::{gl_action, inverse_condition, Bracket, Operator};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Random 2-step bracket on ℝⁿ (n ≥ 3) with generating subspace of
/// dimension m drawn from 2..=n−1.
pub fn random_two_step<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Bracket {
    assert!(n >= 3, "2-step brackets need n >= 3");
    let m = rng.random_range(2..n);
    random_two_step_with_split(n, m, rng)
}

/// Random μ: Λ²ℝ^m → ℝ^{n−m} with standard normal entries.
pub fn random_two_step_with_split<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Bracket {
    assert!(m >= 2 && m < n, "need 2 <= m < n");
    let mut b = Bracket::zero(n);
    for i in 0..m {
        for j in (i + 1)..m {
            for k in m..n {
                b.set(i, j, k, normal(rng));
            }
        }
    }
    b
}

/// Model filiform bracket with constants drawn from ±[0.5, 1.5].
pub fn random_filiform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Bracket {
    assert!(n >= 3, "filiform brackets need n >= 3");
    let constants: Vec<f64> = (0..n - 2)
        .map(|_| {
            let mag = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Bracket::filiform(&constants)
}

/// Gaussian matrix with inverse condition at least 1e-3 (resampled otherwise).
pub fn random_gl<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Operator {
    loop {
        let g = DMatrix::from_fn(n, n, |_, _| normal(rng));
        if inverse_condition(&g) > 1e-3 {
            return g;
        }
    }
}

/// I + eps·G with G standard normal.
pub fn random_near_identity<R: Rng + ?Sized>(n: usize, eps: f64, rng: &mut R) -> Operator {
    Operator::identity(n, n) + DMatrix::from_fn(n, n, |_, _| eps * normal(rng))
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with
/// signs fixed so the distribution is Haar.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Operator {
    let g = DMatrix::from_fn(n, n, |_, _| normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// Random VTangent with standard normal canonical entries.
pub fn random_tangent<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Bracket {
    Bracket::from_fn(n, |_, _, _| normal(rng))
}

/// Mixture used by property tests and sweeps: a 2-step or filiform bracket
/// (n ≥ 3), pushed by a random GL(n) element half of the time, scaled to
/// unit norm.
pub fn random_nilpotent<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Bracket {
    let base = if n >= 4 && rng.random_bool(0.3) {
        random_filiform(n, rng)
    } else {
        random_two_step(n, rng)
    };
    let pushed = if rng.random_bool(0.5) {
        gl_action(&random_gl(n, rng), &base).expect("well-conditioned by construction")
    } else {
        base
    };
    let norm = pushed.norm();
    if norm == 0.0 {
        pushed
    } else {
        pushed.scaled(1.0 / norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{nilpotency_degree, validate_bracket, DEFAULT_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_nilpotent_lie_brackets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 3..=7 {
            for _ in 0..10 {
                let b = random_nilpotent(n, &mut rng);
                let r = validate_bracket(&b, DEFAULT_TOL);
                assert!(r.jacobi_ok, "{:?}", r.messages);
                assert!(r.nilpotent, "{:?}", r.messages);
                assert!((b.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn filiform_samples_have_maximal_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 3..=8 {
            assert_eq!(
                nilpotency_degree(&random_filiform(n, &mut rng)).unwrap(),
                n - 1
            );
        }
    }

    #[test]
    fn orthogonal_samples_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(5, &mut rng);
        assert!((q.transpose() * &q - Operator::identity(5, 5)).norm() < 1e-12);
    }
}
