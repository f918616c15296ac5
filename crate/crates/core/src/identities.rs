//! Pointwise identity checks on `H^n` at random points and half-spaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::group::{left_translation_jacobian_det, GroupError, GroupSpec};
use crate::hcalc::{
    distance_field, identity_xi_pairing, orthogonality_identity, p_sub_laplacian, AxisBox,
    CalcError, DistanceCalculus, HalfSpace,
};
use crate::polyfield::Polynomial;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub group: String,
    pub samples: usize,
    pub max_residual: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &str, group: &str, samples: usize, max_residual: f64, threshold: f64) -> Self {
        IdentityCheck {
            name: name.to_string(),
            group: group.to_string(),
            samples,
            max_residual,
            threshold,
            passed: max_residual.is_finite() && max_residual <= threshold,
        }
    }
}

/// Thresholds used by [`identity_suite`].
pub const PAIRING_TOL: f64 = 1e-6;
pub const LAPLACIAN_FD_TOL: f64 = 1e-4;
pub const ORTHOGONALITY_TOL: f64 = 1e-12;
pub const JACOBIAN_TOL: f64 = 1e-10;

fn random_half_space(rng: &mut ChaCha8Rng, dim: usize) -> HalfSpace {
    loop {
        let nu: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(hs) = HalfSpace::new(nu, rng.random_range(-1.0..1.0)) {
            return hs;
        }
    }
}

/// Runs every identity on `H^n` at `points` random points in `[-2, 2]^{2n+1}`,
/// each paired with a random half-space.
///
/// Checks, in order: pairing `<X_i, nu> = X_i <x, nu>` (finite differences),
/// exact vanishing of `L_p dist` as a polynomial, finite-difference `L_p dist`
/// for `p = 2, 3`, the orthogonality identity, the commutator table, and the
/// unit Jacobian of left translations.
pub fn identity_suite(
    n: usize,
    points: usize,
    seed: u64,
    h: f64,
) -> Result<Vec<IdentityCheck>, CalcError> {
    let spec = GroupSpec::heisenberg(n)?;
    let name = spec.name().to_string();
    let dim = 2 * n + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let everywhere = AxisBox::cube(dim, f64::NEG_INFINITY, f64::INFINITY);

    let mut pairing = 0.0f64;
    let mut exact_nonzero = 0usize;
    let mut fd = [0.0f64; 2];
    let mut orth = 0.0f64;
    let mut jac = 0.0f64;
    for _ in 0..points {
        let hs = random_half_space(&mut rng, dim);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        pairing = pairing.max(identity_xi_pairing(&spec, &hs, &x, h)?);
        if !DistanceCalculus::new(&spec, &hs)?.is_p_harmonic() {
            exact_nonzero += 1;
        }
        let dist = distance_field(&hs, everywhere.clone(), false);
        for (slot, p) in [2.0, 3.0].into_iter().enumerate() {
            fd[slot] = fd[slot].max(p_sub_laplacian(&spec, &dist, &x, p, h)?.abs());
        }
        orth = orth.max(orthogonality_identity(n, &hs, &x)?.abs());
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let det = left_translation_jacobian_det(&a, &x, n, 1e-3)?;
        jac = jac.max((det - 1.0).abs());
    }

    let commutator = commutator_table_defect(&spec, n)?;
    Ok(vec![
        IdentityCheck::new("pairing", &name, points, pairing, PAIRING_TOL),
        IdentityCheck::new(
            "p-laplacian-exact",
            &name,
            points,
            exact_nonzero as f64,
            0.0,
        ),
        IdentityCheck::new("p-laplacian-fd-p2", &name, points, fd[0], LAPLACIAN_FD_TOL),
        IdentityCheck::new("p-laplacian-fd-p3", &name, points, fd[1], LAPLACIAN_FD_TOL),
        IdentityCheck::new("orthogonality", &name, points, orth, ORTHOGONALITY_TOL),
        IdentityCheck::new("commutators", &name, 2 * n * 2 * n, commutator, 0.0),
        IdentityCheck::new("haar-jacobian", &name, points, jac, JACOBIAN_TOL),
    ])
}

/// Number of entries of the commutator table that differ from
/// `[X_i, Y_j] = -4 delta_ij d/dt`, `[X_i, X_j] = [Y_i, Y_j] = 0`.
pub fn commutator_table_defect(spec: &GroupSpec, n: usize) -> Result<f64, GroupError> {
    let dim = 2 * n + 1;
    let t_only = |c: f64| -> Vec<Polynomial> {
        (0..dim)
            .map(|m| {
                if m == 2 * n {
                    Polynomial::constant(dim, c)
                } else {
                    Polynomial::zero(dim)
                }
            })
            .collect()
    };
    let mut defects = 0usize;
    for a in 0..2 * n {
        for b in 0..2 * n {
            let expected = if a < n && b == a + n {
                t_only(-4.0)
            } else if b < n && a == b + n {
                t_only(4.0)
            } else {
                t_only(0.0)
            };
            if spec.field_commutator(a, b)? != expected {
                defects += 1;
            }
        }
    }
    Ok(defects as f64)
}
