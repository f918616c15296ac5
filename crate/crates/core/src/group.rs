//! Stratified group structures described by their horizontal vector fields.
//!
//! A group is given by its strata dimensions `[N_1, ..., N_r]` and, for each
//! horizontal index `k` and each coordinate of strata `2..=r`, a polynomial
//! coefficient `a_{k,m}^{(l)}` so that
//!
//! ```text
//! X_k = d/dx'_k + sum_{l=2}^{r} sum_{m=1}^{N_l} a_{k,m}^{(l)}(x', ..., x^{(l-1)}) d/dx^{(l)}_m
//! ```
//!
//! Coordinates are laid out stratum by stratum. Only the Heisenberg group
//! carries an explicit group law here; everything the half-space computations
//! need comes from the coefficient table. Construction checks that each
//! coefficient depends only on lower strata. Nothing beyond that is checked, so
//! a custom table is not guaranteed to come from an actual group.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polyfield::{PolyError, Polynomial};

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("invalid group parameter: {0}")]
    InvalidParameter(String),
    #[error("point has {found} coordinates, group dimension is {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(
        "coefficient of X_{field} on stratum {stratum} slot {slot} depends on stratum >= {stratum}"
    )]
    StratumDependency {
        field: usize,
        stratum: usize,
        slot: usize,
    },
    #[error("unsupported for this group: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(
        "unknown group name '{0}' (expected heisenberg:<n>, abelian:<n> or a definition file)"
    )]
    UnknownName(String),
    #[error("reading group definition: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing group definition: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Heisenberg { n: usize },
    Abelian { n: usize },
    Custom,
}

#[derive(Debug, Clone)]
pub struct GroupSpec {
    name: String,
    kind: GroupKind,
    strata: Vec<usize>,
    // coeffs[k][j]: coefficient of X_k on coordinate N + j (all higher-strata coordinates)
    coeffs: Vec<Vec<Polynomial>>,
}

impl GroupSpec {
    /// Builds a group from strata dimensions and a dense coefficient table
    /// `coeffs[k][j]`, where `j` runs over the coordinates of strata `2..=r`.
    pub fn from_table(
        name: impl Into<String>,
        strata: Vec<usize>,
        coeffs: Vec<Vec<Polynomial>>,
    ) -> Result<Self, GroupError> {
        Self::build(name.into(), GroupKind::Custom, strata, coeffs)
    }

    fn build(
        name: String,
        kind: GroupKind,
        strata: Vec<usize>,
        coeffs: Vec<Vec<Polynomial>>,
    ) -> Result<Self, GroupError> {
        if strata.is_empty() || strata.contains(&0) {
            return Err(GroupError::InvalidParameter(format!(
                "strata dimensions must be nonempty and positive, got {strata:?}"
            )));
        }
        let total: usize = strata.iter().sum();
        let horizontal = strata[0];
        if coeffs.len() != horizontal {
            return Err(GroupError::InvalidParameter(format!(
                "coefficient table has {} rows, expected {horizontal}",
                coeffs.len()
            )));
        }
        for (k, row) in coeffs.iter().enumerate() {
            if row.len() != total - horizontal {
                return Err(GroupError::InvalidParameter(format!(
                    "row {} of the coefficient table has {} entries, expected {}",
                    k + 1,
                    row.len(),
                    total - horizontal
                )));
            }
            let mut offset = horizontal;
            for (l, &dim) in strata.iter().enumerate().skip(1) {
                for m in 0..dim {
                    let p = &row[offset - horizontal + m];
                    if p.nvars() != total {
                        return Err(PolyError::DimensionMismatch {
                            expected: total,
                            found: p.nvars(),
                        }
                        .into());
                    }
                    if !p.independent_of_vars_from(offset) {
                        return Err(GroupError::StratumDependency {
                            field: k + 1,
                            stratum: l + 1,
                            slot: m + 1,
                        });
                    }
                }
                offset += dim;
            }
        }
        Ok(GroupSpec {
            name,
            kind,
            strata,
            coeffs,
        })
    }

    /// Heisenberg group `H^n` with `X_i = d/dx_i + 2y_i d/dt`, `Y_i = d/dy_i - 2x_i d/dt`.
    /// Coordinates are `(x_1..x_n, y_1..y_n, t)`.
    pub fn heisenberg(n: usize) -> Result<Self, GroupError> {
        if n < 1 {
            return Err(GroupError::InvalidParameter(
                "Heisenberg group needs n >= 1".into(),
            ));
        }
        let dim = 2 * n + 1;
        let mut coeffs = Vec::with_capacity(2 * n);
        for i in 0..n {
            coeffs.push(vec![Polynomial::var(dim, n + i)?.scale(2.0)]);
        }
        for i in 0..n {
            coeffs.push(vec![Polynomial::var(dim, i)?.scale(-2.0)]);
        }
        Self::build(
            format!("heisenberg:{n}"),
            GroupKind::Heisenberg { n },
            vec![2 * n, 1],
            coeffs,
        )
    }

    /// Euclidean `R^n` as a step-one group: `X_k = d/dx_k`.
    pub fn abelian(n: usize) -> Result<Self, GroupError> {
        if n < 1 {
            return Err(GroupError::InvalidParameter(
                "abelian group needs n >= 1".into(),
            ));
        }
        Self::build(
            format!("abelian:{n}"),
            GroupKind::Abelian { n },
            vec![n],
            vec![Vec::new(); n],
        )
    }

    /// Resolves `heisenberg:<n>`, `abelian:<n>`, or a path to a JSON definition file.
    pub fn from_name(name: &str) -> Result<Self, GroupError> {
        if let Some((family, arg)) = name.split_once(':') {
            let parse_n = || {
                arg.trim()
                    .parse::<usize>()
                    .map_err(|_| GroupError::UnknownName(name.to_string()))
            };
            match family.trim() {
                "heisenberg" => return Self::heisenberg(parse_n()?),
                "abelian" => return Self::abelian(parse_n()?),
                _ => {}
            }
        }
        let path = Path::new(name);
        if path.exists() {
            return GroupDefinition::from_file(path)?.into_spec();
        }
        Err(GroupError::UnknownName(name.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn step(&self) -> usize {
        self.strata.len()
    }

    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    /// Number of horizontal fields `N = N_1`.
    pub fn horizontal_dim(&self) -> usize {
        self.strata[0]
    }

    pub fn total_dim(&self) -> usize {
        self.strata.iter().sum()
    }

    /// `Q = sum_l l * N_l`.
    pub fn homogeneous_dim(&self) -> usize {
        self.strata
            .iter()
            .enumerate()
            .map(|(l, &d)| (l + 1) * d)
            .sum()
    }

    /// Stratum (1-based) of each coordinate.
    pub fn coordinate_strata(&self) -> Vec<usize> {
        self.strata
            .iter()
            .enumerate()
            .flat_map(|(l, &d)| std::iter::repeat_n(l + 1, d))
            .collect()
    }

    /// Coefficients of `X_k` (0-based) on the coordinates of strata `2..=r`.
    pub fn higher_coefficients(&self, k: usize) -> &[Polynomial] {
        &self.coeffs[k]
    }

    /// Full coefficient vector of `X_k` as a first-order operator on all coordinates.
    pub fn field(&self, k: usize) -> Vec<Polynomial> {
        let total = self.total_dim();
        let mut out: Vec<Polynomial> = (0..self.horizontal_dim())
            .map(|j| Polynomial::constant(total, if j == k { 1.0 } else { 0.0 }))
            .collect();
        out.extend(self.coeffs[k].iter().cloned());
        out
    }

    /// Evaluates the coefficient vector of `X_k` at `x` into `out` (length `total_dim`).
    pub fn field_at(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let n1 = self.horizontal_dim();
        out[..n1].fill(0.0);
        out[k] = 1.0;
        for (o, p) in out[n1..].iter_mut().zip(&self.coeffs[k]) {
            *o = p.eval_unchecked(x);
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<(), GroupError> {
        if x.len() != self.total_dim() {
            return Err(GroupError::DimensionMismatch {
                expected: self.total_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Applies `X_k` (0-based) exactly to a polynomial.
    pub fn apply_field_poly(&self, k: usize, f: &Polynomial) -> Result<Polynomial, GroupError> {
        let n1 = self.horizontal_dim();
        let mut out = f.partial(k)?;
        for (j, a) in self.coeffs[k].iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            let term = a.checked_mul(&f.partial(n1 + j)?)?;
            out = out.checked_add(&term)?;
        }
        Ok(out)
    }

    /// Coefficient vector of the commutator `[X_a, X_b]` (0-based horizontal indices),
    /// computed exactly: `[A, B]_m = A(b_m) - B(a_m)`.
    pub fn field_commutator(&self, a: usize, b: usize) -> Result<Vec<Polynomial>, GroupError> {
        let n1 = self.horizontal_dim();
        if a >= n1 || b >= n1 {
            return Err(GroupError::InvalidParameter(format!(
                "horizontal index out of range 0..{n1}"
            )));
        }
        let fa = self.field(a);
        let fb = self.field(b);
        fa.iter()
            .zip(&fb)
            .map(|(am, bm)| {
                Ok(self
                    .apply_field_poly(a, bm)?
                    .checked_sub(&self.apply_field_poly(b, am)?)?)
            })
            .collect()
    }

    /// Dilation `delta_lambda`: stratum `l` scales by `lambda^l`.
    pub fn dilate(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>, GroupError> {
        if !(lambda > 0.0) {
            return Err(GroupError::InvalidParameter(format!(
                "dilation factor must be positive, got {lambda}"
            )));
        }
        self.check_point(x)?;
        Ok(x.iter()
            .zip(self.coordinate_strata())
            .map(|(&v, l)| v * lambda.powi(l as i32))
            .collect())
    }

    fn heisenberg_n(&self) -> Result<usize, GroupError> {
        match self.kind {
            GroupKind::Heisenberg { n } => Ok(n),
            _ => Err(GroupError::Unsupported(format!(
                "{} is not a Heisenberg group",
                self.name
            ))),
        }
    }

    /// `[X_i, Y_j]` on `H^n` with 1-based `i, j`.
    pub fn heisenberg_commutator(&self, i: usize, j: usize) -> Result<Vec<Polynomial>, GroupError> {
        let n = self.heisenberg_n()?;
        if i < 1 || i > n || j < 1 || j > n {
            return Err(GroupError::InvalidParameter(format!(
                "indices ({i}, {j}) out of range 1..={n}"
            )));
        }
        self.field_commutator(i - 1, n + j - 1)
    }
}

/// Heisenberg group law on `H^n`:
/// `(x, y, t) o (x~, y~, t~) = (x + x~, y + y~, t + t~ + 2 sum_i (x~_i y_i - x_i y~_i))`.
pub fn h_multiply(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>, GroupError> {
    let dim = 2 * n + 1;
    for p in [a, b] {
        if p.len() != dim {
            return Err(GroupError::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
    }
    let mut out: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + v).collect();
    let twist: f64 = (0..n).map(|i| b[i] * a[n + i] - a[i] * b[n + i]).sum();
    out[2 * n] += 2.0 * twist;
    Ok(out)
}

/// Determinant of the Jacobian of `b -> a o b` at `b`, by central differences with step `h`.
pub fn left_translation_jacobian_det(
    a: &[f64],
    b: &[f64],
    n: usize,
    h: f64,
) -> Result<f64, GroupError> {
    let dim = 2 * n + 1;
    let mut jac = vec![vec![0.0; dim]; dim];
    let mut bp = b.to_vec();
    for j in 0..dim {
        bp[j] = b[j] + h;
        let plus = h_multiply(a, &bp, n)?;
        bp[j] = b[j] - h;
        let minus = h_multiply(a, &bp, n)?;
        bp[j] = b[j];
        for i in 0..dim {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(determinant(jac))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub(crate) fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let pivot = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap_or(c);
        if m[pivot][c] == 0.0 {
            return 0.0;
        }
        if pivot != c {
            m.swap(pivot, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

/// On-disk group definition.
///
/// ```json
/// { "name": "engel", "strata": [2, 1, 1],
///   "coefficients": [ { "field": 2, "stratum": 2, "slot": 1, "poly": "x1" } ] }
/// ```
///
/// `field`, `stratum` and `slot` are 1-based; entries not listed are zero.
/// Polynomials use the `x1..xn` notation over all coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupDefinition {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub step: Option<usize>,
    pub strata: Vec<usize>,
    #[serde(default)]
    pub coefficients: Vec<CoefficientEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub field: usize,
    pub stratum: usize,
    pub slot: usize,
    pub poly: String,
}

impl GroupDefinition {
    pub fn from_file(path: &Path) -> Result<Self, GroupError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_spec(self) -> Result<GroupSpec, GroupError> {
        if let Some(step) = self.step {
            if step != self.strata.len() {
                return Err(GroupError::InvalidParameter(format!(
                    "step {step} disagrees with {} strata",
                    self.strata.len()
                )));
            }
        }
        if self.strata.is_empty() || self.strata.contains(&0) {
            return Err(GroupError::InvalidParameter(
                "strata must be nonempty and positive".into(),
            ));
        }
        let total: usize = self.strata.iter().sum();
        let n1 = self.strata[0];
        let mut table = vec![vec![Polynomial::zero(total); total - n1]; n1];
        for e in &self.coefficients {
            if e.field < 1 || e.field > n1 {
                return Err(GroupError::InvalidParameter(format!(
                    "field index {} out of range",
                    e.field
                )));
            }
            if e.stratum < 2 || e.stratum > self.strata.len() {
                return Err(GroupError::InvalidParameter(format!(
                    "stratum {} out of range",
                    e.stratum
                )));
            }
            let dim = self.strata[e.stratum - 1];
            if e.slot < 1 || e.slot > dim {
                return Err(GroupError::InvalidParameter(format!(
                    "slot {} out of range",
                    e.slot
                )));
            }
            let offset: usize = self.strata[1..e.stratum - 1].iter().sum();
            table[e.field - 1][offset + e.slot - 1] = Polynomial::parse(&e.poly, total)?;
        }
        let name = self
            .name
            .unwrap_or_else(|| format!("custom:{:?}", self.strata));
        GroupSpec::from_table(name, self.strata, table)
    }
}
