//! Probability kernels and the small amount of dense linear algebra the
//! samplers need.
//!
//! Conventions used throughout the crate:
//!
//! * `Gamma(shape, rate)` has mean `shape / rate`.
//! * `W_p(df, S)` is the Wishart with `E[W] = df * S`.
//! * `IW_p(df, Psi)` is the inverse-Wishart with `X^{-1} ~ W_p(df, Psi^{-1})`,
//!   so `E[X] = Psi / (df - p - 1)` for `df > p + 1`. It is defined for
//!   `df > p - 1`.
//!
//! Random numbers come from [`RngStream`], a ChaCha8 generator
//! (`rand_chacha` 0.9) keyed by a 64-bit seed and a 64-bit stream id.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative tolerance for the symmetry check on [`SpdMatrix`] inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// A Cholesky pivot below `PIVOT_TOL * max(diag)` counts as a failure.
pub const PIVOT_TOL: f64 = 1e-12;

/// Lower Cholesky factor of a symmetric matrix.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "cholesky of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    let floor = PIVOT_TOL * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) || !d.is_finite() || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                name: "matrix".into(),
                pivot: j,
            });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Symmetric positive-definite matrix together with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::named(matrix, "matrix")
    }

    /// Validates `matrix`, reporting failures under `name`.
    ///
    /// The input is symmetrized as `(A + A^T) / 2` before factorization.
    pub fn named(matrix: DMatrix<f64>, name: &str) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 {
            return Err(Error::Dimension(format!(
                "`{name}` must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut asym = 0.0_f64;
        for i in 0..n {
            for j in 0..i {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric {
                name: name.into(),
                asymmetry: asym,
            });
        }
        let matrix = symmetrize(matrix);
        let chol = cholesky_lower(&matrix).map_err(|e| e.named(name))?;
        Ok(Self { matrix, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    /// `s * I`. Panics if `s` is not positive.
    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        assert!(s > 0.0 && dim > 0, "scaled identity needs s > 0, dim > 0");
        let matrix = DMatrix::from_diagonal_element(dim, dim, s);
        let chol = DMatrix::from_diagonal_element(dim, dim, s.sqrt());
        Self { matrix, chol }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cholesky factor has a positive diagonal");
        symmetrize(linv.transpose() * linv)
    }

    pub fn inverse_spd(&self) -> Result<SpdMatrix> {
        SpdMatrix::named(self.inverse(), "inverse")
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let z = self
            .chol
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.chol
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `v^T A^{-1} v`, computed by forward substitution without allocating
    /// for dimensions up to 16.
    pub fn inv_quad_form(&self, v: &[f64]) -> f64 {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        let mut stack = [0.0_f64; 16];
        let mut heap;
        let z: &mut [f64] = if n <= 16 {
            &mut stack[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * z[k];
            }
            let zi = s / self.chol[(i, i)];
            z[i] = zi;
            acc += zi * zi;
        }
        acc
    }

    /// Log density of `N_p(mean, self)` at `y`, written in terms of the
    /// difference `y - mean`.
    pub fn normal_log_density(&self, diff: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det() + self.inv_quad_form(diff))
    }

    pub fn scaled(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0) {
            return Err(Error::Domain(format!("scale factor {c} must be positive")));
        }
        Ok(Self {
            matrix: &self.matrix * c,
            chol: &self.chol * c.sqrt(),
        })
    }

    /// Sum of two SPD matrices.
    pub fn add(&self, other: &SpdMatrix) -> Result<SpdMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "adding {}x{} and {}x{} matrices",
                self.dim(),
                self.dim(),
                other.dim(),
                other.dim()
            )));
        }
        SpdMatrix::named(&self.matrix + &other.matrix, "sum")
    }

    /// The `size x size` diagonal block starting at `(start, start)`.
    pub fn diagonal_block(&self, start: usize, size: usize) -> Result<SpdMatrix> {
        SpdMatrix::named(
            self.matrix.view((start, start), (size, size)).into_owned(),
            "diagonal block",
        )
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.matrix)
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = rows_to_matrix(&rows).map_err(serde::de::Error::custom)?;
        SpdMatrix::named(m, "deserialized matrix").map_err(serde::de::Error::custom)
    }
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a `DMatrix` as a list of rows.
pub mod rows_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        rows_to_matrix(&rows).map_err(serde::de::Error::custom)
    }
}

/// Seeded, splittable random stream.
///
/// Identical `(seed, stream_id)` pairs reproduce identical draws; distinct
/// stream ids under one seed select disjoint ChaCha8 streams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "ChaCha8 (rand_chacha 0.9), seed_from_u64 + set_stream";

    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Log density of `N_p(mean, cov)` at `y`.
pub fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> Result<f64> {
    if y.len() != cov.dim() || mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "mvn_logpdf: y has {}, mean has {}, cov is {}x{}",
            y.len(),
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let diff: Vec<f64> = y.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
    Ok(cov.normal_log_density(&diff))
}

/// `mean + L z` with `L` the lower Cholesky factor of `cov`.
pub fn mvn_sample(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut RngStream) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "mvn_sample: mean has {}, cov is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let z = DVector::from_fn(mean.len(), |_, _| rng.standard_normal());
    Ok(mean + cov.cholesky() * z)
}

/// Draw from `N(P^{-1} b, P^{-1})` given the precision `P`.
pub fn mvn_sample_canonical(
    precision: &SpdMatrix,
    b: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if b.len() != precision.dim() {
        return Err(Error::Dimension("mvn_sample_canonical: length mismatch".into()));
    }
    let mean = precision.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| rng.standard_normal());
    let noise = precision
        .cholesky()
        .tr_solve_lower_triangular(&z)
        .expect("cholesky factor has a positive diagonal");
    Ok(mean + noise)
}

/// `Gamma(shape, rate)`; the mean is `shape / rate`.
pub fn gamma_sample(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Domain(format!(
            "Gamma(shape={shape}, rate={rate}) needs positive finite parameters"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.sample(rng))
}

pub fn beta_sample(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!(
            "Beta({a}, {b}) needs positive finite parameters"
        )));
    }
    let dist = Beta::new(a, b).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Lower-triangular Bartlett factor `A` with `A A^T ~ W_p(df, I)`.
fn bartlett_factor(dim: usize, df: f64, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        // chi-square with df - i degrees of freedom
        let chi2 = gamma_sample((df - i as f64) / 2.0, 0.5, rng)?;
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    Ok(a)
}

fn check_df(df: f64, dim: usize) -> Result<()> {
    if !(df > dim as f64 - 1.0) || !df.is_finite() {
        return Err(Error::Domain(format!(
            "degrees of freedom {df} must exceed dim - 1 = {}",
            dim as f64 - 1.0
        )));
    }
    Ok(())
}

/// `W_p(df, scale)` via the Bartlett decomposition.
pub fn wishart_sample(df: f64, scale: &SpdMatrix, rng: &mut RngStream) -> Result<SpdMatrix> {
    let dim = scale.dim();
    check_df(df, dim)?;
    let a = bartlett_factor(dim, df, rng)?;
    let t = scale.cholesky() * a;
    SpdMatrix::named(symmetrize(&t * t.transpose()), "Wishart draw")
}

/// `IW_p(df, scale)`: the inverse of a `W_p(df, scale^{-1})` draw.
///
/// With `scale = M M^T` and Bartlett factor `A`, the Wishart draw
/// `M^{-T} A A^T M^{-1}` is inverted in closed form as `(M A^{-T})(M A^{-T})^T`.
pub fn inverse_wishart_sample(df: f64, scale: &SpdMatrix, rng: &mut RngStream) -> Result<SpdMatrix> {
    let dim = scale.dim();
    check_df(df, dim)?;
    let a = bartlett_factor(dim, df, rng)?;
    let a_inv = a
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or_else(|| Error::NotPositiveDefinite {
            name: "Bartlett factor".into(),
            pivot: 0,
        })?;
    let c = scale.cholesky() * a_inv.transpose();
    SpdMatrix::named(symmetrize(&c * c.transpose()), "inverse-Wishart draw")
}

/// Log density of the standard normal; handy for tests and oracles.
pub fn std_normal_logpdf(x: f64) -> f64 {
    -0.5 * (x * x + (2.0 * PI).ln())
}

/// Numerically stable `log(sum(exp(v)))`; `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Draws an index from unnormalized log weights.
pub fn sample_log_weights(log_w: &[f64], rng: &mut RngStream) -> usize {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.uniform() * total;
    for (i, w) in log_w.iter().enumerate() {
        u -= (w - max).exp();
        if u < 0.0 {
            return i;
        }
    }
    // rounding can leave u at a hair above zero
    log_w
        .iter()
        .rposition(|w| (w - max).exp() > 0.0)
        .unwrap_or(log_w.len() - 1)
}
