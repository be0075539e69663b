//! Dense symmetric linear algebra: SPD matrices with cached factors, Gaussian
//! laws, the Bures–Wasserstein distance and the Gaussian Monge map.
//!
//! Matrix functions are computed from a symmetric eigendecomposition. All
//! factors are computed eagerly so values are immutable and can be shared
//! across threads.

use crate::error::{Error, Result};
use crate::numerics::NumericPolicy;
use crate::rng::StreamRng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::fmt::Write as _;
use std::path::Path;

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>, policy: &NumericPolicy) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailure("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), policy.eigen_eps, policy.eigen_max_iter)
        .ok_or_else(|| Error::FactorizationFailure("eigendecomposition did not converge".into()))?;
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// `Q diag(f(lambda)) Q^T`, symmetrized.
pub fn spectral_function(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        let fv = f(v);
        scaled.column_mut(j).scale_mut(fv);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive semidefinite matrix. Eigenvalues that
/// are negative only through round-off are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>, policy: &NumericPolicy) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m, policy)?;
    check_psd(&values)?;
    Ok(spectral_function(&values, &vectors, |v| v.max(0.0).sqrt()))
}

fn check_psd(values: &DVector<f64>) -> Result<()> {
    let lmax = values.max();
    let lmin = values.min();
    let floor = -1e-9 * lmax.abs().max(1.0);
    if lmin < floor {
        return Err(Error::NotPositiveDefinite {
            lambda_min: lmin,
            lambda_max: lmax,
        });
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, policy: &NumericPolicy) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > policy.symmetry_tol * m[(i, j)].abs().max(1.0) || gap.is_nan() {
                return Err(Error::NotSymmetric { i, j, gap });
            }
        }
    }
    Ok(())
}

/// Symmetric positive-definite matrix with eagerly cached factors.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    inverse: DMatrix<f64>,
    cholesky: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Self::with_policy(entries, &NumericPolicy::default())
    }

    pub fn with_policy(entries: DMatrix<f64>, policy: &NumericPolicy) -> Result<Self> {
        if entries.nrows() == 0 {
            return Err(Error::Parameter("matrix dimension must be positive".into()));
        }
        check_symmetric(&entries, policy)?;
        let entries = symmetrize(&entries);
        let (eigenvalues, eigenvectors) = sym_eigen(&entries, policy)?;
        let lmin = eigenvalues[0];
        let lmax = eigenvalues[eigenvalues.len() - 1];
        if !(lmin > policy.spd_floor * lmax) || !(lmax > 0.0) {
            return Err(Error::NotPositiveDefinite {
                lambda_min: lmin,
                lambda_max: lmax,
            });
        }
        let sqrt = spectral_function(&eigenvalues, &eigenvectors, f64::sqrt);
        let inv_sqrt = spectral_function(&eigenvalues, &eigenvectors, |v| 1.0 / v.sqrt());
        let inverse = spectral_function(&eigenvalues, &eigenvectors, |v| 1.0 / v);
        let cholesky = nalgebra::Cholesky::new(entries.clone())
            .ok_or_else(|| Error::FactorizationFailure("Cholesky factorization failed".into()))?
            .l();
        Ok(Self {
            entries,
            eigenvalues,
            eigenvectors,
            sqrt,
            inv_sqrt,
            inverse,
            cholesky,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn sqrt_matrix(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt_matrix(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Lower-triangular Cholesky factor.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_max() / self.lambda_min()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.inverse.clone())
    }

    pub fn scaled(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0) {
            return Err(Error::Parameter(format!("scale factor must be positive, got {c}")));
        }
        SpdMatrix::new(&self.entries * c)
    }

    /// `self^{-1/2} other self^{-1/2}`, symmetrized.
    pub fn whiten(&self, other: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if other.nrows() != self.dim() || other.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.nrows(),
            });
        }
        Ok(symmetrize(&(&self.inv_sqrt * other * &self.inv_sqrt)))
    }

    /// Serialize as `spd <d>` followed by `d` rows.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = format!("spd {d}\n");
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| format!("{:?}", self.entries[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        match tokens.next() {
            Some("spd") => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header `spd <d>`, found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let d: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("missing dimension in header".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad dimension: {e}")))?;
        let values: Vec<f64> = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad entry {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != d * d {
            return Err(Error::Parse(format!(
                "expected {} entries, found {}",
                d * d,
                values.len()
            )));
        }
        SpdMatrix::new(DMatrix::from_row_slice(d, d, &values))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

/// Square root of an SPD matrix as an SPD matrix.
pub fn spd_sqrt(a: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::new(a.sqrt_matrix().clone())
}

/// Extreme eigenvalues `(lambda_min, lambda_max)`.
pub fn spectral_bounds(a: &SpdMatrix) -> (f64, f64) {
    (a.lambda_min(), a.lambda_max())
}

/// Gaussian law with a symmetric positive semidefinite covariance.
///
/// Degenerate covariances are allowed so that point masses and chains with
/// zero burn-in are representable; operations that need an invertible
/// covariance report a factorization failure.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::with_policy(mean, cov, &NumericPolicy::default())
    }

    pub fn with_policy(mean: DVector<f64>, cov: DMatrix<f64>, policy: &NumericPolicy) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        check_symmetric(&cov, policy)?;
        let cov = symmetrize(&cov);
        let cov_sqrt = psd_sqrt(&cov, policy)?;
        Ok(Self { mean, cov, cov_sqrt })
    }

    pub fn from_spd(mean: DVector<f64>, cov: &SpdMatrix) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.dim(),
            });
        }
        Ok(Self {
            mean,
            cov: cov.matrix().clone(),
            cov_sqrt: cov.sqrt_matrix().clone(),
        })
    }

    pub fn point_mass(x: DVector<f64>) -> Self {
        let d = x.len();
        Self {
            mean: x,
            cov: DMatrix::zeros(d, d),
            cov_sqrt: DMatrix::zeros(d, d),
        }
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
            cov_sqrt: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn covariance_sqrt(&self) -> &DMatrix<f64> {
        &self.cov_sqrt
    }

    pub fn spd_covariance(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.cov.clone()).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::FactorizationFailure(format!("singular covariance ({e})")),
            other => other,
        })
    }

    /// One draw, consuming `dim()` standard normals.
    pub fn sample(&self, rng: &mut StreamRng) -> DVector<f64> {
        let z = rng.normal_vec(self.dim());
        &self.mean + &self.cov_sqrt * z
    }

    /// Law of `B x + c` for `x` from this law.
    pub fn push_forward(&self, b: &DMatrix<f64>, c: &DVector<f64>) -> Result<GaussianLaw> {
        if b.ncols() != self.dim() || c.len() != b.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: b.ncols(),
            });
        }
        GaussianLaw::new(b * &self.mean + c, b * &self.cov * b.transpose())
    }

    /// `n`-fold product law on `R^{d n}` (block-diagonal covariance).
    pub fn product(&self, n: usize) -> GaussianLaw {
        let d = self.dim();
        let mut mean = DVector::zeros(d * n);
        let mut cov = DMatrix::zeros(d * n, d * n);
        let mut cov_sqrt = DMatrix::zeros(d * n, d * n);
        for t in 0..n {
            mean.rows_mut(t * d, d).copy_from(&self.mean);
            cov.view_mut((t * d, t * d), (d, d)).copy_from(&self.cov);
            cov_sqrt.view_mut((t * d, t * d), (d, d)).copy_from(&self.cov_sqrt);
        }
        GaussianLaw { mean, cov, cov_sqrt }
    }

    /// Marginal law of the coordinate block `[start, start + len)`.
    pub fn block(&self, start: usize, len: usize) -> Result<GaussianLaw> {
        GaussianLaw::new(
            self.mean.rows(start, len).into_owned(),
            self.cov.view((start, start), (len, len)).into_owned(),
        )
    }
}

/// Wasserstein-2 distance between two Gaussian laws.
///
/// Uses `W2^2 = |m1 - m2|^2 + tr S1 + tr S2 - 2 ||S2^{1/2} S1^{1/2}||_*`,
/// where the nuclear norm equals `tr (S2^{1/2} S1 S2^{1/2})^{1/2}`.
pub fn bures_w2(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    Ok(bures_w2_squared(p, q)?.sqrt())
}

pub fn bures_w2_squared(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let mean_part = (p.mean() - q.mean()).norm_squared();
    let cross = q.covariance_sqrt() * p.covariance_sqrt();
    let svd = nalgebra::SVD::try_new(cross, false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::FactorizationFailure("singular value decomposition did not converge".into()))?;
    let nuclear: f64 = svd.singular_values.iter().sum();
    let w2sq = mean_part + p.covariance().trace() + q.covariance().trace() - 2.0 * nuclear;
    Ok(w2sq.max(0.0))
}

/// Affine map `x -> matrix * x + offset`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
}

/// Monge map pushing `p` onto `q`: `x -> m_q + T (x - m_p)` with
/// `T = S_p^{-1/2} (S_p^{1/2} S_q S_p^{1/2})^{1/2} S_p^{-1/2}`.
pub fn optimal_coupling_map(p: &GaussianLaw, q: &GaussianLaw) -> Result<AffineMap> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let policy = NumericPolicy::default();
    let sp = p.spd_covariance()?;
    let inner = symmetrize(&(sp.sqrt_matrix() * q.covariance() * sp.sqrt_matrix()));
    let middle = psd_sqrt(&inner, &policy)?;
    let t = symmetrize(&(sp.inv_sqrt_matrix() * middle * sp.inv_sqrt_matrix()));
    let offset = q.mean() - &t * p.mean();
    Ok(AffineMap { matrix: t, offset })
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let (values, _) = sym_eigen(&symmetrize(m), &NumericPolicy::default())?;
    Ok(values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// Largest singular value of a general matrix.
pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    let svd = nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::FactorizationFailure("singular value decomposition did not converge".into()))?;
    Ok(svd.singular_values.max())
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// SPD matrix `Q diag(eigenvalues) Q^T` with a random rotation `Q`.
pub fn random_spd_with_spectrum(eigenvalues: &[f64], rng: &mut StreamRng) -> Result<SpdMatrix> {
    let d = eigenvalues.len();
    let q = random_orthogonal(d, rng);
    let values = DVector::from_column_slice(eigenvalues);
    SpdMatrix::new(spectral_function(&values, &q, |v| v))
}
