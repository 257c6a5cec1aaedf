//! Finite-sum objectives `f(x) = (1/N) Σ f_i(x)` and their Riemannian
//! gradients: PCA on the Stiefel manifold and rank-p matrix completion on
//! the Grassmann manifold.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};

/// A smooth finite-sum objective on an embedded manifold.
///
/// Implementors supply per-sample values and Euclidean gradients; Riemannian
/// gradients are the tangent-space projections of those.
pub trait Problem: Sync {
    fn manifold(&self) -> &Manifold;

    /// Number of summands `N`.
    fn num_samples(&self) -> usize;

    /// `f_i(x)`. `x` is assumed compatible with [`Problem::manifold`].
    fn sample_value(&self, x: &Point, i: usize) -> f64;

    /// `out += weight · ∇f_i(x)` with `∇` the Euclidean gradient.
    fn add_sample_egrad(&self, x: &Point, i: usize, weight: f64, out: &mut DMatrix<f64>);

    /// Euclidean gradient of the full objective.
    fn full_egrad(&self, x: &Point) -> DMatrix<f64> {
        let (r, c) = self.manifold().shape();
        let mut out = DMatrix::zeros(r, c);
        let w = 1.0 / self.num_samples() as f64;
        for i in 0..self.num_samples() {
            self.add_sample_egrad(x, i, w, &mut out);
        }
        out
    }

    fn value(&self, x: &Point) -> Result<f64> {
        self.manifold().check_point(x)?;
        let n = self.num_samples();
        Ok((0..n).map(|i| self.sample_value(x, i)).sum::<f64>() / n as f64)
    }

    /// Riemannian gradient of `f_i`.
    fn sample_grad(&self, x: &Point, i: usize) -> Result<Tangent> {
        self.check_index(i)?;
        let (r, c) = self.manifold().shape();
        let mut out = DMatrix::zeros(r, c);
        self.add_sample_egrad(x, i, 1.0, &mut out);
        self.manifold().project(x, &out)
    }

    fn full_grad(&self, x: &Point) -> Result<Tangent> {
        self.manifold().check_point(x)?;
        let e = self.full_egrad(x);
        self.manifold().project(x, &e)
    }

    /// Mean of the sample gradients over `batch`.
    ///
    /// Summation runs in batch order, so results are reproducible. The
    /// projection is applied once to the averaged Euclidean gradient, which
    /// equals the mean of projected sample gradients by linearity.
    fn minibatch_grad(&self, x: &Point, batch: &[usize]) -> Result<Tangent> {
        if batch.is_empty() {
            return Err(Error::Contract("mini-batch must not be empty".into()));
        }
        self.manifold().check_point(x)?;
        let (r, c) = self.manifold().shape();
        let mut out = DMatrix::zeros(r, c);
        for &i in batch {
            self.check_index(i)?;
            self.add_sample_egrad(x, i, 1.0, &mut out);
        }
        out /= batch.len() as f64;
        self.manifold().project(x, &out)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_samples() {
            return Err(Error::Contract(format!(
                "sample index {i} out of range for N = {}",
                self.num_samples()
            )));
        }
        Ok(())
    }
}

/// `b` indices drawn uniformly from `0..n` with replacement.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, b: usize) -> Vec<usize> {
    (0..b).map(|_| rng.random_range(0..n)).collect()
}

/// `f(U) = (1/N) Σ ‖x_i − UUᵀx_i‖²` over `U ∈ St(p, n)`.
#[derive(Debug, Clone)]
pub struct PcaInstance {
    /// `n × N`, one sample per column.
    data: DMatrix<f64>,
    manifold: Manifold,
}

impl PcaInstance {
    /// `data` holds one sample per column.
    pub fn new(data: DMatrix<f64>, p: usize) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::Contract("PCA needs at least one sample".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PCA data"));
        }
        let manifold = Manifold::stiefel(data.nrows(), p)?;
        Ok(PcaInstance { data, manifold })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

impl Problem for PcaInstance {
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    fn num_samples(&self) -> usize {
        self.data.ncols()
    }

    fn sample_value(&self, x: &Point, i: usize) -> f64 {
        let u = x.values();
        let xi = self.data.column(i);
        let coeff = u.tr_mul(&xi);
        (xi - u * coeff).norm_squared()
    }

    fn add_sample_egrad(&self, x: &Point, i: usize, weight: f64, out: &mut DMatrix<f64>) {
        // ∇ ‖x − UUᵀx‖² on St(p,n) = −2 x xᵀ U
        let u = x.values();
        let xi = self.data.column(i);
        let coeff = u.tr_mul(&xi);
        out.ger(-2.0 * weight, &xi, &coeff, 1.0);
    }

    fn full_egrad(&self, x: &Point) -> DMatrix<f64> {
        let u = x.values();
        let proj = self.data.tr_mul(u);
        (&self.data * proj) * (-2.0 / self.num_samples() as f64)
    }
}

/// One partially observed column: `(row, value)` pairs with distinct rows.
pub type ObservedColumn = Vec<(usize, f64)>;

/// `f(U) = 1/(2N) Σ ‖P_Ωᵢ(U qᵢ(U) − xᵢ)‖²` over `[U] ∈ Gr(p, n)`.
#[derive(Debug, Clone)]
pub struct LrmcInstance {
    columns: Vec<ObservedColumn>,
    manifold: Manifold,
}

/// Least-squares fit of one column and its residual on the observed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnFit {
    pub q: DVector<f64>,
    /// `U[Ω,:] q − x[Ω]`, aligned with the column's observations.
    pub residual: DVector<f64>,
}

impl LrmcInstance {
    pub fn new(n: usize, p: usize, columns: Vec<ObservedColumn>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Contract("matrix completion needs at least one column".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.is_empty() {
                return Err(Error::Contract(format!("column {j} has no observed entries")));
            }
            let mut rows: Vec<usize> = col.iter().map(|&(r, _)| r).collect();
            rows.sort_unstable();
            if rows.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Contract(format!("column {j} repeats a row")));
            }
            if rows.last().is_some_and(|&r| r >= n) {
                return Err(Error::Contract(format!("column {j} has a row index >= {n}")));
            }
            if col.iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite("observed entry"));
            }
        }
        let manifold = Manifold::grassmann(n, p)?;
        Ok(LrmcInstance { columns, manifold })
    }

    pub fn columns(&self) -> &[ObservedColumn] {
        &self.columns
    }

    /// Minimum-norm least-squares coefficients for column `i`.
    pub fn solve_q(&self, u: &Point, i: usize) -> Result<DVector<f64>> {
        self.manifold.check_point(u)?;
        self.check_index(i)?;
        Ok(self.fit(u, i).q)
    }

    pub fn fit(&self, u: &Point, i: usize) -> ColumnFit {
        let u = u.values();
        let col = &self.columns[i];
        let p = u.ncols();
        let a = DMatrix::from_fn(col.len(), p, |r, c| u[(col[r].0, c)]);
        let b = DVector::from_iterator(col.len(), col.iter().map(|&(_, v)| v));
        let q = min_norm_lstsq(&a, &b);
        let residual = &a * &q - &b;
        ColumnFit { q, residual }
    }
}

/// Minimum-norm solution of `min ‖Aa − b‖` through a thin SVD, dropping
/// singular values below `max(m, p) · eps · σ_max`.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, p) = a.shape();
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let cutoff = m.max(p) as f64 * f64::EPSILON * smax;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let utb = u.tr_mul(b);
    let mut coeff = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            coeff[k] = utb[k] / s;
        }
    }
    vt.tr_mul(&coeff)
}

impl Problem for LrmcInstance {
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    fn num_samples(&self) -> usize {
        self.columns.len()
    }

    fn sample_value(&self, x: &Point, i: usize) -> f64 {
        0.5 * self.fit(x, i).residual.norm_squared()
    }

    fn add_sample_egrad(&self, x: &Point, i: usize, weight: f64, out: &mut DMatrix<f64>) {
        // q is a stationary point of the inner least-squares problem, so its
        // dependence on U drops out: ∇f_i = P_Ω(r) qᵀ.
        let fit = self.fit(x, i);
        for (k, &(row, _)) in self.columns[i].iter().enumerate() {
            let r = weight * fit.residual[k];
            for c in 0..fit.q.len() {
                out[(row, c)] += r * fit.q[c];
            }
        }
    }
}
