//! Embedded-submanifold geometry for the unit sphere, the Stiefel manifold
//! and the Grassmann manifold.
//!
//! Every manifold here lives inside a Euclidean space of `n × p` matrices
//! (the sphere is stored as an `n × 1` column) and inherits the Frobenius
//! inner product as its metric. Grassmann points are stored as Stiefel
//! representatives, and Grassmann tangent vectors as horizontal lifts
//! (`Xᵀη = 0`).
//!
//! Points are validated on construction, so a [`Point`] handed out by a
//! [`Manifold`] always satisfies the defining constraint within `tol_feas`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Sphere,
    Stiefel,
    Grassmann,
}

/// How a tangent step is mapped back onto the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retraction {
    /// `qf(X + η)`, the Q factor with a positive-diagonal R.
    Qr,
    /// `(X + η)(I + ηᵀη)^{-1/2}`, the orthogonal polar factor.
    Polar,
}

/// A point on a manifold, stored in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    values: DMatrix<f64>,
    kind: ManifoldKind,
}

impl Point {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }
}

/// An ambient-coordinate vector meant to lie in a tangent space.
///
/// Construction does not check tangency; use [`Manifold::check_tangent`] or
/// obtain tangent vectors through [`Manifold::project`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    values: DMatrix<f64>,
}

impl Tangent {
    pub fn new(values: DMatrix<f64>) -> Self {
        Tangent { values }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tangent {
            values: DMatrix::zeros(rows, cols),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn scaled(&self, s: f64) -> Tangent {
        Tangent {
            values: &self.values * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentCheck {
    pub residual: f64,
    pub ok: bool,
}

/// Describes one of the supported manifolds together with its tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    kind: ManifoldKind,
    n: usize,
    p: usize,
    retraction: Retraction,
    tol_feas: f64,
    tol_tan: f64,
}

impl Manifold {
    /// Unit sphere in ℝᵈ.
    pub fn sphere(d: usize) -> Result<Self> {
        Self::new(ManifoldKind::Sphere, d, 1, Retraction::Qr)
    }

    /// St(p, n): `n × p` matrices with orthonormal columns. QR retraction.
    pub fn stiefel(n: usize, p: usize) -> Result<Self> {
        Self::new(ManifoldKind::Stiefel, n, p, Retraction::Qr)
    }

    /// Gr(p, n) through Stiefel representatives. Polar retraction.
    pub fn grassmann(n: usize, p: usize) -> Result<Self> {
        Self::new(ManifoldKind::Grassmann, n, p, Retraction::Polar)
    }

    fn new(kind: ManifoldKind, n: usize, p: usize, retraction: Retraction) -> Result<Self> {
        if n == 0 || p == 0 || p > n {
            return Err(Error::Contract(format!(
                "manifold dimensions need 1 <= p <= n, got n={n}, p={p}"
            )));
        }
        Ok(Manifold {
            kind,
            n,
            p,
            retraction,
            tol_feas: DEFAULT_TOL,
            tol_tan: DEFAULT_TOL,
        })
    }

    pub fn with_retraction(mut self, retraction: Retraction) -> Self {
        self.retraction = retraction;
        self
    }

    pub fn with_tolerances(mut self, tol_feas: f64, tol_tan: f64) -> Result<Self> {
        if !(tol_feas > 0.0 && tol_tan > 0.0) {
            return Err(Error::Contract("tolerances must be positive".into()));
        }
        self.tol_feas = tol_feas;
        self.tol_tan = tol_tan;
        Ok(self)
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn retraction(&self) -> Retraction {
        self.retraction
    }

    /// Ambient shape `(rows, cols)`; `(d, 1)` for the sphere.
    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    /// Number of ambient coordinates, `n·p`.
    pub fn ambient_dim(&self) -> usize {
        self.n * self.p
    }

    pub fn tol_feas(&self) -> f64 {
        self.tol_feas
    }

    pub fn tol_tan(&self) -> f64 {
        self.tol_tan
    }

    fn check_shape(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.shape() != self.shape() {
            return Err(Error::Dimension {
                expected: self.shape(),
                got: m.shape(),
            });
        }
        Ok(())
    }

    /// Checks that `x` was produced for a manifold of this kind and shape.
    pub fn check_point(&self, x: &Point) -> Result<()> {
        if x.kind != self.kind {
            return Err(Error::Contract(format!(
                "point belongs to {:?}, not {:?}",
                x.kind, self.kind
            )));
        }
        self.check_shape(&x.values)
    }

    /// Distance of `values` from satisfying the defining constraint.
    pub fn feasibility_residual(&self, values: &DMatrix<f64>) -> f64 {
        match self.kind {
            ManifoldKind::Sphere => (values.norm() - 1.0).abs(),
            ManifoldKind::Stiefel | ManifoldKind::Grassmann => {
                let gram = values.tr_mul(values);
                (gram - DMatrix::identity(values.ncols(), values.ncols())).norm()
            }
        }
    }

    /// Wraps `values` as a point after validating shape and feasibility.
    pub fn point(&self, values: DMatrix<f64>) -> Result<Point> {
        self.check_shape(&values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("manifold point"));
        }
        let residual = self.feasibility_residual(&values);
        if residual > self.tol_feas {
            return Err(Error::Infeasible {
                residual,
                tol: self.tol_feas,
            });
        }
        Ok(Point {
            values,
            kind: self.kind,
        })
    }

    /// Orthogonal projection of an ambient matrix onto `T_x M`.
    pub fn project(&self, x: &Point, v: &DMatrix<f64>) -> Result<Tangent> {
        self.check_point(x)?;
        self.check_shape(v)?;
        let xv = &x.values;
        let out = match self.kind {
            // v − X sym(Xᵀv); for p = 1 this is (I − xxᵀ)v.
            ManifoldKind::Sphere | ManifoldKind::Stiefel => {
                let xtv = xv.tr_mul(v);
                let sym = (&xtv + xtv.transpose()) * 0.5;
                v - xv * sym
            }
            ManifoldKind::Grassmann => {
                let xtv = xv.tr_mul(v);
                v - xv * xtv
            }
        };
        Ok(Tangent { values: out })
    }

    /// Left-hand side of the tangency constraint at `x`.
    pub fn tangent_residual(&self, x: &Point, eta: &DMatrix<f64>) -> Result<f64> {
        self.check_point(x)?;
        self.check_shape(eta)?;
        let xte = x.values.tr_mul(eta);
        Ok(match self.kind {
            ManifoldKind::Sphere => xte[(0, 0)].abs(),
            ManifoldKind::Stiefel => (&xte + xte.transpose()).norm(),
            ManifoldKind::Grassmann => xte.norm(),
        })
    }

    pub fn check_tangent(&self, x: &Point, eta: &DMatrix<f64>) -> Result<TangentCheck> {
        let residual = self.tangent_residual(x, eta)?;
        Ok(TangentCheck {
            residual,
            ok: residual <= self.tol_tan,
        })
    }

    /// Maps `x + eta` back onto the manifold with the configured retraction.
    pub fn retract(&self, x: &Point, eta: &Tangent) -> Result<Point> {
        self.check_point(x)?;
        self.check_shape(&eta.values)?;
        if eta.values.iter().all(|&v| v == 0.0) {
            return Ok(x.clone());
        }
        let moved = &x.values + &eta.values;
        let values = match (self.kind, self.retraction) {
            (ManifoldKind::Sphere, _) => {
                let norm = moved.norm();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::Numerical(format!("cannot normalize vector of norm {norm}")));
                }
                moved / norm
            }
            (_, Retraction::Qr) => qf(moved)?,
            (_, Retraction::Polar) => polar_factor(moved)?,
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("retraction"));
        }
        Ok(Point {
            values,
            kind: self.kind,
        })
    }

    /// Frobenius inner product of two tangent vectors at `x`.
    pub fn inner(&self, x: &Point, a: &Tangent, b: &Tangent) -> Result<f64> {
        self.check_point(x)?;
        self.check_shape(&a.values)?;
        self.check_shape(&b.values)?;
        Ok(a.values.dot(&b.values))
    }

    /// Deterministic random point: a normalized Gaussian vector on the
    /// sphere, the Q factor of a Gaussian matrix otherwise.
    pub fn random_point(&self, seed: u64) -> Point {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_point_with(&mut rng)
    }

    pub fn random_point_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        loop {
            let g = gaussian_matrix(self.n, self.p, rng);
            let values = match self.kind {
                ManifoldKind::Sphere => {
                    let norm = g.norm();
                    if norm == 0.0 {
                        continue;
                    }
                    g / norm
                }
                _ => match qf(g) {
                    Ok(q) => q,
                    // A Gaussian matrix is rank deficient with probability zero.
                    Err(_) => continue,
                },
            };
            return Point {
                values,
                kind: self.kind,
            };
        }
    }

    /// Projection of a standard Gaussian ambient matrix onto `T_x M`.
    pub fn random_tangent<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> Result<Tangent> {
        let g = gaussian_matrix(self.n, self.p, rng);
        self.project(x, &g)
    }
}

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill order keeps streams stable across shapes with equal n·p.
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)))
}

/// Q factor of a thin QR decomposition, with the sign of each column chosen so
/// that R has a positive diagonal.
pub fn qf(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if cols > rows {
        return Err(Error::Contract(format!("qf needs a tall matrix, got {rows}x{cols}")));
    }
    let scale = a.norm();
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        let d = r[(j, j)];
        if !d.is_finite() || d.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "QR retraction: matrix is rank deficient (|r_{j}{j}| = {:e})",
                d.abs()
            )));
        }
        if d < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    Ok(q)
}

/// Orthogonal polar factor `A (AᵀA)^{-1/2}`.
///
/// For `A = X + η` with `η` tangent at a Stiefel point, `AᵀA = I + ηᵀη`.
pub fn polar_factor(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = a.tr_mul(&a);
    let eig = SymmetricEigen::new(gram);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Numerical(format!(
            "polar retraction: Gram matrix is not positive definite (min eigenvalue {min:e})"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&inv_sqrt);
    Ok(a * (scaled * v.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn sphere_projection_drops_normal_component() {
        let m = Manifold::sphere(2).unwrap();
        let x = m.point(col(&[1.0, 0.0])).unwrap();
        let p = m.project(&x, &col(&[0.5, 2.0])).unwrap();
        assert_eq!(p.values().as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn stiefel_single_column_reduces_to_sphere() {
        let m = Manifold::stiefel(2, 1).unwrap();
        let x = m.point(col(&[1.0, 0.0])).unwrap();
        let p = m.project(&x, &col(&[0.3, -1.5])).unwrap();
        assert_eq!(p.values().as_slice(), &[0.0, -1.5]);
    }

    /// Orthonormal basis of the Stiefel tangent space, built by applying the
    /// constraint map to every standard basis matrix and taking the null space.
    fn stiefel_tangent_basis(x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let (n, p) = x.shape();
        let d = n * p;
        let mut constraint = DMatrix::zeros(p * p, d);
        for j in 0..d {
            let mut e = DMatrix::zeros(n, p);
            e[j] = 1.0;
            let xte = x.transpose() * &e;
            let c = &xte + xte.transpose();
            for (i, v) in c.iter().enumerate() {
                constraint[(i, j)] = *v;
            }
        }
        let normal = constraint.transpose() * &constraint;
        let eig = SymmetricEigen::new(normal);
        (0..d)
            .filter(|&i| eig.eigenvalues[i].abs() < 1e-9)
            .map(|i| DMatrix::from_column_slice(n, p, eig.eigenvectors.column(i).as_slice()))
            .collect()
    }

    #[test]
    fn stiefel_projection_matches_basis_oracle() {
        let m = Manifold::stiefel(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = m.random_point_with(&mut rng);
            let basis = stiefel_tangent_basis(x.values());
            // dim St(2,3) = np − p(p+1)/2 = 3
            assert_eq!(basis.len(), 3);
            let v = gaussian_matrix(3, 2, &mut rng);
            let mut oracle = DMatrix::zeros(3, 2);
            for b in &basis {
                oracle += b * b.dot(&v);
            }
            let got = m.project(&x, &v).unwrap();
            assert!((got.values() - oracle).norm() < 1e-12);
        }
    }

    #[test]
    fn qr_retraction_hand_example() {
        let m = Manifold::stiefel(2, 1).unwrap();
        let x = m.point(col(&[1.0, 0.0])).unwrap();
        let y = m.retract(&x, &Tangent::new(col(&[0.0, 1.0]))).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(y.values()[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(y.values()[1], s, epsilon = 1e-15);
    }

    #[test]
    fn polar_retraction_hand_example() {
        let m = Manifold::grassmann(2, 1).unwrap();
        let x = m.point(col(&[1.0, 0.0])).unwrap();
        let y = m.retract(&x, &Tangent::new(col(&[0.0, 1.0]))).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(y.values()[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(y.values()[1], s, epsilon = 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        for m in [
            Manifold::sphere(4).unwrap(),
            Manifold::stiefel(5, 2).unwrap(),
            Manifold::grassmann(5, 2).unwrap(),
        ] {
            let x = m.random_point(3);
            let (r, c) = m.shape();
            let y = m.retract(&x, &Tangent::zeros(r, c)).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn tangent_checks() {
        let m = Manifold::sphere(2).unwrap();
        let x = m.point(col(&[1.0, 0.0])).unwrap();
        let good = m.check_tangent(&x, &col(&[0.0, 3.0])).unwrap();
        assert!(good.ok);
        assert_eq!(good.residual, 0.0);
        let bad = m.check_tangent(&x, &col(&[1.0, 0.0])).unwrap();
        assert!(!bad.ok);
        assert_eq!(bad.residual, 1.0);
    }

    #[test]
    fn random_point_is_deterministic_and_feasible() {
        let m = Manifold::stiefel(20, 10).unwrap();
        let a = m.random_point(42);
        let b = m.random_point(42);
        assert_eq!(a, b);
        assert!(m.feasibility_residual(a.values()) <= 1e-12);
        assert_ne!(a, m.random_point(43));
    }

    #[test]
    fn inner_matches_elementwise_sum() {
        let m = Manifold::stiefel(6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = m.random_point_with(&mut rng);
        let a = m.random_tangent(&x, &mut rng).unwrap();
        let b = m.random_tangent(&x, &mut rng).unwrap();
        let mut oracle = 0.0;
        for i in 0..6 {
            for j in 0..3 {
                oracle += a.values()[(i, j)] * b.values()[(i, j)];
            }
        }
        assert_abs_diff_eq!(m.inner(&x, &a, &b).unwrap(), oracle, epsilon = 1e-12);
        let z = Tangent::zeros(6, 3);
        assert_eq!(m.inner(&x, &z, &z).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_tangents_have_zero_inner() {
        let m = Manifold::sphere(3).unwrap();
        let x = m.point(col(&[0.0, 0.0, 1.0])).unwrap();
        let a = Tangent::new(col(&[1.0, 0.0, 0.0]));
        let b = Tangent::new(col(&[0.0, 2.0, 0.0]));
        assert_eq!(m.inner(&x, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn shape_and_feasibility_errors() {
        let m = Manifold::stiefel(3, 2).unwrap();
        assert!(matches!(m.point(DMatrix::zeros(2, 2)), Err(Error::Dimension { .. })));
        assert!(matches!(
            m.point(DMatrix::from_element(3, 2, 1.0)),
            Err(Error::Infeasible { .. })
        ));
        let x = m.random_point(0);
        assert!(matches!(
            m.project(&x, &DMatrix::zeros(3, 1)),
            Err(Error::Dimension { .. })
        ));
        assert!(Manifold::stiefel(2, 3).is_err());
    }

    #[test]
    fn rank_deficient_qr_is_reported() {
        let m = Manifold::stiefel(2, 1).unwrap();
        let x = m.point(col(&[1.0, 0.0])).unwrap();
        // Not tangent, but exercises the failure path: x + η = 0.
        let err = m.retract(&x, &Tangent::new(col(&[-1.0, 0.0])));
        assert!(matches!(err, Err(Error::Numerical(_))));
    }
}
