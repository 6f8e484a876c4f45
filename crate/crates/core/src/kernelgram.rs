//! Kernel functions and Gram matrix assembly for the kernel model variants.
//!
//! A trained kernel model needs four matrices derived from the training Gram
//! matrix `K`: `K` itself, its PSD square root, the pseudo inverse of that
//! root and the pseudoinverse of `K`. All four come from a single symmetric
//! eigendecomposition, with small eigenvalues clamped to zero so that
//! rank-deficient kernels (duplicated samples, low-dimensional data under a
//! linear kernel) stay harmless.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::numerics::sym_eig;
use crate::{Error, Result};

/// Relative eigenvalue floor: anything at or below this times the largest
/// eigenvalue is treated as exactly zero in the derived matrices.
const EIG_FLOOR_REL: f64 = 1e-10;

/// Cap on the number of samples used by the median pairwise-distance
/// heuristic; larger inputs are strided deterministically.
const MEDIAN_CAP: usize = 512;

/// Kernel function selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { sigma: f64 },
    Polynomial { degree: u32, coef: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    Err(Error::param(format!("rbf kernel needs sigma > 0, got {sigma}")))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Polynomial { degree, coef } => {
                if degree == 0 {
                    Err(Error::param("polynomial kernel needs degree >= 1"))
                } else if !coef.is_finite() {
                    Err(Error::param(format!("polynomial kernel coef must be finite, got {coef}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Evaluate the kernel on two samples.
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { sigma } => {
                let mut d2 = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    let d = x - y;
                    d2 += d * d;
                }
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Polynomial { degree, coef } => (dot(a, b) + coef).powi(degree as i32),
        }
    }
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    // Entrywise loop so that gram() and cross_gram() produce bit-identical
    // values for the same sample pair regardless of matrix shape.
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Training Gram matrix together with the derived matrices every kernel
/// variant needs.
#[derive(Debug, Clone)]
pub struct GramPack {
    pub kernel: KernelSpec,
    pub k: Array2<f64>,
    pub ksqrt: Array2<f64>,
    pub kinvsqrt: Array2<f64>,
    pub kpinv: Array2<f64>,
}

impl GramPack {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

/// Assemble the Gram matrix of the columns of `y` and its derived matrices.
///
/// The upper triangle is computed and mirrored, so `K` is symmetric by
/// construction. One eigendecomposition serves the square root, its inverse
/// and the pseudoinverse; eigenvalues at or below `1e-10 * lambda_max` are
/// clamped to zero first.
pub fn gram(y: &Array2<f64>, spec: &KernelSpec) -> Result<GramPack> {
    spec.validate()?;
    check_finite(y)?;
    let n = y.ncols();
    if n == 0 {
        return Err(Error::dim("gram needs at least one sample column"));
    }
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(y.column(i), y.column(j));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }

    let (vals, vecs) = sym_eig(&k)?;
    let lmax = vals.iter().fold(0.0f64, |m, &x| m.max(x));
    let thresh = EIG_FLOOR_REL * lmax.max(0.0);
    let clamped = vals.mapv(|l| if l > thresh { l } else { 0.0 });

    let ksqrt = weighted(&vecs, &clamped.mapv(f64::sqrt));
    let kinvsqrt = weighted(
        &vecs,
        &clamped.mapv(|l| if l > 0.0 { 1.0 / l.sqrt() } else { 0.0 }),
    );
    let kpinv = weighted(&vecs, &clamped.mapv(|l| if l > 0.0 { 1.0 / l } else { 0.0 }));

    Ok(GramPack {
        kernel: spec.clone(),
        k,
        ksqrt,
        kinvsqrt,
        kpinv,
    })
}

/// Kernel evaluations between training columns (rows of the result) and test
/// columns.
pub fn cross_gram(y_train: &Array2<f64>, y_test: &Array2<f64>, spec: &KernelSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    check_finite(y_train)?;
    check_finite(y_test)?;
    if y_train.nrows() != y_test.nrows() {
        return Err(Error::dim(format!(
            "cross_gram feature mismatch: train has {} rows, test has {}",
            y_train.nrows(),
            y_test.nrows()
        )));
    }
    let (n, m) = (y_train.ncols(), y_test.ncols());
    let mut k = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            k[[i, j]] = spec.eval(y_train.column(i), y_test.column(j));
        }
    }
    Ok(k)
}

/// Median pairwise Euclidean distance between sample columns, the usual
/// default bandwidth for the RBF kernel.
///
/// Inputs past the sampling cap are strided deterministically so repeated
/// calls agree. Degenerate inputs (all samples identical) fall back to 1.0.
pub fn median_heuristic_sigma(y: &Array2<f64>) -> f64 {
    let n = y.ncols();
    if n < 2 {
        return 1.0;
    }
    let stride = n.div_ceil(MEDIAN_CAP);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in idx.iter().skip(a + 1) {
            let mut d2 = 0.0;
            for (x, z) in y.column(i).iter().zip(y.column(j).iter()) {
                let d = x - z;
                d2 += d * d;
            }
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    if median > 0.0 {
        median
    } else {
        log::warn!("all samples identical; rbf sigma heuristic falls back to 1.0");
        1.0
    }
}

fn weighted(vecs: &Array2<f64>, w: &Array1<f64>) -> Array2<f64> {
    let scaled = vecs * &w.view().insert_axis(Axis(0));
    let mut m = scaled.dot(&vecs.t());
    // Exact symmetry, mirroring how K itself is assembled.
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    m
}

fn check_finite(y: &Array2<f64>) -> Result<()> {
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::dim("matrix contains non-finite entries"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{self, frob};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cols(seed: u64, m: usize, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_gram_matches_explicit_products() {
        let y = random_cols(1, 3, 5);
        let pack = gram(&y, &KernelSpec::Linear).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = (0..3).map(|r| y[[r, i]] * y[[r, j]]).sum();
                assert_eq!(pack.k[[i, j]], d, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn rbf_diagonal_is_one_and_duplicates_are_one() {
        let mut y = random_cols(2, 4, 6);
        let c0 = y.column(0).to_owned();
        y.column_mut(5).assign(&c0);
        let pack = gram(&y, &KernelSpec::Rbf { sigma: 0.7 }).unwrap();
        for i in 0..6 {
            assert_eq!(pack.k[[i, i]], 1.0);
        }
        assert_eq!(pack.k[[0, 5]], 1.0);
    }

    #[test]
    fn rbf_far_points_are_numerically_zero() {
        let y = array![[0.0, 100.0]];
        let pack = gram(&y, &KernelSpec::Rbf { sigma: 1.0 }).unwrap();
        assert!(pack.k[[0, 1]] < 1e-12);
    }

    #[test]
    fn polynomial_hand_example() {
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let pack = gram(&y, &KernelSpec::Polynomial { degree: 2, coef: 1.0 }).unwrap();
        assert_eq!(pack.k[[0, 0]], 4.0);
        assert_eq!(pack.k[[0, 1]], 1.0);
        assert_eq!(pack.k[[1, 1]], 4.0);
    }

    #[test]
    fn derived_matrices_are_consistent() {
        // Rank-deficient on purpose: 6 samples in a 2-dimensional feature
        // space under the linear kernel.
        let y = random_cols(3, 2, 6);
        let pack = gram(&y, &KernelSpec::Linear).unwrap();
        let k = &pack.k;
        let scale = frob(k);
        assert!(frob(&(&pack.ksqrt.dot(&pack.ksqrt) - k)) / scale < 1e-8);
        assert!(frob(&(&k.dot(&pack.kpinv).dot(k) - k)) / scale < 1e-8);
        assert!(pack.kinvsqrt.iter().all(|x| x.is_finite()));

        // kinvsqrt * ksqrt must act as the projector onto range(K).
        let (vals, vecs) = sym_eig(k).unwrap();
        let lmax = vals[0];
        let mut proj = Array2::<f64>::zeros((6, 6));
        for (i, &l) in vals.iter().enumerate() {
            if l > 1e-10 * lmax {
                let v = vecs.column(i).to_owned();
                proj = proj + numerics::outer(&v, &v);
            }
        }
        let got = pack.kinvsqrt.dot(&pack.ksqrt);
        assert!(frob(&(&got - &proj)) < 1e-6);
    }

    #[test]
    fn cross_gram_agrees_with_gram() {
        let y = random_cols(4, 3, 5);
        let spec = KernelSpec::Rbf { sigma: 1.3 };
        let pack = gram(&y, &spec).unwrap();
        let cross = cross_gram(&y, &y, &spec).unwrap();
        assert_eq!(pack.k, cross);
    }

    #[test]
    fn cross_gram_rejects_feature_mismatch() {
        let a = random_cols(5, 3, 4);
        let b = random_cols(6, 2, 4);
        assert!(cross_gram(&a, &b, &KernelSpec::Linear).is_err());
    }

    #[test]
    fn invalid_kernel_params_are_rejected() {
        assert!(KernelSpec::Rbf { sigma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Rbf { sigma: -1.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial { degree: 0, coef: 1.0 }.validate().is_err());
        let y = random_cols(7, 2, 3);
        assert!(gram(&y, &KernelSpec::Rbf { sigma: 0.0 }).is_err());
    }

    #[test]
    fn median_sigma_on_a_line() {
        // Points 0, 1, 10 give pairwise distances 1, 9, 10; median is 9.
        let y = array![[0.0, 1.0, 10.0]];
        assert_eq!(median_heuristic_sigma(&y), 9.0);
    }

    #[test]
    fn median_sigma_degenerate_falls_back() {
        let y = Array2::zeros((2, 4));
        assert_eq!(median_heuristic_sigma(&y), 1.0);
    }
}
