//! Orthogonal matching pursuit encoders.
//!
//! Two deliberately separate routes produce the sparse codes:
//!
//! * [`omp`] works with an explicit dictionary and maintains the residual in
//!   sample space;
//! * [`omp_gram`] never touches sample space and runs entirely on the
//!   correlations `D'Y` and the Gram matrix `D'D`, which is what the kernel
//!   variants need (there the "dictionary" only exists through the kernel).
//!
//! Keeping the implementations independent lets one serve as a cross-check
//! for the other.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::{Error, Result};

/// Correlation magnitude below which a column counts as exactly represented
/// and selection stops early.
const CORR_STOP: f64 = 1e-12;
/// Cholesky pivot floor for the support least-squares solve; the Gram
/// diagonal is 1 by the unit-atom precondition, so this is an absolute scale.
const PIVOT_TOL: f64 = 1e-10;
const JITTER: f64 = 1e-12;

/// Sparse code matrix with its support mask.
///
/// `x` is atoms x samples; `support[[i, j]]` is true exactly for the atoms
/// selected for sample `j` (a refit coefficient may still be zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    pub x: Array2<f64>,
    pub support: Array2<bool>,
    pub sparsity: usize,
}

impl SparseCodes {
    /// Samples whose representation uses atom `i`.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        self.support
            .row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }

    /// Number of atoms used by row `i` of the initial encode, i.e. how many
    /// samples selected that atom.
    pub fn row_usage(&self, i: usize) -> usize {
        self.support.row(i).iter().filter(|&&b| b).count()
    }

    pub fn zero_row(&mut self, i: usize) {
        self.x.row_mut(i).fill(0.0);
        self.support.row_mut(i).fill(false);
    }
}

/// Encode every column of `y` against dictionary `d` with at most `s` atoms.
///
/// Greedy selection by largest absolute correlation with the current
/// residual (ties break to the lowest atom index), followed by a least
/// squares refit on the selected support; the residual therefore never grows
/// from one selection to the next. Dictionary columns must be unit norm
/// within `1e-8`.
pub fn omp(y: &Array2<f64>, d: &Array2<f64>, s: usize) -> Result<SparseCodes> {
    let (m, n) = d.dim();
    if y.nrows() != m {
        return Err(Error::dim(format!(
            "omp: data has {} features but dictionary has {}",
            y.nrows(),
            m
        )));
    }
    if s == 0 || s > m.min(n) {
        return Err(Error::param(format!(
            "omp sparsity {s} out of range 1..=min(features={m}, atoms={n})"
        )));
    }
    for j in 0..n {
        let nrm = norm(d.column(j));
        if (nrm - 1.0).abs() > 1e-8 {
            return Err(Error::param(format!(
                "omp: dictionary column {j} has norm {nrm}, expected unit norm"
            )));
        }
    }

    let cols: Vec<(Vec<usize>, Vec<f64>)> = (0..y.ncols())
        .into_par_iter()
        .map(|j| encode_explicit(y.column(j), d.view(), s))
        .collect();
    Ok(assemble(n, y.ncols(), s, cols))
}

fn encode_explicit(y: ArrayView1<f64>, d: ArrayView2<f64>, s: usize) -> (Vec<usize>, Vec<f64>) {
    let n = d.ncols();
    let mut residual = y.to_owned();
    let mut selected: Vec<usize> = Vec::with_capacity(s);
    let mut banned = vec![false; n];
    let mut coefs: Vec<f64> = Vec::new();

    while selected.len() < s {
        let mut best = None;
        let mut best_mag = 0.0;
        for j in 0..n {
            if banned[j] || selected.contains(&j) {
                continue;
            }
            let mag = d.column(j).dot(&residual).abs();
            if mag > best_mag {
                best_mag = mag;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        if best_mag < CORR_STOP {
            break;
        }
        selected.push(j);

        let k = selected.len();
        let mut gram = Array2::zeros((k, k));
        let mut rhs = Array1::zeros(k);
        for (a, &ja) in selected.iter().enumerate() {
            rhs[a] = d.column(ja).dot(&y);
            for (b, &jb) in selected.iter().enumerate() {
                gram[[a, b]] = d.column(ja).dot(&d.column(jb));
            }
        }
        match chol_solve(&gram, &rhs) {
            Some(x) => {
                coefs = x;
                residual.assign(&y);
                for (a, &ja) in selected.iter().enumerate() {
                    residual.scaled_add(-coefs[a], &d.column(ja));
                }
            }
            None => {
                log::warn!("omp: atom {j} makes the support singular; dropping it");
                selected.pop();
                banned[j] = true;
            }
        }
    }
    (selected, coefs)
}

/// Gram-domain encoder: same selection and refit rules as [`omp`], driven by
/// `dty = D'Y` and `dtd = D'D` only.
///
/// After each refit the correlations are updated as `c = D'y - D'D x`, so no
/// sample-space residual is ever formed. `dtd` must have a unit diagonal
/// within `1e-6` (atoms of unit norm in whatever space the Gram lives in).
pub fn omp_gram(dty: &Array2<f64>, dtd: &Array2<f64>, s: usize) -> Result<SparseCodes> {
    let n = dtd.nrows();
    if dtd.ncols() != n {
        return Err(Error::NotSquare {
            rows: n,
            cols: dtd.ncols(),
        });
    }
    if dty.nrows() != n {
        return Err(Error::dim(format!(
            "omp_gram: correlation matrix has {} rows but the Gram is {n}x{n}",
            dty.nrows()
        )));
    }
    if s == 0 || s > n {
        return Err(Error::param(format!(
            "omp_gram sparsity {s} out of range 1..=atoms={n}"
        )));
    }
    for j in 0..n {
        if (dtd[[j, j]] - 1.0).abs() > 1e-6 {
            return Err(Error::param(format!(
                "omp_gram: Gram diagonal entry {j} is {}, expected 1 within 1e-6",
                dtd[[j, j]]
            )));
        }
    }

    let cols: Vec<(Vec<usize>, Vec<f64>)> = (0..dty.ncols())
        .into_par_iter()
        .map(|j| encode_gram(dty.column(j), dtd, s))
        .collect();
    Ok(assemble(n, dty.ncols(), s, cols))
}

fn encode_gram(c0: ArrayView1<f64>, dtd: &Array2<f64>, s: usize) -> (Vec<usize>, Vec<f64>) {
    let n = dtd.nrows();
    let mut corr = c0.to_owned();
    let mut selected: Vec<usize> = Vec::with_capacity(s);
    let mut banned = vec![false; n];
    let mut coefs: Vec<f64> = Vec::new();

    while selected.len() < s {
        let mut best = None;
        let mut best_mag = 0.0;
        for j in 0..n {
            if banned[j] || selected.contains(&j) {
                continue;
            }
            let mag = corr[j].abs();
            if mag > best_mag {
                best_mag = mag;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        if best_mag < CORR_STOP {
            break;
        }
        selected.push(j);

        let k = selected.len();
        let mut gram = Array2::zeros((k, k));
        let mut rhs = Array1::zeros(k);
        for (a, &ja) in selected.iter().enumerate() {
            rhs[a] = c0[ja];
            for (b, &jb) in selected.iter().enumerate() {
                gram[[a, b]] = dtd[[ja, jb]];
            }
        }
        match chol_solve(&gram, &rhs) {
            Some(x) => {
                coefs = x;
                for i in 0..n {
                    let mut acc = c0[i];
                    for (a, &ja) in selected.iter().enumerate() {
                        acc -= dtd[[i, ja]] * coefs[a];
                    }
                    corr[i] = acc;
                }
            }
            None => {
                log::warn!("omp_gram: atom {j} makes the support singular; dropping it");
                selected.pop();
                banned[j] = true;
            }
        }
    }
    (selected, coefs)
}

/// Cholesky solve of a small SPD system; retries once with a diagonal jitter
/// and reports `None` when the matrix is numerically singular even then.
fn chol_solve(gram: &Array2<f64>, rhs: &Array1<f64>) -> Option<Vec<f64>> {
    chol_solve_inner(gram, rhs, 0.0).or_else(|| chol_solve_inner(gram, rhs, JITTER))
}

fn chol_solve_inner(gram: &Array2<f64>, rhs: &Array1<f64>, jitter: f64) -> Option<Vec<f64>> {
    let k = gram.nrows();
    let mut l = gram.clone();
    for i in 0..k {
        l[[i, i]] += jitter;
    }
    // In-place lower Cholesky.
    for c in 0..k {
        for r in c..k {
            let mut sum = l[[r, c]];
            for t in 0..c {
                sum -= l[[r, t]] * l[[c, t]];
            }
            if r == c {
                if sum <= PIVOT_TOL {
                    return None;
                }
                l[[c, c]] = sum.sqrt();
            } else {
                l[[r, c]] = sum / l[[c, c]];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0; k];
    for r in 0..k {
        let mut sum = rhs[r];
        for t in 0..r {
            sum -= l[[r, t]] * y[t];
        }
        y[r] = sum / l[[r, r]];
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let mut sum = y[r];
        for t in r + 1..k {
            sum -= l[[t, r]] * x[t];
        }
        x[r] = sum / l[[r, r]];
    }
    Some(x)
}

fn assemble(n: usize, ncols: usize, s: usize, cols: Vec<(Vec<usize>, Vec<f64>)>) -> SparseCodes {
    let mut x = Array2::zeros((n, ncols));
    let mut support = Array2::from_elem((n, ncols), false);
    for (j, (sel, coefs)) in cols.into_iter().enumerate() {
        for (a, &atom) in sel.iter().enumerate() {
            x[[atom, j]] = coefs[a];
            support[[atom, j]] = true;
        }
    }
    SparseCodes {
        x,
        support,
        sparsity: s,
    }
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normalized_dict(seed: u64, m: usize, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0f64..1.0));
        for j in 0..n {
            let nrm = norm(d.column(j));
            d.column_mut(j).mapv_inplace(|x| x / nrm);
        }
        d
    }

    #[test]
    fn orthonormal_dictionary_recovers_exact_coefficients() {
        let d = Array2::<f64>::eye(3);
        let y = array![[2.0], [3.0], [0.0]];
        let codes = omp(&y, &d, 2).unwrap();
        assert_eq!(codes.x[[0, 0]], 2.0);
        assert_eq!(codes.x[[1, 0]], 3.0);
        assert_eq!(codes.x[[2, 0]], 0.0);
        assert!(codes.support[[0, 0]] && codes.support[[1, 0]] && !codes.support[[2, 0]]);
    }

    #[test]
    fn zero_column_selects_nothing() {
        let d = normalized_dict(1, 4, 6);
        let y = Array2::zeros((4, 1));
        let codes = omp(&y, &d, 3).unwrap();
        assert_eq!(codes.x.column(0).iter().filter(|&&v| v != 0.0).count(), 0);
        assert_eq!(codes.row_usage(0), 0);
    }

    #[test]
    fn s_equals_one_takes_single_best_atom() {
        let d = Array2::<f64>::eye(3);
        let y = array![[0.5], [-2.0], [1.0]];
        let codes = omp(&y, &d, 1).unwrap();
        // Atom 1 has the largest |correlation|.
        assert_eq!(codes.x[[1, 0]], -2.0);
        assert_eq!(codes.x.column(0).iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn early_stop_once_column_is_represented() {
        // y lies in the span of two atoms; with s = 3 the third iteration
        // must not select anything.
        let d = normalized_dict(2, 5, 8);
        let y_vec = 2.0 * &d.column(0).to_owned() - 1.5 * &d.column(3).to_owned();
        let y = y_vec.insert_axis(ndarray::Axis(1));
        let codes = omp(&y, &d, 3).unwrap();
        let nnz = codes.support.column(0).iter().filter(|&&b| b).count();
        assert_eq!(nnz, 2, "exact representation found after two atoms");
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut d = normalized_dict(3, 4, 5);
        assert!(omp(&Array2::zeros((3, 2)), &d, 2).is_err(), "feature mismatch");
        assert!(omp(&Array2::zeros((4, 2)), &d, 0).is_err(), "s = 0");
        assert!(omp(&Array2::zeros((4, 2)), &d, 5).is_err(), "s > min(m, n)");
        d.column_mut(2).mapv_inplace(|x| 2.0 * x);
        assert!(omp(&Array2::zeros((4, 2)), &d, 2).is_err(), "non-unit atom");
    }

    #[test]
    fn residual_norm_never_grows_with_more_atoms() {
        let d = normalized_dict(4, 6, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for s in 1..=5 {
            let codes = omp(&y, &d, s).unwrap();
            let res = &y - &d.dot(&codes.x);
            let nrm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(nrm <= prev + 1e-12, "s={s}: {nrm} > {prev}");
            prev = nrm;
        }
    }

    #[test]
    fn refit_leaves_selected_correlations_zero() {
        let d = normalized_dict(5, 6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = Array2::from_shape_fn((6, 1), |_| rng.gen_range(-1.0..1.0));
        let codes = omp(&y, &d, 4).unwrap();
        let res = &y.column(0).to_owned() - &d.dot(&codes.x.column(0).to_owned());
        for i in 0..9 {
            if codes.support[[i, 0]] {
                assert!(d.column(i).dot(&res).abs() < 1e-10, "atom {i} correlation");
            }
        }
    }

    #[test]
    fn gram_route_matches_explicit_route() {
        let d = normalized_dict(6, 7, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = Array2::from_shape_fn((7, 20), |_| rng.gen_range(-1.0..1.0));
        let a = omp(&y, &d, 4).unwrap();
        let b = omp_gram(&d.t().dot(&y), &d.t().dot(&d), 4).unwrap();
        assert_eq!(a.support, b.support);
        let diff = (&a.x - &b.x).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(diff < 1e-8, "max coefficient difference {diff}");
    }

    #[test]
    fn gram_route_rejects_bad_diagonal() {
        let mut dtd = Array2::<f64>::eye(4);
        dtd[[2, 2]] = 1.1;
        assert!(omp_gram(&Array2::zeros((4, 2)), &dtd, 2).is_err());
    }

    #[test]
    fn singular_support_drops_offending_atom() {
        // Rank-one Gram with unit diagonal: any second atom is linearly
        // dependent on the first, so it must be dropped and banned.
        let dtd = Array2::from_elem((2, 2), 1.0);
        let dty = array![[1.0], [0.9]];
        let codes = omp_gram(&dty, &dtd, 2).unwrap();
        assert_eq!(codes.x[[0, 0]], 1.0);
        assert_eq!(codes.x[[1, 0]], 0.0);
        assert!(codes.support[[0, 0]]);
        assert!(!codes.support[[1, 0]]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_routes_agree_and_respect_sparsity(seed in 0u64..500, m in 2usize..7, extra in 0usize..6, s in 1usize..4) {
            let n = m + extra;
            let s = s.min(m).min(n);
            let d = normalized_dict(seed, m, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let y = Array2::from_shape_fn((m, 5), |_| rng.gen_range(-1.0..1.0));
            let a = omp(&y, &d, s).unwrap();
            let b = omp_gram(&d.t().dot(&y), &d.t().dot(&d), s).unwrap();
            for j in 0..5 {
                let nnz = a.support.column(j).iter().filter(|&&x| x).count();
                prop_assert!(nnz <= s);
            }
            prop_assert_eq!(&a.support, &b.support);
            let diff = (&a.x - &b.x).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            prop_assert!(diff < 1e-8);
        }
    }
}
