//! Dense linear-algebra kernels: symmetric eigendecomposition, PSD square
//! root, Moore-Penrose pseudoinverse and the dominant singular triple.
//!
//! Everything is self-contained (no BLAS/LAPACK): the eigensolver is cyclic
//! Jacobi, which is simple, deterministic and accurate enough for the
//! moderate matrix sizes this crate works with, and the singular triple comes
//! from power iteration on the smaller Gram operator.

use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result};

/// Relative asymmetry tolerated by [`sym_eig`].
const SYM_TOL: f64 = 1e-10;
/// Sweep cap for the Jacobi eigensolver; convergence is quadratic and even
/// ill-conditioned inputs settle in well under this.
const JACOBI_MAX_SWEEPS: usize = 64;

/// Frobenius norm.
pub fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of a vector.
pub fn norm2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Rank-one product `u * v'` as a dense matrix.
pub fn outer(u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            for (j, &vj) in v.iter().enumerate() {
                out[[i, j]] = ui * vj;
            }
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns of an orthonormal matrix, so `S = V diag(l) V'`.
///
/// Fails if the input is not square or deviates from symmetry by more than
/// `1e-10` relative to its largest entry.
pub fn sym_eig(s: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (rows, cols) = s.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let n = rows;
    let scale = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max((s[[i, j]] - s[[j, i]]).abs()));
    if asym > SYM_TOL * scale.max(1e-300) && asym > 0.0 {
        return Err(Error::NotSymmetric { tol: SYM_TOL });
    }

    let mut a = s.clone();
    let mut v = Array2::eye(n);
    if n == 1 {
        return Ok((Array1::from_elem(1, a[[0, 0]]), v));
    }

    let total = frob(&a);
    let off_tol = 1e-14 * total.max(1e-300);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if (2.0 * off).sqrt() <= off_tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                // Skip rotations that cannot change anything at f64 precision.
                if apq.abs() <= 1e-300 || apq.abs() < 1e-18 * (app.abs() + aqq.abs()) {
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau.abs() > 1e10 {
                    // Large tau: 1/(|tau| + sqrt(1+tau^2)) ~ 1/(2 tau).
                    0.5 / tau
                } else {
                    tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;

                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[p, k]] = a[[k, p]];
                    a[[k, q]] = sn * akp + c * akq;
                    a[[q, k]] = a[[k, q]];
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }

    // Sort eigenpairs by descending eigenvalue; ties keep the sweep order so
    // the result is deterministic.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((eigenvalues, vectors))
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-floor * max(1, |l|_max), 0)` are treated as roundoff and
/// clamped to zero; anything more negative is a genuine PSD violation and an
/// error. The result is symmetrized so `S = S'` holds exactly.
pub fn psd_sqrt(k: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    if floor < 0.0 {
        return Err(Error::param(format!("psd_sqrt floor must be >= 0, got {floor}")));
    }
    let (vals, vecs) = sym_eig(k)?;
    let lmax = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let thresh = floor * lmax.max(1.0);
    if let Some(&lmin) = vals
        .iter()
        .filter(|&&x| x < -thresh)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        return Err(Error::NotPsd {
            eigenvalue: lmin,
            floor: thresh,
        });
    }
    let roots = vals.mapv(|x| x.max(0.0).sqrt());
    let mut s = scaled_eigvec_product(&vecs, &roots);
    symmetrize(&mut s);
    Ok(s)
}

/// Moore-Penrose pseudoinverse.
///
/// Singular values at or below `rank_tol` times the largest are treated as
/// zero. Computed from the eigendecomposition of the smaller Gram matrix, so
/// the cost is driven by `min(rows, cols)`; since the Gram spectrum squares
/// the singular values, the rank cutoff can never resolve below
/// `sqrt(machine eps)` and smaller `rank_tol` values are raised to that
/// floor.
pub fn pinv(m: &Array2<f64>, rank_tol: f64) -> Result<Array2<f64>> {
    if rank_tol <= 0.0 {
        return Err(Error::param(format!("pinv rank_tol must be > 0, got {rank_tol}")));
    }
    let (rows, cols) = m.dim();
    if rows > cols {
        return Ok(pinv(&m.t().to_owned(), rank_tol)?.t().to_owned());
    }
    // rows <= cols: G = M M' is rows x rows.
    let mut g = m.dot(&m.t());
    symmetrize(&mut g);
    let (vals, u) = sym_eig(&g)?;
    let sigmas = vals.mapv(|x| x.max(0.0).sqrt());
    let smax = sigmas[0];
    if smax == 0.0 {
        return Ok(Array2::zeros((cols, rows)));
    }
    let cutoff = rank_tol.max((64.0 * f64::EPSILON).sqrt());
    let rank = sigmas.iter().take_while(|&&s| s > cutoff * smax).count();
    // pinv = sum_i v_i u_i' / sigma_i with v_i = M' u_i / sigma_i.
    let mut out = Array2::zeros((cols, rows));
    for i in 0..rank {
        let ui = u.column(i).to_owned();
        let vi = m.t().dot(&ui);
        let inv_s2 = 1.0 / (sigmas[i] * sigmas[i]);
        for r in 0..cols {
            let w = vi[r] * inv_s2;
            if w != 0.0 {
                for c in 0..rows {
                    out[[r, c]] += w * ui[c];
                }
            }
        }
    }
    Ok(out)
}

/// Dominant singular triple of a matrix.
#[derive(Debug, Clone)]
pub struct TopSingular {
    pub sigma: f64,
    /// Left singular vector (length = rows).
    pub u: Array1<f64>,
    /// Right singular vector (length = cols).
    pub v: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest singular value and its vectors via power iteration.
///
/// The start vector is the normalized all-ones vector; if the iterate ever
/// lands in the null space (all-ones orthogonal to the dominant direction),
/// the first coordinate is perturbed by `1e-3` and iteration continues, which
/// keeps the routine deterministic. Hitting `max_iter` is reported through
/// `converged = false` on the last iterate rather than as a hard failure.
pub fn top_singular_triple(m: &Array2<f64>, tol: f64, max_iter: usize) -> TopSingular {
    let (rows, cols) = m.dim();
    let mut u = Array1::from_elem(rows, 1.0 / (rows as f64).sqrt());
    let mut v = Array1::from_elem(cols, 1.0 / (cols as f64).sqrt());
    if frob(m) == 0.0 {
        let mut e_u = Array1::zeros(rows);
        e_u[0] = 1.0;
        let mut e_v = Array1::zeros(cols);
        e_v[0] = 1.0;
        return TopSingular {
            sigma: 0.0,
            u: e_u,
            v: e_v,
            converged: true,
            iterations: 0,
        };
    }

    let mut sigma = 0.0;
    for it in 1..=max_iter {
        let w = m.t().dot(&u);
        let wn = norm2(&w);
        if wn == 0.0 {
            // Stalled against the left null space; nudge and retry.
            u[0] += 1e-3;
            let un = norm2(&u);
            u.mapv_inplace(|x| x / un);
            continue;
        }
        v = w.mapv(|x| x / wn);
        let z = m.dot(&v);
        sigma = norm2(&z);
        if sigma == 0.0 {
            v[0] += 1e-3;
            let vn = norm2(&v);
            v.mapv_inplace(|x| x / vn);
            continue;
        }
        u = z.mapv(|x| x / sigma);
        // u is exactly M v / sigma, so the remaining residual lives on the
        // other side of the pair.
        let back = m.t().dot(&u);
        let mut res = 0.0f64;
        for i in 0..cols {
            res += (back[i] - sigma * v[i]).powi(2);
        }
        if res.sqrt() <= tol * sigma {
            return TopSingular {
                sigma,
                u,
                v,
                converged: true,
                iterations: it,
            };
        }
    }
    TopSingular {
        sigma,
        u,
        v,
        converged: false,
        iterations: max_iter,
    }
}

/// `V diag(w) V'` without forming the diagonal matrix.
fn scaled_eigvec_product(vecs: &Array2<f64>, weights: &Array1<f64>) -> Array2<f64> {
    let scaled = vecs * &weights.view().insert_axis(Axis(0));
    scaled.dot(&vecs.t())
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn sym_eig_identity() {
        let (vals, vecs) = sym_eig(&Array2::<f64>::eye(3)).unwrap();
        for &l in vals.iter() {
            assert_close(l, 1.0, 1e-14, "identity eigenvalue");
        }
        let vvt = vecs.dot(&vecs.t());
        assert!(frob(&(&vvt - &Array2::<f64>::eye(3))) < 1e-12);
    }

    #[test]
    fn sym_eig_diagonal_sorted_descending() {
        let d = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, vecs) = sym_eig(&d).unwrap();
        assert_eq!(vals.to_vec(), vec![3.0, 2.0, 1.0]);
        // Eigenvector for 3.0 must be +-e1.
        assert_close(vecs[[0, 0]].abs(), 1.0, 1e-12, "top eigenvector");
    }

    #[test]
    fn sym_eig_rejects_asymmetric_and_nonsquare() {
        let bad = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(sym_eig(&bad), Err(Error::NotSymmetric { .. })));
        let rect = Array2::<f64>::zeros((2, 3));
        assert!(matches!(sym_eig(&rect), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn sym_eig_reconstructs_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 12] {
            let a = random_matrix(&mut rng, n, n);
            let mut s = &a + &a.t();
            symmetrize(&mut s);
            let (vals, vecs) = sym_eig(&s).unwrap();
            let rec = scaled_eigvec_product(&vecs, &vals);
            let rel = frob(&(&rec - &s)) / frob(&s).max(1e-300);
            assert!(rel < 1e-10, "reconstruction error {rel} at n={n}");
        }
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let k = array![[4.0, 0.0], [0.0, 9.0]];
        let s = psd_sqrt(&k, 1e-10).unwrap();
        assert_close(s[[0, 0]], 2.0, 1e-12, "sqrt(4)");
        assert_close(s[[1, 1]], 3.0, 1e-12, "sqrt(9)");
        assert_close(s[[0, 1]], 0.0, 1e-12, "off-diagonal");
    }

    #[test]
    fn psd_sqrt_zero_matrix() {
        let s = psd_sqrt(&Array2::zeros((3, 3)), 1e-10).unwrap();
        assert_eq!(frob(&s), 0.0);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 6, 4);
        let mut k = a.dot(&a.t());
        symmetrize(&mut k);
        let s = psd_sqrt(&k, 1e-10).unwrap();
        let rel = frob(&(&s.dot(&s) - &k)) / frob(&k);
        assert!(rel < 1e-8, "square-back error {rel}");
        assert_eq!(frob(&(&s - &s.t().to_owned())), 0.0, "result must be exactly symmetric");
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let k = array![[1.0, 0.0], [0.0, -0.5]];
        assert!(matches!(psd_sqrt(&k, 1e-10), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn pinv_diagonal_with_zero() {
        let m = array![[2.0, 0.0], [0.0, 0.0]];
        let p = pinv(&m, 1e-10).unwrap();
        assert_close(p[[0, 0]], 0.5, 1e-12, "1/2");
        assert_close(p[[1, 1]], 0.0, 1e-12, "zero singular value stays zero");
    }

    #[test]
    fn pinv_matches_normal_equation_inverse_for_fat_full_rank() {
        // For full row rank Y the pseudoinverse is Y' (Y Y')^{-1}; get the
        // inverse by Gaussian elimination as an independent route.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_matrix(&mut rng, 4, 12);
        let g = y.dot(&y.t());
        let ginv = gauss_inverse(&g);
        let oracle = y.t().dot(&ginv);
        let p = pinv(&y, 1e-10).unwrap();
        assert!(frob(&(&p - &oracle)) / frob(&oracle) < 1e-8);
    }

    #[test]
    fn pinv_zero_matrix() {
        let p = pinv(&Array2::zeros((3, 5)), 1e-10).unwrap();
        assert_eq!(p.dim(), (5, 3));
        assert_eq!(frob(&p), 0.0);
    }

    fn gauss_inverse(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut inv = Array2::eye(n);
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[[r, col]].abs() > m[[piv, col]].abs() {
                    piv = r;
                }
            }
            for c in 0..n {
                m.swap([col, c], [piv, c]);
                inv.swap([col, c], [piv, c]);
            }
            let d = m[[col, col]];
            for c in 0..n {
                m[[col, c]] /= d;
                inv[[col, c]] /= d;
            }
            for r in 0..n {
                if r != col && m[[r, col]] != 0.0 {
                    let f = m[[r, col]];
                    for c in 0..n {
                        m[[r, c]] -= f * m[[col, c]];
                        inv[[r, c]] -= f * inv[[col, c]];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn top_singular_rank_one() {
        let u = array![3.0, 0.0, 4.0].mapv(|x: f64| x / 5.0);
        let v = array![1.0, 1.0].mapv(|x: f64| x / 2f64.sqrt());
        let m = outer(&u.mapv(|x| 5.0 * x), &v);
        let t = top_singular_triple(&m, 1e-10, 1000);
        assert!(t.converged);
        assert_close(t.sigma, 5.0, 1e-8, "sigma");
        assert_close(t.u.dot(&u).abs(), 1.0, 1e-8, "u direction");
        assert_close(t.v.dot(&v).abs(), 1.0, 1e-8, "v direction");
    }

    #[test]
    fn top_singular_zero_matrix() {
        let t = top_singular_triple(&Array2::zeros((2, 4)), 1e-8, 10);
        assert_eq!(t.sigma, 0.0);
        assert!(t.converged);
        assert_close(norm2(&t.u), 1.0, 1e-15, "unit u");
        assert_close(norm2(&t.v), 1.0, 1e-15, "unit v");
    }

    #[test]
    fn top_singular_survives_orthogonal_start() {
        // Dominant direction has zero overlap with the all-ones start vector:
        // column space direction (1, -1)/sqrt(2).
        let m = array![[2.0, -2.0], [-2.0, 2.0]];
        let t = top_singular_triple(&m, 1e-10, 1000);
        assert_close(t.sigma, 4.0, 1e-6, "sigma after perturbation");
    }

    #[test]
    fn top_singular_dominates_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_matrix(&mut rng, 6, 9);
        let t = top_singular_triple(&m, 1e-10, 2000);
        assert!(t.converged);
        for _ in 0..1000 {
            let mut z = Array1::from_shape_fn(9, |_| rng.gen_range(-1.0f64..1.0));
            let zn = norm2(&z);
            z.mapv_inplace(|x| x / zn);
            let mz = m.dot(&z);
            assert!(norm2(&mz) <= t.sigma + 1e-8, "sigma must dominate ||Mz||");
        }
    }

    #[test]
    fn top_singular_matches_eig_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(r, c) in [(3usize, 7usize), (8, 4), (5, 5)].iter() {
            let m = random_matrix(&mut rng, r, c);
            let mut g = m.dot(&m.t());
            symmetrize(&mut g);
            let (vals, _) = sym_eig(&g).unwrap();
            let t = top_singular_triple(&m, 1e-12, 5000);
            assert_close(t.sigma, vals[0].max(0.0).sqrt(), 1e-7, "sigma vs eig oracle");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_sym_eig_reconstruction(seed in 0u64..1000, n in 1usize..=20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, n);
            let mut s = &a + &a.t();
            symmetrize(&mut s);
            let (vals, vecs) = sym_eig(&s).unwrap();
            let rec = scaled_eigvec_product(&vecs, &vals);
            let denom = frob(&s).max(1e-12);
            prop_assert!(frob(&(&rec - &s)) / denom < 1e-8);
            let gram = vecs.t().dot(&vecs);
            prop_assert!(frob(&(&gram - &Array2::<f64>::eye(n))) < 1e-10 * (n as f64));
        }

        #[test]
        fn prop_pinv_moore_penrose(seed in 0u64..1000, r in 1usize..=6, c in 1usize..=6, k in 1usize..=6) {
            // Build possibly rank-deficient M = A B with inner dimension k.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, r, k);
            let b = random_matrix(&mut rng, k, c);
            let m = a.dot(&b);
            let p = pinv(&m, 1e-10).unwrap();
            let scale = frob(&m).max(1.0);
            prop_assert!(frob(&(&m.dot(&p).dot(&m) - &m)) / scale < 1e-8);
            prop_assert!(frob(&(&p.dot(&m).dot(&p) - &p)) / frob(&p).max(1.0) < 1e-8);
            let mp = m.dot(&p);
            prop_assert!(frob(&(&mp.t().to_owned() - &mp)) < 1e-8 * scale.max(1.0));
            let pm = p.dot(&m);
            prop_assert!(frob(&(&pm.t().to_owned() - &pm)) < 1e-8 * scale.max(1.0));
        }
    }
}
