//! Linear one-class SVM on sparse codes, solved in the dual.
//!
//! The dual is `min 1/2 l' Q l` over the box-simplex
//! `{0 <= l_i <= 1/(nu N), sum l = 1}` with `Q_ij = x_i' x_j`. The solver is
//! SMO-style pairwise coordinate descent with most-violating-pair selection;
//! it accepts a warm-start multiplier vector so the trainer can refit cheaply
//! after every dictionary sweep. The weight vector is recovered as
//! `w = X l` and the offset from the margin support vectors.
//!
//! A sample is anomalous when its decision value `w' x - rho` is less than
//! or equal to zero.

use ndarray::{Array1, Array2, ArrayView1};
use std::collections::{HashMap, VecDeque};

use crate::{Error, Result};

/// Solver knobs. The defaults suit detection workloads; the trainer tightens
/// `tol` so that refits stay within the loss-monotonicity budget.
#[derive(Debug, Clone)]
pub struct OcsvmConfig {
    /// Stop once the largest pairwise KKT violation drops below this.
    pub tol: f64,
    /// Hard cap on pair updates; hitting it logs a warning and returns the
    /// current iterate.
    pub max_pair_updates: usize,
    /// How many Gram columns to keep cached (FIFO eviction).
    pub cache_columns: usize,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        OcsvmConfig {
            tol: 1e-6,
            max_pair_updates: 100_000,
            cache_columns: 4096,
        }
    }
}

/// Fitted one-class SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct OcsvmModel {
    /// Weight vector in code space, `w = X l`.
    pub omega: Array1<f64>,
    pub rho: f64,
    /// Dual multipliers, one per training sample.
    pub lambda: Array1<f64>,
    /// Slacks `max(0, rho - w' x_i)` at the solution.
    pub xi: Array1<f64>,
    pub nu_frac: f64,
    /// Samples with `lambda > 0` (ascending).
    pub support_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Anomaly,
    Normal,
}

/// Fit with default solver settings. `codes` is atoms x samples.
pub fn fit(codes: &Array2<f64>, nu_frac: f64, warm: Option<&Array1<f64>>) -> Result<OcsvmModel> {
    fit_with(codes, nu_frac, warm, &OcsvmConfig::default())
}

pub fn fit_with(
    codes: &Array2<f64>,
    nu_frac: f64,
    warm: Option<&Array1<f64>>,
    cfg: &OcsvmConfig,
) -> Result<OcsvmModel> {
    let n_samples = codes.ncols();
    if n_samples == 0 {
        return Err(Error::dim("ocsvm: no samples"));
    }
    if !(nu_frac > 0.0 && nu_frac <= 1.0) {
        return Err(Error::param(format!("nu_frac must lie in (0, 1], got {nu_frac}")));
    }
    let nu_n = nu_frac * n_samples as f64;
    if nu_n < 1.0 {
        return Err(Error::NuInfeasible { nu_n });
    }
    let c_box = 1.0 / nu_n;

    let mut lambda = match warm {
        Some(w) => {
            if w.len() != n_samples {
                return Err(Error::dim(format!(
                    "warm-start vector has length {}, expected {n_samples}",
                    w.len()
                )));
            }
            project_box_simplex(w, c_box)
        }
        None => Array1::from_elem(n_samples, 1.0 / n_samples as f64),
    };

    // Maintained gradient g = Q lambda, refreshed periodically against drift.
    let mut omega = codes.dot(&lambda);
    let mut g = codes.t().dot(&omega);
    let mut cache = ColumnCache::new(cfg.cache_columns);
    let eps_box = 1e-12 * c_box;

    let mut updates = 0usize;
    loop {
        let mut i_up = None;
        let mut g_up = f64::INFINITY;
        let mut i_dn = None;
        let mut g_dn = f64::NEG_INFINITY;
        for t in 0..n_samples {
            let l = lambda[t];
            if l < c_box - eps_box && g[t] < g_up {
                g_up = g[t];
                i_up = Some(t);
            }
            if l > eps_box && g[t] > g_dn {
                g_dn = g[t];
                i_dn = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_up, i_dn) else { break };
        if g_dn - g_up <= cfg.tol || i == j {
            break;
        }
        if updates >= cfg.max_pair_updates {
            log::warn!(
                "ocsvm hit the pair-update cap ({}) with violation {:.3e}",
                cfg.max_pair_updates,
                g_dn - g_up
            );
            break;
        }

        let qi = cache.column(codes, i);
        let qj = cache.column(codes, j);
        let denom = qi[i] + qj[j] - 2.0 * qi[j];
        let room = (c_box - lambda[i]).min(lambda[j]);
        let delta = if denom > 1e-12 {
            ((g_dn - g_up) / denom).min(room)
        } else {
            // Flat direction: the objective is linear along it, so move as
            // far as the box allows.
            room
        };
        if delta <= 0.0 {
            break;
        }
        lambda[i] = (lambda[i] + delta).min(c_box);
        lambda[j] = (lambda[j] - delta).max(0.0);
        for t in 0..n_samples {
            g[t] += delta * (qi[t] - qj[t]);
        }
        updates += 1;
        if updates % 10_000 == 0 {
            omega = codes.dot(&lambda);
            g = codes.t().dot(&omega);
        }
    }

    omega = codes.dot(&lambda);
    let g_final = codes.t().dot(&omega);
    let rho = recover_rho(&lambda, &g_final, c_box);
    let xi = g_final.mapv(|gi| (rho - gi).max(0.0));
    let sv_thr = 1e-8 * c_box;
    let support_indices = (0..n_samples).filter(|&t| lambda[t] > sv_thr).collect();

    Ok(OcsvmModel {
        omega,
        rho,
        lambda,
        xi,
        nu_frac,
        support_indices,
    })
}

/// Decision value `w' x - rho` for a single code vector.
pub fn decision(model: &OcsvmModel, x: ArrayView1<f64>) -> Result<f64> {
    if x.len() != model.omega.len() {
        return Err(Error::dim(format!(
            "decision: code has length {}, model expects {}",
            x.len(),
            model.omega.len()
        )));
    }
    Ok(model.omega.dot(&x) - model.rho)
}

pub fn predict(model: &OcsvmModel, x: ArrayView1<f64>) -> Result<Prediction> {
    Ok(if decision(model, x)? <= 0.0 {
        Prediction::Anomaly
    } else {
        Prediction::Normal
    })
}

/// Dual objective `1/2 l' Q l = 1/2 ||X l||^2`.
pub fn dual_objective(codes: &Array2<f64>, lambda: &Array1<f64>) -> f64 {
    let w = codes.dot(lambda);
    0.5 * w.dot(&w)
}

/// Largest KKT violation of a multiplier vector at offset `rho`: margin
/// support vectors must sit on the margin, zero multipliers above it, bound
/// multipliers below it.
pub fn kkt_residual(codes: &Array2<f64>, lambda: &Array1<f64>, rho: f64, nu_frac: f64) -> f64 {
    let n_samples = codes.ncols();
    let c_box = 1.0 / (nu_frac * n_samples as f64);
    let g = codes.t().dot(&codes.dot(lambda));
    let mut worst = 0.0f64;
    for t in 0..n_samples {
        let r = if lambda[t] <= 1e-10 * c_box {
            (rho - g[t]).max(0.0)
        } else if lambda[t] >= c_box * (1.0 - 1e-10) {
            (g[t] - rho).max(0.0)
        } else {
            (g[t] - rho).abs()
        };
        worst = worst.max(r);
    }
    worst
}

fn recover_rho(lambda: &Array1<f64>, g: &Array1<f64>, c_box: f64) -> f64 {
    let margin_eps = 1e-8 * c_box;
    let mut margin_sum = 0.0;
    let mut margin_count = 0usize;
    let mut upper_max = f64::NEG_INFINITY;
    let mut zero_min = f64::INFINITY;
    for (t, &l) in lambda.iter().enumerate() {
        if l > margin_eps && l < c_box - margin_eps {
            margin_sum += g[t];
            margin_count += 1;
        } else if l >= c_box - margin_eps {
            upper_max = upper_max.max(g[t]);
        } else {
            zero_min = zero_min.min(g[t]);
        }
    }
    if margin_count > 0 {
        return margin_sum / margin_count as f64;
    }
    // No margin support vectors: rho is only bracketed. Bound multipliers
    // force rho >= their decision values, zero multipliers force rho <=
    // theirs; take the midpoint, or the surviving side when one set is
    // empty (e.g. nu = 1 puts every sample at the bound).
    match (upper_max.is_finite(), zero_min.is_finite()) {
        (true, true) => 0.5 * (upper_max + zero_min),
        (true, false) => upper_max,
        (false, true) => zero_min,
        (false, false) => 0.0,
    }
}

/// Euclidean projection onto `{0 <= l <= c, sum l = 1}` by bisection on the
/// simplex multiplier.
fn project_box_simplex(v: &Array1<f64>, c: f64) -> Array1<f64> {
    let sum_at = |t: f64| -> f64 { v.iter().map(|&x| (x - t).clamp(0.0, c)).sum() };
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.mapv(|x| (x - t).clamp(0.0, c))
}

/// FIFO cache of Gram columns `X' x_i`.
struct ColumnCache {
    cap: usize,
    map: HashMap<usize, Array1<f64>>,
    order: VecDeque<usize>,
}

impl ColumnCache {
    fn new(cap: usize) -> Self {
        ColumnCache {
            cap: cap.max(2),
            map: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn column(&mut self, codes: &Array2<f64>, i: usize) -> Array1<f64> {
        if let Some(col) = self.map.get(&i) {
            return col.clone();
        }
        let col = codes.t().dot(&codes.column(i).to_owned());
        if self.map.len() >= self.cap {
            if let Some(old) = self.order.pop_front() {
                self.map.remove(&old);
            }
        }
        self.map.insert(i, col.clone());
        self.order.push_back(i);
        col
    }
}
