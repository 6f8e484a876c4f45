//! End-to-end training and detection for the four model families.
//!
//! Training alternates between two blocks that share one objective: a
//! sparse-representation term F (dictionary reconstruction plus row-norm
//! penalties) and the one-class SVM Lagrangian G evaluated on the codes.
//! The loop is: encode once to fix the sparse support, fit the SVM, then
//! repeat `outer_iters` times a full sweep of per-atom updates (which see the
//! current SVM multipliers) followed by a warm-started SVM refit. A row of
//! codes that collapses to zero is retired for the rest of the run — the
//! support only ever shrinks, no atom is ever replaced.
//!
//! The four variants differ in what the dictionary lives in and how codes
//! are produced:
//!
//! | variant    | dictionary        | codes during training   | residual   |
//! |------------|-------------------|-------------------------|------------|
//! | dl-ocsvm   | `D` (features)    | sparse, support-locked  | `Y - DX`   |
//! | dpl-ocsvm  | `D` + analysis `P`| `X = PY` (dense)        | `Y - DX`   |
//! | kdl-ocsvm  | `A` (coefficients)| sparse, support-locked  | `I - AX`   |
//! | kdpl-ocsvm | `A` + analysis `B`| `X = BK` (dense)        | `I - AX`   |
//!
//! Detection re-encodes test data (OMP against `D`, or its Gram-domain form
//! against `A`), zeroes rows that were retired in training plus rows whose
//! residual test falls under the trimming threshold, and scores each sample
//! with the trained SVM; non-positive scores are anomalies.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::atomupdate::{
    update_pair_dl, update_pair_dpl, update_pair_kdl, update_pair_kdpl, CoupledRow, SaddleConfig,
};
use crate::dataio::Standardizer;
use crate::kernelgram::{cross_gram, gram, GramPack, KernelSpec};
use crate::numerics::{norm2, outer as outer_product, pinv, top_singular_triple};
use crate::ocsvm::{self, OcsvmConfig, OcsvmModel};
use crate::sparse::{omp, omp_gram, SparseCodes};
use crate::{Error, Result};

/// Tolerance the SVM refits are solved to during training; tight enough that
/// the refit never undoes the decrease produced by the atom sweep.
const TRAIN_SVM_TOL: f64 = 1e-8;

/// Singular-value iteration tolerance for the detection-time trimming test.
const TRIM_SVD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "dl-ocsvm")]
    DlOcsvm,
    #[serde(rename = "dpl-ocsvm")]
    DplOcsvm,
    #[serde(rename = "kdl-ocsvm")]
    KdlOcsvm,
    #[serde(rename = "kdpl-ocsvm")]
    KdplOcsvm,
}

impl Variant {
    /// Kernel variants carry the training samples and a Gram pack instead of
    /// a feature-space dictionary.
    pub fn is_kernel(self) -> bool {
        matches!(self, Variant::KdlOcsvm | Variant::KdplOcsvm)
    }

    /// Analysis variants learn a second operator that produces codes by a
    /// linear map of the data instead of by sparse coding.
    pub fn is_analysis(self) -> bool {
        matches!(self, Variant::DplOcsvm | Variant::KdplOcsvm)
    }

    pub const ALL: [Variant; 4] = [
        Variant::DlOcsvm,
        Variant::DplOcsvm,
        Variant::KdlOcsvm,
        Variant::KdplOcsvm,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DlOcsvm => "dl-ocsvm",
            Variant::DplOcsvm => "dpl-ocsvm",
            Variant::KdlOcsvm => "kdl-ocsvm",
            Variant::KdplOcsvm => "kdpl-ocsvm",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dl-ocsvm" => Ok(Variant::DlOcsvm),
            "dpl-ocsvm" => Ok(Variant::DplOcsvm),
            "kdl-ocsvm" => Ok(Variant::KdlOcsvm),
            "kdpl-ocsvm" => Ok(Variant::KdplOcsvm),
            other => Err(Error::param(format!(
                "unknown variant {other:?}; expected one of dl-ocsvm, dpl-ocsvm, kdl-ocsvm, kdpl-ocsvm"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub variant: Variant,
    pub n_atoms: usize,
    pub sparsity: usize,
    /// Row-norm penalty; also the trimming threshold of the residual test.
    pub beta: f64,
    /// Scale of the l1 penalty on analysis code rows (analysis variants).
    pub gamma: f64,
    /// Asymptotic fraction of training samples treated as outliers.
    pub nu_frac: f64,
    pub kernel: KernelSpec,
    pub outer_iters: usize,
    /// Row-norm floor below which an analysis code row is zeroed at
    /// detection time.
    pub trim_tol: f64,
    pub seed: u64,
}

impl Hyperparams {
    /// Linear-kernel defaults: `gamma` 0, six outer iterations, trim
    /// tolerance 1e-6, seed 0.
    pub fn new(variant: Variant, n_atoms: usize, sparsity: usize, beta: f64, nu_frac: f64) -> Self {
        Hyperparams {
            variant,
            n_atoms,
            sparsity,
            beta,
            gamma: 0.0,
            nu_frac,
            kernel: KernelSpec::Linear,
            outer_iters: 6,
            trim_tol: 1e-6,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::param("n_atoms must be at least 1"));
        }
        if self.sparsity == 0 || self.sparsity > self.n_atoms {
            return Err(Error::param(format!(
                "sparsity must be in 1..=n_atoms ({}), got {}",
                self.n_atoms, self.sparsity
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::param(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::param(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.nu_frac > 0.0 && self.nu_frac <= 1.0) {
            return Err(Error::param(format!("nu_frac must lie in (0, 1], got {}", self.nu_frac)));
        }
        if self.outer_iters == 0 {
            return Err(Error::param("outer_iters must be at least 1"));
        }
        if !(self.trim_tol >= 0.0) || !self.trim_tol.is_finite() {
            return Err(Error::param(format!(
                "trim_tol must be finite and >= 0, got {}",
                self.trim_tol
            )));
        }
        self.kernel.validate()
    }
}

/// Per-row weights for the analysis l1 penalty, derived from how often each
/// atom was used by the initial sparse encoding: `alpha_i` is the usage
/// count, normalized so the weight vector has unit l2 norm. The effective
/// penalty on row `i` is `gamma * alpha_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights {
    pub alpha: Array1<f64>,
}

impl AlphaWeights {
    pub fn from_initial_support(codes: &SparseCodes) -> Self {
        let counts: Vec<f64> = (0..codes.x.nrows()).map(|i| codes.row_usage(i) as f64).collect();
        let denom = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        let alpha = if denom > 0.0 {
            Array1::from_vec(counts) / denom
        } else {
            Array1::zeros(codes.x.nrows())
        };
        AlphaWeights { alpha }
    }
}

/// One entry of the loss trace. `inner` counts events within an outer
/// iteration: atom updates (in sweep order, skipping retired rows), then the
/// SVM refit as the last entry. The point `(0, 0)` is the state right after
/// the initial encoding and SVM fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub outer: usize,
    pub inner: usize,
    pub f: f64,
    pub g: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub variant: Variant,
    pub hp: Hyperparams,
    /// `D`, features x atoms (standard variants).
    pub dictionary: Option<Array2<f64>>,
    /// `P`, atoms x features (dpl-ocsvm).
    pub analysis: Option<Array2<f64>>,
    /// `A`, samples x atoms (kernel variants).
    pub coeff_dictionary: Option<Array2<f64>>,
    /// `B`, atoms x samples (kdpl-ocsvm).
    pub coeff_analysis: Option<Array2<f64>>,
    /// Training samples, kept because kernel detection needs cross-Gram
    /// evaluations against them.
    pub y_train: Option<Array2<f64>>,
    /// Derived Gram matrices of `y_train`; rebuilt on load, never persisted.
    pub gram: Option<GramPack>,
    pub ocsvm: OcsvmModel,
    pub alpha_weights: Option<AlphaWeights>,
    /// `false` marks rows retired during training; detection zeroes their
    /// codes before scoring.
    pub row_alive: Vec<bool>,
    pub loss_trace: Vec<TracePoint>,
    pub standardizer: Option<Standardizer>,
}

/// Which residual test decides whether a code row is trimmed at detection
/// time (synthesis variants only; analysis variants always use the row-norm
/// test against `trim_tol`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrimRule {
    /// Zero the row when the best rank-one fit of its residual block is
    /// weaker than `beta` — the same test the training update optimizes.
    #[default]
    SingularValue,
    /// Cheaper test that keeps the atom fixed: zero the row when the
    /// correlation of the residual block with the atom falls under `beta`.
    FixedAtom,
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    pub trim_rule: TrimRule,
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// SVM decision value per test sample.
    pub scores: Array1<f64>,
    /// Indices with non-positive score, ascending.
    pub anomalies: Vec<usize>,
    /// Codes after trimming, exactly the ones the scores were computed on.
    pub codes: SparseCodes,
}

/// Random dictionary with independent standard-normal entries and unit-norm
/// columns; deterministic per seed.
pub fn init_dictionary(n_features: usize, n_atoms: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Array2::zeros((n_features, n_atoms));
    for col in 0..n_atoms {
        loop {
            for row in 0..n_features {
                d[(row, col)] = rng.sample::<f64, _>(StandardNormal);
            }
            let nrm = norm2(&d.column(col).to_owned());
            if nrm > 1e-14 {
                d.column_mut(col).mapv_inplace(|v| v / nrm);
                break;
            }
        }
    }
    d
}

/// Random coefficient dictionary for kernel models: columns are rescaled so
/// `a' K a = 1`. A draw with `a' K a` at numerical zero is redrawn, so a
/// degenerate (e.g. all-zero) Gram matrix is rejected after bounded retries.
pub fn init_kernel_dictionary(pack: &GramPack, n_atoms: usize, seed: u64) -> Result<Array2<f64>> {
    let n = pack.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::zeros((n, n_atoms));
    for col in 0..n_atoms {
        let mut ok = false;
        for _ in 0..100 {
            let draw: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let q = draw.dot(&pack.k.dot(&draw));
            if q > 1e-14 {
                a.column_mut(col).assign(&(&draw / q.sqrt()));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::param(
                "cannot normalize a random kernel atom: the Gram matrix is numerically zero",
            ));
        }
    }
    Ok(a)
}

/// The data side of the loss: either the training matrix itself or, for
/// kernel variants, the precomputed Gram pack.
pub enum LossData<'a> {
    Standard(&'a Array2<f64>),
    Kernel(&'a GramPack),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Representation term: reconstruction energy plus row penalties.
    pub f: f64,
    /// SVM term `0.5 ||omega||^2 + (nu N)^{-1} sum xi - rho` with the slacks
    /// recomputed from the given codes.
    pub g: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.f + self.g
    }
}

/// Evaluate the full objective from scratch for an arbitrary (consistent)
/// state. The trainers call this for every trace point, so the trace and
/// this function can never drift apart.
pub fn total_loss(
    variant: Variant,
    data: LossData<'_>,
    dict: &Array2<f64>,
    codes: &Array2<f64>,
    alpha: Option<&AlphaWeights>,
    beta: f64,
    gamma: f64,
    svm: &OcsvmModel,
) -> Result<LossParts> {
    let k = dict.ncols();
    if codes.nrows() != k {
        return Err(Error::dim(format!(
            "total_loss: {} code rows for {} atoms",
            codes.nrows(),
            k
        )));
    }
    if svm.omega.len() != k {
        return Err(Error::dim("total_loss: SVM weight length does not match the atom count"));
    }
    if variant.is_analysis() && gamma > 0.0 && alpha.is_none() {
        return Err(Error::param("total_loss: analysis variants with gamma > 0 need alpha weights"));
    }
    if let Some(a) = alpha {
        if a.alpha.len() != k {
            return Err(Error::dim("total_loss: alpha weight length does not match the atom count"));
        }
    }

    let recon = match (&data, variant.is_kernel()) {
        (LossData::Standard(y), false) => {
            if y.nrows() != dict.nrows() || y.ncols() != codes.ncols() {
                return Err(Error::dim("total_loss: data, dictionary, and codes disagree in shape"));
            }
            let e = *y - &dict.dot(codes);
            0.5 * e.iter().map(|v| v * v).sum::<f64>()
        }
        (LossData::Kernel(pack), true) => {
            let n = pack.n();
            if dict.nrows() != n || codes.ncols() != n {
                return Err(Error::dim("total_loss: Gram size, dictionary, and codes disagree"));
            }
            let e = Array2::<f64>::eye(n) - &dict.dot(codes);
            let ke = pack.k.dot(&e);
            0.5 * (&e * &ke).sum()
        }
        _ => {
            return Err(Error::param(
                "total_loss: pass Standard data for dl/dpl and a Kernel pack for kdl/kdpl",
            ));
        }
    };

    let mut f = recon;
    for i in 0..k {
        let row = codes.row(i);
        f += beta * row.dot(&row).sqrt();
        if variant.is_analysis() && gamma > 0.0 {
            let a = alpha.expect("checked above");
            f += gamma * a.alpha[i] * row.iter().map(|v| v.abs()).sum::<f64>();
        }
    }

    Ok(LossParts { f, g: svm_loss(codes, svm) })
}

/// `G` evaluated at the current codes: slacks are recomputed, not taken from
/// the fit, so the value tracks code changes between refits.
fn svm_loss(codes: &Array2<f64>, svm: &OcsvmModel) -> f64 {
    let n = codes.ncols() as f64;
    let slack: f64 = codes
        .columns()
        .into_iter()
        .map(|c| (svm.rho - svm.omega.dot(&c)).max(0.0))
        .sum();
    0.5 * svm.omega.dot(&svm.omega) + slack / (svm.nu_frac * n) - svm.rho
}

pub fn train(y: &Array2<f64>, hp: &Hyperparams) -> Result<TrainedModel> {
    hp.validate()?;
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(Error::dim("train: empty data matrix"));
    }
    match hp.variant {
        Variant::DlOcsvm => train_dl(y, hp),
        Variant::DplOcsvm => train_dpl(y, hp),
        Variant::KdlOcsvm => train_kdl(y, hp),
        Variant::KdplOcsvm => train_kdpl(y, hp),
    }
}

fn train_svm_config() -> OcsvmConfig {
    OcsvmConfig {
        tol: TRAIN_SVM_TOL,
        ..OcsvmConfig::default()
    }
}

fn push_point(trace: &mut Vec<TracePoint>, outer: usize, inner: usize, parts: LossParts) {
    trace.push(TracePoint {
        outer,
        inner,
        f: parts.f,
        g: parts.g,
        total: parts.total(),
    });
}

fn select_columns(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((src.nrows(), idx.len()));
    for (c, &j) in idx.iter().enumerate() {
        out.column_mut(c).assign(&src.column(j));
    }
    out
}

fn scatter_columns(dst: &mut Array2<f64>, idx: &[usize], src: &Array2<f64>) {
    for (c, &j) in idx.iter().enumerate() {
        dst.column_mut(j).assign(&src.column(c));
    }
}

fn train_dl(y: &Array2<f64>, hp: &Hyperparams) -> Result<TrainedModel> {
    let m = y.nrows();
    let k = hp.n_atoms;
    let cfg = train_svm_config();

    let mut d = init_dictionary(m, k, hp.seed);
    let codes0 = omp(y, &d, hp.sparsity)?;
    let supports: Vec<Vec<usize>> = (0..k).map(|i| codes0.row_support(i)).collect();
    let mut x = codes0.x;
    let mut alive: Vec<bool> = supports.iter().map(|s| !s.is_empty()).collect();

    let mut svm = ocsvm::fit_with(&x, hp.nu_frac, None, &cfg)?;
    let mut trace = Vec::new();
    let loss = |d: &Array2<f64>, x: &Array2<f64>, svm: &OcsvmModel| {
        total_loss(hp.variant, LossData::Standard(y), d, x, None, hp.beta, 0.0, svm)
    };
    push_point(&mut trace, 0, 0, loss(&d, &x, &svm)?);

    for outer in 1..=hp.outer_iters {
        let mut e = y - &d.dot(&x);
        let mut inner = 0;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            let supp = &supports[i];
            let d_i = d.column(i).to_owned();
            let x_sub: Array1<f64> = supp.iter().map(|&j| x[(i, j)]).collect();
            let mut r_sub = select_columns(&e, supp);
            for (c, mut col) in r_sub.columns_mut().into_iter().enumerate() {
                col.scaled_add(x_sub[c], &d_i);
            }
            let coup = CoupledRow {
                w_i: svm.omega[i],
                lambda_restricted: supp.iter().map(|&j| svm.lambda[j]).collect(),
                beta: hp.beta,
                alpha: 0.0,
            };
            let (d_new, x_new) = update_pair_dl(&r_sub, &coup, &d_i)?;
            if x_new.iter().all(|&v| v == 0.0) {
                alive[i] = false;
                x.row_mut(i).fill(0.0);
                scatter_columns(&mut e, supp, &r_sub);
            } else {
                for (c, mut col) in r_sub.columns_mut().into_iter().enumerate() {
                    col.scaled_add(-x_new[c], &d_new);
                }
                scatter_columns(&mut e, supp, &r_sub);
                d.column_mut(i).assign(&d_new);
                for (c, &j) in supp.iter().enumerate() {
                    x[(i, j)] = x_new[c];
                }
            }
            inner += 1;
            push_point(&mut trace, outer, inner, loss(&d, &x, &svm)?);
        }
        let warm = svm.lambda.clone();
        svm = ocsvm::fit_with(&x, hp.nu_frac, Some(&warm), &cfg)?;
        push_point(&mut trace, outer, inner + 1, loss(&d, &x, &svm)?);
    }

    Ok(TrainedModel {
        variant: hp.variant,
        hp: hp.clone(),
        dictionary: Some(d),
        analysis: None,
        coeff_dictionary: None,
        coeff_analysis: None,
        y_train: None,
        gram: None,
        ocsvm: svm,
        alpha_weights: None,
        row_alive: alive,
        loss_trace: trace,
        standardizer: None,
    })
}

fn train_dpl(y: &Array2<f64>, hp: &Hyperparams) -> Result<TrainedModel> {
    let m = y.nrows();
    let k = hp.n_atoms;
    let cfg = train_svm_config();
    let saddle = SaddleConfig::default();

    let mut d = init_dictionary(m, k, hp.seed);
    // One initial sparse encoding, used only to derive the per-row penalty
    // weights and to seed the analysis operator; afterwards codes are X = PY.
    let codes0 = omp(y, &d, hp.sparsity)?;
    let alpha = AlphaWeights::from_initial_support(&codes0);
    let y_pinv = pinv(y, 1e-10)?;
    let mut p = codes0.x.dot(&y_pinv);
    let mut x = p.dot(y);
    let mut alive: Vec<bool> = (0..k).map(|i| x.row(i).iter().any(|&v| v != 0.0)).collect();

    let mut svm = ocsvm::fit_with(&x, hp.nu_frac, None, &cfg)?;
    let mut trace = Vec::new();
    let loss = |d: &Array2<f64>, x: &Array2<f64>, svm: &OcsvmModel| {
        total_loss(
            hp.variant,
            LossData::Standard(y),
            d,
            x,
            Some(&alpha),
            hp.beta,
            hp.gamma,
            svm,
        )
    };
    push_point(&mut trace, 0, 0, loss(&d, &x, &svm)?);

    for outer in 1..=hp.outer_iters {
        let mut e = y - &d.dot(&x);
        let mut inner = 0;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            let d_i = d.column(i).to_owned();
            let p_i = p.row(i).to_owned();
            let x_i = x.row(i).to_owned();
            let r = &e + &outer_product(&d_i, &x_i);
            let coup = CoupledRow {
                w_i: svm.omega[i],
                lambda_restricted: svm.lambda.clone(),
                beta: hp.beta,
                alpha: hp.gamma * alpha.alpha[i],
            };
            let up = update_pair_dpl(&r, y, &y_pinv, &coup, &d_i, &p_i, &saddle)?;
            if up.code_row.iter().all(|&v| v == 0.0) {
                alive[i] = false;
                x.row_mut(i).fill(0.0);
                p.row_mut(i).assign(&up.row);
                e = r;
            } else {
                e = &r - &outer_product(&up.atom, &up.code_row);
                d.column_mut(i).assign(&up.atom);
                p.row_mut(i).assign(&up.row);
                x.row_mut(i).assign(&up.code_row);
            }
            inner += 1;
            push_point(&mut trace, outer, inner, loss(&d, &x, &svm)?);
        }
        let warm = svm.lambda.clone();
        svm = ocsvm::fit_with(&x, hp.nu_frac, Some(&warm), &cfg)?;
        push_point(&mut trace, outer, inner + 1, loss(&d, &x, &svm)?);
    }

    Ok(TrainedModel {
        variant: hp.variant,
        hp: hp.clone(),
        dictionary: Some(d),
        analysis: Some(p),
        coeff_dictionary: None,
        coeff_analysis: None,
        y_train: None,
        gram: None,
        ocsvm: svm,
        alpha_weights: Some(alpha),
        row_alive: alive,
        loss_trace: trace,
        standardizer: None,
    })
}

fn train_kdl(y: &Array2<f64>, hp: &Hyperparams) -> Result<TrainedModel> {
    let pack = gram(y, &hp.kernel)?;
    let n = pack.n();
    let k = hp.n_atoms;
    let cfg = train_svm_config();

    let mut a = init_kernel_dictionary(&pack, k, hp.seed)?;
    let ka = pack.k.dot(&a);
    let dty = ka.t().to_owned();
    let dtd = a.t().dot(&ka);
    let codes0 = omp_gram(&dty, &dtd, hp.sparsity)?;
    let supports: Vec<Vec<usize>> = (0..k).map(|i| codes0.row_support(i)).collect();
    let mut x = codes0.x;
    let mut alive: Vec<bool> = supports.iter().map(|s| !s.is_empty()).collect();

    let mut svm = ocsvm::fit_with(&x, hp.nu_frac, None, &cfg)?;
    let mut trace = Vec::new();
    let loss = |a: &Array2<f64>, x: &Array2<f64>, svm: &OcsvmModel| {
        total_loss(hp.variant, LossData::Kernel(&pack), a, x, None, hp.beta, 0.0, svm)
    };
    push_point(&mut trace, 0, 0, loss(&a, &x, &svm)?);

    for outer in 1..=hp.outer_iters {
        let mut e = Array2::<f64>::eye(n) - &a.dot(&x);
        let mut inner = 0;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            let supp = &supports[i];
            let a_i = a.column(i).to_owned();
            let x_sub: Array1<f64> = supp.iter().map(|&j| x[(i, j)]).collect();
            let mut r_sub = select_columns(&e, supp);
            for (c, mut col) in r_sub.columns_mut().into_iter().enumerate() {
                col.scaled_add(x_sub[c], &a_i);
            }
            let coup = CoupledRow {
                w_i: svm.omega[i],
                lambda_restricted: supp.iter().map(|&j| svm.lambda[j]).collect(),
                beta: hp.beta,
                alpha: 0.0,
            };
            let (a_new, x_new) = update_pair_kdl(&r_sub, &pack, &coup, &a_i)?;
            if x_new.iter().all(|&v| v == 0.0) {
                alive[i] = false;
                x.row_mut(i).fill(0.0);
                scatter_columns(&mut e, supp, &r_sub);
            } else {
                for (c, mut col) in r_sub.columns_mut().into_iter().enumerate() {
                    col.scaled_add(-x_new[c], &a_new);
                }
                scatter_columns(&mut e, supp, &r_sub);
                a.column_mut(i).assign(&a_new);
                for (c, &j) in supp.iter().enumerate() {
                    x[(i, j)] = x_new[c];
                }
            }
            inner += 1;
            push_point(&mut trace, outer, inner, loss(&a, &x, &svm)?);
        }
        let warm = svm.lambda.clone();
        svm = ocsvm::fit_with(&x, hp.nu_frac, Some(&warm), &cfg)?;
        push_point(&mut trace, outer, inner + 1, loss(&a, &x, &svm)?);
    }

    Ok(TrainedModel {
        variant: hp.variant,
        hp: hp.clone(),
        dictionary: None,
        analysis: None,
        coeff_dictionary: Some(a),
        coeff_analysis: None,
        y_train: Some(y.clone()),
        gram: Some(pack),
        ocsvm: svm,
        alpha_weights: None,
        row_alive: alive,
        loss_trace: trace,
        standardizer: None,
    })
}

fn train_kdpl(y: &Array2<f64>, hp: &Hyperparams) -> Result<TrainedModel> {
    let pack = gram(y, &hp.kernel)?;
    let n = pack.n();
    let k = hp.n_atoms;
    let cfg = train_svm_config();
    let saddle = SaddleConfig::default();

    let mut a = init_kernel_dictionary(&pack, k, hp.seed)?;
    let ka = pack.k.dot(&a);
    let dty = ka.t().to_owned();
    let dtd = a.t().dot(&ka);
    let codes0 = omp_gram(&dty, &dtd, hp.sparsity)?;
    let alpha = AlphaWeights::from_initial_support(&codes0);
    let mut b = codes0.x.dot(&pack.kpinv);
    let mut x = b.dot(&pack.k);
    let mut alive: Vec<bool> = (0..k).map(|i| x.row(i).iter().any(|&v| v != 0.0)).collect();

    let mut svm = ocsvm::fit_with(&x, hp.nu_frac, None, &cfg)?;
    let mut trace = Vec::new();
    let loss = |a: &Array2<f64>, x: &Array2<f64>, svm: &OcsvmModel| {
        total_loss(
            hp.variant,
            LossData::Kernel(&pack),
            a,
            x,
            Some(&alpha),
            hp.beta,
            hp.gamma,
            svm,
        )
    };
    push_point(&mut trace, 0, 0, loss(&a, &x, &svm)?);

    for outer in 1..=hp.outer_iters {
        let mut e = Array2::<f64>::eye(n) - &a.dot(&x);
        let mut inner = 0;
        for i in 0..k {
            if !alive[i] {
                continue;
            }
            let a_i = a.column(i).to_owned();
            let b_i = b.row(i).to_owned();
            let x_i = x.row(i).to_owned();
            let r = &e + &outer_product(&a_i, &x_i);
            let coup = CoupledRow {
                w_i: svm.omega[i],
                lambda_restricted: svm.lambda.clone(),
                beta: hp.beta,
                alpha: hp.gamma * alpha.alpha[i],
            };
            let up = update_pair_kdpl(&r, &pack, &coup, &a_i, &b_i, &saddle)?;
            if up.code_row.iter().all(|&v| v == 0.0) {
                alive[i] = false;
                x.row_mut(i).fill(0.0);
                b.row_mut(i).assign(&up.row);
                e = r;
            } else {
                e = &r - &outer_product(&up.atom, &up.code_row);
                a.column_mut(i).assign(&up.atom);
                b.row_mut(i).assign(&up.row);
                x.row_mut(i).assign(&up.code_row);
            }
            inner += 1;
            push_point(&mut trace, outer, inner, loss(&a, &x, &svm)?);
        }
        let warm = svm.lambda.clone();
        svm = ocsvm::fit_with(&x, hp.nu_frac, Some(&warm), &cfg)?;
        push_point(&mut trace, outer, inner + 1, loss(&a, &x, &svm)?);
    }

    Ok(TrainedModel {
        variant: hp.variant,
        hp: hp.clone(),
        dictionary: None,
        analysis: None,
        coeff_dictionary: Some(a),
        coeff_analysis: Some(b),
        y_train: Some(y.clone()),
        gram: Some(pack),
        ocsvm: svm,
        alpha_weights: Some(alpha),
        row_alive: alive,
        loss_trace: trace,
        standardizer: None,
    })
}

pub fn detect(model: &TrainedModel, y_test: &Array2<f64>) -> Result<Detection> {
    detect_with(model, y_test, &DetectOptions::default())
}

pub fn detect_with(
    model: &TrainedModel,
    y_test: &Array2<f64>,
    opts: &DetectOptions,
) -> Result<Detection> {
    if y_test.ncols() == 0 {
        return Err(Error::dim("detect: no test samples"));
    }
    let standardized;
    let y = match &model.standardizer {
        Some(st) => {
            standardized = st.apply(y_test)?;
            &standardized
        }
        None => y_test,
    };
    match model.variant {
        Variant::DlOcsvm => detect_dl(model, y, opts),
        Variant::DplOcsvm => detect_dpl(model, y),
        Variant::KdlOcsvm => detect_kdl(model, y, opts),
        Variant::KdplOcsvm => detect_kdpl(model, y),
    }
}

fn need<'a, T>(opt: &'a Option<T>, what: &str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::ModelFormat(format!("model is missing {what}")))
}

fn zero_dead_rows(codes: &mut SparseCodes, alive: &[bool]) {
    for (i, &keep) in alive.iter().enumerate() {
        if !keep {
            codes.zero_row(i);
        }
    }
}

fn score_codes(svm: &OcsvmModel, codes: SparseCodes) -> Detection {
    let scores: Array1<f64> = codes
        .x
        .columns()
        .into_iter()
        .map(|c| svm.omega.dot(&c) - svm.rho)
        .collect();
    let anomalies = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= 0.0)
        .map(|(j, _)| j)
        .collect();
    Detection {
        scores,
        anomalies,
        codes,
    }
}

fn detect_dl(model: &TrainedModel, y: &Array2<f64>, opts: &DetectOptions) -> Result<Detection> {
    let d = need(&model.dictionary, "its dictionary")?;
    if y.nrows() != d.nrows() {
        return Err(Error::dim(format!(
            "detect: {} features, model was trained on {}",
            y.nrows(),
            d.nrows()
        )));
    }
    let mut codes = omp(y, d, model.hp.sparsity)?;
    zero_dead_rows(&mut codes, &model.row_alive);

    // One shared residual; each row's trimming test adds its own
    // contribution back, so the decisions do not depend on sweep order.
    let e = y - &d.dot(&codes.x);
    for i in 0..d.ncols() {
        if !model.row_alive[i] {
            continue;
        }
        let supp = codes.row_support(i);
        if supp.is_empty() {
            continue;
        }
        let d_i = d.column(i).to_owned();
        let mut r_sub = select_columns(&e, &supp);
        for (c, &j) in supp.iter().enumerate() {
            let coef = codes.x[(i, j)];
            r_sub.column_mut(c).scaled_add(coef, &d_i);
        }
        let crit = match opts.trim_rule {
            TrimRule::SingularValue => top_singular_triple(&r_sub, TRIM_SVD_TOL, 500).sigma,
            TrimRule::FixedAtom => norm2(&r_sub.t().dot(&d_i)),
        };
        if crit < model.hp.beta {
            codes.zero_row(i);
        }
    }
    Ok(score_codes(&model.ocsvm, codes))
}

fn detect_dpl(model: &TrainedModel, y: &Array2<f64>) -> Result<Detection> {
    let d = need(&model.dictionary, "its dictionary")?;
    let p = need(&model.analysis, "its analysis operator")?;
    if y.nrows() != d.nrows() {
        return Err(Error::dim(format!(
            "detect: {} features, model was trained on {}",
            y.nrows(),
            d.nrows()
        )));
    }
    let mut codes = omp(y, d, model.hp.sparsity)?;
    zero_dead_rows(&mut codes, &model.row_alive);
    for i in 0..p.nrows() {
        if !model.row_alive[i] {
            continue;
        }
        let response = y.t().dot(&p.row(i));
        if norm2(&response) < model.hp.trim_tol {
            codes.zero_row(i);
        }
    }
    Ok(score_codes(&model.ocsvm, codes))
}

fn detect_kdl(model: &TrainedModel, y: &Array2<f64>, opts: &DetectOptions) -> Result<Detection> {
    let a = need(&model.coeff_dictionary, "its coefficient dictionary")?;
    let y_train = need(&model.y_train, "its training samples")?;
    let pack = need(&model.gram, "its Gram matrices")?;
    let ktilde = cross_gram(y_train, y, &model.hp.kernel)?;
    let ka = pack.k.dot(a);
    let mut codes = omp_gram(&a.t().dot(&ktilde), &a.t().dot(&ka), model.hp.sparsity)?;
    zero_dead_rows(&mut codes, &model.row_alive);

    let e = pack.kpinv.dot(&ktilde) - a.dot(&codes.x);
    for i in 0..a.ncols() {
        if !model.row_alive[i] {
            continue;
        }
        let supp = codes.row_support(i);
        if supp.is_empty() {
            continue;
        }
        let a_i = a.column(i).to_owned();
        let mut r_sub = select_columns(&e, &supp);
        for (c, &j) in supp.iter().enumerate() {
            let coef = codes.x[(i, j)];
            r_sub.column_mut(c).scaled_add(coef, &a_i);
        }
        let crit = match opts.trim_rule {
            TrimRule::SingularValue => {
                // The residual lives in coefficient space; the energy that
                // matters is measured through the kernel, hence the half-Gram
                // factor in front.
                top_singular_triple(&pack.ksqrt.dot(&r_sub), TRIM_SVD_TOL, 500).sigma
            }
            TrimRule::FixedAtom => norm2(&r_sub.t().dot(&ka.column(i).to_owned())),
        };
        if crit < model.hp.beta {
            codes.zero_row(i);
        }
    }
    Ok(score_codes(&model.ocsvm, codes))
}

fn detect_kdpl(model: &TrainedModel, y: &Array2<f64>) -> Result<Detection> {
    let a = need(&model.coeff_dictionary, "its coefficient dictionary")?;
    let b = need(&model.coeff_analysis, "its coefficient analysis operator")?;
    let y_train = need(&model.y_train, "its training samples")?;
    let pack = need(&model.gram, "its Gram matrices")?;
    let ktilde = cross_gram(y_train, y, &model.hp.kernel)?;
    let ka = pack.k.dot(a);
    let mut codes = omp_gram(&a.t().dot(&ktilde), &a.t().dot(&ka), model.hp.sparsity)?;
    zero_dead_rows(&mut codes, &model.row_alive);
    for i in 0..b.nrows() {
        if !model.row_alive[i] {
            continue;
        }
        let response = ktilde.t().dot(&b.row(i));
        if norm2(&response) < model.hp.trim_tol {
            codes.zero_row(i);
        }
    }
    Ok(score_codes(&model.ocsvm, codes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelgram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
    }

    /// Samples that are exact sparse combinations of a hidden dictionary.
    /// Coefficients are positive so the code cloud sits away from the
    /// origin; an origin-symmetric cloud would make the one-class SVM
    /// degenerate (omega = 0) and every decision a coin flip.
    fn sparse_synthetic(
        rng: &mut ChaCha8Rng,
        m: usize,
        n_atoms: usize,
        n_samples: usize,
        s: usize,
    ) -> Array2<f64> {
        let d0 = init_dictionary(m, n_atoms, rng.gen());
        let mut y = Array2::zeros((m, n_samples));
        for j in 0..n_samples {
            for _ in 0..s {
                let atom = rng.gen_range(0..n_atoms);
                let coef = rng.gen_range(0.5..1.5);
                let col = d0.column(atom).to_owned();
                y.column_mut(j).scaled_add(coef, &col);
            }
        }
        y
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_str(&v.to_string()).unwrap(), v);
        }
        assert!(Variant::from_str("ocsvm").is_err());
    }

    #[test]
    fn hyperparams_validation_catches_bad_values() {
        let good = Hyperparams::new(Variant::DlOcsvm, 8, 3, 0.2, 0.5);
        assert!(good.validate().is_ok());
        for tweak in [
            |h: &mut Hyperparams| h.sparsity = 9,
            |h: &mut Hyperparams| h.sparsity = 0,
            |h: &mut Hyperparams| h.n_atoms = 0,
            |h: &mut Hyperparams| h.beta = -0.1,
            |h: &mut Hyperparams| h.gamma = f64::NAN,
            |h: &mut Hyperparams| h.nu_frac = 0.0,
            |h: &mut Hyperparams| h.nu_frac = 1.5,
            |h: &mut Hyperparams| h.outer_iters = 0,
            |h: &mut Hyperparams| h.trim_tol = -1.0,
            |h: &mut Hyperparams| h.kernel = KernelSpec::Rbf { sigma: 0.0 },
        ] {
            let mut bad = good.clone();
            tweak(&mut bad);
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn init_dictionary_is_unit_norm_and_deterministic() {
        let d = init_dictionary(7, 13, 42);
        for col in d.columns() {
            assert!((norm2(&col.to_owned()) - 1.0).abs() < 1e-12);
        }
        assert_eq!(d, init_dictionary(7, 13, 42));
        assert_ne!(d, init_dictionary(7, 13, 43));
    }

    #[test]
    fn kernel_init_with_identity_gram_matches_standard_init() {
        // Orthonormal columns give K = I under the linear kernel, so the
        // Gram normalization reduces to plain column normalization.
        let y = Array2::<f64>::eye(6);
        let pack = kernelgram::gram(&y, &KernelSpec::Linear).unwrap();
        let a = init_kernel_dictionary(&pack, 4, 9).unwrap();
        let d = init_dictionary(6, 4, 9);
        for (av, dv) in a.iter().zip(d.iter()) {
            assert!((av - dv).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_init_rejects_zero_gram() {
        let y = Array2::<f64>::zeros((3, 4));
        let pack = kernelgram::gram(&y, &KernelSpec::Linear).unwrap();
        assert!(init_kernel_dictionary(&pack, 2, 0).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = sparse_synthetic(&mut rng, 6, 8, 30, 2);
        for variant in [Variant::DlOcsvm, Variant::DplOcsvm] {
            let mut hp = Hyperparams::new(variant, 8, 2, 0.1, 0.5);
            hp.outer_iters = 2;
            hp.gamma = 0.05;
            let a = train(&y, &hp).unwrap();
            let b = train(&y, &hp).unwrap();
            assert_eq!(a.dictionary, b.dictionary);
            assert_eq!(a.analysis, b.analysis);
            assert_eq!(a.ocsvm.omega, b.ocsvm.omega);
            assert_eq!(a.ocsvm.rho, b.ocsvm.rho);
            assert_eq!(a.ocsvm.lambda, b.ocsvm.lambda);
            assert_eq!(a.loss_trace, b.loss_trace);
            assert_eq!(a.row_alive, b.row_alive);
        }
    }

    #[test]
    fn dl_training_reduces_reconstruction_error() {
        // Exact sparse data, no row penalty, and nu = 1 so the multipliers
        // are pinned uniform: training should strictly improve on the
        // initial encoding's reconstruction error, which is all of F here.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = sparse_synthetic(&mut rng, 8, 10, 60, 3);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 10, 3, 0.0, 1.0);
        hp.outer_iters = 3;
        hp.seed = 17;
        let model = train(&y, &hp).unwrap();
        let first = model.loss_trace.first().unwrap().f;
        let last = model.loss_trace.last().unwrap().f;
        assert!(
            last < first,
            "reconstruction error did not improve: {first} -> {last}"
        );
    }

    #[test]
    fn loss_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y = sparse_synthetic(&mut rng, 6, 8, 40, 2);
        for (variant, tol) in [
            (Variant::DlOcsvm, 1e-8),
            (Variant::KdlOcsvm, 1e-8),
            (Variant::DplOcsvm, 1e-6),
            (Variant::KdplOcsvm, 1e-6),
        ] {
            let mut hp = Hyperparams::new(variant, 8, 2, 0.1, 0.5);
            hp.outer_iters = 3;
            hp.gamma = 0.02;
            if variant.is_kernel() {
                hp.kernel = KernelSpec::Rbf { sigma: 2.0 };
            }
            let model = train(&y, &hp).unwrap();
            let trace = &model.loss_trace;
            assert!(trace.len() > 2);
            for w in trace.windows(2) {
                assert!(
                    w[1].total <= w[0].total + tol,
                    "{variant}: loss rose from {} to {} at outer {} inner {}",
                    w[0].total,
                    w[1].total,
                    w[1].outer,
                    w[1].inner
                );
            }
        }
    }

    #[test]
    fn total_loss_matches_naive_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for variant in Variant::ALL {
            let m = 4;
            let n = 12;
            let k = 5;
            let y = random_matrix(&mut rng, m, n);
            let codes = random_matrix(&mut rng, k, n);
            let alpha = AlphaWeights {
                alpha: Array1::from_shape_fn(k, |_| rng.gen_range(0.0..1.0)),
            };
            let svm = ocsvm::fit(&codes, 0.6, None).unwrap();
            let beta = 0.3;
            let gamma = 0.15;

            let pack;
            let (data, dict) = if variant.is_kernel() {
                pack = kernelgram::gram(&y, &KernelSpec::Rbf { sigma: 1.5 }).unwrap();
                (LossData::Kernel(&pack), random_matrix(&mut rng, n, k))
            } else {
                (LossData::Standard(&y), random_matrix(&mut rng, m, k))
            };
            let parts =
                total_loss(variant, data, &dict, &codes, Some(&alpha), beta, gamma, &svm).unwrap();

            // Naive re-evaluation with explicit loops only.
            let mut recon = 0.0;
            if variant.is_kernel() {
                let pack = kernelgram::gram(&y, &KernelSpec::Rbf { sigma: 1.5 }).unwrap();
                let mut e = vec![vec![0.0; n]; n];
                for r in 0..n {
                    for c in 0..n {
                        let mut v = if r == c { 1.0 } else { 0.0 };
                        for t in 0..k {
                            v -= dict[(r, t)] * codes[(t, c)];
                        }
                        e[r][c] = v;
                    }
                }
                for r in 0..n {
                    for c in 0..n {
                        let mut ke = 0.0;
                        for t in 0..n {
                            ke += pack.k[(r, t)] * e[t][c];
                        }
                        recon += e[r][c] * ke;
                    }
                }
                recon *= 0.5;
            } else {
                for r in 0..m {
                    for c in 0..n {
                        let mut v = y[(r, c)];
                        for t in 0..k {
                            v -= dict[(r, t)] * codes[(t, c)];
                        }
                        recon += 0.5 * v * v;
                    }
                }
            }
            let mut f = recon;
            for i in 0..k {
                let mut sq = 0.0;
                let mut l1 = 0.0;
                for j in 0..n {
                    sq += codes[(i, j)] * codes[(i, j)];
                    l1 += codes[(i, j)].abs();
                }
                f += beta * sq.sqrt();
                if variant.is_analysis() {
                    f += gamma * alpha.alpha[i] * l1;
                }
            }
            let mut slack = 0.0;
            for j in 0..n {
                let mut t = 0.0;
                for i in 0..k {
                    t += svm.omega[i] * codes[(i, j)];
                }
                slack += (svm.rho - t).max(0.0);
            }
            let g = 0.5 * svm.omega.iter().map(|v| v * v).sum::<f64>()
                + slack / (0.6 * n as f64)
                - svm.rho;

            assert!(
                (parts.f - f).abs() < 1e-10,
                "{variant}: F {} vs naive {f}",
                parts.f
            );
            assert!(
                (parts.g - g).abs() < 1e-10,
                "{variant}: G {} vs naive {g}",
                parts.g
            );
        }
    }

    #[test]
    fn doubling_beta_adds_exactly_the_row_norm_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = random_matrix(&mut rng, 5, 10);
        let dict = random_matrix(&mut rng, 5, 4);
        let codes = random_matrix(&mut rng, 4, 10);
        let svm = ocsvm::fit(&codes, 0.5, None).unwrap();
        let beta = 0.4;
        let lo = total_loss(Variant::DlOcsvm, LossData::Standard(&y), &dict, &codes, None, beta, 0.0, &svm)
            .unwrap();
        let hi = total_loss(Variant::DlOcsvm, LossData::Standard(&y), &dict, &codes, None, 2.0 * beta, 0.0, &svm)
            .unwrap();
        let row_norms: f64 = (0..4)
            .map(|i| {
                let r = codes.row(i);
                r.dot(&r).sqrt()
            })
            .sum();
        assert!((hi.f - lo.f - beta * row_norms).abs() < 1e-12);
        assert_eq!(hi.g, lo.g);
    }

    #[test]
    fn perfect_reconstruction_has_zero_f() {
        // Single sample sitting exactly at the SVM weight vector with
        // rho = ||omega||^2 and nu = 1: F vanishes, G = -||omega||^2 / 2.
        let dict = Array2::<f64>::eye(3);
        let codes = ndarray::array![[1.0], [2.0], [2.0]];
        let y = dict.dot(&codes);
        let omega = ndarray::array![1.0, 2.0, 2.0];
        let rho = omega.dot(&omega);
        let svm = OcsvmModel {
            omega: omega.clone(),
            rho,
            lambda: ndarray::array![1.0],
            xi: ndarray::array![0.0],
            nu_frac: 1.0,
            support_indices: vec![0],
        };
        let parts = total_loss(
            Variant::DlOcsvm,
            LossData::Standard(&y),
            &dict,
            &codes,
            None,
            0.0,
            0.0,
            &svm,
        )
        .unwrap();
        assert_eq!(parts.f, 0.0);
        assert!((parts.g - (0.5 * rho - rho)).abs() < 1e-15);
    }

    #[test]
    fn detect_on_training_data_respects_nu_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = sparse_synthetic(&mut rng, 8, 12, 80, 2);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 12, 2, 0.2, 0.3);
        hp.outer_iters = 3;
        let model = train(&y, &hp).unwrap();
        let det = detect(&model, &y).unwrap();
        let frac = det.anomalies.len() as f64 / 80.0;
        assert!(frac <= 0.3 + 0.1, "anomaly fraction {frac} outside band");
    }

    #[test]
    fn zero_test_sample_gets_score_minus_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let y = sparse_synthetic(&mut rng, 6, 8, 40, 2);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 8, 2, 0.1, 0.4);
        hp.outer_iters = 2;
        let model = train(&y, &hp).unwrap();

        let mut y_test = y.slice(ndarray::s![.., 0..5]).to_owned();
        y_test.column_mut(4).fill(0.0);
        let det = detect(&model, &y_test).unwrap();
        assert_eq!(det.scores[4], -model.ocsvm.rho);
        assert!(det.codes.x.column(4).iter().all(|&v| v == 0.0));
        if model.ocsvm.rho > 0.0 {
            assert!(det.anomalies.contains(&4));
        }
    }

    #[test]
    fn huge_beta_retires_every_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y = sparse_synthetic(&mut rng, 6, 8, 30, 2);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 8, 2, 100.0, 0.5);
        hp.outer_iters = 2;
        let model = train(&y, &hp).unwrap();
        assert!(model.row_alive.iter().all(|&a| !a));
        let det = detect(&model, &y).unwrap();
        for &s in det.scores.iter() {
            assert_eq!(s, -model.ocsvm.rho);
        }
    }

    #[test]
    fn trained_dictionaries_keep_their_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let y = sparse_synthetic(&mut rng, 6, 8, 30, 2);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 8, 2, 0.1, 0.5);
        hp.outer_iters = 2;
        let model = train(&y, &hp).unwrap();
        for col in model.dictionary.as_ref().unwrap().columns() {
            assert!((norm2(&col.to_owned()) - 1.0).abs() < 1e-12);
        }

        hp.variant = Variant::KdlOcsvm;
        hp.kernel = KernelSpec::Rbf { sigma: 2.0 };
        let model = train(&y, &hp).unwrap();
        let a = model.coeff_dictionary.as_ref().unwrap();
        let k = &model.gram.as_ref().unwrap().k;
        for col in a.columns() {
            let col = col.to_owned();
            let q = col.dot(&k.dot(&col));
            assert!((q - 1.0).abs() < 1e-6, "a'Ka = {q}");
        }
    }

    #[test]
    fn linear_kernel_detection_matches_the_standard_path() {
        // With a linear kernel and full-row-rank training data, the
        // coefficient model is the standard model with D = Y A: encoding,
        // trimming, and scores all coincide.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = sparse_synthetic(&mut rng, 5, 7, 25, 2);
        let mut hp = Hyperparams::new(Variant::KdlOcsvm, 7, 2, 0.15, 0.4);
        hp.outer_iters = 2;
        let kernel_model = train(&y, &hp).unwrap();

        let a = kernel_model.coeff_dictionary.as_ref().unwrap();
        let d = y.dot(a);
        let mut dl_hp = kernel_model.hp.clone();
        dl_hp.variant = Variant::DlOcsvm;
        let standard_model = TrainedModel {
            variant: Variant::DlOcsvm,
            hp: dl_hp,
            dictionary: Some(d),
            analysis: None,
            coeff_dictionary: None,
            coeff_analysis: None,
            y_train: None,
            gram: None,
            ocsvm: kernel_model.ocsvm.clone(),
            alpha_weights: None,
            row_alive: kernel_model.row_alive.clone(),
            loss_trace: Vec::new(),
            standardizer: None,
        };

        let y_test = sparse_synthetic(&mut rng, 5, 7, 15, 2);
        let kd = detect(&kernel_model, &y_test).unwrap();
        let sd = detect(&standard_model, &y_test).unwrap();
        assert_eq!(kd.anomalies, sd.anomalies);
        for (a, b) in kd.scores.iter().zip(sd.scores.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for (a, b) in kd.codes.x.iter().zip(sd.codes.x.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn detect_rejects_wrong_feature_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let y = sparse_synthetic(&mut rng, 6, 8, 30, 2);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 8, 2, 0.1, 0.5);
        hp.outer_iters = 1;
        let model = train(&y, &hp).unwrap();
        let bad = Array2::<f64>::zeros((7, 3));
        assert!(detect(&model, &bad).is_err());

        hp.variant = Variant::KdlOcsvm;
        let model = train(&y, &hp).unwrap();
        assert!(detect(&model, &bad).is_err());
    }

    #[test]
    fn fixed_atom_rule_is_no_stricter_than_the_default() {
        // sigma_1(R) >= ||R' d|| for unit d, so the fixed-atom test can only
        // trim more rows, never fewer.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let y = sparse_synthetic(&mut rng, 6, 8, 40, 2);
        let mut hp = Hyperparams::new(Variant::DlOcsvm, 8, 2, 0.3, 0.4);
        hp.outer_iters = 2;
        let model = train(&y, &hp).unwrap();
        let defaults = detect(&model, &y).unwrap();
        let fixed = detect_with(
            &model,
            &y,
            &DetectOptions {
                trim_rule: TrimRule::FixedAtom,
            },
        )
        .unwrap();
        for i in 0..8 {
            let kept_fixed = fixed.codes.x.row(i).iter().any(|&v| v != 0.0);
            let kept_default = defaults.codes.x.row(i).iter().any(|&v| v != 0.0);
            assert!(
                !kept_fixed || kept_default,
                "row {i} kept by the fixed-atom rule but trimmed by the default"
            );
        }
    }
}
