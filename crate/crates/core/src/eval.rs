//! Metrics and the three evaluation protocols: full-data grid search,
//! k-fold cross-validation with a held-out test split, and contamination
//! sweeps that retrain with an increasing number of outliers.
//!
//! The only metric is balanced accuracy — the arithmetic mean of the true
//! positive rate (outliers caught) and true negative rate (inliers passed) —
//! computed from integer confusion counts so `ba = (tpr + tnr) / 2` holds
//! exactly. Grid cells are independent and run in parallel; every selection
//! rule breaks ties by the earliest configuration index, so results do not
//! depend on scheduling.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataio::{kfold_split, standardize, Dataset};
use crate::kernelgram::KernelSpec;
use crate::models::{detect, train, Hyperparams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_negatives + self.true_negatives + self.false_positives
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub ba: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub confusion: Confusion,
}

/// Balanced accuracy of 0/1 predictions against 0/1 labels (1 = outlier).
/// Undefined, and an error, when the labels contain a single class.
pub fn balanced_accuracy(labels: &[u8], predicted: &[u8]) -> Result<Metrics> {
    if labels.len() != predicted.len() {
        return Err(Error::dim(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predicted.len()
        )));
    }
    if let Some(bad) = labels.iter().chain(predicted.iter()).find(|&&v| v > 1) {
        return Err(Error::param(format!("labels and predictions must be 0/1, got {bad}")));
    }
    let mut c = Confusion {
        true_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
        false_positives: 0,
    };
    for (&l, &p) in labels.iter().zip(predicted.iter()) {
        match (l, p) {
            (1, 1) => c.true_positives += 1,
            (1, 0) => c.false_negatives += 1,
            (0, 0) => c.true_negatives += 1,
            (0, 1) => c.false_positives += 1,
            _ => unreachable!(),
        }
    }
    let positives = c.true_positives + c.false_negatives;
    let negatives = c.true_negatives + c.false_positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let tpr = c.true_positives as f64 / positives as f64;
    let tnr = c.true_negatives as f64 / negatives as f64;
    Ok(Metrics {
        ba: (tpr + tnr) / 2.0,
        tpr,
        tnr,
        confusion: c,
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metrics: Metrics,
    /// Training wall time in seconds (monotonic clock).
    pub wall_train: f64,
    pub wall_test: f64,
    pub config: Hyperparams,
}

/// Selection objective; balanced accuracy is the only one implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    MaxBa,
}

/// Hyperparameter grid, expanded as the cartesian product
/// beta x gamma x nu x sigma x dictionary seed (in that nesting order).
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub betas: Vec<f64>,
    /// Only expanded for the analysis variants; others keep the base gamma.
    pub gammas: Vec<f64>,
    pub nu_fracs: Vec<f64>,
    /// RBF bandwidth grid; empty keeps the base kernel as-is.
    pub sigmas: Vec<f64>,
    pub dictionary_seeds: Vec<u64>,
    pub objective: Objective,
}

impl GridSpec {
    /// Grid with the given beta and nu lists, gamma fixed at 0, no sigma
    /// grid, and the conventional twenty dictionary seeds.
    pub fn new(betas: Vec<f64>, nu_fracs: Vec<f64>) -> Self {
        GridSpec {
            betas,
            gammas: vec![0.0],
            nu_fracs,
            sigmas: Vec::new(),
            dictionary_seeds: (0..20).collect(),
            objective: Objective::MaxBa,
        }
    }

    pub fn validate(&self, base: &Hyperparams) -> Result<()> {
        if self.betas.is_empty() || self.nu_fracs.is_empty() || self.dictionary_seeds.is_empty() {
            return Err(Error::param("grid needs at least one beta, nu, and dictionary seed"));
        }
        if base.variant.is_analysis() && self.gammas.is_empty() {
            return Err(Error::param("analysis variants need at least one gamma in the grid"));
        }
        if !self.sigmas.is_empty() && !matches!(base.kernel, KernelSpec::Rbf { .. }) {
            return Err(Error::param("a sigma grid requires the rbf kernel"));
        }
        Ok(())
    }

    pub fn configs(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let sigmas: Vec<Option<f64>> = if self.sigmas.is_empty() {
            vec![None]
        } else {
            self.sigmas.iter().copied().map(Some).collect()
        };
        let gammas: Vec<f64> = if base.variant.is_analysis() {
            self.gammas.clone()
        } else {
            vec![base.gamma]
        };
        let mut out = Vec::new();
        for &beta in &self.betas {
            for &gamma in &gammas {
                for &nu in &self.nu_fracs {
                    for &sigma in &sigmas {
                        for &seed in &self.dictionary_seeds {
                            let mut hp = base.clone();
                            hp.beta = beta;
                            hp.gamma = gamma;
                            hp.nu_frac = nu;
                            hp.seed = seed;
                            if let Some(s) = sigma {
                                hp.kernel = KernelSpec::Rbf { sigma: s };
                            }
                            out.push(hp);
                        }
                    }
                }
            }
        }
        out
    }
}

/// One grid cell; failures carry the error text so a long sweep survives
/// infeasible corners (e.g. nu too small for the sample count).
#[derive(Debug, Clone)]
pub struct GridCell {
    pub config: Hyperparams,
    pub outcome: std::result::Result<EvalReport, String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: EvalReport,
    pub cells: Vec<GridCell>,
}

/// Train and score one configuration: fit on `y_train`, detect on `y_eval`,
/// compare against `labels`. With `standardize` the scaler is fitted on the
/// training columns only and travels with the model.
fn run_cell(
    y_train: &Array2<f64>,
    y_eval: &Array2<f64>,
    labels: &[u8],
    hp: &Hyperparams,
    standardized: bool,
) -> Result<EvalReport> {
    let t0 = Instant::now();
    let model = if standardized {
        let (scaled, scaler) = standardize(y_train);
        let mut m = train(&scaled, hp)?;
        m.standardizer = Some(scaler);
        m
    } else {
        train(y_train, hp)?
    };
    let wall_train = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let detection = detect(&model, y_eval)?;
    let wall_test = t1.elapsed().as_secs_f64();

    let mut predicted = vec![0u8; y_eval.ncols()];
    for &j in &detection.anomalies {
        predicted[j] = 1;
    }
    Ok(EvalReport {
        metrics: balanced_accuracy(labels, &predicted)?,
        wall_train,
        wall_test,
        config: hp.clone(),
    })
}

fn require_labels<'a>(data: &'a Dataset, what: &str) -> Result<&'a [u8]> {
    let labels = data
        .labels
        .as_deref()
        .ok_or_else(|| Error::Eval(format!("{what} needs a labeled dataset")))?;
    if labels.len() != data.y.ncols() {
        return Err(Error::dim("label count does not match the sample count"));
    }
    Ok(labels)
}

/// Full-data protocol: every configuration trains and detects on the entire
/// dataset; the report with the highest balanced accuracy wins.
pub fn grid_search(
    data: &Dataset,
    base: &Hyperparams,
    grid: &GridSpec,
    standardized: bool,
) -> Result<GridOutcome> {
    grid.validate(base)?;
    let labels = require_labels(data, "grid search")?;
    let configs = grid.configs(base);

    let cells: Vec<GridCell> = configs
        .par_iter()
        .map(|hp| GridCell {
            config: hp.clone(),
            outcome: run_cell(&data.y, &data.y, labels, hp, standardized).map_err(|e| e.to_string()),
        })
        .collect();

    let best = cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok())
        .max_by(|a, b| {
            a.metrics
                .ba
                .partial_cmp(&b.metrics.ba)
                .expect("balanced accuracy is never NaN")
        })
        .cloned()
        .ok_or_else(|| Error::Eval("every grid cell failed".into()))?;
    Ok(GridOutcome { best, cells })
}

/// Deterministic per-purpose RNG stream derived from the user seed.
fn substream(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Split sample indices into (rest, test) with the class mix preserved on
/// both sides. Each class keeps at least one sample on each side.
pub fn stratified_split(
    labels: &[u8],
    test_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::param(format!("test fraction must lie in (0, 1), got {test_frac}")));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(substream(seed, 1));
    let mut rest = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Eval(format!(
                "class {class} has {} sample(s); a stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_frac).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        rest.extend_from_slice(&idx[n_test..]);
    }
    rest.sort_unstable();
    test.sort_unstable();
    Ok((rest, test))
}

fn gather(data: &Dataset, idx: &[usize]) -> (Array2<f64>, Vec<u8>) {
    let labels = data.labels.as_ref().expect("caller checked labels");
    let mut y = Array2::zeros((data.y.nrows(), idx.len()));
    let mut l = Vec::with_capacity(idx.len());
    for (c, &j) in idx.iter().enumerate() {
        y.column_mut(c).assign(&data.y.column(j));
        l.push(labels[j]);
    }
    (y, l)
}

#[derive(Debug, Clone)]
pub struct KfoldOutcome {
    /// Test-set report of the winning configuration retrained on the whole
    /// validation split.
    pub report: EvalReport,
    /// The winner's mean balanced accuracy across usable folds.
    pub cv_mean_ba: f64,
    /// Mean fold BA per configuration; `None` when no fold was usable.
    pub cells: Vec<(Hyperparams, Option<f64>)>,
}

/// Hold out a stratified test split, pick hyperparameters by k-fold
/// cross-validation on the rest, retrain the winner on that whole rest, and
/// report its accuracy on the held-out split.
///
/// Folds whose evaluation part is single-class (or whose training fails)
/// are skipped with a warning; a configuration with no usable fold is
/// dropped from the selection.
pub fn kfold_eval(
    data: &Dataset,
    base: &Hyperparams,
    grid: &GridSpec,
    k: usize,
    test_frac: f64,
    seed: u64,
    standardized: bool,
) -> Result<KfoldOutcome> {
    grid.validate(base)?;
    let labels = require_labels(data, "k-fold evaluation")?;
    let (validation_idx, test_idx) = stratified_split(labels, test_frac, seed)?;
    let (y_validation, labels_validation) = gather(data, &validation_idx);
    let (y_test, labels_test) = gather(data, &test_idx);

    let folds = kfold_split(validation_idx.len(), k, substream(seed, 2))?;
    let fold_data: Vec<(Array2<f64>, Array2<f64>, Vec<u8>)> = folds
        .iter()
        .map(|(train_rows, eval_rows)| {
            let sub = |rows: &[usize]| {
                let mut y = Array2::zeros((y_validation.nrows(), rows.len()));
                for (c, &j) in rows.iter().enumerate() {
                    y.column_mut(c).assign(&y_validation.column(j));
                }
                y
            };
            let eval_labels = eval_rows.iter().map(|&j| labels_validation[j]).collect();
            (sub(train_rows), sub(eval_rows), eval_labels)
        })
        .collect();

    let configs = grid.configs(base);
    let cells: Vec<(Hyperparams, Option<f64>)> = configs
        .par_iter()
        .map(|hp| {
            let mut scores = Vec::new();
            for (f, (y_tr, y_ev, l_ev)) in fold_data.iter().enumerate() {
                match run_cell(y_tr, y_ev, l_ev, hp, standardized) {
                    Ok(report) => scores.push(report.metrics.ba),
                    Err(e) => log::warn!("fold {f} skipped for one configuration: {e}"),
                }
            }
            let mean = if scores.is_empty() {
                None
            } else {
                Some(scores.iter().sum::<f64>() / scores.len() as f64)
            };
            (hp.clone(), mean)
        })
        .collect();

    let (best_hp, cv_mean_ba) = cells
        .iter()
        .filter_map(|(hp, ba)| ba.map(|b| (hp, b)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("mean BA is never NaN"))
        .map(|(hp, b)| (hp.clone(), b))
        .ok_or_else(|| Error::Eval("no configuration had a usable fold".into()))?;

    let report = run_cell(&y_validation, &y_test, &labels_test, &best_hp, standardized)?;
    Ok(KfoldOutcome {
        report,
        cv_mean_ba,
        cells,
    })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Outlier count asked for; `used` is after clamping to availability.
    pub requested: usize,
    pub used: usize,
    pub report: EvalReport,
}

/// Retrain with all inliers plus an increasing number of outliers, detecting
/// on the same constructed set each time. Outliers are consumed in one
/// seeded shuffled order, so the subsets are nested and the curve is
/// deterministic. A count of zero is skipped (single-class evaluation);
/// counts beyond availability are clamped, both with a warning.
pub fn contamination_sweep(
    data: &Dataset,
    hp: &Hyperparams,
    outlier_counts: &[usize],
    seed: u64,
    standardized: bool,
) -> Result<Vec<SweepPoint>> {
    let labels = require_labels(data, "contamination sweep")?;
    let inliers: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 0)
        .map(|(i, _)| i)
        .collect();
    let mut outliers: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| i)
        .collect();
    if inliers.is_empty() || outliers.is_empty() {
        return Err(Error::SingleClass);
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(substream(seed, 3));
    outliers.shuffle(&mut rng);

    let mut points = Vec::new();
    for &requested in outlier_counts {
        if requested == 0 {
            log::warn!("skipping outlier count 0: balanced accuracy needs both classes");
            continue;
        }
        let used = if requested > outliers.len() {
            log::warn!(
                "outlier count {requested} clamped to the {} available",
                outliers.len()
            );
            outliers.len()
        } else {
            requested
        };
        // Keep original column order so `used == all` reproduces the
        // full-data run exactly.
        let mut idx: Vec<usize> = inliers.iter().chain(outliers[..used].iter()).copied().collect();
        idx.sort_unstable();
        let (y, l) = gather(data, &idx);
        let report = run_cell(&y, &y, &l, hp, standardized)?;
        points.push(SweepPoint {
            requested,
            used,
            report,
        });
    }
    Ok(points)
}
