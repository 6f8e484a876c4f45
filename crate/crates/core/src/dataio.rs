//! CSV ingestion, feature standardization, fold splitting, and the
//! versioned model file.
//!
//! Data is kept column-per-sample (`Y` is features x samples) to match the
//! rest of the library; CSV files are row-per-sample, so loading transposes.
//! Model files are plain JSON with a top-level version field and matrices as
//! nested row-major arrays — large for kernel models (the training data is
//! embedded), but diffable and debuggable.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::kernelgram::gram;
use crate::models::{AlphaWeights, Hyperparams, TracePoint, TrainedModel, Variant};
use crate::ocsvm::OcsvmModel;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Features x samples.
    pub y: Array2<f64>,
    /// 0 = inlier, 1 = outlier.
    pub labels: Option<Vec<u8>>,
    pub feature_names: Option<Vec<String>>,
}

/// Load a CSV file, one row per sample. When `label_column` names a column
/// (requires a header), it is stripped from the features and parsed as 0/1
/// labels.
pub fn load_csv(path: &Path, label_column: Option<&str>, has_header: bool) -> Result<Dataset> {
    if label_column.is_some() && !has_header {
        return Err(Error::param(
            "a label column can only be selected by name when the file has a header",
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;

    let mut label_idx = None;
    let mut feature_names = None;
    if has_header {
        let headers = reader.headers().map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let names: Vec<String> = headers.iter().map(|s| s.trim().to_string()).collect();
        if let Some(want) = label_column {
            label_idx = Some(names.iter().position(|n| n == want).ok_or_else(|| {
                Error::DataFormat {
                    path: path.display().to_string(),
                    msg: format!("no column named {want:?} in the header"),
                }
            })?);
        }
        feature_names = Some(
            names
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != label_idx)
                .map(|(_, n)| n.clone())
                .collect(),
        );
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut arity = None;
    let header_offset = if has_header { 2 } else { 1 };
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            msg: format!("row {}: {e}", r + header_offset),
        })?;
        match arity {
            None => arity = Some(record.len()),
            Some(a) if a != record.len() => {
                return Err(Error::DataFormat {
                    path: path.display().to_string(),
                    msg: format!(
                        "row {} has {} fields, expected {a}",
                        r + header_offset,
                        record.len()
                    ),
                });
            }
            _ => {}
        }
        let mut features = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            let cell = field.trim();
            if Some(c) == label_idx {
                match cell {
                    "0" => labels.push(0),
                    "1" => labels.push(1),
                    other => {
                        return Err(Error::Csv {
                            path: path.display().to_string(),
                            row: r + header_offset,
                            col: c + 1,
                            msg: format!("label must be 0 or 1, got {other:?}"),
                        });
                    }
                }
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Csv {
                    path: path.display().to_string(),
                    row: r + header_offset,
                    col: c + 1,
                    msg: format!("cannot parse {cell:?} as a real number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        path: path.display().to_string(),
                        row: r + header_offset,
                        col: c + 1,
                        msg: format!("non-finite value {cell:?}"),
                    });
                }
                features.push(v);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::DataFormat {
            path: path.display().to_string(),
            msg: "no data rows".into(),
        });
    }
    let n = rows.len();
    let m = rows[0].len();
    let mut y = Array2::zeros((m, n));
    for (j, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            y[(i, j)] = v;
        }
    }
    Ok(Dataset {
        y,
        labels: label_idx.map(|_| labels),
        feature_names,
    })
}

/// Per-feature affine transform fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; 0.0 marks a constant feature that is
    /// only centered.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn apply(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        if y.nrows() != self.means.len() {
            return Err(Error::dim(format!(
                "standardizer was fitted on {} features, data has {}",
                self.means.len(),
                y.nrows()
            )));
        }
        let mut out = y.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let scale = if self.stds[i] > 0.0 { self.stds[i] } else { 1.0 };
            row.mapv_inplace(|v| (v - self.means[i]) / scale);
        }
        Ok(out)
    }

    pub fn invert(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        if y.nrows() != self.means.len() {
            return Err(Error::dim("standardizer feature count mismatch"));
        }
        let mut out = y.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let scale = if self.stds[i] > 0.0 { self.stds[i] } else { 1.0 };
            row.mapv_inplace(|v| v * scale + self.means[i]);
        }
        Ok(out)
    }
}

/// Center each feature and scale it to unit population variance. Constant
/// features (std below 1e-12) are centered only and recorded with a zero std.
pub fn standardize(y: &Array2<f64>) -> (Array2<f64>, Standardizer) {
    let n = y.ncols() as f64;
    let mut means = Vec::with_capacity(y.nrows());
    let mut stds = Vec::with_capacity(y.nrows());
    for row in y.rows() {
        let mean = row.sum() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        means.push(mean);
        stds.push(if std < 1e-12 { 0.0 } else { std });
    }
    let st = Standardizer { means, stds };
    let out = st.apply(y).expect("shape by construction");
    (out, st)
}

/// Shuffle 0..n and deal into k folds; returns (train, validation) index
/// pairs with sizes differing by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::param(format!(
            "fold count must satisfy 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &idx) in order.iter().enumerate() {
        folds[pos % k].push(idx);
    }
    Ok((0..k)
        .map(|f| {
            let validation = folds[f].clone();
            let train = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            (train, validation)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct OcsvmFile {
    omega: Vec<f64>,
    rho: f64,
    lambda: Vec<f64>,
    xi: Vec<f64>,
    nu_frac: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model_type: String,
    hyperparameters: Hyperparams,
    #[serde(skip_serializing_if = "Option::is_none")]
    dictionary: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    analysis: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeff_dictionary: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeff_analysis: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y_train: Option<Vec<Vec<f64>>>,
    ocsvm: OcsvmFile,
    trim_info: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    standardizer: Option<Standardizer>,
}

fn to_nested(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_nested(v: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    if v.is_empty() {
        return Err(Error::ModelFormat(format!("{what}: empty matrix")));
    }
    let cols = v[0].len();
    if v.iter().any(|r| r.len() != cols) {
        return Err(Error::ModelFormat(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = v.iter().flatten().copied().collect();
    Array2::from_shape_vec((v.len(), cols), flat)
        .map_err(|e| Error::ModelFormat(format!("{what}: {e}")))
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        model_type: model.variant.to_string(),
        hyperparameters: model.hp.clone(),
        dictionary: model.dictionary.as_ref().map(to_nested),
        analysis: model.analysis.as_ref().map(to_nested),
        coeff_dictionary: model.coeff_dictionary.as_ref().map(to_nested),
        coeff_analysis: model.coeff_analysis.as_ref().map(to_nested),
        y_train: model.y_train.as_ref().map(to_nested),
        ocsvm: OcsvmFile {
            omega: model.ocsvm.omega.to_vec(),
            rho: model.ocsvm.rho,
            lambda: model.ocsvm.lambda.to_vec(),
            xi: model.ocsvm.xi.to_vec(),
            nu_frac: model.ocsvm.nu_frac,
        },
        trim_info: model.row_alive.clone(),
        alpha_weights: model.alpha_weights.as_ref().map(|a| a.alpha.to_vec()),
        standardizer: model.standardizer.clone(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::ModelFormat(format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // Surface a clean version error even if the rest of the file fails to
    // parse against the current schema.
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(format!("{e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found: probe.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(format!("{e}")))?;

    let variant = Variant::from_str(&file.model_type)?;
    let n_samples = file.ocsvm.lambda.len();
    let support_indices = file
        .ocsvm
        .lambda
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 1e-8 / (file.ocsvm.nu_frac * n_samples as f64))
        .map(|(i, _)| i)
        .collect();
    let ocsvm = OcsvmModel {
        omega: Array1::from_vec(file.ocsvm.omega),
        rho: file.ocsvm.rho,
        lambda: Array1::from_vec(file.ocsvm.lambda),
        xi: Array1::from_vec(file.ocsvm.xi),
        nu_frac: file.ocsvm.nu_frac,
        support_indices,
    };

    let dictionary = file.dictionary.as_deref().map(|v| from_nested(v, "dictionary")).transpose()?;
    let analysis = file.analysis.as_deref().map(|v| from_nested(v, "analysis")).transpose()?;
    let coeff_dictionary = file
        .coeff_dictionary
        .as_deref()
        .map(|v| from_nested(v, "coeff_dictionary"))
        .transpose()?;
    let coeff_analysis = file
        .coeff_analysis
        .as_deref()
        .map(|v| from_nested(v, "coeff_analysis"))
        .transpose()?;
    let y_train = file.y_train.as_deref().map(|v| from_nested(v, "y_train")).transpose()?;

    let required = |present: bool, what: &str| -> Result<()> {
        if present {
            Ok(())
        } else {
            Err(Error::ModelFormat(format!("{variant} model file is missing {what}")))
        }
    };
    let gram_pack = match variant {
        Variant::DlOcsvm => {
            required(dictionary.is_some(), "the dictionary")?;
            None
        }
        Variant::DplOcsvm => {
            required(dictionary.is_some(), "the dictionary")?;
            required(analysis.is_some(), "the analysis matrix")?;
            None
        }
        Variant::KdlOcsvm | Variant::KdplOcsvm => {
            required(coeff_dictionary.is_some(), "the coefficient dictionary")?;
            if variant == Variant::KdplOcsvm {
                required(coeff_analysis.is_some(), "the coefficient analysis matrix")?;
            }
            required(y_train.is_some(), "the training data")?;
            // The Gram pack is derived state; rebuilding it keeps the file
            // smaller and guarantees it matches the stored training data.
            Some(gram(y_train.as_ref().unwrap(), &file.hyperparameters.kernel)?)
        }
    };

    Ok(TrainedModel {
        variant,
        hp: file.hyperparameters,
        dictionary,
        analysis,
        coeff_dictionary,
        coeff_analysis,
        y_train,
        gram: gram_pack,
        ocsvm,
        alpha_weights: file.alpha_weights.map(|a| AlphaWeights {
            alpha: Array1::from_vec(a),
        }),
        row_alive: file.trim_info,
        loss_trace: Vec::<TracePoint>::new(),
        standardizer: file.standardizer,
    })
}
