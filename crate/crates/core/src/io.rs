//! Serialization: model files and dataset directories.
//!
//! A model is one JSON document (schema version 1). Neuron parameters carry
//! a `form` tag so both the adLIF parameterization and the general matrix
//! form produced by adaptation round-trip exactly; floats are emitted with
//! shortest-round-trip encoding, so `load(save(m)) == m` bit for bit.
//!
//! A dataset is a directory: `manifest.json` (channel count, timestep
//! duration, label names, ordered sample list) plus one CSV per sample under
//! `samples/`, header row naming the channels, one row per timestep,
//! nonnegative integer counts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::NeuronForm;
use crate::linalg::Mat;
use crate::network::{ModelMeta, NetworkModel, Readout, SpikingLayer};
use crate::neuron::{AdLifParams, GeneralNeuron};
use crate::normstats::NormStats;
use crate::resample::{Sample, SpikeTensor};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: parse error: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("{path}: row {row}, column {column}: {detail}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: usize,
        detail: String,
    },
    #[error("unsupported format version {got} (expected {expected})")]
    Version { got: u32, expected: u32 },
    #[error("invalid model file: {0}")]
    BadModel(String),
    #[error("invalid dataset: {0}")]
    BadDataset(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Model file schema

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    meta: MetaDto,
    layers: Vec<LayerDto>,
    readout: ReadoutDto,
}

#[derive(Serialize, Deserialize)]
struct MetaDto {
    dt_ms: f64,
    bin_size: u32,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LayerDto {
    in_dim: usize,
    out_dim: usize,
    norm: NormDto,
    weights: Vec<f64>,
    recurrent: Option<Vec<f64>>,
    neurons: Vec<NeuronDto>,
}

#[derive(Serialize, Deserialize)]
struct NormDto {
    mu: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
    gain: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
enum NeuronDto {
    Adlif {
        alpha: f64,
        beta: f64,
        a: f64,
        b: f64,
        threshold: f64,
    },
    General {
        dim: usize,
        transition: Vec<f64>,
        feedback: Vec<f64>,
        input: Vec<f64>,
        recurrence: Vec<f64>,
        threshold: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct ReadoutDto {
    in_dim: usize,
    classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn neuron_to_dto(form: &NeuronForm<f64>) -> Result<NeuronDto> {
    let finite = |x: f64, what: &str| {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(IoError::BadModel(format!("non-finite {what}")))
        }
    };
    Ok(match form {
        NeuronForm::AdLif(p) => NeuronDto::Adlif {
            alpha: p.alpha,
            beta: p.beta,
            a: p.a,
            b: p.b,
            threshold: finite(p.threshold, "threshold")?,
        },
        NeuronForm::General(g) => NeuronDto::General {
            dim: g.dim(),
            transition: g.transition().data().to_vec(),
            feedback: g.feedback().data().to_vec(),
            input: g.input().data().to_vec(),
            recurrence: g.recurrence().data().to_vec(),
            threshold: finite(g.threshold(), "threshold")?,
        },
    })
}

fn neuron_from_dto(dto: &NeuronDto) -> Result<NeuronForm<f64>> {
    match dto {
        NeuronDto::Adlif {
            alpha,
            beta,
            a,
            b,
            threshold,
        } => AdLifParams::with_threshold(*alpha, *beta, *a, *b, *threshold)
            .map(NeuronForm::AdLif)
            .map_err(|e| IoError::BadModel(e.to_string())),
        NeuronDto::General {
            dim,
            transition,
            feedback,
            input,
            recurrence,
            threshold,
        } => {
            let make = |data: &[f64], rows, cols| {
                Mat::from_vec(rows, cols, data.to_vec())
                    .map_err(|e| IoError::BadModel(e.to_string()))
            };
            let g = GeneralNeuron::new(
                make(transition, *dim, *dim)?,
                make(feedback, *dim, 1)?,
                make(input, *dim, 1)?,
                make(recurrence, *dim, 1)?,
                *threshold,
            )
            .map_err(|e| IoError::BadModel(e.to_string()))?;
            Ok(NeuronForm::General(g))
        }
    }
}

/// Writes a model as a JSON document.
pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        meta: MetaDto {
            dt_ms: model.meta.dt_ms,
            bin_size: model.meta.bin_size,
            seed: model.meta.seed,
        },
        layers: model
            .layers
            .iter()
            .map(|layer| {
                Ok(LayerDto {
                    in_dim: layer.in_dim,
                    out_dim: layer.out_dim,
                    norm: NormDto {
                        mu: layer.norm.mu.clone(),
                        var: layer.norm.var.clone(),
                        eps: layer.norm.eps,
                        gain: layer.norm.gain.clone(),
                        bias: layer.norm.bias.clone(),
                    },
                    weights: layer.weights.clone(),
                    recurrent: layer.recurrent.clone(),
                    neurons: layer
                        .neurons
                        .iter()
                        .map(neuron_to_dto)
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?,
        readout: ReadoutDto {
            in_dim: model.readout.in_dim,
            classes: model.readout.classes,
            weights: model.readout.weights.clone(),
            bias: model.readout.bias.clone(),
        },
    };
    let mut text =
        serde_json::to_string_pretty(&file).map_err(|e| IoError::BadModel(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

/// Reads a model back, validating the schema version and every invariant.
pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(IoError::Version {
            got: file.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let layers = file
        .layers
        .iter()
        .map(|dto| {
            let norm = NormStats::new(
                dto.norm.mu.clone(),
                dto.norm.var.clone(),
                dto.norm.eps,
                dto.norm.gain.clone(),
                dto.norm.bias.clone(),
            )
            .map_err(|e| IoError::BadModel(e.to_string()))?;
            Ok(SpikingLayer {
                norm,
                weights: dto.weights.clone(),
                recurrent: dto.recurrent.clone(),
                neurons: dto
                    .neurons
                    .iter()
                    .map(neuron_from_dto)
                    .collect::<Result<_>>()?,
                in_dim: dto.in_dim,
                out_dim: dto.out_dim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = NetworkModel {
        layers,
        readout: Readout {
            in_dim: file.readout.in_dim,
            classes: file.readout.classes,
            weights: file.readout.weights,
            bias: file.readout.bias,
        },
        meta: ModelMeta {
            dt_ms: file.meta.dt_ms,
            bin_size: file.meta.bin_size,
            seed: file.meta.seed,
        },
    };
    model
        .validate()
        .map_err(|e| IoError::BadModel(e.to_string()))?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Dataset directory

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    channels: usize,
    dt_ms: f64,
    label_names: Vec<String>,
    samples: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: usize,
}

/// A dataset together with its label names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub label_names: Vec<String>,
}

impl Dataset {
    /// Wraps samples, naming labels `class0..classN`.
    pub fn with_default_names(samples: Vec<Sample>) -> Self {
        let n = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        let label_names = (0..n).map(|i| format!("class{i}")).collect();
        Self {
            samples,
            label_names,
        }
    }
}

/// Writes a dataset directory (`manifest.json` + `samples/<id>.csv`).
/// All samples must share one channel count and timestep duration.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let channels = dataset
        .samples
        .first()
        .map(|s| s.tensor.channels())
        .unwrap_or(0);
    let dt_ms = dataset
        .samples
        .first()
        .map(|s| s.tensor.dt_ms())
        .unwrap_or(1.0);
    for s in &dataset.samples {
        if s.tensor.channels() != channels {
            return Err(IoError::BadDataset("mixed channel counts".into()));
        }
        if (s.tensor.dt_ms() - dt_ms).abs() > 0.0 {
            return Err(IoError::BadDataset("mixed timestep durations".into()));
        }
        if s.label >= dataset.label_names.len() {
            return Err(IoError::BadDataset(format!(
                "label {} has no name (have {})",
                s.label,
                dataset.label_names.len()
            )));
        }
    }
    let samples_dir = dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(file_err(&samples_dir))?;
    let mut entries = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let id = format!("sample_{i:05}");
        let file = samples_dir.join(format!("{id}.csv"));
        let mut text = String::new();
        let header: Vec<String> = (0..channels).map(|c| format!("c{c}")).collect();
        text.push_str(&header.join(","));
        text.push('\n');
        for t in 0..s.tensor.timesteps() {
            let row: Vec<String> = (0..channels)
                .map(|c| s.tensor.at(c, t).to_string())
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let mut f = fs::File::create(&file).map_err(file_err(&file))?;
        f.write_all(text.as_bytes()).map_err(file_err(&file))?;
        entries.push(ManifestEntry { id, label: s.label });
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        channels,
        dt_ms,
        label_names: dataset.label_names.clone(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| IoError::BadDataset(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(file_err(&path))
}

/// Reads a dataset directory back, order-preserving.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(file_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: manifest_path.clone(),
        detail: e.to_string(),
    })?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(IoError::Version {
            got: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if entry.label >= manifest.label_names.len() {
            return Err(IoError::BadDataset(format!(
                "sample {} label {} not in label map",
                entry.id, entry.label
            )));
        }
        let path = dir.join("samples").join(format!("{}.csv", entry.id));
        let tensor = read_sample_csv(&path, manifest.channels, manifest.dt_ms)?;
        samples.push(Sample {
            tensor,
            label: entry.label,
        });
    }
    Ok(Dataset {
        samples,
        label_names: manifest.label_names,
    })
}

fn read_sample_csv(path: &Path, channels: usize, dt_ms: f64) -> Result<SpikeTensor> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Parse {
        path: path.to_path_buf(),
        detail: "missing header".into(),
    })?;
    let header_cols = header.split(',').count();
    if header_cols != channels {
        return Err(IoError::BadDataset(format!(
            "{}: header has {} columns, manifest says {} channels",
            path.display(),
            header_cols,
            channels
        )));
    }
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for (row_idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(channels);
        for (col_idx, cell) in line.split(',').enumerate() {
            if col_idx >= channels {
                return Err(IoError::Cell {
                    path: path.to_path_buf(),
                    row: row_idx + 2,
                    column: col_idx + 1,
                    detail: "more columns than channels".into(),
                });
            }
            let value: u32 = cell.trim().parse().map_err(|_| IoError::Cell {
                path: path.to_path_buf(),
                row: row_idx + 2,
                column: col_idx + 1,
                detail: format!("'{}' is not a nonnegative integer", cell.trim()),
            })?;
            row.push(value);
        }
        if row.len() != channels {
            return Err(IoError::Cell {
                path: path.to_path_buf(),
                row: row_idx + 2,
                column: row.len() + 1,
                detail: "missing columns".into(),
            });
        }
        rows.push(row);
    }
    let timesteps = rows.len();
    let mut counts = vec![0u32; channels * timesteps];
    for (t, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            counts[c * timesteps + t] = v;
        }
    }
    SpikeTensor::new(channels, timesteps, counts, dt_ms)
        .map_err(|e| IoError::BadDataset(e.to_string()))
}
