//! Data generation and ingestion, the synthetic recovery experiment and a
//! decision-level fusion pipeline over supplied posteriors.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ChimpError, Result};
use crate::ichimp::{materialize, ChimpParams};
use crate::integral::{chi_maxmin, chi_sort};
use crate::measure::{targets, FuzzyMeasure};
use crate::training::{grad_check, sgd_fit, Coordinate, TrainConfig};
use crate::xai::XaiReport;

/// Independent seed for job `stream` derived from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic {
        target: FuzzyMeasure<f64>,
        noise_multiplier: f64,
        seed: u64,
    },
    Ingested {
        path: PathBuf,
    },
}

/// Observations with scalar labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Noise-free labels, known for synthetic data.
    pub clean_labels: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let n = rows.first().ok_or(ChimpError::Empty("dataset has no rows"))?.len();
        if n == 0 {
            return Err(ChimpError::Data("rows have no inputs".into()));
        }
        if rows.len() != labels.len() {
            return Err(ChimpError::LengthMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ChimpError::Data(format!("row {r} has {} inputs, expected {n}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ChimpError::Data(format!("row {r} has a non-finite input")));
            }
        }
        if let Some(r) = labels.iter().position(|l| !l.is_finite()) {
            return Err(ChimpError::Data(format!("label {r} is not finite")));
        }
        Ok(Self {
            n,
            rows,
            labels,
            clean_labels: None,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header `h_1,…,h_n,label`; values in scientific notation at full precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.n).map(|i| format!("h_{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let record: Vec<String> = row.iter().chain(std::iter::once(label)).map(|v| format!("{v:e}")).collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let cols = header.len();
        if cols < 2 || &header[cols - 1] != "label" {
            return Err(ChimpError::Data(format!(
                "{}: expected header h_1,...,h_n,label",
                path.display()
            )));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .enumerate()
                .map(|(c, field)| {
                    field.trim().parse::<f64>().map_err(|_| {
                        ChimpError::Data(format!("row {line}, column {}: cannot parse {field:?}", &header[c]))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            labels.push(values[cols - 1]);
            rows.push(values[..cols - 1].to_vec());
        }
        Self::new(
            rows,
            labels,
            Provenance::Ingested {
                path: path.to_path_buf(),
            },
        )
    }

    /// Rows at `indices` as their own dataset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            n: self.n,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise standard deviations as multiples of the clean label std.
    pub multipliers: Vec<f64>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            multipliers: vec![0.0, 0.01, 0.05, 0.1, 0.3, 0.5],
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty() {
            return Err(ChimpError::Config("no noise levels given".into()));
        }
        if let Some(m) = self.multipliers.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(ChimpError::Config(format!("noise multiplier {m} must be a finite value >= 0")));
        }
        Ok(())
    }
}

fn population_std(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt()
}

/// `m` rows uniform in `[0,1]^n` labelled by the Choquet integral of
/// `target`, plus Gaussian noise with std `multiplier · σ_y`.
///
/// Rows and the standard-normal draws depend only on `seed`, so datasets
/// that differ only in `multiplier` share their inputs and noise direction.
pub fn generate(target: &FuzzyMeasure<f64>, m: usize, multiplier: f64, seed: u64) -> Result<Dataset> {
    let validation = target.validate();
    if !validation.is_valid() {
        return Err(ChimpError::InvalidMeasure(format!("{:?}", validation.violations)));
    }
    if m == 0 {
        return Err(ChimpError::Empty("requested zero samples"));
    }
    if !(multiplier >= 0.0 && multiplier.is_finite()) {
        return Err(ChimpError::Config(format!("noise multiplier {multiplier} must be >= 0")));
    }
    let n = target.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let clean = rows
        .iter()
        .map(|r| chi_sort(target, r))
        .collect::<Result<Vec<f64>>>()?;
    let sigma = multiplier * population_std(&clean);
    let labels = clean.iter().zip(&z).map(|(c, z)| c + sigma * z).collect();
    let mut data = Dataset::new(
        rows,
        labels,
        Provenance::Synthetic {
            target: target.clone(),
            noise_multiplier: multiplier,
            seed,
        },
    )?;
    data.clean_labels = Some(clean);
    Ok(data)
}

/// Shuffled split into `round(fraction · m)` training and the remaining test indices.
pub fn split_indices(m: usize, fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let cut = ((fraction * m as f64).round() as usize).min(m);
    let test = idx.split_off(cut);
    (idx, test)
}

/// Mean squared error between network outputs and `labels`.
pub fn prediction_mse(g: &FuzzyMeasure<f64>, rows: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (h, l) in rows.iter().zip(labels) {
        total += (chi_sort(g, h)? - l).powi(2);
    }
    Ok(total / rows.len() as f64)
}

/// Mean squared difference over the nonempty subsets.
pub fn measure_mse(learned: &FuzzyMeasure<f64>, target: &FuzzyMeasure<f64>) -> Result<f64> {
    if learned.n() != target.n() {
        return Err(ChimpError::DimensionMismatch {
            expected: target.n(),
            got: learned.n(),
        });
    }
    let full = target.full_mask();
    Ok((1..=full).map(|a| (learned.get(a) - target.get(a)).powi(2)).sum::<f64>() / full as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Config {
    pub train: TrainConfig,
    pub noise: NoiseSpec,
    pub samples: usize,
    pub train_fraction: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            noise: NoiseSpec::default(),
            samples: 300,
            train_fraction: 0.8,
        }
    }
}

/// Outcome of one fit. Errors are measured against the noise-free labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub target: String,
    pub noise_multiplier: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub fm_mse: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp1Cell {
    pub target: String,
    pub noise_multiplier: f64,
    pub completed: usize,
    pub failed: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub fm_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp1Results {
    pub config: Exp1Config,
    pub cells: Vec<Exp1Cell>,
    pub trials: Vec<TrialMetrics>,
}

/// Fits every `(target, noise level, trial)` combination. Per target, the
/// inputs and noise direction are shared across noise levels, and each
/// trial's split and initialization are shared across noise levels.
pub fn run_experiment1(cfg: &Exp1Config, measures: &[(&str, FuzzyMeasure<f64>)]) -> Result<Exp1Results> {
    cfg.train.validate()?;
    cfg.noise.validate()?;
    if cfg.train.trials == 0 {
        return Err(ChimpError::Config("trials must be at least 1".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(ChimpError::Config(format!(
            "train fraction {} must lie in (0, 1)",
            cfg.train_fraction
        )));
    }
    let base = cfg.noise.seed ^ cfg.train.seed.rotate_left(32);
    let mut datasets = Vec::new();
    for (t, (_, target)) in measures.iter().enumerate() {
        let seed = derive_seed(base, t as u64);
        let per_level = cfg
            .noise
            .multipliers
            .iter()
            .map(|&mult| generate(target, cfg.samples, mult, seed))
            .collect::<Result<Vec<_>>>()?;
        datasets.push(per_level);
    }

    let jobs: Vec<(usize, usize, usize)> = (0..measures.len())
        .flat_map(|t| {
            (0..cfg.noise.multipliers.len()).flat_map(move |l| (0..cfg.train.trials).map(move |k| (t, l, k)))
        })
        .collect();
    let trials: Vec<TrialMetrics> = jobs
        .par_iter()
        .map(|&(t, l, k)| {
            let (name, target) = &measures[t];
            let data = &datasets[t][l];
            let trial_seed = derive_seed(base, 1_000_000 + (t * 10_000 + k) as u64);
            let mut metrics = TrialMetrics {
                target: name.to_string(),
                noise_multiplier: cfg.noise.multipliers[l],
                trial: k,
                trial_seed,
                train_mse: f64::NAN,
                test_mse: f64::NAN,
                fm_mse: f64::NAN,
                error: None,
            };
            let outcome = (|| -> Result<(f64, f64, f64)> {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                let (train_idx, test_idx) = split_indices(data.len(), cfg.train_fraction, &mut rng);
                let train = data.subset(&train_idx);
                let test = data.subset(&test_idx);
                let fit_cfg = TrainConfig {
                    seed: trial_seed,
                    ..cfg.train.clone()
                };
                let fit = sgd_fit(&train.rows, &train.labels, &fit_cfg)?;
                let g = materialize(&fit.params).g;
                let clean = |d: &Dataset| d.clean_labels.clone().unwrap_or_else(|| d.labels.clone());
                Ok((
                    prediction_mse(&g, &train.rows, &clean(&train))?,
                    prediction_mse(&g, &test.rows, &clean(&test))?,
                    measure_mse(&g, target)?,
                ))
            })();
            match outcome {
                Ok((train_mse, test_mse, fm_mse)) => {
                    metrics.train_mse = train_mse;
                    metrics.test_mse = test_mse;
                    metrics.fm_mse = fm_mse;
                }
                Err(e) => {
                    log::warn!("{name} noise {} trial {k} failed: {e}", metrics.noise_multiplier);
                    metrics.error = Some(e.to_string());
                }
            }
            metrics
        })
        .collect();

    let cells = trials
        .chunks(cfg.train.trials)
        .map(|chunk| {
            let ok: Vec<&TrialMetrics> = chunk.iter().filter(|m| m.error.is_none()).collect();
            let mean = |f: fn(&TrialMetrics) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
                }
            };
            Exp1Cell {
                target: chunk[0].target.clone(),
                noise_multiplier: chunk[0].noise_multiplier,
                completed: ok.len(),
                failed: chunk.len() - ok.len(),
                train_mse: mean(|m| m.train_mse),
                test_mse: mean(|m| m.test_mse),
                fm_mse: mean(|m| m.fm_mse),
            }
        })
        .collect();
    Ok(Exp1Results {
        config: cfg.clone(),
        cells,
        trials,
    })
}

/// The four recovery targets with their names.
pub fn experiment1_targets() -> Vec<(&'static str, FuzzyMeasure<f64>)> {
    targets::all::<f64>().into_iter().collect()
}

impl Exp1Results {
    pub fn cell(&self, target: &str, multiplier: f64) -> Option<&Exp1Cell> {
        self.cells
            .iter()
            .find(|c| c.target == target && c.noise_multiplier == multiplier)
    }

    pub fn target_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for c in &self.cells {
            if !names.contains(&c.target) {
                names.push(c.target.clone());
            }
        }
        names
    }

    /// One row per target: test-label MSE then measure MSE at each noise level.
    pub fn table_csv(&self) -> String {
        let levels = &self.config.noise.multipliers;
        let mut out = String::from("measure");
        for prefix in ["label", "fm"] {
            for m in levels {
                out.push_str(&format!(",{prefix}_{m}"));
            }
        }
        out.push('\n');
        for name in self.target_names() {
            out.push_str(&name);
            for pick in [|c: &Exp1Cell| c.test_mse, |c: &Exp1Cell| c.fm_mse] {
                for &m in levels {
                    let v = self.cell(&name, m).map(pick).unwrap_or(f64::NAN);
                    out.push_str(&format!(",{v:e}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Long-form per-cell means.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("measure,noise_multiplier,completed,failed,train_mse,test_mse,fm_mse\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e}\n",
                c.target, c.noise_multiplier, c.completed, c.failed, c.train_mse, c.test_mse, c.fm_mse
            ));
        }
        out
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from("measure,noise_multiplier,trial,trial_seed,train_mse,test_mse,fm_mse,error\n");
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{}\n",
                t.target,
                t.noise_multiplier,
                t.trial,
                t.trial_seed,
                t.train_mse,
                t.test_mse,
                t.fm_mse,
                t.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// One measure shared by all classes.
    #[default]
    Shared,
    /// One measure per class.
    PerClass,
}

/// Class posteriors of `K` source models on the same rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTask {
    pub model_names: Vec<String>,
    pub classes: usize,
    pub ids: Vec<String>,
    /// Zero-based true class of each row.
    pub labels: Vec<usize>,
    /// `posteriors[model][row][class]`.
    pub posteriors: Vec<Vec<Vec<f64>>>,
    /// Fold of each row.
    pub folds: Vec<usize>,
    pub mode: FusionMode,
}

/// Layout of a bundled posterior file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorBundle {
    pub classes: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub models: Vec<ModelPosteriors>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelPosteriors {
    pub name: String,
    pub posteriors: Vec<Vec<f64>>,
}

impl FusionTask {
    pub fn new(
        model_names: Vec<String>,
        ids: Vec<String>,
        labels: Vec<usize>,
        posteriors: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if posteriors.is_empty() {
            return Err(ChimpError::Empty("no source models"));
        }
        if ids.is_empty() {
            return Err(ChimpError::Empty("no rows"));
        }
        if model_names.len() != posteriors.len() {
            return Err(ChimpError::LengthMismatch {
                expected: posteriors.len(),
                got: model_names.len(),
            });
        }
        if labels.len() != ids.len() {
            return Err(ChimpError::LengthMismatch {
                expected: ids.len(),
                got: labels.len(),
            });
        }
        let classes = posteriors[0].first().map_or(0, Vec::len);
        if classes < 2 {
            return Err(ChimpError::Data(format!("need at least two classes, got {classes}")));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(ChimpError::Data(format!("duplicate row id {dup:?}")));
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(ChimpError::Data(format!(
                    "row {:?}: label {label} outside 0..{classes}",
                    ids[row]
                )));
            }
        }
        for (name, matrix) in model_names.iter().zip(&posteriors) {
            if matrix.len() != ids.len() {
                return Err(ChimpError::Data(format!(
                    "model {name}: {} rows, expected {}",
                    matrix.len(),
                    ids.len()
                )));
            }
            for (row, p) in matrix.iter().enumerate() {
                if p.len() != classes {
                    return Err(ChimpError::Data(format!(
                        "model {name}, row {:?}: {} posteriors, expected {classes}",
                        ids[row],
                        p.len()
                    )));
                }
                if let Some(c) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(ChimpError::Data(format!(
                        "model {name}, row {:?}, column p_{}: posterior {} outside [0, 1]",
                        ids[row],
                        c + 1,
                        p[c]
                    )));
                }
            }
        }
        Ok(Self {
            model_names,
            classes,
            folds: vec![0; ids.len()],
            ids,
            labels,
            posteriors,
            mode: FusionMode::Shared,
        })
    }

    pub fn sources(&self) -> usize {
        self.posteriors.len()
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    /// Random balanced assignment of rows to `k` folds.
    pub fn assign_folds(&mut self, k: usize, seed: u64) -> Result<()> {
        if k < 2 || k > self.rows() {
            return Err(ChimpError::Config(format!(
                "cannot split {} rows into {k} folds",
                self.rows()
            )));
        }
        let mut idx: Vec<usize> = (0..self.rows()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (pos, &row) in idx.iter().enumerate() {
            self.folds[row] = pos % k;
        }
        Ok(())
    }

    pub fn fold_count(&self) -> usize {
        self.folds.iter().max().map_or(0, |m| m + 1)
    }

    /// Inputs to the fused score of `class` on `row`: each source's posterior for that class.
    pub fn class_inputs(&self, row: usize, class: usize) -> Vec<f64> {
        self.posteriors.iter().map(|m| m[row][class]).collect()
    }

    /// Accuracy of each source's own argmax on `rows`.
    pub fn source_accuracies(&self, rows: &[usize]) -> Vec<f64> {
        self.posteriors
            .iter()
            .map(|m| {
                let hits = rows.iter().filter(|&&r| argmax(&m[r]) == self.labels[r]).count();
                hits as f64 / rows.len() as f64
            })
            .collect()
    }

    pub fn to_bundle(&self) -> PosteriorBundle {
        PosteriorBundle {
            classes: self.classes,
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            models: self
                .model_names
                .iter()
                .zip(&self.posteriors)
                .map(|(name, p)| ModelPosteriors {
                    name: name.clone(),
                    posteriors: p.clone(),
                })
                .collect(),
        }
    }

    /// One CSV per model, `id,p_1,…,p_C,label`, named after the model.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, matrix) in self.model_names.iter().zip(&self.posteriors) {
            let path = dir.join(format!("{name}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["id".to_string()];
            header.extend((1..=self.classes).map(|c| format!("p_{c}")));
            header.push("label".into());
            w.write_record(&header)?;
            for (row, p) in matrix.iter().enumerate() {
                let mut record = vec![self.ids[row].clone()];
                record.extend(p.iter().map(|v| format!("{v:e}")));
                record.push(self.labels[row].to_string());
                w.write_record(&record)?;
            }
            w.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

struct ModelFile {
    name: String,
    ids: Vec<String>,
    labels: Vec<usize>,
    posteriors: Vec<Vec<f64>>,
}

fn read_model_csv(path: &Path) -> Result<ModelFile> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let cols = header.len();
    if cols < 4 || &header[0] != "id" || &header[cols - 1] != "label" {
        return Err(ChimpError::Data(format!(
            "{}: expected header id,p_1,...,p_C,label",
            path.display()
        )));
    }
    let mut file = ModelFile {
        name,
        ids: Vec::new(),
        labels: Vec::new(),
        posteriors: Vec::new(),
    };
    for record in reader.records() {
        let record = record?;
        let id = record[0].trim().to_string();
        let label_field = record[cols - 1].trim();
        if label_field.is_empty() {
            return Err(ChimpError::Data(format!("{}: row {id:?} has no label", path.display())));
        }
        let label = label_field.parse::<usize>().map_err(|_| {
            ChimpError::Data(format!("{}: row {id:?}: bad label {label_field:?}", path.display()))
        })?;
        let p = (1..cols - 1)
            .map(|c| {
                let field = record[c].trim();
                let v = field.parse::<f64>().map_err(|_| {
                    ChimpError::Data(format!(
                        "{}: row {id:?}, column {}: cannot parse {field:?}",
                        path.display(),
                        &header[c]
                    ))
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(ChimpError::Data(format!(
                        "{}: row {id:?}, column {}: posterior {v} outside [0, 1]",
                        path.display(),
                        &header[c]
                    )));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        file.ids.push(id);
        file.labels.push(label);
        file.posteriors.push(p);
    }
    Ok(file)
}

/// Per-model CSV files aligned on row id. Rows follow the first file's order.
pub fn ingest_posterior_files(paths: &[PathBuf]) -> Result<FusionTask> {
    let files = paths.iter().map(|p| read_model_csv(p)).collect::<Result<Vec<_>>>()?;
    let first = files.first().ok_or(ChimpError::Empty("no posterior files"))?;
    let ids = first.ids.clone();
    let labels = first.labels.clone();
    let mut posteriors = Vec::with_capacity(files.len());
    for (file, path) in files.iter().zip(paths) {
        let index: HashMap<&str, usize> = file.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        if let Some(extra) = file.ids.iter().find(|id| !ids.contains(id)) {
            return Err(ChimpError::Data(format!(
                "{}: row id {extra:?} is not present in {}",
                path.display(),
                paths[0].display()
            )));
        }
        let mut matrix = Vec::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            let &k = index.get(id.as_str()).ok_or_else(|| {
                ChimpError::Data(format!("{}: row id {id:?} is missing", path.display()))
            })?;
            if file.labels[k] != labels[row] {
                return Err(ChimpError::Data(format!(
                    "{}: row id {id:?} has label {}, other files say {}",
                    path.display(),
                    file.labels[k],
                    labels[row]
                )));
            }
            matrix.push(file.posteriors[k].clone());
        }
        posteriors.push(matrix);
    }
    FusionTask::new(files.iter().map(|f| f.name.clone()).collect(), ids, labels, posteriors)
}

/// A bundled JSON file, or a directory holding one CSV per model (in file-name order).
pub fn ingest_posteriors(path: &Path) -> Result<FusionTask> {
    if path.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        return ingest_posterior_files(&paths);
    }
    if path.extension().is_some_and(|x| x == "csv") {
        return ingest_posterior_files(&[path.to_path_buf()]);
    }
    let bundle: PosteriorBundle = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let task = FusionTask::new(
        bundle.models.iter().map(|m| m.name.clone()).collect(),
        bundle.ids,
        bundle.labels,
        bundle.models.into_iter().map(|m| m.posteriors).collect(),
    )?;
    if task.classes != bundle.classes {
        return Err(ChimpError::Data(format!(
            "bundle declares {} classes, posteriors have {}",
            bundle.classes, task.classes
        )));
    }
    Ok(task)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedMeasure {
    pub fold: usize,
    /// `None` for the shared measure.
    pub class: Option<usize>,
    pub measure: FuzzyMeasure<f64>,
    pub report: XaiReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_rows: usize,
    pub accuracy: f64,
    pub source_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionResult {
    pub mode: FusionMode,
    pub folds: Vec<FoldResult>,
    pub skipped_folds: Vec<usize>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    /// Mean per-fold accuracy of each source alone.
    pub source_mean_accuracies: Vec<f64>,
    pub measures: Vec<FusedMeasure>,
}

impl FusionResult {
    pub fn best_source_accuracy(&self) -> f64 {
        self.source_mean_accuracies.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn folds_csv(&self) -> String {
        let sources = self.source_mean_accuracies.len();
        let mut out = String::from("fold,test_rows,fused_accuracy");
        for k in 1..=sources {
            out.push_str(&format!(",source_{k}_accuracy"));
        }
        out.push('\n');
        for f in &self.folds {
            out.push_str(&format!("{},{},{:e}", f.fold, f.test_rows, f.accuracy));
            for a in &f.source_accuracies {
                out.push_str(&format!(",{a:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One-vs-rest training pairs for `class` (or all classes) over `rows`.
fn one_vs_rest(task: &FusionTask, rows: &[usize], class: Option<usize>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for &r in rows {
        for c in 0..task.classes {
            if class.is_some_and(|k| k != c) {
                continue;
            }
            inputs.push(task.class_inputs(r, c));
            labels.push(if task.labels[r] == c { 1.0 } else { 0.0 });
        }
    }
    (inputs, labels)
}

fn explain(g: &FuzzyMeasure<f64>, train: &[Vec<f64>], test: &[Vec<f64>]) -> Result<XaiReport<f64>> {
    match XaiReport::build(g, Some(train), Some(test), 0.5) {
        Err(ChimpError::TieGroupTooLarge { .. } | ChimpError::Data(_)) => {
            log::warn!("inputs tie too heavily for walk statistics; reporting measure indices only");
            XaiReport::build(g, None, None, 0.5)
        }
        other => other,
    }
}

/// Cross-validated fusion: train on all folds but one, score the held-out
/// fold by the argmax of the fused per-class scores.
pub fn run_fusion(task: &FusionTask, cfg: &TrainConfig) -> Result<FusionResult> {
    cfg.validate()?;
    let folds = task.fold_count();
    if folds < 2 {
        return Err(ChimpError::Config("assign at least two folds before fusing".into()));
    }
    let outcomes = (0..folds)
        .into_par_iter()
        .map(|fold| -> Result<Option<(FoldResult, Vec<FusedMeasure>)>> {
            let train: Vec<usize> = (0..task.rows()).filter(|&r| task.folds[r] != fold).collect();
            let test: Vec<usize> = (0..task.rows()).filter(|&r| task.folds[r] == fold).collect();
            let present: BTreeSet<usize> = train.iter().map(|&r| task.labels[r]).collect();
            if test.is_empty() || present.len() < task.classes {
                log::warn!("fold {fold} skipped: a class is absent from its training rows");
                return Ok(None);
            }
            let fit_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, fold as u64),
                ..cfg.clone()
            };
            let groups: Vec<Option<usize>> = match task.mode {
                FusionMode::Shared => vec![None],
                FusionMode::PerClass => (0..task.classes).map(Some).collect(),
            };
            let mut measures = Vec::with_capacity(groups.len());
            for class in groups {
                let (inputs, labels) = one_vs_rest(task, &train, class);
                let fit = sgd_fit(&inputs, &labels, &fit_cfg)?;
                let g = materialize(&fit.params).g;
                let (test_inputs, _) = one_vs_rest(task, &test, class);
                let report = explain(&g, &inputs, &test_inputs)?;
                measures.push(FusedMeasure {
                    fold,
                    class,
                    measure: g,
                    report,
                });
            }
            let mut hits = 0;
            for &r in &test {
                let scores = (0..task.classes)
                    .map(|c| {
                        let g = &measures[if task.mode == FusionMode::Shared { 0 } else { c }].measure;
                        // tie-insensitive form: posteriors often tie at 0 or 1
                        chi_maxmin(g, &task.class_inputs(r, c))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if argmax(&scores) == task.labels[r] {
                    hits += 1;
                }
            }
            Ok(Some((
                FoldResult {
                    fold,
                    test_rows: test.len(),
                    accuracy: hits as f64 / test.len() as f64,
                    source_accuracies: task.source_accuracies(&test),
                },
                measures,
            )))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut result = FusionResult {
        mode: task.mode,
        folds: Vec::new(),
        skipped_folds: Vec::new(),
        mean_accuracy: f64::NAN,
        sd_accuracy: f64::NAN,
        source_mean_accuracies: vec![f64::NAN; task.sources()],
        measures: Vec::new(),
    };
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Some((f, m)) => {
                result.folds.push(f);
                result.measures.extend(m);
            }
            None => result.skipped_folds.push(fold),
        }
    }
    if !result.folds.is_empty() {
        let acc: Vec<f64> = result.folds.iter().map(|f| f.accuracy).collect();
        let k = acc.len() as f64;
        result.mean_accuracy = acc.iter().sum::<f64>() / k;
        result.sd_accuracy = if acc.len() > 1 {
            (acc.iter().map(|a| (a - result.mean_accuracy).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        result.source_mean_accuracies = (0..task.sources())
            .map(|s| result.folds.iter().map(|f| f.source_accuracies[s]).sum::<f64>() / k)
            .collect();
    }
    Ok(result)
}

/// Synthetic posterior tasks with known structure.
pub mod fixtures {
    use super::*;

    fn jitter(rng: &mut ChaCha8Rng, v: f64, spread: f64) -> f64 {
        if spread <= 0.0 {
            return v;
        }
        (v + rng.random_range(-spread..spread)).clamp(0.0, 1.0)
    }

    /// Two classes, two sources. Source A is confidently right on class-0
    /// rows and mildly wrong on class-1 rows; source B mirrors it. Each
    /// source alone is right on about half the rows; fusing them is right on all.
    pub fn complementary(rows: usize, seed: u64) -> Result<FusionTask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..rows).map(|r| r % 2).collect();
        let mut a = Vec::with_capacity(rows);
        let mut b = Vec::with_capacity(rows);
        for &label in &labels {
            let strong = jitter(&mut rng, 0.9, 0.05);
            let weak = jitter(&mut rng, 0.6, 0.05);
            let (pa, pb) = if label == 0 {
                (strong, 1.0 - weak)
            } else {
                (weak, 1.0 - strong)
            };
            a.push(vec![pa, 1.0 - pa]);
            b.push(vec![pb, 1.0 - pb]);
        }
        let ids = (0..rows).map(|r| format!("r{r}")).collect();
        FusionTask::new(vec!["a".into(), "b".into()], ids, labels, vec![a, b])
    }

    /// `sources` strong models that share one confident posterior (true
    /// class in `[0.95, 1]`) and differ only by independent Gaussian
    /// perturbations of std `noise`, clipped to `[0, 1]`.
    pub fn near_identical(sources: usize, classes: usize, rows: usize, noise: f64, seed: u64) -> Result<FusionTask> {
        if classes < 2 {
            return Err(ChimpError::Config("need at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let base: Vec<Vec<f64>> = labels
            .iter()
            .map(|&label| {
                let top = rng.random_range(0.95..1.0);
                let mut rest: Vec<f64> = (0..classes - 1).map(|_| rng.random_range(0.1..1.0)).collect();
                let sum: f64 = rest.iter().sum();
                rest.iter_mut().for_each(|v| *v *= (1.0 - top) / sum);
                rest.insert(label, top);
                rest
            })
            .collect();
        let posteriors = (0..sources)
            .map(|_| {
                base.iter()
                    .map(|p| {
                        p.iter()
                            .map(|&v| {
                                let z: f64 = rng.sample(StandardNormal);
                                (v + noise * z).clamp(0.0, 1.0)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let names = (1..=sources).map(|k| format!("model_{k}")).collect();
        let ids = (0..rows).map(|r| format!("r{r}")).collect();
        FusionTask::new(names, ids, labels, posteriors)
    }
}

/// Worst finite-difference disagreement over a batch of random cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSweep {
    pub n: usize,
    pub cases: usize,
    pub eps: f64,
    pub max_rel_error: f64,
    /// Case index and coordinate of the worst disagreement.
    pub worst: Option<(usize, Coordinate)>,
    pub checked: usize,
    pub skipped: usize,
}

/// Gradient check at `cases` random points: raw weights uniform in
/// `[−0.1, 0.5]` (so some ReLUs are inactive), inputs and label uniform in `[0, 1]`.
pub fn grad_check_sweep(n: usize, cases: usize, eps: f64, seed: u64) -> Result<GradSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = GradSweep {
        n,
        cases,
        eps,
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for case in 0..cases {
        let p = ChimpParams::<f64>::random(n, -0.1, 0.5, &mut rng)?;
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let label = rng.random_range(0.0..1.0);
        let report = grad_check(&p, &h, label, eps)?;
        sweep.checked += report.checked;
        sweep.skipped += report.skipped.len();
        if report.max_rel_error > sweep.max_rel_error || sweep.worst.is_none() {
            sweep.max_rel_error = sweep.max_rel_error.max(report.max_rel_error);
            sweep.worst = report.worst.map(|c| (case, c));
        }
    }
    Ok(sweep)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path)?.write_all(contents)?;
    Ok(())
}

/// Parameters of a fitted network restored from JSON.
pub fn read_params(path: &Path) -> Result<ChimpParams<f64>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
