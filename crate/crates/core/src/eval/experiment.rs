use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate_predict, CpMethod};
use crate::error::{Result, RocpError};
use crate::eval::metrics::{accuracy, coverage, inefficiency};
use crate::graph::{load_dataset, make_splits, split_pool, GraphDataset, SplitAssignment, SplitFile};
use crate::models::{GraphInputs, ModelConfig};
use crate::parallel::parallel_map;
use crate::rocp::{train, SmoothingConfig};
use crate::seeds::derive_seed;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Ce,
    Rocp,
}

impl TrainingMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainingMode::Ce => "ce",
            TrainingMode::Rocp => "rocp",
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingMode {
    type Err = RocpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(TrainingMode::Ce),
            "rocp" => Ok(TrainingMode::Rocp),
            other => Err(RocpError::InvalidArgument(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Metrics of one calibration/test split of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub model: String,
    pub dataset: String,
    pub mode: TrainingMode,
    pub cp_method: CpMethod,
    pub epsilon: f64,
    pub seed: u64,
    pub split_id: usize,
    pub coverage: f64,
    pub ineff: f64,
    pub accuracy: f64,
}

impl ExperimentRecord {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        (&self.dataset, &self.model, self.mode, self.cp_method)
            .cmp(&(&other.dataset, &other.model, other.mode, other.cp_method))
            .then(self.epsilon.total_cmp(&other.epsilon))
            .then((self.seed, self.split_id).cmp(&(other.seed, other.split_id)))
    }
}

/// Canonical record order: dataset, model, mode, method, ε, seed, split.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(ExperimentRecord::sort_key_cmp);
}

/// Metrics of one split, before the cell labels are attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub split_id: usize,
    pub cp_method: CpMethod,
    pub coverage: f64,
    pub ineff: f64,
    pub accuracy: f64,
}

/// Seed of calibration/test resample `split_id` for a given base seed.
pub fn split_seed(base: u64, split_id: usize) -> u64 {
    derive_seed(base, &[split_id as u64])
}

/// Re-splits `pool` `n_splits` times and calibrates each method on every split.
///
/// The split with id `s` is drawn from [`split_seed`]`(base_seed, s)`, so two
/// models evaluated with the same base seed see identical partitions. Splits
/// are spread over `jobs` threads; the output order is by split id, then method.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_splits(
    probs: &Matrix,
    labels: &[usize],
    pool: &[usize],
    epsilon: f64,
    methods: &[CpMethod],
    n_splits: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<SplitMetrics>> {
    let predicted = probs.argmax_rows();
    let ids: Vec<usize> = (0..n_splits).collect();
    let per_split = parallel_map(&ids, jobs, |&split_id| -> Result<Vec<SplitMetrics>> {
        let (calib, test) = split_pool(pool, split_seed(base_seed, split_id));
        let test_labels: Vec<usize> = test.iter().map(|&v| labels[v]).collect();
        let test_pred: Vec<usize> = test.iter().map(|&v| predicted[v]).collect();
        let acc = accuracy(&test_pred, &test_labels)?;
        methods
            .iter()
            .map(|&method| {
                let cal = calibrate_predict(probs, labels, &calib, &test, epsilon, method)?;
                Ok(SplitMetrics {
                    split_id,
                    cp_method: method,
                    coverage: coverage(&cal.sets, &test_labels)?,
                    ineff: inefficiency(&cal.sets)?,
                    accuracy: acc,
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(n_splits * methods.len());
    for r in per_split {
        out.extend(r?);
    }
    Ok(out)
}

/// A dataset with optional fixed train/valid/pool splits.
#[derive(Debug, Clone)]
pub struct ExperimentDataset {
    pub graph: GraphDataset,
    pub splits: Option<SplitFile>,
}

impl ExperimentDataset {
    /// Loads a dataset directory, including `splits.json` when present.
    pub fn load(dir: &Path) -> Result<Self> {
        let graph = load_dataset(dir)?;
        let path = dir.join("splits.json");
        let splits = if path.exists() {
            let file = SplitFile::load(&path)?;
            let assignment = file.assign(0);
            assignment.validate(graph.num_nodes()).map_err(|e| e.context(path.display().to_string()))?;
            Some(file)
        } else {
            None
        };
        Ok(Self { graph, splits })
    }

    /// Train/valid/calib/test assignment for one model seed: the fixed
    /// splits when present, otherwise freshly generated ones.
    pub fn splits_for(&self, per_class_train: usize, valid_size: usize, seed: u64) -> Result<SplitAssignment> {
        match &self.splits {
            Some(file) => Ok(file.assign(seed)),
            None => make_splits(&self.graph, per_class_train, valid_size, seed),
        }
    }
}

/// Grid of cells and protocol settings for [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub models: Vec<ModelConfig>,
    pub modes: Vec<TrainingMode>,
    pub epsilons: Vec<f64>,
    pub cp_methods: Vec<CpMethod>,
    pub n_model_seeds: usize,
    pub n_splits: usize,
    /// Settings for size-penalized cells; cross-entropy cells use
    /// [`SmoothingConfig::cross_entropy_only`]. `epsilon` is overridden per cell.
    pub smoothing: SmoothingConfig,
    pub per_class_train: usize,
    pub valid_size: usize,
    pub master_seed: u64,
    pub jobs: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            models: vec![ModelConfig::default_for(crate::models::Arch::Gcn)],
            modes: vec![TrainingMode::Ce, TrainingMode::Rocp],
            epsilons: vec![0.1],
            cp_methods: vec![CpMethod::Aps],
            n_model_seeds: 10,
            n_splits: 100,
            smoothing: SmoothingConfig::default(),
            per_class_train: 20,
            valid_size: 500,
            master_seed: 0,
            jobs: 1,
        }
    }
}

const SPLIT_TAG: u64 = 1;
const EVAL_TAG: u64 = 2;

/// Seed of the train/valid/pool assignment for a dataset and model seed index.
pub fn cell_split_seed(master_seed: u64, dataset_index: usize, seed_index: usize) -> u64 {
    derive_seed(master_seed, &[SPLIT_TAG, dataset_index as u64, seed_index as u64])
}

/// Base seed of the calibration/test resamples for a dataset and model seed index.
pub fn cell_eval_seed(master_seed: u64, dataset_index: usize, seed_index: usize) -> u64 {
    derive_seed(master_seed, &[EVAL_TAG, dataset_index as u64, seed_index as u64])
}

/// Train/valid/calib/test assignment used for model seed index `seed_index`.
pub fn cell_splits(
    ds: &ExperimentDataset,
    plan: &ExperimentPlan,
    dataset_index: usize,
    seed_index: usize,
) -> Result<SplitAssignment> {
    ds.splits_for(
        plan.per_class_train,
        plan.valid_size,
        cell_split_seed(plan.master_seed, dataset_index, seed_index),
    )
}

struct Job {
    dataset: usize,
    model: usize,
    seed_index: usize,
    mode: TrainingMode,
    /// `None` for cross-entropy jobs, which serve every ε.
    epsilon: Option<f64>,
}

/// Trains every cell and evaluates it on `n_splits` calibration/test resamples.
///
/// Cross-entropy and size-penalized models with the same seed index share
/// train/valid splits, initialization, and every calibration/test resample.
/// Output is sorted by [`sort_records`] and does not depend on `jobs`.
pub fn run_experiment(
    datasets: &[ExperimentDataset],
    plan: &ExperimentPlan,
) -> Result<Vec<ExperimentRecord>> {
    if plan.epsilons.is_empty() || plan.cp_methods.is_empty() || plan.models.is_empty() {
        return Err(RocpError::Empty("experiment grid"));
    }
    let inputs: Vec<GraphInputs> = datasets.iter().map(|d| GraphInputs::new(&d.graph)).collect();
    let mut jobs = Vec::new();
    for dataset in 0..datasets.len() {
        for model in 0..plan.models.len() {
            for seed_index in 0..plan.n_model_seeds {
                for &mode in &plan.modes {
                    match mode {
                        TrainingMode::Ce => jobs.push(Job {
                            dataset,
                            model,
                            seed_index,
                            mode,
                            epsilon: None,
                        }),
                        TrainingMode::Rocp => jobs.extend(plan.epsilons.iter().map(|&e| Job {
                            dataset,
                            model,
                            seed_index,
                            mode,
                            epsilon: Some(e),
                        })),
                    }
                }
            }
        }
    }

    let results = parallel_map(&jobs, plan.jobs, |job| run_job(job, datasets, &inputs, plan));
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    sort_records(&mut records);
    Ok(records)
}

fn run_job(
    job: &Job,
    datasets: &[ExperimentDataset],
    inputs: &[GraphInputs],
    plan: &ExperimentPlan,
) -> Result<Vec<ExperimentRecord>> {
    let ds = &datasets[job.dataset];
    let model_cfg = &plan.models[job.model];
    let cell = format!(
        "cell {}/{}/{}/seed#{}{}",
        ds.graph.name,
        model_cfg.arch,
        job.mode,
        job.seed_index,
        job.epsilon.map(|e| format!("/eps={e}")).unwrap_or_default()
    );
    let run = || -> Result<Vec<ExperimentRecord>> {
        let splits = cell_splits(ds, plan, job.dataset, job.seed_index)?;
        let smoothing = match job.mode {
            TrainingMode::Ce => plan.smoothing.cross_entropy_only(),
            TrainingMode::Rocp => SmoothingConfig {
                epsilon: job.epsilon.expect("rocp jobs carry epsilon"),
                ..plan.smoothing.clone()
            },
        };
        let model_seed = plan.master_seed.wrapping_add(job.seed_index as u64);
        let report = train(&inputs[job.dataset], &splits, model_cfg, &smoothing, model_seed)?;
        log::info!("{cell}: trained in {:.1}s", report.wall_clock_secs);
        let probs = report.model.predict_proba(&inputs[job.dataset])?;
        let pool = splits.pool();
        let eval_seed = cell_eval_seed(plan.master_seed, job.dataset, job.seed_index);
        let epsilons = match job.epsilon {
            Some(e) => vec![e],
            None => plan.epsilons.clone(),
        };
        let mut records = Vec::new();
        for eps in epsilons {
            let metrics = evaluate_splits(
                &probs,
                ds.graph.labels(),
                &pool,
                eps,
                &plan.cp_methods,
                plan.n_splits,
                eval_seed,
                1,
            )?;
            records.extend(metrics.into_iter().map(|m| ExperimentRecord {
                model: model_cfg.arch.name().to_string(),
                dataset: ds.graph.name.clone(),
                mode: job.mode,
                cp_method: m.cp_method,
                epsilon: eps,
                seed: model_seed,
                split_id: m.split_id,
                coverage: m.coverage,
                ineff: m.ineff,
                accuracy: m.accuracy,
            }));
        }
        Ok(records)
    };
    run().map_err(|e| e.context(cell))
}

/// Header of the results CSV.
pub const RESULTS_HEADER: &str = "model,dataset,mode,cp_method,epsilon,seed,split_id,coverage,ineff,accuracy";

fn csv_field(s: &str) -> String {
    s.replace([',', '\n', '\r'], "_")
}

/// Serializes records as the results CSV (header plus one row per record, six decimals).
pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{},{},{:.6},{:.6},{:.6}\n",
            csv_field(&r.model),
            csv_field(&r.dataset),
            r.mode,
            r.cp_method,
            r.epsilon,
            r.seed,
            r.split_id,
            r.coverage,
            r.ineff,
            r.accuracy
        ));
    }
    out
}

/// Parses the results CSV, rejecting any other header.
pub fn records_from_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let file = "results.csv";
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == RESULTS_HEADER => {}
        _ => {
            return Err(RocpError::Malformed {
                file: file.into(),
                line: 1,
                msg: format!("expected header `{RESULTS_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| RocpError::Malformed {
            file: file.into(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        out.push(ExperimentRecord {
            model: f[0].to_string(),
            dataset: f[1].to_string(),
            mode: f[2].parse().map_err(|e: RocpError| err(e.to_string()))?,
            cp_method: f[3].parse().map_err(|e: RocpError| err(e.to_string()))?,
            epsilon: num(f[4])?,
            seed: f[5].parse().map_err(|e| err(format!("`{}`: {e}", f[5])))?,
            split_id: f[6].parse().map_err(|e| err(format!("`{}`: {e}", f[6])))?,
            coverage: num(f[7])?,
            ineff: num(f[8])?,
            accuracy: num(f[9])?,
        });
    }
    Ok(out)
}
