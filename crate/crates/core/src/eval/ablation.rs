use crate::conformal::CpMethod;
use crate::error::{Result, RocpError};
use crate::eval::experiment::{cell_eval_seed, cell_split_seed, evaluate_splits, ExperimentDataset};
use crate::models::{GraphInputs, ModelConfig};
use crate::parallel::parallel_map;
use crate::rocp::{train, SmoothingConfig};

/// Sweep over `calib_frac` and `λ` for each model; `calib_frac = 0` is the
/// cross-entropy baseline.
#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub models: Vec<ModelConfig>,
    pub calib_fracs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub n_model_seeds: usize,
    pub n_splits: usize,
    pub epsilon: f64,
    pub cp_method: CpMethod,
    /// Remaining training settings; `calib_frac`, `lambda` and `epsilon` are overridden.
    pub smoothing: SmoothingConfig,
    pub per_class_train: usize,
    pub valid_size: usize,
    pub master_seed: u64,
    pub jobs: usize,
}

/// Split-averaged metrics of one trained model in the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub model: String,
    pub dataset: String,
    pub calib_frac: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub cp_method: CpMethod,
    pub seed: u64,
    pub coverage: f64,
    pub ineff: f64,
    pub accuracy: f64,
}

/// Trains one model per (model, calib_frac, λ, seed) and averages metrics over
/// `n_splits` calibration/test resamples. Rows come out in grid order.
pub fn run_ablation(ds: &ExperimentDataset, plan: &AblationPlan) -> Result<Vec<AblationRow>> {
    if plan.models.is_empty() || plan.calib_fracs.is_empty() || plan.lambdas.is_empty() || plan.n_model_seeds == 0 {
        return Err(RocpError::Empty("sweep grid"));
    }
    if plan.n_splits == 0 {
        return Err(RocpError::Empty("calibration/test splits"));
    }
    let inputs = GraphInputs::new(&ds.graph);
    let mut cells = Vec::new();
    for model in &plan.models {
        for &calib_frac in &plan.calib_fracs {
            for &lambda in &plan.lambdas {
                for seed_index in 0..plan.n_model_seeds {
                    cells.push((model, calib_frac, lambda, seed_index));
                }
            }
        }
    }
    let rows = parallel_map(&cells, plan.jobs, |&(model, calib_frac, lambda, seed_index)| {
        let cell = format!(
            "cell {}/{}/calib_frac={calib_frac}/lambda={lambda}/seed#{seed_index}",
            ds.graph.name, model.arch
        );
        let run = || -> Result<AblationRow> {
            let smoothing = SmoothingConfig {
                calib_frac,
                lambda,
                epsilon: plan.epsilon,
                ..plan.smoothing.clone()
            };
            let splits = ds.splits_for(
                plan.per_class_train,
                plan.valid_size,
                cell_split_seed(plan.master_seed, 0, seed_index),
            )?;
            let model_seed = plan.master_seed.wrapping_add(seed_index as u64);
            let report = train(&inputs, &splits, model, &smoothing, model_seed)?;
            log::info!("{cell}: trained in {:.1}s", report.wall_clock_secs);
            let probs = report.model.predict_proba(&inputs)?;
            let metrics = evaluate_splits(
                &probs,
                ds.graph.labels(),
                &splits.pool(),
                plan.epsilon,
                &[plan.cp_method],
                plan.n_splits,
                cell_eval_seed(plan.master_seed, 0, seed_index),
                1,
            )?;
            let n = metrics.len() as f64;
            let mean = |f: fn(&crate::eval::SplitMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
            Ok(AblationRow {
                model: model.arch.name().to_string(),
                dataset: ds.graph.name.clone(),
                calib_frac,
                lambda,
                epsilon: plan.epsilon,
                cp_method: plan.cp_method,
                seed: model_seed,
                coverage: mean(|m| m.coverage),
                ineff: mean(|m| m.ineff),
                accuracy: mean(|m| m.accuracy),
            })
        };
        run().map_err(|e| e.context(cell))
    });
    rows.into_iter().collect()
}

pub const ABLATION_HEADER: &str = "model,dataset,calib_frac,lambda,epsilon,cp_method,seed,coverage,ineff,accuracy";

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{},{:.6},{:.6},{:.6}\n",
            r.model, r.dataset, r.calib_frac, r.lambda, r.epsilon, r.cp_method, r.seed, r.coverage, r.ineff, r.accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmConfig};
    use crate::models::Arch;

    #[test]
    fn empty_grid_rejected() {
        let graph = generate_sbm(&SbmConfig {
            nodes: 30,
            classes: 2,
            p_in: 0.3,
            p_out: 0.05,
            features: 3,
            feature_signal: 1.0,
            seed: 0,
        })
        .unwrap();
        let ds = ExperimentDataset { graph, splits: None };
        let plan = AblationPlan {
            models: vec![ModelConfig::default_for(Arch::Gcn)],
            calib_fracs: vec![],
            lambdas: vec![0.001],
            n_model_seeds: 1,
            n_splits: 1,
            epsilon: 0.1,
            cp_method: CpMethod::Aps,
            smoothing: SmoothingConfig::default(),
            per_class_train: 3,
            valid_size: 6,
            master_seed: 0,
            jobs: 1,
        };
        assert!(matches!(run_ablation(&ds, &plan), Err(RocpError::Empty(_))));
    }
}
