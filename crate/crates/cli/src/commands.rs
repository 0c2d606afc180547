use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rocp_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use rocp_core::eval::{
    ablation_to_csv, aggregate, aggregate_to_csv, evaluate_splits, records_from_csv, records_to_csv, render_report,
    run_ablation, run_experiment, sort_records, AblationPlan, ExperimentDataset, ExperimentPlan, ExperimentRecord,
    TrainingMode,
};
use rocp_core::graph::{generate_sbm, homophily, write_dataset, SbmConfig};
use rocp_core::io::atomic_write;
use rocp_core::models::GraphInputs;
use rocp_core::rocp::{train as train_model, EpochLoss};
use rocp_core::seeds::derive_seed;

use crate::{svg, AblateArgs, EvalArgs, ExperimentArgs, ReportArgs, SynthArgs, TrainArgs};

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    atomic_write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load(dir: &Path) -> Result<ExperimentDataset> {
    ExperimentDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let g = generate_sbm(&SbmConfig {
        nodes: a.nodes,
        classes: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        features: a.features,
        feature_signal: a.signal,
        seed: a.seed,
    })?;
    write_dataset(&g, &a.out).with_context(|| format!("writing dataset {}", a.out.display()))?;
    println!(
        "{}: {} nodes, {} edges, homophily {:.4}",
        a.out.display(),
        g.num_nodes(),
        g.undirected_edges().len(),
        homophily(&g)
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    dataset: &'a str,
    model: &'a str,
    seed: u64,
    epochs: usize,
    wall_clock_secs: f64,
    losses: &'a [EpochLoss],
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let ds = load(&a.dataset)?;
    let model_config = a.model_args.config_for(a.model);
    let smoothing = a.smoothing.config(a.epsilon);
    let splits = ds.splits_for(a.splits.per_class_train, a.splits.valid_size, a.seed)?;
    let inputs = GraphInputs::new(&ds.graph);
    let report = train_model(&inputs, &splits, &model_config, &smoothing, a.seed).context("training failed")?;
    let meta = CheckpointMeta {
        model: model_config,
        smoothing,
        seed: a.seed,
        dataset: ds.graph.name.clone(),
        num_features: ds.graph.num_features(),
        num_classes: ds.graph.num_classes(),
    };
    save_checkpoint(&a.out, &report.model, &meta, &splits)
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    let summary = TrainSummary {
        dataset: &ds.graph.name,
        model: a.model.name(),
        seed: a.seed,
        epochs: report.losses.len(),
        wall_clock_secs: report.wall_clock_secs,
        losses: &report.losses,
    };
    write_output(&a.out.join("report.json"), &serde_json::to_vec_pretty(&summary)?)?;
    if let Some(last) = report.losses.last() {
        println!(
            "trained {} on {} for {} epochs: cross-entropy {:.4}, size {:.4}",
            a.model,
            ds.graph.name,
            report.losses.len(),
            last.cross_entropy,
            last.size
        );
    }
    Ok(())
}

const EVAL_TAG: u64 = 3;

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let ds = load(&a.dataset)?;
    if ds.graph.num_features() != ck.meta.num_features || ds.graph.num_classes() != ck.meta.num_classes {
        bail!(
            "dataset {} has {} features and {} classes, checkpoint expects {} and {}",
            a.dataset.display(),
            ds.graph.num_features(),
            ds.graph.num_classes(),
            ck.meta.num_features,
            ck.meta.num_classes
        );
    }
    if a.splits == 0 || a.epsilon.is_empty() || a.cp_method.is_empty() {
        bail!("--splits, --epsilon and --cp-method must be nonempty");
    }
    let inputs = GraphInputs::new(&ds.graph);
    let probs = ck.model.predict_proba(&inputs)?;
    let mode = if ck.meta.smoothing.uses_size_loss() {
        TrainingMode::Rocp
    } else {
        TrainingMode::Ce
    };
    let base_seed = derive_seed(a.seed, &[EVAL_TAG]);
    let mut records = Vec::new();
    for &eps in &a.epsilon {
        let metrics = evaluate_splits(
            &probs,
            ds.graph.labels(),
            &ck.splits.pool,
            eps,
            &a.cp_method,
            a.splits,
            base_seed,
            a.jobs,
        )?;
        records.extend(metrics.into_iter().map(|m| ExperimentRecord {
            model: ck.meta.model.arch.name().to_string(),
            dataset: ds.graph.name.clone(),
            mode,
            cp_method: m.cp_method,
            epsilon: eps,
            seed: ck.meta.seed,
            split_id: m.split_id,
            coverage: m.coverage,
            ineff: m.ineff,
            accuracy: m.accuracy,
        }));
    }
    sort_records(&mut records);
    write_output(&a.out, records_to_csv(&records).as_bytes())?;
    summarize(&records)
}

fn summarize(records: &[ExperimentRecord]) -> Result<()> {
    for row in aggregate(records)? {
        println!(
            "{} {} {} {} eps={}: coverage {:.4}, ineff {:.4}, accuracy {:.4} over {} splits",
            row.key.dataset,
            row.key.model,
            row.key.mode,
            row.key.cp_method,
            row.key.epsilon,
            row.coverage.mean,
            row.ineff.mean,
            row.accuracy.mean,
            row.n
        );
    }
    Ok(())
}

pub fn experiment(a: &ExperimentArgs) -> Result<()> {
    let datasets = a.dataset.iter().map(|d| load(d)).collect::<Result<Vec<_>>>()?;
    let plan = ExperimentPlan {
        models: a.models.iter().map(|&m| a.model.config_for(m)).collect(),
        modes: a.modes.clone(),
        epsilons: a.epsilon.clone(),
        cp_methods: a.cp_method.clone(),
        n_model_seeds: a.model_seeds,
        n_splits: a.splits,
        smoothing: a.smoothing.config(a.epsilon.first().copied().unwrap_or(0.1)),
        per_class_train: a.split_sizes.per_class_train,
        valid_size: a.split_sizes.valid_size,
        master_seed: a.seed,
        jobs: a.jobs,
    };
    if plan.n_model_seeds == 0 || plan.n_splits == 0 || plan.modes.is_empty() {
        bail!("--model-seeds, --splits and --modes must be nonempty");
    }
    let records = run_experiment(&datasets, &plan)?;
    write_output(&a.out, records_to_csv(&records).as_bytes())?;
    summarize(&records)
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let ds = load(&a.dataset)?;
    let plan = AblationPlan {
        models: a.models.iter().map(|&m| a.model.config_for(m)).collect(),
        calib_fracs: a.calib_fracs.clone(),
        lambdas: a.lambdas.clone(),
        n_model_seeds: a.model_seeds,
        n_splits: a.splits,
        epsilon: a.epsilon,
        cp_method: a.cp_method,
        smoothing: a.smoothing.config(a.epsilon),
        per_class_train: a.split_sizes.per_class_train,
        valid_size: a.split_sizes.valid_size,
        master_seed: a.seed,
        jobs: a.jobs,
    };
    let rows = run_ablation(&ds, &plan)?;
    write_output(&a.out, ablation_to_csv(&rows).as_bytes())?;
    if a.emit_svg {
        let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let models: Vec<String> = a.models.iter().map(|m| m.name().to_string()).collect();
        for (file, metric, title) in [
            ("accuracy.svg", svg::Metric::Accuracy, "Accuracy"),
            ("ineff.svg", svg::Metric::Ineff, "Inefficiency"),
        ] {
            let chart = svg::grouped_bars(&rows, &models, &a.calib_fracs, &a.lambdas, metric, title);
            write_output(&dir.join(file), chart.as_bytes())?;
        }
    }
    println!("{} sweep rows written to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &a.inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        records.extend(records_from_csv(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let rows = aggregate(&records)?;
    let text = render_report(&rows);
    if let Some(csv) = &a.csv {
        write_output(csv, aggregate_to_csv(&rows).as_bytes())?;
    }
    match &a.out {
        Some(out) => write_output(out, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}
