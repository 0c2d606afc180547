use std::collections::BTreeMap;

use crate::conformal::CpMethod;
use crate::error::{Result, RocpError};
use crate::eval::experiment::{ExperimentRecord, TrainingMode};

/// Mean and sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            sq.sort_by(f64::total_cmp);
            (sq.iter().sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub model: String,
    pub dataset: String,
    pub mode: TrainingMode,
    pub cp_method: CpMethod,
    /// ε rendered with six decimals, as in the results CSV.
    pub epsilon: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub key: GroupKey,
    pub n: usize,
    pub coverage: Summary,
    pub ineff: Summary,
    pub accuracy: Summary,
    /// `(rocp − ce) / ce · 100` for size-penalized rows with a matching baseline.
    pub ineff_change_pct: Option<f64>,
    pub accuracy_change_pct: Option<f64>,
}

pub fn relative_change_pct(baseline: f64, value: f64) -> f64 {
    (value - baseline) / baseline * 100.0
}

/// Groups records by (model, dataset, mode, method, ε) and summarizes each group.
///
/// Rows come out sorted by key. A size-penalized group without a matching
/// cross-entropy group gets no relative change and a logged warning.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(RocpError::Empty("records"));
    }
    let mut groups: BTreeMap<GroupKey, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        let key = GroupKey {
            model: r.model.clone(),
            dataset: r.dataset.clone(),
            mode: r.mode,
            cp_method: r.cp_method,
            epsilon: format!("{:.6}", r.epsilon),
        };
        groups.entry(key).or_default().push(r);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .map(|(key, rs)| {
            let col = |f: fn(&ExperimentRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            AggregateRow {
                n: rs.len(),
                coverage: Summary::of(&col(|r| r.coverage)),
                ineff: Summary::of(&col(|r| r.ineff)),
                accuracy: Summary::of(&col(|r| r.accuracy)),
                ineff_change_pct: None,
                accuracy_change_pct: None,
                key,
            }
        })
        .collect();

    let baselines: BTreeMap<GroupKey, (f64, f64)> = rows
        .iter()
        .filter(|r| r.key.mode == TrainingMode::Ce)
        .map(|r| (r.key.clone(), (r.ineff.mean, r.accuracy.mean)))
        .collect();
    for row in rows.iter_mut().filter(|r| r.key.mode == TrainingMode::Rocp) {
        let ce_key = GroupKey {
            mode: TrainingMode::Ce,
            ..row.key.clone()
        };
        match baselines.get(&ce_key) {
            Some(&(ineff, acc)) => {
                row.ineff_change_pct = Some(relative_change_pct(ineff, row.ineff.mean));
                row.accuracy_change_pct = Some(relative_change_pct(acc, row.accuracy.mean));
            }
            None => log::warn!(
                "no cross-entropy baseline for {}/{}/{}/eps={}; relative change omitted",
                row.key.dataset,
                row.key.model,
                row.key.cp_method,
                row.key.epsilon
            ),
        }
    }
    Ok(rows)
}

/// Formats a percent change with an explicit sign, using U+2212 for negatives.
pub fn format_change(pct: f64) -> String {
    let s = format!("{:.1}", pct.abs());
    if s.trim_start_matches(['0', '.']).is_empty() {
        format!("{s}%")
    } else if pct < 0.0 {
        format!("\u{2212}{s}%")
    } else {
        format!("+{s}%")
    }
}

pub const AGGREGATE_HEADER: &str = "model,dataset,mode,cp_method,epsilon,n,coverage_mean,coverage_std,ineff_mean,ineff_std,accuracy_mean,accuracy_std,ineff_change_pct,accuracy_change_pct";

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::new();
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.key.model,
            r.key.dataset,
            r.key.mode,
            r.key.cp_method,
            r.key.epsilon,
            r.n,
            r.coverage.mean,
            r.coverage.std,
            r.ineff.mean,
            r.ineff.std,
            r.accuracy.mean,
            r.accuracy.std,
            opt(r.ineff_change_pct),
            opt(r.accuracy_change_pct),
        ));
    }
    out
}

fn pm(s: Summary) -> String {
    format!("{:.3} ± {:.3}", s.mean, s.std)
}

/// Plain-text comparison table. Paired cells render as `ce → rocp (change)`.
pub fn render_report(rows: &[AggregateRow]) -> String {
    let mut cells: BTreeMap<(String, String, CpMethod, String), [Option<&AggregateRow>; 2]> = BTreeMap::new();
    for r in rows {
        let k = (r.key.dataset.clone(), r.key.model.clone(), r.key.cp_method, r.key.epsilon.clone());
        let slot = match r.key.mode {
            TrainingMode::Ce => 0,
            TrainingMode::Rocp => 1,
        };
        cells.entry(k).or_default()[slot] = Some(r);
    }
    let mut out = String::new();
    let mut unpaired = 0;
    for ((dataset, model, method, eps), pair) in &cells {
        out.push_str(&format!("{dataset} {model} {method} eps={eps}\n"));
        match pair {
            [Some(ce), Some(rc)] => {
                let change = |p: Option<f64>| p.map(format_change).unwrap_or_default();
                out.push_str(&format!("  coverage  {} → {}\n", pm(ce.coverage), pm(rc.coverage)));
                out.push_str(&format!(
                    "  ineff     {} → {}  ({})\n",
                    pm(ce.ineff),
                    pm(rc.ineff),
                    change(rc.ineff_change_pct)
                ));
                out.push_str(&format!(
                    "  accuracy  {} → {}  ({})\n",
                    pm(ce.accuracy),
                    pm(rc.accuracy),
                    change(rc.accuracy_change_pct)
                ));
            }
            [a, b] => {
                unpaired += 1;
                let r = a.or(*b).expect("cell has at least one row");
                out.push_str(&format!("  [{} only]\n", r.key.mode));
                out.push_str(&format!("  coverage  {}\n", pm(r.coverage)));
                out.push_str(&format!("  ineff     {}\n", pm(r.ineff)));
                out.push_str(&format!("  accuracy  {}\n", pm(r.accuracy)));
            }
        }
    }
    if unpaired > 0 {
        out.push_str(&format!(
            "warning: {unpaired} cell(s) lack a ce/rocp pair; relative changes omitted\n"
        ));
    }
    out
}
