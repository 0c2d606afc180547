//! Split conformal prediction for classification.
//!
//! Two predictors are provided. THR thresholds the class probability itself
//! (a conformity score: higher means a better fit). APS scores a label by the
//! probability mass ranked at or above it (a nonconformity score: higher means
//! a worse fit). [`ScoreConvention`] fixes the quantile direction and the
//! inclusion rule for each, so call sites never choose them by hand.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::tensor::Matrix;

/// Direction of a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreConvention {
    /// Higher is a better fit; sets keep labels scoring at or above the threshold.
    Conformity,
    /// Higher is a worse fit; sets keep labels scoring at or below the threshold.
    Nonconformity,
}

/// Calibrated score threshold. Saturates to `±∞` when the finite-sample
/// correction asks for an order statistic beyond the calibration set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold(pub f64);

impl Threshold {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_saturated(self) -> bool {
        self.0.is_infinite()
    }
}

/// Subset of the `K` classes for one node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PredictionSet {
    members: Vec<bool>,
}

impl PredictionSet {
    pub fn empty(k: usize) -> Self {
        Self {
            members: vec![false; k],
        }
    }

    pub fn full(k: usize) -> Self {
        Self {
            members: vec![true; k],
        }
    }

    pub fn from_classes(k: usize, classes: &[usize]) -> Self {
        let mut s = Self::empty(k);
        for &c in classes {
            s.members[c] = true;
        }
        s
    }

    pub fn contains(&self, class: usize) -> bool {
        self.members.get(class).copied().unwrap_or(false)
    }

    pub fn size(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    pub fn classes(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&c| self.members[c]).collect()
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.members
            .iter()
            .zip(&other.members)
            .all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpMethod {
    Thr,
    Aps,
}

impl CpMethod {
    pub fn convention(self) -> ScoreConvention {
        match self {
            CpMethod::Thr => ScoreConvention::Conformity,
            CpMethod::Aps => ScoreConvention::Nonconformity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CpMethod::Thr => "thr",
            CpMethod::Aps => "aps",
        }
    }

    /// Score of `class` under this method's convention.
    pub fn score(self, probs: &[f64], class: usize) -> Result<f64> {
        match self {
            CpMethod::Thr => thr_score(probs, class),
            CpMethod::Aps => aps_score(probs, class),
        }
    }

    pub fn build_set(self, probs: &[f64], threshold: Threshold) -> PredictionSet {
        match self {
            CpMethod::Thr => build_set_thr(probs, threshold),
            CpMethod::Aps => build_set_aps(probs, threshold),
        }
    }
}

impl fmt::Display for CpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CpMethod {
    type Err = RocpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thr" => Ok(CpMethod::Thr),
            "aps" => Ok(CpMethod::Aps),
            other => Err(RocpError::InvalidArgument(format!("unknown conformal method `{other}`"))),
        }
    }
}

fn check_class(probs: &[f64], class: usize) -> Result<()> {
    if class >= probs.len() {
        return Err(RocpError::InvalidArgument(format!(
            "class {class} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(())
}

/// THR conformity score: the probability of `class`.
pub fn thr_score(probs: &[f64], class: usize) -> Result<f64> {
    check_class(probs, class)?;
    Ok(probs[class])
}

/// Class indices by descending probability, ties broken by ascending index.
pub fn descending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// Cumulative sums of `probs` taken in descending order.
fn ranked_cumsum(probs: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let order = descending_order(probs);
    let mut acc = 0.0;
    let cums = order
        .iter()
        .map(|&c| {
            acc += probs[c];
            acc
        })
        .collect();
    (order, cums)
}

/// APS nonconformity score: total probability of the classes ranked at or above `class`.
pub fn aps_score(probs: &[f64], class: usize) -> Result<f64> {
    check_class(probs, class)?;
    let (order, cums) = ranked_cumsum(probs);
    let rank = order.iter().position(|&c| c == class).expect("class is ranked");
    Ok(cums[rank])
}

/// Finite-sample-corrected quantile of calibration scores.
///
/// Nonconformity: the `⌈(1−ε)(p+1)⌉`-th smallest score, `+∞` past the end.
/// Conformity: the `⌊ε(p+1)⌋`-th smallest score, `−∞` at index 0.
pub fn conformal_quantile(scores: &[f64], epsilon: f64, convention: ScoreConvention) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(RocpError::Empty("calibration scores"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RocpError::InvalidArgument(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let p = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let index = quantile_index(p, epsilon, convention);
    let value = match convention {
        ScoreConvention::Nonconformity if index > p => f64::INFINITY,
        ScoreConvention::Conformity if index == 0 => f64::NEG_INFINITY,
        _ => sorted[index - 1],
    };
    Ok(Threshold(value))
}

/// 1-based order-statistic index used by [`conformal_quantile`].
///
/// A small slack absorbs rounding in products that are integers in exact arithmetic.
pub fn quantile_index(p: usize, epsilon: f64, convention: ScoreConvention) -> usize {
    const SLACK: f64 = 1e-9;
    let n = (p + 1) as f64;
    match convention {
        ScoreConvention::Nonconformity => ((1.0 - epsilon) * n - SLACK).ceil().max(1.0) as usize,
        ScoreConvention::Conformity => (epsilon * n + SLACK).floor() as usize,
    }
}

/// Classes whose probability is at least the threshold. May be empty.
pub fn build_set_thr(probs: &[f64], threshold: Threshold) -> PredictionSet {
    PredictionSet {
        members: probs.iter().map(|&p| p >= threshold.0).collect(),
    }
}

/// Shortest descending-probability prefix whose mass reaches the threshold.
/// Always holds at least the top class.
pub fn build_set_aps(probs: &[f64], threshold: Threshold) -> PredictionSet {
    let k = probs.len();
    if threshold.0 == f64::INFINITY {
        return PredictionSet::full(k);
    }
    let (order, cums) = ranked_cumsum(probs);
    let stop = cums.iter().position(|&c| c >= threshold.0).unwrap_or(k - 1);
    let mut set = PredictionSet::empty(k);
    for &c in &order[..=stop] {
        set.members[c] = true;
    }
    set
}

/// Threshold and per-test-node sets from one calibration pass.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub threshold: Threshold,
    pub sets: Vec<PredictionSet>,
}

/// Calibrates on `calib` (using true labels) and builds sets for `test`.
pub fn calibrate_predict(
    probs: &Matrix,
    labels: &[usize],
    calib: &[usize],
    test: &[usize],
    epsilon: f64,
    method: CpMethod,
) -> Result<Calibrated> {
    if calib.is_empty() {
        return Err(RocpError::Empty("calibration set"));
    }
    let n = probs.rows();
    let mut in_calib = vec![false; n];
    for &c in calib {
        if c >= n {
            return Err(RocpError::InvalidArgument(format!("calibration node {c} outside [0, {n})")));
        }
        in_calib[c] = true;
    }
    for &t in test {
        if t >= n {
            return Err(RocpError::InvalidArgument(format!("test node {t} outside [0, {n})")));
        }
        if in_calib[t] {
            return Err(RocpError::Overlap(t));
        }
    }
    let scores = calib
        .iter()
        .map(|&v| method.score(probs.row(v), labels[v]))
        .collect::<Result<Vec<_>>>()?;
    let threshold = conformal_quantile(&scores, epsilon, method.convention())?;
    let sets = test
        .iter()
        .map(|&v| method.build_set(probs.row(v), threshold))
        .collect();
    Ok(Calibrated { threshold, sets })
}
