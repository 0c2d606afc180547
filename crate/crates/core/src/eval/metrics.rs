use crate::conformal::PredictionSet;
use crate::error::{Result, RocpError};

/// Fraction of nodes whose true label lies in their prediction set.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    if sets.is_empty() {
        return Err(RocpError::Empty("test set"));
    }
    if sets.len() != labels.len() {
        return Err(RocpError::CountMismatch {
            what: "labels for prediction sets",
            expected: sets.len(),
            found: labels.len(),
        });
    }
    let hits = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Mean prediction-set size.
pub fn inefficiency(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(RocpError::Empty("test set"));
    }
    Ok(sets.iter().map(PredictionSet::size).sum::<usize>() as f64 / sets.len() as f64)
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(RocpError::Empty("prediction vector"));
    }
    if predicted.len() != labels.len() {
        return Err(RocpError::CountMismatch {
            what: "labels for predictions",
            expected: predicted.len(),
            found: labels.len(),
        });
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Micro-averaged F1 over all classes, from pooled true/false positives and
/// false negatives. For single-label predictions this coincides with accuracy.
pub fn f1_micro(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(RocpError::CountMismatch {
            what: "labels for predictions",
            expected: predicted.len(),
            found: labels.len(),
        });
    }
    let tp = predicted.iter().zip(labels).filter(|(p, y)| p == y).count() as f64;
    // each wrong prediction is one false positive (for the predicted class)
    // and one false negative (for the true class)
    let fp = predicted.len() as f64 - tp;
    let fn_ = fp;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / denom)
}
