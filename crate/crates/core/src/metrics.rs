use crate::error::{Error, Result};

fn check(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Parameter("metrics need at least one prediction".into()));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Unweighted mean of the two per-class F1 scores. A class with no true
/// positives (including one absent from both inputs) scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let mut total = 0.0;
    for class in 0..2 {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == class && l == class).count();
        let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == class && l != class).count();
        let fn_ = preds.iter().zip(labels).filter(|&(&p, &l)| p != class && l == class).count();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(total / 2.0)
}

/// Accuracy and macro-F1 of `preds` restricted to `indices`.
pub fn evaluate_subset(preds: &[usize], labels: &[usize], indices: &[usize]) -> Result<(f64, f64)> {
    let p: Vec<usize> = indices.iter().map(|&i| preds[i]).collect();
    let l: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    Ok((accuracy(&p, &l)?, macro_f1(&p, &l)?))
}
