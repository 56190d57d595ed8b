use super::TrainError;
use crate::autodiff::bce_value;

/// Mean binary cross-entropy `−[ŷ ln y + (1−ŷ) ln(1−y)]` with scores
/// clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::LabelCount {
            sequences: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(&l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(TrainError::BadLabel(l));
    }
    Ok(bce_value(scores, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let expect = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn clamp_floor() {
        let l = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l > 0.0 && l <= 1e-6 * (1e-7f64).ln().abs(), "{l}");
    }

    #[test]
    fn rejects_non_binary_labels() {
        assert!(matches!(
            bce_loss(&[0.5], &[0.5]),
            Err(TrainError::BadLabel(_))
        ));
    }
}
