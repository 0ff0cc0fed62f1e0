//! Online cost-sensitive one-vs-all multi-class classifier.
//!
//! One linear cost estimator per class. Prediction selects the class with the
//! lowest estimated cost; an update performs a squared-loss gradient step per
//! class against an observed cost vector. Features are scaled to `[0, 1]` by a
//! per-dimension running max maintained inside the model, and a constant bias
//! term is appended to every vector.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("feature dimension must be at least 1")]
    ZeroDimension,
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cost vector length mismatch: model has {expected} classes, got {got}")]
    CostLengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Per-class costs for one training example. Class ids are 1-based;
/// `costs[0]` belongs to class 1. The target class carries the minimum
/// cost of exactly 1.0 and costs grow with distance from it.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    pub costs: Vec<f64>,
}

impl CostVector {
    pub fn new(costs: Vec<f64>) -> Self {
        Self { costs }
    }

    /// 1-based id of the minimum-cost class, ties toward the lower id.
    pub fn target_class(&self) -> usize {
        argmin_one_based(&self.costs)
    }
}

/// Online one-vs-all model: `num_classes` linear regressors over
/// `dim + 1` weights each (bias last), trained with plain SGD on
/// squared loss against per-class costs.
#[derive(Debug, Clone)]
pub struct CsoaaModel {
    num_classes: usize,
    dim: usize,
    learning_rate: f64,
    /// One row per class, `dim + 1` weights (bias term last).
    weights: Vec<Vec<f64>>,
    /// Per-dimension running max used for scale normalization.
    running_max: Vec<f64>,
    updates_seen: u64,
}

impl CsoaaModel {
    pub fn new(num_classes: usize, dim: usize, learning_rate: f64) -> Result<Self, LearnerError> {
        if num_classes < 2 {
            return Err(LearnerError::TooFewClasses(num_classes));
        }
        if dim < 1 {
            return Err(LearnerError::ZeroDimension);
        }
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(LearnerError::BadLearningRate(learning_rate));
        }
        Ok(Self {
            num_classes,
            dim,
            learning_rate,
            weights: vec![vec![0.0; dim + 1]; num_classes],
            running_max: vec![0.0; dim],
            updates_seen: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn updates_seen(&self) -> u64 {
        self.updates_seen
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    #[cfg(test)]
    pub(crate) fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    /// Estimated cost of assigning `class` (1-based) to the already
    /// normalized-and-biased vector `xb`.
    fn estimate(&self, class: usize, xb: &[f64]) -> f64 {
        self.weights[class - 1]
            .iter()
            .zip(xb)
            .map(|(w, x)| w * x)
            .sum()
    }

    /// Absorbs `x` into the running max and returns the normalized vector
    /// with the bias term appended.
    fn normalize(&mut self, x: &[f64]) -> Result<Vec<f64>, LearnerError> {
        if x.len() != self.dim {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("features"));
        }
        let mut xb = Vec::with_capacity(self.dim + 1);
        for (i, &v) in x.iter().enumerate() {
            let mag = v.abs();
            if mag > self.running_max[i] {
                self.running_max[i] = mag;
            }
            let max = self.running_max[i];
            xb.push(if max > 0.0 { v / max } else { 0.0 });
        }
        xb.push(1.0);
        Ok(xb)
    }

    /// Picks the class (1-based) with the lowest estimated cost; ties break
    /// toward the lowest class id, i.e. the fewest resources.
    pub fn predict(&mut self, x: &[f64]) -> Result<usize, LearnerError> {
        let xb = self.normalize(x)?;
        let estimates: Vec<f64> = (1..=self.num_classes)
            .map(|c| self.estimate(c, &xb))
            .collect();
        Ok(argmin_one_based(&estimates))
    }

    /// One SGD step per class: `w_c <- w_c - lr * (w_c . xb - cost_c) * xb`.
    pub fn update(&mut self, x: &[f64], costs: &CostVector) -> Result<(), LearnerError> {
        if costs.costs.len() != self.num_classes {
            return Err(LearnerError::CostLengthMismatch {
                expected: self.num_classes,
                got: costs.costs.len(),
            });
        }
        if costs.costs.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("costs"));
        }
        let xb = self.normalize(x)?;
        for (row, &cost) in self.weights.iter_mut().zip(&costs.costs) {
            let err: f64 = row.iter().zip(&xb).map(|(w, x)| w * x).sum::<f64>() - cost;
            let step = self.learning_rate * err;
            for (w, &x) in row.iter_mut().zip(&xb) {
                *w -= step * x;
            }
        }
        debug_assert!(self
            .weights
            .iter()
            .all(|row| row.iter().all(|w| w.is_finite())));
        self.updates_seen += 1;
        Ok(())
    }
}

/// Index of the minimum as a 1-based class id; ties go to the lower id.
fn argmin_one_based(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_costs(n: usize) -> CostVector {
        CostVector::new(vec![1.0; n])
    }

    #[test]
    fn new_model_zero_initialized() {
        let m = CsoaaModel::new(32, 3, 0.1).unwrap();
        assert_eq!(m.weights().len(), 32);
        assert!(m.weights().iter().all(|row| row.len() == 4));
        assert!(m.weights().iter().flatten().all(|&w| w == 0.0));
        assert_eq!(m.updates_seen(), 0);

        let m = CsoaaModel::new(32, 6, 0.1).unwrap();
        assert!(m.weights().iter().all(|row| row.len() == 7));
    }

    #[test]
    fn new_model_rejects_bad_shapes() {
        assert_eq!(
            CsoaaModel::new(1, 3, 0.1).unwrap_err(),
            LearnerError::TooFewClasses(1)
        );
        assert_eq!(
            CsoaaModel::new(4, 0, 0.1).unwrap_err(),
            LearnerError::ZeroDimension
        );
        assert!(matches!(
            CsoaaModel::new(4, 2, 0.0),
            Err(LearnerError::BadLearningRate(_))
        ));
    }

    #[test]
    fn untrained_predict_ties_to_class_one() {
        let mut m = CsoaaModel::new(8, 2, 0.1).unwrap();
        assert_eq!(m.predict(&[3.0, 9.0]).unwrap(), 1);
    }

    #[test]
    fn predict_returns_argmin_class() {
        let mut m = CsoaaModel::new(8, 1, 0.1).unwrap();
        for (i, row) in m.weights_mut().iter_mut().enumerate() {
            // bias-only estimates: class 7 strictly lowest
            row[1] = if i == 6 { -5.0 } else { i as f64 };
        }
        assert_eq!(m.predict(&[1.0]).unwrap(), 7);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let mut m = CsoaaModel::new(4, 2, 0.1).unwrap();
        assert!(matches!(
            m.predict(&[1.0]),
            Err(LearnerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_update_matches_hand_computation() {
        // x normalizes to [1.0], bias appended -> xb = [1, 1]; all costs 1:
        // w_c <- 0 - 0.1 * (0 - 1) * xb = [0.1, 0.1] for every class.
        let mut m = CsoaaModel::new(4, 1, 0.1).unwrap();
        m.update(&[7.0], &flat_costs(4)).unwrap();
        for row in m.weights() {
            assert_eq!(row.as_slice(), &[0.1, 0.1]);
        }
        assert_eq!(m.updates_seen(), 1);
    }

    #[test]
    fn zero_learning_rate_is_rejected() {
        assert!(CsoaaModel::new(4, 1, 0.0).is_err());
    }

    #[test]
    fn repeated_updates_converge_monotonically() {
        let mut m = CsoaaModel::new(6, 2, 0.1).unwrap();
        let x = [4.0, 250.0];
        let costs = CostVector::new(vec![5.0, 3.0, 1.0, 2.0, 4.0, 6.0]);
        let mut prev_gap = f64::INFINITY;
        for _ in 0..60 {
            m.update(&x, &costs).unwrap();
            let xb = m.normalize(&x).unwrap();
            let gap: f64 = (1..=6)
                .map(|c| (m.estimate(c, &xb) - costs.costs[c - 1]).abs())
                .sum();
            assert!(gap <= prev_gap + 1e-12, "gap {gap} grew past {prev_gap}");
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3);
        assert_eq!(m.predict(&x.to_vec()).unwrap(), 3);
    }

    #[test]
    fn converges_to_persistent_target_class() {
        // Fixed synthetic stream where class 12 always gets cost 1.
        let mut m = CsoaaModel::new(32, 3, 0.1).unwrap();
        let x = [10.0, 20.0, 0.5];
        let costs = CostVector::new(
            (1..=32)
                .map(|c| 1.0 + (c as f64 - 12.0).abs())
                .collect(),
        );
        for _ in 0..50 {
            m.update(&x, &costs).unwrap();
        }
        assert_eq!(m.predict(&x).unwrap(), 12);
        assert_eq!(m.updates_seen(), 50);
    }

    #[test]
    fn running_max_normalization_is_scale_stable() {
        // After a 10x-scaled observation raises the running max, the scaled
        // and unscaled models see identical normalized vectors.
        let mut a = CsoaaModel::new(3, 2, 0.1).unwrap();
        let mut b = CsoaaModel::new(3, 2, 0.1).unwrap();
        let xa = a.normalize(&[5.0, 40.0]).unwrap();
        let xb = b.normalize(&[50.0, 400.0]).unwrap();
        assert_eq!(xa, xb);
        // Once the max is absorbed, later smaller values agree too.
        let ya = a.normalize(&[2.5, 10.0]).unwrap();
        assert_eq!(ya, vec![0.5, 0.25, 1.0]);
    }

    #[test]
    fn update_rejects_non_finite_input() {
        let mut m = CsoaaModel::new(4, 1, 0.1).unwrap();
        assert_eq!(
            m.update(&[f64::NAN], &flat_costs(4)).unwrap_err(),
            LearnerError::NonFinite("features")
        );
        assert_eq!(
            m.update(&[1.0], &CostVector::new(vec![1.0, f64::INFINITY, 1.0, 1.0]))
                .unwrap_err(),
            LearnerError::NonFinite("costs")
        );
        assert_eq!(m.updates_seen(), 0);
    }
}
