//! Multinomial logistic regression on `[X_s | flattened X_t]`.

use crate::error::Result;
use crate::fusion::{assign_level, LevelPolicy, RiskLevel, NUM_CLASSES};
use crate::model::{Inputs, LossParts};
use crate::nn::{cross_entropy, cross_entropy_grad, softmax_rows, Activation, DenseLayer, Module, Parameter};
use crate::tensor::Tensor;
use crate::train::{LabeledInputs, Trainable};

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub layer: DenseLayer,
}

/// Static features followed by every time step's channels, padding included.
pub fn flatten_features(inputs: &Inputs) -> Result<Tensor> {
    let n = inputs.len();
    let width = inputs.x_t.len() / n.max(1);
    let flat = inputs.x_t.clone().reshape(&[n, width])?;
    Tensor::concat_cols(&[&inputs.x_s, &flat])
}

impl LogisticRegression {
    /// All weights and biases zero, so every prediction starts uniform.
    pub fn zeros(input_dim: usize) -> Self {
        LogisticRegression {
            layer: DenseLayer::from_parts(
                "logreg",
                Tensor::zeros(&[input_dim, NUM_CLASSES]),
                Tensor::zeros(&[NUM_CLASSES]),
                Activation::Identity,
            )
            .expect("zero tensors have matching shapes"),
        }
    }

    pub fn for_inputs(inputs: &Inputs) -> Result<Self> {
        Ok(LogisticRegression::zeros(flatten_features(inputs)?.cols()))
    }

    pub fn predict_proba(&self, inputs: &Inputs) -> Result<Tensor> {
        softmax_rows(&self.layer.apply(&flatten_features(inputs)?)?)
    }

    pub fn predict(&self, inputs: &Inputs, policy: &LevelPolicy) -> Result<Vec<RiskLevel>> {
        let probs = self.predict_proba(inputs)?;
        (0..probs.rows()).map(|r| assign_level(probs.row(r), policy)).collect()
    }
}

impl Module for LogisticRegression {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layer.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layer.parameters_mut()
    }
}

impl Trainable for LogisticRegression {
    fn loss_and_backward(&mut self, data: &LabeledInputs, _lambda_ae: f64) -> Result<LossParts> {
        let logits = self.layer.forward(&flatten_features(&data.inputs)?)?;
        let probs = softmax_rows(&logits)?;
        let ce = cross_entropy(&probs, &data.labels)?;
        self.layer.backward(&cross_entropy_grad(&probs, &data.labels, 1.0)?)?;
        Ok(LossParts { total: ce, ce, ae: 0.0 })
    }

    fn evaluate_loss(&self, data: &LabeledInputs, _lambda_ae: f64) -> Result<LossParts> {
        let ce = cross_entropy(&self.predict_proba(&data.inputs)?, &data.labels)?;
        Ok(LossParts { total: ce, ce, ae: 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ConfusionMatrix;
    use crate::train::{train, TrainConfig};
    use crate::nn::AdamConfig;

    /// Two features, classes separated along the first with margin 1.
    fn separable() -> LabeledInputs {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let class = i % 3;
            let x = class as f64 * 3.0 + (i as f64 * 0.37).sin();
            rows.push(vec![x, (i as f64 * 1.3).cos()]);
            labels.push(class);
        }
        let n = rows.len();
        let x_s = Tensor::from_rows(&rows).unwrap();
        let inputs = Inputs::new(x_s, Tensor::zeros(&[n, 1, 1]), Tensor::filled(&[n, 1], 1.0)).unwrap();
        LabeledInputs::new(inputs, labels).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let data = separable();
        let lr = LogisticRegression::for_inputs(&data.inputs).unwrap();
        let p = lr.predict_proba(&data.inputs).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        // Uniform rows tie; the tie-break sends every record to High.
        let pred = lr.predict(&data.inputs, &LevelPolicy::default()).unwrap();
        assert!(pred.iter().all(|&l| l == RiskLevel::High));
    }

    #[test]
    fn separable_data_is_learned_exactly() {
        let data = separable();
        let mut lr = LogisticRegression::for_inputs(&data.inputs).unwrap();
        let cfg = TrainConfig {
            max_epochs: 400,
            batch_size: 10,
            patience: 50,
            adam: AdamConfig { learning_rate: 0.05, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        train(&mut lr, &data, &data, &cfg, 1).unwrap();
        let pred = lr.predict(&data.inputs, &LevelPolicy::default()).unwrap();
        let truth: Vec<RiskLevel> = data.labels.iter().map(|&l| RiskLevel::from_index(l).unwrap()).collect();
        assert_eq!(ConfusionMatrix::from_pairs(&truth, &pred).unwrap().accuracy().unwrap(), 1.0);
    }
}
