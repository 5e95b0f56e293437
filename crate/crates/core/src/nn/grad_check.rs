use super::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A model fragment that maps an input tensor to a scalar loss.
pub trait Differentiable {
    /// Forward pass only.
    fn loss(&mut self, input: &Tensor) -> Result<f64>;

    /// Forward and backward. Parameter gradients are accumulated into
    /// `Parameter::grad`; the gradient with respect to `input` is returned.
    fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    /// On/off state of every relu unit when evaluated at `input`. Coordinates
    /// whose difference stencil changes this pattern straddle a kink, where
    /// the loss is not differentiable, and are skipped. Fragments without
    /// relu units keep the default.
    fn relu_pattern(&mut self, _input: &Tensor) -> Result<Vec<bool>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Upper bound on checked coordinates; at least 50 are checked whenever
    /// the fragment has that many.
    pub max_coordinates: usize,
    pub check_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_coordinates: 400,
            check_input: true,
        }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Input,
    Param(usize),
}

fn evenly_spaced(len: usize, take: usize) -> Vec<usize> {
    if take >= len {
        return (0..len).collect();
    }
    (0..take).map(|k| k * len / take).collect()
}

/// Outcome of a gradient check, including where the worst disagreement was.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates excluded because their stencil crossed a relu kink.
    pub skipped_at_kinks: usize,
    /// `(slot name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Worst relative error between analytic and central-difference gradients,
/// `|a - n| / max(|a|, |n|, 1e-8)`, over a deterministic coordinate sample.
pub fn grad_check<D: Differentiable>(
    fragment: &mut D,
    input: &Tensor,
    options: &GradCheckOptions,
) -> Result<f64> {
    Ok(grad_check_report(fragment, input, options)?.max_relative_error)
}

pub fn grad_check_report<D: Differentiable>(
    fragment: &mut D,
    input: &Tensor,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let eps = options.epsilon;
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    for p in fragment.parameters_mut() {
        p.zero_grad();
    }
    let (_, input_grad) = fragment.loss_and_grad(input)?;
    let param_grads: Vec<Tensor> = fragment
        .parameters_mut()
        .iter()
        .map(|p| p.grad.clone())
        .collect();

    let mut slots: Vec<(Slot, usize)> = Vec::new();
    if options.check_input {
        slots.push((Slot::Input, input.len()));
    }
    slots.extend(param_grads.iter().enumerate().map(|(i, g)| (Slot::Param(i), g.len())));
    let total: usize = slots.iter().map(|s| s.1).sum();
    let budget = options.max_coordinates.max(50);
    let per_slot = if total <= budget {
        usize::MAX
    } else {
        (budget / slots.len().max(1)).max(4)
    };

    let base_pattern = fragment.relu_pattern(input)?;
    let mut probe = input.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_at_kinks: 0,
        worst: None,
    };
    for (slot, len) in slots {
        for idx in evenly_spaced(len, per_slot) {
            let analytic = match slot {
                Slot::Input => input_grad.data()[idx],
                Slot::Param(p) => param_grads[p].data()[idx],
            };
            let mut smooth = true;
            let mut evaluate = |fragment: &mut D, probe: &Tensor| -> Result<f64> {
                let loss = fragment.loss(probe)?;
                if !base_pattern.is_empty() && fragment.relu_pattern(probe)? != base_pattern {
                    smooth = false;
                }
                Ok(loss)
            };
            let numeric = match slot {
                Slot::Input => {
                    let orig = probe.data()[idx];
                    probe.data_mut()[idx] = orig + eps;
                    let up = evaluate(fragment, &probe)?;
                    probe.data_mut()[idx] = orig - eps;
                    let down = evaluate(fragment, &probe)?;
                    probe.data_mut()[idx] = orig;
                    (up - down) / (2.0 * eps)
                }
                Slot::Param(p) => {
                    let orig = fragment.parameters_mut()[p].value.data()[idx];
                    fragment.parameters_mut()[p].value.data_mut()[idx] = orig + eps;
                    let up = evaluate(fragment, input)?;
                    fragment.parameters_mut()[p].value.data_mut()[idx] = orig - eps;
                    let down = evaluate(fragment, input)?;
                    fragment.parameters_mut()[p].value.data_mut()[idx] = orig;
                    (up - down) / (2.0 * eps)
                }
            };
            if !smooth {
                report.skipped_at_kinks += 1;
                continue;
            }
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                let name = match slot {
                    Slot::Input => "input".to_string(),
                    Slot::Param(p) => fragment.parameters_mut()[p].name.clone(),
                };
                report.worst = Some((name, idx, analytic, numeric));
            }
        }
    }
    for p in fragment.parameters_mut() {
        p.zero_grad();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// loss = 0.5‖W x‖² with a single parameter matrix.
    struct Quadratic {
        w: Parameter,
        wrong: bool,
    }

    impl Differentiable for Quadratic {
        fn loss(&mut self, input: &Tensor) -> Result<f64> {
            let y = input.matmul(&self.w.value)?;
            Ok(0.5 * y.data().iter().map(|v| v * v).sum::<f64>())
        }

        fn loss_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
            let y = input.matmul(&self.w.value)?;
            let loss = 0.5 * y.data().iter().map(|v| v * v).sum::<f64>();
            let mut gw = input.matmul_tn(&y)?;
            if self.wrong {
                gw.scale(1.01);
            }
            self.w.grad.add_assign(&gw)?;
            Ok((loss, y.matmul_nt(&self.w.value)?))
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.w]
        }
    }

    fn fixture(wrong: bool) -> (Quadratic, Tensor) {
        let w = Tensor::matrix(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.25, 1.5, -1.0]).unwrap();
        (
            Quadratic {
                w: Parameter::new("w", w),
                wrong,
            },
            x,
        )
    }

    #[test]
    fn exact_gradient_passes() {
        let (mut q, x) = fixture(false);
        let err = grad_check(&mut q, &x, &GradCheckOptions::default()).unwrap();
        assert!(err < 1e-7, "{err}");
        assert!(q.w.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let (mut q, x) = fixture(true);
        let err = grad_check(&mut q, &x, &GradCheckOptions::default()).unwrap();
        assert!(err > 5e-3, "{err}");
    }

    #[test]
    fn step_outside_range_rejected() {
        let (mut q, x) = fixture(false);
        let opts = GradCheckOptions {
            epsilon: 1e-2,
            ..GradCheckOptions::default()
        };
        assert!(grad_check(&mut q, &x, &opts).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_covers_budget() {
        assert_eq!(evenly_spaced(10, 20), (0..10).collect::<Vec<_>>());
        let s = evenly_spaced(1000, 50);
        assert_eq!(s.len(), 50);
        assert_eq!(s[1], 20);
    }
}
