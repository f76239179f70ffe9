//! Central finite-difference check of backpropagated gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;
use crate::train::{joint_loss, MultiTaskModel};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// Largest `|a − n| / max(|a|, |n|, floor)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where the loss is not smooth within the probe step
    /// (a ReLU kink or a partner switch), left out of the comparison.
    pub skipped: usize,
}

/// Settings of [`check_gradients`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Second differences above this mark a coordinate as non-smooth.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
            kink_tolerance: 1e-7,
        }
    }
}

fn loss<M: MultiTaskModel>(model: &M, features: &Tensor, labels: &[&[f64]]) -> Result<f64> {
    let mut g = Graph::new();
    let (total, _) = joint_loss(model, &mut g, features, labels)?;
    Ok(g.value(total).data()[0])
}

/// Compares the gradient of the joint loss with respect to every trainable
/// parameter entry against central differences.
pub fn check_gradients<M: MultiTaskModel + Clone>(
    model: &M,
    features: &Tensor,
    labels: &[&[f64]],
    config: GradCheckConfig,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let (total, _) = joint_loss(model, &mut g, features, labels)?;
    let base = g.value(total).data()[0];
    let grads = g.backward(total)?;
    let analytic: Vec<Option<Tensor>> = model
        .params()
        .iter()
        .map(|p| {
            (!p.frozen).then(|| {
                grads
                    .param(p.id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
        })
        .collect();

    let mut out = GradCheck::default();
    let mut probe = model.clone();
    for (pi, a) in analytic.iter().enumerate() {
        let Some(a) = a else { continue };
        for k in 0..a.len() {
            let orig = probe.params()[pi].value.data()[k];
            let eval = |v: f64, m: &mut M| -> Result<f64> {
                m.params_mut()[pi].value.data_mut()[k] = v;
                loss(m, features, labels)
            };
            let plus = eval(orig + config.step, &mut probe)?;
            let minus = eval(orig - config.step, &mut probe)?;
            eval(orig, &mut probe)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("finite-difference probe".into()));
            }
            if ((plus - base) - (base - minus)).abs() > config.kink_tolerance {
                out.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * config.step);
            let analytic = a.data()[k];
            let denom = analytic.abs().max(numeric.abs()).max(config.floor);
            out.max_rel_error = out.max_rel_error.max((analytic - numeric).abs() / denom);
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InputLayout;
    use crate::model::TrainedModel;
    use crate::param::ParamAlloc;
    use crate::param::Parameterized;
    use alloc::vec;

    #[test]
    fn mlp_gradients_match() {
        let mut alloc = ParamAlloc::new(11);
        let m = TrainedModel::mlp("m", "t", &InputLayout::dense(3), &[4, 3], None, &mut alloc).unwrap();
        let x = Tensor::new(
            &[4, 3],
            vec![0.3, -1.2, 0.8, 1.1, 0.4, -0.6, -0.9, 0.2, 1.5, 0.05, -0.3, 0.7],
        )
        .unwrap();
        let y = [1.0, 0.0, 1.0, 0.0];
        let r = check_gradients(&m, &x, &[&y], GradCheckConfig::default()).unwrap();
        assert!(r.checked > 20);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn frozen_parameters_are_not_probed() {
        let mut alloc = ParamAlloc::new(12);
        let mut m = TrainedModel::mlp("m", "t", &InputLayout::dense(2), &[3], None, &mut alloc).unwrap();
        m.layers[0].set_frozen(true);
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let y = [1.0, 0.0];
        let r = check_gradients(&m, &x, &[&y], GradCheckConfig::default()).unwrap();
        assert_eq!(r.checked + r.skipped, 3 + 1);
    }
}
