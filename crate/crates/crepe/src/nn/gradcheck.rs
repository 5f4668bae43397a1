//! Finite-difference verification of analytic gradients.
//!
//! Checking every coordinate of a full model is quadratic in parameter
//! count, so the harness samples a seeded subset of coordinates per named
//! tensor and compares central differences against the analytic gradient.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::tensor::Tensor;
use crate::util::component_rng;

pub const DEFAULT_H: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Relative error denominators are floored here so near-zero gradient
/// pairs do not divide noise by noise.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub samples: usize,
    pub tolerance: f64,
    pub h: f64,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckEntry>,
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Samples `samples_per_tensor` coordinates of every named parameter and
/// compares the analytic gradient against a central finite difference of
/// the loss. `loss` must be a deterministic pure function of the
/// parameters; `analytic` comes from one backward pass at `params`.
pub fn check_sampled(
    params: &BTreeMap<String, Tensor<f64>>,
    analytic: &BTreeMap<String, Tensor<f64>>,
    mut loss: impl FnMut(&BTreeMap<String, Tensor<f64>>) -> Result<f64>,
    samples_per_tensor: usize,
    seed: u64,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        samples: 0,
        tolerance,
        h,
        max_rel_err: 0.0,
        failures: Vec::new(),
        worst: None,
    };
    let mut work = params.clone();
    for (name, tensor) in params {
        let mut rng = component_rng(seed, name);
        let grad = analytic.get(name);
        for _ in 0..samples_per_tensor.min(tensor.len()) {
            let idx = rng.random_range(0..tensor.len());
            let base = tensor.data()[idx];
            let probe = |work: &mut BTreeMap<String, Tensor<f64>>,
                         loss: &mut dyn FnMut(&BTreeMap<String, Tensor<f64>>) -> Result<f64>,
                         value: f64|
             -> Result<f64> {
                work.get_mut(name).expect("cloned key").data_mut()[idx] = value;
                loss(work)
            };
            let plus = probe(&mut work, &mut loss, base + h)?;
            let minus = probe(&mut work, &mut loss, base - h)?;
            probe(&mut work, &mut |_| Ok(0.0), base)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.map_or(0.0, |g| g.data()[idx]);
            let err = rel_err(a, numeric);
            let entry = GradCheckEntry {
                name: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_err: err,
            };
            report.samples += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(entry.clone());
            }
            if err > tolerance {
                report.failures.push(entry);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_loss(params: &BTreeMap<String, Tensor<f64>>) -> Result<f64> {
        // loss = sum(w^2) + 3*sum(b)
        let mut loss = 0.0;
        for &v in params["w"].data() {
            loss += v * v;
        }
        for &v in params["b"].data() {
            loss += 3.0 * v;
        }
        Ok(loss)
    }

    fn setup() -> (BTreeMap<String, Tensor<f64>>, BTreeMap<String, Tensor<f64>>) {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::new(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap());
        params.insert("b".to_string(), Tensor::new(1, 2, vec![0.1, -0.2]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), params["w"].map(|v| 2.0 * v));
        grads.insert("b".to_string(), Tensor::filled(1, 2, 3.0));
        (params, grads)
    }

    #[test]
    fn correct_gradients_pass() {
        let (params, grads) = setup();
        let report = check_sampled(
            &params,
            &grads,
            quadratic_loss,
            8,
            17,
            DEFAULT_H,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "max_rel_err={}", report.max_rel_err);
        assert!(report.samples >= 6);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (params, mut grads) = setup();
        grads.get_mut("w").unwrap().data_mut()[1] += 0.5;
        let report = check_sampled(
            &params,
            &grads,
            quadratic_loss,
            8,
            17,
            DEFAULT_H,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.failures.iter().any(|f| f.name == "w" && f.index == 1));
    }

    #[test]
    fn probe_restores_parameters() {
        let (params, grads) = setup();
        let before = params.clone();
        check_sampled(&params, &grads, quadratic_loss, 4, 3, DEFAULT_H, DEFAULT_TOLERANCE)
            .unwrap();
        assert_eq!(params, before);
    }
}
