//! Central finite-difference gradient checking.
//!
//! The independent oracle for every differentiable operation: rebuild the
//! forward pass at `x ± eps` for each parameter element and compare the
//! slope against the analytic gradient from `backward`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{GlyceError, Result};
use crate::graph::{Graph, NodeId};
use crate::math::abs;
use crate::params::{ParamId, ParamSet};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences carry
/// cancellation noise of roughly |f| * 1e-16 / eps, about 1e-11 here, so
/// gradients below this floor are held to the absolute bound
/// floor * tolerance instead of a meaningless ratio against noise.
pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    /// max over parameter elements of
    /// `|analytic - central| / max(|analytic|, |central|, GRAD_FLOOR)`
    pub max_rel_error: f64,
    /// name and flat element index of the worst parameter
    pub worst: (String, usize),
}

/// Runs `build` to produce a scalar loss from the current parameter
/// values; perturbs every parameter element by `±eps` and compares the
/// central difference against the analytic gradient.
pub fn grad_check<F>(params: &mut ParamSet, eps: f64, build: F) -> Result<GradCheckOutcome>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(GlyceError::Config("grad_check: eps must be positive".into()));
    }

    params.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let base = g.scalar(loss)?;
    if !base.is_finite() {
        return Err(GlyceError::Numeric("grad_check: non-finite loss".into()));
    }
    g.backward(loss)?;
    g.accumulate_param_grads(params);

    let analytic: Vec<Vec<f64>> = params.iter().map(|(_, e)| e.tensor.grad().to_vec()).collect();
    let ids: Vec<ParamId> = params.iter().map(|(id, _)| id).collect();

    let mut outcome = GradCheckOutcome {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
    };
    for (pi, &id) in ids.iter().enumerate() {
        for j in 0..params.get(id).numel() {
            let old = params.get(id).values()[j];
            params.get_mut(id).values_mut()[j] = old + eps;
            let up = eval(&build, params)?;
            params.get_mut(id).values_mut()[j] = old - eps;
            let down = eval(&build, params)?;
            params.get_mut(id).values_mut()[j] = old;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi][j];
            let rel = abs(a - numeric) / abs(a).max(abs(numeric)).max(GRAD_FLOOR);
            if rel > outcome.max_rel_error {
                outcome.max_rel_error = rel;
                outcome.worst = (params.entry(id).name.clone(), j);
            }
        }
    }
    Ok(outcome)
}

fn eval<F>(build: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    g.scalar(loss)
}
