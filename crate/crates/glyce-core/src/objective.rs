//! Auxiliary glyph-classification objective and the loss blend.
//!
//! The glyph encoder gets an extra supervision signal: predict the
//! character id from its own embedding. The blend weight decays
//! geometrically per epoch, lambda(t) = lambda0 * lambda1^t, so the
//! auxiliary term matters early and fades out.

use alloc::format;
use alloc::string::String;

use crate::error::{GlyceError, Result};
use crate::graph::{Graph, NodeId};
use crate::math::powi;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    lambda0: f64,
    lambda1: f64,
}

impl LambdaSchedule {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<LambdaSchedule> {
        if !(0.0..=1.0).contains(&lambda0) || !(0.0..=1.0).contains(&lambda1) {
            return Err(GlyceError::Config(format!(
                "lambda schedule: lambda0 {lambda0} and lambda1 {lambda1} must lie in [0, 1]"
            )));
        }
        Ok(LambdaSchedule { lambda0, lambda1 })
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// lambda0 * lambda1^t by repeated multiplication; exact at t = 0 and
    /// for lambda1 = 1.
    pub fn lambda_at(&self, t: u32) -> f64 {
        self.lambda0 * powi(self.lambda1, t)
    }
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule { lambda0: 0.1, lambda1: 0.8 }
    }
}

/// Values of one blended loss evaluation, for history records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLossParts {
    pub task_loss: f64,
    pub cls_loss: f64,
    pub lambda_t: f64,
    pub total: f64,
}

/// Cross entropy of `softmax(w h + b)` against the true character id.
pub fn image_cls_loss(
    g: &mut Graph,
    h: NodeId,
    w: NodeId,
    b: NodeId,
    char_id: usize,
) -> Result<NodeId> {
    let logits = g.dense(h, w, b)?;
    g.softmax_xent(logits, char_id)
}

/// total = (1 - lambda(t)) * task + lambda(t) * cls. The weight is a
/// constant in the graph, so gradients blend with the same factors. At
/// lambda = 0 the cls path contributes exactly zero value and gradient.
pub fn combined_loss(
    g: &mut Graph,
    task: NodeId,
    cls: NodeId,
    schedule: &LambdaSchedule,
    t: u32,
) -> Result<(NodeId, CombinedLossParts)> {
    let task_loss = g.scalar(task)?;
    let cls_loss = g.scalar(cls)?;
    if !task_loss.is_finite() || !cls_loss.is_finite() {
        return Err(GlyceError::Numeric(format!(
            "combined loss: non-finite inputs (task {task_loss}, cls {cls_loss})"
        )));
    }
    let lambda_t = schedule.lambda_at(t);
    let a = g.scale(task, 1.0 - lambda_t);
    let b = g.scale(cls, lambda_t);
    let total = g.add(a, b)?;
    let parts = CombinedLossParts { task_loss, cls_loss, lambda_t, total: g.scalar(total)? };
    Ok((total, parts))
}

/// Same blend when no auxiliary loss exists (lambda forced to zero for
/// the record, total aliases the task loss).
pub fn task_only_parts(g: &Graph, task: NodeId) -> Result<(NodeId, CombinedLossParts)> {
    let task_loss = g.scalar(task)?;
    if !task_loss.is_finite() {
        return Err(GlyceError::Numeric(String::from("task loss is non-finite")));
    }
    Ok((task, CombinedLossParts { task_loss, cls_loss: 0.0, lambda_t: 0.0, total: task_loss }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{abs, exp, ln};
    use crate::params::{ParamGroup, ParamSet};
    use crate::rng::GlyceRng;
    use crate::tensor::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn schedule_validates_range() {
        assert!(LambdaSchedule::new(1.2, 0.5).is_err());
        assert!(LambdaSchedule::new(0.5, -0.1).is_err());
        assert!(LambdaSchedule::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn lambda_at_matches_direct_arithmetic() {
        let s = LambdaSchedule::new(0.1, 0.8).unwrap();
        assert_eq!(s.lambda_at(0), 0.1);
        assert_eq!(s.lambda_at(3), 0.1 * (0.8 * 0.8 * 0.8));
        assert!(abs(s.lambda_at(3) - 0.0512) < 1e-12);
    }

    #[test]
    fn lambda_constant_when_decay_is_one() {
        let s = LambdaSchedule::new(0.1, 1.0).unwrap();
        for t in 0..=100 {
            assert_eq!(s.lambda_at(t), 0.1);
        }
    }

    #[test]
    fn lambda_is_monotone_non_increasing() {
        let mut rng = GlyceRng::seed_from(3, 0);
        for _ in 0..20 {
            let s = LambdaSchedule::new(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)).unwrap();
            let mut prev = s.lambda_at(0);
            for t in 1..=50 {
                let cur = s.lambda_at(t);
                assert!(cur <= prev, "lambda grew at t={t}");
                assert!((0.0..=1.0).contains(&cur));
                prev = cur;
            }
        }
    }

    fn cls_setup(n_chars: usize, d: usize) -> (ParamSet, crate::params::ParamId, crate::params::ParamId) {
        let mut ps = ParamSet::new();
        let w = ps.add("w", ParamGroup::Glyph, Tensor::zeros(&[n_chars, d])).unwrap();
        let b = ps.add("b", ParamGroup::Glyph, Tensor::zeros(&[n_chars])).unwrap();
        (ps, w, b)
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let (ps, w, b) = cls_setup(4, 3);
        let mut g = Graph::new();
        let h = g.input(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let wn = g.param(&ps, w);
        let bn = g.param(&ps, b);
        let loss = image_cls_loss(&mut g, h, wn, bn, 2).unwrap();
        assert!(abs(g.scalar(loss).unwrap() - ln(4.0)) < 1e-12);
    }

    #[test]
    fn saturated_bias_drives_loss_to_zero() {
        let (mut ps, w, b) = cls_setup(4, 3);
        ps.get_mut(b).values_mut()[1] = 50.0;
        let mut g = Graph::new();
        let h = g.input(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let wn = g.param(&ps, w);
        let bn = g.param(&ps, b);
        let loss = image_cls_loss(&mut g, h, wn, bn, 1).unwrap();
        assert!(g.scalar(loss).unwrap() < 1e-9);
    }

    #[test]
    fn random_case_matches_brute_force_softmax() {
        let mut rng = GlyceRng::seed_from(11, 0);
        let (n, d) = (6, 5);
        let (mut ps, w, b) = cls_setup(n, d);
        for v in ps.get_mut(w).values_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        for v in ps.get_mut(b).values_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        let h: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let target = 4;

        let mut logits = vec![0.0; n];
        for i in 0..n {
            logits[i] = ps.get(b).values()[i];
            for j in 0..d {
                logits[i] += ps.get(w).values()[i * d + j] * h[j];
            }
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| exp(l - mx)).sum();
        let expected = -(ln(exp(logits[target] - mx) / z));

        let mut g = Graph::new();
        let hn = g.input(&[d], h).unwrap();
        let wn = g.param(&ps, w);
        let bn = g.param(&ps, b);
        let loss = image_cls_loss(&mut g, hn, wn, bn, target).unwrap();
        assert!(abs(g.scalar(loss).unwrap() - expected) < 1e-12);
    }

    #[test]
    fn out_of_range_char_id_is_rejected() {
        let (ps, w, b) = cls_setup(4, 3);
        let mut g = Graph::new();
        let h = g.input(&[3], vec![0.0; 3]).unwrap();
        let wn = g.param(&ps, w);
        let bn = g.param(&ps, b);
        assert!(image_cls_loss(&mut g, h, wn, bn, 4).is_err());
    }

    fn scalar_pair(g: &mut Graph, task: f64, cls: f64) -> (NodeId, NodeId) {
        let t = g.input(&[], vec![task]).unwrap();
        let c = g.input(&[], vec![cls]).unwrap();
        (t, c)
    }

    #[test]
    fn endpoint_lambda_zero_equals_task_exactly() {
        let s = LambdaSchedule::new(0.0, 0.8).unwrap();
        let mut g = Graph::new();
        let (t, c) = scalar_pair(&mut g, 2.0625, 1.375);
        let (total, parts) = combined_loss(&mut g, t, c, &s, 7).unwrap();
        assert_eq!(g.scalar(total).unwrap(), 2.0625);
        assert_eq!(parts.lambda_t, 0.0);
        assert_eq!(parts.total, parts.task_loss);
    }

    #[test]
    fn endpoint_lambda_one_equals_cls_exactly() {
        let s = LambdaSchedule::new(1.0, 1.0).unwrap();
        let mut g = Graph::new();
        let (t, c) = scalar_pair(&mut g, 2.0625, 1.375);
        let (total, _) = combined_loss(&mut g, t, c, &s, 3).unwrap();
        assert_eq!(g.scalar(total).unwrap(), 1.375);
    }

    #[test]
    fn blend_value_and_convexity() {
        let s = LambdaSchedule::new(0.25, 1.0).unwrap();
        let mut g = Graph::new();
        let (t, c) = scalar_pair(&mut g, 2.0, 1.0);
        let (total, parts) = combined_loss(&mut g, t, c, &s, 5).unwrap();
        assert!(abs(g.scalar(total).unwrap() - 1.75) < 1e-15);
        assert!(parts.total >= 1.0 && parts.total <= 2.0);
    }

    #[test]
    fn gradients_blend_with_lambda_factors() {
        let s = LambdaSchedule::new(0.25, 1.0).unwrap();
        let mut ps = ParamSet::new();
        let a = ps
            .add("a", ParamGroup::Head, Tensor::from_values(&[], vec![0.7]).unwrap())
            .unwrap();
        let b = ps
            .add("b", ParamGroup::Head, Tensor::from_values(&[], vec![-0.4]).unwrap())
            .unwrap();
        let outcome = crate::gradcheck::grad_check(&mut ps, 1e-5, |g, ps| {
            let an = g.param(ps, a);
            let bn = g.param(ps, b);
            let task = g.tanh(an);
            let cls = g.tanh(bn);
            Ok(combined_loss(g, task, cls, &s, 2)?.0)
        })
        .unwrap();
        assert!(outcome.max_rel_error < 1e-6, "rel {}", outcome.max_rel_error);

        let mut g = Graph::new();
        let an = g.param(&ps, a);
        let bn = g.param(&ps, b);
        let task = g.tanh(an);
        let cls = g.tanh(bn);
        let (total, _) = combined_loss(&mut g, task, cls, &s, 0).unwrap();
        g.backward(total).unwrap();
        // d total / d task = 1 - lambda, d total / d cls = lambda.
        assert!(abs(g.grad(task)[0] - 0.75) < 1e-15);
        assert!(abs(g.grad(cls)[0] - 0.25) < 1e-15);
    }

    #[test]
    fn non_finite_losses_are_rejected() {
        let s = LambdaSchedule::default();
        let mut g = Graph::new();
        let (t, c) = scalar_pair(&mut g, f64::NAN, 1.0);
        assert!(matches!(combined_loss(&mut g, t, c, &s, 0), Err(GlyceError::Numeric(_))));
    }
}
