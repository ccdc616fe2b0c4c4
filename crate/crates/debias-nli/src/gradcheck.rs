//! Central-difference gradient checking.
//!
//! Two entry points:
//!
//! * [`finite_diff_check`] compares a caller-supplied analytic gradient
//!   against central differences of an arbitrary scalar objective. This is
//!   the form the training losses need: their backward pass is checked
//!   against the *explicit* per-group objectives, which differ from the
//!   recorded graph's forward value once gradient reversal or blocking is
//!   involved.
//! * [`check_tape_graph`] derives both sides from one graph builder —
//!   backward for the analytic gradient, rebuilt forwards for the numeric
//!   one. Only meaningful for graphs without special backward nodes.

use crate::error::Result;
use crate::tape::{GradientMap, NodeId, Parameter, Tape};

/// Result of a gradient check.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Max over coordinates of `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
    pub max_rel_err: f64,
    /// Parameter id and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Check `analytic` against central differences of `objective` at the base
/// point given by `params`, probing every coordinate of every parameter.
///
/// `objective` must be deterministic in the parameter values; feeding it a
/// stochastic function is a caller contract violation and produces
/// meaningless errors.
pub fn finite_diff_check<F>(
    objective: F,
    params: &[Parameter],
    analytic: &GradientMap,
    epsilon: f64,
) -> Result<FdReport>
where
    F: Fn(&[Parameter]) -> Result<f64>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut work: Vec<Parameter> = params.to_vec();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for pi in 0..work.len() {
        let id = work[pi].id.clone();
        let n = work[pi].value.numel();
        for ci in 0..n {
            let base = work[pi].value.data()[ci];
            work[pi].value.data_mut()[ci] = base + epsilon;
            let plus = objective(&work)?;
            work[pi].value.data_mut()[ci] = base - epsilon;
            let minus = objective(&work)?;
            work[pi].value.data_mut()[ci] = base;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic
                .get(&id)
                .map(|g| g.data()[ci])
                .unwrap_or(0.0);
            let rel = (a - numeric).abs() / f64::max(1e-12, a.abs() + numeric.abs());
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((id.clone(), ci));
            }
        }
    }
    Ok(report)
}

/// Build a graph once for the analytic gradients, then rebuild its forward
/// pass per probe for the numeric side. `build` receives parameter nodes in
/// the order of `params`.
pub fn check_tape_graph<B>(build: B, params: &[Parameter], epsilon: f64) -> Result<FdReport>
where
    B: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let run = |ps: &[Parameter]| -> Result<(Tape, NodeId)> {
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = ps.iter().map(|p| tape.param(p)).collect();
        let root = build(&mut tape, &nodes)?;
        Ok((tape, root))
    };
    let (mut tape, root) = run(params)?;
    let analytic = tape.backward(root)?;
    finite_diff_check(
        |ps| {
            let (tape, root) = run(ps)?;
            Ok(tape.value(root).item())
        },
        params,
        &analytic,
        epsilon,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::ParamGroup;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        // sum((w - t)^2) is symmetric in epsilon, so central differences are
        // exact up to floating-point roundoff.
        let w = Parameter::new(
            "w",
            ParamGroup::Classifier,
            Tensor::vector(vec![3.0, -1.5, 0.25]),
        );
        let report = check_tape_graph(
            |tape, nodes| {
                let t = tape.input(Tensor::vector(vec![1.0, 2.0, -0.5]));
                let d = tape.sub(nodes[0], t)?;
                let sq = tape.mul(d, d)?;
                Ok(tape.sum(sq))
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "err {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let w = Parameter::new("w", ParamGroup::Classifier, Tensor::vector(vec![2.0]));
        let mut bogus = GradientMap::default();
        bogus.insert("w".into(), Tensor::vector(vec![100.0]));
        let report = finite_diff_check(
            |ps| Ok(ps[0].value.data()[0].powi(2)),
            &[w],
            &bogus,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err > 0.5);
        assert_eq!(report.worst.as_ref().unwrap().0, "w");
    }
}
