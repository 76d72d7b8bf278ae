//! Central finite-difference check of recorded gradients.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Gradients, ParameterStore, Result, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradFailure {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Names of parameters with at least one failing entry, deduplicated.
    pub fn failing_params(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.failures.iter().map(|f| f.param.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
    }
}

fn evaluate<F>(loss_fn: &F, store: &ParameterStore) -> Result<(Tape, Var)>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    Ok((tape, loss))
}

/// Compares the tape gradient of `loss_fn` with central differences for
/// every entry of every parameter.
///
/// An entry fails when `|analytic - numeric| / max(1, |numeric|) > tol`.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParameterStore, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var>,
{
    let (tape, loss) = evaluate(&loss_fn, params)?;
    let first = tape.scalar(loss)?;
    let mut grads = Gradients::for_store(params);
    tape.backward(loss, &mut grads)?;
    drop(tape);

    let (tape, loss) = evaluate(&loss_fn, params)?;
    let second = tape.scalar(loss)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicLoss { first, second });
    }
    drop(tape);

    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for id in params.ids() {
        let cols = params.get(id).cols();
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let (t, l) = evaluate(&loss_fn, &work)?;
            let plus = t.scalar(l)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let (t, l) = evaluate(&loss_fn, &work)?;
            let minus = t.scalar(l)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let rel_error = libm::fabs(analytic - numeric) / libm::fabs(numeric).max(1.0);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel_error);
            if rel_error > tol {
                report.failures.push(GradFailure {
                    param: String::from(params.name(id)),
                    row: i / cols,
                    col: i % cols,
                    analytic,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::CORRUPT_ELU_BACKWARD;
    use crate::Tensor;
    use core::cell::Cell;

    #[test]
    fn quadratic_at_stationary_point() {
        let mut s = ParameterStore::new(0);
        s.zeros("w", 3, 3).unwrap();
        let f = |s: &ParameterStore, t: &mut Tape| {
            let w = t.param(s, s.require("w")?)?;
            let sq = t.mul(w, w)?;
            t.sum(sq)
        };
        let report = finite_diff_check(f, &s, 1e-5, 1e-4).unwrap();
        assert!(report.passed());
        assert_eq!(report.checked, 9);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut s = ParameterStore::new(0);
        s.zeros("w", 1, 1).unwrap();
        let calls = Cell::new(0.0);
        let f = |s: &ParameterStore, t: &mut Tape| {
            calls.set(calls.get() + 1.0);
            let w = t.param(s, s.require("w")?)?;
            let c = t.constant(Tensor::scalar(calls.get()))?;
            t.add(w, c)
        };
        assert!(matches!(
            finite_diff_check(f, &s, 1e-5, 1e-4),
            Err(Error::NonDeterministicLoss { .. })
        ));
    }

    #[test]
    fn corrupted_elu_backward_is_localized() {
        // loss = sum(elu(x W1) * W2): W1 sits upstream of the ELU, W2 downstream.
        let mut s = ParameterStore::new(5);
        s.uniform("x", 4, 3, 1).unwrap();
        s.uniform("w1", 3, 3, 1).unwrap();
        s.uniform("w2", 4, 3, 1).unwrap();
        let f = |s: &ParameterStore, t: &mut Tape| {
            let x = t.param(s, s.require("x")?)?;
            let w1 = t.param(s, s.require("w1")?)?;
            let w2 = t.param(s, s.require("w2")?)?;
            let h = t.matmul(x, w1)?;
            let e = t.elu(h)?;
            let p = t.mul(e, w2)?;
            t.sum(p)
        };
        assert!(finite_diff_check(f, &s, 1e-5, 1e-4).unwrap().passed());

        CORRUPT_ELU_BACKWARD.with(|c| c.set(true));
        let report = finite_diff_check(f, &s, 1e-5, 1e-4);
        CORRUPT_ELU_BACKWARD.with(|c| c.set(false));
        let report = report.unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing_params(), ["w1", "x"]);
    }
}
