//! Value iteration for the linear cost-to-go `J_k(x) = p_k'x`.
//!
//! Starting from `p_0 = 0`, each step solves the inner problems in closed
//! form. The disturbance term `(F'p - gamma)'w` is maximized at `w = 0` when
//! `F'p <= gamma` and is unbounded otherwise; the input term
//! `(r + B'p)'u` over `|u| <= Ex` is minimized by `u_i = -sign(q_i) E_i x`.
//! Together:
//!
//! ```text
//! p_k = s + A'p_{k-1} - E'|r + B'p_{k-1}|
//! ```
//!
//! This route never touches the LP, which makes it usable as an oracle for
//! the synthesis result.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{self, ProblemInstance, Violation};

/// `F'p - gamma`: a positive component means the adversary can push the
/// cost to `+inf` by loading that disturbance channel.
pub fn worst_case_disturbance_gain(p: &DVector<f64>, inst: &ProblemInstance) -> DVector<f64> {
    inst.f.transpose() * p - &inst.gamma
}

/// The disturbance channel with the largest positive excess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaViolated {
    pub component: usize,
    /// `(F'p - gamma)_component`, strictly above the tolerance.
    pub excess: f64,
}

/// One Bellman update, or the channel that makes the inner max infinite.
pub fn iterate_step(
    p_prev: &DVector<f64>,
    inst: &ProblemInstance,
    feas_tol: f64,
) -> Result<DVector<f64>, GammaViolated> {
    check_gamma(p_prev, inst, feas_tol)?;
    Ok(bellman_update(p_prev, inst))
}

fn check_gamma(p: &DVector<f64>, inst: &ProblemInstance, feas_tol: f64) -> Result<(), GammaViolated> {
    let d = worst_case_disturbance_gain(p, inst);
    let worst = d
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > feas_tol)
        .max_by(|a, b| a.1.total_cmp(b.1));
    match worst {
        Some((component, &excess)) => Err(GammaViolated { component, excess }),
        None => Ok(()),
    }
}

fn bellman_update(p: &DVector<f64>, inst: &ProblemInstance) -> DVector<f64> {
    let q = &inst.r + inst.b.transpose() * p;
    &inst.s + inst.a.transpose() * p - inst.e.transpose() * q.abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueIterationOptions {
    /// Stop once `|p_k - p_{k-1}|_inf <= tol * (1 + |p_k|_inf)`.
    pub tol: f64,
    pub max_iter: usize,
    /// `|p_k|_inf` above this is taken as evidence of an infinite value.
    pub divergence_bound: f64,
    /// Slack on `F'p_k <= gamma`.
    pub feas_tol: f64,
}

impl Default for ValueIterationOptions {
    fn default() -> Self {
        ValueIterationOptions {
            tol: 1e-10,
            max_iter: 100_000,
            divergence_bound: 1e12,
            feas_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Converged,
    Diverging,
    /// `F'p_k` exceeded `gamma` at iterate `k`.
    GammaViolatedAtIteration { k: usize, violation: GammaViolated },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIterationTrace {
    /// `p_0 = 0, p_1, ...`
    pub iterates: Vec<DVector<f64>>,
    pub verdict: Verdict,
    /// Number of updates performed.
    pub iterations: usize,
    pub final_delta: f64,
}

impl ValueIterationTrace {
    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace starts with p_0")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BellmanError {
    #[error("instance is malformed ({} violation(s))", .0.len())]
    Invalid(Vec<Violation>),
    /// Inconclusive: neither settled nor blew up.
    #[error("value iteration did not settle within {iterations} iterations (last step {final_delta:e})")]
    MaxIterExceeded {
        iterations: usize,
        final_delta: f64,
        last: DVector<f64>,
    },
}

pub fn value_iterate(
    inst: &ProblemInstance,
    opts: &ValueIterationOptions,
) -> Result<ValueIterationTrace, BellmanError> {
    let violations = model::validate(inst);
    if !violations.is_empty() {
        return Err(BellmanError::Invalid(violations));
    }
    let mut iterates = vec![DVector::zeros(inst.n)];
    let mut final_delta = f64::INFINITY;
    for k in 1..=opts.max_iter {
        let prev = &iterates[k - 1];
        let next = match iterate_step(prev, inst, opts.feas_tol) {
            Ok(p) => p,
            Err(violation) => {
                return Ok(ValueIterationTrace {
                    iterates,
                    verdict: Verdict::GammaViolatedAtIteration { k: k - 1, violation },
                    iterations: k - 1,
                    final_delta,
                })
            }
        };
        final_delta = (&next - prev).amax();
        let size = next.amax();
        iterates.push(next);
        if !size.is_finite() || size > opts.divergence_bound {
            return Ok(ValueIterationTrace {
                iterates,
                verdict: Verdict::Diverging,
                iterations: k,
                final_delta,
            });
        }
        if final_delta <= opts.tol * (1.0 + size) {
            return Ok(ValueIterationTrace {
                iterates,
                verdict: Verdict::Converged,
                iterations: k,
                final_delta,
            });
        }
    }
    Err(BellmanError::MaxIterExceeded {
        iterations: opts.max_iter,
        final_delta,
        last: iterates.pop().expect("trace starts with p_0"),
    })
}
