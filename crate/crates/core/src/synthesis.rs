//! Controller synthesis through the cost-vector linear program
//!
//! ```text
//! maximize 1'p  over p >= 0, zeta >= 0
//!   p <= s + A'p - E'zeta
//!   -zeta <= r + B'p <= zeta
//! ```
//!
//! A bounded optimum `p` gives the minimax value `p'x0`, the disturbance
//! penalty threshold `F'p`, and the gain whose i-th row is
//! `sign(r_i + p'B_i) E_i`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, sign};
use crate::lp::{self, LpError, LpOptions, LpProblem, LpStatus};
use crate::model::{self, HypothesisReport, ProblemInstance, Violation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub lp: LpOptions,
    /// Continue even when `A >= |B|E` or `s > E'|r|` fails.
    pub force: bool,
    /// Margin required for `s - E'|r| > strict_eps`.
    pub strict_eps: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            lp: LpOptions::default(),
            force: false,
            strict_eps: 0.0,
        }
    }
}

impl SynthesisOptions {
    pub fn feas_tol(&self) -> f64 {
        self.lp.feas_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisStatus {
    Synthesized,
    NoFiniteValue,
    HypothesesViolated,
}

/// Everything known about a bounded synthesis LP.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    /// Cost vector; the minimax value from `x0` is `p'x0`.
    pub p: DVector<f64>,
    pub zeta: DVector<f64>,
    /// `F'p`.
    pub gamma_min: DVector<f64>,
    /// `gamma >= F'p - feas_tol` componentwise.
    pub gamma_ok: bool,
    /// Feedback `u = -K x`.
    pub gain: DMatrix<f64>,
    /// `r + B'p`.
    pub q: DVector<f64>,
    /// `p - (s + A'p - E'|q|)`; nonpositive up to tolerance.
    pub bellman_residual: DVector<f64>,
}

impl Optimum {
    pub fn value(&self, x0: &DVector<f64>) -> f64 {
        self.p.dot(x0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisCertificate {
    pub status: SynthesisStatus,
    pub hypotheses: HypothesisReport,
    pub lp_iterations: usize,
    /// Present iff `Synthesized`.
    pub optimum: Option<Optimum>,
    /// Present iff `NoFiniteValue`; direction in `(p, zeta)` along which the
    /// LP objective grows without bound.
    pub unbounded_ray: Option<DVector<f64>>,
}

impl SynthesisCertificate {
    pub fn is_synthesized(&self) -> bool {
        self.status == SynthesisStatus::Synthesized
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("instance is malformed ({} violation(s))", .0.len())]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Lp(#[from] LpError),
    /// `p = 0, zeta = |r|` is always feasible under the hypotheses, so this
    /// points at a solver defect (or a forced run on a bad instance).
    #[error("synthesis LP reported infeasible")]
    LpInfeasible,
}

/// Assembles the synthesis LP over `z = (p, zeta)`.
///
/// Rows: `(I - A')p + E'zeta <= s` (n), `-B'p - zeta <= r` (m),
/// `B'p - zeta <= -r` (m).
pub fn build_lp(inst: &ProblemInstance) -> LpProblem {
    let (n, m) = (inst.n, inst.m);
    let mut g = DMatrix::zeros(n + 2 * m, n + m);
    let at = inst.a.transpose();
    let bt = inst.b.transpose();
    let et = inst.e.transpose();

    g.view_mut((0, 0), (n, n))
        .copy_from(&(DMatrix::identity(n, n) - &at));
    g.view_mut((0, n), (n, m)).copy_from(&et);
    g.view_mut((n, 0), (m, n)).copy_from(&(-&bt));
    g.view_mut((n, n), (m, m))
        .copy_from(&(-DMatrix::<f64>::identity(m, m)));
    g.view_mut((n + m, 0), (m, n)).copy_from(&bt);
    g.view_mut((n + m, n), (m, m))
        .copy_from(&(-DMatrix::<f64>::identity(m, m)));

    let mut h = DVector::zeros(n + 2 * m);
    h.rows_mut(0, n).copy_from(&inst.s);
    h.rows_mut(n, m).copy_from(&inst.r);
    h.rows_mut(n + m, m).copy_from(&(-&inst.r));

    let mut c = DVector::zeros(n + m);
    c.rows_mut(0, n).fill(1.0);

    LpProblem { c, g, h }
}

/// `F'p`: the smallest disturbance penalty with a finite value.
pub fn gamma_threshold(p: &DVector<f64>, f: &DMatrix<f64>) -> DVector<f64> {
    f.transpose() * p
}

/// Gain rows `sign(q_i) E_i` with `q = r + B'p`; a zero `q_i` gives a zero row.
pub fn extract_gain(p: &DVector<f64>, inst: &ProblemInstance) -> (DMatrix<f64>, DVector<f64>) {
    let q = &inst.r + inst.b.transpose() * p;
    let mut gain = inst.e.clone();
    for (i, mut row) in gain.row_iter_mut().enumerate() {
        row *= sign(q[i]);
    }
    (gain, q)
}

/// `p - (s + A'p - E'|r + B'p|)`.
pub fn bellman_residual(p: &DVector<f64>, inst: &ProblemInstance) -> DVector<f64> {
    let q = &inst.r + inst.b.transpose() * p;
    p - (&inst.s + inst.a.transpose() * p - inst.e.transpose() * q.abs())
}

pub fn synthesize(inst: &ProblemInstance) -> Result<SynthesisCertificate, SynthesisError> {
    synthesize_with(inst, &SynthesisOptions::default())
}

pub fn synthesize_with(
    inst: &ProblemInstance,
    opts: &SynthesisOptions,
) -> Result<SynthesisCertificate, SynthesisError> {
    let violations = model::validate(inst);
    if !violations.is_empty() {
        return Err(SynthesisError::Invalid(violations));
    }
    let hypotheses = model::check_hypotheses_with(inst, opts.strict_eps);
    if !hypotheses.all_ok() && !opts.force {
        return Ok(SynthesisCertificate {
            status: SynthesisStatus::HypothesesViolated,
            hypotheses,
            lp_iterations: 0,
            optimum: None,
            unbounded_ray: None,
        });
    }

    let problem = build_lp(inst);
    let sol = lp::solve(&problem, &opts.lp)?;
    match sol.status {
        LpStatus::Infeasible => Err(SynthesisError::LpInfeasible),
        LpStatus::Unbounded => Ok(SynthesisCertificate {
            status: SynthesisStatus::NoFiniteValue,
            hypotheses,
            lp_iterations: sol.iterations,
            optimum: None,
            unbounded_ray: sol.ray,
        }),
        LpStatus::Optimal => {
            let z = sol.z.expect("optimal LP carries a solution");
            let p = z.rows(0, inst.n).into_owned();
            let mut zeta = z.rows(inst.n, inst.m).into_owned();
            let (gain, q) = extract_gain(&p, inst);
            // zeta_i is unconstrained by the p-rows when E_i = 0; report its
            // lower bound instead of whatever the basis happened to hold
            for i in 0..inst.m {
                if inst.e.row(i).iter().all(|&v| v == 0.0) {
                    zeta[i] = q[i].abs();
                }
            }
            let gamma_min = gamma_threshold(&p, &inst.f);
            let tol = opts.feas_tol();
            let gamma_ok = inst
                .gamma
                .iter()
                .zip(gamma_min.iter())
                .all(|(g, gm)| *g >= gm - tol);
            let bellman_residual = bellman_residual(&p, inst);
            Ok(SynthesisCertificate {
                status: SynthesisStatus::Synthesized,
                hypotheses,
                lp_iterations: sol.iterations,
                optimum: Some(Optimum {
                    p,
                    zeta,
                    gamma_min,
                    gamma_ok,
                    gain,
                    q,
                    bellman_residual,
                }),
                unbounded_ray: None,
            })
        }
    }
}

/// Largest entry of the Bellman residual; `<= feas_tol` means feasible.
pub fn max_bellman_violation(opt: &Optimum) -> f64 {
    linalg::max_entry(opt.bellman_residual.iter())
}
