//! Problem data for the minimax control problem
//!
//! ```text
//! inf_mu max_w  sum_t  s'x(t) + r'u(t) - gamma'w(t)
//!     x(t+1) = A x(t) + B u(t) + F w(t),   |u| <= E x,   w >= 0
//! ```
//!
//! together with structural validation and the two standing hypotheses
//! `A >= |B| E` (the closed loop keeps the positive orthant invariant) and
//! `s > E' |r|`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

/// All data of one synthesis problem.
///
/// Fields are plain data so that malformed instances can be built and
/// linted; everything downstream calls [`validate`] before touching the
/// matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub s: DVector<f64>,
    pub r: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl ProblemInstance {
    /// Builds an instance with dimensions taken from the matrices.
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        f: DMatrix<f64>,
        e: DMatrix<f64>,
        s: DVector<f64>,
        r: DVector<f64>,
        gamma: DVector<f64>,
    ) -> Self {
        ProblemInstance {
            n: a.nrows(),
            m: b.ncols(),
            l: f.ncols(),
            a,
            b,
            f,
            e,
            s,
            r,
            gamma,
        }
    }

    /// The two-tank process used as the running example: one pump, one
    /// disturbance entering through the same channel, and a controller that
    /// may only use the upper tank level.
    pub fn double_tank() -> Self {
        let b = DMatrix::from_row_slice(2, 1, &[0.0971, 0.0017]);
        ProblemInstance::from_parts(
            DMatrix::from_row_slice(2, 2, &[0.9648, 0.0, 0.0345, 0.9648]),
            b.clone(),
            b,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![0.2]),
            DVector::from_vec(vec![1.32]),
        )
    }

    /// Same instance with every component of `gamma` replaced.
    pub fn with_gamma(&self, gamma: DVector<f64>) -> Self {
        ProblemInstance {
            gamma,
            ..self.clone()
        }
    }

    /// Structural violations; empty means the instance is usable.
    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// What was wrong with one entry (or one shape) of an instance.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    ZeroDimension,
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite,
    Negative,
    NotStrictlyPositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Field name as it appears in instance files (`"A"`, `"s"`, `"gamma"`, ...).
    pub field: &'static str,
    pub kind: ViolationKind,
    /// `(row, col)`; vectors use column 0.
    pub index: Option<(usize, usize)>,
    pub value: Option<f64>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::ZeroDimension => write!(f, "{}: dimension must be positive", self.field),
            ViolationKind::Shape { expected, found } => write!(
                f,
                "{}: expected shape {}x{}, found {}x{}",
                self.field, expected.0, expected.1, found.0, found.1
            ),
            kind => {
                let what = match kind {
                    ViolationKind::NonFinite => "entry is not finite",
                    ViolationKind::Negative => "entry must be nonnegative",
                    _ => "entry must be strictly positive",
                };
                write!(f, "{}", self.field)?;
                if let Some((i, j)) = self.index {
                    write!(f, "[{i}][{j}]")?;
                }
                write!(f, ": {what}")?;
                if let Some(v) = self.value {
                    write!(f, " (value {v})")?;
                }
                Ok(())
            }
        }
    }
}

enum Sign {
    Any,
    NonNegative,
    Positive,
}

fn check_entries(
    out: &mut Vec<Violation>,
    field: &'static str,
    mat: &DMatrix<f64>,
    expected: (usize, usize),
    sign: Sign,
) {
    if mat.shape() != expected {
        out.push(Violation {
            field,
            kind: ViolationKind::Shape {
                expected,
                found: mat.shape(),
            },
            index: None,
            value: None,
        });
        return;
    }
    // row-major order so reports read naturally
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            let v = mat[(i, j)];
            let kind = if !v.is_finite() {
                Some(ViolationKind::NonFinite)
            } else {
                match sign {
                    Sign::NonNegative if v < 0.0 => Some(ViolationKind::Negative),
                    Sign::Positive if v <= 0.0 => Some(ViolationKind::NotStrictlyPositive),
                    _ => None,
                }
            };
            if let Some(kind) = kind {
                out.push(Violation {
                    field,
                    kind,
                    index: Some((i, j)),
                    value: Some(v),
                });
            }
        }
    }
}

fn check_vector(
    out: &mut Vec<Violation>,
    field: &'static str,
    v: &DVector<f64>,
    len: usize,
    sign: Sign,
) {
    let as_mat = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    check_entries(out, field, &as_mat, (len, 1), sign);
}

/// Reports every violated structural invariant, not just the first.
pub fn validate(inst: &ProblemInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    for (field, dim) in [("n", inst.n), ("m", inst.m), ("l", inst.l)] {
        if dim == 0 {
            out.push(Violation {
                field,
                kind: ViolationKind::ZeroDimension,
                index: None,
                value: None,
            });
        }
    }
    let (n, m, l) = (inst.n, inst.m, inst.l);
    check_entries(&mut out, "A", &inst.a, (n, n), Sign::Any);
    check_entries(&mut out, "B", &inst.b, (n, m), Sign::Any);
    check_entries(&mut out, "F", &inst.f, (n, l), Sign::NonNegative);
    check_entries(&mut out, "E", &inst.e, (m, n), Sign::NonNegative);
    check_vector(&mut out, "s", &inst.s, n, Sign::Positive);
    check_vector(&mut out, "r", &inst.r, m, Sign::Any);
    check_vector(&mut out, "gamma", &inst.gamma, l, Sign::NonNegative);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// `A >= |B| E`
    OrthantInvariance,
    /// `s > E' |r|`
    StatePenalty,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hypothesis::OrthantInvariance => f.write_str("A >= |B|E"),
            Hypothesis::StatePenalty => f.write_str("s > E'|r|"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisViolation {
    pub hypothesis: Hypothesis,
    pub row: usize,
    /// Only set for the matrix condition.
    pub col: Option<usize>,
    /// The offending margin entry.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub positivity_ok: bool,
    /// `A - |B| E`
    pub positivity_margin: DMatrix<f64>,
    pub penalty_ok: bool,
    /// `s - E' |r|`
    pub penalty_margin: DVector<f64>,
    pub violations: Vec<HypothesisViolation>,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.positivity_ok && self.penalty_ok
    }
}

/// Checks both hypotheses with exact strict comparison for `s > E'|r|`.
pub fn check_hypotheses(inst: &ProblemInstance) -> HypothesisReport {
    check_hypotheses_with(inst, 0.0)
}

/// Like [`check_hypotheses`], but the penalty margin must exceed `strict_eps`.
///
/// Expects a structurally valid instance.
pub fn check_hypotheses_with(inst: &ProblemInstance, strict_eps: f64) -> HypothesisReport {
    let positivity_margin = &inst.a - inst.b.abs() * &inst.e;
    let penalty_margin = &inst.s - inst.e.transpose() * inst.r.abs();

    let mut violations = Vec::new();
    for i in 0..positivity_margin.nrows() {
        for j in 0..positivity_margin.ncols() {
            let v = positivity_margin[(i, j)];
            if !(v >= 0.0) {
                violations.push(HypothesisViolation {
                    hypothesis: Hypothesis::OrthantInvariance,
                    row: i,
                    col: Some(j),
                    value: v,
                });
            }
        }
    }
    let positivity_count = violations.len();
    let positivity_ok = positivity_count == 0;
    for (i, &v) in penalty_margin.iter().enumerate() {
        if !(v > strict_eps) {
            violations.push(HypothesisViolation {
                hypothesis: Hypothesis::StatePenalty,
                row: i,
                col: None,
                value: v,
            });
        }
    }
    let penalty_ok = violations.len() == positivity_count;

    HypothesisReport {
        positivity_ok,
        positivity_margin,
        penalty_ok,
        penalty_margin,
        violations,
    }
}
