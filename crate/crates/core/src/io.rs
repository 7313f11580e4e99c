//! Instance and report files (JSON, matrices as row-major nested arrays).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bellman::{BellmanError, ValueIterationTrace, Verdict};
use crate::model::{HypothesisReport, ProblemInstance, Violation};
use crate::simulate::SpectralBracket;
use crate::synthesis::{SynthesisCertificate, SynthesisStatus};

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{key}: {message}")]
    Parse { key: String, message: String },
    #[error("{key}[{row}]: row has {found} entries, expected {expected}")]
    Ragged {
        key: &'static str,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("invalid instance:\n  {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<Violation>),
    #[error("x0: {0}")]
    InitialState(String),
    #[error("{0}")]
    Other(String),
}

fn to_matrix(key: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, InputError> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (row, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(InputError::Ragged {
                key,
                row,
                found: r.len(),
                expected: ncols,
            });
        }
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl InstanceFile {
    pub fn from_json(text: &str) -> Result<Self, InputError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            InputError::Parse {
                key: if key == "." { "<root>".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })
    }

    /// Converts to a problem instance; structural violations are returned
    /// as [`InputError::Invalid`].
    pub fn to_instance(&self) -> Result<ProblemInstance, InputError> {
        let inst = ProblemInstance {
            n: self.n,
            m: self.m,
            l: self.l,
            a: to_matrix("A", &self.a)?,
            b: to_matrix("B", &self.b)?,
            f: to_matrix("F", &self.f)?,
            e: to_matrix("E", &self.e)?,
            s: DVector::from_vec(self.s.clone()),
            r: DVector::from_vec(self.r.clone()),
            gamma: DVector::from_vec(self.gamma.clone()),
        };
        let violations = inst.validate();
        if !violations.is_empty() {
            return Err(InputError::Invalid(violations));
        }
        Ok(inst)
    }

    pub fn from_instance(inst: &ProblemInstance) -> Self {
        InstanceFile {
            n: inst.n,
            m: inst.m,
            l: inst.l,
            a: to_rows(&inst.a),
            b: to_rows(&inst.b),
            f: to_rows(&inst.f),
            e: to_rows(&inst.e),
            s: inst.s.iter().copied().collect(),
            r: inst.r.iter().copied().collect(),
            gamma: inst.gamma.iter().copied().collect(),
            x0: None,
            name: None,
        }
    }
}

/// A parsed, validated instance plus what the CLI needs around it.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub instance: ProblemInstance,
    /// Defaults to the all-ones vector.
    pub x0: DVector<f64>,
    pub name: Option<String>,
    /// `sha256:<hex>` of the raw file bytes.
    pub digest: String,
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn parse_instance(text: &str) -> Result<LoadedInstance, InputError> {
    let file = InstanceFile::from_json(text)?;
    let instance = file.to_instance()?;
    let x0 = match &file.x0 {
        None => DVector::from_element(instance.n, 1.0),
        Some(v) => {
            if v.len() != instance.n {
                return Err(InputError::InitialState(format!(
                    "has {} entries, expected {}",
                    v.len(),
                    instance.n
                )));
            }
            if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(InputError::InitialState(format!(
                    "entry {i} must be finite and nonnegative"
                )));
            }
            DVector::from_vec(v.clone())
        }
    };
    Ok(LoadedInstance {
        instance,
        x0,
        name: file.name,
        digest: digest(text.as_bytes()),
    })
}

pub fn load_instance(path: &Path) -> Result<LoadedInstance, InputError> {
    let text = fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_instance(&text)
}

/// Disturbance file: a JSON array of `l`-vectors.
pub fn load_disturbances(path: &Path, l: usize) -> Result<Vec<DVector<f64>>, InputError> {
    let text = fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_owned(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let rows: Vec<Vec<f64>> = serde_path_to_error::deserialize(de).map_err(|e| InputError::Parse {
        key: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    if rows.is_empty() {
        return Err(InputError::Other("disturbance file is empty".into()));
    }
    rows.into_iter()
        .enumerate()
        .map(|(t, w)| {
            if w.len() != l {
                return Err(InputError::Ragged {
                    key: "w",
                    row: t,
                    found: w.len(),
                    expected: l,
                });
            }
            Ok(DVector::from_vec(w))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisViolationRecord {
    pub constraint: String,
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub positivity_ok: bool,
    pub positivity_margin: Vec<Vec<f64>>,
    pub penalty_ok: bool,
    pub penalty_margin: Vec<f64>,
    pub violations: Vec<HypothesisViolationRecord>,
}

impl From<&HypothesisReport> for HypothesisRecord {
    fn from(h: &HypothesisReport) -> Self {
        HypothesisRecord {
            positivity_ok: h.positivity_ok,
            positivity_margin: to_rows(&h.positivity_margin),
            penalty_ok: h.penalty_ok,
            penalty_margin: h.penalty_margin.iter().copied().collect(),
            violations: h
                .violations
                .iter()
                .map(|v| HypothesisViolationRecord {
                    constraint: v.hypothesis.to_string(),
                    row: v.row,
                    col: v.col,
                    value: v.value,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpRecord {
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralRecord {
    pub lower: f64,
    pub upper: f64,
    pub estimate: f64,
    pub iterations: usize,
}

impl From<SpectralBracket> for SpectralRecord {
    fn from(b: SpectralBracket) -> Self {
        SpectralRecord {
            lower: b.lower,
            upper: b.upper,
            estimate: b.estimate,
            iterations: b.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationRecord {
    pub verdict: String,
    pub iterations: usize,
    pub final_delta: Option<f64>,
    pub limit: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_component: Option<usize>,
}

impl ValueIterationRecord {
    pub fn from_result(res: &Result<ValueIterationTrace, BellmanError>) -> Option<Self> {
        let finite = |d: f64| d.is_finite().then_some(d);
        match res {
            Ok(trace) => {
                let (violation_iteration, violation_component) = match trace.verdict {
                    Verdict::GammaViolatedAtIteration { k, violation } => {
                        (Some(k), Some(violation.component))
                    }
                    _ => (None, None),
                };
                Some(ValueIterationRecord {
                    verdict: verdict_name(&trace.verdict).into(),
                    iterations: trace.iterations,
                    final_delta: finite(trace.final_delta),
                    limit: trace.last().iter().copied().collect(),
                    violation_iteration,
                    violation_component,
                })
            }
            Err(BellmanError::MaxIterExceeded {
                iterations,
                final_delta,
                last,
            }) => Some(ValueIterationRecord {
                verdict: "MaxIterExceeded".into(),
                iterations: *iterations,
                final_delta: finite(*final_delta),
                limit: last.iter().copied().collect(),
                violation_iteration: None,
                violation_component: None,
            }),
            Err(BellmanError::Invalid(_)) => None,
        }
    }
}

pub fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::Converged => "Converged",
        Verdict::Diverging => "Diverging",
        Verdict::GammaViolatedAtIteration { .. } => "GammaViolated",
    }
}

pub fn status_name(s: SynthesisStatus) -> &'static str {
    match s {
        SynthesisStatus::Synthesized => "Synthesized",
        SynthesisStatus::NoFiniteValue => "NoFiniteValue",
        SynthesisStatus::HypothesesViolated => "HypothesesViolated",
    }
}

/// Machine-readable synthesis report. Floats are written in shortest
/// round-trip form, so reading a report back reproduces the certificate
/// bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool: String,
    pub version: String,
    pub input_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub status: String,
    pub hypotheses: HypothesisRecord,
    pub lp: LpRecord,
    pub gamma: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_ok: Option<bool>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bellman_residual: Option<Vec<f64>>,
    /// `p'x0`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Bracket for the spectral radius of `A - B K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_radius: Option<SpectralRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_iteration: Option<ValueIterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unbounded_ray: Option<Vec<f64>>,
}

impl ReportFile {
    pub fn new(
        loaded: &LoadedInstance,
        instance: &ProblemInstance,
        cert: &SynthesisCertificate,
    ) -> Self {
        let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<_>>();
        let opt = cert.optimum.as_ref();
        ReportFile {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            input_digest: loaded.digest.clone(),
            name: loaded.name.clone(),
            status: status_name(cert.status).into(),
            hypotheses: (&cert.hypotheses).into(),
            lp: LpRecord {
                iterations: cert.lp_iterations,
            },
            gamma: vec(&instance.gamma),
            x0: vec(&loaded.x0),
            p: opt.map(|o| vec(&o.p)),
            zeta: opt.map(|o| vec(&o.zeta)),
            gamma_min: opt.map(|o| vec(&o.gamma_min)),
            gamma_ok: opt.map(|o| o.gamma_ok),
            k: opt.map(|o| to_rows(&o.gain)),
            q: opt.map(|o| vec(&o.q)),
            bellman_residual: opt.map(|o| vec(&o.bellman_residual)),
            value: opt.map(|o| o.value(&loaded.x0)),
            spectral_radius: None,
            value_iteration: None,
            unbounded_ray: cert.unbounded_ray.as_ref().map(vec),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InputError> {
        serde_json::from_str(text).map_err(|e| InputError::Parse {
            key: "<report>".into(),
            message: e.to_string(),
        })
    }

    pub fn gain(&self) -> Option<DMatrix<f64>> {
        self.k.as_ref().and_then(|rows| to_matrix("K", rows).ok())
    }
}
