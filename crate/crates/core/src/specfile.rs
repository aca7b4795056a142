//! The TOML spec file read by the command-line tool.
//!
//! ```toml
//! classes = 4
//! stations = 2
//! alpha = [1.0, 0.0, 0.0, 0.0]
//! mu = [10.0, 1.6666666666666667, 10.0, 1.6666666666666667]
//! routing = [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0]]
//! constituency = [[1, 0, 0, 1], [0, 1, 1, 0]]
//! discipline = "priority"          # or "work_conserving"
//! priority_order = [4, 2, 1, 3]     # 1-based classes, highest first
//!
//! [run]
//! initial = [1.0, 0.0, 0.0, 0.0]
//! selector = "min_drain"
//! ```
//!
//! Optional sections: `[run]`, `[skorokhod]`, `[fluidlimit]`, `[lyapunov]`
//! and `[gfn]`. Unknown keys are rejected. The network keys may be left out
//! entirely when only a `[skorokhod]` section or an explicit `[gfn]` family
//! is used.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::ControlSelector;
use crate::fluidlimit::Law;
use crate::model::{Discipline, ModelError, NetworkSpec, RawNetwork};
use crate::skorokhod::{LspInstance, SkorokhodError};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Skorokhod(#[from] SkorokhodError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisciplineName {
    WorkConserving,
    Priority,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub initial: Option<Vec<f64>>,
    pub selector: Option<String>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkorokhodSection {
    pub theta: Vec<f64>,
    pub reflection: Vec<Vec<f64>>,
    pub z0: Vec<f64>,
    pub push_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Laws {
    Same(Law),
    PerClass(Vec<Law>),
}

impl Laws {
    pub fn expand(&self, k: usize) -> Result<Vec<Law>, SpecError> {
        match self {
            Laws::Same(l) => Ok(vec![*l; k]),
            Laws::PerClass(v) if v.len() == k => Ok(v.clone()),
            Laws::PerClass(v) => Err(SpecError::Invalid(format!("expected {k} laws, got {}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidLimitSection {
    pub direction: Vec<f64>,
    pub scales: Option<Vec<f64>>,
    /// Number of seeds, derived from the top-level seed.
    pub replications: Option<usize>,
    pub horizon: Option<f64>,
    pub interarrival: Option<Laws>,
    pub service: Option<Laws>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    /// Pieces `h_j` of a candidate `max_j h_jᵀ x`.
    pub piecewise_linear: Option<Vec<Vec<f64>>>,
    /// Candidate matrix `A` of `xᵀ A x`.
    pub quadratic: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfnSection {
    /// A built-in closed-form family instead of the network.
    pub family: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub classes: Option<usize>,
    pub stations: Option<usize>,
    pub alpha: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub routing: Option<Vec<Vec<f64>>>,
    pub constituency: Option<Vec<Vec<f64>>>,
    pub discipline: Option<DisciplineName>,
    pub priority_order: Option<Vec<usize>>,
    pub run: Option<RunSection>,
    pub skorokhod: Option<SkorokhodSection>,
    pub fluidlimit: Option<FluidLimitSection>,
    pub lyapunov: Option<LyapunovSection>,
    pub gfn: Option<GfnSection>,
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, SpecError> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(SpecError::Invalid(format!("{what} rows have different lengths")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            SpecError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn has_network(&self) -> bool {
        self.alpha.is_some() || self.mu.is_some() || self.routing.is_some() || self.constituency.is_some()
    }

    /// The validated network, if the file describes one.
    pub fn network(&self) -> Result<Option<NetworkSpec>, SpecError> {
        if !self.has_network() {
            return Ok(None);
        }
        let need = |name: &str| SpecError::Invalid(format!("missing key `{name}`"));
        let alpha = self.alpha.clone().ok_or_else(|| need("alpha"))?;
        let mu = self.mu.clone().ok_or_else(|| need("mu"))?;
        let k = alpha.len();
        let routing = self.routing.clone().unwrap_or_else(|| vec![vec![0.0; k]; k]);
        let constituency = self.constituency.clone().ok_or_else(|| need("constituency"))?;
        if let Some(c) = self.classes {
            if c != k {
                return Err(SpecError::Invalid(format!("`classes` is {c} but `alpha` has {k} entries")));
            }
        }
        if let Some(j) = self.stations {
            if j != constituency.len() {
                return Err(SpecError::Invalid(format!(
                    "`stations` is {j} but `constituency` has {} rows",
                    constituency.len()
                )));
            }
        }
        let discipline = match (self.discipline.unwrap_or(DisciplineName::WorkConserving), &self.priority_order) {
            (DisciplineName::WorkConserving, None) => Discipline::WorkConserving,
            (DisciplineName::WorkConserving, Some(_)) => {
                return Err(SpecError::Invalid("`priority_order` needs discipline = \"priority\"".into()))
            }
            (DisciplineName::Priority, None) => return Err(need("priority_order")),
            (DisciplineName::Priority, Some(order)) => {
                if order.iter().any(|&c| c == 0 || c > k) {
                    return Err(SpecError::Invalid(format!("`priority_order` entries must be in 1..={k}")));
                }
                Discipline::Priority(order.iter().map(|c| c - 1).collect())
            }
        };
        let raw = RawNetwork {
            alpha,
            mu,
            routing,
            constituency,
            discipline,
        };
        Ok(Some(NetworkSpec::validate(raw)?))
    }

    pub fn require_network(&self) -> Result<NetworkSpec, SpecError> {
        self.network()?
            .ok_or_else(|| SpecError::Invalid("this command needs a network description".into()))
    }

    pub fn lsp_instance(&self) -> Result<Option<LspInstance>, SpecError> {
        let Some(s) = &self.skorokhod else {
            return Ok(None);
        };
        let inst = LspInstance::new(
            DVector::from_vec(s.theta.clone()),
            matrix(&s.reflection, "reflection")?,
            DVector::from_vec(s.z0.clone()),
        )?;
        Ok(Some(match s.push_bound {
            Some(b) => inst.with_push_bound(b)?,
            None => inst,
        }))
    }

    pub fn initial_state(&self) -> Option<DVector<f64>> {
        self.run.as_ref()?.initial.clone().map(DVector::from_vec)
    }

    pub fn selector(&self) -> Result<Option<ControlSelector>, SpecError> {
        match self.run.as_ref().and_then(|r| r.selector.as_deref()) {
            None => Ok(None),
            Some(s) => ControlSelector::parse(s)
                .map(Some)
                .ok_or_else(|| SpecError::Invalid(format!("unknown selector `{s}`"))),
        }
    }

    pub fn quadratic_candidate(&self) -> Result<Option<DMatrix<f64>>, SpecError> {
        match self.lyapunov.as_ref().and_then(|l| l.quadratic.as_ref()) {
            None => Ok(None),
            Some(rows) => matrix(rows, "quadratic").map(Some),
        }
    }

    pub fn piecewise_candidate(&self) -> Option<Vec<DVector<f64>>> {
        self.lyapunov
            .as_ref()?
            .piecewise_linear
            .as_ref()
            .map(|h| h.iter().map(|v| DVector::from_vec(v.clone())).collect())
    }
}

/// Serializes a network back to the spec-file layout.
pub fn network_to_toml(spec: &NetworkSpec) -> String {
    let raw = spec.to_raw();
    let fmt_vec = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
    let fmt_mat = |m: &[Vec<f64>]| format!("[{}]", m.iter().map(|r| fmt_vec(r)).collect::<Vec<_>>().join(", "));
    let mut out = String::new();
    out += &format!("classes = {}\n", spec.num_classes());
    out += &format!("stations = {}\n", spec.num_stations());
    out += &format!("alpha = {}\n", fmt_vec(&raw.alpha));
    out += &format!("mu = {}\n", fmt_vec(&raw.mu));
    out += &format!("routing = {}\n", fmt_mat(&raw.routing));
    out += &format!("constituency = {}\n", fmt_mat(&raw.constituency));
    match &raw.discipline {
        Discipline::WorkConserving => out += "discipline = \"work_conserving\"\n",
        Discipline::Priority(order) => {
            out += "discipline = \"priority\"\n";
            let labels: Vec<String> = order.iter().map(|c| (c + 1).to_string()).collect();
            out += &format!("priority_order = [{}]\n", labels.join(", "));
        }
    }
    out
}
