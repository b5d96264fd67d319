//! TOML experiment configuration: schema, validation, and resolution of
//! names into runnable group/operator/field instances.
//!
//! A config file has up to six tables:
//!
//! ```toml
//! [group]            # builtin name, or an inline bracket table
//! name = "heisenberg"
//!
//! [operator]
//! name = "normalized_p"
//! p = 4.0
//!
//! [grid]             # optional; defaults to [-1,1]^n with 17 nodes per axis
//! lo = [-1.0, -1.0, -1.0]
//! hi = [1.0, 1.0, 1.0]
//! shape = [33, 33, 33]
//!
//! [boundary]         # expression text or a named preset
//! expr = "x + 2*y"
//!
//! [experiment]
//! kind = "solve"     # checks | solve | comparison | p_limit | convolution
//!                    # | translation_map | smp
//! seed = 1
//! tolerance = 1e-8
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Inline groups list `layer_dims` and 1-based bracket quadruples
//! `[k, i, j, value]` meaning `[e_i, e_j] = value * e_k`; the antisymmetric
//! counterpart is implied.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr;
use crate::field::{preset, ExprField, ScalarField};
use crate::grid::GridFunction;
use crate::group::{GroupError, GroupSpec, Violation};
use crate::op::{FChoice, HChoice, OperatorError, OperatorSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("boundary expression: {0}")]
    Expr(#[from] expr::ParseError),
    #[error("boundary expression: {0}")]
    ExprArity(#[from] expr::EvalError),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("inline group fails validation: {0:?}")]
    GroupInvalid(Vec<Violation>),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

// ------------------------------------------------------------- file schema

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub group: GroupTable,
    pub operator: OperatorTable,
    #[serde(default)]
    pub grid: Option<GridTable>,
    #[serde(default)]
    pub boundary: BoundaryTable,
    pub experiment: ExperimentTable,
    #[serde(default)]
    pub output: OutputTable,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupTable {
    #[serde(default)]
    pub name: Option<String>,
    /// Index for the `heisenberg_n` / `abelian` families.
    #[serde(default)]
    pub n: Option<usize>,
    /// Inline table: dimensions of each layer.
    #[serde(default)]
    pub layer_dims: Option<Vec<usize>>,
    /// Inline table: 1-based quadruples `[k, i, j, value]`.
    #[serde(default)]
    pub brackets: Option<Vec<(usize, usize, usize, f64)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorTable {
    pub name: String,
    #[serde(default)]
    pub p: Option<f64>,
    /// Diagonal weights for the quadratic-form instance.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Coefficient of the first-order term `h_coeff * |xi|`.
    #[serde(default)]
    pub h_coeff: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTable {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryTable {
    #[serde(default)]
    pub expr: Option<String>,
    #[serde(default)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentTable {
    pub kind: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// Sample count for the check suites.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Exponent family for `p_limit`.
    #[serde(default)]
    pub ps: Option<Vec<f64>>,
    /// Envelope parameters for `convolution`.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    /// Shrink scale for `translation_map`.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Random pair count for `translation_map`.
    #[serde(default)]
    pub pairs: Option<usize>,
    /// Comparison partner offset: `g = f + shift` when no `g_expr` is given.
    #[serde(default)]
    pub shift: Option<f64>,
    /// Strict-subsolution weight.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Explicit comparison partner.
    #[serde(default)]
    pub g_expr: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTable {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub write_solution: Option<bool>,
    #[serde(default)]
    pub write_csv: Option<bool>,
}

impl ConfigFile {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }
}

// -------------------------------------------------------------- resolution

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Checks,
    Solve,
    Comparison,
    PLimit,
    Convolution,
    TranslationMap,
    Smp,
}

impl ExperimentKind {
    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Ok(match name {
            "checks" => Self::Checks,
            "solve" => Self::Solve,
            "comparison" => Self::Comparison,
            "p_limit" => Self::PLimit,
            "convolution" => Self::Convolution,
            "translation_map" => Self::TranslationMap,
            "smp" => Self::Smp,
            other => {
                return Err(invalid(format!(
                    "unknown experiment kind `{other}`; expected one of checks, solve, \
                     comparison, p_limit, convolution, translation_map, smp"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Checks => "checks",
            Self::Solve => "solve",
            Self::Comparison => "comparison",
            Self::PLimit => "p_limit",
            Self::Convolution => "convolution",
            Self::TranslationMap => "translation_map",
            Self::Smp => "smp",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Builtin group lookup; `n` parametrizes the two families.
pub fn builtin_group(name: &str, n: Option<usize>) -> Result<GroupSpec, ConfigError> {
    let needs_no_n = |spec: GroupSpec| {
        if n.is_some() {
            Err(invalid(format!("group `{name}` takes no index n")))
        } else {
            Ok(spec)
        }
    };
    match name {
        "heisenberg" | "h1" => needs_no_n(GroupSpec::heisenberg()),
        "heisenberg_n" => {
            let k = n.ok_or_else(|| invalid("heisenberg_n needs an index n >= 1"))?;
            if k < 1 {
                return Err(invalid("heisenberg_n needs n >= 1"));
            }
            Ok(GroupSpec::heisenberg_n(k))
        }
        "engel" => needs_no_n(GroupSpec::engel()),
        "abelian" => {
            let k = n.ok_or_else(|| invalid("abelian needs a dimension n >= 1"))?;
            if k < 1 {
                return Err(invalid("abelian needs n >= 1"));
            }
            Ok(GroupSpec::abelian(k))
        }
        "free_step2" => needs_no_n(GroupSpec::free_step2()),
        other => Err(invalid(format!(
            "unknown group `{other}`; builtins: heisenberg, heisenberg_n, engel, abelian, \
             free_step2"
        ))),
    }
}

/// Resolves a group table: builtin by name, or an inline bracket table
/// which is validated (antisymmetry, grading, Jacobi, generation) before
/// acceptance.
pub fn resolve_group(t: &GroupTable) -> Result<GroupSpec, ConfigError> {
    match (&t.name, &t.layer_dims) {
        (Some(name), None) => {
            if t.brackets.is_some() {
                return Err(invalid("brackets are only valid with inline layer_dims"));
            }
            builtin_group(name, t.n)
        }
        (name, Some(dims)) => {
            if t.n.is_some() {
                return Err(invalid("inline groups take no index n"));
            }
            let label = name.clone().unwrap_or_else(|| "custom".into());
            let quads = t.brackets.clone().unwrap_or_default();
            let mut zero_based = Vec::with_capacity(quads.len());
            for &(k, i, j, v) in &quads {
                if k == 0 || i == 0 || j == 0 {
                    return Err(invalid("bracket indices are 1-based; 0 is not a generator"));
                }
                zero_based.push((k - 1, i - 1, j - 1, v));
            }
            let spec = GroupSpec::from_brackets(&label, dims, &zero_based)?;
            if spec.step > 3 {
                return Err(ConfigError::Group(GroupError::UnsupportedStep { step: spec.step }));
            }
            let report = spec.validate();
            if !report.is_valid() {
                return Err(ConfigError::GroupInvalid(report.violations));
            }
            Ok(spec)
        }
        (None, None) => Err(invalid("group needs a builtin name or an inline layer table")),
    }
}

/// Standalone group-table format: the same TOML shape as the `[group]`
/// table, as a whole file.
pub fn parse_group_spec_toml(text: &str) -> Result<GroupSpec, ConfigError> {
    let t: GroupTable = toml::from_str(text)?;
    resolve_group(&t)
}

fn resolve_operator(t: &OperatorTable) -> Result<OperatorSpec, ConfigError> {
    let takes_p = matches!(t.name.as_str(), "normalized_p" | "uhlenbeck");
    if t.p.is_some() && !takes_p {
        return Err(invalid(format!("operator `{}` takes no exponent p", t.name)));
    }
    let mut op = if t.name == "aronsson" && t.weights.is_some() {
        OperatorSpec::aronsson(FChoice::Diag { weights: t.weights.clone().unwrap() })?
    } else {
        if t.weights.is_some() {
            return Err(invalid("weights only apply to the aronsson instance"));
        }
        OperatorSpec::builtin(&t.name, t.p)?
    };
    if let Some(c) = t.h_coeff {
        if !c.is_finite() {
            return Err(invalid("h_coeff must be finite"));
        }
        if c != 0.0 {
            op.h_term = HChoice::Norm { coeff: c };
        }
    }
    Ok(op)
}

/// A fully resolved, validated experiment ready to run.
pub struct Resolved {
    pub group: GroupSpec,
    pub op: OperatorSpec,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
    pub boundary_desc: String,
    pub boundary: Box<dyn ScalarField>,
    /// Comparison partner, when configured explicitly.
    pub partner: Option<(String, Box<dyn ScalarField>)>,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub samples: usize,
    pub ps: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub pairs: usize,
    pub shift: f64,
    pub lambda: f64,
    pub out_dir: PathBuf,
    pub write_solution: bool,
    pub write_csv: bool,
}

/// Scalar echo of a resolved config, embedded in reports and printed by
/// `describe`. Field order is the serialization order.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSummary {
    pub group: String,
    pub group_dim: usize,
    pub group_step: usize,
    pub operator: String,
    pub phi_exponent: f64,
    pub grid_lo: Vec<f64>,
    pub grid_hi: Vec<f64>,
    pub grid_shape: Vec<usize>,
    pub boundary: String,
    pub partner: Option<String>,
    pub experiment: String,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub samples: usize,
    pub ps: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub pairs: usize,
    pub shift: f64,
    pub lambda: f64,
    pub out_dir: String,
    pub write_solution: bool,
    pub write_csv: bool,
}

impl Resolved {
    pub fn summary(&self) -> ResolvedSummary {
        ResolvedSummary {
            group: self.group.name.clone(),
            group_dim: self.group.dim,
            group_step: self.group.step,
            operator: self.op.name.clone(),
            phi_exponent: self.op.phi_exponent,
            grid_lo: self.lo.clone(),
            grid_hi: self.hi.clone(),
            grid_shape: self.shape.clone(),
            boundary: self.boundary_desc.clone(),
            partner: self.partner.as_ref().map(|(d, _)| d.clone()),
            experiment: self.kind.name().to_string(),
            seed: self.seed,
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            samples: self.samples,
            ps: self.ps.clone(),
            epsilons: self.epsilons.clone(),
            delta: self.delta,
            pairs: self.pairs,
            shift: self.shift,
            lambda: self.lambda,
            out_dir: self.out_dir.display().to_string(),
            write_solution: self.write_solution,
            write_csv: self.write_csv,
        }
    }
}

fn resolve_field(
    table: &BoundaryTable,
    dim: usize,
) -> Result<(String, Box<dyn ScalarField>), ConfigError> {
    match (&table.expr, &table.preset) {
        (Some(_), Some(_)) => Err(invalid("boundary takes either expr or preset, not both")),
        (Some(text), None) => {
            let parsed = expr::parse(text)?;
            let desc = parsed.to_string();
            let field = ExprField::new(parsed, dim)?;
            Ok((desc, Box::new(field)))
        }
        (None, Some(name)) => {
            let field = preset(name, dim)
                .ok_or_else(|| invalid(format!("unknown boundary preset `{name}`")))?;
            Ok((format!("preset:{name}"), field))
        }
        (None, None) => {
            let field = preset("linear", dim).expect("linear preset exists");
            Ok(("preset:linear".into(), field))
        }
    }
}

/// Resolves and validates a parsed config. CLI overrides replace the file's
/// seed and output directory when given.
pub fn resolve(
    file: &ConfigFile,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Resolved, ConfigError> {
    let group = resolve_group(&file.group)?;
    let op = resolve_operator(&file.operator)?;
    let dim = group.dim;

    let (lo, hi, shape) = match &file.grid {
        Some(g) => (g.lo.clone(), g.hi.clone(), g.shape.clone()),
        None => (vec![-1.0; dim], vec![1.0; dim], vec![17; dim]),
    };
    if lo.len() != dim || hi.len() != dim || shape.len() != dim {
        return Err(invalid(format!(
            "grid axes ({}, {}, {}) must all match the group dimension {dim}",
            lo.len(),
            hi.len(),
            shape.len()
        )));
    }
    // Reuse the grid constructor's geometry checks.
    GridFunction::zeros(&lo, &hi, &shape).map_err(|e| invalid(e.to_string()))?;

    let (boundary_desc, boundary) = resolve_field(&file.boundary, dim)?;
    let e = &file.experiment;
    let kind = ExperimentKind::parse(&e.kind)?;
    let partner = match &e.g_expr {
        None => None,
        Some(text) => {
            let parsed = expr::parse(text)?;
            let desc = parsed.to_string();
            let field = ExprField::new(parsed, dim)?;
            Some((desc, Box::new(field) as Box<dyn ScalarField>))
        }
    };

    let tolerance = e.tolerance.unwrap_or(1e-8);
    if !(tolerance > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tolerance}")));
    }
    let max_iter = e.max_iter.unwrap_or(400_000);
    if max_iter == 0 {
        return Err(invalid("max_iter must be at least 1"));
    }
    let samples = e.samples.unwrap_or(1000);
    if samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let ps = e.ps.clone().unwrap_or_else(|| vec![2.0, 4.0, 8.0, 16.0, 32.0]);
    if ps.is_empty() || ps.iter().any(|&p| !(p > 1.0)) {
        return Err(invalid("ps must be a nonempty list of exponents > 1"));
    }
    let mut epsilons = e.epsilons.clone().unwrap_or_else(|| vec![0.5, 0.25, 0.125]);
    if epsilons.is_empty() || epsilons.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("epsilons must be a nonempty list of positive reals"));
    }
    epsilons.sort_by(|a, b| b.total_cmp(a));
    let delta = e.delta.unwrap_or(0.1);
    if !(delta > 0.0) {
        return Err(invalid(format!("delta must be positive, got {delta}")));
    }
    let pairs = e.pairs.unwrap_or(100);
    if pairs == 0 {
        return Err(invalid("pairs must be at least 1"));
    }
    let shift = e.shift.unwrap_or(0.5);
    if !shift.is_finite() || (partner.is_none() && kind == ExperimentKind::Comparison && shift < 0.0)
    {
        return Err(invalid("shift must be finite, and nonnegative for default comparison"));
    }
    let lambda = e.lambda.unwrap_or(0.1);
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }

    let out_dir = out_override
        .or_else(|| file.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(Resolved {
        group,
        op,
        lo,
        hi,
        shape,
        boundary_desc,
        boundary,
        partner,
        kind,
        seed: seed_override.or(e.seed).unwrap_or(1),
        tolerance,
        max_iter,
        samples,
        ps,
        epsilons,
        delta,
        pairs,
        shift,
        lambda,
        out_dir,
        write_solution: file.output.write_solution.unwrap_or(false),
        write_csv: file.output.write_csv.unwrap_or(true),
    })
}

/// Convenience: load, parse, resolve.
pub fn load_and_resolve(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Resolved, ConfigError> {
    let file = ConfigFile::load(path)?;
    resolve(&file, seed_override, out_override)
}
