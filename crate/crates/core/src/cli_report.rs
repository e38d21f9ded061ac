//! Report assembly behind the `pseudoherm` command line: constants table,
//! per-model invariants and the verification suites.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curvature_algebra::hat_apply;
use crate::error::{Error, Result};
use crate::lie_models::{build_model, c0_prime, commutant, kappa, model_curvature, relative_error, Family, LieModel};
use crate::msy_identities::{
    metric_operator_relations, run_identity_suite, summarize, torsion_operator_relations, SuiteSummary,
    TrialReport, DEFAULT_FIBER_DIM,
};
use crate::pseudo_hermitian::{
    first_bianchi_residual, invariants, sample_curvatures, scalar_curvature, CurvatureRanges, DEFAULT_SAMPLES,
};
use crate::tensor_space::{Bil2, Curv4, Real, Tags, DEFAULT_TOL};

pub const SCHEMA_VERSION: &str = "1";
/// Relative agreement required between computed and tabulated constants.
pub const TABLE_REL_TOL: Real = 1e-8;
/// Half-dimensions used by the operator-relation suites.
pub const OPERATOR_DIMS: [usize; 3] = [2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Table,
    Model,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub params: Vec<usize>,
}

impl ModelSpec {
    pub fn new(family: Family, params: Vec<usize>) -> Self {
        ModelSpec { family, params }
    }

    /// `family` or `family:p,q`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n, Some(parse_params(p)?)),
            None => (s, None),
        };
        let family = Family::parse(name)?;
        let params = params.unwrap_or_else(|| family.smallest_params());
        Ok(ModelSpec { family, params })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.params.iter().map(|x| x.to_string()).collect();
        write!(f, "{}({})", self.family.tag(), p.join(","))
    }
}

pub fn parse_params(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad parameter '{t}' in '{s}'"))))
        .collect()
}

/// `d,d'` pair.
pub fn parse_dim_pair(s: &str) -> Result<(usize, usize)> {
    match parse_params(s)?.as_slice() {
        [d, dp] => Ok((*d, *dp)),
        _ => Err(Error::Config(format!("dimension pair must look like 2,3, got '{s}'"))),
    }
}

/// Missing fields deserialize to the `table` defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub models: Vec<ModelSpec>,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub tolerance: Real,
    pub output_path: Option<PathBuf>,
    /// Judge the negative controls as ordinary identities, so verification must fail.
    pub negative_control: bool,
    pub dim_pairs: Vec<(usize, usize)>,
    pub fiber_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::new(Command::Table)
    }
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            models: Vec::new(),
            seeds: vec![0, 1, 2, 3, 4],
            samples: DEFAULT_SAMPLES,
            tolerance: DEFAULT_TOL,
            output_path: None,
            negative_control: false,
            dim_pairs: vec![(2, 2), (2, 3), (3, 3)],
            fiber_dim: DEFAULT_FIBER_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.fiber_dim == 0 {
            return Err(Error::Config("fiber dimension must be positive".into()));
        }
        for &(d, dp) in &self.dim_pairs {
            if d < 2 || dp < d {
                return Err(Error::Config(format!("dimension pair ({d},{dp}) needs 2 <= d <= d'")));
            }
        }
        for m in &self.models {
            m.family.validate(&m.params)?;
        }
        Ok(())
    }

    fn first_seed(&self) -> u64 {
        self.seeds[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Flat,
    OutOfScope,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub family: String,
    pub params: Vec<usize>,
    pub d: usize,
    pub status: RowStatus,
    pub s: Option<Real>,
    pub c0_prime: Option<Real>,
    pub c0_prime_expected: Option<Real>,
    pub c0_prime_abs_diff: Option<Real>,
    pub kappa: Option<Real>,
    pub kappa_expected: Option<Real>,
    pub kappa_abs_diff: Option<Real>,
    pub c0_prime_plus_kappa: Option<Real>,
    pub space_form: bool,
    pub note: Option<String>,
}

impl TableRow {
    fn within_tolerance(&self) -> bool {
        match self.status {
            RowStatus::Ok => {
                let ok = |c: Option<Real>, e: Option<Real>| match (c, e) {
                    (Some(c), Some(e)) => relative_error(c, e) <= TABLE_REL_TOL,
                    _ => false,
                };
                ok(self.c0_prime, self.c0_prime_expected) && ok(self.kappa, self.kappa_expected)
            }
            RowStatus::Flat | RowStatus::OutOfScope => true,
            RowStatus::Error => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub family: String,
    pub params: Vec<usize>,
    pub d: usize,
    pub status: RowStatus,
    pub s: Option<Real>,
    pub c0_prime: Option<Real>,
    pub kappa: Option<Real>,
    pub cm_norm2: Option<Real>,
    pub pseudo_einstein: Option<bool>,
    pub bianchi_residual: Option<Real>,
    pub commutant_dimension: Option<usize>,
    pub curvature_ranges: Option<CurvatureRanges>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub command: Command,
    pub tolerance: Real,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub negative_control: bool,
    pub table: Vec<TableRow>,
    pub models: Vec<ModelBlock>,
    pub suites: Vec<SuiteSummary>,
    pub pass: bool,
}

impl ReportDocument {
    fn empty(config: &RunConfig) -> Self {
        ReportDocument {
            schema_version: SCHEMA_VERSION.into(),
            command: config.command,
            tolerance: config.tolerance,
            seeds: config.seeds.clone(),
            samples: config.samples,
            negative_control: config.negative_control,
            table: Vec::new(),
            models: Vec::new(),
            suites: Vec::new(),
            pass: true,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Process exit status: 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// Rows shown by `table` when no family is requested.
pub fn default_table_models() -> Vec<ModelSpec> {
    let m = ModelSpec::new;
    vec![
        m(Family::Heisenberg, vec![1]),
        m(Family::SuPq, vec![1, 1]),
        m(Family::SuPq, vec![2, 1]),
        m(Family::SuPq, vec![2, 2]),
        m(Family::SuPq, vec![3, 1]),
        m(Family::SpPR, vec![1]),
        m(Family::SpPR, vec![2]),
        m(Family::SpPR, vec![3]),
        m(Family::SoP2, vec![3]),
        m(Family::SoP2, vec![4]),
        m(Family::SoStar2p, vec![3]),
        m(Family::SoStar2p, vec![4]),
        m(Family::E6, vec![]),
        m(Family::E7, vec![]),
    ]
}

fn models_or_default(config: &RunConfig) -> Vec<ModelSpec> {
    if config.models.is_empty() {
        default_table_models()
    } else {
        config.models.clone()
    }
}

pub fn table_row(spec: &ModelSpec) -> TableRow {
    let fam = spec.family;
    let mut row = TableRow {
        family: fam.tag().into(),
        params: spec.params.clone(),
        d: fam.half_dim(&spec.params).unwrap_or(0),
        status: RowStatus::Ok,
        s: None,
        c0_prime: None,
        c0_prime_expected: None,
        c0_prime_abs_diff: None,
        kappa: None,
        kappa_expected: None,
        kappa_abs_diff: None,
        c0_prime_plus_kappa: None,
        space_form: fam.is_space_form(&spec.params),
        note: None,
    };
    if let Ok(Some(tv)) = fam.table_values(&spec.params) {
        row.c0_prime_expected = Some(tv.c0_prime);
        row.kappa_expected = Some(tv.kappa);
    }
    if !fam.is_supported() {
        row.status = RowStatus::OutOfScope;
        row.note = Some("exceptional family: tabulated values only".into());
        return row;
    }
    let computed = (|| -> Result<()> {
        let model = build_model(fam, &spec.params)?;
        let rw = model_curvature(&model)?;
        let s = scalar_curvature(&rw);
        row.s = Some(s);
        if model.is_flat() {
            row.status = RowStatus::Flat;
            row.note = Some("flat model: scalar curvature vanishes, c0' undefined".into());
            row.kappa = Some(kappa(&rw)?);
            return Ok(());
        }
        let c0 = c0_prime(&rw)?;
        let k = kappa(&rw)?;
        row.c0_prime = Some(c0);
        row.kappa = Some(k);
        row.c0_prime_plus_kappa = Some(c0 + k);
        row.c0_prime_abs_diff = row.c0_prime_expected.map(|e| (c0 - e).abs());
        row.kappa_abs_diff = row.kappa_expected.map(|e| (k - e).abs());
        Ok(())
    })();
    if let Err(e) = computed {
        row.status = RowStatus::Error;
        row.note = Some(e.to_string());
    }
    row
}

pub fn cmd_table(config: &RunConfig) -> Result<ReportDocument> {
    config.validate()?;
    let mut doc = ReportDocument::empty(config);
    doc.table = models_or_default(config).iter().map(table_row).collect();
    doc.pass = doc.table.iter().all(TableRow::within_tolerance);
    Ok(doc)
}

/// Max deviation of `rho` from `-(s/2d) omega`.
fn pseudo_einstein_defect(rw: &Curv4) -> Result<Real> {
    let space = rw.space();
    let om = Bil2::omega(space);
    let s = scalar_curvature(rw);
    let rho = hat_apply(rw, &om)?.scaled(-1.0);
    let target = om.scaled(-s / (2.0 * space.d() as Real));
    Ok((rho.matrix() - target.matrix()).amax())
}

fn block_for(model: &LieModel, rw: &Curv4, config: &RunConfig) -> Result<ModelBlock> {
    let inv = invariants(rw)?;
    let flat = model.is_flat();
    Ok(ModelBlock {
        family: model.family.tag().into(),
        params: model.params.clone(),
        d: model.d,
        status: if flat { RowStatus::Flat } else { RowStatus::Ok },
        s: Some(inv.scalar),
        c0_prime: if flat { None } else { Some(c0_prime(rw)?) },
        kappa: Some(kappa(rw)?),
        cm_norm2: Some(inv.cm_norm2),
        pseudo_einstein: Some(inv.pseudo_einstein),
        bianchi_residual: Some(first_bianchi_residual(rw, rw.space())?),
        commutant_dimension: Some(commutant(rw, config.first_seed()).dimension),
        curvature_ranges: Some(sample_curvatures(rw, config.samples, config.first_seed())?),
        note: None,
    })
}

pub fn model_block(spec: &ModelSpec, config: &RunConfig) -> ModelBlock {
    let fam = spec.family;
    let fallback = |status: RowStatus, note: String| ModelBlock {
        family: fam.tag().into(),
        params: spec.params.clone(),
        d: fam.half_dim(&spec.params).unwrap_or(0),
        status,
        s: None,
        c0_prime: None,
        kappa: None,
        cm_norm2: None,
        pseudo_einstein: None,
        bianchi_residual: None,
        commutant_dimension: None,
        curvature_ranges: None,
        note: Some(note),
    };
    if !fam.is_supported() {
        return fallback(RowStatus::OutOfScope, "exceptional family: no model construction".into());
    }
    let built = build_model(fam, &spec.params).and_then(|m| {
        let rw = model_curvature(&m)?;
        block_for(&m, &rw, config)
    });
    built.unwrap_or_else(|e| fallback(RowStatus::Error, e.to_string()))
}

pub fn cmd_model(config: &RunConfig) -> Result<ReportDocument> {
    config.validate()?;
    let mut doc = ReportDocument::empty(config);
    doc.models = models_or_default(config).iter().map(|m| model_block(m, config)).collect();
    doc.pass = doc.models.iter().all(|m| m.status != RowStatus::Error);
    Ok(doc)
}

/// Per-model structural checks folded into one residual each.
fn model_suite(spec: &ModelSpec, tol: Real) -> SuiteSummary {
    let name = format!("model_checks/{spec}");
    let worst = (|| -> Result<Real> {
        let model = build_model(spec.family, &spec.params)?;
        let rw = model_curvature(&model)?;
        let scale = rw.max_abs().max(1.0);
        let mut r = first_bianchi_residual(&rw, rw.space())? / scale;
        for tag in [Tags::PAIR_SYMMETRIC, Tags::J_PLUS] {
            r = r.max(rw.tag_residual(tag)? / scale);
        }
        r = r.max(pseudo_einstein_defect(&rw)? / scale);
        if !model.is_flat() {
            if let Some(tv) = spec.family.table_values(&spec.params)? {
                // Table agreement is judged on the relative scale.
                let rel = relative_error(c0_prime(&rw)?, tv.c0_prime).max(relative_error(kappa(&rw)?, tv.kappa));
                if rel > TABLE_REL_TOL {
                    r = r.max(rel);
                }
            }
        }
        Ok(r)
    })();
    let (residual, ok) = match worst {
        Ok(r) => (r, r <= tol),
        Err(_) => (Real::MAX, false),
    };
    SuiteSummary {
        name,
        control: false,
        trials: 1,
        max_residual: residual,
        min_residual: residual,
        worst_seed: 0,
        worst_dims: (spec.family.half_dim(&spec.params).unwrap_or(0), 0),
        pass: ok,
    }
}

/// Trial seeds are the configured seeds; operator relations run at every
/// dimension in [`OPERATOR_DIMS`] for each seed.
pub fn cmd_verify(config: &RunConfig) -> Result<ReportDocument> {
    config.validate()?;
    let mut doc = ReportDocument::empty(config);
    let mut op_trials = Vec::new();
    for &d in &OPERATOR_DIMS {
        for &seed in &config.seeds {
            let mut checks = metric_operator_relations(d, seed)?;
            checks.extend(torsion_operator_relations(d, seed)?);
            op_trials.push(TrialReport { d, d_prime: d, fiber_dim: 0, seed, checks });
        }
    }
    let mut suites = summarize(&op_trials, config.tolerance, config.negative_control);
    let trials = run_identity_suite(&config.dim_pairs, config.fiber_dim, &config.seeds)?;
    suites.extend(summarize(&trials, config.tolerance, config.negative_control));
    for m in &config.models {
        if m.family.is_supported() {
            suites.push(model_suite(m, config.tolerance));
        }
    }
    doc.pass = suites.iter().all(|s| s.pass);
    doc.suites = suites;
    Ok(doc)
}

pub fn run(config: &RunConfig) -> Result<ReportDocument> {
    match config.command {
        Command::Table => cmd_table(config),
        Command::Model => cmd_model(config),
        Command::Verify => cmd_verify(config),
    }
}

pub fn write_report(doc: &ReportDocument, path: Option<&Path>) -> Result<()> {
    let text = doc.to_json()?;
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
