//! Config-driven experiment runner behind the `rdaudit` binary.
//!
//! An experiment is a TOML file (schema in `docs/config.md`). `run` simulates
//! it with the requested audits attached to the stepper, then writes the
//! per-snapshot CSV and a plain-text report; `audit` replays a stored
//! snapshot series; `converge` compares truncation levels or grids; `sweep`
//! runs the cross product of config overrides in parallel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{
    budget_stability, no_sign_scaling_probe, porous_stability, truncation_convergence_study, AuditStatus,
    ConservationAccumulator, EstimateAudit, KeyEstimateAccumulator, MassAccumulator, NoSignAccumulator,
    PierreAccumulator, PorousAccumulator, PorousBudgets, ReactionBudget, ReactionBudgetAccumulator, UVRegistration,
};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Field, Grid, State};
use crate::integrate::{
    run_observed, Diagnostics, Source, StepControls, StepObserver, StepRecord, Trajectory, DEFAULT_BLOWUP, DEFAULT_CFL,
    DEFAULT_MAX_STEPS, DEFAULT_STRIDE,
};
use crate::systems::{
    truncate, verify_assumptions, GrowthClass, MassClass, Monomial, ReactionSpec, SystemSpec, TruncationLevel,
};

/// Audit names accepted in `audits = [...]`.
pub const AUDIT_NAMES: [&str; 10] = [
    "assumptions",
    "mass",
    "conservation",
    "key_estimate",
    "pierre_l2",
    "no_sign",
    "no_sign_scaling",
    "reaction_budget",
    "porous",
    "stability",
];

const ASSUMPTION_SAMPLES: usize = 2000;

pub const CSV_HEADER: &str = "step,t,dt,species,mass,l2,min,max,f_l1,clipped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Diffusion coefficient per species.
    pub d: Vec<f64>,
    /// Porous-medium exponent per species; all ones when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mexp: Option<Vec<f64>>,
    #[serde(default = "default_audits")]
    pub audits: Vec<String>,
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub init: InitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub truncation: TruncationConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_audits() -> Vec<String> {
    ["assumptions", "mass", "conservation", "key_estimate", "pierre_l2", "reaction_budget"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    SAlphaBetaGamma {
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
    SAlphaBetaGammaDelta {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
    },
    LotkaVolterra {
        e: Vec<f64>,
        a: Vec<Vec<f64>>,
    },
    Custom {
        /// One list of monomials per species.
        terms: Vec<Vec<Monomial>>,
        weights: Vec<f64>,
        #[serde(default)]
        mass_class: MassClassConfig,
        #[serde(default)]
        growth_class: GrowthClassConfig,
    },
    Inert {
        species: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MassClassConfig {
    #[default]
    Dissipative,
    LinearGrowth {
        c0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GrowthClassConfig {
    Quadratic {
        c: f64,
    },
    SuperQuadratic {
        c: f64,
        eps: f64,
        exponents: Vec<f64>,
    },
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub dim: usize,
    /// Side lengths; unit box when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    pub cells: Vec<usize>,
    #[serde(default = "neumann")]
    pub bc: Boundary,
}

fn one() -> usize {
    1
}

fn neumann() -> Boundary {
    Boundary::Neumann
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitConfig {
    Constant {
        values: Vec<f64>,
    },
    /// `base_i + amplitude_i cos(mode_i π x/Lx)` (times the same factor in y
    /// on 2D grids).
    CosineMix {
        base: Vec<f64>,
        amplitude: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<Vec<f64>>,
    },
    /// Independent uniform values in `[0, max)`, species by species, cells in
    /// grid order, drawn from ChaCha8 seeded with `seed`.
    RandomUniform {
        seed: u64,
        max: f64,
    },
    /// Text file with one row per cell and one column per species.
    FromFile {
        path: PathBuf,
    },
}

/// `s_i(t, x) = amplitude · sin(2π k x/Lx) · cos(ω t)` on the listed species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub species: Vec<usize>,
    pub amplitude: f64,
    #[serde(default = "unit_f64")]
    pub wavenumber: f64,
    #[serde(default = "unit_f64")]
    pub frequency: f64,
}

fn unit_f64() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// `inf` runs the untruncated system.
    #[serde(default = "infinite")]
    pub n: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { n: f64::INFINITY }
    }
}

fn infinite() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_tolerance: Option<f64>,
}

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

fn default_blowup() -> f64 {
    DEFAULT_BLOWUP
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Stored snapshot series (JSON) for the `audit` subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { csv: default_csv(), report: default_report(), stride: DEFAULT_STRIDE, snapshots: None }
    }
}

fn default_csv() -> String {
    "diagnostics.csv".into()
}

fn default_report() -> String {
    "report.txt".into()
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }
}

/// A validated experiment: the normalized config (every default filled in)
/// and the objects built from it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: SystemSpec,
    pub level: TruncationLevel,
    /// Initial data before the `u⁰ ∧ n` cut.
    pub initial: State,
    pub source: Option<Source>,
    pub controls: StepControls,
    base_dir: PathBuf,
}

impl Experiment {
    /// Reads and validates a config file; relative paths inside it resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(ExperimentConfig::from_toml(&text)?, &base)
    }

    pub fn from_config(mut config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let reaction = build_reaction(&config.system)?;
        let m = reaction.m();
        if config.d.len() != m {
            return Err(invalid(format!("d has {} entries but the system has {m} species", config.d.len())));
        }
        let mexp = config.mexp.clone().unwrap_or_else(|| vec![1.0; m]);
        if mexp.len() != m {
            return Err(invalid(format!("mexp has {} entries but the system has {m} species", mexp.len())));
        }
        config.mexp = Some(mexp.clone());
        for name in &config.audits {
            if !AUDIT_NAMES.contains(&name.as_str()) {
                return Err(invalid(format!("unknown audit `{name}` (known: {})", AUDIT_NAMES.join(", "))));
            }
        }

        let grid = build_grid(&mut config.grid)?;
        let spec = SystemSpec::new(reaction, config.d.clone(), mexp, grid.bc()).map_err(as_config)?;
        if let InitConfig::CosineMix { mode, .. } = &mut config.init {
            mode.get_or_insert_with(|| vec![1.0; m]);
        }
        let initial = build_initial(&config.init, grid, m, base_dir)?;
        let source = match &config.source {
            Some(s) => Some(build_source(s, m, &grid)?),
            None => None,
        };
        let level = TruncationLevel::new(config.truncation.n).map_err(as_config)?;

        let t = &mut config.time;
        if t.dt.is_none() && !spec.is_porous() {
            return Err(invalid("time.dt is required for semilinear systems"));
        }
        let mut controls = StepControls {
            dt: t.dt,
            cfl: t.cfl,
            t_end: t.t_end,
            max_steps: t.max_steps,
            blowup_threshold: t.blowup_threshold,
            clip_tolerance: None,
            min_dt: t.min_dt,
            snapshot_stride: config.output.stride,
        };
        controls.validate().map_err(as_config)?;
        t.min_dt = Some(controls.effective_min_dt());
        let (_, start) = truncate(&spec.reaction, &initial, level);
        let mass: f64 = start.species().iter().map(crate::grid::integrate_field).sum();
        let clip = *t.clip_tolerance.get_or_insert(1e-10 * mass);
        controls.clip_tolerance = Some(clip);
        controls.min_dt = t.min_dt;

        Ok(Experiment { config, spec, level, initial, source, controls, base_dir: base_dir.to_path_buf() })
    }

    /// Initial state actually integrated (`u⁰ ∧ n`).
    pub fn start(&self) -> State {
        truncate(&self.spec.reaction, &self.initial, self.level).1
    }

    fn wants(&self, name: &str) -> bool {
        self.config.audits.iter().any(|a| a == name)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::InvalidConfig(msg),
        other => other,
    }
}

fn build_reaction(system: &SystemConfig) -> Result<ReactionSpec> {
    let spec = match system {
        SystemConfig::SAlphaBetaGamma { alpha, beta, gamma } => ReactionSpec::s_alpha_beta_gamma(*alpha, *beta, *gamma),
        SystemConfig::SAlphaBetaGammaDelta { alpha, beta, gamma, delta } => {
            ReactionSpec::s_alpha_beta_gamma_delta(*alpha, *beta, *gamma, *delta)
        }
        SystemConfig::LotkaVolterra { e, a } => ReactionSpec::lotka_volterra(e.clone(), a.clone()),
        SystemConfig::Custom { terms, weights, mass_class, growth_class } => {
            let mass = match mass_class {
                MassClassConfig::Dissipative => MassClass::Dissipative,
                MassClassConfig::LinearGrowth { c0 } => MassClass::LinearGrowth { c0: *c0 },
            };
            let growth = match growth_class {
                GrowthClassConfig::Quadratic { c } => GrowthClass::Quadratic { c: *c },
                GrowthClassConfig::SuperQuadratic { c, eps, exponents } => {
                    GrowthClass::SuperQuadratic { c: *c, eps: *eps, exponents: exponents.clone() }
                }
                GrowthClassConfig::Unspecified => GrowthClass::Unspecified,
            };
            ReactionSpec::custom(terms.clone(), weights.clone(), mass, growth)
        }
        SystemConfig::Inert { species } => ReactionSpec::inert(*species),
    };
    spec.map_err(as_config)
}

fn build_grid(cfg: &mut GridConfig) -> Result<Grid> {
    if cfg.dim != 1 && cfg.dim != 2 {
        return Err(invalid(format!("grid.dim must be 1 or 2, got {}", cfg.dim)));
    }
    let lengths = cfg.lengths.get_or_insert_with(|| vec![1.0; cfg.dim]).clone();
    Grid::new(cfg.dim, &lengths, &cfg.cells, cfg.bc).map_err(as_config)
}

fn per_species<'a>(name: &str, v: &'a [f64], m: usize) -> Result<&'a [f64]> {
    if v.len() != m {
        return Err(invalid(format!("init.{name} has {} entries, expected {m}", v.len())));
    }
    Ok(v)
}

/// Builds initial data on `grid`.
pub fn build_initial(init: &InitConfig, grid: Grid, m: usize, base_dir: &Path) -> Result<State> {
    let species = match init {
        InitConfig::Constant { values } => {
            per_species("values", values, m)?.iter().map(|&c| Field::constant(grid, c)).collect()
        }
        InitConfig::CosineMix { base, amplitude, mode } => {
            let ones = vec![1.0; m];
            let mode = per_species("mode", mode.as_deref().unwrap_or(&ones), m)?;
            let base = per_species("base", base, m)?;
            let amplitude = per_species("amplitude", amplitude, m)?;
            let l = grid.lengths().to_vec();
            (0..m)
                .map(|i| {
                    let k = mode[i] * std::f64::consts::PI;
                    Field::from_fn(grid, |x, y| {
                        let fy = if grid.dim() == 2 { (k * y / l[1]).cos() } else { 1.0 };
                        base[i] + amplitude[i] * (k * x / l[0]).cos() * fy
                    })
                })
                .collect()
        }
        InitConfig::RandomUniform { seed, max } => {
            if !(*max > 0.0 && max.is_finite()) {
                return Err(invalid(format!("init.max must be positive, got {max}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..m)
                .map(|_| Field::from_vec_unchecked(grid, (0..grid.cell_count()).map(|_| rng.gen_range(0.0..*max)).collect()))
                .collect()
        }
        InitConfig::FromFile { path } => read_initial_file(&base_dir.join(path), grid, m)?,
    };
    let state = State::new(0.0, species).map_err(as_config)?;
    if !state.is_nonnegative() {
        return Err(invalid("initial data must be nonnegative"));
    }
    Ok(state)
}

fn read_initial_file(path: &Path, grid: Grid, m: usize) -> Result<Vec<Field>> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut columns = vec![Vec::with_capacity(grid.cell_count()); m];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if row.len() != m {
            return Err(invalid(format!("{}:{}: expected {m} columns", path.display(), lineno + 1)));
        }
        for (c, v) in columns.iter_mut().zip(row) {
            c.push(v);
        }
    }
    columns.into_iter().map(|c| Field::new(grid, c).map_err(as_config)).collect()
}

fn build_source(cfg: &SourceConfig, m: usize, grid: &Grid) -> Result<Source> {
    if let Some(&bad) = cfg.species.iter().find(|&&i| i >= m) {
        return Err(invalid(format!("source species {bad} out of range")));
    }
    if ![cfg.amplitude, cfg.wavenumber, cfg.frequency].iter().all(|v| v.is_finite()) {
        return Err(invalid("source parameters must be finite"));
    }
    let mut on = vec![false; m];
    for &i in &cfg.species {
        on[i] = true;
    }
    let (a, k, w, lx) = (cfg.amplitude, cfg.wavenumber, cfg.frequency, grid.lengths()[0]);
    Ok(Source::new(move |i, t, x| {
        if on[i] {
            a * (2.0 * std::f64::consts::PI * k * x[0] / lx).sin() * (w * t).cos()
        } else {
            0.0
        }
    }))
}

/// Audits attached to a run, one variant per accumulator.
enum Probe {
    Mass(MassAccumulator),
    Key(KeyEstimateAccumulator),
    Pierre(PierreAccumulator),
    NoSign(NoSignAccumulator),
    Conservation(ConservationAccumulator),
    Budget(ReactionBudgetAccumulator),
    Porous(PorousAccumulator),
}

impl StepObserver for Probe {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        match self {
            Probe::Mass(a) => a.start(initial, spec),
            Probe::Key(a) => a.start(initial, spec),
            Probe::Pierre(a) => a.start(initial, spec),
            Probe::NoSign(a) => a.start(initial, spec),
            Probe::Conservation(a) => a.start(initial, spec),
            Probe::Budget(a) => a.start(initial, spec),
            Probe::Porous(a) => a.start(initial, spec),
        }
    }

    fn observe(&mut self, record: &StepRecord<'_>) -> Result<()> {
        match self {
            Probe::Mass(a) => a.observe(record),
            Probe::Key(a) => a.observe(record),
            Probe::Pierre(a) => a.observe(record),
            Probe::NoSign(a) => a.observe(record),
            Probe::Conservation(a) => a.observe(record),
            Probe::Budget(a) => a.observe(record),
            Probe::Porous(a) => a.observe(record),
        }
    }
}

#[derive(Default)]
struct Collected {
    rows: BTreeMap<&'static str, Vec<EstimateAudit>>,
    budget: Option<ReactionBudget>,
    porous: Option<PorousBudgets>,
}

fn probes_for(exp: &Experiment) -> Vec<Probe> {
    let reg = UVRegistration::for_system(&exp.spec);
    let mut probes = Vec::new();
    if exp.wants("mass") {
        probes.push(Probe::Mass(MassAccumulator::new(reg.clone())));
    }
    if exp.wants("key_estimate") {
        probes.push(Probe::Key(KeyEstimateAccumulator::new(reg.clone())));
    }
    if exp.wants("pierre_l2") {
        probes.push(Probe::Pierre(PierreAccumulator::new(reg.clone())));
    }
    if exp.wants("no_sign") {
        probes.push(Probe::NoSign(NoSignAccumulator::new(reg.clone())));
    }
    if exp.wants("conservation") {
        probes.push(Probe::Conservation(ConservationAccumulator::new(exp.spec.reaction.conservation_combos())));
    }
    if exp.wants("reaction_budget") || exp.wants("stability") {
        probes.push(Probe::Budget(ReactionBudgetAccumulator::new()));
    }
    if exp.wants("porous") || (exp.wants("stability") && exp.spec.is_porous()) {
        probes.push(Probe::Porous(PorousAccumulator::new(reg)));
    }
    probes
}

fn collect(probes: Vec<Probe>) -> Collected {
    let mut out = Collected::default();
    for p in probes {
        match p {
            Probe::Mass(a) => {
                out.rows.insert("mass", a.finish().audits);
            }
            Probe::Key(a) => {
                out.rows.insert("key_estimate", vec![a.finish()]);
            }
            Probe::Pierre(a) => {
                out.rows.insert("pierre_l2", vec![a.finish()]);
            }
            Probe::NoSign(a) => {
                let r = a.finish();
                out.rows.insert("no_sign", vec![r.bound, r.companion]);
            }
            Probe::Conservation(a) => {
                out.rows.insert("conservation", a.finish());
            }
            Probe::Budget(a) => {
                let b = a.finish();
                out.rows.insert("reaction_budget", b.audits.clone());
                out.budget = Some(b);
            }
            Probe::Porous(a) => {
                let b = a.finish();
                out.rows.insert("porous", b.audits.clone());
                out.porous = Some(b);
            }
        }
    }
    out
}

fn observe_run(
    exp: &Experiment,
    level: TruncationLevel,
    source: Option<&Source>,
    controls: &StepControls,
    probes: &mut [Probe],
) -> Result<Trajectory> {
    let (_, start) = truncate(&exp.spec.reaction, &exp.initial, level);
    let mut observers: Vec<&mut dyn StepObserver> = probes.iter_mut().map(|p| p as &mut dyn StepObserver).collect();
    run_observed(&exp.spec, level, source, &start, controls, &mut observers)
}

/// Keeps only the diagnostics when the states are not needed.
fn quiet(controls: &StepControls) -> StepControls {
    StepControls { snapshot_stride: usize::MAX, ..controls.clone() }
}

fn stability_rows(exp: &Experiment, collected: &Collected) -> Result<Vec<EstimateAudit>> {
    let n = exp.level.value();
    if !n.is_finite() {
        return Ok(vec![EstimateAudit::inapplicable("stability", "needs a finite truncation level")]);
    }
    let level = TruncationLevel::new(2.0 * n)?;
    let reg = UVRegistration::for_system(&exp.spec);
    let mut probes = vec![Probe::Budget(ReactionBudgetAccumulator::new())];
    if exp.spec.is_porous() {
        probes.push(Probe::Porous(PorousAccumulator::new(reg)));
    }
    observe_run(exp, level, exp.source.as_ref(), &quiet(&exp.controls), &mut probes)?;
    let doubled = collect(probes);
    let mut rows = Vec::new();
    if let (Some(a), Some(b)) = (&collected.budget, &doubled.budget) {
        rows.extend(budget_stability(a, b));
    }
    if let (Some(a), Some(b)) = (&collected.porous, &doubled.porous) {
        rows.extend(porous_stability(a, b));
    }
    Ok(rows)
}

fn scaling_rows(exp: &Experiment) -> Result<Vec<EstimateAudit>> {
    let Some(source) = exp.source.clone() else {
        return Ok(vec![EstimateAudit::inapplicable("no_sign_scaling", "needs a source term to scale")]);
    };
    let controls = quiet(&exp.controls);
    let lhs = [0.0, 1.0, 2.0, 4.0]
        .par_iter()
        .map(|&s| {
            let src = source.clone();
            let scaled = Source::new(move |i, t, x| s * src.eval(i, t, x));
            let mut probes = vec![Probe::NoSign(NoSignAccumulator::new(UVRegistration::for_system(&exp.spec)))];
            observe_run(exp, exp.level, Some(&scaled), &controls, &mut probes)?;
            let lhs = match probes.pop() {
                Some(Probe::NoSign(a)) => a.finish().bound.lhs,
                _ => unreachable!("one no-sign probe was attached"),
            };
            Ok(lhs)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vec![no_sign_scaling_probe([lhs[0], lhs[1], lhs[2], lhs[3]])])
}

fn assumption_rows(spec: &ReactionSpec) -> Vec<EstimateAudit> {
    verify_assumptions(spec, ASSUMPTION_SAMPLES)
        .checks
        .iter()
        .map(|c| {
            let mut row = EstimateAudit::inequality(format!("assumption[{}]", c.name), c.violation_count as f64, 0.0, 0.0)
                .with("samples", c.samples as f64);
            if let Some(v) = c.violations.first() {
                row = row.with_note(format!("first violation at r = {:?}: {} > {}", v.point, v.value, v.bound));
            }
            row
        })
        .collect()
}

/// Assembles the report rows in the order the audits were requested.
/// Rows that need fresh runs (`stability`, `no_sign_scaling`) are computed
/// only when `reruns` is set.
fn audit_rows(exp: &Experiment, traj: &Trajectory, mut collected: Collected, reruns: bool) -> Result<Vec<EstimateAudit>> {
    let mut rows = Vec::new();
    let mut seen = Vec::new();
    for name in &exp.config.audits {
        if seen.contains(&name.as_str()) {
            continue;
        }
        seen.push(name.as_str());
        match name.as_str() {
            "assumptions" => rows.extend(assumption_rows(&exp.spec.reaction)),
            "stability" if reruns => rows.extend(stability_rows(exp, &collected)?),
            "no_sign_scaling" if reruns => rows.extend(scaling_rows(exp)?),
            "stability" | "no_sign_scaling" => {
                rows.push(EstimateAudit::inapplicable(name.clone(), "needs fresh runs; use `run`"))
            }
            other => {
                let key = AUDIT_NAMES.iter().find(|&&k| k == other).expect("names validated");
                rows.extend(collected.rows.remove(key).unwrap_or_default());
            }
        }
    }
    rows.push(EstimateAudit::inequality("clip_budget", traj.clipped_total(), traj.clip_budget, 0.0));
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_echo: String,
    pub audits: Vec<EstimateAudit>,
    pub steps: usize,
    pub min_dt: f64,
    pub clipped: f64,
    pub clip_budget: f64,
    pub wall_time: f64,
}

impl RunReport {
    /// Pass unless some audit failed; inapplicable and info rows do not count.
    pub fn passed(&self) -> bool {
        self.audits.iter().all(EstimateAudit::acceptable)
    }

    pub fn status(&self) -> AuditStatus {
        if self.passed() {
            AuditStatus::Pass
        } else {
            AuditStatus::Fail
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status {}", self.status());
        let _ = writeln!(s, "steps {}", self.steps);
        let _ = writeln!(s, "min_dt {}", num(self.min_dt));
        let _ = writeln!(s, "clip_consumed {} of {}", num(self.clipped), num(self.clip_budget));
        let _ = writeln!(s, "wall_time_s {:.3}", self.wall_time);
        s.push('\n');
        s.push_str(&render_rows(&self.audits));
        s.push('\n');
        s.push_str(CONFIG_MARKER);
        s.push('\n');
        s.push_str(&self.config_echo);
        s
    }

    /// Config echo of a rendered report.
    pub fn config_from_report(text: &str) -> Result<ExperimentConfig> {
        let (_, echo) =
            text.split_once(&format!("{CONFIG_MARKER}\n")).ok_or_else(|| invalid("report has no config echo"))?;
        ExperimentConfig::from_toml(echo)
    }
}

const CONFIG_MARKER: &str = "# effective config";

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.9e}")
    }
}

/// One line per audit: `name lhs rhs margin status key=value...  # note`.
pub fn render_rows(rows: &[EstimateAudit]) -> String {
    let mut s = String::from("# name lhs rhs margin status constants\n");
    for r in rows {
        let _ = write!(s, "{} {} {} {} {}", r.name, num(r.lhs), num(r.rhs), num(r.margin), r.status);
        for (k, v) in &r.constants {
            let _ = write!(s, " {k}={}", num(*v));
        }
        if let Some(note) = &r.note {
            let _ = write!(s, "  # {note}");
        }
        s.push('\n');
    }
    s
}

/// Diagnostics of the stored snapshots, one row per species.
pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for &k in &traj.snapshot_steps {
        let d = &traj.diagnostics[k];
        for (i, sp) in d.species.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                d.step, d.t, d.dt, i, sp.mass, sp.l2, sp.min, sp.max, sp.f_l1, sp.clipped
            );
        }
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotSeries {
    snapshot_steps: Vec<usize>,
    times: Vec<f64>,
    /// `values[snapshot][species][cell]`.
    values: Vec<Vec<Vec<f64>>>,
    diagnostics: Vec<Diagnostics>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn finish_report(exp: &Experiment, traj: &Trajectory, audits: Vec<EstimateAudit>, start: Instant) -> RunReport {
    RunReport {
        config_echo: exp.config.to_toml(),
        audits,
        steps: traj.steps(),
        min_dt: traj.min_dt(),
        clipped: traj.clipped_total(),
        clip_budget: traj.clip_budget,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

/// Runs the experiment with its audits attached, without writing anything.
pub fn evaluate(exp: &Experiment) -> Result<(Trajectory, RunReport)> {
    let start = Instant::now();
    let mut probes = probes_for(exp);
    let traj = observe_run(exp, exp.level, exp.source.as_ref(), &exp.controls, &mut probes)?;
    let rows = audit_rows(exp, &traj, collect(probes), true)?;
    let report = finish_report(exp, &traj, rows, start);
    Ok((traj, report))
}

/// Runs the experiment with its audits and writes the CSV, the report and
/// (if configured) the snapshot series under `out_dir`.
pub fn run_experiment(exp: &Experiment, out_dir: &Path) -> Result<RunReport> {
    let (traj, report) = evaluate(exp)?;
    write_outputs(exp, &traj, &report, out_dir)?;
    Ok(report)
}

/// Writes the CSV, the report and (if configured) the snapshot series.
pub fn write_outputs(exp: &Experiment, traj: &Trajectory, report: &RunReport, out_dir: &Path) -> Result<()> {
    let out = &exp.config.output;
    write_file(&out_dir.join(&out.csv), &diagnostics_csv(traj))?;
    if let Some(path) = &out.snapshots {
        let series = SnapshotSeries {
            snapshot_steps: traj.snapshot_steps.clone(),
            times: traj.states.iter().map(|s| s.t).collect(),
            values: traj
                .states
                .iter()
                .map(|s| s.species().iter().map(|f| f.values().to_vec()).collect())
                .collect(),
            diagnostics: traj.diagnostics.clone(),
        };
        let json = serde_json::to_string(&series).map_err(|e| invalid(e.to_string()))?;
        write_file(&out_dir.join(path), &json)?;
    }
    write_file(&out_dir.join(&out.report), &report.render())
}

/// Audits a snapshot series written by `run`. Chain audits need every
/// step, so the series must have been stored with `stride = 1`.
pub fn audit_snapshots(exp: &Experiment, snapshots: &Path, out_dir: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let text = fs::read_to_string(snapshots).map_err(|e| invalid(format!("{}: {e}", snapshots.display())))?;
    let series: SnapshotSeries = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    let grid = *exp.initial.grid();
    let m = exp.spec.m();
    if series.times.len() != series.values.len() || series.times.len() != series.snapshot_steps.len() {
        return Err(invalid("snapshot series is inconsistent"));
    }
    let states = series
        .times
        .iter()
        .zip(series.values)
        .map(|(&t, vals)| {
            if vals.len() != m {
                return Err(invalid(format!("snapshot has {} species, config has {m}", vals.len())));
            }
            let species = vals.into_iter().map(|v| Field::new(grid, v)).collect::<Result<Vec<_>>>().map_err(as_config)?;
            State::new(t, species).map_err(as_config)
        })
        .collect::<Result<Vec<_>>>()?;
    let clip_budget = exp.controls.clip_tolerance.unwrap_or(0.0);
    let clipped = series.diagnostics.last().map_or(0.0, |d| d.clipped_total);
    let traj = Trajectory {
        spec: exp.spec.clone(),
        level: exp.level,
        source: exp.source.clone(),
        controls: exp.controls.clone(),
        states,
        snapshot_steps: series.snapshot_steps,
        diagnostics: series.diagnostics,
        clip_budget,
        clip_budget_exceeded: clipped > clip_budget,
    };
    if !traj.has_every_step() {
        return Err(invalid("snapshot series is strided; rerun with output.stride = 1"));
    }
    let mut probes = probes_for(exp);
    {
        let mut observers: Vec<&mut dyn StepObserver> = probes.iter_mut().map(|p| p as &mut dyn StepObserver).collect();
        traj.replay(&mut observers)?;
    }
    let rows = audit_rows(exp, &traj, collect(probes), false)?;
    let report = finish_report(exp, &traj, rows, start);
    write_file(&out_dir.join(&exp.config.output.report), &report.render())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvergeMode {
    /// Truncation levels `n`.
    N,
    /// Cells along x (nested grids).
    H,
}

#[derive(Debug, Clone)]
pub struct ConvergeReport {
    pub mode: ConvergeMode,
    pub levels: Vec<f64>,
    /// Difference between consecutive levels.
    pub differences: Vec<f64>,
    /// Observed orders (h-mode only).
    pub orders: Vec<f64>,
    pub audits: Vec<EstimateAudit>,
}

impl ConvergeReport {
    pub fn passed(&self) -> bool {
        self.audits.iter().all(EstimateAudit::acceptable)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode {}", if self.mode == ConvergeMode::N { "n" } else { "h" });
        let _ = writeln!(s, "# level next difference order");
        for (k, d) in self.differences.iter().enumerate() {
            let order = self.orders.get(k.wrapping_sub(1)).copied().filter(|_| k > 0).unwrap_or(f64::NAN);
            let _ = writeln!(s, "{} {} {} {}", self.levels[k], self.levels[k + 1], num(*d), num(order));
        }
        s.push('\n');
        s.push_str(&render_rows(&self.audits));
        s
    }
}

/// `n`-mode compares truncation levels; `h`-mode runs nested grids with the
/// finest initial data restricted by cell averages and reports observed
/// orders of the final-time self-differences.
pub fn converge(exp: &Experiment, levels: &[f64], mode: ConvergeMode) -> Result<ConvergeReport> {
    if levels.len() < 3 {
        return Err(invalid(format!("need at least 3 levels, got {}", levels.len())));
    }
    match mode {
        ConvergeMode::N => {
            let study =
                truncation_convergence_study(&exp.spec, &exp.initial, &exp.controls, levels, exp.source.as_ref())
                    .map_err(as_config)?;
            Ok(ConvergeReport {
                mode,
                levels: levels.to_vec(),
                differences: study.d,
                orders: Vec::new(),
                audits: vec![study.audit],
            })
        }
        ConvergeMode::H => converge_h(exp, levels),
    }
}

fn converge_h(exp: &Experiment, levels: &[f64]) -> Result<ConvergeReport> {
    if matches!(exp.config.init, InitConfig::FromFile { .. }) {
        return Err(invalid("h-mode needs initial data that can be built on every grid"));
    }
    let base = *exp.initial.grid();
    let (nx0, ny0) = (base.nx(), base.ny());
    let mut cells = Vec::with_capacity(levels.len());
    for &l in levels {
        if !(l >= 1.0 && l.fract() == 0.0) {
            return Err(invalid(format!("h-mode levels are cell counts, got {l}")));
        }
        let nx = l as usize;
        let ny = if base.dim() == 2 {
            if (nx * ny0) % nx0 != 0 {
                return Err(invalid(format!("{nx} cells along x do not keep the aspect ratio {nx0}:{ny0}")));
            }
            nx * ny0 / nx0
        } else {
            1
        };
        cells.push((nx, ny));
    }
    if cells.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].0 % w[0].0 != 0 || w[1].1 % w[0].1 != 0) {
        return Err(invalid("h-mode levels must increase and each must divide the next"));
    }
    let grids = cells
        .iter()
        .map(|&(nx, ny)| {
            let c: Vec<usize> = if base.dim() == 2 { vec![nx, ny] } else { vec![nx] };
            Grid::new(base.dim(), &base.lengths()[..base.dim()], &c, base.bc()).map_err(as_config)
        })
        .collect::<Result<Vec<_>>>()?;
    let finest = build_initial(&exp.config.init, *grids.last().expect("three levels"), exp.spec.m(), &exp.base_dir)?;
    let controls = quiet(&exp.controls);
    let finals = grids
        .par_iter()
        .map(|g| {
            let u0 = restrict_state(&finest, g);
            let (_, start) = truncate(&exp.spec.reaction, &u0, exp.level);
            let traj = run_observed(&exp.spec, exp.level, exp.source.as_ref(), &start, &controls, &mut [])?;
            Ok(traj.final_state().clone())
        })
        .collect::<Result<Vec<State>>>()?;
    let differences: Vec<f64> = finals
        .windows(2)
        .map(|w| {
            let coarse = restrict_state(&w[1], w[0].grid());
            let g = w[0].grid();
            w[0].species()
                .iter()
                .zip(coarse.species())
                .map(|(a, b)| a.values().iter().zip(b.values()).map(|(p, q)| (p - q).abs()).sum::<f64>())
                .sum::<f64>()
                * g.cell_volume()
        })
        .collect();
    let orders: Vec<f64> = differences
        .windows(2)
        .zip(levels.windows(3))
        .map(|(e, l)| (e[0] / e[1]).ln() / (l[2] / l[1]).ln())
        .collect();
    let mut audits = Vec::new();
    for (k, d) in differences.iter().enumerate() {
        audits.push(EstimateAudit::info(format!("self_difference[{k}]"), *d).with("cells", levels[k]));
    }
    for (k, p) in orders.iter().enumerate() {
        audits.push(EstimateAudit::info(format!("observed_order[{k}]"), *p).with("cells", levels[k + 1]));
    }
    Ok(ConvergeReport { mode: ConvergeMode::H, levels: levels.to_vec(), differences, orders, audits })
}

/// Cell averages of `state` on the coarser nested grid `coarse`.
pub fn restrict_state(state: &State, coarse: &Grid) -> State {
    let fine = state.grid();
    let (rx, ry) = (fine.nx() / coarse.nx(), fine.ny() / coarse.ny());
    let w = 1.0 / (rx * ry) as f64;
    let species = state
        .species()
        .iter()
        .map(|f| {
            let v = f.values();
            let mut out = vec![0.0; coarse.cell_count()];
            for jy in 0..fine.ny() {
                for jx in 0..fine.nx() {
                    out[coarse.index(jx / rx, jy / ry)] += w * v[fine.index(jx, jy)];
                }
            }
            Field::from_vec_unchecked(*coarse, out)
        })
        .collect();
    State::new(state.t, species).expect("restriction keeps the species count")
}

/// One `--set key=v1,v2` option: a dotted config path and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub values: Vec<toml::Value>,
}

impl std::str::FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, rest) = s.split_once('=').ok_or_else(|| invalid(format!("expected key=v1,v2 in `{s}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(invalid(format!("empty key in `{s}`")));
        }
        let values = split_top_level(rest).into_iter().map(parse_value).collect::<Vec<_>>();
        if values.is_empty() {
            return Err(invalid(format!("no values for `{key}`")));
        }
        Ok(Override { key: key.to_string(), values })
    }
}

/// Splits on commas outside brackets, braces and quotes.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut quote, mut start) = (0i32, None, 0);
    for (i, c) in s.char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '"' | '\'') => quote = Some(c),
            (None, '[' | '{') => depth += 1,
            (None, ']' | '}') => depth -= 1,
            (None, ',') if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts.into_iter().filter(|p| !p.is_empty()).collect()
}

/// TOML literal if it parses as one, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut table = doc;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| invalid(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub index: usize,
    pub assignment: Vec<(String, String)>,
    pub exit_code: i32,
    pub message: String,
}

/// Runs every combination of the overrides, each into `out_dir/run-NNN`.
/// Results come back in cross-product order.
pub fn sweep(config_text: &str, base_dir: &Path, overrides: &[Override], out_dir: &Path) -> Result<Vec<SweepOutcome>> {
    let doc: toml::Table = toml::from_str(config_text).map_err(|e| invalid(e.to_string()))?;
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for o in overrides {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                o.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((o.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let outcomes: Vec<SweepOutcome> = combos
        .par_iter()
        .enumerate()
        .map(|(index, combo)| {
            let assignment: Vec<(String, String)> = combo.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
            let dir = out_dir.join(format!("run-{index:03}"));
            let result = (|| {
                let mut doc = doc.clone();
                for (k, v) in combo {
                    apply_override(&mut doc, k, v.clone())?;
                }
                let config: ExperimentConfig =
                    toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
                let exp = Experiment::from_config(config, base_dir)?;
                run_experiment(&exp, &dir)
            })();
            let (exit_code, message) = match &result {
                Ok(r) => (if r.passed() { 0 } else { 2 }, r.status().to_string()),
                Err(e) => (exit_code(e), e.to_string()),
            };
            SweepOutcome { index, assignment, exit_code, message }
        })
        .collect();
    let mut index = String::from("# index exit status assignment\n");
    for o in &outcomes {
        let a: Vec<String> = o.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(index, "{} {} {} {}", o.index, o.exit_code, o.message.replace('\n', " "), a.join(" "));
    }
    write_file(&out_dir.join("sweep.txt"), &index)?;
    Ok(outcomes)
}

/// Process exit code for an error: 3 blow-up, 4 numerical failure,
/// 5 invalid configuration, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::BlowUp { .. } => 3,
        Error::NumericalFailure { .. } | Error::StepCollapse { .. } | Error::StepLimit { .. } => 4,
        Error::InvalidConfig(_) | Error::InvalidInput(_) => 5,
        Error::Io(_) => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "rdaudit", version, about = "Reaction-diffusion simulations with a priori estimate audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and its audits.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Directory for the output files (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a snapshot series stored by `run` (needs output.stride = 1).
    Audit {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare truncation levels (`--mode n`) or nested grids (`--mode h`).
    Converge {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        #[arg(long, value_enum, default_value = "n")]
        mode: ConvergeMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product of config overrides in parallel.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        /// `dotted.key=v1,v2`; repeatable.
        #[arg(long = "set", required = true)]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 5 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Writes to stdout, ignoring a closed pipe (`rdaudit run ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("."))
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Run { config, out } => {
            let exp = Experiment::load(&config)?;
            let report = run_experiment(&exp, &out_dir(out))?;
            emit(&format!("{}status {} after {} steps\n", render_rows(&report.audits), report.status(), report.steps));
            Ok(if report.passed() { 0 } else { 2 })
        }
        Command::Audit { config, snapshots, out } => {
            let exp = Experiment::load(&config)?;
            let report = audit_snapshots(&exp, &snapshots, &out_dir(out))?;
            emit(&format!("{}status {}\n", render_rows(&report.audits), report.status()));
            Ok(if report.passed() { 0 } else { 2 })
        }
        Command::Converge { config, levels, mode, out } => {
            let exp = Experiment::load(&config)?;
            let report = converge(&exp, &levels, mode)?;
            let text = report.render();
            write_file(&out_dir(out).join(&exp.config.output.report), &text)?;
            emit(&text);
            Ok(if report.passed() { 0 } else { 2 })
        }
        Command::Sweep { config, set, out } => {
            let overrides = set.iter().map(|s| s.parse()).collect::<Result<Vec<Override>>>()?;
            let text = fs::read_to_string(&config).map_err(|e| invalid(format!("{}: {e}", config.display())))?;
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            let outcomes = sweep(&text, &base, &overrides, &out_dir(out))?;
            let mut lines = String::new();
            for o in &outcomes {
                let a: Vec<String> = o.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = writeln!(lines, "run-{:03} exit {} {} [{}]", o.index, o.exit_code, o.message, a.join(" "));
            }
            emit(&lines);
            Ok(outcomes.iter().map(|o| o.exit_code).max().unwrap_or(0))
        }
    }
}
