//! Estimates evaluated on discrete trajectories.
//!
//! Each audit is an accumulator implementing [`StepObserver`], so it can run
//! live during a simulation (no per-step storage) or be replayed over a
//! trajectory that kept every step. The discrete quantities are chosen so
//! that every inequality is provable on the grid: identities telescope
//! exactly and the only slack comes from clipping, which is measured and
//! added to the tolerance.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::elliptic::{domain_constants, DomainConstants, Laplacian, PoissonSolver};
use crate::error::{Error, Result};
use crate::grid::{integrate_values, Boundary, Grid, State};
use crate::integrate::{run_observed, MacroSampler, Source, StepControls, StepObserver, StepRecord, Trajectory};
use crate::systems::{truncate, GrowthClass, MassClass, SystemSpec, TruncationLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuditStatus {
    Pass,
    Fail,
    /// Preconditions of the estimate do not hold for this run.
    Inapplicable,
    /// Measured quantity with no certified bound.
    Info,
}

impl fmt::Display for AuditStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditStatus::Pass => "pass",
            AuditStatus::Fail => "FAIL",
            AuditStatus::Inapplicable => "inapplicable",
            AuditStatus::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateAudit {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for inequalities, `-|lhs - rhs|` for identities.
    pub margin: f64,
    pub tol: f64,
    pub status: AuditStatus,
    pub constants: BTreeMap<String, f64>,
    pub note: Option<String>,
}

/// Default absolute slack `1e-9 · max(1, |rhs|)`.
pub fn default_tol(rhs: f64) -> f64 {
    1e-9 * rhs.abs().max(1.0)
}

impl EstimateAudit {
    /// `lhs ≤ rhs + tol`.
    pub fn inequality(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let margin = rhs - lhs;
        let status = if margin >= -tol { AuditStatus::Pass } else { AuditStatus::Fail };
        EstimateAudit { name: name.into(), lhs, rhs, margin, tol, status, constants: BTreeMap::new(), note: None }
    }

    /// `|lhs - rhs| ≤ tol`.
    pub fn identity(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let margin = -(lhs - rhs).abs();
        let status = if margin >= -tol { AuditStatus::Pass } else { AuditStatus::Fail };
        EstimateAudit { name: name.into(), lhs, rhs, margin, tol, status, constants: BTreeMap::new(), note: None }
    }

    pub fn inapplicable(name: impl Into<String>, reason: impl Into<String>) -> Self {
        EstimateAudit {
            name: name.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            margin: f64::NAN,
            tol: 0.0,
            status: AuditStatus::Inapplicable,
            constants: BTreeMap::new(),
            note: Some(reason.into()),
        }
    }

    pub fn info(name: impl Into<String>, value: f64) -> Self {
        EstimateAudit {
            name: name.into(),
            lhs: value,
            rhs: f64::NAN,
            margin: f64::NAN,
            tol: 0.0,
            status: AuditStatus::Info,
            constants: BTreeMap::new(),
            note: None,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.constants.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == AuditStatus::Pass
    }

    /// True unless the audit failed.
    pub fn acceptable(&self) -> bool {
        self.status != AuditStatus::Fail
    }
}

/// Time weighting of a registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Plain,
    /// `U = e^{-C₀t} Σ aᵢuᵢ`, `V = e^{-C₀t} Σ aᵢdᵢuᵢ`.
    Exponential { c0: f64 },
}

/// How `(U, V, F, B)` are formed from the species so that
/// `∂ₜU - ΔV = B - F`.
#[derive(Debug, Clone, PartialEq)]
pub struct UVRegistration {
    pub u_weights: Vec<f64>,
    /// Applied to `uᵢ` (semilinear) or `uᵢ^{mᵢ}` (porous).
    pub v_weights: Vec<f64>,
    pub b: f64,
    pub weighting: Weighting,
}

impl UVRegistration {
    /// The registration implied by the system's mass class. Under the
    /// linear-growth class the constant is `C₀ = c0 / min aᵢ`, which makes
    /// `Σ aᵢfᵢ ≤ C₀(Σ aᵢ + Σ aᵢuᵢ)`, and `B = C₀ Σ aᵢ`.
    pub fn for_system(spec: &SystemSpec) -> Self {
        let a = spec.reaction.mass_weights().to_vec();
        let v_weights = a.iter().zip(&spec.d).map(|(a, d)| a * d).collect();
        match spec.reaction.mass_class() {
            MassClass::Dissipative => UVRegistration { u_weights: a, v_weights, b: 0.0, weighting: Weighting::Plain },
            MassClass::LinearGrowth { c0 } => {
                let amin = a.iter().copied().fold(f64::INFINITY, f64::min);
                let c0 = c0 / amin;
                let b = c0 * a.iter().sum::<f64>();
                UVRegistration { u_weights: a, v_weights, b, weighting: Weighting::Exponential { c0 } }
            }
        }
    }

    pub fn c0(&self) -> f64 {
        match self.weighting {
            Weighting::Plain => 0.0,
            Weighting::Exponential { c0 } => c0,
        }
    }

    fn weight(&self, t: f64) -> f64 {
        match self.weighting {
            Weighting::Plain => 1.0,
            Weighting::Exponential { c0 } => (-c0 * t).exp(),
        }
    }

    fn combine(&self, state: &State, weights: &[f64], powers: Option<&[f64]>) -> Vec<f64> {
        let n = state.grid().cell_count();
        let mut out = vec![0.0; n];
        for (i, f) in state.species().iter().enumerate() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let m = powers.map_or(1.0, |p| p[i]);
            for (o, &v) in out.iter_mut().zip(f.values()) {
                *o += w * if m == 1.0 { v } else { v.powf(m) };
            }
        }
        out
    }

    /// `U` at a state.
    pub fn u_of(&self, state: &State) -> Vec<f64> {
        let w = self.weight(state.t);
        let mut u = self.combine(state, &self.u_weights, None);
        u.iter_mut().for_each(|v| *v *= w);
        u
    }

    /// The discrete counterparts over one step. `residual` is whatever the
    /// update adds beyond `dt (ΔV + B - F)`: clipping plus rounding.
    fn terms(&self, rec: &StepRecord<'_>, lap: &Laplacian) -> StepTerms {
        let spec = rec.spec;
        let n = rec.before.grid().cell_count();
        let porous = spec.is_porous();
        let u0 = self.u_of(rec.before);
        let u1 = self.u_of(rec.after);
        let mut v = if porous {
            self.combine(rec.before, &self.v_weights, Some(&spec.mexp))
        } else {
            self.combine(rec.after, &self.v_weights, None)
        };
        let mut g = vec![0.0; n];
        for (i, r) in rec.reaction.iter().enumerate() {
            let a = self.u_weights[i];
            for (gc, rc) in g.iter_mut().zip(r) {
                *gc += a * rc;
            }
            if let Some(src) = rec.source {
                for (gc, sc) in g.iter_mut().zip(&src[i]) {
                    *gc += a * sc;
                }
            }
        }
        let dt = rec.dt;
        let f: Vec<f64> = match self.weighting {
            Weighting::Plain => g.iter().map(|gc| self.b - gc).collect(),
            Weighting::Exponential { c0 } => {
                let wk = self.weight(rec.t);
                let decay = (-c0 * dt).exp();
                let s_k = self.combine(rec.before, &self.u_weights, None);
                g.iter()
                    .zip(&s_k)
                    .map(|(gc, sc)| self.b - wk * (decay * gc - sc * (1.0 - decay) / dt))
                    .collect()
            }
        };
        if let Weighting::Exponential { .. } = self.weighting {
            let w1 = self.weight(rec.after.t);
            v.iter_mut().for_each(|x| *x *= w1);
        }
        let mut lv = vec![0.0; n];
        lap.apply(&v, &mut lv);
        let residual = (0..n).map(|c| u1[c] - u0[c] - dt * (lv[c] + self.b - f[c])).collect();
        StepTerms { u0, u1, v, f, g, residual }
    }
}

struct StepTerms {
    u0: Vec<f64>,
    u1: Vec<f64>,
    v: Vec<f64>,
    f: Vec<f64>,
    /// `Σ aᵢ(fᵢⁿ + sᵢ)`, unweighted.
    g: Vec<f64>,
    residual: Vec<f64>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn sum_of(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Replays a stride-1 trajectory through one accumulator.
pub fn replay<A: StepObserver>(traj: &Trajectory, mut acc: A) -> Result<A> {
    traj.replay(&mut [&mut acc])?;
    Ok(acc)
}

fn state_grid(s: &State) -> Grid {
    *s.grid()
}

// ---------------------------------------------------------------- mass

/// Mass monotonicity / Gronwall bound, the per-species L¹ bound and the
/// mean identity `⟨U(T)⟩ = ⟨U⁰⟩ + BT - Σ dt ⟨F⟩`.
#[derive(Debug, Clone)]
pub struct MassAccumulator {
    reg: UVRegistration,
    lap: Option<Laplacian>,
    grid: Option<Grid>,
    bc: Boundary,
    m0: f64,
    plain_mass0: f64,
    l1_0: f64,
    worst_monotone: (f64, f64, f64),
    worst_l1: (f64, f64),
    worst_gronwall: (f64, f64),
    clip_weighted: f64,
    mean_u0: f64,
    deficit_integral: f64,
    residual_integral: f64,
    t0: f64,
    t: f64,
    series: Vec<(f64, f64)>,
}

impl MassAccumulator {
    pub fn new(reg: UVRegistration) -> Self {
        MassAccumulator {
            reg,
            lap: None,
            grid: None,
            bc: Boundary::Neumann,
            m0: 0.0,
            plain_mass0: 0.0,
            l1_0: 0.0,
            worst_monotone: (0.0, 0.0, f64::INFINITY),
            worst_l1: (0.0, 0.0),
            worst_gronwall: (0.0, 0.0),
            clip_weighted: 0.0,
            mean_u0: 0.0,
            deficit_integral: 0.0,
            residual_integral: 0.0,
            t0: 0.0,
            t: 0.0,
            series: Vec::new(),
        }
    }

    fn plain_mass(&self, s: &State) -> f64 {
        let g = s.grid();
        s.species().iter().zip(&self.reg.u_weights).map(|(f, a)| a * integrate_values(g, f.values())).sum()
    }

    fn species_l1_max(&self, s: &State) -> f64 {
        let g = s.grid();
        s.species()
            .iter()
            .zip(&self.reg.u_weights)
            .map(|(f, a)| a * integrate_values(g, f.values()))
            .fold(0.0, f64::max)
    }

    pub fn finish(self) -> MassReport {
        let grid = self.grid.expect("mass accumulator never started");
        let measure = grid.measure();
        let mut audits = Vec::new();
        let scale = self.plain_mass0.abs().max(f64::MIN_POSITIVE);
        match self.reg.weighting {
            Weighting::Plain => {
                let (lhs, rhs, _) = self.worst_monotone;
                audits.push(
                    EstimateAudit::inequality("mass_nonincreasing", lhs, rhs, 1e-8 * scale)
                        .with("B", self.reg.b)
                        .with("T", self.t - self.t0),
                );
                let (lhs, rhs) = self.worst_l1;
                audits.push(EstimateAudit::inequality("mass_species_l1", lhs, rhs, 1e-9 * scale));
            }
            Weighting::Exponential { c0 } => {
                let (lhs, rhs) = self.worst_gronwall;
                audits.push(
                    EstimateAudit::inequality("mass_gronwall", lhs, rhs, 1e-9 * rhs.abs().max(scale))
                        .with("C0", c0)
                        .with("B", self.reg.b)
                        .with("T", self.t - self.t0),
                );
            }
        }
        if self.bc == Boundary::Neumann {
            let lhs = self.series.last().map_or(self.mean_u0, |&(_, u)| u);
            let rhs = self.mean_u0 + self.reg.b * (self.t - self.t0) - self.deficit_integral / measure
                + self.residual_integral / measure;
            let tol = 1e-10 * lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
            audits.push(
                EstimateAudit::identity("mass_mean_identity", lhs, rhs, tol)
                    .with("B", self.reg.b)
                    .with("clipped", self.residual_integral.max(0.0) / measure),
            );
        } else {
            audits.push(EstimateAudit::inapplicable("mass_mean_identity", "boundary flux under Dirichlet"));
        }
        MassReport { audits, series: self.series }
    }
}

#[derive(Debug, Clone)]
pub struct MassReport {
    pub audits: Vec<EstimateAudit>,
    /// `(t, ⟨U(t)⟩)` for the registration's `U`.
    pub series: Vec<(f64, f64)>,
}

impl StepObserver for MassAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        let g = state_grid(initial);
        self.grid = Some(g);
        self.bc = spec.bc;
        self.lap = Some(Laplacian::new(&g));
        self.t0 = initial.t;
        self.t = initial.t;
        self.plain_mass0 = self.plain_mass(initial);
        self.m0 = self.plain_mass0;
        let u = self.reg.u_of(initial);
        self.mean_u0 = sum_of(&u) / g.cell_count() as f64;
        // ‖Σ aⱼuⱼ⁰‖₁ (all terms are nonnegative)
        self.l1_0 = self.plain_mass0;
        self.worst_l1 = (self.species_l1_max(initial), self.l1_0);
        self.worst_gronwall = (self.plain_mass0, self.plain_mass0);
        self.series = vec![(initial.t, self.mean_u0)];
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        let g = state_grid(rec.before);
        let lap = self.lap.expect("mass accumulator never started");
        let terms = self.reg.terms(rec, &lap);
        let clip_now: f64 = rec.clipped.iter().zip(&self.reg.u_weights).map(|(c, a)| a * c).sum();
        self.clip_weighted += clip_now;
        self.deficit_integral += rec.dt * integrate_values(&g, &terms.f);
        self.residual_integral += integrate_values(&g, &terms.residual);
        self.t = rec.after.t;
        self.series.push((rec.after.t, sum_of(&terms.u1) / g.cell_count() as f64));

        let m_before = self.plain_mass(rec.before);
        let m_after = self.plain_mass(rec.after);
        let allowed = m_before + clip_now;
        if allowed - m_after < self.worst_monotone.2 {
            self.worst_monotone = (m_after, allowed, allowed - m_after);
        }
        let l1 = self.species_l1_max(rec.after);
        let bound = self.l1_0 + self.clip_weighted;
        if bound - l1 < self.worst_l1.1 - self.worst_l1.0 {
            self.worst_l1 = (l1, bound);
        }
        let c0 = self.reg.c0();
        let elapsed = rec.after.t - self.t0;
        let gr = (c0 * elapsed).exp() * (self.plain_mass0 + self.reg.b * g.measure() * elapsed + self.clip_weighted);
        if gr - m_after < self.worst_gronwall.1 - self.worst_gronwall.0 {
            self.worst_gronwall = (m_after, gr);
        }
        Ok(())
    }
}

pub fn mass_audit(traj: &Trajectory, reg: &UVRegistration) -> Result<MassReport> {
    Ok(replay(traj, MassAccumulator::new(reg.clone()))?.finish())
}

// ---------------------------------------------------------------- key estimate

/// `½‖U(T)‖²_{H⁻¹} + ∫∫UV ≤ K(T) + ½‖U⁰‖²_{H⁻¹}` with
/// `K = ∫[C⟨F⟩ + ⟨V⟩][B|Ω|t + ∫U⁰]dt` and `C = c_omega`.
///
/// Discretely `U` is paired with `Ū_k = (U_k + U_{k+1})/2`, which makes
/// `∫(U_{k+1}-U_k) W̄_k = ½Δ‖U‖²_{H⁻¹}` exact; the chain inequality
/// `Φ_k = (W_{k+1}-W_k)/dt + V_k ≤ C⟨F_k⟩ + ⟨V_k⟩` is checked pointwise.
#[derive(Debug)]
pub struct KeyEstimateAccumulator {
    reg: UVRegistration,
    setup: Option<KeySetup>,
    w_prev: Vec<f64>,
    u_norm_last: f64,
    lhs_uv: f64,
    rhs_k: f64,
    clip_slack: f64,
    residual_mass: f64,
    min_f_ratio: f64,
    chain_worst: f64,
    chain_violations: usize,
    steps: usize,
    inapplicable: Option<String>,
    t0: f64,
    t: f64,
}

#[derive(Debug)]
struct KeySetup {
    grid: Grid,
    lap: Laplacian,
    poisson: PoissonSolver,
    constants: Arc<DomainConstants>,
    u0_mass: f64,
    u0_norm: f64,
}

/// Pointwise chain tolerance relative to the size of the terms involved.
pub const CHAIN_REL_TOL: f64 = 1e-7;

impl KeyEstimateAccumulator {
    pub fn new(reg: UVRegistration) -> Self {
        KeyEstimateAccumulator {
            reg,
            setup: None,
            w_prev: Vec::new(),
            u_norm_last: 0.0,
            lhs_uv: 0.0,
            rhs_k: 0.0,
            clip_slack: 0.0,
            residual_mass: 0.0,
            min_f_ratio: f64::INFINITY,
            chain_worst: f64::NEG_INFINITY,
            chain_violations: 0,
            steps: 0,
            inapplicable: None,
            t0: 0.0,
            t: 0.0,
        }
    }

    pub fn finish(self) -> EstimateAudit {
        const NAME: &str = "key_estimate";
        if let Some(reason) = self.inapplicable {
            return EstimateAudit::inapplicable(NAME, reason);
        }
        let s = self.setup.expect("key estimate accumulator never started");
        let lhs = 0.5 * self.u_norm_last + self.lhs_uv;
        let rhs = self.rhs_k + 0.5 * s.u0_norm;
        let tol = default_tol(rhs) + self.clip_slack;
        let mut audit = EstimateAudit::inequality(NAME, lhs, rhs, tol)
            .with("C_omega", s.constants.c_omega)
            .with("B", self.reg.b)
            .with("C0", self.reg.c0())
            .with("T", self.t - self.t0)
            .with("chain_worst", self.chain_worst)
            .with("clip_slack", self.clip_slack);
        if self.chain_violations > 0 {
            audit.status = AuditStatus::Fail;
            audit.note = Some(format!("chain inequality violated at {} of {} steps", self.chain_violations, self.steps));
        } else if self.clip_slack > default_tol(rhs) {
            audit.note = Some("clipping slack dominates the tolerance".into());
        }
        audit
    }
}

impl StepObserver for KeyEstimateAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        self.t0 = initial.t;
        self.t = initial.t;
        if spec.bc != Boundary::Neumann {
            self.inapplicable = Some("needs zero-flux boundaries".into());
            return Ok(());
        }
        if spec.is_porous() {
            self.inapplicable = Some("stated for the semilinear system".into());
            return Ok(());
        }
        let grid = state_grid(initial);
        let poisson = PoissonSolver::with_bc(&grid, Boundary::Neumann)?;
        let u0 = self.reg.u_of(initial);
        let w0 = poisson.solve_values(&u0)?;
        let u0_norm = integrate_values(&grid, &u0.iter().zip(&w0).map(|(a, b)| a * b).collect::<Vec<_>>());
        self.u_norm_last = u0_norm;
        self.w_prev = w0;
        self.setup = Some(KeySetup {
            grid,
            lap: Laplacian::new(&grid),
            poisson,
            constants: domain_constants(&grid)?,
            u0_mass: integrate_values(&grid, &u0),
            u0_norm,
        });
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        if self.inapplicable.is_some() {
            return Ok(());
        }
        let s = self.setup.as_ref().expect("key estimate accumulator never started");
        let g = &s.grid;
        let n = g.cell_count();
        let vol = g.cell_volume();
        let measure = g.measure();
        let terms = self.reg.terms(rec, &s.lap);
        let dt = rec.dt;
        self.steps += 1;
        self.t = rec.after.t;

        let f_scale = terms.g.iter().fold(self.reg.b, |m, v| m.max(v.abs())) + f64::MIN_POSITIVE;
        let f_min = min_of(&terms.f);
        self.min_f_ratio = self.min_f_ratio.min(f_min / f_scale);
        if f_min < -1e-12 * f_scale {
            self.inapplicable = Some(format!("F < 0 at step {} (min F = {f_min:e})", rec.index));
            return Ok(());
        }

        let w1 = s.poisson.solve_values(&terms.u1)?;
        let mean_f = sum_of(&terms.f) / n as f64;
        let mean_v = sum_of(&terms.v) / n as f64;
        let c = s.constants.c_omega;

        // pointwise chain
        let bound = c * mean_f + mean_v;
        let mut worst = f64::NEG_INFINITY;
        let mut w_scale = 0.0f64;
        for i in 0..n {
            let phi = (w1[i] - self.w_prev[i]) / dt + terms.v[i];
            worst = worst.max(phi - bound);
            w_scale = w_scale.max(w1[i].abs());
        }
        let v_scale = terms.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut chain_tol = CHAIN_REL_TOL * (bound.abs() + v_scale + w_scale / dt);
        let clipped_any = rec.clipped.iter().any(|&c| c > 0.0);
        if clipped_any {
            let z = s.poisson.solve_values(&terms.residual)?;
            chain_tol += max_of(&z).max(0.0) / dt;
        }
        self.chain_worst = self.chain_worst.max(worst);
        if worst > chain_tol {
            self.chain_violations += 1;
        }

        // integrated form
        let mut uv = 0.0;
        let mut rw = 0.0;
        for i in 0..n {
            let ubar = 0.5 * (terms.u0[i] + terms.u1[i]);
            uv += ubar * terms.v[i];
            rw += terms.residual[i] * 0.5 * (self.w_prev[i] + w1[i]);
        }
        self.lhs_uv += dt * uv * vol;
        self.residual_mass += sum_of(&terms.residual) * vol;
        let weight = c * mean_f + mean_v;
        self.rhs_k += dt * weight * (self.reg.b * measure * (rec.after.t - self.t0) + s.u0_mass);
        self.clip_slack += (rw * vol).abs() + dt * weight.abs() * self.residual_mass.max(0.0);

        self.u_norm_last = integrate_values(g, &terms.u1.iter().zip(&w1).map(|(a, b)| a * b).collect::<Vec<_>>());
        self.w_prev = w1;
        Ok(())
    }
}

pub fn key_estimate_audit(traj: &Trajectory, reg: &UVRegistration) -> Result<EstimateAudit> {
    Ok(replay(traj, KeyEstimateAccumulator::new(reg.clone()))?.finish())
}

// ---------------------------------------------------------------- Pierre L²

/// `a ∫∫U² ≤ ‖∫A dt‖_∞ ∫(U⁰)²` with `A = V/U`, `a = min dᵢ`.
#[derive(Debug)]
pub struct PierreAccumulator {
    reg: UVRegistration,
    lap: Option<Laplacian>,
    grid: Option<Grid>,
    u0: Vec<f64>,
    floor: f64,
    d_min: f64,
    d_max: f64,
    a_int: Vec<f64>,
    clip_field: Vec<f64>,
    lhs: f64,
    a_min_seen: f64,
    a_max_seen: f64,
    a_violations: usize,
    inapplicable: Option<String>,
}

impl PierreAccumulator {
    pub fn new(reg: UVRegistration) -> Self {
        PierreAccumulator {
            reg,
            lap: None,
            grid: None,
            u0: Vec::new(),
            floor: 0.0,
            d_min: 0.0,
            d_max: 0.0,
            a_int: Vec::new(),
            clip_field: Vec::new(),
            lhs: 0.0,
            a_min_seen: f64::INFINITY,
            a_max_seen: f64::NEG_INFINITY,
            a_violations: 0,
            inapplicable: None,
        }
    }

    pub fn finish(self) -> EstimateAudit {
        const NAME: &str = "pierre_l2";
        if let Some(reason) = self.inapplicable {
            return EstimateAudit::inapplicable(NAME, reason);
        }
        let g = self.grid.expect("Pierre accumulator never started");
        let a_sup = self.a_int.iter().copied().fold(0.0, f64::max);
        let u0_sq = integrate_values(&g, &self.u0.iter().map(|v| v * v).collect::<Vec<_>>());
        let lifted: Vec<f64> = self.u0.iter().zip(&self.clip_field).map(|(u, c)| (u + c).powi(2)).collect();
        let rhs = a_sup * u0_sq;
        let slack = a_sup * integrate_values(&g, &lifted) - rhs;
        let lhs = self.d_min * self.lhs;
        let mut audit = EstimateAudit::inequality(NAME, lhs, rhs, default_tol(rhs) + slack.max(0.0))
            .with("a", self.d_min)
            .with("b", self.d_max)
            .with("A_min", self.a_min_seen)
            .with("A_max", self.a_max_seen)
            .with("sup_int_A", a_sup);
        if self.a_violations > 0 {
            audit.status = AuditStatus::Fail;
            audit.note = Some(format!("A left [a, b] in {} cells", self.a_violations));
        }
        audit
    }
}

impl StepObserver for PierreAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        if spec.reaction.mass_class() != MassClass::Dissipative {
            self.inapplicable = Some("needs the dissipative mass class".into());
        } else if spec.is_porous() {
            self.inapplicable = Some("stated for the semilinear system".into());
        }
        let g = state_grid(initial);
        self.grid = Some(g);
        self.lap = Some(Laplacian::new(&g));
        self.u0 = self.reg.u_of(initial);
        self.floor = 1e-14 * max_of(&self.u0).max(0.0);
        self.d_min = spec.d.iter().copied().fold(f64::INFINITY, f64::min);
        self.d_max = spec.d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.a_int = vec![0.0; g.cell_count()];
        self.clip_field = vec![0.0; g.cell_count()];
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        if self.inapplicable.is_some() {
            return Ok(());
        }
        let g = self.grid.expect("Pierre accumulator never started");
        let lap = self.lap.expect("Pierre accumulator never started");
        let terms = self.reg.terms(rec, &lap);
        let gmax = max_of(&terms.g);
        let gscale = terms.g.iter().fold(0.0f64, |m, v| m.max(v.abs())) + f64::MIN_POSITIVE;
        if gmax > 1e-12 * gscale {
            self.inapplicable = Some(format!("Σ aᵢfᵢ > 0 at step {}", rec.index));
            return Ok(());
        }
        let dt = rec.dt;
        let (lo, hi) = (self.d_min * (1.0 - 1e-14), self.d_max * (1.0 + 1e-14));
        let mut sq = 0.0;
        for c in 0..terms.u1.len() {
            let u = terms.u1[c];
            let a = if u > self.floor { terms.v[c] / u } else { self.d_min };
            if !(a >= lo && a <= hi) {
                self.a_violations += 1;
            }
            self.a_min_seen = self.a_min_seen.min(a);
            self.a_max_seen = self.a_max_seen.max(a);
            self.a_int[c] += dt * a;
            sq += u * u;
            self.clip_field[c] += terms.residual[c].max(0.0);
        }
        self.lhs += dt * sq * g.cell_volume();
        Ok(())
    }
}

pub fn pierre_l2_audit(traj: &Trajectory, reg: &UVRegistration) -> Result<EstimateAudit> {
    Ok(replay(traj, PierreAccumulator::new(reg.clone()))?.finish())
}

// ---------------------------------------------------------------- no-sign

/// Constant for the sign-free estimate on a grid: the largest ratio
/// `‖Φ‖₂ / (‖F‖₁ + ⟨V⟩)` over the probes `F = δ_y` (any cell `y`, `V = 0`)
/// and `V = const` (`F = 0`). Every admissible `(F, V)` is dominated by these
/// extremes, so the ratio bound holds for all of them.
pub fn no_sign_constant(grid: &Grid) -> Result<f64> {
    let dc = domain_constants(&grid.with_bc(Boundary::Neumann))?;
    Ok(dc.green_l2.max(grid.measure().sqrt()))
}

/// `a ∫∫U² ≤ C (∫[‖F‖₁ + ⟨V⟩]dt)² + ‖U⁰‖²_{H⁻¹}` for sign-changing `F`,
/// together with the companion bound `a ∫∫U² ≤ (C²/a) ∫[‖F‖₁ + ⟨V⟩]² dt
/// + ‖U⁰‖²_{H⁻¹}` that follows step by step on the grid.
#[derive(Debug)]
pub struct NoSignAccumulator {
    reg: UVRegistration,
    setup: Option<(Grid, Laplacian, PoissonSolver, f64)>,
    a: f64,
    u0_norm: f64,
    w_prev: Vec<f64>,
    lhs: f64,
    g_int: f64,
    g_sq_int: f64,
    observed_c: f64,
    inapplicable: Option<String>,
}

impl NoSignAccumulator {
    pub fn new(reg: UVRegistration) -> Self {
        NoSignAccumulator {
            reg,
            setup: None,
            a: 0.0,
            u0_norm: 0.0,
            w_prev: Vec::new(),
            lhs: 0.0,
            g_int: 0.0,
            g_sq_int: 0.0,
            observed_c: 0.0,
            inapplicable: None,
        }
    }

    pub fn finish(self) -> NoSignReport {
        if let Some(reason) = self.inapplicable {
            return NoSignReport {
                bound: EstimateAudit::inapplicable("no_sign", reason.clone()),
                companion: EstimateAudit::inapplicable("no_sign_companion", reason),
            };
        }
        let c = self.setup.as_ref().map_or(0.0, |s| s.3);
        let lhs = self.a * self.lhs;
        let rhs = c * self.g_int * self.g_int + self.u0_norm;
        let ratio = if self.g_int > 0.0 { lhs / (self.g_int * self.g_int) } else { 0.0 };
        let bound = EstimateAudit::inequality("no_sign", lhs, rhs, default_tol(rhs))
            .with("C", c)
            .with("a", self.a)
            .with("budget", self.g_int)
            .with("empirical_ratio", ratio)
            .with("observed_C", self.observed_c);
        let rhs2 = if self.a > 0.0 { c * c / self.a * self.g_sq_int + self.u0_norm } else { 0.0 };
        let companion = EstimateAudit::inequality("no_sign_companion", lhs, rhs2, default_tol(rhs2))
            .with("C", c)
            .with("a", self.a);
        NoSignReport { bound, companion }
    }
}

#[derive(Debug, Clone)]
pub struct NoSignReport {
    pub bound: EstimateAudit,
    pub companion: EstimateAudit,
}

impl StepObserver for NoSignAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        let grid = state_grid(initial);
        if spec.bc != Boundary::Neumann || spec.is_porous() {
            self.inapplicable = Some("needs the semilinear zero-flux system".into());
            return Ok(());
        }
        if grid.dim() > 3 {
            self.inapplicable = Some("dimension above 3".into());
            return Ok(());
        }
        let poisson = PoissonSolver::with_bc(&grid, Boundary::Neumann)?;
        let u0 = self.reg.u_of(initial);
        let w0 = poisson.solve_values(&u0)?;
        self.u0_norm = integrate_values(&grid, &u0.iter().zip(&w0).map(|(a, b)| a * b).collect::<Vec<_>>());
        self.w_prev = w0;
        self.a = spec.d.iter().copied().fold(f64::INFINITY, f64::min);
        let c = no_sign_constant(&grid)?;
        self.setup = Some((grid, Laplacian::new(&grid), poisson, c));
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        if self.inapplicable.is_some() {
            return Ok(());
        }
        let (grid, lap, poisson, _) = self.setup.as_ref().expect("no-sign accumulator never started");
        let terms = self.reg.terms(rec, lap);
        let n = grid.cell_count();
        let vol = grid.cell_volume();
        for c in 0..n {
            if terms.v[c] < self.a * terms.u1[c] * (1.0 - 1e-14) {
                self.inapplicable = Some(format!("V < aU at step {}", rec.index));
                return Ok(());
            }
        }
        let dt = rec.dt;
        let f_l1: f64 = terms.f.iter().map(|v| v.abs()).sum::<f64>() * vol;
        let r_l1: f64 = terms.residual.iter().map(|v| v.abs()).sum::<f64>() * vol;
        let mean_v = sum_of(&terms.v) / n as f64;
        let g = f_l1 + r_l1 / dt + mean_v;

        let w1 = poisson.solve_values(&terms.u1)?;
        let phi_sq: f64 = (0..n).map(|c| ((w1[c] - self.w_prev[c]) / dt + terms.v[c]).powi(2)).sum::<f64>() * vol;
        if g > 0.0 {
            self.observed_c = self.observed_c.max(phi_sq.sqrt() / g);
        }
        self.w_prev = w1;

        self.lhs += dt * terms.u1.iter().map(|u| u * u).sum::<f64>() * vol;
        self.g_int += dt * g;
        self.g_sq_int += dt * g * g;
        Ok(())
    }
}

pub fn no_sign_audit(traj: &Trajectory, reg: &UVRegistration) -> Result<NoSignReport> {
    Ok(replay(traj, NoSignAccumulator::new(reg.clone()))?.finish())
}

/// Given the no-sign LHS for forcings `0, F, 2F, 4F`, checks that doubling
/// the forcing at most quadruples the part of the LHS it adds.
pub fn no_sign_scaling_probe(lhs: [f64; 4]) -> EstimateAudit {
    let growth = [lhs[1] - lhs[0], lhs[2] - lhs[0], lhs[3] - lhs[0]];
    let ratio = |hi: f64, lo: f64| if lo.abs() > 0.0 { hi / lo } else if hi.abs() > 0.0 { f64::INFINITY } else { 0.0 };
    let worst = ratio(growth[1], growth[0]).max(ratio(growth[2], growth[1]));
    EstimateAudit::inequality("no_sign_scaling", worst, 4.0, 4e-6)
        .with("growth_F", growth[0])
        .with("growth_2F", growth[1])
        .with("growth_4F", growth[2])
}

// ---------------------------------------------------------------- conservation

/// Conservation of fixed linear combinations `∫ Σ wᵢuᵢ`.
#[derive(Debug)]
pub struct ConservationAccumulator {
    combos: Vec<Vec<f64>>,
    initial: Vec<f64>,
    worst: Vec<(f64, f64)>,
    clipped: Vec<f64>,
    applicable: bool,
}

impl ConservationAccumulator {
    pub fn new(combos: Vec<Vec<f64>>) -> Self {
        ConservationAccumulator { combos, initial: Vec::new(), worst: Vec::new(), clipped: Vec::new(), applicable: true }
    }

    fn value(combo: &[f64], s: &State) -> f64 {
        let g = s.grid();
        s.species().iter().zip(combo).map(|(f, w)| w * integrate_values(g, f.values())).sum()
    }

    pub fn finish(self) -> Vec<EstimateAudit> {
        self.combos
            .iter()
            .enumerate()
            .map(|(k, combo)| {
                let name = format!("conservation[{}]", fmt_weights(combo));
                if !self.applicable {
                    return EstimateAudit::inapplicable(name, "needs the semilinear zero-flux system");
                }
                let (lhs, rhs) = self.worst[k];
                let slack: f64 = combo.iter().zip(&self.clipped).map(|(w, c)| w.abs() * c).sum();
                EstimateAudit::identity(name, lhs, rhs, 1e-9 * rhs.abs() + slack)
            })
            .collect()
    }
}

fn fmt_weights(w: &[f64]) -> String {
    w.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

impl StepObserver for ConservationAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        self.applicable = spec.bc == Boundary::Neumann && !spec.is_porous();
        for c in &self.combos {
            if c.len() != spec.m() {
                return Err(Error::InvalidInput(format!("combo has {} weights, system has {} species", c.len(), spec.m())));
            }
        }
        self.initial = self.combos.iter().map(|c| Self::value(c, initial)).collect();
        self.worst = self.initial.iter().map(|&v| (v, v)).collect();
        self.clipped = vec![0.0; spec.m()];
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        for (c, x) in self.clipped.iter_mut().zip(rec.clipped) {
            *c += x;
        }
        for (k, combo) in self.combos.iter().enumerate() {
            let v = Self::value(combo, rec.after);
            if (v - self.initial[k]).abs() > (self.worst[k].0 - self.worst[k].1).abs() {
                self.worst[k] = (v, self.initial[k]);
            }
        }
        Ok(())
    }
}

pub fn conservation_audit(traj: &Trajectory, combos: &[Vec<f64>]) -> Result<Vec<EstimateAudit>> {
    Ok(replay(traj, ConservationAccumulator::new(combos.to_vec()))?.finish())
}

// ---------------------------------------------------------------- reaction budget

/// `Σ dt ∫|fᵢⁿ|` per species, the per-species balance identity
/// `∫uᵢ(T) + Σdt∫lossᵢ = ∫uᵢ⁰ + Σdt∫gainᵢ`, and (super-quadratic class) the
/// uniform-integrability probe on the worst small cell sets.
#[derive(Debug)]
pub struct ReactionBudgetAccumulator {
    grid: Option<Grid>,
    level: Option<TruncationLevel>,
    budget: Vec<f64>,
    gain: Vec<f64>,
    loss: Vec<f64>,
    source: Vec<f64>,
    clipped: Vec<f64>,
    mass0: Vec<f64>,
    mass_last: Vec<f64>,
    balance_applicable: bool,
    ui: Option<UiProbe>,
}

#[derive(Debug)]
struct UiProbe {
    c: f64,
    eps: f64,
    exponents: Vec<f64>,
    worst_ratio: f64,
    worst: (f64, f64),
}

pub const UI_FRACTIONS: [f64; 3] = [1e-1, 1e-2, 1e-3];

impl Default for ReactionBudgetAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl ReactionBudgetAccumulator {
    pub fn new() -> Self {
        ReactionBudgetAccumulator {
            grid: None,
            level: None,
            budget: Vec::new(),
            gain: Vec::new(),
            loss: Vec::new(),
            source: Vec::new(),
            clipped: Vec::new(),
            mass0: Vec::new(),
            mass_last: Vec::new(),
            balance_applicable: true,
            ui: None,
        }
    }

    pub fn finish(self) -> ReactionBudget {
        let mut audits: Vec<EstimateAudit> = self
            .budget
            .iter()
            .enumerate()
            .map(|(i, &b)| EstimateAudit::info(format!("reaction_l1[{i}]"), b))
            .collect();
        for i in 0..self.budget.len() {
            let name = format!("species_balance[{i}]");
            if !self.balance_applicable {
                audits.push(EstimateAudit::inapplicable(name, "boundary flux under Dirichlet"));
                continue;
            }
            let lhs = self.mass_last[i] + self.loss[i];
            let rhs = self.mass0[i] + self.gain[i] + self.source[i] + self.clipped[i];
            audits.push(EstimateAudit::identity(name, lhs, rhs, 1e-8 * lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)));
        }
        match &self.ui {
            Some(p) => {
                let audit = EstimateAudit::inequality("uniform_integrability", p.worst.0, p.worst.1, default_tol(p.worst.1))
                    .with("C", p.c)
                    .with("eps", p.eps)
                    .with("worst_ratio", p.worst_ratio);
                audits.push(audit);
            }
            None => audits.push(EstimateAudit::inapplicable("uniform_integrability", "needs the super-quadratic class")),
        }
        ReactionBudget {
            per_species: self.budget,
            level: self.level.map_or(f64::INFINITY, |l| l.value()),
            audits,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReactionBudget {
    pub per_species: Vec<f64>,
    pub level: f64,
    pub audits: Vec<EstimateAudit>,
}

impl StepObserver for ReactionBudgetAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        let g = state_grid(initial);
        let m = spec.m();
        self.grid = Some(g);
        self.budget = vec![0.0; m];
        self.gain = vec![0.0; m];
        self.loss = vec![0.0; m];
        self.source = vec![0.0; m];
        self.clipped = vec![0.0; m];
        self.mass0 = initial.species().iter().map(|f| integrate_values(&g, f.values())).collect();
        self.mass_last = self.mass0.clone();
        self.balance_applicable = spec.bc == Boundary::Neumann;
        if let GrowthClass::SuperQuadratic { c, eps, exponents } = spec.reaction.growth_class() {
            self.ui = Some(UiProbe { c: *c, eps: *eps, exponents: exponents.clone(), worst_ratio: -1.0, worst: (0.0, 0.0) });
        }
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        let g = self.grid.expect("budget accumulator never started");
        let vol = g.cell_volume();
        let n = g.cell_count();
        let m = rec.spec.m();
        let dt = rec.dt;
        self.level = Some(rec.level);
        let mut r = vec![0.0; m];
        let mut f = vec![0.0; m];
        let mut gain = vec![0.0; m];
        let mut loss = vec![0.0; m];
        for c in 0..n {
            for (ri, s) in r.iter_mut().zip(rec.before.species()) {
                *ri = s.values()[c];
            }
            rec.spec.reaction.eval_into(&r, &mut f);
            let k = rec.level.factor(&f);
            rec.spec.reaction.gain_loss_into(&r, &mut gain, &mut loss);
            for i in 0..m {
                self.gain[i] += dt * k * gain[i] * vol;
                self.loss[i] += dt * k * loss[i] * vol;
            }
        }
        for i in 0..m {
            self.budget[i] += dt * rec.reaction[i].iter().map(|v| v.abs()).sum::<f64>() * vol;
            if let Some(src) = rec.source {
                self.source[i] += dt * src[i].iter().sum::<f64>() * vol;
            }
            self.clipped[i] += rec.clipped[i];
        }
        self.mass_last = rec.after.species().iter().map(|f| integrate_values(&g, f.values())).collect();

        if let Some(p) = self.ui.as_mut() {
            let norms: Vec<f64> = rec
                .before
                .species()
                .iter()
                .zip(&p.exponents)
                .map(|(f, &mj)| f.values().iter().map(|v| v.powf(mj + 1.0)).sum::<f64>() * vol)
                .collect();
            for i in 0..m {
                let mut mags: Vec<f64> = rec.reaction[i].iter().map(|v| v.abs()).collect();
                mags.sort_by(|a, b| b.total_cmp(a));
                for &q in &UI_FRACTIONS {
                    let cells = ((q * n as f64).ceil() as usize).clamp(1, n);
                    let e = cells as f64 * vol;
                    let lhs: f64 = mags[..cells].iter().sum::<f64>() * vol;
                    let rhs = p.c
                        * (e + norms
                            .iter()
                            .zip(&p.exponents)
                            .map(|(&nj, &mj)| {
                                nj.powf((mj + 1.0 - p.eps) / (mj + 1.0)) * e.powf(p.eps / (mj + 1.0))
                            })
                            .sum::<f64>());
                    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
                    if ratio > p.worst_ratio {
                        p.worst_ratio = ratio;
                        p.worst = (lhs, rhs);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn reaction_l1_budget(traj: &Trajectory) -> Result<ReactionBudget> {
    Ok(replay(traj, ReactionBudgetAccumulator::new())?.finish())
}

/// Relative change `|x₂ - x₁| / max(|x₁|, |x₂|)` must stay below `limit`.
pub fn stability_audit(name: impl Into<String>, at_n: f64, at_2n: f64, limit: f64) -> EstimateAudit {
    let scale = at_n.abs().max(at_2n.abs());
    let change = if scale > 0.0 { (at_2n - at_n).abs() / scale } else { 0.0 };
    EstimateAudit::inequality(name, change, limit, 0.0).with("at_n", at_n).with("at_2n", at_2n)
}

/// Per-species budget stability between truncation levels `n` and `2n`.
pub fn budget_stability(at_n: &ReactionBudget, at_2n: &ReactionBudget) -> Vec<EstimateAudit> {
    at_n.per_species
        .iter()
        .zip(&at_2n.per_species)
        .enumerate()
        .map(|(i, (&a, &b))| stability_audit(format!("reaction_l1_stability[{i}]"), a, b, 0.1))
        .collect()
}

// ---------------------------------------------------------------- porous

/// (i) `Σ dt ∫V ≤ θ_∞ ‖U⁰‖₁` with `V = Σ aᵢdᵢuᵢ^{mᵢ}`;
/// (ii) `Σ dt ∫UV` and `‖uᵢ‖^{mᵢ+1}_{L^{mᵢ+1}(Q_T)}`;
/// (iii) `Σ dt ∫|∇_h uᵢ^{mᵢ}|^β` for the two reference exponents.
#[derive(Debug)]
pub struct PorousAccumulator {
    reg: UVRegistration,
    grid: Option<Grid>,
    lap: Option<Laplacian>,
    theta_inf: f64,
    u0_l1: f64,
    v_int: f64,
    uv_int: f64,
    lm: Vec<f64>,
    mexp: Vec<f64>,
    betas: Vec<[f64; 2]>,
    grad: Vec<[f64; 2]>,
    clip_weighted: f64,
    inapplicable: Option<String>,
}

impl PorousAccumulator {
    pub fn new(reg: UVRegistration) -> Self {
        PorousAccumulator {
            reg,
            grid: None,
            lap: None,
            theta_inf: 0.0,
            u0_l1: 0.0,
            v_int: 0.0,
            uv_int: 0.0,
            lm: Vec::new(),
            mexp: Vec::new(),
            betas: Vec::new(),
            grad: Vec::new(),
            clip_weighted: 0.0,
            inapplicable: None,
        }
    }

    pub fn finish(self) -> PorousBudgets {
        let mut audits = Vec::new();
        match &self.inapplicable {
            Some(reason) => audits.push(EstimateAudit::inapplicable("porous_theta", reason.clone())),
            None => {
                let rhs = self.theta_inf * self.u0_l1;
                audits.push(
                    EstimateAudit::inequality(
                        "porous_theta",
                        self.v_int,
                        rhs,
                        default_tol(rhs) + self.theta_inf * self.clip_weighted,
                    )
                    .with("theta_inf", self.theta_inf)
                    .with("U0_l1", self.u0_l1),
                );
            }
        }
        audits.push(EstimateAudit::info("porous_uv", self.uv_int));
        for (i, &v) in self.lm.iter().enumerate() {
            audits.push(EstimateAudit::info(format!("porous_lm[{i}]"), v).with("m", self.mexp[i]));
        }
        for (i, (b, v)) in self.betas.iter().zip(&self.grad).enumerate() {
            for k in 0..2 {
                audits.push(EstimateAudit::info(format!("porous_grad[{i}]"), v[k]).with("beta", b[k]));
            }
        }
        PorousBudgets { uv: self.uv_int, lm: self.lm, v_int: self.v_int, audits }
    }
}

#[derive(Debug, Clone)]
pub struct PorousBudgets {
    pub uv: f64,
    pub lm: Vec<f64>,
    pub v_int: f64,
    pub audits: Vec<EstimateAudit>,
}

/// Budget stability between truncation levels `n` and `2n`.
pub fn porous_stability(at_n: &PorousBudgets, at_2n: &PorousBudgets) -> Vec<EstimateAudit> {
    let mut out = vec![stability_audit("porous_uv_stability", at_n.uv, at_2n.uv, 0.1)];
    for (i, (&a, &b)) in at_n.lm.iter().zip(&at_2n.lm).enumerate() {
        out.push(stability_audit(format!("porous_lm_stability[{i}]"), a, b, 0.1));
    }
    out
}

impl StepObserver for PorousAccumulator {
    fn start(&mut self, initial: &State, spec: &SystemSpec) -> Result<()> {
        let g = state_grid(initial);
        if spec.bc != Boundary::Dirichlet {
            self.inapplicable = Some("needs zero Dirichlet data".into());
        } else if spec.reaction.mass_class() != MassClass::Dissipative {
            self.inapplicable = Some("needs the dissipative mass class".into());
        }
        self.grid = Some(g);
        self.lap = Some(Laplacian::new(&g));
        self.theta_inf = domain_constants(&g.with_bc(Boundary::Dirichlet))?.theta_inf;
        self.u0_l1 = integrate_values(&g, &self.reg.u_of(initial));
        self.mexp = spec.mexp.clone();
        self.lm = vec![0.0; spec.m()];
        self.grad = vec![[0.0; 2]; spec.m()];
        self.betas = spec.mexp.iter().map(|&m| [1.0, 1.0 + 1.0 / (2.0 * (1.0 + m * g.dim() as f64))]).collect();
        Ok(())
    }

    fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        let g = self.grid.expect("porous accumulator never started");
        let lap = self.lap.expect("porous accumulator never started");
        let vol = g.cell_volume();
        let dt = rec.dt;
        let spec = rec.spec;
        let u = self.reg.u_of(rec.before);
        let n = u.len();
        let mut v = vec![0.0; n];
        let mut g_sum = vec![0.0; n];
        for (i, f) in rec.before.species().iter().enumerate() {
            let m = spec.mexp[i];
            let w = self.reg.v_weights[i];
            let powered: Vec<f64> = f.values().iter().map(|&x| if m == 1.0 { x } else { x.powf(m) }).collect();
            for c in 0..n {
                v[c] += w * powered[c];
                g_sum[c] += self.reg.u_weights[i] * (rec.reaction[i][c] + rec.source.map_or(0.0, |s| s[i][c]));
            }
            self.lm[i] += dt * f.values().iter().map(|&x| x.powf(m + 1.0)).sum::<f64>() * vol;
            for k in 0..2 {
                self.grad[i][k] += dt * lap.gradient_power_integral(&powered, self.betas[i][k]);
            }
        }
        let gscale = g_sum.iter().fold(0.0f64, |m, x| m.max(x.abs())) + f64::MIN_POSITIVE;
        if self.inapplicable.is_none() && max_of(&g_sum) > 1e-12 * gscale {
            self.inapplicable = Some(format!("Σ aᵢfᵢ > 0 at step {}", rec.index));
        }
        self.v_int += dt * sum_of(&v) * vol;
        self.uv_int += dt * u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() * vol;
        self.clip_weighted += rec.clipped.iter().zip(&self.reg.u_weights).map(|(c, a)| a * c).sum::<f64>();
        Ok(())
    }
}

pub fn porous_audit(traj: &Trajectory, reg: &UVRegistration) -> Result<PorousBudgets> {
    Ok(replay(traj, PorousAccumulator::new(reg.clone()))?.finish())
}

// ---------------------------------------------------------------- convergence in n

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub n_list: Vec<f64>,
    /// `D_k = ‖u^{n_k} - u^{n_{k+1}}‖_{L¹(Q_T)}` over macro times.
    pub d: Vec<f64>,
    pub audit: EstimateAudit,
}

/// Runs one trajectory per truncation level (in parallel) and compares
/// consecutive levels in the discrete space-time L¹ norm at the macro times.
pub fn truncation_convergence_study(
    spec: &SystemSpec,
    u0: &State,
    controls: &StepControls,
    n_list: &[f64],
    source: Option<&Source>,
) -> Result<ConvergenceReport> {
    if n_list.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 truncation levels, got {}", n_list.len())));
    }
    if n_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("truncation levels must increase".into()));
    }
    let levels = n_list.iter().map(|&n| TruncationLevel::new(n)).collect::<Result<Vec<_>>>()?;
    let mut quiet = controls.clone();
    quiet.snapshot_stride = usize::MAX;
    let samples: Vec<Vec<State>> = levels
        .par_iter()
        .map(|&level| {
            let (_, start) = truncate(&spec.reaction, u0, level);
            let mut sampler = MacroSampler::default();
            run_observed(spec, level, source, &start, &quiet, &mut [&mut sampler])?;
            Ok(sampler.states)
        })
        .collect::<Result<_>>()?;
    let d: Vec<f64> = samples.windows(2).map(|w| space_time_l1(&w[0], &w[1])).collect();
    // last three pairs: D must not increase from one pair to the next
    let tail = &d[d.len().saturating_sub(3)..];
    let worst = tail
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else if w[1] > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    let mut audit = EstimateAudit::inequality("truncation_convergence", worst, 1.0, 1e-12).with("levels", n_list.len() as f64);
    for (k, v) in d.iter().enumerate() {
        audit.constants.insert(format!("D{k}"), *v);
    }
    Ok(ConvergenceReport { n_list: n_list.to_vec(), d, audit })
}

fn space_time_l1(a: &[State], b: &[State]) -> f64 {
    let mut total = 0.0;
    for k in 0..a.len().min(b.len()).saturating_sub(1) {
        let dt = a[k + 1].t - a[k].t;
        let g = a[k].grid();
        let diff: f64 = a[k]
            .species()
            .iter()
            .zip(b[k].species())
            .map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()).sum::<f64>())
            .sum();
        total += dt * diff * g.cell_volume();
    }
    total
}
