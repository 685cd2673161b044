//! Time stepping of the truncated systems.
//!
//! Semilinear systems use IMEX steps: the truncated reaction is explicit and
//! diffusion is a backward-Euler solve `(I - dt d_i Δ_h) u_i* = w_i`.
//! Porous-medium systems use an explicit conservative update of `u^m` with a
//! CFL bound. In both cases the step is shortened so that the explicit part
//! cannot drive a cell negative; if that bound falls under `min_dt` the step
//! proceeds at `min_dt` and the negative part is clipped and accounted.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::{Laplacian, SpdSolver};
use crate::error::{Error, Result};
use crate::grid::{integrate_values, Field, Grid, State};
use crate::systems::{ReactionSpec, SystemSpec, TruncatedReaction, TruncationLevel};

/// Extra forcing `s_i(t, x)` added to the right-hand side of species `i`.
pub type SourceFn = dyn Fn(usize, f64, [f64; 2]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct Source(Arc<SourceFn>);

impl Source {
    pub fn new(f: impl Fn(usize, f64, [f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Source(Arc::new(f))
    }

    pub fn eval(&self, species: usize, t: f64, x: [f64; 2]) -> f64 {
        (self.0)(species, t, x)
    }
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Source(..)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControls {
    /// Base step. Steps never cross multiples of `dt` ("macro" times).
    /// Optional only for porous systems, which then follow the CFL bound.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub t_end: f64,
    pub max_steps: usize,
    pub blowup_threshold: f64,
    /// Allowed cumulative clipped mass; `None` means `1e-10 ×` initial mass.
    pub clip_tolerance: Option<f64>,
    /// Smallest step taken before clipping takes over; `None` means
    /// `1e-8 × dt` (or `1e-12 × t_end` without a base step).
    pub min_dt: Option<f64>,
    pub snapshot_stride: usize,
}

pub const DEFAULT_CFL: f64 = 0.9;
pub const DEFAULT_MAX_STEPS: usize = 50_000_000;
pub const DEFAULT_BLOWUP: f64 = 1e12;
pub const DEFAULT_STRIDE: usize = 10;

impl StepControls {
    pub fn fixed(dt: f64, t_end: f64) -> Self {
        StepControls {
            dt: Some(dt),
            cfl: DEFAULT_CFL,
            t_end,
            max_steps: DEFAULT_MAX_STEPS,
            blowup_threshold: DEFAULT_BLOWUP,
            clip_tolerance: None,
            min_dt: None,
            snapshot_stride: DEFAULT_STRIDE,
        }
    }

    pub fn cfl_only(cfl: f64, t_end: f64) -> Self {
        StepControls { dt: None, cfl, ..Self::fixed(1.0, t_end) }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    pub fn with_blowup(mut self, threshold: f64) -> Self {
        self.blowup_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidInput(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be >= 0, got {}", self.t_end)));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::InvalidInput("blow-up threshold must be positive".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidInput("snapshot stride must be >= 1".into()));
        }
        if let Some(m) = self.min_dt {
            if !(m > 0.0) {
                return Err(Error::InvalidInput("min_dt must be positive".into()));
            }
        }
        Ok(())
    }

    fn base(&self) -> f64 {
        self.dt.unwrap_or(self.t_end)
    }

    /// `min_dt` with its default filled in.
    pub fn effective_min_dt(&self) -> f64 {
        self.min_dt.unwrap_or(match self.dt {
            Some(dt) => 1e-8 * dt,
            None => 1e-12 * self.t_end.max(1e-300),
        })
    }
}

/// Result of one step: the new state and the mass clipped per species.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: State,
    pub clipped: Vec<f64>,
}

/// Reusable stepper holding the factorized diffusion operators.
#[derive(Debug)]
pub struct Stepper<'a> {
    spec: &'a SystemSpec,
    reaction: TruncatedReaction<'a>,
    source: Option<&'a Source>,
    grid: Grid,
    lap: Laplacian,
    diag: Vec<f64>,
    centers: Vec<[f64; 2]>,
    cache: Vec<Vec<(u64, SpdSolver)>>,
}

const SOLVER_CACHE_PER_SPECIES: usize = 6;

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a SystemSpec, level: TruncationLevel, grid: &Grid) -> Result<Self> {
        if grid.bc() != spec.bc {
            return Err(Error::InvalidInput(format!(
                "grid boundary condition {} differs from the system's {}",
                grid.bc(),
                spec.bc
            )));
        }
        let lap = Laplacian::new(grid);
        Ok(Stepper {
            spec,
            reaction: TruncatedReaction::new(&spec.reaction, level),
            source: None,
            grid: *grid,
            diag: lap.diagonal(),
            lap,
            centers: grid.centers().collect(),
            cache: vec![Vec::new(); spec.m()],
        })
    }

    pub fn with_source(mut self, source: Option<&'a Source>) -> Self {
        self.source = source;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `fⁿ` at every cell, species-major.
    pub fn reactions(&self, state: &State) -> Vec<Vec<f64>> {
        let m = self.spec.m();
        let n = self.grid.cell_count();
        let mut out = vec![vec![0.0; n]; m];
        let mut r = vec![0.0; m];
        let mut f = vec![0.0; m];
        let species = state.species();
        for c in 0..n {
            for (ri, s) in r.iter_mut().zip(species) {
                *ri = s.values()[c];
            }
            self.reaction.eval_into(&r, &mut f);
            for (o, fi) in out.iter_mut().zip(&f) {
                o[c] = *fi;
            }
        }
        out
    }

    /// External forcing at time `t`, if any.
    pub fn sources(&self, t: f64) -> Option<Vec<Vec<f64>>> {
        self.source.map(|s| {
            (0..self.spec.m()).map(|i| self.centers.iter().map(|&x| s.eval(i, t, x)).collect()).collect()
        })
    }

    fn forcing(reaction: &[Vec<f64>], source: Option<&[Vec<f64>]>, i: usize, c: usize) -> f64 {
        reaction[i][c] + source.map_or(0.0, |s| s[i][c])
    }

    /// Largest step keeping the explicit update nonnegative in every cell.
    pub fn positivity_dt(&self, state: &State, reaction: &[Vec<f64>], source: Option<&[Vec<f64>]>) -> f64 {
        let porous = self.spec.is_porous();
        let mut bound = f64::INFINITY;
        for (i, field) in state.species().iter().enumerate() {
            let (d, m) = (self.spec.d[i], self.spec.mexp[i]);
            for (c, &u) in field.values().iter().enumerate() {
                let mut loss = (-Self::forcing(reaction, source, i, c)).max(0.0);
                if porous && d > 0.0 && u > 0.0 {
                    loss += d * self.diag[c] * u.powf(m);
                }
                if loss > 0.0 {
                    bound = bound.min(u / loss);
                }
            }
        }
        bound
    }

    /// Stability bound of the explicit porous update
    /// `cfl · h² / (2 · dim · d_i · m_i · (max u_i)^{m_i - 1})`.
    pub fn cfl_dt(&self, state: &State, cfl: f64) -> f64 {
        if !self.spec.is_porous() {
            return f64::INFINITY;
        }
        let h = self.grid.h().into_iter().fold(f64::INFINITY, f64::min);
        let dim = self.grid.dim() as f64;
        let mut bound = f64::INFINITY;
        for (i, field) in state.species().iter().enumerate() {
            let (d, m) = (self.spec.d[i], self.spec.mexp[i]);
            let umax = field.max();
            let speed = d * m * if m == 1.0 { 1.0 } else { umax.powf(m - 1.0) };
            if speed > 0.0 {
                bound = bound.min(cfl * h * h / (2.0 * dim * speed));
            }
        }
        bound
    }

    fn solver(&mut self, species: usize, coef: f64) -> Result<&SpdSolver> {
        let key = coef.to_bits();
        let cache = &mut self.cache[species];
        if let Some(pos) = cache.iter().position(|(k, _)| *k == key) {
            return Ok(&cache[pos].1);
        }
        if cache.len() >= SOLVER_CACHE_PER_SPECIES {
            cache.remove(0);
        }
        cache.push((key, SpdSolver::new(self.lap, 1.0, coef)?));
        Ok(&cache.last().expect("just pushed").1)
    }

    /// One step of length `dt` from `state`, with `reaction` (and `source`)
    /// evaluated at `state`.
    pub fn step(
        &mut self,
        state: &State,
        dt: f64,
        reaction: &[Vec<f64>],
        source: Option<&[Vec<f64>]>,
    ) -> Result<StepOutcome> {
        let vol = self.grid.cell_volume();
        let porous = self.spec.is_porous();
        let mut species = Vec::with_capacity(self.spec.m());
        let mut clipped = vec![0.0; self.spec.m()];
        for (i, field) in state.species().iter().enumerate() {
            let u = field.values();
            let d = self.spec.d[i];
            let mut w: Vec<f64> = (0..u.len()).map(|c| u[c] + dt * Self::forcing(reaction, source, i, c)).collect();
            if porous {
                let m = self.spec.mexp[i];
                if d > 0.0 {
                    let um: Vec<f64> = u.iter().map(|&v| if m == 1.0 { v } else { v.powf(m) }).collect();
                    let mut lap = vec![0.0; u.len()];
                    self.lap.apply(&um, &mut lap);
                    for (wc, l) in w.iter_mut().zip(&lap) {
                        *wc += dt * d * l;
                    }
                }
                clipped[i] += clip(&mut w) * vol;
            } else {
                clipped[i] += clip(&mut w) * vol;
                if d > 0.0 {
                    self.solver(i, dt * d)?.solve_in_place(&mut w)?;
                    clipped[i] += clip(&mut w) * vol;
                }
            }
            species.push(Field::from_vec_unchecked(self.grid, w));
        }
        Ok(StepOutcome { state: State::new(state.t + dt, species)?, clipped })
    }
}

/// Sets negative entries to zero, returning the removed amount `Σ(-v)`.
fn clip(v: &mut [f64]) -> f64 {
    let mut removed = 0.0;
    for x in v.iter_mut() {
        if *x < 0.0 {
            removed -= *x;
            *x = 0.0;
        }
    }
    removed
}

fn check_admissible(spec: &SystemSpec, state: &State) -> Result<()> {
    if state.len() != spec.m() {
        return Err(Error::InvalidInput(format!("state has {} species, system has {}", state.len(), spec.m())));
    }
    if !state.is_nonnegative() {
        return Err(Error::InvalidInput("state has negative values".into()));
    }
    Ok(())
}

/// One IMEX step of a semilinear system.
pub fn step_semilinear(state: &State, spec: &SystemSpec, n: TruncationLevel, dt: f64) -> Result<StepOutcome> {
    if spec.is_porous() {
        return Err(Error::InvalidInput("step_semilinear needs all exponents equal to 1".into()));
    }
    check_admissible(spec, state)?;
    let mut stepper = Stepper::new(spec, n, state.grid())?;
    let r = stepper.reactions(state);
    stepper.step(state, dt, &r, None)
}

/// One explicit step of a porous-medium system.
pub fn step_porous(state: &State, spec: &SystemSpec, n: TruncationLevel, dt: f64) -> Result<StepOutcome> {
    if !spec.is_porous() {
        return Err(Error::InvalidInput("step_porous needs some exponent above 1".into()));
    }
    check_admissible(spec, state)?;
    let mut stepper = Stepper::new(spec, n, state.grid())?;
    let r = stepper.reactions(state);
    stepper.step(state, dt, &r, None)
}

/// Data handed to observers after every step.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub index: usize,
    /// Time at the start of the step.
    pub t: f64,
    pub dt: f64,
    pub before: &'a State,
    pub after: &'a State,
    /// `fⁿ` evaluated at `before`.
    pub reaction: &'a [Vec<f64>],
    /// External forcing evaluated at `before.t`.
    pub source: Option<&'a [Vec<f64>]>,
    /// Mass clipped in this step, per species.
    pub clipped: &'a [f64],
    /// Whether `after.t` is a multiple of the base step (or the horizon).
    pub macro_boundary: bool,
    pub spec: &'a SystemSpec,
    pub level: TruncationLevel,
}

/// Incremental consumer of a run (audits that need every step).
pub trait StepObserver {
    fn start(&mut self, _initial: &State, _spec: &SystemSpec) -> Result<()> {
        Ok(())
    }
    fn observe(&mut self, record: &StepRecord<'_>) -> Result<()>;
}

/// Collects the initial state and the states at macro times.
#[derive(Debug, Default, Clone)]
pub struct MacroSampler {
    pub states: Vec<State>,
}

impl StepObserver for MacroSampler {
    fn start(&mut self, initial: &State, _spec: &SystemSpec) -> Result<()> {
        self.states.clear();
        self.states.push(initial.clone());
        Ok(())
    }

    fn observe(&mut self, record: &StepRecord<'_>) -> Result<()> {
        if record.macro_boundary {
            self.states.push(record.after.clone());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesDiagnostics {
    pub mass: f64,
    pub l2: f64,
    pub min: f64,
    pub max: f64,
    /// `∫ fᵢⁿ` at this state.
    pub f_int: f64,
    /// `∫ |fᵢⁿ|` at this state.
    pub f_l1: f64,
    /// Cumulative clipped mass.
    pub clipped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    /// Length of the step that produced this state (0 for the initial one).
    pub dt: f64,
    pub macro_boundary: bool,
    pub species: Vec<SpeciesDiagnostics>,
    /// `∫ Σ aᵢ uᵢ`.
    pub weighted_mass: f64,
    /// `⟨F⟩` with `F = -Σ aᵢ (fᵢⁿ + sᵢ)`.
    pub mean_deficit: f64,
    /// Left-endpoint `Σ dt ∫ U V` up to this state, `U = Σ aᵢuᵢ`,
    /// `V = Σ aᵢdᵢuᵢ^{mᵢ}`.
    pub uv_cumulative: f64,
    pub clipped_total: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: SystemSpec,
    pub level: TruncationLevel,
    pub source: Option<Source>,
    pub controls: StepControls,
    /// Snapshots every `snapshot_stride` steps, plus the final state.
    pub states: Vec<State>,
    pub snapshot_steps: Vec<usize>,
    /// One entry per state reached (initial state included).
    pub diagnostics: Vec<Diagnostics>,
    pub clip_budget: f64,
    pub clip_budget_exceeded: bool,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.diagnostics.len() - 1
    }

    pub fn initial_state(&self) -> &State {
        &self.states[0]
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory holds at least one state")
    }

    pub fn grid(&self) -> &Grid {
        self.initial_state().grid()
    }

    pub fn clipped_total(&self) -> f64 {
        self.diagnostics.last().map_or(0.0, |d| d.clipped_total)
    }

    /// Smallest step taken (0 for a run without steps).
    pub fn min_dt(&self) -> f64 {
        self.diagnostics.iter().skip(1).map(|d| d.dt).fold(f64::INFINITY, f64::min).min(self.controls.t_end)
    }

    /// True when every step's state was kept (`snapshot_stride = 1`).
    pub fn has_every_step(&self) -> bool {
        self.states.len() == self.diagnostics.len()
    }

    /// Feeds the stored steps to observers, recomputing the reaction values
    /// exactly as the run did. Needs `has_every_step()`.
    pub fn replay(&self, observers: &mut [&mut dyn StepObserver]) -> Result<()> {
        if !self.has_every_step() {
            return Err(Error::InvalidInput(
                "trajectory keeps only strided snapshots; rerun with stride 1 or attach observers".into(),
            ));
        }
        let stepper = Stepper::new(&self.spec, self.level, self.grid())?.with_source(self.source.as_ref());
        for o in observers.iter_mut() {
            o.start(self.initial_state(), &self.spec)?;
        }
        for k in 0..self.steps() {
            let (before, after) = (&self.states[k], &self.states[k + 1]);
            let reaction = stepper.reactions(before);
            let source = stepper.sources(before.t);
            let clipped: Vec<f64> = self.diagnostics[k + 1]
                .species
                .iter()
                .zip(&self.diagnostics[k].species)
                .map(|(b, a)| b.clipped - a.clipped)
                .collect();
            let rec = StepRecord {
                index: k,
                t: before.t,
                dt: self.diagnostics[k + 1].dt,
                before,
                after,
                reaction: &reaction,
                source: source.as_deref(),
                clipped: &clipped,
                macro_boundary: self.diagnostics[k + 1].macro_boundary,
                spec: &self.spec,
                level: self.level,
            };
            for o in observers.iter_mut() {
                o.observe(&rec)?;
            }
        }
        Ok(())
    }
}

fn weighted_uv(spec: &SystemSpec, state: &State) -> f64 {
    let grid = state.grid();
    let a = spec.reaction.mass_weights();
    let n = grid.cell_count();
    let mut acc = 0.0;
    for c in 0..n {
        let (mut u, mut v) = (0.0, 0.0);
        for (i, f) in state.species().iter().enumerate() {
            let x = f.values()[c];
            u += a[i] * x;
            v += a[i] * spec.d[i] * if spec.mexp[i] == 1.0 { x } else { x.powf(spec.mexp[i]) };
        }
        acc += u * v;
    }
    acc * grid.cell_volume()
}

fn diagnostics_for(
    spec: &SystemSpec,
    state: &State,
    reaction: &[Vec<f64>],
    source: Option<&[Vec<f64>]>,
    step: usize,
    dt: f64,
    macro_boundary: bool,
    clipped: &[f64],
    uv_cumulative: f64,
) -> Diagnostics {
    let grid = state.grid();
    let a = spec.reaction.mass_weights();
    let species: Vec<SpeciesDiagnostics> = state
        .species()
        .iter()
        .zip(reaction)
        .zip(clipped)
        .map(|((f, r), &c)| {
            let v = f.values();
            SpeciesDiagnostics {
                mass: integrate_values(grid, v),
                l2: (v.iter().map(|x| x * x).sum::<f64>() * grid.cell_volume()).sqrt(),
                min: f.min(),
                max: f.max(),
                f_int: integrate_values(grid, r),
                f_l1: r.iter().map(|x| x.abs()).sum::<f64>() * grid.cell_volume(),
                clipped: c,
            }
        })
        .collect();
    let weighted_mass = species.iter().zip(a).map(|(s, a)| a * s.mass).sum();
    let mut deficit = -species.iter().zip(a).map(|(s, a)| a * s.f_int).sum::<f64>();
    if let Some(src) = source {
        deficit -= src.iter().zip(a).map(|(s, a)| a * integrate_values(grid, s)).sum::<f64>();
    }
    Diagnostics {
        step,
        t: state.t,
        dt,
        macro_boundary,
        species,
        weighted_mass,
        mean_deficit: deficit / grid.measure(),
        uv_cumulative,
        clipped_total: clipped.iter().sum(),
    }
}

/// Runs to the horizon without observers.
pub fn run(spec: &SystemSpec, n: TruncationLevel, u0: &State, controls: &StepControls) -> Result<Trajectory> {
    run_observed(spec, n, None, u0, controls, &mut [])
}

/// Runs to the horizon, feeding every step to `observers`.
pub fn run_observed(
    spec: &SystemSpec,
    n: TruncationLevel,
    source: Option<&Source>,
    u0: &State,
    controls: &StepControls,
    observers: &mut [&mut dyn StepObserver],
) -> Result<Trajectory> {
    controls.validate()?;
    check_admissible(spec, u0)?;
    if controls.dt.is_none() && !spec.is_porous() {
        return Err(Error::InvalidInput("semilinear runs need a base step dt".into()));
    }
    let mut stepper = Stepper::new(spec, n, u0.grid())?.with_source(source);
    let grid = *u0.grid();
    let base = controls.base();
    let min_dt = controls.effective_min_dt();
    let t0 = u0.t;
    let t_end = t0 + controls.t_end;

    let initial_mass: f64 = u0.species().iter().map(|f| integrate_values(&grid, f.values())).sum();
    let clip_budget = controls.clip_tolerance.unwrap_or(1e-10 * initial_mass);

    for o in observers.iter_mut() {
        o.start(u0, spec)?;
    }
    let mut state = u0.clone();
    let mut reaction = stepper.reactions(&state);
    let mut src = stepper.sources(state.t);
    let mut clipped_cum = vec![0.0; spec.m()];
    let mut uv = 0.0;
    let mut diagnostics =
        vec![diagnostics_for(spec, &state, &reaction, src.as_deref(), 0, 0.0, true, &clipped_cum, uv)];
    let mut states = vec![state.clone()];
    let mut snapshot_steps = vec![0];
    let mut macro_index: u64 = 0;
    let mut step = 0usize;

    while state.t < t_end {
        if step >= controls.max_steps {
            return Err(Error::StepLimit { steps: step, t: state.t });
        }
        let boundary = (t0 + (macro_index + 1) as f64 * base).min(t_end);
        let gap = boundary - state.t;
        let cfl = stepper.cfl_dt(&state, controls.cfl);
        if cfl < min_dt {
            return Err(Error::StepCollapse { step, t: state.t, dt: cfl });
        }
        let positivity = stepper.positivity_dt(&state, &reaction, src.as_deref());
        let mut dt = gap.min(cfl).min(positivity.max(min_dt));
        let mut hit = false;
        if gap - dt <= 1e-10 * base {
            dt = gap;
            hit = true;
        }
        let outcome = stepper.step(&state, dt, &reaction, src.as_deref())?;
        let mut next = outcome.state;
        next.t = if hit { boundary } else { state.t + dt };
        if hit {
            macro_index += 1;
        }
        step += 1;
        for (i, f) in next.species().iter().enumerate() {
            let worst = f.values().iter().copied().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
            if !(worst <= controls.blowup_threshold) {
                return Err(Error::BlowUp { step, t: next.t, species: i, value: worst });
            }
        }
        for (c, o) in clipped_cum.iter_mut().zip(&outcome.clipped) {
            *c += o;
        }
        uv += dt * weighted_uv(spec, &state);

        let next_reaction = stepper.reactions(&next);
        let next_src = stepper.sources(next.t);
        let rec = StepRecord {
            index: step - 1,
            t: state.t,
            dt,
            before: &state,
            after: &next,
            reaction: &reaction,
            source: src.as_deref(),
            clipped: &outcome.clipped,
            macro_boundary: hit,
            spec,
            level: n,
        };
        for o in observers.iter_mut() {
            o.observe(&rec)?;
        }
        diagnostics.push(diagnostics_for(
            spec,
            &next,
            &next_reaction,
            next_src.as_deref(),
            step,
            dt,
            hit,
            &clipped_cum,
            uv,
        ));
        state = next;
        reaction = next_reaction;
        src = next_src;
        if step % controls.snapshot_stride == 0 || state.t >= t_end {
            states.push(state.clone());
            snapshot_steps.push(step);
        }
    }
    let clipped_total: f64 = clipped_cum.iter().sum();
    Ok(Trajectory {
        spec: spec.clone(),
        level: n,
        source: source.cloned(),
        controls: controls.clone(),
        states,
        snapshot_steps,
        diagnostics,
        clip_budget,
        clip_budget_exceeded: clipped_total > clip_budget,
    })
}

/// Classical RK4 for `dr/dt = f(r)` with `substeps >= 10⁴` equal steps.
/// Independent of the PDE stepper; used as a test oracle.
pub fn reaction_ode_oracle(spec: &ReactionSpec, r0: &[f64], t_end: f64, substeps: usize) -> Result<Vec<f64>> {
    if r0.len() != spec.m() || r0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("oracle needs a nonnegative vector with one entry per species".into()));
    }
    if substeps < 10_000 {
        return Err(Error::InvalidInput(format!("oracle needs at least 10^4 substeps, got {substeps}")));
    }
    let m = spec.m();
    let h = t_end / substeps as f64;
    let mut r = r0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    for s in 0..substeps {
        spec.eval_into(&r, &mut k1);
        for j in 0..m {
            tmp[j] = r[j] + 0.5 * h * k1[j];
        }
        spec.eval_into(&tmp, &mut k2);
        for j in 0..m {
            tmp[j] = r[j] + 0.5 * h * k2[j];
        }
        spec.eval_into(&tmp, &mut k3);
        for j in 0..m {
            tmp[j] = r[j] + h * k3[j];
        }
        spec.eval_into(&tmp, &mut k4);
        for j in 0..m {
            r[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if let Some(i) = r.iter().position(|v| !(v.abs() <= DEFAULT_BLOWUP)) {
            return Err(Error::BlowUp { step: s + 1, t: (s + 1) as f64 * h, species: i, value: r[i] });
        }
    }
    Ok(r)
}
