//! Reaction catalogue, the structural assumptions as sampled predicates, and
//! the truncation used to build bounded approximate systems.
//!
//! Every reaction kind is compiled to per-species lists of monomials
//! `c · Π r_j^{p_j}`, which gives one evaluation path, a natural gain/loss
//! split (positive vs negative coefficients), and a symbolic check of mass
//! identities by collecting like monomials.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Field, State};

/// `coef · Π r_j^{p_j}` over the listed `(species, exponent)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    #[serde(default)]
    pub powers: Vec<(usize, f64)>,
}

impl Monomial {
    pub fn new(coef: f64, powers: &[(usize, f64)]) -> Self {
        let mut powers: Vec<(usize, f64)> = powers.iter().copied().filter(|&(_, p)| p != 0.0).collect();
        powers.sort_by(|a, b| a.0.cmp(&b.0));
        Monomial { coef, powers }
    }

    pub fn constant(coef: f64) -> Self {
        Monomial { coef, powers: Vec::new() }
    }

    #[inline]
    pub fn eval(&self, r: &[f64]) -> f64 {
        let mut v = self.coef;
        for &(j, p) in &self.powers {
            v *= pow(r[j], p);
        }
        v
    }

    pub fn degree(&self) -> f64 {
        self.powers.iter().map(|&(_, p)| p).sum()
    }
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReactionKind {
    /// `αU₁ + βU₂ ⇌ γU₃` mass action.
    SAlphaBetaGamma { alpha: f64, beta: f64, gamma: f64 },
    /// `αU₁ + βU₂ ⇌ γU₃ + δU₄` mass action.
    SAlphaBetaGammaDelta { alpha: f64, beta: f64, gamma: f64, delta: f64 },
    /// `f_i = (e_i + Σ_j A_ij u_j) u_i`.
    LotkaVolterra { e: Vec<f64>, a: Vec<Vec<f64>> },
    /// User-supplied monomial lists, one per species.
    CustomPolynomial { terms: Vec<Vec<Monomial>> },
}

/// How a positive combination of the reactions is controlled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MassClass {
    /// `Σ a_i f_i ≤ 0`.
    Dissipative,
    /// `Σ a_i f_i ≤ C₀ (1 + Σ r_i)`.
    LinearGrowth { c0: f64 },
}

impl MassClass {
    pub fn c0(&self) -> f64 {
        match *self {
            MassClass::Dissipative => 0.0,
            MassClass::LinearGrowth { c0 } => c0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GrowthClass {
    /// `|f_i(r)| ≤ C (1 + Σ r_j²)`.
    Quadratic { c: f64 },
    /// `|f_i(r)| ≤ C (1 + Σ r_j^{m_j + 1 - ε})`.
    SuperQuadratic { c: f64, eps: f64, exponents: Vec<f64> },
    /// No growth bound declared.
    Unspecified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    kind: ReactionKind,
    a: Vec<f64>,
    mass_class: MassClass,
    growth_class: GrowthClass,
    terms: Vec<Vec<Monomial>>,
}

fn check_stoich(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 1.0) {
        return Err(Error::InvalidInput(format!("{name} must be >= 1, got {v}")));
    }
    Ok(())
}

/// `max_i Σ_terms |coef|` is a valid (QG) constant whenever every monomial
/// has total degree at most 2: `Π r_j^{p_j} ≤ Σ (p_j/p) r_j^p ≤ 1 + Σ r_j²`.
fn quadratic_constant(terms: &[Vec<Monomial>]) -> Option<f64> {
    if terms.iter().flatten().any(|t| t.degree() > 2.0) {
        return None;
    }
    Some(terms.iter().map(|ts| ts.iter().map(|t| t.coef.abs()).sum::<f64>()).fold(0.0, f64::max))
}

impl ReactionSpec {
    pub fn s_alpha_beta_gamma(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        check_stoich("alpha", alpha)?;
        check_stoich("beta", beta)?;
        check_stoich("gamma", gamma)?;
        // forward Y = u1^α u2^β, backward X = u3^γ
        let y = [(0, alpha), (1, beta)];
        let x = [(2, gamma)];
        let terms = vec![
            vec![Monomial::new(alpha, &x), Monomial::new(-alpha, &y)],
            vec![Monomial::new(beta, &x), Monomial::new(-beta, &y)],
            vec![Monomial::new(gamma, &y), Monomial::new(-gamma, &x)],
        ];
        let growth = quadratic_constant(&terms).map_or(GrowthClass::Unspecified, |c| GrowthClass::Quadratic { c });
        Ok(ReactionSpec {
            kind: ReactionKind::SAlphaBetaGamma { alpha, beta, gamma },
            a: vec![gamma, gamma, alpha + beta],
            mass_class: MassClass::Dissipative,
            growth_class: growth,
            terms,
        })
    }

    pub fn s_alpha_beta_gamma_delta(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        check_stoich("alpha", alpha)?;
        check_stoich("beta", beta)?;
        check_stoich("gamma", gamma)?;
        check_stoich("delta", delta)?;
        let y = [(0, alpha), (1, beta)];
        let x = [(2, gamma), (3, delta)];
        let terms = vec![
            vec![Monomial::new(alpha, &x), Monomial::new(-alpha, &y)],
            vec![Monomial::new(beta, &x), Monomial::new(-beta, &y)],
            vec![Monomial::new(gamma, &y), Monomial::new(-gamma, &x)],
            vec![Monomial::new(delta, &y), Monomial::new(-delta, &x)],
        ];
        let growth = quadratic_constant(&terms).map_or(GrowthClass::Unspecified, |c| GrowthClass::Quadratic { c });
        Ok(ReactionSpec {
            kind: ReactionKind::SAlphaBetaGammaDelta { alpha, beta, gamma, delta },
            a: vec![gamma, delta, alpha, beta],
            mass_class: MassClass::Dissipative,
            growth_class: growth,
            terms,
        })
    }

    /// Lotka-Volterra with `e ≤ 0` and `(A + Aᵀ)/2` negative semidefinite,
    /// which makes `Σ f_i ≤ 0` with unit mass weights.
    pub fn lotka_volterra(e: Vec<f64>, a: Vec<Vec<f64>>) -> Result<Self> {
        let m = e.len();
        if m == 0 || a.len() != m || a.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidInput("Lotka-Volterra needs e of length m and an m×m matrix".into()));
        }
        if let Some(i) = e.iter().position(|&ei| !(ei <= 0.0)) {
            return Err(Error::InvalidInput(format!("Lotka-Volterra e[{i}] must be <= 0")));
        }
        let lam = max_symmetric_eigenvalue(&a);
        if lam > LV_EIGEN_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "symmetric part of the interaction matrix has positive eigenvalue {lam:e}"
            )));
        }
        let terms = (0..m)
            .map(|i| {
                let mut ts = Vec::new();
                if e[i] != 0.0 {
                    ts.push(Monomial::new(e[i], &[(i, 1.0)]));
                }
                for (j, &aij) in a[i].iter().enumerate() {
                    if aij != 0.0 {
                        let powers = if i == j { vec![(i, 2.0)] } else { vec![(i, 1.0), (j, 1.0)] };
                        ts.push(Monomial::new(aij, &powers));
                    }
                }
                ts
            })
            .collect::<Vec<_>>();
        let growth = quadratic_constant(&terms).map_or(GrowthClass::Unspecified, |c| GrowthClass::Quadratic { c });
        Ok(ReactionSpec {
            kind: ReactionKind::LotkaVolterra { e, a },
            a: vec![1.0; m],
            mass_class: MassClass::Dissipative,
            growth_class: growth,
            terms,
        })
    }

    /// Custom polynomial reaction with declared mass vector and classes.
    /// Declarations are not trusted; see [`verify_assumptions`].
    pub fn custom(
        terms: Vec<Vec<Monomial>>,
        a: Vec<f64>,
        mass_class: MassClass,
        growth_class: GrowthClass,
    ) -> Result<Self> {
        let m = terms.len();
        if m == 0 {
            return Err(Error::InvalidInput("custom reaction needs at least one species".into()));
        }
        if a.len() != m {
            return Err(Error::InvalidInput(format!("mass vector has {} entries, expected {m}", a.len())));
        }
        for t in terms.iter().flatten() {
            if !t.coef.is_finite() {
                return Err(Error::InvalidInput("non-finite monomial coefficient".into()));
            }
            for &(j, p) in &t.powers {
                if j >= m || !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidInput(format!("bad monomial factor r_{j}^{p}")));
                }
            }
        }
        let terms: Vec<Vec<Monomial>> =
            terms.into_iter().map(|ts| ts.into_iter().map(|t| Monomial::new(t.coef, &t.powers)).collect()).collect();
        let spec = ReactionSpec { kind: ReactionKind::CustomPolynomial { terms: terms.clone() }, a, mass_class, growth_class, terms };
        spec.validate_declarations()?;
        Ok(spec)
    }

    /// `m` species without reactions (pure diffusion).
    pub fn inert(m: usize) -> Result<Self> {
        Self::custom(vec![Vec::new(); m], vec![1.0; m], MassClass::Dissipative, GrowthClass::Quadratic { c: 0.0 })
    }

    fn validate_declarations(&self) -> Result<()> {
        if let Some(i) = self.a.iter().position(|&ai| !(ai.is_finite() && ai > 0.0)) {
            return Err(Error::InvalidInput(format!("mass weight a[{i}] must be positive")));
        }
        if let MassClass::LinearGrowth { c0 } = self.mass_class {
            if !(c0.is_finite() && c0 >= 0.0) {
                return Err(Error::InvalidInput(format!("C0 must be >= 0, got {c0}")));
            }
        }
        match &self.growth_class {
            GrowthClass::Quadratic { c } if !(c.is_finite() && *c >= 0.0) => {
                Err(Error::InvalidInput(format!("growth constant must be >= 0, got {c}")))
            }
            GrowthClass::SuperQuadratic { c, eps, exponents } => {
                if !(c.is_finite() && *c >= 0.0 && eps.is_finite() && *eps > 0.0) {
                    return Err(Error::InvalidInput("super-quadratic class needs C >= 0 and eps > 0".into()));
                }
                if exponents.len() != self.m() {
                    return Err(Error::InvalidInput("super-quadratic exponents must have one entry per species".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Overrides the mass class (e.g. to audit a built-in under (M')).
    pub fn with_mass_class(mut self, mass_class: MassClass) -> Result<Self> {
        self.mass_class = mass_class;
        self.validate_declarations()?;
        Ok(self)
    }

    pub fn with_growth_class(mut self, growth_class: GrowthClass) -> Result<Self> {
        self.growth_class = growth_class;
        self.validate_declarations()?;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.terms.len()
    }

    pub fn kind(&self) -> &ReactionKind {
        &self.kind
    }

    pub fn mass_weights(&self) -> &[f64] {
        &self.a
    }

    pub fn mass_class(&self) -> MassClass {
        self.mass_class
    }

    pub fn growth_class(&self) -> &GrowthClass {
        &self.growth_class
    }

    pub fn terms(&self) -> &[Vec<Monomial>] {
        &self.terms
    }

    /// Conserved linear combinations implied by the stoichiometry.
    pub fn conservation_combos(&self) -> Vec<Vec<f64>> {
        match self.kind {
            ReactionKind::SAlphaBetaGamma { alpha, beta, gamma } => {
                vec![vec![gamma, 0.0, alpha], vec![0.0, gamma, beta]]
            }
            ReactionKind::SAlphaBetaGammaDelta { alpha, beta, gamma, delta } => {
                vec![vec![gamma, 0.0, alpha, 0.0], vec![0.0, delta, 0.0, beta]]
            }
            _ => Vec::new(),
        }
    }

    /// Unchecked evaluation of `f(r)` into `out`.
    #[inline]
    pub fn eval_into(&self, r: &[f64], out: &mut [f64]) {
        for (o, ts) in out.iter_mut().zip(&self.terms) {
            *o = ts.iter().map(|t| t.eval(r)).sum();
        }
    }

    /// Splits `f_i = gain_i - loss_i` by coefficient sign.
    #[inline]
    pub fn gain_loss_into(&self, r: &[f64], gain: &mut [f64], loss: &mut [f64]) {
        for (i, ts) in self.terms.iter().enumerate() {
            let (mut g, mut l) = (0.0, 0.0);
            for t in ts {
                let v = t.eval(r);
                if t.coef >= 0.0 {
                    g += v;
                } else {
                    l -= v;
                }
            }
            gain[i] = g;
            loss[i] = l;
        }
    }

    /// `Σ_i w_i f_i` as a collected polynomial (like monomials merged).
    pub fn combined_polynomial(&self, w: &[f64]) -> Vec<Monomial> {
        let mut out: Vec<Monomial> = Vec::new();
        for (ts, &wi) in self.terms.iter().zip(w) {
            for t in ts {
                match out.iter_mut().find(|o| o.powers == t.powers) {
                    Some(o) => o.coef += wi * t.coef,
                    None => out.push(Monomial { coef: wi * t.coef, powers: t.powers.clone() }),
                }
            }
        }
        out
    }

    /// True when `Σ w_i f_i` vanishes identically (all collected coefficients
    /// cancel to `1e-12` relative).
    pub fn combination_vanishes(&self, w: &[f64]) -> bool {
        let scale: f64 = self
            .terms
            .iter()
            .zip(w)
            .map(|(ts, wi)| ts.iter().map(|t| (wi * t.coef).abs()).sum::<f64>())
            .sum();
        self.combined_polynomial(w).iter().all(|t| t.coef.abs() <= 1e-12 * scale.max(1.0))
    }
}

/// Evaluates `f(r)` for a nonnegative state vector.
pub fn evaluate_reaction(spec: &ReactionSpec, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != spec.m() {
        return Err(Error::InvalidInput(format!("expected {} components, got {}", spec.m(), r.len())));
    }
    if let Some(i) = r.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput(format!("reaction argument r[{i}] = {} is negative", r[i])));
    }
    let mut out = vec![0.0; spec.m()];
    spec.eval_into(r, &mut out);
    Ok(out)
}

pub const LV_EIGEN_TOLERANCE: f64 = 1e-12;

/// Largest eigenvalue of `(A + Aᵀ)/2`.
pub fn max_symmetric_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let sym = DMatrix::from_fn(m, m, |i, j| 0.5 * (a[i][j] + a[j][i]));
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Truncation level `n` of the bounded approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    /// `n > 0`; `f64::INFINITY` disables truncation.
    pub fn new(n: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::InvalidInput(format!("truncation level must be positive, got {n}")));
        }
        Ok(TruncationLevel(n))
    }

    pub fn none() -> Self {
        TruncationLevel(f64::INFINITY)
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// `1 / (1 + Σ|f_j| / n)`.
    #[inline]
    pub fn factor(&self, f: &[f64]) -> f64 {
        let s: f64 = f.iter().map(|v| v.abs()).sum();
        1.0 / (1.0 + s / self.0)
    }

    /// Replaces `f` by `f / (1 + Σ|f_j|/n)`, returning the factor used.
    /// Results are clamped to `[-n, n]` so the bound survives rounding.
    #[inline]
    pub fn apply(&self, f: &mut [f64]) -> f64 {
        let k = self.factor(f);
        let n = self.0;
        for v in f.iter_mut() {
            *v = (*v * k).clamp(-n, n);
        }
        k
    }
}

/// Reaction evaluator with truncation applied.
#[derive(Debug, Clone)]
pub struct TruncatedReaction<'a> {
    spec: &'a ReactionSpec,
    level: TruncationLevel,
}

impl<'a> TruncatedReaction<'a> {
    pub fn new(spec: &'a ReactionSpec, level: TruncationLevel) -> Self {
        TruncatedReaction { spec, level }
    }

    pub fn level(&self) -> TruncationLevel {
        self.level
    }

    pub fn spec(&self) -> &ReactionSpec {
        self.spec
    }

    /// `fⁿ(r)` into `out`; returns the truncation factor.
    #[inline]
    pub fn eval_into(&self, r: &[f64], out: &mut [f64]) -> f64 {
        self.spec.eval_into(r, out);
        self.level.apply(out)
    }

    pub fn eval(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.m()];
        self.eval_into(r, &mut out);
        out
    }
}

/// Truncated evaluator plus the initial state cut at level `n`.
pub fn truncate<'a>(spec: &'a ReactionSpec, u0: &State, n: TruncationLevel) -> (TruncatedReaction<'a>, State) {
    let cap = n.value();
    let species = u0.species().iter().map(|f| f.map(|v| v.min(cap))).collect::<Vec<Field>>();
    let state = State::new(u0.t, species).expect("truncation preserves state shape");
    (TruncatedReaction::new(spec, n), state)
}

/// Diffusion coefficients, porous exponents and boundary condition around a
/// reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub reaction: ReactionSpec,
    pub d: Vec<f64>,
    pub mexp: Vec<f64>,
    pub bc: Boundary,
}

impl SystemSpec {
    pub fn new(reaction: ReactionSpec, d: Vec<f64>, mexp: Vec<f64>, bc: Boundary) -> Result<Self> {
        let m = reaction.m();
        if d.len() != m || mexp.len() != m {
            return Err(Error::InvalidInput(format!(
                "need {m} diffusion coefficients and exponents, got {} and {}",
                d.len(),
                mexp.len()
            )));
        }
        // d_i = 0 is accepted for reaction-only runs.
        if let Some(i) = d.iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidInput(format!("diffusion coefficient d[{i}] must be >= 0")));
        }
        if let Some(i) = mexp.iter().position(|&v| !(v.is_finite() && v >= 1.0)) {
            return Err(Error::InvalidInput(format!("porous exponent m[{i}] must be >= 1")));
        }
        let spec = SystemSpec { reaction, d, mexp, bc };
        if spec.is_porous() && bc != Boundary::Dirichlet {
            return Err(Error::InvalidInput("porous-medium systems require Dirichlet boundaries".into()));
        }
        if let GrowthClass::SuperQuadratic { exponents, .. } = spec.reaction.growth_class() {
            if exponents != &spec.mexp {
                return Err(Error::InvalidInput("super-quadratic exponents differ from the porous exponents".into()));
            }
        }
        Ok(spec)
    }

    /// Semilinear system with Neumann boundaries.
    pub fn semilinear(reaction: ReactionSpec, d: Vec<f64>) -> Result<Self> {
        let m = reaction.m();
        Self::new(reaction, d, vec![1.0; m], Boundary::Neumann)
    }

    pub fn m(&self) -> usize {
        self.reaction.m()
    }

    pub fn is_porous(&self) -> bool {
        self.mexp.iter().any(|&p| p > 1.0)
    }
}

/// One point at which a sampled assumption failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub point: Vec<f64>,
    pub species: Option<usize>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub samples: usize,
    pub violations: Vec<Violation>,
    /// Total violations found (only the first few are kept).
    pub violation_count: usize,
}

impl AssumptionCheck {
    fn new(name: &'static str) -> Self {
        AssumptionCheck { name, samples: 0, violations: Vec::new(), violation_count: 0 }
    }

    fn record(&mut self, v: Violation) {
        self.violation_count += 1;
        if self.violations.len() < MAX_KEPT_VIOLATIONS {
            self.violations.push(v);
        }
    }

    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

const MAX_KEPT_VIOLATIONS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(AssumptionCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const ASSUMPTION_SEED: u64 = 0x5eed_0f_a55e;
pub const SAMPLE_RADII: [f64; 3] = [1.0, 10.0, 100.0];

/// Samples `[0,R]^m` for `R ∈ {1, 10, 100}` with a fixed seed and checks
/// quasi-positivity, the declared mass class and the declared growth class.
/// Built-in kinds additionally get the symbolic mass identity and (for
/// Lotka-Volterra) the eigenvalue criterion.
pub fn verify_assumptions(spec: &ReactionSpec, sample_count: usize) -> AssumptionReport {
    let m = spec.m();
    let mut rng = ChaCha8Rng::seed_from_u64(ASSUMPTION_SEED);
    let mut positivity = AssumptionCheck::new("P");
    let mut mass = AssumptionCheck::new(match spec.mass_class {
        MassClass::Dissipative => "M",
        MassClass::LinearGrowth { .. } => "M'",
    });
    let mut growth = AssumptionCheck::new(match spec.growth_class {
        GrowthClass::Quadratic { .. } => "QG",
        GrowthClass::SuperQuadratic { .. } => "SQG",
        GrowthClass::Unspecified => "growth",
    });
    let mut f = vec![0.0; m];
    let mut r = vec![0.0; m];
    let magnitude = |r: &[f64]| -> f64 {
        spec.terms.iter().flatten().map(|t| t.eval(r).abs()).sum::<f64>().max(1.0)
    };
    for &radius in &SAMPLE_RADII {
        for _ in 0..sample_count.max(1) {
            r.iter_mut().for_each(|v| *v = rng.gen_range(0.0..=radius));
            let tol = 1e-12 * magnitude(&r);

            for i in 0..m {
                let keep = r[i];
                r[i] = 0.0;
                spec.eval_into(&r, &mut f);
                positivity.samples += 1;
                if f[i] < -tol {
                    positivity.record(Violation { point: r.clone(), species: Some(i), value: f[i], bound: 0.0 });
                }
                r[i] = keep;
            }

            spec.eval_into(&r, &mut f);
            let weighted: f64 = spec.a.iter().zip(&f).map(|(a, f)| a * f).sum();
            let bound = spec.mass_class.c0() * (1.0 + r.iter().sum::<f64>());
            mass.samples += 1;
            if weighted > bound + tol * spec.a.iter().copied().fold(1.0, f64::max) {
                mass.record(Violation { point: r.clone(), species: None, value: weighted, bound });
            }

            let bound = match &spec.growth_class {
                GrowthClass::Quadratic { c } => Some(c * (1.0 + r.iter().map(|v| v * v).sum::<f64>())),
                GrowthClass::SuperQuadratic { c, eps, exponents } => Some(
                    c * (1.0 + r.iter().zip(exponents).map(|(v, mj)| v.powf(mj + 1.0 - eps)).sum::<f64>()),
                ),
                GrowthClass::Unspecified => None,
            };
            if let Some(bound) = bound {
                growth.samples += 1;
                for (i, &fi) in f.iter().enumerate() {
                    if fi.abs() > bound * (1.0 + 1e-12) + tol {
                        growth.record(Violation { point: r.clone(), species: Some(i), value: fi.abs(), bound });
                    }
                }
            }
        }
    }
    let mut checks = vec![positivity, mass, growth];

    if matches!(spec.kind, ReactionKind::SAlphaBetaGamma { .. } | ReactionKind::SAlphaBetaGammaDelta { .. }) {
        let mut identity = AssumptionCheck::new("mass-identity");
        identity.samples = 1;
        if !spec.combination_vanishes(&spec.a) {
            identity.record(Violation { point: Vec::new(), species: None, value: f64::NAN, bound: 0.0 });
        }
        checks.push(identity);
    }
    if let ReactionKind::LotkaVolterra { a, .. } = &spec.kind {
        let mut eig = AssumptionCheck::new("LV-negative-semidefinite");
        eig.samples = 1;
        let lam = max_symmetric_eigenvalue(a);
        if lam > LV_EIGEN_TOLERANCE {
            eig.record(Violation { point: Vec::new(), species: None, value: lam, bound: LV_EIGEN_TOLERANCE });
        }
        checks.push(eig);
    }
    AssumptionReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn lv_skew() -> ReactionSpec {
        ReactionSpec::lotka_volterra(vec![-1.0, -1.0], vec![vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn evaluation_examples() {
        let s111 = ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 1.0).unwrap();
        assert_eq!(evaluate_reaction(&s111, &[1.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let s212 = ReactionSpec::s_alpha_beta_gamma(2.0, 1.0, 2.0).unwrap();
        assert_eq!(evaluate_reaction(&s212, &[1.0, 2.0, 1.0]).unwrap(), vec![-2.0, -1.0, 2.0]);
        assert_eq!(evaluate_reaction(&lv_skew(), &[2.0, 3.0]).unwrap(), vec![-8.0, 3.0]);
        assert!(evaluate_reaction(&s111, &[1.0, -0.5, 1.0]).is_err());
        assert!(evaluate_reaction(&s111, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn builtin_mass_vectors() {
        let s = ReactionSpec::s_alpha_beta_gamma(2.0, 1.0, 2.0).unwrap();
        assert_eq!(s.mass_weights(), &[2.0, 2.0, 3.0]);
        let s = ReactionSpec::s_alpha_beta_gamma_delta(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(s.mass_weights(), &[3.0, 4.0, 1.0, 2.0]);
        assert!(ReactionSpec::s_alpha_beta_gamma(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn growth_classes_of_builtins() {
        let s = ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 2.0).unwrap();
        assert_eq!(s.growth_class(), &GrowthClass::Quadratic { c: 4.0 });
        let s = ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 3.0).unwrap();
        assert_eq!(s.growth_class(), &GrowthClass::Unspecified);
    }

    #[test]
    fn lotka_volterra_rejects_bad_structure() {
        assert!(ReactionSpec::lotka_volterra(vec![0.5], vec![vec![-1.0]]).is_err());
        assert!(ReactionSpec::lotka_volterra(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, -1.0]]).is_err());
        assert!(max_symmetric_eigenvalue(&[vec![1.0, 0.0], vec![0.0, -1.0]]) > 0.5);
        assert!(max_symmetric_eigenvalue(&[vec![0.0, -1.0], vec![1.0, 0.0]]).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        let f_sq = ReactionSpec::custom(
            vec![vec![Monomial::new(-1.0, &[(0, 2.0)])]],
            vec![1.0],
            MassClass::Dissipative,
            GrowthClass::Quadratic { c: 1.0 },
        )
        .unwrap();
        let n = TruncationLevel::new(5.0).unwrap();
        let tr = TruncatedReaction::new(&f_sq, n);
        assert_eq!(f_sq.terms()[0][0].eval(&[10.0]), -100.0);
        assert!((tr.eval(&[10.0])[0] + 100.0 / 21.0).abs() < 1e-12);

        let mut pair = [50.0, -50.0];
        n.apply(&mut pair);
        assert!((pair[0] - 50.0 / 21.0).abs() < 1e-12);
        assert!(pair.iter().all(|v| v.abs() <= 5.0));

        let s111 = ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 1.0).unwrap();
        assert_eq!(TruncatedReaction::new(&s111, n).eval(&[2.0, 2.0, 4.0]), vec![0.0, 0.0, 0.0]);
        assert!(TruncationLevel::new(0.0).is_err());
    }

    #[test]
    fn truncated_initial_state() {
        let g = Grid::uniform_1d(1.0, 8, Boundary::Neumann).unwrap();
        let u0 = State::new(0.0, vec![Field::from_fn(g, |x, _| 100.0 * x)]).unwrap();
        let spec = ReactionSpec::inert(1).unwrap();
        let (_, cut) = truncate(&spec, &u0, TruncationLevel::new(30.0).unwrap());
        for (c, o) in cut.species()[0].values().iter().zip(u0.species()[0].values()) {
            assert_eq!(*c, o.min(30.0));
        }
    }

    #[test]
    fn assumption_examples() {
        let s = ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 2.0).unwrap();
        assert_eq!(s.mass_weights(), &[2.0, 2.0, 2.0]);
        let rep = verify_assumptions(&s, 200);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.check("mass-identity").unwrap().passed());
        assert!(rep.check("QG").unwrap().passed());

        let rep = verify_assumptions(&lv_skew(), 200);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.check("LV-negative-semidefinite").unwrap().passed());

        // f1 = -1 on the face r1 = 0 breaks quasi-positivity.
        let bad = ReactionSpec::custom(
            vec![vec![Monomial::constant(-1.0)], vec![Monomial::constant(1.0)]],
            vec![1.0, 1.0],
            MassClass::Dissipative,
            GrowthClass::Quadratic { c: 1.0 },
        )
        .unwrap();
        let rep = verify_assumptions(&bad, 50);
        let p = rep.check("P").unwrap();
        assert!(!p.passed());
        assert_eq!(p.violations[0].species, Some(0));
        assert_eq!(p.violations[0].point[0], 0.0);
        assert_eq!(p.violations[0].value, -1.0);
    }

    #[test]
    fn mass_class_violation_is_reported() {
        // Σ f = r1 > 0 breaks (M) but satisfies (M') with C0 = 1.
        let terms = vec![vec![Monomial::new(1.0, &[(0, 1.0)])]];
        let m = ReactionSpec::custom(terms.clone(), vec![1.0], MassClass::Dissipative, GrowthClass::Unspecified).unwrap();
        assert!(!verify_assumptions(&m, 20).check("M").unwrap().passed());
        let mp = ReactionSpec::custom(terms, vec![1.0], MassClass::LinearGrowth { c0: 1.0 }, GrowthClass::Unspecified)
            .unwrap();
        assert!(verify_assumptions(&mp, 20).passed());
    }

    #[test]
    fn super_quadratic_check() {
        // f1 = -f2 = -u1 u2 with m = (2, 3)
        let uv = [(0, 1.0), (1, 1.0)];
        let spec = ReactionSpec::custom(
            vec![vec![Monomial::new(-1.0, &uv)], vec![Monomial::new(1.0, &uv)]],
            vec![1.0, 1.0],
            MassClass::Dissipative,
            GrowthClass::SuperQuadratic { c: 1.0, eps: 0.5, exponents: vec![2.0, 3.0] },
        )
        .unwrap();
        let rep = verify_assumptions(&spec, 100);
        assert!(rep.check("SQG").unwrap().passed(), "{rep:?}");
    }

    #[test]
    fn system_spec_validation() {
        let s = ReactionSpec::s_alpha_beta_gamma(1.0, 1.0, 1.0).unwrap();
        assert!(SystemSpec::semilinear(s.clone(), vec![1.0, 2.0]).is_err());
        assert!(SystemSpec::semilinear(s.clone(), vec![1.0, -2.0, 1.0]).is_err());
        assert!(SystemSpec::new(s.clone(), vec![1.0; 3], vec![2.0, 1.0, 1.0], Boundary::Neumann).is_err());
        let p = SystemSpec::new(s, vec![1.0; 3], vec![2.0, 1.0, 1.0], Boundary::Dirichlet).unwrap();
        assert!(p.is_porous());
    }

    fn builtin() -> impl Strategy<Value = ReactionSpec> {
        prop_oneof![
            (1.0f64..4.0, 1.0f64..4.0, 1.0f64..4.0)
                .prop_map(|(a, b, g)| ReactionSpec::s_alpha_beta_gamma(a, b, g).unwrap()),
            (1.0f64..3.0, 1.0f64..3.0, 1.0f64..3.0, 1.0f64..3.0)
                .prop_map(|(a, b, g, d)| ReactionSpec::s_alpha_beta_gamma_delta(a, b, g, d).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn builtin_mass_combination_vanishes(spec in builtin(), r in prop::collection::vec(0.0f64..5.0, 4)) {
            prop_assert!(spec.combination_vanishes(spec.mass_weights()));
            let f = evaluate_reaction(&spec, &r[..spec.m()]).unwrap();
            let s: f64 = spec.mass_weights().iter().zip(&f).map(|(a, f)| a * f).sum();
            let scale: f64 = spec.mass_weights().iter().zip(&f).map(|(a, f)| (a * f).abs()).sum::<f64>().max(1e-300);
            prop_assert!(s.abs() <= 1e-12 * scale.max(1.0));
            for combo in spec.conservation_combos() {
                prop_assert!(spec.combination_vanishes(&combo));
            }
        }

        #[test]
        fn truncation_bounded_and_sign_preserving(r in prop::collection::vec(0.0f64..1e3, 3), n in 0.01f64..1e4) {
            let spec = ReactionSpec::s_alpha_beta_gamma(2.0, 1.0, 3.0).unwrap();
            let level = TruncationLevel::new(n).unwrap();
            let f = evaluate_reaction(&spec, &r).unwrap();
            let fnv = TruncatedReaction::new(&spec, level).eval(&r);
            let s: f64 = f.iter().map(|v| v.abs()).sum();
            for (a, b) in f.iter().zip(&fnv) {
                prop_assert!(b.abs() <= n);
                prop_assert!(a.signum() == b.signum() || *a == 0.0);
                let bound = a.abs() * (s / n) / (1.0 + s / n);
                prop_assert!((a - b).abs() <= bound * (1.0 + 1e-12) + 1e-300);
            }
        }

        #[test]
        fn truncation_monotone_in_n(r in prop::collection::vec(0.0f64..50.0, 2), n in 1.0f64..100.0) {
            let spec = lv_skew();
            let f = evaluate_reaction(&spec, &r).unwrap();
            let small = TruncatedReaction::new(&spec, TruncationLevel::new(n).unwrap()).eval(&r);
            let big = TruncatedReaction::new(&spec, TruncationLevel::new(2.0 * n).unwrap()).eval(&r);
            for i in 0..2 {
                prop_assert!(small[i].abs() <= big[i].abs() * (1.0 + 1e-15));
                prop_assert!(big[i].abs() <= f[i].abs() * (1.0 + 1e-15));
            }
        }

        #[test]
        fn truncation_preserves_quasi_positivity(r in prop::collection::vec(0.0f64..100.0, 4), i in 0usize..4, n in 0.1f64..100.0) {
            let spec = ReactionSpec::s_alpha_beta_gamma_delta(1.0, 2.0, 1.0, 3.0).unwrap();
            let mut r = r;
            r[i] = 0.0;
            let f = TruncatedReaction::new(&spec, TruncationLevel::new(n).unwrap()).eval(&r);
            prop_assert!(f[i] >= 0.0);
        }
    }
}
