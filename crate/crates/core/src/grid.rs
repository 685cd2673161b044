//! Uniform cell-centered finite-volume meshes and the quadrature primitives
//! (integral, mean, L^p norms) that the rest of the crate is built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition attached to a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Zero normal flux.
    Neumann,
    /// Zero value on the boundary faces.
    Dirichlet,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Neumann => f.write_str("neumann"),
            Boundary::Dirichlet => f.write_str("dirichlet"),
        }
    }
}

/// Uniform box mesh in one or two dimensions.
///
/// Cells are numbered with the x index running fastest. In 1D the second
/// axis is unused (one cell of unit length) and never enters volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
    bc: Boundary,
}

pub const MIN_CELLS: usize = 4;

impl Grid {
    pub fn new(dim: usize, lengths: &[f64], cells: &[usize], bc: Boundary) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidInput(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if lengths.len() != dim || cells.len() != dim {
            return Err(Error::InvalidInput(format!(
                "expected {dim} lengths and cell counts, got {} and {}",
                lengths.len(),
                cells.len()
            )));
        }
        for (&l, &c) in lengths.iter().zip(cells) {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidInput(format!("domain length must be positive, got {l}")));
            }
            if c < MIN_CELLS {
                return Err(Error::InvalidInput(format!(
                    "need at least {MIN_CELLS} cells per axis, got {c}"
                )));
            }
        }
        let mut g = Grid { dim, lengths: [1.0, 1.0], cells: [1, 1], bc };
        g.lengths[..dim].copy_from_slice(lengths);
        g.cells[..dim].copy_from_slice(cells);
        Ok(g)
    }

    pub fn uniform_1d(length: f64, cells: usize, bc: Boundary) -> Result<Self> {
        Self::new(1, &[length], &[cells], bc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    /// Same geometry, different boundary condition.
    pub fn with_bc(&self, bc: Boundary) -> Self {
        Grid { bc, ..*self }
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    /// Cells along y (1 for one-dimensional grids).
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn h(&self) -> Vec<f64> {
        (0..self.dim).map(|a| self.spacing(a)).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// |Ω|, computed as cell count times cell volume so that integrating a
    /// constant reproduces it bit for bit.
    pub fn measure(&self) -> f64 {
        self.cell_count() as f64 * self.cell_volume()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix + self.cells[0] * iy
    }

    /// Cell-center coordinates of cell `idx`; the y entry is 0 in 1D.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let ix = idx % self.cells[0];
        let iy = idx / self.cells[0];
        let x = (ix as f64 + 0.5) * self.spacing(0);
        let y = if self.dim == 2 { (iy as f64 + 0.5) * self.spacing(1) } else { 0.0 };
        [x, y]
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.cell_count()).map(move |i| self.center(i))
    }

    pub fn same_mesh(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.cells == other.cells && self.lengths == other.lengths
    }
}

/// Cell-averaged scalar on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidInput(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite field value at cell {i}")));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field { grid, values: vec![c; grid.cell_count()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid.centers().map(|[x, y]| f(x, y)).collect();
        Field { grid, values }
    }

    /// Wraps values without the finiteness scan; callers guarantee the length.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.cell_count());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &Field, beta: f64) -> Field {
        debug_assert!(self.grid.same_mesh(&other.grid));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        Field { grid: self.grid, values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Species concentrations at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    species: Vec<Field>,
}

impl State {
    pub fn new(t: f64, species: Vec<Field>) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::InvalidInput("state needs at least one species".into()));
        }
        let g = *species[0].grid();
        if species.iter().any(|f| !f.grid().same_mesh(&g)) {
            return Err(Error::InvalidInput("species fields live on different grids".into()));
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidInput(format!("state time must be >= 0, got {t}")));
        }
        Ok(State { t, species })
    }

    pub fn grid(&self) -> &Grid {
        self.species[0].grid()
    }

    pub fn species(&self) -> &[Field] {
        &self.species
    }

    pub fn species_mut(&mut self) -> &mut [Field] {
        &mut self.species
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.species.iter().all(|f| f.values().iter().all(|&v| v >= 0.0))
    }

    /// Pointwise weighted sum `Σ w_i u_i`.
    pub fn combine(&self, weights: &[f64]) -> Field {
        combine_values(self.grid(), self.species.iter().map(|f| f.values()), weights)
    }
}

pub(crate) fn combine_values<'a>(
    grid: &Grid,
    species: impl Iterator<Item = &'a [f64]>,
    weights: &[f64],
) -> Field {
    let mut out = vec![0.0; grid.cell_count()];
    for (vals, &w) in species.zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(vals) {
            *o += w * v;
        }
    }
    Field::from_vec_unchecked(*grid, out)
}

/// Integral by cell quadrature.
pub fn integrate_field(f: &Field) -> f64 {
    integrate_values(f.grid(), f.values())
}

pub(crate) fn integrate_values(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_volume()
}

/// Domain average `⟨f⟩ = ∫f / |Ω|`.
pub fn mean(f: &Field) -> f64 {
    mean_values(f.grid(), f.values())
}

pub(crate) fn mean_values(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / grid.cell_count() as f64
}

/// Norm exponent: finite `p >= 1` or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L(f64),
    Inf,
}

pub fn lp_norm(f: &Field, p: Norm) -> Result<f64> {
    lp_norm_values(f.grid(), f.values(), p)
}

pub(crate) fn lp_norm_values(grid: &Grid, values: &[f64], p: Norm) -> Result<f64> {
    match p {
        Norm::Inf => Ok(values.iter().fold(0.0, |m, v| m.max(v.abs()))),
        Norm::L(p) if p.is_infinite() && p > 0.0 => lp_norm_values(grid, values, Norm::Inf),
        Norm::L(p) if p >= 1.0 => {
            let vol = grid.cell_volume();
            if p == 1.0 {
                Ok(values.iter().map(|v| v.abs()).sum::<f64>() * vol)
            } else if p == 2.0 {
                Ok((values.iter().map(|v| v * v).sum::<f64>() * vol).sqrt())
            } else {
                Ok((values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p))
            }
        }
        Norm::L(p) => Err(Error::InvalidInput(format!("L^p norm needs p >= 1, got {p}"))),
    }
}

/// `∫ f g` by cell quadrature.
pub fn inner(f: &Field, g: &Field) -> f64 {
    inner_values(f.grid(), f.values(), g.values())
}

pub(crate) fn inner_values(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * grid.cell_volume()
}
