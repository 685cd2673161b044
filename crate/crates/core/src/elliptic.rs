//! Discrete Laplacians, Poisson solves for both boundary conditions, the
//! discrete H⁻¹ norm and the domain constants consumed by the audits.
//!
//! The operator is the standard cell-centered 3-point (1D) / 5-point (2D)
//! stencil. Neumann faces carry zero flux; Dirichlet faces carry the flux
//! `(0 - u) / (h/2)`, i.e. the boundary value sits on the face itself.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::grid::{mean_values, Boundary, Field, Grid};

/// Normwise backward error accepted from any linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;
/// Relative residual target of the conjugate-gradient fallback.
pub const CG_TOLERANCE: f64 = 1e-12;
/// Band storage (in f64 entries) above which the iterative fallback is used.
pub const DIRECT_BAND_LIMIT: usize = 20_000_000;

/// `Δ_h` on a grid with a fixed boundary condition.
#[derive(Debug, Clone, Copy)]
pub struct Laplacian {
    grid: Grid,
    bc: Boundary,
}

impl Laplacian {
    pub fn new(grid: &Grid) -> Self {
        Laplacian { grid: *grid, bc: grid.bc() }
    }

    pub fn with_bc(grid: &Grid, bc: Boundary) -> Self {
        Laplacian { grid: *grid, bc }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    /// Calls `visit(i, Some(j), w)` for every coupling `-Δ_h` row `i` has
    /// with neighbour `j` (weight `w = 1/h²`), and `visit(i, None, w)` for
    /// every Dirichlet boundary face of cell `i` (weight `2/h²`).
    fn for_each_coupling(&self, mut visit: impl FnMut(usize, Option<usize>, f64)) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        for axis in 0..g.dim() {
            let h = g.spacing(axis);
            let w = 1.0 / (h * h);
            let (len, stride) = if axis == 0 { (nx, 1) } else { (ny, nx) };
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = g.index(ix, iy);
                    let pos = if axis == 0 { ix } else { iy };
                    if pos > 0 {
                        visit(i, Some(i - stride), w);
                    } else if self.bc == Boundary::Dirichlet {
                        visit(i, None, 2.0 * w);
                    }
                    if pos + 1 < len {
                        visit(i, Some(i + stride), w);
                    } else if self.bc == Boundary::Dirichlet {
                        visit(i, None, 2.0 * w);
                    }
                }
            }
        }
    }

    /// `out = Δ_h u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        for axis in 0..g.dim() {
            let h = g.spacing(axis);
            let w = 1.0 / (h * h);
            let (len, stride) = if axis == 0 { (nx, 1) } else { (ny, nx) };
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = g.index(ix, iy);
                    let pos = if axis == 0 { ix } else { iy };
                    let ui = u[i];
                    let mut acc = 0.0;
                    if pos > 0 {
                        acc += u[i - stride] - ui;
                    } else if self.bc == Boundary::Dirichlet {
                        acc -= 2.0 * ui;
                    }
                    if pos + 1 < len {
                        acc += u[i + stride] - ui;
                    } else if self.bc == Boundary::Dirichlet {
                        acc -= 2.0 * ui;
                    }
                    out[i] += w * acc;
                }
            }
        }
    }

    pub fn apply_field(&self, f: &Field) -> Field {
        let mut out = vec![0.0; f.values().len()];
        self.apply(f.values(), &mut out);
        Field::from_vec_unchecked(*f.grid(), out)
    }

    /// Diagonal magnitudes of `Δ_h`, per cell.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.grid.cell_count()];
        self.for_each_coupling(|i, _, w| diag[i] += w);
        diag
    }

    /// Largest diagonal magnitude of `Δ_h`.
    pub fn max_diagonal(&self) -> f64 {
        self.diagonal().into_iter().fold(0.0, f64::max)
    }

    /// Row sums of `Δ_h`; zero everywhere for Neumann.
    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.grid.cell_count();
        let mut sums = vec![0.0; n];
        self.for_each_coupling(|i, j, w| {
            if j.is_none() {
                sums[i] -= w;
            }
        });
        sums
    }

    /// Squared discrete gradient norm `Σ_faces ((w_R - w_L)/h)² · |face| · h`,
    /// with one-sided half-cell differences on Dirichlet boundary faces.
    /// Equals `∫ w (-Δ_h w)` by summation by parts.
    pub fn gradient_norm_sq(&self, w: &[f64]) -> f64 {
        let vol = self.grid.cell_volume();
        let mut acc = 0.0;
        self.for_each_coupling(|i, j, wt| match j {
            Some(j) if j > i => {
                let d = w[j] - w[i];
                acc += wt * d * d;
            }
            Some(_) => {}
            None => acc += wt * w[i] * w[i],
        });
        acc * vol
    }

    /// Sum over faces of `|∇_h w|^beta` times the face's dual volume.
    pub fn gradient_power_integral(&self, w: &[f64], beta: f64) -> f64 {
        let vol = self.grid.cell_volume();
        let mut acc = 0.0;
        self.for_each_coupling(|i, j, wt| match j {
            Some(j) if j > i => {
                let d = (w[j] - w[i]).abs() * wt.sqrt();
                acc += d.powf(beta);
            }
            Some(_) => {}
            // half-cell difference to the boundary face over half a dual cell;
            // wt = 2/h² here, so |∇w| = |w_i| / (h/2) = |w_i| * sqrt(2 wt)
            None => {
                let d = w[i].abs() * (2.0 * wt).sqrt();
                acc += 0.5 * d.powf(beta);
            }
        });
        acc * vol
    }
}

/// Lower band of a symmetric positive definite banded matrix and its
/// Cholesky factor, stored row by row (`bw + 1` entries per row, diagonal last).
#[derive(Debug, Clone)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    fn factor(n: usize, bw: usize, mut a: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = a[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= a[i * w + (k + bw - i)] * a[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NumericalFailure {
                            what: format!("banded Cholesky pivot {i}"),
                            residual: s,
                        });
                    }
                    a[i * w + bw] = s.sqrt();
                } else {
                    a[i * w + (j + bw - i)] = s / a[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l: a })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.l[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Direct(BandedCholesky),
    Iterative,
}

/// Solver for `(shift·I + coef·(-Δ_h)) x = b`.
///
/// With `pinned` (Neumann Poisson only) the last unknown is fixed to zero so
/// that the reduced system is definite; callers project the right-hand side
/// onto mean zero first, which makes the dropped equation redundant.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    lap: Laplacian,
    shift: f64,
    coef: f64,
    pinned: bool,
    backend: Backend,
    norm_inf: f64,
}

impl SpdSolver {
    pub fn new(lap: Laplacian, shift: f64, coef: f64) -> Result<Self> {
        Self::build(lap, shift, coef, false, false)
    }

    fn build(lap: Laplacian, shift: f64, coef: f64, pinned: bool, force_iterative: bool) -> Result<Self> {
        let g = lap.grid;
        let n = g.cell_count();
        let bw = if g.dim() == 1 { 1 } else { g.nx() };
        let active = if pinned { n - 1 } else { n };
        let mut diag = vec![shift; n];
        let mut offdiag = Vec::new();
        lap.for_each_coupling(|i, j, w| {
            diag[i] += coef * w;
            if let Some(j) = j.filter(|&j| j < i) {
                offdiag.push((i, j, -coef * w));
            }
        });
        let norm_inf = diag.iter().fold(0.0f64, |m, &d| m.max(2.0 * d.abs()));
        let backend = if force_iterative || active * (bw + 1) > DIRECT_BAND_LIMIT {
            Backend::Iterative
        } else {
            let wdt = bw + 1;
            let mut band = vec![0.0; active * wdt];
            for i in 0..active {
                band[i * wdt + bw] = diag[i];
            }
            for (i, j, v) in offdiag {
                if i < active {
                    band[i * wdt + (j + bw - i)] = v;
                }
            }
            Backend::Direct(BandedCholesky::factor(active, bw, band)?)
        };
        Ok(SpdSolver { lap, shift, coef, pinned, backend, norm_inf })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.lap.apply(x, out);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.shift * xi - self.coef * *o;
        }
    }

    /// Solves in place and checks the normwise backward error.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        self.solve_scaled(b, 0.0)
    }

    /// As [`solve_in_place`](Self::solve_in_place), measuring the backward
    /// error against `max(‖b‖_∞, data_scale)`. Callers that derived `b` from
    /// larger data (e.g. by centering) pass that data's size, since rounding
    /// in the derivation is a perturbation of the original data.
    fn solve_scaled(&self, b: &mut [f64], data_scale: f64) -> Result<()> {
        let rhs = b.to_vec();
        match &self.backend {
            Backend::Direct(chol) => {
                if self.pinned {
                    let n = b.len();
                    chol.solve_in_place(&mut b[..n - 1]);
                    b[n - 1] = 0.0;
                } else {
                    chol.solve_in_place(b);
                }
            }
            Backend::Iterative => self.conjugate_gradient(&rhs, b)?,
        }
        let mut r = vec![0.0; b.len()];
        self.apply(b, &mut r);
        let rnorm = r.iter().zip(&rhs).fold(0.0f64, |m, (ax, bi)| m.max((bi - ax).abs()));
        let xnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bnorm = rhs.iter().fold(data_scale, |m, v| m.max(v.abs()));
        let scale = self.norm_inf * xnorm + bnorm;
        let backward = if scale > 0.0 { rnorm / scale } else { 0.0 };
        if !(backward <= SOLVE_TOLERANCE) {
            return Err(Error::NumericalFailure { what: "elliptic solve".into(), residual: backward });
        }
        Ok(())
    }

    fn conjugate_gradient(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let n = b.len();
        x.iter_mut().for_each(|v| *v = 0.0);
        let mut r = b.to_vec();
        let project = |v: &mut [f64]| {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= m);
        };
        if self.pinned {
            project(&mut r);
        }
        let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(());
        }
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = bnorm * bnorm;
        for _ in 0..(20 * n).max(1000) {
            self.apply(&p, &mut ap);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if self.pinned {
                project(&mut r);
            }
            let rr_new = r.iter().map(|v| v * v).sum::<f64>();
            if rr_new.sqrt() <= CG_TOLERANCE * bnorm {
                if self.pinned {
                    project(x);
                }
                return Ok(());
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(Error::NumericalFailure { what: "conjugate gradient".into(), residual: rr.sqrt() / bnorm })
    }
}

/// Reusable Poisson solver for `-Δ_h W = rhs` on one grid and boundary
/// condition. Under Neumann the right-hand side is centered and the returned
/// solution has zero mean.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    inner: SpdSolver,
}

impl PoissonSolver {
    pub fn new(grid: &Grid) -> Result<Self> {
        Self::with_bc(grid, grid.bc())
    }

    pub fn with_bc(grid: &Grid, bc: Boundary) -> Result<Self> {
        Self::build(grid, bc, false)
    }

    fn build(grid: &Grid, bc: Boundary, force_iterative: bool) -> Result<Self> {
        let lap = Laplacian::with_bc(grid, bc);
        let pinned = bc == Boundary::Neumann;
        Ok(PoissonSolver { inner: SpdSolver::build(lap, 0.0, 1.0, pinned, force_iterative)? })
    }

    pub fn laplacian(&self) -> &Laplacian {
        &self.inner.lap
    }

    pub fn bc(&self) -> Boundary {
        self.inner.lap.bc
    }

    pub fn solve_values(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        if self.bc() == Boundary::Neumann {
            let data_scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let m = mean_values(&self.inner.lap.grid, &x);
            x.iter_mut().for_each(|v| *v -= m);
            self.inner.solve_scaled(&mut x, data_scale)?;
            let m = mean_values(&self.inner.lap.grid, &x);
            x.iter_mut().for_each(|v| *v -= m);
        } else {
            self.inner.solve_in_place(&mut x)?;
        }
        Ok(x)
    }

    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        Ok(Field::from_vec_unchecked(*rhs.grid(), self.solve_values(rhs.values())?))
    }

    /// `‖f‖_{H⁻¹} = ‖∇W‖_{L²}` with `W` the Poisson solution for `f`.
    pub fn hminus1_norm_values(&self, f: &[f64]) -> Result<f64> {
        let w = self.solve_values(f)?;
        Ok(self.inner.lap.gradient_norm_sq(&w).sqrt())
    }

    pub fn hminus1_norm(&self, f: &Field) -> Result<f64> {
        self.hminus1_norm_values(f.values())
    }
}

/// Mean-zero solution of `-Δ_h W = rhs - ⟨rhs⟩` with zero-flux faces.
pub fn solve_poisson_neumann(rhs: &Field) -> Result<Field> {
    PoissonSolver::with_bc(rhs.grid(), Boundary::Neumann)?.solve(rhs)
}

/// Solution of `-Δ_h W = rhs` with zero boundary values.
pub fn solve_poisson_dirichlet(rhs: &Field) -> Result<Field> {
    PoissonSolver::with_bc(rhs.grid(), Boundary::Dirichlet)?.solve(rhs)
}

/// Discrete H⁻¹ norm using the boundary condition of `f`'s grid.
pub fn hminus1_norm(f: &Field) -> Result<f64> {
    PoissonSolver::new(f.grid())?.hminus1_norm(f)
}

/// Constants of the domain used by the estimates.
#[derive(Debug, Clone)]
pub struct DomainConstants {
    /// `|Ω| · max(0, max_{x,y} -G_h(x,y))` for the mean-zero Neumann Green
    /// function. For every mean-zero `g ≤ κ` the mean-zero solution of
    /// `-Δ_h z = g` satisfies `max z ≤ c_omega · κ`.
    pub c_omega: f64,
    /// `max_y ‖G_h(·,y)‖_{L²}`: bounds `‖z‖_{L²} ≤ green_l2 · ‖g‖_{L¹}` for the
    /// same problem.
    pub green_l2: f64,
    /// `max θ` where `-Δ_h θ = 1` with zero Dirichlet data.
    pub theta_inf: f64,
    pub theta: Field,
}

type GeometryKey = (usize, [usize; 2], [u64; 2]);

fn geometry_key(grid: &Grid) -> GeometryKey {
    let mut cells = [1usize; 2];
    let mut lengths = [0u64; 2];
    for a in 0..grid.dim() {
        cells[a] = grid.cells()[a];
        lengths[a] = grid.lengths()[a].to_bits();
    }
    (grid.dim(), cells, lengths)
}

/// Computes (once per geometry, then cached) the Green-function constants
/// and the torsion function `θ`.
pub fn domain_constants(grid: &Grid) -> Result<Arc<DomainConstants>> {
    static CACHE: OnceLock<Mutex<HashMap<GeometryKey, Arc<DomainConstants>>>> = OnceLock::new();
    let key = geometry_key(grid);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(c) = cache.lock().expect("domain constant cache poisoned").get(&key) {
        return Ok(Arc::clone(c));
    }
    let computed = Arc::new(compute_domain_constants(grid)?);
    cache
        .lock()
        .expect("domain constant cache poisoned")
        .entry(key)
        .or_insert_with(|| Arc::clone(&computed));
    Ok(computed)
}

fn compute_domain_constants(grid: &Grid) -> Result<DomainConstants> {
    let neumann = PoissonSolver::with_bc(grid, Boundary::Neumann)?;
    let n = grid.cell_count();
    let vol = grid.cell_volume();
    let measure = grid.measure();
    let mut min_g = 0.0f64;
    let mut green_l2 = 0.0f64;
    let mut rhs = vec![0.0; n];
    for y in 0..n {
        rhs.iter_mut().for_each(|v| *v = -1.0 / measure);
        rhs[y] += 1.0 / vol;
        let g = neumann.solve_values(&rhs)?;
        min_g = g.iter().copied().fold(min_g, f64::min);
        let l2 = (g.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
        green_l2 = green_l2.max(l2);
    }
    let theta = PoissonSolver::with_bc(grid, Boundary::Dirichlet)?
        .solve(&Field::constant(grid.with_bc(Boundary::Dirichlet), 1.0))?;
    let theta_inf = theta.max();
    Ok(DomainConstants { c_omega: measure * (-min_g).max(0.0), green_l2, theta_inf, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, integrate_field, mean};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit(cells: usize, bc: Boundary) -> Grid {
        Grid::uniform_1d(1.0, cells, bc).unwrap()
    }

    fn random_field(grid: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(grid, (0..grid.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn neumann_rows_sum_to_zero_and_dirichlet_is_definite() {
        let g2 = Grid::new(2, &[1.0, 1.5], &[6, 8], Boundary::Neumann).unwrap();
        assert!(Laplacian::new(&g2).row_sums().iter().all(|&s| s == 0.0));
        let d = g2.with_bc(Boundary::Dirichlet);
        assert!(Laplacian::new(&d).row_sums().iter().all(|&s| s < 0.0 || s == 0.0));
        // Cholesky succeeds only for definite matrices.
        assert!(SpdSolver::new(Laplacian::new(&d), 0.0, 1.0).is_ok());
        assert!(SpdSolver::new(Laplacian::new(&g2), 0.0, 1.0).is_err());
    }

    #[test]
    fn laplacian_integrates_to_zero_under_neumann() {
        let g = Grid::new(2, &[1.0, 2.0], &[8, 12], Boundary::Neumann).unwrap();
        let v = random_field(g, 3);
        let lv = Laplacian::new(&g).apply_field(&v);
        assert!(integrate_field(&lv).abs() < 1e-12);
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        for bc in [Boundary::Neumann, Boundary::Dirichlet] {
            let g = Grid::new(2, &[1.0, 0.5], &[9, 7], bc).unwrap();
            let lap = Laplacian::new(&g);
            let (f, h) = (random_field(g, 1), random_field(g, 2));
            let a = inner(&lap.apply_field(&f), &h);
            let b = inner(&f, &lap.apply_field(&h));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn neumann_constant_rhs_gives_zero() {
        let g = unit(32, Boundary::Neumann);
        let w = solve_poisson_neumann(&Field::constant(g, 4.0)).unwrap();
        assert!(w.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn neumann_cosine_eigenfunction() {
        let n = 128;
        let h = 1.0 / n as f64;
        let g = unit(n, Boundary::Neumann);
        let w = solve_poisson_neumann(&Field::from_fn(g, |x, _| (PI * x).cos())).unwrap();
        let err = w
            .values()
            .iter()
            .zip(g.centers())
            .map(|(v, [x, _])| (v - (PI * x).cos() / (PI * PI)).abs())
            .fold(0.0, f64::max);
        assert!(err < h * h, "{err}");
    }

    #[test]
    fn neumann_solution_has_zero_mean() {
        for seed in 0..5 {
            let g = Grid::new(2, &[1.0, 1.0], &[10, 10], Boundary::Neumann).unwrap();
            let w = solve_poisson_neumann(&random_field(g, seed)).unwrap();
            assert!(mean(&w).abs() < 1e-13);
        }
    }

    #[test]
    fn dirichlet_examples() {
        let n = 128;
        let h = 1.0 / n as f64;
        let g = unit(n, Boundary::Dirichlet);
        let theta = solve_poisson_dirichlet(&Field::constant(g, 1.0)).unwrap();
        let err = theta
            .values()
            .iter()
            .zip(g.centers())
            .map(|(v, [x, _])| (v - x * (1.0 - x) / 2.0).abs())
            .fold(0.0, f64::max);
        assert!(err < h * h, "{err}");
        assert!((theta.max() - 0.125).abs() < h * h);

        let zero = solve_poisson_dirichlet(&Field::zeros(g)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let s = solve_poisson_dirichlet(&Field::from_fn(g, |x, _| (PI * x).sin())).unwrap();
        let err = s
            .values()
            .iter()
            .zip(g.centers())
            .map(|(v, [x, _])| (v - (PI * x).sin() / (PI * PI)).abs())
            .fold(0.0, f64::max);
        assert!(err < h * h, "{err}");
    }

    #[test]
    fn hminus1_examples() {
        let g = unit(128, Boundary::Neumann);
        assert!(hminus1_norm(&Field::constant(g, 3.0)).unwrap() < 1e-12);
        let c = Field::from_fn(g, |x, _| (PI * x).cos());
        let exact = 1.0 / (PI * 2f64.sqrt());
        let got = hminus1_norm(&c).unwrap();
        assert!((got - exact).abs() / exact < 0.01, "{got}");
        let shifted = hminus1_norm(&c.map(|v| v + 7.0)).unwrap();
        assert!((shifted - got).abs() < 1e-12);
    }

    #[test]
    fn hminus1_duality_identity() {
        for bc in [Boundary::Neumann, Boundary::Dirichlet] {
            let g = Grid::new(2, &[1.0, 1.0], &[12, 9], bc).unwrap();
            let f = random_field(g, 11);
            let solver = PoissonSolver::new(&g).unwrap();
            let w = solver.solve(&f).unwrap();
            let centered = if bc == Boundary::Neumann { f.map(|v| v - mean(&f)) } else { f.clone() };
            let dual = inner(&w, &centered);
            let norm = solver.hminus1_norm(&f).unwrap();
            assert!((norm * norm - dual).abs() <= 1e-10 * dual.abs());
        }
    }

    #[test]
    fn iterative_fallback_matches_direct() {
        for bc in [Boundary::Neumann, Boundary::Dirichlet] {
            let g = Grid::new(2, &[1.0, 1.0], &[16, 16], bc).unwrap();
            let f = random_field(g, 5);
            let direct = PoissonSolver::build(&g, bc, false).unwrap().solve(&f).unwrap();
            let cg = PoissonSolver::build(&g, bc, true).unwrap().solve(&f).unwrap();
            let diff = direct.values().iter().zip(cg.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "{diff}");
        }
    }

    #[test]
    fn theta_constant_converges() {
        let c = domain_constants(&unit(128, Boundary::Dirichlet)).unwrap();
        assert!((c.theta_inf - 0.125).abs() / 0.125 < 0.005);
        assert!(c.theta.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn c_omega_is_grid_stable() {
        // Continuum value for (0,1) is 1/6, attained at G(0,1).
        let a = domain_constants(&unit(128, Boundary::Neumann)).unwrap().c_omega;
        let b = domain_constants(&unit(256, Boundary::Neumann)).unwrap().c_omega;
        assert!(a > 0.0 && b > 0.0);
        assert!((a - b).abs() / b < 0.02, "{a} {b}");
        assert!((b - 1.0 / 6.0).abs() < 0.01, "{b}");
    }

    #[test]
    fn c_omega_bounds_mean_zero_problems() {
        for (grid, seed0) in [
            (unit(64, Boundary::Neumann), 0u64),
            (Grid::new(2, &[1.0, 2.0], &[8, 12], Boundary::Neumann).unwrap(), 1000),
        ] {
            let consts = domain_constants(&grid).unwrap();
            let solver = PoissonSolver::new(&grid).unwrap();
            for seed in 0..50 {
                let f = random_field(grid, seed0 + seed);
                // sharpen some samples into spikes
                let g = if seed % 2 == 0 { f.map(|v| v.powi(9)) } else { f };
                let g = g.map(|v| v - mean(&g));
                let z = solver.solve(&g).unwrap();
                let kappa = g.max();
                assert!(z.max() <= consts.c_omega * kappa * (1.0 + 1e-10) + 1e-14);
            }
        }
    }
}
