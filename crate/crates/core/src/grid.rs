//! Occupancy density grid: Gaussian probability masses per cell, log-score
//! accumulation, free-space probabilities, smoothing, coverage checks and the
//! per-cell lower bound on the free probability of visited cells.

use std::sync::OnceLock;

use nalgebra::{Matrix2, Point2, Vector2};
use statrs::function::erf::erf;

use crate::domain::{DomainSpec, GridSpec, Rect};
use crate::ekf::DataTuple;
use crate::error::{Error, Result};

/// Probability-mass threshold for counting a tuple's contribution to a cell.
pub const INCLUSION_THRESHOLD: f64 = 0.05;

/// Covariance eigenvalue (m^2) below which a tuple is treated as a point mass.
pub const DIRAC_EIGENVALUE: f64 = 1e-12;

/// Log-score cap for contributions with mass at (or rounding to) one:
/// `ln(1 / eps)` for the f64 machine epsilon.
pub const LOG_SCORE_CAP: f64 = 36.04365338911715;

/// Correlation below which the closed-form product of error functions is used.
const DIAGONAL_CORRELATION_CUTOFF: f64 = 1e-12;

/// Candidate cells for a tuple lie within this many axis deviations of mu.
const SUPPORT_SIGMAS_BOX: f64 = 5.0;

/// Quadrature support is clipped to this many axis deviations around mu; the
/// truncated tail is below 1e-14 of the total mass.
const SUPPORT_SIGMAS_CLIP: f64 = 8.0;

const QUAD_POINTS: usize = 64;

/// Nodes and weights of the 64-point Gauss–Legendre rule on [-1, 1],
/// computed once by Newton iteration on the Legendre recurrence.
fn gauss_legendre_64() -> &'static ([f64; QUAD_POINTS], [f64; QUAD_POINTS]) {
    static RULE: OnceLock<([f64; QUAD_POINTS], [f64; QUAD_POINTS])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = QUAD_POINTS;
        let mut x = [0.0f64; QUAD_POINTS];
        let mut w = [0.0f64; QUAD_POINTS];
        for i in 0..(n + 1) / 2 {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            loop {
                let mut p1 = 1.0f64;
                let mut p2 = 0.0f64;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
                }
                let pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    x[i] = -z;
                    x[n - 1 - i] = z;
                    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
                    w[n - 1 - i] = w[i];
                    break;
                }
            }
        }
        (x, w)
    })
}

/// `P(a <= X <= b)` for `X ~ N(mu, var)`.
fn axis_mass(mu: f64, var: f64, a: f64, b: f64) -> f64 {
    let denom = (2.0 * var).sqrt();
    0.5 * (erf((b - mu) / denom) - erf((a - mu) / denom))
}

/// Probability mass of `N(mu, sigma)` over an axis-aligned rectangle.
///
/// Near-diagonal covariances use the closed-form product of error-function
/// differences.  General covariances are diagonalized by eigen-rotation and
/// the rotated density is integrated over the rectangle with a 64-point
/// Gauss–Legendre rule per axis; the support is first clipped to eight axis
/// deviations around `mu`, which keeps narrow kernels resolved and discards
/// only tails below 1e-14.  A covariance with an eigenvalue under
/// [`DIRAC_EIGENVALUE`] degenerates to a point mass at `mu`.
pub fn cell_mass(mu: &Vector2<f64>, sigma: &Matrix2<f64>, rect: &Rect) -> f64 {
    let sxx = sigma[(0, 0)];
    let syy = sigma[(1, 1)];
    let sxy = 0.5 * (sigma[(0, 1)] + sigma[(1, 0)]);
    let sym = Matrix2::new(sxx, sxy, sxy, syy);
    let eigen = sym.symmetric_eigen();
    let l0 = eigen.eigenvalues[0];
    let l1 = eigen.eigenvalues[1];
    if l0.min(l1) < DIRAC_EIGENVALUE {
        return if rect.contains(&Point2::new(mu.x, mu.y)) { 1.0 } else { 0.0 };
    }
    if sxy.abs() <= DIAGONAL_CORRELATION_CUTOFF * (sxx * syy).sqrt() {
        let m = axis_mass(mu.x, sxx, rect.xmin, rect.xmax)
            * axis_mass(mu.y, syy, rect.ymin, rect.ymax);
        return m.clamp(0.0, 1.0);
    }

    // Clip to the kernel's support; an empty intersection carries no mass.
    let sx = sxx.sqrt();
    let sy = syy.sqrt();
    let x0 = rect.xmin.max(mu.x - SUPPORT_SIGMAS_CLIP * sx);
    let x1 = rect.xmax.min(mu.x + SUPPORT_SIGMAS_CLIP * sx);
    let y0 = rect.ymin.max(mu.y - SUPPORT_SIGMAS_CLIP * sy);
    let y1 = rect.ymax.min(mu.y + SUPPORT_SIGMAS_CLIP * sy);
    if x0 >= x1 || y0 >= y1 {
        return 0.0;
    }

    // Density in the eigenbasis: product of two axis-aligned Gaussians.
    let q = eigen.eigenvectors;
    let inv0 = 0.5 / l0;
    let inv1 = 0.5 / l1;
    let (nodes, weights) = gauss_legendre_64();
    let hx = 0.5 * (x1 - x0);
    let cx = 0.5 * (x0 + x1);
    let hy = 0.5 * (y1 - y0);
    let cy = 0.5 * (y0 + y1);

    let mut dv = [0.0f64; QUAD_POINTS];
    for (j, n) in nodes.iter().enumerate() {
        dv[j] = cy + hy * n - mu.y;
    }
    let mut sum = 0.0;
    for (i, ni) in nodes.iter().enumerate() {
        let du = cx + hx * ni - mu.x;
        let a0 = q[(0, 0)] * du;
        let a1 = q[(0, 1)] * du;
        let mut row = 0.0;
        for (j, wj) in weights.iter().enumerate() {
            let q0 = a0 + q[(1, 0)] * dv[j];
            let q1 = a1 + q[(1, 1)] * dv[j];
            row += wj * (-(inv0 * q0 * q0 + inv1 * q1 * q1)).exp();
        }
        sum += weights[i] * row;
    }
    let norm = 2.0 * std::f64::consts::PI * (l0 * l1).sqrt();
    (sum * hx * hy / norm).clamp(0.0, 1.0)
}

/// Per-cell tallies accumulated from recorded estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    count: Vec<u32>,
    sum_log: Vec<f64>,
    saturated_terms: usize,
}

/// Plain per-cell probability field (free-space probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub spec: GridSpec,
    pub p: Vec<f64>,
}

impl DensityGrid {
    pub fn new(spec: GridSpec) -> Self {
        let m = spec.len();
        DensityGrid { spec, count: vec![0; m], sum_log: vec![0.0; m], saturated_terms: 0 }
    }

    /// Number of contributions recorded for cell `i`.
    pub fn count(&self, i: usize) -> u32 {
        self.count[i]
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    /// How many log terms hit [`LOG_SCORE_CAP`] (mass indistinguishable from 1).
    pub fn saturated_terms(&self) -> usize {
        self.saturated_terms
    }

    /// Mean log score of cell `i`; 0 for untouched cells.
    pub fn score(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum_log[i] / self.count[i] as f64
        }
    }

    /// Free-space probability `1 - exp(-score)`; 0 for untouched cells and
    /// always strictly below 1 thanks to the log-term cap.
    pub fn p_free(&self, i: usize) -> f64 {
        1.0 - (-self.score(i)).exp()
    }

    /// Snapshot of all free-space probabilities.
    pub fn probability(&self) -> ProbabilityGrid {
        let p = (0..self.spec.len()).map(|i| self.p_free(i)).collect();
        ProbabilityGrid { spec: self.spec, p }
    }

    /// Fold recorded estimates into the grid.
    ///
    /// Tuples are first brought into canonical (robot, time) order so the
    /// result is bitwise independent of the input order.  A tuple contributes
    /// to every cell where its Gaussian mass exceeds [`INCLUSION_THRESHOLD`];
    /// candidates are limited to the tuple's five-deviation bounding box, and
    /// cells whose marginal masses already rule the threshold out are skipped
    /// exactly (the joint mass never exceeds either marginal).
    pub fn accumulate(&mut self, tuples: &[DataTuple]) {
        let mut order: Vec<usize> = (0..tuples.len()).collect();
        order.sort_by(|&a, &b| {
            (tuples[a].robot, tuples[a].t)
                .partial_cmp(&(tuples[b].robot, tuples[b].t))
                .expect("tuple times must not be NaN")
        });
        for &i in &order {
            self.add_tuple(&tuples[i]);
        }
    }

    fn add_tuple(&mut self, d: &DataTuple) {
        let g = self.spec;
        let w = 2.0 * g.s;
        let sxx = d.sigma[(0, 0)].max(0.0);
        let syy = d.sigma[(1, 1)].max(0.0);
        let sx = sxx.sqrt();
        let sy = syy.sqrt();
        let xlo = d.mu.x - SUPPORT_SIGMAS_BOX * sx;
        let xhi = d.mu.x + SUPPORT_SIGMAS_BOX * sx;
        let ylo = d.mu.y - SUPPORT_SIGMAS_BOX * sy;
        let yhi = d.mu.y + SUPPORT_SIGMAS_BOX * sy;
        let (xmin, ymin) = (g.origin.x, g.origin.y);
        let xmax = xmin + w * g.cols as f64;
        let ymax = ymin + w * g.rows as f64;
        if xhi < xmin || xlo > xmax || yhi < ymin || ylo > ymax {
            return;
        }
        let c0 = (((xlo - xmin) / w).floor().max(0.0)) as usize;
        let c1 = ((((xhi - xmin) / w).floor()) as usize).min(g.cols - 1);
        let r0 = (((ylo - ymin) / w).floor().max(0.0)) as usize;
        let r1 = ((((yhi - ymin) / w).floor()) as usize).min(g.rows - 1);

        // Marginal masses per column/row: cheap exact exclusion bounds.
        let mx: Vec<f64> = (c0..=c1)
            .map(|c| {
                let a = xmin + w * c as f64;
                axis_mass(d.mu.x, sxx, a, a + w)
            })
            .collect();
        let my: Vec<f64> = (r0..=r1)
            .map(|r| {
                let a = ymin + w * r as f64;
                axis_mass(d.mu.y, syy, a, a + w)
            })
            .collect();

        for r in r0..=r1 {
            for c in c0..=c1 {
                let bound = mx[c - c0].min(my[r - r0]);
                if bound <= INCLUSION_THRESHOLD {
                    continue;
                }
                let i = g.index(r, c);
                let mass = cell_mass(&d.mu, &d.sigma, &g.cell_rect(i));
                if mass > INCLUSION_THRESHOLD {
                    let term = if mass >= 1.0 {
                        self.saturated_terms += 1;
                        LOG_SCORE_CAP
                    } else {
                        let t = (1.0 / (1.0 - mass)).ln();
                        if t >= LOG_SCORE_CAP {
                            self.saturated_terms += 1;
                            LOG_SCORE_CAP
                        } else {
                            t
                        }
                    };
                    self.count[i] += 1;
                    self.sum_log[i] += term;
                }
            }
        }
    }
}

/// 3x3 moving-average smoothing; border cells average over the neighbors that
/// exist.
pub fn smooth(pg: &ProbabilityGrid) -> ProbabilityGrid {
    let g = pg.spec;
    let mut out = vec![0.0; g.len()];
    for r in 0..g.rows {
        for c in 0..g.cols {
            let mut sum = 0.0;
            let mut n = 0usize;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = r as i64 + dr;
                    let cc = c as i64 + dc;
                    if rr >= 0 && rr < g.rows as i64 && cc >= 0 && cc < g.cols as i64 {
                        sum += pg.p[g.index(rr as usize, cc as usize)];
                        n += 1;
                    }
                }
            }
            out[g.index(r, c)] = sum / n as f64;
        }
    }
    ProbabilityGrid { spec: g, p: out }
}

/// Result of checking that every truth-free cell received at least one
/// estimate mean.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub covered: bool,
    /// Truth-free cells with no tuple mean inside them (row-major indices).
    pub missing: Vec<usize>,
}

/// Check the coverage assumption behind the free-probability bound.
pub fn coverage_check(domain: &DomainSpec, tuples: &[DataTuple]) -> CoverageReport {
    let truth = domain.ground_truth();
    let mut visited = vec![false; domain.grid.len()];
    for d in tuples {
        if let Ok(i) = domain.cell_of(&Point2::new(d.mu.x, d.mu.y)) {
            visited[i] = true;
        }
    }
    let missing: Vec<usize> = (0..domain.grid.len())
        .filter(|&i| !truth.occupied[i] && !visited[i])
        .collect();
    CoverageReport { covered: missing.is_empty(), missing }
}

/// Scalars entering [`free_probability_bound`].
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    /// Cell half-width (m).
    pub s: f64,
    /// Largest axis standard deviation over all recorded covariances:
    /// the square root of the maximum covariance spectral norm (m).
    pub sigma_max: f64,
}

/// Extract the bound parameters from a recorded data set.
pub fn bound_params(grid: &GridSpec, tuples: &[DataTuple]) -> Result<BoundParams> {
    if tuples.is_empty() {
        return Err(Error::Degenerate("no tuples recorded".into()));
    }
    let mut max_eig = 0.0f64;
    for d in tuples {
        let e = d.sigma.symmetric_eigenvalues();
        max_eig = max_eig.max(e[0].max(e[1]));
    }
    Ok(BoundParams { s: grid.s, sigma_max: max_eig.max(0.0).sqrt() })
}

/// Lower bound on the free probability of a covered cell: with at least one
/// estimate mean inside the cell, `p_free` exceeds
/// `1 - (1 - (1 - exp(-s^2 / 2 sigma_max^2))^2)^(1/count)`.
pub fn free_probability_bound(s: f64, sigma_max: f64, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(Error::Degenerate("bound requires at least one contribution".into()));
    }
    if !(s > 0.0) || !(sigma_max > 0.0) {
        return Err(Error::Config(format!(
            "bound requires positive scales, got s = {s}, sigma_max = {sigma_max}"
        )));
    }
    let b = 1.0 - (-(s * s) / (2.0 * sigma_max * sigma_max)).exp();
    Ok(1.0 - (1.0 - b * b).powf(1.0 / count as f64))
}
