//! Workspace geometry: bounds, obstacles, transmitters, grid indexing and
//! ground truth.  All lengths are in meters.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned workspace bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Rect { xmin, ymin, xmax, ymax }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Containment including the boundary.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Containment excluding the boundary.
    pub fn contains_strict(&self, p: &Point2<f64>) -> bool {
        p.x > self.xmin && p.x < self.xmax && p.y > self.ymin && p.y < self.ymax
    }

    /// The four corners in counter-clockwise order starting at (xmin, ymin).
    pub fn corners(&self) -> [Point2<f64>; 4] {
        [
            Point2::new(self.xmin, self.ymin),
            Point2::new(self.xmax, self.ymin),
            Point2::new(self.xmax, self.ymax),
            Point2::new(self.xmin, self.ymax),
        ]
    }
}

/// Simple polygon given by its vertices in order (no self-intersections).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point2<f64>>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2<f64>>) -> Self {
        Polygon { vertices }
    }

    /// Axis-aligned rectangle as a polygon.
    pub fn rectangle(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Polygon::new(vec![
            Point2::new(xmin, ymin),
            Point2::new(xmax, ymin),
            Point2::new(xmax, ymax),
            Point2::new(xmin, ymax),
        ])
    }

    /// Regular n-gon inscribed in the circle of radius `r` about `center`.
    /// Used to describe round obstacles with a polygonal boundary.
    pub fn regular(center: Point2<f64>, r: f64, n: usize) -> Self {
        let verts = (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
                Point2::new(center.x + r * a.cos(), center.y + r * a.sin())
            })
            .collect();
        Polygon::new(verts)
    }

    /// Unsigned area by the shoelace formula.
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        let mut twice = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            twice += v[i].x * v[j].y - v[j].x * v[i].y;
        }
        0.5 * twice.abs()
    }

    /// Even-odd (crossing parity) containment test.
    ///
    /// A half-open rule on the edges keeps the verdict deterministic when the
    /// query point is aligned with a vertex; points exactly on an edge are not
    /// guaranteed a particular side.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (vi, vj) = (&v[i], &v[j]);
            if (vi.y > p.y) != (vj.y > p.y) {
                let x_cross = vi.x + (p.y - vi.y) / (vj.y - vi.y) * (vj.x - vi.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    fn edges(&self) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

/// Signal transmitter placed outside the workspace.
///
/// Emits an isotropic signal whose strength at range r is `k * pow * r^-alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    pub pos: Point2<f64>,
    /// Medium/antenna constant (dimensionless).
    pub k: f64,
    /// Transmission power (signal units).
    pub pow: f64,
    /// Path-loss exponent, valid range [0.1, 2].
    pub alpha: f64,
}

impl Transmitter {
    /// Noise-free signal strength at `p` (requires `p != pos`).
    pub fn signal_at(&self, p: &Point2<f64>) -> f64 {
        let r = (p - self.pos).norm();
        self.k * self.pow * r.powf(-self.alpha)
    }

    /// Gradient of the signal strength with respect to `p`:
    /// `-alpha * k * pow * (p - pos) / r^(alpha + 2)`.
    pub fn signal_gradient(&self, p: &Point2<f64>) -> Vector2<f64> {
        let d = p - self.pos;
        let r = d.norm();
        d * (-self.alpha * self.k * self.pow * r.powf(-(self.alpha + 2.0)))
    }
}

/// Uniform grid that exactly tiles the workspace bounds.
///
/// Cells are squares of half-width `s` indexed row-major: cell `i = r * cols + c`
/// covers `x in [xmin + 2sc, xmin + 2s(c+1)]`, `y in [ymin + 2sr, ymin + 2s(r+1)]`,
/// so row 0 sits along the minimum-y edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Cell half-width s (m).
    pub s: f64,
    /// Workspace corner the grid is anchored to (xmin, ymin).
    pub origin: Point2<f64>,
}

impl GridSpec {
    /// Tile `bounds` with `rows x cols` square cells.
    ///
    /// Fails unless the bounds' aspect ratio matches, i.e. the cells implied by
    /// the two axes must agree to 1e-9 relative.
    pub fn tile(bounds: &Rect, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("grid must have at least one row and column".into()));
        }
        let sx = bounds.width() / (cols as f64) / 2.0;
        let sy = bounds.height() / (rows as f64) / 2.0;
        if (sx - sy).abs() > 1e-9 * sx.max(sy) {
            return Err(Error::Config(format!(
                "grid of {rows} x {cols} square cells cannot tile bounds \
                 {} x {} exactly (cell half-widths {sx} vs {sy})",
                bounds.width(),
                bounds.height()
            )));
        }
        Ok(GridSpec { rows, cols, s: sx, origin: Point2::new(bounds.xmin, bounds.ymin) })
    }

    /// Total number of cells M.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index of cell (r, c).
    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// (row, col) of a row-major index.
    pub fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    /// Center of cell `i`.
    pub fn center(&self, i: usize) -> Point2<f64> {
        let (r, c) = self.row_col(i);
        Point2::new(
            self.origin.x + (2 * c + 1) as f64 * self.s,
            self.origin.y + (2 * r + 1) as f64 * self.s,
        )
    }

    /// Axis-aligned extent of cell `i`.
    pub fn cell_rect(&self, i: usize) -> Rect {
        let (r, c) = self.row_col(i);
        let x0 = self.origin.x + 2.0 * self.s * c as f64;
        let y0 = self.origin.y + 2.0 * self.s * r as f64;
        Rect::new(x0, y0, x0 + 2.0 * self.s, y0 + 2.0 * self.s)
    }
}

/// Severity of a geometry finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    /// Violates a hard structural requirement; the workspace is unusable.
    Error,
    /// Advisory: the workspace is usable but a soft requirement is not met.
    Warning,
}

/// One finding produced by [`DomainSpec::validate_geometry`].
#[derive(Debug, Clone)]
pub struct GeometryIssue {
    pub severity: Severity,
    pub message: String,
}

/// Complete description of a workspace.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub bounds: Rect,
    pub obstacles: Vec<Polygon>,
    pub transmitters: Vec<Transmitter>,
    pub grid: GridSpec,
}

/// Binary occupancy map over a grid: ground truth or a thresholded estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap {
    pub grid: GridSpec,
    /// `true` where the cell is occupied (row-major).
    pub occupied: Vec<bool>,
}

impl BinaryMap {
    pub fn occupied_fraction(&self) -> f64 {
        let n = self.occupied.iter().filter(|&&o| o).count();
        n as f64 / self.occupied.len() as f64
    }
}

impl DomainSpec {
    /// True if `p` lies in the workspace and outside every obstacle.
    ///
    /// Points outside the bounds are an error, not merely "not free".
    pub fn is_free(&self, p: &Point2<f64>) -> Result<bool> {
        if !self.bounds.contains(p) {
            return Err(Error::OutOfDomain(p.x, p.y));
        }
        Ok(!self.obstacles.iter().any(|o| o.contains(p)))
    }

    /// Row-major index of the grid cell containing `p`.
    ///
    /// Points on shared cell edges go to the cell with the larger index along
    /// that axis; points on the workspace's max-x/max-y boundary are clamped
    /// into the last cell.
    pub fn cell_of(&self, p: &Point2<f64>) -> Result<usize> {
        if !self.bounds.contains(p) {
            return Err(Error::OutOfDomain(p.x, p.y));
        }
        let g = &self.grid;
        let w = 2.0 * g.s;
        let c = (((p.x - g.origin.x) / w).floor() as usize).min(g.cols - 1);
        let r = (((p.y - g.origin.y) / w).floor() as usize).min(g.rows - 1);
        Ok(g.index(r, c))
    }

    /// Percentage of the bounds' area covered by obstacles.
    ///
    /// Valid for pairwise-disjoint obstacles (the sum of shoelace areas).
    pub fn pao(&self) -> f64 {
        let occupied: f64 = self.obstacles.iter().map(|o| o.area()).sum();
        100.0 * occupied / self.bounds.area()
    }

    /// Rasterize the workspace: a cell is occupied iff its center lies inside
    /// an obstacle.
    pub fn ground_truth(&self) -> BinaryMap {
        let g = self.grid;
        let occupied = (0..g.len())
            .map(|i| {
                let c = g.center(i);
                self.obstacles.iter().any(|o| o.contains(&c))
            })
            .collect();
        BinaryMap { grid: g, occupied }
    }

    /// Structural checks on the workspace geometry.
    ///
    /// Errors: obstacle vertices not strictly inside the bounds, overlapping
    /// obstacles, transmitters not strictly outside the bounds, a transmitter
    /// pair whose joining segment meets the bounds, or fewer than two
    /// transmitters.  Warning: an obstacle closer to the workspace boundary
    /// than twice the robot sensing diameter (`4 * sensing_radius`).
    pub fn validate_geometry(&self, sensing_radius: f64) -> Vec<GeometryIssue> {
        let mut issues = Vec::new();
        let err = |m: String| GeometryIssue { severity: Severity::Error, message: m };
        let warn = |m: String| GeometryIssue { severity: Severity::Warning, message: m };

        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.vertices.len() < 3 {
                issues.push(err(format!("obstacle {i} has fewer than 3 vertices")));
                continue;
            }
            if ob.vertices.iter().any(|v| !self.bounds.contains_strict(v)) {
                issues.push(err(format!("obstacle {i} is not strictly inside the bounds")));
            }
        }

        for i in 0..self.obstacles.len() {
            for j in (i + 1)..self.obstacles.len() {
                if polygons_intersect(&self.obstacles[i], &self.obstacles[j]) {
                    issues.push(err(format!("obstacles {i} and {j} overlap")));
                }
            }
        }

        if self.transmitters.len() < 2 {
            issues.push(err("at least two transmitters are required".into()));
        }
        for (i, t) in self.transmitters.iter().enumerate() {
            if self.bounds.contains(&t.pos) {
                issues.push(err(format!("transmitter {i} is not strictly outside the bounds")));
            }
            if t.alpha < 0.1 || t.alpha > 2.0 {
                issues.push(err(format!(
                    "transmitter {i} path-loss exponent {} outside [0.1, 2]",
                    t.alpha
                )));
            }
            if t.k * t.pow <= 0.0 {
                issues.push(err(format!("transmitter {i} has non-positive gain k*pow")));
            }
        }
        for i in 0..self.transmitters.len() {
            for j in (i + 1)..self.transmitters.len() {
                let (a, b) = (self.transmitters[i].pos, self.transmitters[j].pos);
                if segment_intersects_rect(&a, &b, &self.bounds) {
                    issues.push(err(format!(
                        "segment joining transmitters {i} and {j} crosses the workspace"
                    )));
                }
            }
        }

        // Soft requirement: leave room for the swarm to pass between obstacles
        // and the workspace boundary.
        let min_gap = 2.0 * (2.0 * sensing_radius);
        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.vertices.len() < 3 {
                continue;
            }
            let d = polygon_to_rect_boundary_distance(ob, &self.bounds);
            if d < min_gap {
                issues.push(warn(format!(
                    "obstacle {i} is {d:.3} m from the workspace boundary; \
                     less than the {min_gap:.3} m clearance rule"
                )));
            }
        }

        issues
    }

    /// True if no [`Severity::Error`] finding is present.
    pub fn geometry_ok(&self, sensing_radius: f64) -> bool {
        self.validate_geometry(sensing_radius)
            .iter()
            .all(|i| i.severity != Severity::Error)
    }
}

// ---------------------------------------------------------------------------
// Plain geometry helpers.
// ---------------------------------------------------------------------------

fn orient(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection test (touching counts).
pub fn segments_intersect(
    a: &Point2<f64>,
    b: &Point2<f64>,
    c: &Point2<f64>,
    d: &Point2<f64>,
) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Does the closed segment `[a, b]` meet the closed rectangle?
pub fn segment_intersects_rect(a: &Point2<f64>, b: &Point2<f64>, r: &Rect) -> bool {
    if r.contains(a) || r.contains(b) {
        return true;
    }
    let c = r.corners();
    for i in 0..4 {
        if segments_intersect(a, b, &c[i], &c[(i + 1) % 4]) {
            return true;
        }
    }
    false
}

fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    let proj = a + ab * t;
    (p - proj).norm()
}

fn segment_segment_distance(
    a: &Point2<f64>,
    b: &Point2<f64>,
    c: &Point2<f64>,
    d: &Point2<f64>,
) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Do two simple polygons share any area or boundary?
pub fn polygons_intersect(p: &Polygon, q: &Polygon) -> bool {
    for (a, b) in p.edges() {
        for (c, d) in q.edges() {
            if segments_intersect(&a, &b, &c, &d) {
                return true;
            }
        }
    }
    p.contains(&q.vertices[0]) || q.contains(&p.vertices[0])
}

/// Shortest distance from a polygon's boundary to the rectangle's boundary.
fn polygon_to_rect_boundary_distance(p: &Polygon, r: &Rect) -> f64 {
    let c = r.corners();
    let mut best = f64::INFINITY;
    for (a, b) in p.edges() {
        for i in 0..4 {
            best = best.min(segment_segment_distance(&a, &b, &c[i], &c[(i + 1) % 4]));
        }
    }
    best
}

/// Velocity/displacement alias used across the simulation modules.
pub type Vec2 = Vector2<f64>;

// ---------------------------------------------------------------------------
// Serialized form.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TransmitterFile {
    pos: [f64; 2],
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_pow")]
    pow: f64,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_k() -> f64 {
    1.0
}
fn default_pow() -> f64 {
    10.0
}
fn default_alpha() -> f64 {
    2.0
}

#[derive(Debug, Serialize, Deserialize)]
struct GridFile {
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DomainFile {
    bounds: [f64; 4],
    #[serde(default)]
    obstacles: Vec<Vec<[f64; 2]>>,
    transmitters: Vec<TransmitterFile>,
    grid: GridFile,
}

impl DomainSpec {
    /// Parse a workspace description from its JSON form.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let f: DomainFile = serde_json::from_str(text)?;
        let bounds = Rect::new(f.bounds[0], f.bounds[1], f.bounds[2], f.bounds[3]);
        if bounds.width() <= 0.0 || bounds.height() <= 0.0 {
            return Err(Error::Config("bounds must have positive extent".into()));
        }
        let obstacles = f
            .obstacles
            .into_iter()
            .map(|poly| Polygon::new(poly.into_iter().map(|v| Point2::new(v[0], v[1])).collect()))
            .collect();
        let transmitters = f
            .transmitters
            .into_iter()
            .map(|t| Transmitter {
                pos: Point2::new(t.pos[0], t.pos[1]),
                k: t.k,
                pow: t.pow,
                alpha: t.alpha,
            })
            .collect();
        let grid = GridSpec::tile(&bounds, f.grid.rows, f.grid.cols)?;
        Ok(DomainSpec { bounds, obstacles, transmitters, grid })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// JSON form accepted by [`DomainSpec::from_json_str`].
    pub fn to_json_string(&self) -> String {
        let f = DomainFile {
            bounds: [self.bounds.xmin, self.bounds.ymin, self.bounds.xmax, self.bounds.ymax],
            obstacles: self
                .obstacles
                .iter()
                .map(|o| o.vertices.iter().map(|v| [v.x, v.y]).collect())
                .collect(),
            transmitters: self
                .transmitters
                .iter()
                .map(|t| TransmitterFile { pos: [t.pos.x, t.pos.y], k: t.k, pow: t.pow, alpha: t.alpha })
                .collect(),
            grid: GridFile { rows: self.grid.rows, cols: self.grid.cols },
        };
        serde_json::to_string_pretty(&f).expect("domain serialization cannot fail")
    }
}
