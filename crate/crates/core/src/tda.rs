//! Topology of the estimated map: a filtered flag complex over the grid's
//! 8-connectivity graph, its persistence barcode, Betti numbers at a
//! threshold, and the barcode-driven choice of the occupancy cutoff.

use crate::domain::BinaryMap;
use crate::error::{Error, Result};
use crate::grid::ProbabilityGrid;

/// Deaths at or above this filtration value count as persistent features:
/// holes carved by true obstacles only fill when fully-occupied cells enter.
pub const PERSISTENT_DEATH: f64 = 1.0;

/// Flag complex (dimension <= 2) on the grid's 8-connectivity graph, filtered
/// by per-vertex occupancy values; a simplex enters at its vertex maximum.
#[derive(Debug, Clone)]
pub struct FilteredComplex {
    pub rows: usize,
    pub cols: usize,
    /// Occupancy value per vertex (row-major grid cells).
    pub vertex_value: Vec<f64>,
    /// Edges as vertex pairs, canonically enumerated row-major with the
    /// east, north, north-east, north-west neighbors of each vertex.
    pub edges: Vec<(u32, u32)>,
    /// 3-cliques; every one lies inside a unique 2x2 block of cells.
    pub triangles: Vec<[u32; 3]>,
}

/// One bar: a feature of dimension `dim` alive on `[birth, death)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub dim: u8,
    pub birth: f64,
    /// `f64::INFINITY` for features that never die.
    pub death: f64,
}

/// Persistence intervals sorted by (dim, birth, death).
#[derive(Debug, Clone, Default)]
pub struct Barcode {
    pub intervals: Vec<Interval>,
}

/// Rank of homology in dimensions 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BettiNumbers {
    pub b0: usize,
    pub b1: usize,
}

/// Occupancy cutoff chosen from a barcode.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdSelection {
    /// Free-probability cutoff `1 - delta_cls`.
    pub gamma: f64,
    /// Filtration value separating transient features from persistent ones.
    pub delta_cls: f64,
    /// Persistent connected components.
    pub arrows0: usize,
    /// Persistent holes.
    pub arrows1: usize,
}

impl FilteredComplex {
    /// Build the filtered complex from per-cell occupancy values.
    pub fn from_values(rows: usize, cols: usize, vertex_value: Vec<f64>) -> Self {
        assert_eq!(vertex_value.len(), rows * cols, "value count must match the grid");
        let idx = |r: usize, c: usize| (r * cols + c) as u32;
        let mut edges = Vec::with_capacity(4 * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = idx(r, c);
                if c + 1 < cols {
                    edges.push((v, idx(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((v, idx(r + 1, c)));
                    if c + 1 < cols {
                        edges.push((v, idx(r + 1, c + 1)));
                    }
                    if c > 0 {
                        edges.push((v, idx(r + 1, c - 1)));
                    }
                }
            }
        }
        let mut triangles = Vec::new();
        if rows > 1 && cols > 1 {
            triangles.reserve(4 * (rows - 1) * (cols - 1));
            for r in 0..rows - 1 {
                for c in 0..cols - 1 {
                    let a = idx(r, c);
                    let b = idx(r, c + 1);
                    let d = idx(r + 1, c);
                    let e = idx(r + 1, c + 1);
                    triangles.push([a, b, d]);
                    triangles.push([a, b, e]);
                    triangles.push([a, d, e]);
                    triangles.push([b, d, e]);
                }
            }
        }
        FilteredComplex { rows, cols, vertex_value, edges, triangles }
    }

    fn edge_value(&self, e: usize) -> f64 {
        let (u, v) = self.edges[e];
        self.vertex_value[u as usize].max(self.vertex_value[v as usize])
    }

    fn triangle_value(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        self.vertex_value[a as usize]
            .max(self.vertex_value[b as usize])
            .max(self.vertex_value[c as usize])
    }
}

/// Filtration of an estimated map: occupancy value `1 - p_free` per cell.
pub fn occupancy_filtration(pg: &ProbabilityGrid) -> FilteredComplex {
    let values = pg.p.iter().map(|p| 1.0 - p).collect();
    FilteredComplex::from_values(pg.spec.rows, pg.spec.cols, values)
}

/// Union-find that tracks each component's oldest vertex (value, index).
struct ElderUnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    elder: Vec<(f64, u32)>,
}

impl ElderUnionFind {
    fn new(values: &[f64]) -> Self {
        ElderUnionFind {
            parent: (0..values.len() as u32).collect(),
            size: vec![1; values.len()],
            elder: values.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    /// Merge the components of `a` and `b`; returns `None` if already joined,
    /// otherwise the elder pair of the component that dies (the younger one).
    fn union(&mut self, a: u32, b: u32) -> Option<(f64, u32)> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return None;
        }
        let (keep, drop) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[drop as usize] = keep;
        self.size[keep as usize] += self.size[drop as usize];
        let ea = self.elder[keep as usize];
        let eb = self.elder[drop as usize];
        let (old, young) = if ea <= eb { (ea, eb) } else { (eb, ea) };
        self.elder[keep as usize] = old;
        Some(young)
    }
}

/// Dense GF(2) column over edge ranks with a cached top bit.
struct BitColumn {
    words: Vec<u64>,
}

impl BitColumn {
    fn new(words: usize) -> Self {
        BitColumn { words: vec![0; words] }
    }

    fn set(&mut self, bit: usize) {
        self.words[bit / 64] ^= 1 << (bit % 64);
    }

    fn xor_in(&mut self, other: &BitColumn) {
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w ^= o;
        }
    }

    fn top_bit(&self) -> Option<usize> {
        for (i, &w) in self.words.iter().enumerate().rev() {
            if w != 0 {
                return Some(i * 64 + 63 - w.leading_zeros() as usize);
            }
        }
        None
    }
}

/// Persistence barcode of the filtration in dimensions 0 and 1.
///
/// Simplices are ordered by (value, dimension, enumeration index).  Components
/// follow the elder rule through a union-find over the edges; holes come from
/// the standard mod-2 reduction of the triangle boundary matrix, pairing each
/// independent triangle with the cycle-creating edge it fills.  Zero-length
/// intervals are discarded; unpaired cycle edges yield infinite bars.
pub fn persistence(fc: &FilteredComplex) -> Barcode {
    let ne = fc.edges.len();
    let nt = fc.triangles.len();

    // Filtration order within each dimension (value, then enumeration index).
    let mut edge_order: Vec<u32> = (0..ne as u32).collect();
    edge_order.sort_by(|&a, &b| {
        fc.edge_value(a as usize)
            .partial_cmp(&fc.edge_value(b as usize))
            .expect("filtration values must not be NaN")
            .then(a.cmp(&b))
    });
    let mut edge_rank = vec![0u32; ne];
    for (rank, &e) in edge_order.iter().enumerate() {
        edge_rank[e as usize] = rank as u32;
    }
    let mut tri_order: Vec<u32> = (0..nt as u32).collect();
    tri_order.sort_by(|&a, &b| {
        fc.triangle_value(a as usize)
            .partial_cmp(&fc.triangle_value(b as usize))
            .expect("filtration values must not be NaN")
            .then(a.cmp(&b))
    });

    let mut intervals = Vec::new();

    // Dimension 0: elder rule over the growing graph.
    let mut uf = ElderUnionFind::new(&fc.vertex_value);
    let mut edge_positive = vec![false; ne];
    for &e in &edge_order {
        let (u, v) = fc.edges[e as usize];
        match uf.union(u, v) {
            None => edge_positive[e as usize] = true,
            Some((birth, _)) => {
                let death = fc.edge_value(e as usize);
                if death > birth {
                    intervals.push(Interval { dim: 0, birth, death });
                }
            }
        }
    }
    for v in 0..fc.vertex_value.len() as u32 {
        if uf.find(v) == v {
            let (birth, _) = uf.elder[v as usize];
            intervals.push(Interval { dim: 0, birth, death: f64::INFINITY });
        }
    }

    // Dimension 1: reduce triangle boundaries over the edge ranks.
    let edge_id: std::collections::HashMap<(u32, u32), u32> = fc
        .edges
        .iter()
        .enumerate()
        .map(|(i, &uv)| (uv, i as u32))
        .collect();
    let words = ne.div_ceil(64);
    let mut owner_of_low: Vec<Option<u32>> = vec![None; ne];
    let mut owned_columns: Vec<BitColumn> = Vec::new();
    for &t in &tri_order {
        let [a, b, c] = fc.triangles[t as usize];
        let mut col = BitColumn::new(words);
        for uv in [(a, b), (a, c), (b, c)] {
            let e = edge_id[&uv];
            col.set(edge_rank[e as usize] as usize);
        }
        while let Some(low) = col.top_bit() {
            match owner_of_low[low] {
                Some(owner) => col.xor_in(&owned_columns[owner as usize]),
                None => {
                    owner_of_low[low] = Some(owned_columns.len() as u32);
                    owned_columns.push(col);
                    let e = edge_order[low] as usize;
                    debug_assert!(edge_positive[e], "a paired edge must create a cycle");
                    let birth = fc.edge_value(e);
                    let death = fc.triangle_value(t as usize);
                    if death > birth {
                        intervals.push(Interval { dim: 1, birth, death });
                    }
                    break;
                }
            }
        }
    }
    for e in 0..ne {
        if edge_positive[e] && owner_of_low[edge_rank[e] as usize].is_none() {
            intervals.push(Interval {
                dim: 1,
                birth: fc.edge_value(e),
                death: f64::INFINITY,
            });
        }
    }

    intervals.sort_by(|a, b| {
        (a.dim, a.birth, a.death)
            .partial_cmp(&(b.dim, b.birth, b.death))
            .expect("intervals must not contain NaN")
    });
    Barcode { intervals }
}

impl Barcode {
    /// Number of dimension-`dim` features alive at `delta` (birth <= delta < death).
    pub fn alive_at(&self, dim: u8, delta: f64) -> usize {
        self.intervals
            .iter()
            .filter(|iv| iv.dim == dim && iv.birth <= delta && delta < iv.death)
            .count()
    }
}

/// Betti numbers of the sublevel complex at `delta` (simplex values <= delta).
///
/// `b0` comes from a union-find; `b1` from the Euler characteristic corrected
/// by the rank of second homology, which equals the number of fully included
/// 2x2 blocks: every triangle lies in exactly one block, so the independent
/// 2-cycles are precisely the four-triangle boundaries of filled blocks.
pub fn betti_at(fc: &FilteredComplex, delta: f64) -> BettiNumbers {
    let nv = fc.vertex_value.len();
    let mut uf = ElderUnionFind::new(&fc.vertex_value);
    let mut e_in = 0usize;
    for (e, &(u, v)) in fc.edges.iter().enumerate() {
        if fc.edge_value(e) <= delta {
            e_in += 1;
            uf.union(u, v);
        }
    }
    let mut v_in = 0usize;
    let mut b0 = 0usize;
    for v in 0..nv {
        if fc.vertex_value[v] <= delta {
            v_in += 1;
            if uf.find(v as u32) == v as u32 {
                b0 += 1;
            }
        }
    }
    let f_in = (0..fc.triangles.len()).filter(|&t| fc.triangle_value(t) <= delta).count();
    let mut k4 = 0usize;
    if fc.rows > 1 && fc.cols > 1 {
        for r in 0..fc.rows - 1 {
            for c in 0..fc.cols - 1 {
                let m = fc.vertex_value[r * fc.cols + c]
                    .max(fc.vertex_value[r * fc.cols + c + 1])
                    .max(fc.vertex_value[(r + 1) * fc.cols + c])
                    .max(fc.vertex_value[(r + 1) * fc.cols + c + 1]);
                if m <= delta {
                    k4 += 1;
                }
            }
        }
    }
    let b1 = (e_in + b0 + k4) as i64 - (v_in + f_in) as i64;
    debug_assert!(b1 >= 0, "negative first Betti number");
    BettiNumbers { b0, b1: b1.max(0) as usize }
}

/// Pick the occupancy cutoff separating persistent structure from noise.
///
/// Features dying at or above [`PERSISTENT_DEATH`] (or never) are persistent;
/// the classification value is the latest transient death, falling back to the
/// latest birth when every feature persists.  The returned cutoff on free
/// probability is its complement.
pub fn select_threshold(barcode: &Barcode) -> Result<ThresholdSelection> {
    if barcode.intervals.is_empty() {
        return Err(Error::Degenerate("empty barcode: nothing to classify".into()));
    }
    let mut delta_cls = f64::NEG_INFINITY;
    let mut arrows0 = 0usize;
    let mut arrows1 = 0usize;
    for iv in &barcode.intervals {
        if iv.death >= PERSISTENT_DEATH {
            match iv.dim {
                0 => arrows0 += 1,
                _ => arrows1 += 1,
            }
        } else {
            delta_cls = delta_cls.max(iv.death);
        }
    }
    if !delta_cls.is_finite() {
        delta_cls = barcode
            .intervals
            .iter()
            .map(|iv| iv.birth)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(ThresholdSelection { gamma: 1.0 - delta_cls, delta_cls, arrows0, arrows1 })
}

/// Binary map from free probabilities: free exactly where `p > gamma`.
pub fn threshold_map(pg: &ProbabilityGrid, gamma: f64) -> BinaryMap {
    BinaryMap { grid: pg.spec, occupied: pg.p.iter().map(|&p| !(p > gamma)).collect() }
}

/// Betti numbers of the free region of a binary map under 8-connectivity.
pub fn mask_betti(map: &BinaryMap) -> BettiNumbers {
    let values: Vec<f64> =
        map.occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let fc = FilteredComplex::from_values(map.grid.rows, map.grid.cols, values);
    betti_at(&fc, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GridSpec, Rect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pgrid(rows: usize, cols: usize, p: Vec<f64>) -> ProbabilityGrid {
        let w = 0.04 * cols as f64;
        let h = 0.04 * rows as f64;
        let spec = GridSpec::tile(&Rect::new(0.0, 0.0, w, h), rows, cols).unwrap();
        ProbabilityGrid { spec, p }
    }

    #[test]
    fn complex_counts_match_hand_enumeration() {
        let fc = FilteredComplex::from_values(2, 2, vec![0.0; 4]);
        assert_eq!(fc.edges.len(), 6);
        assert_eq!(fc.triangles.len(), 4);
        let fc3 = FilteredComplex::from_values(3, 3, vec![0.0; 9]);
        assert_eq!(fc3.edges.len(), 20);
        assert_eq!(fc3.triangles.len(), 16);
        // A 1xN strip has no triangles; a single cell has nothing but itself.
        let strip = FilteredComplex::from_values(1, 5, vec![0.0; 5]);
        assert_eq!(strip.edges.len(), 4);
        assert!(strip.triangles.is_empty());
        let dot = FilteredComplex::from_values(1, 1, vec![0.3]);
        assert!(dot.edges.is_empty() && dot.triangles.is_empty());
        let bc = persistence(&dot);
        assert_eq!(bc.intervals.len(), 1);
        assert_eq!((bc.intervals[0].dim, bc.intervals[0].birth), (0, 0.3));
        assert!(bc.intervals[0].death.is_infinite());
    }

    #[test]
    fn face_values_never_exceed_coface_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let rows = rng.gen_range(1..=8);
            let cols = rng.gen_range(1..=8);
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect();
            let fc = FilteredComplex::from_values(rows, cols, values);
            for (e, &(u, v)) in fc.edges.iter().enumerate() {
                let ev = fc.edge_value(e);
                assert!(fc.vertex_value[u as usize] <= ev);
                assert!(fc.vertex_value[v as usize] <= ev);
            }
            let edge_id: std::collections::HashMap<(u32, u32), usize> =
                fc.edges.iter().enumerate().map(|(i, &uv)| (uv, i)).collect();
            for t in 0..fc.triangles.len() {
                let [a, b, c] = fc.triangles[t];
                let tv = fc.triangle_value(t);
                for uv in [(a, b), (a, c), (b, c)] {
                    assert!(fc.edge_value(edge_id[&uv]) <= tv, "face above coface");
                }
            }
        }
    }

    #[test]
    fn euler_characteristic_accounts_for_block_2_cycles() {
        // V - E + F equals b0 - b1 + b2, where the rank of second homology is
        // the number of fully included 2x2 blocks; the block term is essential.
        let fc = FilteredComplex::from_values(2, 2, vec![0.0; 4]);
        let b = betti_at(&fc, 1.0);
        assert_eq!(b, BettiNumbers { b0: 1, b1: 0 });
        // chi = 4 - 6 + 4 = 2 = b0 - b1 + b2 forces b2 = 1 here.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let rows = rng.gen_range(2..=7);
            let cols = rng.gen_range(2..=7);
            let values: Vec<f64> = (0..rows * cols)
                .map(|_| [0.0, 0.4, 0.8][rng.gen_range(0..3)])
                .collect();
            let fc = FilteredComplex::from_values(rows, cols, values.clone());
            for &delta in &[0.2, 0.4, 0.6, 0.8, 1.0] {
                let v = values.iter().filter(|&&x| x <= delta).count() as i64;
                let e = (0..fc.edges.len()).filter(|&e| fc.edge_value(e) <= delta).count() as i64;
                let f =
                    (0..fc.triangles.len()).filter(|&t| fc.triangle_value(t) <= delta).count()
                        as i64;
                let mut k4 = 0i64;
                for r in 0..rows - 1 {
                    for c in 0..cols - 1 {
                        let m = values[r * cols + c]
                            .max(values[r * cols + c + 1])
                            .max(values[(r + 1) * cols + c])
                            .max(values[(r + 1) * cols + c + 1]);
                        if m <= delta {
                            k4 += 1;
                        }
                    }
                }
                let b = betti_at(&fc, delta);
                assert_eq!(v - e + f, b.b0 as i64 - b.b1 as i64 + k4);
            }
        }
    }

    #[test]
    fn ring_grid_yields_one_component_and_one_hole() {
        // Free ring (p = 0.75, so f = 0.25 exactly) around an occupied center.
        let mut p = vec![0.75; 9];
        p[4] = 0.0;
        let fc = occupancy_filtration(&pgrid(3, 3, p));
        let bc = persistence(&fc);
        assert_eq!(bc.intervals.len(), 2, "{:?}", bc.intervals);
        let c = bc.intervals[0];
        assert_eq!((c.dim, c.birth), (0, 0.25));
        assert!(c.death.is_infinite());
        let h = bc.intervals[1];
        assert_eq!((h.dim, h.birth, h.death), (1, 0.25, 1.0));

        let mid = betti_at(&fc, 0.5);
        assert_eq!(mid, BettiNumbers { b0: 1, b1: 1 });
        let full = betti_at(&fc, 1.0);
        assert_eq!(full, BettiNumbers { b0: 1, b1: 0 });
        let empty = betti_at(&fc, 0.1);
        assert_eq!(empty, BettiNumbers { b0: 0, b1: 0 });
    }

    #[test]
    fn component_merge_follows_elder_rule() {
        let fc = FilteredComplex::from_values(1, 3, vec![0.1, 0.9, 0.2]);
        let bc = persistence(&fc);
        assert_eq!(bc.intervals.len(), 2, "{:?}", bc.intervals);
        assert_eq!(bc.intervals[0].birth, 0.1);
        assert!(bc.intervals[0].death.is_infinite());
        assert_eq!(
            (bc.intervals[1].dim, bc.intervals[1].birth, bc.intervals[1].death),
            (0, 0.2, 0.9)
        );
    }

    /// Rank of a GF(2) matrix given as bit rows.
    fn rank_gf2(mut rows: Vec<Vec<u64>>, width: usize) -> usize {
        let mut rank = 0;
        for bit in 0..width {
            let (w, m) = (bit / 64, 1u64 << (bit % 64));
            if let Some(p) = (rank..rows.len()).find(|&i| rows[i][w] & m != 0) {
                rows.swap(rank, p);
                for i in 0..rows.len() {
                    if i != rank && rows[i][w] & m != 0 {
                        let (a, b) = if i < rank {
                            let (lo, hi) = rows.split_at_mut(rank);
                            (&mut lo[i], &hi[0])
                        } else {
                            let (lo, hi) = rows.split_at_mut(i);
                            (&mut hi[0], &lo[rank])
                        };
                        for (x, y) in a.iter_mut().zip(b) {
                            *x ^= y;
                        }
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    /// Betti numbers at `delta` via boundary-matrix ranks over GF(2).
    fn betti_by_elimination(fc: &FilteredComplex, delta: f64) -> BettiNumbers {
        let verts: Vec<usize> =
            (0..fc.vertex_value.len()).filter(|&v| fc.vertex_value[v] <= delta).collect();
        let vpos: std::collections::HashMap<usize, usize> =
            verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let edges: Vec<usize> =
            (0..fc.edges.len()).filter(|&e| fc.edge_value(e) <= delta).collect();
        let epos: std::collections::HashMap<usize, usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let tris: Vec<usize> =
            (0..fc.triangles.len()).filter(|&t| fc.triangle_value(t) <= delta).collect();

        let vwords = verts.len().div_ceil(64).max(1);
        let d1: Vec<Vec<u64>> = edges
            .iter()
            .map(|&e| {
                let mut row = vec![0u64; vwords];
                let (u, v) = fc.edges[e];
                for x in [u as usize, v as usize] {
                    let i = vpos[&x];
                    row[i / 64] |= 1 << (i % 64);
                }
                row
            })
            .collect();
        let ewords = edges.len().div_ceil(64).max(1);
        let d2: Vec<Vec<u64>> = tris
            .iter()
            .map(|&t| {
                let mut row = vec![0u64; ewords];
                let [a, b, c] = fc.triangles[t];
                for pair in [(a, b), (a, c), (b, c)] {
                    let e = fc.edges.iter().position(|&x| x == pair).unwrap();
                    let i = epos[&e];
                    row[i / 64] |= 1 << (i % 64);
                }
                row
            })
            .collect();
        let r1 = rank_gf2(d1, verts.len());
        let r2 = rank_gf2(d2, edges.len());
        BettiNumbers { b0: verts.len() - r1, b1: edges.len() - r1 - r2 }
    }

    #[test]
    fn betti_matches_rank_elimination_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
        for case in 0..60 {
            let rows = rng.gen_range(2..=6);
            let cols = rng.gen_range(2..=6);
            let values: Vec<f64> =
                (0..rows * cols).map(|_| levels[rng.gen_range(0..levels.len())]).collect();
            let fc = FilteredComplex::from_values(rows, cols, values);
            for &delta in &[0.1, 0.25, 0.3, 0.5, 0.8, 1.0] {
                let fast = betti_at(&fc, delta);
                let oracle = betti_by_elimination(&fc, delta);
                assert_eq!(fast, oracle, "case {case}, delta {delta}");
            }
        }
    }

    #[test]
    fn barcode_counts_agree_with_betti_at_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let levels = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for case in 0..60 {
            let rows = rng.gen_range(2..=7);
            let cols = rng.gen_range(2..=7);
            let values: Vec<f64> =
                (0..rows * cols).map(|_| levels[rng.gen_range(0..levels.len())]).collect();
            let fc = FilteredComplex::from_values(rows, cols, values.clone());
            let bc = persistence(&fc);
            for &delta in &[0.0, 0.1, 0.2, 0.3, 0.5, 0.6, 0.75, 0.9, 1.0] {
                let b = betti_at(&fc, delta);
                assert_eq!(bc.alive_at(0, delta), b.b0, "case {case} delta {delta} b0");
                assert_eq!(bc.alive_at(1, delta), b.b1, "case {case} delta {delta} b1");
            }
        }
    }

    #[test]
    fn barcode_intervals_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rows = rng.gen_range(2..=8);
            let cols = rng.gen_range(2..=8);
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect();
            let fc = FilteredComplex::from_values(rows, cols, values);
            let bc = persistence(&fc);
            let inf0 =
                bc.intervals.iter().filter(|iv| iv.dim == 0 && iv.death.is_infinite()).count();
            assert_eq!(inf0, 1, "a connected grid has one essential component");
            for iv in &bc.intervals {
                assert!(iv.birth.is_finite());
                assert!(iv.birth < iv.death, "zero-length bars must be dropped: {iv:?}");
            }
            let sorted = bc.intervals.windows(2).all(|p| {
                (p[0].dim, p[0].birth, p[0].death) <= (p[1].dim, p[1].birth, p[1].death)
            });
            assert!(sorted);
        }
    }

    #[test]
    fn threshold_selection_examples() {
        // One persistent hole and one transient hole.
        let bc = Barcode {
            intervals: vec![
                Interval { dim: 1, birth: 0.2, death: f64::INFINITY },
                Interval { dim: 1, birth: 0.2, death: 0.6 },
            ],
        };
        let sel = select_threshold(&bc).unwrap();
        assert_eq!(sel.delta_cls, 0.6);
        assert!((sel.gamma - 0.4).abs() < 1e-15);
        assert_eq!((sel.arrows0, sel.arrows1), (0, 1));

        // Clean ring: the hole dies exactly at full occupancy and persists.
        let ring = Barcode {
            intervals: vec![
                Interval { dim: 0, birth: 0.2, death: f64::INFINITY },
                Interval { dim: 1, birth: 0.2, death: 1.0 },
            ],
        };
        let sel = select_threshold(&ring).unwrap();
        assert_eq!((sel.arrows0, sel.arrows1), (1, 1));
        assert_eq!(sel.delta_cls, 0.2, "falls back to the latest birth");
        assert!((sel.gamma - 0.8).abs() < 1e-15);

        // Mixed transients: the latest transient death wins.
        let mixed = Barcode {
            intervals: vec![
                Interval { dim: 0, birth: 0.0, death: f64::INFINITY },
                Interval { dim: 1, birth: 0.1, death: 0.4 },
                Interval { dim: 1, birth: 0.15, death: 1.0 },
                Interval { dim: 1, birth: 0.3, death: 0.95 },
            ],
        };
        let sel = select_threshold(&mixed).unwrap();
        assert_eq!(sel.delta_cls, 0.95);
        assert!((sel.gamma - 0.05).abs() < 1e-15);

        assert!(select_threshold(&Barcode::default()).is_err());
    }

    #[test]
    fn threshold_map_is_strict() {
        let pg = pgrid(1, 3, vec![0.4, 0.5, 0.6]);
        let map = threshold_map(&pg, 0.5);
        assert_eq!(map.occupied, vec![true, true, false]);
    }

    #[test]
    fn mask_betti_examples() {
        let spec = GridSpec::tile(&Rect::new(0.0, 0.0, 0.2, 0.2), 5, 5).unwrap();
        let all_free = BinaryMap { grid: spec, occupied: vec![false; 25] };
        assert_eq!(mask_betti(&all_free), BettiNumbers { b0: 1, b1: 0 });

        // Occupied center cell inside a free ring.
        let mut ring = vec![true; 25];
        for r in 1..4 {
            for c in 1..4 {
                ring[spec.index(r, c)] = (r, c) == (2, 2);
            }
        }
        let ring_map = BinaryMap { grid: spec, occupied: ring };
        assert_eq!(mask_betti(&ring_map), BettiNumbers { b0: 1, b1: 1 });

        // Diagonal cells touch under 8-connectivity; separated ones do not.
        let mut diag = vec![true; 25];
        diag[spec.index(0, 0)] = false;
        diag[spec.index(1, 1)] = false;
        let diag_map = BinaryMap { grid: spec, occupied: diag };
        assert_eq!(mask_betti(&diag_map).b0, 1);

        let mut split = vec![true; 25];
        split[spec.index(0, 0)] = false;
        split[spec.index(0, 2)] = false;
        let split_map = BinaryMap { grid: spec, occupied: split };
        assert_eq!(mask_betti(&split_map).b0, 2);
    }
}
