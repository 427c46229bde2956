//! Dyadic cube geometry and the stopping-time decomposition of a cell set.
//!
//! All measures here are integer cell counts times `h^dim`, so the covering
//! and density conclusions hold with zero tolerance. The splitting rule:
//! divide a cube while its set density is below `alpha`, keep it once the
//! density reaches `alpha`; recursion only enters children that meet the set,
//! and bottoms out at single cells (density 0 or 1).

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SetIndicator};

/// An axis-aligned dyadic cube of the computational box. `level` 0 is the box
/// itself; children halve the side. Corners align with grid nodes for every
/// reachable level because `n_cells` is a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DyadicCube {
    pub level: u32,
    /// Per-axis position among the `2^level` cubes of this level.
    pub coords: [u32; 2],
}

impl DyadicCube {
    pub fn root() -> Self {
        DyadicCube { level: 0, coords: [0, 0] }
    }

    pub fn half_side(&self, spec: &GridSpec) -> f64 {
        spec.half_width * (0.5f64).powi(self.level as i32)
    }

    pub fn center(&self, spec: &GridSpec) -> [f64; 2] {
        let side = 2.0 * self.half_side(spec);
        let f = |c: u32| -spec.half_width + (c as f64 + 0.5) * side;
        [
            f(self.coords[0]),
            if spec.dim == 1 { 0.0 } else { f(self.coords[1]) },
        ]
    }

    /// Cells per axis covered by this cube.
    pub fn cells_per_side(&self, spec: &GridSpec) -> usize {
        spec.n_cells >> self.level
    }

    /// Total cell count of the cube.
    pub fn cell_count(&self, spec: &GridSpec) -> usize {
        let c = self.cells_per_side(spec);
        if spec.dim == 1 {
            c
        } else {
            c * c
        }
    }

    pub fn measure(&self, spec: &GridSpec) -> f64 {
        self.cell_count(spec) as f64 * spec.cell_measure()
    }

    /// Low cell corner in cell indices.
    pub fn cell_lo(&self, spec: &GridSpec) -> [usize; 2] {
        let c = self.cells_per_side(spec);
        [
            self.coords[0] as usize * c,
            if spec.dim == 1 { 0 } else { self.coords[1] as usize * c },
        ]
    }

    pub fn parent(&self) -> Option<DyadicCube> {
        if self.level == 0 {
            return None;
        }
        Some(DyadicCube {
            level: self.level - 1,
            coords: [self.coords[0] / 2, self.coords[1] / 2],
        })
    }

    /// Children in lexicographic order. One axis splits in 1D, both in 2D.
    pub fn children(&self, dim: usize) -> Vec<DyadicCube> {
        let l = self.level + 1;
        let (x, y) = (2 * self.coords[0], 2 * self.coords[1]);
        if dim == 1 {
            vec![
                DyadicCube { level: l, coords: [x, 0] },
                DyadicCube { level: l, coords: [x + 1, 0] },
            ]
        } else {
            vec![
                DyadicCube { level: l, coords: [x, y] },
                DyadicCube { level: l, coords: [x, y + 1] },
                DyadicCube { level: l, coords: [x + 1, y] },
                DyadicCube { level: l, coords: [x + 1, y + 1] },
            ]
        }
    }

    /// Whether `self` contains `other` (as cell ranges; equality counts).
    pub fn contains(&self, other: &DyadicCube) -> bool {
        if self.level > other.level {
            return false;
        }
        let shift = other.level - self.level;
        self.coords[0] == other.coords[0] >> shift && self.coords[1] == other.coords[1] >> shift
    }
}

/// Result of the dyadic decomposition: stopped ("kept") cubes of density at
/// least alpha, and the disjoint divided predecessors that cover the set.
#[derive(Debug, Clone)]
pub struct CzResult {
    pub alpha: f64,
    pub kept: Vec<DyadicCube>,
    pub predecessors: Vec<DyadicCube>,
    pub stats: CzStats,
}

#[derive(Debug, Clone)]
pub struct CzStats {
    pub set_measure: f64,
    pub predecessor_union_measure: f64,
    /// Density of the set in each kept cube, aligned with `kept`.
    pub kept_densities: Vec<f64>,
}

/// Integer prefix sums over the cell grid for O(1) box counts.
struct CellCounts {
    dim: usize,
    n: usize,
    /// (n+1)^dim table, `pre[i][j] = count of set cells in [0,i) x [0,j)`.
    pre: Vec<u64>,
}

impl CellCounts {
    fn build(ind: &SetIndicator) -> Self {
        let n = ind.spec.n_cells;
        let dim = ind.spec.dim;
        if dim == 1 {
            let mut pre = vec![0u64; n + 1];
            for i in 0..n {
                pre[i + 1] = pre[i] + u64::from(ind.cells[i]);
            }
            CellCounts { dim, n, pre }
        } else {
            let w = n + 1;
            let mut pre = vec![0u64; w * w];
            for i in 0..n {
                for j in 0..n {
                    let v = u64::from(ind.cells[i * n + j]);
                    pre[(i + 1) * w + (j + 1)] =
                        pre[i * w + (j + 1)] + pre[(i + 1) * w + j] + v - pre[i * w + j];
                }
            }
            CellCounts { dim, n, pre }
        }
    }

    fn count(&self, lo: [usize; 2], side: usize) -> u64 {
        if self.dim == 1 {
            self.pre[lo[0] + side] - self.pre[lo[0]]
        } else {
            let w = self.n + 1;
            let (i0, j0) = (lo[0], lo[1]);
            let (i1, j1) = (lo[0] + side, lo[1] + side);
            self.pre[i1 * w + j1] + self.pre[i0 * w + j0]
                - self.pre[i0 * w + j1]
                - self.pre[i1 * w + j0]
        }
    }

    fn cube_count(&self, cube: &DyadicCube, spec: &GridSpec) -> u64 {
        self.count(cube.cell_lo(spec), cube.cells_per_side(spec))
    }
}

/// Decompose a cell set of the computational box. Requires the strict
/// hypothesis `|E| < alpha |Q|` on the root cube.
pub fn cz_decompose(set: &SetIndicator, alpha: f64) -> Result<CzResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let spec = &set.spec;
    let counts = CellCounts::build(set);
    let total = set.count() as u64;
    let root = DyadicCube::root();
    let root_cells = root.cell_count(spec) as f64;
    if !((total as f64) < alpha * root_cells) {
        return Err(Error::Precondition(format!(
            "decomposition hypothesis requires |E| < alpha |Q|: |E| cells = {total}, alpha |Q| cells = {}",
            alpha * root_cells
        )));
    }

    let mut kept = Vec::new();
    // Depth-first with lexicographic children, iterative to keep the stack
    // shallow on deep grids.
    let mut stack = vec![root];
    while let Some(cube) = stack.pop() {
        let cnt = counts.cube_count(&cube, spec);
        if cnt == 0 {
            continue;
        }
        let cells = cube.cell_count(spec) as f64;
        if cnt as f64 >= alpha * cells {
            kept.push(cube);
        } else {
            // Push children reversed so they pop in lexicographic order.
            for child in cube.children(spec.dim).into_iter().rev() {
                stack.push(child);
            }
        }
    }
    kept.sort();

    // Parents of kept cubes, deduplicated. A kept cube always has a parent:
    // the root was divided by the hypothesis.
    let mut preds: Vec<DyadicCube> = kept.iter().map(|c| c.parent().unwrap()).collect();
    preds.sort();
    preds.dedup();
    // Keep only maximal predecessors so their interiors are disjoint. A
    // predecessor nested inside another is dropped; its kept cubes stay
    // covered by the outer one.
    let pred_set: std::collections::BTreeSet<DyadicCube> = preds.iter().copied().collect();
    preds.retain(|p| {
        let mut anc = *p;
        while let Some(a) = anc.parent() {
            if pred_set.contains(&a) {
                return false;
            }
            anc = a;
        }
        true
    });

    let pred_cells: u64 = preds.iter().map(|p| p.cell_count(spec) as u64).sum();
    let kept_densities = kept
        .iter()
        .map(|c| counts.cube_count(c, spec) as f64 / c.cell_count(spec) as f64)
        .collect();

    Ok(CzResult {
        alpha,
        kept,
        predecessors: preds,
        stats: CzStats {
            set_measure: total as f64 * spec.cell_measure(),
            predecessor_union_measure: pred_cells as f64 * spec.cell_measure(),
            kept_densities,
        },
    })
}

/// Independent re-check of the decomposition conclusions, in exact cell
/// arithmetic.
#[derive(Debug, Clone)]
pub struct CzReport {
    pub kept_disjoint: bool,
    pub predecessors_disjoint: bool,
    /// Every set cell lies in some kept cube.
    pub kept_cover_exact: bool,
    /// Every set cell lies in some predecessor.
    pub predecessors_cover: bool,
    /// `alpha * |union of predecessors| > |E|`, strict (vacuous for empty E).
    pub union_bound: bool,
    /// Every kept cube has set density at least alpha.
    pub kept_density_ok: bool,
    /// Each predecessor is the dyadic parent of at least one kept cube.
    pub predecessor_is_parent: bool,
    pub uncovered_cells: u64,
}

impl CzReport {
    pub fn pass(&self) -> bool {
        self.kept_disjoint
            && self.predecessors_disjoint
            && self.kept_cover_exact
            && self.predecessors_cover
            && self.union_bound
            && self.kept_density_ok
            && self.predecessor_is_parent
    }
}

pub fn cz_verify(result: &CzResult, set: &SetIndicator, alpha: f64) -> CzReport {
    let spec = &set.spec;
    let counts = CellCounts::build(set);

    let paint = |cubes: &[DyadicCube]| -> (Vec<u8>, bool) {
        let mut marks = vec![0u8; spec.cell_count()];
        let mut disjoint = true;
        let n = spec.n_cells;
        for cube in cubes {
            let lo = cube.cell_lo(spec);
            let side = cube.cells_per_side(spec);
            if spec.dim == 1 {
                for i in lo[0]..lo[0] + side {
                    if marks[i] != 0 {
                        disjoint = false;
                    }
                    marks[i] = marks[i].saturating_add(1);
                }
            } else {
                for i in lo[0]..lo[0] + side {
                    for j in lo[1]..lo[1] + side {
                        let idx = i * n + j;
                        if marks[idx] != 0 {
                            disjoint = false;
                        }
                        marks[idx] = marks[idx].saturating_add(1);
                    }
                }
            }
        }
        (marks, disjoint)
    };

    let (kept_marks, kept_disjoint) = paint(&result.kept);
    let (pred_marks, predecessors_disjoint) = paint(&result.predecessors);

    let mut uncovered_kept = 0u64;
    let mut uncovered_pred = 0u64;
    for (idx, is_set) in set.cells.iter().enumerate() {
        if *is_set {
            if kept_marks[idx] == 0 {
                uncovered_kept += 1;
            }
            if pred_marks[idx] == 0 {
                uncovered_pred += 1;
            }
        }
    }

    let set_count = set.count() as u64;
    let pred_union: u64 = pred_marks.iter().map(|m| u64::from(*m > 0)).sum();
    let union_bound = if set_count == 0 {
        true
    } else {
        alpha * pred_union as f64 > set_count as f64
    };

    let kept_density_ok = result.kept.iter().all(|c| {
        counts.cube_count(c, spec) as f64 >= alpha * c.cell_count(spec) as f64
    });

    let kept_parents: std::collections::BTreeSet<DyadicCube> =
        result.kept.iter().filter_map(|c| c.parent()).collect();
    let predecessor_is_parent = result.predecessors.iter().all(|p| kept_parents.contains(p));

    CzReport {
        kept_disjoint,
        predecessors_disjoint,
        kept_cover_exact: uncovered_kept == 0,
        predecessors_cover: uncovered_pred == 0,
        union_bound,
        kept_density_ok,
        predecessor_is_parent,
        uncovered_cells: uncovered_kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn spec_1d() -> GridSpec {
        make_grid(1, 128, 1.0, 2.0).unwrap()
    }

    #[test]
    fn children_partition_parent_exactly() {
        let spec = make_grid(2, 64, 1.0, 2.0).unwrap();
        let root = DyadicCube::root();
        let kids = root.children(2);
        let sum: usize = kids.iter().map(|c| c.cell_count(&spec)).sum();
        assert_eq!(sum, root.cell_count(&spec));
        for c in &kids {
            assert_eq!(c.half_side(&spec), 0.5 * root.half_side(&spec));
        }
    }

    #[test]
    fn hand_executed_interval_case() {
        // Q(0;1) = [-1,1], E = [-1,-1/2], alpha = 1/2. Root density 1/4 < 1/2
        // splits; [-1,0] has density 1/2 and is kept; predecessor is the root.
        let spec = spec_1d();
        let mut e = SetIndicator::empty(&spec);
        e.fill_where(|p| p[0] < -0.5);
        let r = cz_decompose(&e, 0.5).unwrap();
        assert_eq!(r.kept.len(), 1);
        assert_eq!(r.kept[0], DyadicCube { level: 1, coords: [0, 0] });
        assert_eq!(r.predecessors.len(), 1);
        assert_eq!(r.predecessors[0], DyadicCube::root());
        assert_eq!(r.stats.predecessor_union_measure, 2.0);
        assert_eq!(r.stats.set_measure, 0.5);
        // |union of predecessors| = 2 > |E|/alpha = 1
        assert!(r.stats.predecessor_union_measure > r.stats.set_measure / 0.5);
        assert!(cz_verify(&r, &e, 0.5).pass());
    }

    #[test]
    fn equality_hypothesis_is_rejected() {
        let spec = spec_1d();
        let mut e = SetIndicator::empty(&spec);
        e.fill_where(|p| p[0] < 0.0); // exactly half the cells
        assert!(cz_decompose(&e, 0.5).is_err());
    }

    #[test]
    fn single_cell_bottoms_out() {
        let spec = spec_1d();
        let mut e = SetIndicator::empty(&spec);
        e.insert([17, 0]);
        for alpha in [0.1, 0.5, 0.9, 0.999] {
            let r = cz_decompose(&e, alpha).unwrap();
            assert!(!r.kept.is_empty());
            assert!(cz_verify(&r, &e, alpha).pass());
        }
    }

    #[test]
    fn empty_set_is_vacuous() {
        let spec = spec_1d();
        let e = SetIndicator::empty(&spec);
        let r = cz_decompose(&e, 0.5).unwrap();
        assert!(r.kept.is_empty());
        assert!(r.predecessors.is_empty());
        assert!(cz_verify(&r, &e, 0.5).pass());
    }

    #[test]
    fn tampered_result_fails_covering() {
        let spec = spec_1d();
        let mut e = SetIndicator::empty(&spec);
        e.fill_where(|p| p[0] < -0.5 || (p[0] > 0.25 && p[0] < 0.375));
        let mut r = cz_decompose(&e, 0.5).unwrap();
        assert!(cz_verify(&r, &e, 0.5).pass());
        r.kept.remove(0);
        assert!(!cz_verify(&r, &e, 0.5).pass());
    }

    #[test]
    fn nested_predecessors_are_maximalized() {
        // E = [0,1] u [2,2.5] inside the box [0,8] scaled to [-1,1]:
        // engineered so one kept cube's parent nests inside another kept
        // cube's parent; the outer one must win and conclusions still hold.
        let spec = spec_1d();
        let mut e = SetIndicator::empty(&spec);
        // map [0,8] -> [-1,1]: t -> t/4 - 1
        let map = |t: f64| t / 4.0 - 1.0;
        let (a1, b1) = (map(0.0), map(1.0));
        let (a2, b2) = (map(2.0), map(2.5));
        e.fill_where(|p| (p[0] > a1 && p[0] < b1) || (p[0] > a2 && p[0] < b2));
        let r = cz_decompose(&e, 0.5).unwrap();
        let rep = cz_verify(&r, &e, 0.5);
        assert!(rep.pass(), "{rep:?}");
    }
}
