//! Uniform-grid representation of functions on all of space.
//!
//! Functions live on the nodes of an extended box `|x|_inf <= exterior_radius`
//! with spacing `h`; beyond the extended box a constant (or zero) rule
//! describes the rest of space. The computational box `[-half_width,
//! half_width]^dim` is where operators are evaluated and equations posed.
//! `n_cells` is restricted to powers of two so dyadic cubes and the
//! `l = 2^{-k}` rescaling stay grid-exact.

use crate::error::{Error, Result};

/// Validated grid geometry. Immutable after construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub n_cells: usize,
    pub half_width: f64,
    pub exterior_radius: f64,
    /// Spacing, `2 * half_width / n_cells`.
    pub h: f64,
    /// Node steps from the origin to the edge of the computational box.
    pub box_steps: i32,
    /// Node steps from the origin to the edge of the extended box.
    pub ext_steps: i32,
}

impl GridSpec {
    pub fn new(dim: usize, n_cells: usize, half_width: f64, exterior_radius: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "unsupported dimension {dim}, expected 1 or 2"
            )));
        }
        if n_cells < 8 || !n_cells.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_cells must be a power of 2 and at least 8, got {n_cells}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        if !(exterior_radius >= 2.0 * half_width) {
            return Err(Error::InvalidGrid(format!(
                "exterior_radius {exterior_radius} must be at least 2 * half_width = {}",
                2.0 * half_width
            )));
        }
        let h = 2.0 * half_width / n_cells as f64;
        let steps = exterior_radius / h;
        let ext_steps = steps.round();
        if (steps - ext_steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "exterior_radius {exterior_radius} is not a whole number of grid steps (h = {h})"
            )));
        }
        if ext_steps > i32::MAX as f64 / 4.0 {
            return Err(Error::InvalidGrid("grid too large".into()));
        }
        Ok(GridSpec {
            dim,
            n_cells,
            half_width,
            exterior_radius,
            h,
            box_steps: (n_cells / 2) as i32,
            ext_steps: ext_steps as i32,
        })
    }

    /// Nodes per axis of the extended box.
    pub fn nodes_per_axis(&self) -> usize {
        2 * self.ext_steps as usize + 1
    }

    /// Number of stored node values.
    pub fn value_count(&self) -> usize {
        let n = self.nodes_per_axis();
        if self.dim == 1 {
            n
        } else {
            n * n
        }
    }

    /// Whether a step pair addresses a stored node of the extended box.
    #[inline]
    pub fn in_extended(&self, s: [i32; 2]) -> bool {
        s[0].abs() <= self.ext_steps && (self.dim == 1 || s[1].abs() <= self.ext_steps)
    }

    /// Whether a step pair lies in the computational box.
    #[inline]
    pub fn in_box(&self, s: [i32; 2]) -> bool {
        s[0].abs() <= self.box_steps && (self.dim == 1 || s[1].abs() <= self.box_steps)
    }

    /// Flat index of a stored node. Caller must check `in_extended`.
    #[inline]
    pub fn value_index(&self, s: [i32; 2]) -> usize {
        let n = self.ext_steps;
        if self.dim == 1 {
            (s[0] + n) as usize
        } else {
            (s[0] + n) as usize * self.nodes_per_axis() + (s[1] + n) as usize
        }
    }

    /// Physical position of a node.
    #[inline]
    pub fn position(&self, s: [i32; 2]) -> [f64; 2] {
        [s[0] as f64 * self.h, s[1] as f64 * self.h]
    }

    #[inline]
    pub fn radius2(&self, s: [i32; 2]) -> f64 {
        let p = self.position(s);
        if self.dim == 1 {
            p[0] * p[0]
        } else {
            p[0] * p[0] + p[1] * p[1]
        }
    }

    /// All stored nodes of the extended box, in canonical (row-major) order.
    pub fn extended_nodes(&self) -> Vec<[i32; 2]> {
        self.nodes_within(self.ext_steps)
    }

    /// All nodes of the computational box, in canonical (row-major) order.
    pub fn box_nodes(&self) -> Vec<[i32; 2]> {
        self.nodes_within(self.box_steps)
    }

    fn nodes_within(&self, r: i32) -> Vec<[i32; 2]> {
        let mut out = Vec::new();
        if self.dim == 1 {
            for i in -r..=r {
                out.push([i, 0]);
            }
        } else {
            for i in -r..=r {
                for j in -r..=r {
                    out.push([i, j]);
                }
            }
        }
        out
    }

    /// Cell count of the computational box.
    pub fn cell_count(&self) -> usize {
        if self.dim == 1 {
            self.n_cells
        } else {
            self.n_cells * self.n_cells
        }
    }

    /// Measure of one grid cell, `h^dim`.
    pub fn cell_measure(&self) -> f64 {
        if self.dim == 1 {
            self.h
        } else {
            self.h * self.h
        }
    }

    /// Cell index of the cell a box node belongs to (the cell to the node's
    /// upper-right, clamped at the box edge). Used to sample cell indicators
    /// at nodes.
    #[inline]
    pub fn node_cell(&self, s: [i32; 2]) -> Option<[usize; 2]> {
        if !self.in_box(s) {
            return None;
        }
        let clamp = |v: i32| -> usize {
            let c = v + self.box_steps;
            (c as usize).min(self.n_cells - 1)
        };
        Some([clamp(s[0]), if self.dim == 1 { 0 } else { clamp(s[1]) }])
    }

    /// Center position of a cell of the computational box.
    pub fn cell_center(&self, c: [usize; 2]) -> [f64; 2] {
        let f = |i: usize| (i as f64 + 0.5) * self.h - self.half_width;
        [f(c[0]), if self.dim == 1 { 0.0 } else { f(c[1]) }]
    }
}

/// Construct a validated [`GridSpec`].
pub fn make_grid(
    dim: usize,
    n_cells: usize,
    half_width: f64,
    exterior_radius: f64,
) -> Result<GridSpec> {
    GridSpec::new(dim, n_cells, half_width, exterior_radius)
}

/// Behaviour of a grid function beyond the extended box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExteriorRule {
    Zero,
    Constant(f64),
}

impl ExteriorRule {
    #[inline]
    pub fn value(&self) -> f64 {
        match self {
            ExteriorRule::Zero => 0.0,
            ExteriorRule::Constant(c) => *c,
        }
    }
}

/// Closed-form families used to synthesize test data on a grid.
#[derive(Debug, Clone)]
pub enum Descriptor {
    Constant(f64),
    /// `exp(-decay * |x|^2)`
    Gaussian { decay: f64 },
    /// The radial cutoff profile of [`cutoff_eta`].
    Bump,
    /// `min(cap_value, |x|^-exponent)`, decaying to zero at infinity.
    RadialPower { exponent: f64, cap_value: f64 },
    /// Explicit node values plus an exterior rule.
    Tabulated { values: Vec<f64>, exterior: ExteriorRule },
}

/// A real function on all of space: node values on the extended box plus an
/// exterior rule. Immutable by convention; operations return new functions.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub exterior: ExteriorRule,
}

impl GridFunction {
    pub fn zeros(spec: &GridSpec) -> Self {
        GridFunction {
            spec: *spec,
            values: vec![0.0; spec.value_count()],
            exterior: ExteriorRule::Zero,
        }
    }

    pub fn constant(spec: &GridSpec, c: f64) -> Self {
        GridFunction {
            spec: *spec,
            values: vec![c; spec.value_count()],
            exterior: ExteriorRule::Constant(c),
        }
    }

    /// Fill node values from a position closure.
    pub fn from_fn<F: Fn([f64; 2]) -> f64>(spec: &GridSpec, exterior: ExteriorRule, f: F) -> Self {
        let mut values = vec![0.0; spec.value_count()];
        for s in spec.extended_nodes() {
            values[spec.value_index(s)] = f(spec.position(s));
        }
        GridFunction {
            spec: *spec,
            values,
            exterior,
        }
    }

    /// Value at a node address, falling back to the exterior rule beyond the
    /// extended box.
    #[inline]
    pub fn at(&self, s: [i32; 2]) -> f64 {
        if self.spec.in_extended(s) {
            self.values[self.spec.value_index(s)]
        } else {
            self.exterior.value()
        }
    }

    #[inline]
    pub fn set(&mut self, s: [i32; 2], v: f64) {
        let idx = self.spec.value_index(s);
        self.values[idx] = v;
    }

    /// Sup norm over all of space: max of the stored values and the exterior
    /// constant. Exact by construction.
    pub fn sup_norm(&self) -> f64 {
        let grid_max = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        grid_max.max(self.exterior.value().abs())
    }

    /// Sup norm over the nodes of a subregion of the computational box.
    pub fn sup_norm_on<F: Fn([f64; 2]) -> bool>(&self, inside: F) -> f64 {
        let mut m = 0.0f64;
        for s in self.spec.box_nodes() {
            if inside(self.spec.position(s)) {
                m = m.max(self.at(s).abs());
            }
        }
        m
    }

    pub fn scaled(&self, a: f64) -> GridFunction {
        GridFunction {
            spec: self.spec,
            values: self.values.iter().map(|v| a * v).collect(),
            exterior: match self.exterior {
                ExteriorRule::Zero => ExteriorRule::Zero,
                ExteriorRule::Constant(c) => ExteriorRule::Constant(a * c),
            },
        }
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.spec, other.spec, "grid spec mismatch");
        GridFunction {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            exterior: ExteriorRule::Constant(self.exterior.value() + other.exterior.value()),
        }
    }

    /// Pointwise product; the exterior rule multiplies too.
    pub fn mul(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.spec, other.spec, "grid spec mismatch");
        let c = self.exterior.value() * other.exterior.value();
        GridFunction {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
            exterior: if c == 0.0 {
                ExteriorRule::Zero
            } else {
                ExteriorRule::Constant(c)
            },
        }
    }
}

/// Sample a closed-form descriptor onto a grid. The exterior rule comes from
/// the descriptor's limit at infinity.
pub fn sample_function(spec: &GridSpec, descriptor: &Descriptor) -> Result<GridFunction> {
    let gf = match descriptor {
        Descriptor::Constant(c) => {
            if !c.is_finite() {
                return Err(Error::InvalidParam("constant descriptor must be finite".into()));
            }
            GridFunction::constant(spec, *c)
        }
        Descriptor::Gaussian { decay } => {
            if !(decay.is_finite() && *decay > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "gaussian decay must be positive, got {decay}"
                )));
            }
            let a = *decay;
            GridFunction::from_fn(spec, ExteriorRule::Zero, |p| {
                (-a * (p[0] * p[0] + p[1] * p[1])).exp()
            })
        }
        Descriptor::Bump => GridFunction::from_fn(spec, ExteriorRule::Zero, |p| {
            eta_profile((p[0] * p[0] + p[1] * p[1]).sqrt())
        }),
        Descriptor::RadialPower { exponent, cap_value } => {
            if !(exponent.is_finite() && *exponent > 0.0 && cap_value.is_finite() && *cap_value > 0.0)
            {
                return Err(Error::InvalidParam(
                    "radial power needs positive exponent and cap".into(),
                ));
            }
            let (q, cap) = (*exponent, *cap_value);
            GridFunction::from_fn(spec, ExteriorRule::Zero, |p| {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if r == 0.0 {
                    cap
                } else {
                    r.powf(-q).min(cap)
                }
            })
        }
        Descriptor::Tabulated { values, exterior } => {
            if values.len() != spec.value_count() {
                return Err(Error::InvalidParam(format!(
                    "tabulated descriptor has {} values, grid stores {}",
                    values.len(),
                    spec.value_count()
                )));
            }
            GridFunction {
                spec: *spec,
                values: values.clone(),
                exterior: *exterior,
            }
        }
    };
    if gf.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(
            "descriptor produced non-finite values on the extended box".into(),
        ));
    }
    Ok(gf)
}

/// Radial profile of the cutoff: 1 on [0, 3/4], 0 on [1, inf), and the
/// C-infinity bump `exp(1 - 1/(1 - s^2))` with `s = 4(r - 3/4)` in between.
pub fn eta_profile(r: f64) -> f64 {
    if r <= 0.75 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        let s = 4.0 * (r - 0.75);
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// The radial cutoff that is 1 on `B_{3/4}` and vanishes outside `B_1`.
pub fn cutoff_eta(spec: &GridSpec) -> Result<GridFunction> {
    if spec.half_width < 1.0 {
        return Err(Error::InvalidGrid(format!(
            "box too small to contain B_1 (half_width = {})",
            spec.half_width
        )));
    }
    Ok(GridFunction::from_fn(spec, ExteriorRule::Zero, |p| {
        eta_profile((p[0] * p[0] + p[1] * p[1]).sqrt())
    }))
}

/// A union of grid cells of the computational box, with exact cell-count
/// measure.
#[derive(Debug, Clone)]
pub struct SetIndicator {
    pub spec: GridSpec,
    /// Row-major over cell indices; `true` marks a cell of the set.
    pub cells: Vec<bool>,
}

impl SetIndicator {
    pub fn empty(spec: &GridSpec) -> Self {
        SetIndicator {
            spec: *spec,
            cells: vec![false; spec.cell_count()],
        }
    }

    #[inline]
    pub fn cell_index(&self, c: [usize; 2]) -> usize {
        if self.spec.dim == 1 {
            c[0]
        } else {
            c[0] * self.spec.n_cells + c[1]
        }
    }

    pub fn insert(&mut self, c: [usize; 2]) {
        let idx = self.cell_index(c);
        self.cells[idx] = true;
    }

    pub fn contains(&self, c: [usize; 2]) -> bool {
        self.cells[self.cell_index(c)]
    }

    /// Mark every cell whose center satisfies the predicate.
    pub fn fill_where<F: Fn([f64; 2]) -> bool>(&mut self, pred: F) {
        let n = self.spec.n_cells;
        if self.spec.dim == 1 {
            for i in 0..n {
                if pred(self.spec.cell_center([i, 0])) {
                    self.cells[i] = true;
                }
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    if pred(self.spec.cell_center([i, j])) {
                        self.cells[i * n + j] = true;
                    }
                }
            }
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// Exact measure: cell count times `h^dim`.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.spec.cell_measure()
    }

    /// 0/1 sample at a box node (the node's cell), 0 outside the box.
    #[inline]
    pub fn node_value(&self, s: [i32; 2]) -> f64 {
        match self.spec.node_cell(s) {
            Some(c) if self.contains(c) => 1.0,
            _ => 0.0,
        }
    }

    /// Node-sampled indicator as a grid function (zero outside the box).
    pub fn to_grid_function(&self) -> GridFunction {
        let mut g = GridFunction::zeros(&self.spec);
        for s in self.spec.box_nodes() {
            let v = self.node_value(s);
            if v != 0.0 {
                g.set(s, v);
            }
        }
        g
    }
}

/// Exact measure of an indicator set.
pub fn indicator_measure(ind: &SetIndicator) -> f64 {
    ind.measure()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_grid_computes_spacing_exactly() {
        let g = make_grid(1, 256, 1.0, 16.0).unwrap();
        assert_eq!(g.h, 0.0078125);
        assert_eq!(g.ext_steps, 2048);
        let g = make_grid(2, 64, 1.0, 8.0).unwrap();
        assert_eq!(g.h, 0.03125);
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        assert!(make_grid(3, 64, 1.0, 8.0).is_err());
        assert!(make_grid(1, 100, 1.0, 8.0).is_err());
        assert!(make_grid(1, 4, 1.0, 8.0).is_err());
        assert!(make_grid(1, 64, 1.0, 1.5).is_err());
    }

    #[test]
    fn constant_and_gaussian_samples() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        let z = sample_function(&spec, &Descriptor::Constant(0.0)).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        let g = sample_function(&spec, &Descriptor::Gaussian { decay: 1.0 }).unwrap();
        assert_eq!(g.at([0, 0]), 1.0);
        let x = spec.position([32, 0])[0];
        assert!((g.at([32, 0]) - (-x * x).exp()).abs() < 1e-15);
        assert_eq!(g.exterior, ExteriorRule::Zero);
    }

    #[test]
    fn eta_is_one_inside_and_zero_outside() {
        let spec = make_grid(1, 128, 2.0, 4.0).unwrap();
        let eta = cutoff_eta(&spec).unwrap();
        for s in spec.extended_nodes() {
            let r = spec.radius2(s).sqrt();
            let v = eta.at(s);
            assert!((0.0..=1.0).contains(&v));
            if r <= 0.75 {
                assert_eq!(v, 1.0);
            }
            if r >= 1.0 {
                assert_eq!(v, 0.0);
            }
        }
        // documented profile value at r = 0.875
        let expect = (1.0f64 - 1.0 / (1.0 - 0.25)).exp();
        assert!((eta_profile(0.875) - expect).abs() < 1e-15);
        assert!(eta_profile(0.875) > 0.0 && eta_profile(0.875) < 1.0);
    }

    #[test]
    fn eta_requires_box_containing_b1() {
        let spec = make_grid(1, 64, 0.5, 1.0).unwrap();
        assert!(cutoff_eta(&spec).is_err());
    }

    #[test]
    fn indicator_measure_is_exact() {
        let spec = make_grid(1, 256, 1.0, 2.0).unwrap();
        let mut e = SetIndicator::empty(&spec);
        assert_eq!(indicator_measure(&e), 0.0);
        // interval [-1/2, 1/2] holds exactly 128 cells of width 1/128
        e.fill_where(|p| p[0].abs() < 0.5);
        assert_eq!(e.count(), 128);
        assert_eq!(indicator_measure(&e), 1.0);
    }

    #[test]
    fn half_filled_square_counts_exactly() {
        let spec = make_grid(2, 64, 1.0, 2.0).unwrap();
        let mut e = SetIndicator::empty(&spec);
        // half of the cells of Q(0;1/2) = [-1/2,1/2]^2, by alternating parity
        let mut expected = 0usize;
        let n = spec.n_cells;
        for i in 0..n {
            for j in 0..n {
                let c = spec.cell_center([i, j]);
                if c[0].abs() < 0.5 && c[1].abs() < 0.5 && (i + j) % 2 == 0 {
                    e.insert([i, j]);
                    expected += 1;
                }
            }
        }
        assert_eq!(e.count(), expected);
        let q_measure = 1.0; // |Q(0;1/2)| = 1 in 2D
        assert_eq!(e.measure(), 0.5 * q_measure);
    }

    #[test]
    fn sup_norm_sees_grid_and_exterior() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        let mut g = GridFunction::constant(&spec, 0.25);
        g.set([3, 0], -0.75);
        assert_eq!(g.sup_norm(), 0.75);
        let g = GridFunction {
            exterior: ExteriorRule::Constant(-2.0),
            ..g
        };
        assert_eq!(g.sup_norm(), 2.0);
    }

    #[test]
    fn tabulated_rejects_wrong_length_and_nonfinite() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        assert!(sample_function(
            &spec,
            &Descriptor::Tabulated {
                values: vec![0.0; 3],
                exterior: ExteriorRule::Zero
            }
        )
        .is_err());
        let mut v = vec![0.0; spec.value_count()];
        v[0] = f64::NAN;
        assert!(sample_function(
            &spec,
            &Descriptor::Tabulated {
                values: v,
                exterior: ExteriorRule::Zero
            }
        )
        .is_err());
    }
}
