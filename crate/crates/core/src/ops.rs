//! Evaluation of the sigma-order Hessian, the linear operators it induces,
//! the extremal (Pucci-type) operators, and the constructive coefficient
//! fields used by the estimate experiments.
//!
//! Every evaluation sums the weighted second differences in the fixed
//! canonical offset order, so results are bit-reproducible regardless of how
//! nodes are distributed over worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ExteriorRule, GridFunction, GridSpec};
use crate::kernel::KernelWeights;
use crate::symmat::SymMat;

/// Order and ellipticity bounds. `lambda_min <= A <= lambda_max` as quadratic
/// forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityParams {
    pub sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl EllipticityParams {
    pub fn new(sigma: f64, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 2.0) {
            return Err(Error::SigmaOutOfRange(sigma));
        }
        if !(lambda_min > 0.0 && lambda_min.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {lambda_min}"
            )));
        }
        if !(lambda_max >= lambda_min && lambda_max.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "Lambda must be finite and at least lambda, got {lambda_max}"
            )));
        }
        Ok(EllipticityParams {
            sigma,
            lambda_min,
            lambda_max,
        })
    }
}

/// Which extremal operator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PucciSide {
    Plus,
    Minus,
}

/// A symmetric coefficient matrix per node of the computational box,
/// validated against the ellipticity bounds at construction.
#[derive(Debug, Clone)]
pub struct MatrixField {
    pub spec: GridSpec,
    pub params: EllipticityParams,
    /// Row-major over box nodes.
    mats: Vec<SymMat>,
}

impl MatrixField {
    pub fn from_fn<F: Fn([i32; 2]) -> SymMat>(
        spec: &GridSpec,
        params: EllipticityParams,
        f: F,
    ) -> Result<Self> {
        let nodes = spec.box_nodes();
        let mats: Vec<SymMat> = nodes.iter().map(|s| f(*s)).collect();
        let field = MatrixField {
            spec: *spec,
            params,
            mats,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn constant(spec: &GridSpec, params: EllipticityParams, a: SymMat) -> Result<Self> {
        Self::from_fn(spec, params, |_| a)
    }

    pub fn identity_scaled(spec: &GridSpec, params: EllipticityParams, v: f64) -> Result<Self> {
        Self::from_fn(spec, params, |_| SymMat::iso(spec.dim, v))
    }

    /// Every eigenvalue of every node matrix must lie in
    /// [lambda_min, lambda_max] up to roundoff.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-12 * self.params.lambda_max;
        for (idx, m) in self.mats.iter().enumerate() {
            let e = m.eigen();
            for i in 0..self.spec.dim {
                if e.values[i] < self.params.lambda_min - tol
                    || e.values[i] > self.params.lambda_max + tol
                {
                    return Err(Error::InvalidParam(format!(
                        "coefficient matrix at node {idx} has eigenvalue {} outside [{}, {}]",
                        e.values[i], self.params.lambda_min, self.params.lambda_max
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn box_index(&self, s: [i32; 2]) -> usize {
        let b = self.spec.box_steps;
        let per = (2 * b + 1) as usize;
        if self.spec.dim == 1 {
            (s[0] + b) as usize
        } else {
            (s[0] + b) as usize * per + (s[1] + b) as usize
        }
    }

    /// Coefficient matrix at a box node.
    #[inline]
    pub fn at(&self, s: [i32; 2]) -> &SymMat {
        &self.mats[self.box_index(s)]
    }

    pub fn set(&mut self, s: [i32; 2], m: SymMat) {
        let idx = self.box_index(s);
        self.mats[idx] = m;
    }
}

/// The sigma-order Hessian at every node of the computational box, with the
/// eigendecompositions used by all downstream constructions.
#[derive(Debug, Clone)]
pub struct SigmaHessianField {
    pub spec: GridSpec,
    pub nodes: Vec<[i32; 2]>,
    pub mats: Vec<SymMat>,
}

impl SigmaHessianField {
    pub fn at(&self, s: [i32; 2]) -> &SymMat {
        let b = self.spec.box_steps;
        let per = (2 * b + 1) as usize;
        let idx = if self.spec.dim == 1 {
            (s[0] + b) as usize
        } else {
            (s[0] + b) as usize * per + (s[1] + b) as usize
        };
        &self.mats[idx]
    }

    /// Nuclear norm per node, as a grid function on the box (zero elsewhere).
    pub fn nuclear_norm_field(&self) -> GridFunction {
        let mut g = GridFunction::zeros(&self.spec);
        for (s, m) in self.nodes.iter().zip(&self.mats) {
            g.set(*s, m.nuclear_norm());
        }
        g
    }
}

/// Second difference `u(x+y) + u(x-y) - 2 u(x)` at node `s`, offset `o`.
#[inline]
fn second_difference(u: &GridFunction, s: [i32; 2], o: [i32; 2], u0: f64) -> f64 {
    u.at([s[0] + o[0], s[1] + o[1]]) + u.at([s[0] - o[0], s[1] - o[1]]) - 2.0 * u0
}

/// Sigma-order Hessian at a single node.
pub fn eval_sigma_hessian_at(u: &GridFunction, w: &KernelWeights, s: [i32; 2]) -> SymMat {
    debug_assert_eq!(u.spec, w.spec, "grid spec mismatch");
    let u0 = u.at(s);
    let mut acc = SymMat::zero(u.spec.dim);
    for (o, wk) in w.offsets.iter().zip(&w.weights) {
        let d = second_difference(u, s, *o, u0);
        acc.add_scaled(wk, d);
    }
    let d_tail = 2.0 * (u.exterior.value() - u0);
    acc.add_scaled(&w.tail, d_tail);
    acc
}

/// Sigma-order Hessian at every node of the computational box.
pub fn eval_sigma_hessian(u: &GridFunction, w: &KernelWeights) -> Result<SigmaHessianField> {
    if u.spec != w.spec {
        return Err(Error::InvalidParam(
            "grid function and weights use different grids".into(),
        ));
    }
    let nodes = u.spec.box_nodes();
    let mats: Vec<SymMat> = nodes
        .par_iter()
        .map(|s| eval_sigma_hessian_at(u, w, *s))
        .collect();
    Ok(SigmaHessianField {
        spec: u.spec,
        nodes,
        mats,
    })
}

/// `L_A u` at a single node: the direct kernel quadrature
/// `sum_k <A(x), W_k> delta_u(x, y_k)` plus the tail pairing.
#[inline]
pub fn eval_la_at(u: &GridFunction, a: &SymMat, w: &KernelWeights, s: [i32; 2]) -> f64 {
    let u0 = u.at(s);
    let mut acc = 0.0;
    for (o, wk) in w.offsets.iter().zip(&w.weights) {
        let d = second_difference(u, s, *o, u0);
        acc += a.frob(wk) * d;
    }
    acc + a.frob(&w.tail) * 2.0 * (u.exterior.value() - u0)
}

/// `L_A u` on the computational box (zero outside), with `A` validated.
pub fn eval_la(u: &GridFunction, a: &MatrixField, w: &KernelWeights) -> Result<GridFunction> {
    if u.spec != w.spec || u.spec != a.spec {
        return Err(Error::InvalidParam(
            "grid function, coefficients and weights use different grids".into(),
        ));
    }
    a.validate()?;
    let nodes = u.spec.box_nodes();
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|s| eval_la_at(u, a.at(*s), w, *s))
        .collect();
    let mut out = GridFunction::zeros(&u.spec);
    for (s, v) in nodes.iter().zip(vals) {
        out.set(*s, v);
    }
    Ok(out)
}

/// Extremal operator value from the eigenvalues of the sigma-order Hessian.
pub fn pucci_from_eigenvalues(
    values: &[f64],
    p: &EllipticityParams,
    side: PucciSide,
) -> f64 {
    let mut acc = 0.0;
    for &e in values {
        let coeff = match side {
            PucciSide::Plus => {
                if e > 0.0 {
                    p.lambda_max
                } else {
                    p.lambda_min
                }
            }
            PucciSide::Minus => {
                if e > 0.0 {
                    p.lambda_min
                } else {
                    p.lambda_max
                }
            }
        };
        acc += coeff * e;
    }
    acc
}

/// Extremal operator of a single Hessian matrix.
pub fn pucci_of(m: &SymMat, p: &EllipticityParams, side: PucciSide) -> f64 {
    let e = m.eigen();
    pucci_from_eigenvalues(&e.values[..m.dim], p, side)
}

/// Extremal operator on the computational box.
pub fn eval_pucci(
    u: &GridFunction,
    w: &KernelWeights,
    p: &EllipticityParams,
    side: PucciSide,
) -> Result<GridFunction> {
    if u.spec != w.spec {
        return Err(Error::InvalidParam(
            "grid function and weights use different grids".into(),
        ));
    }
    let nodes = u.spec.box_nodes();
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|s| pucci_of(&eval_sigma_hessian_at(u, w, *s), p, side))
        .collect();
    let mut out = GridFunction::zeros(&u.spec);
    for (s, v) in nodes.iter().zip(vals) {
        out.set(*s, v);
    }
    Ok(out)
}

/// Sum of absolute eigenvalues of a symmetric matrix.
pub fn nuclear_norm(m: &SymMat) -> f64 {
    m.nuclear_norm()
}

/// The coefficient matrix that realizes
/// `2 Lambda sum_{e<0} e + (lambda/2) sum_{e>0} e` against `m`, living in the
/// doubled ellipticity class `[lambda/2, 2 Lambda]`. Zero eigenvalues take
/// the `lambda/2` coefficient; the product vanishes either way but the rule
/// keeps the matrix deterministic.
pub fn construct_tilde_a(m: &SymMat, p: &EllipticityParams) -> (SymMat, f64) {
    let e = m.eigen();
    let mut coeffs = [0.0f64; 2];
    let mut value = 0.0;
    for i in 0..m.dim {
        coeffs[i] = if e.values[i] < 0.0 {
            2.0 * p.lambda_max
        } else {
            0.5 * p.lambda_min
        };
        value += coeffs[i] * e.values[i];
    }
    (e.reconstruct(coeffs), value)
}

/// Admissible `A` with `A : m = target`, as the convex combination of the two
/// extremal realizers in the eigenbasis of `m`. `target` must lie between the
/// extremal values.
pub fn realize_target_a(m: &SymMat, p: &EllipticityParams, target: f64) -> Result<SymMat> {
    let e = m.eigen();
    let m_plus = pucci_from_eigenvalues(&e.values[..m.dim], p, PucciSide::Plus);
    let m_minus = pucci_from_eigenvalues(&e.values[..m.dim], p, PucciSide::Minus);
    let tol = 1e-12 * (1.0 + m_plus.abs() + m_minus.abs());
    if target < m_minus - tol || target > m_plus + tol {
        return Err(Error::Precondition(format!(
            "target {target} outside the attainable range [{m_minus}, {m_plus}]"
        )));
    }
    let t = if m_plus > m_minus {
        ((target - m_minus) / (m_plus - m_minus)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut coeffs = [0.0f64; 2];
    for i in 0..m.dim {
        let (plus_c, minus_c) = if e.values[i] > 0.0 {
            (p.lambda_max, p.lambda_min)
        } else {
            (p.lambda_min, p.lambda_max)
        };
        coeffs[i] = t * plus_c + (1.0 - t) * minus_c;
    }
    Ok(e.reconstruct(coeffs))
}

/// One-sided coefficient construction: given `M^+ u >= -f^-` and
/// `M^- u <= f^+` on the region, returns an admissible field with
/// `-2 f^- <= L_A u <= 2 f^+` there. The pointwise target is
/// `clamp(0, max(M^-, -3/2 f^-), min(M^+, 3/2 f^+))`, which the hypotheses
/// keep attainable. Nodes outside the region get the midpoint isotropic
/// matrix.
pub fn construct_onesided_a<F: Fn([f64; 2]) -> bool + Sync>(
    u: &GridFunction,
    f: &GridFunction,
    p: &EllipticityParams,
    w: &KernelWeights,
    in_region: F,
) -> Result<MatrixField> {
    if u.spec != w.spec || u.spec != f.spec {
        return Err(Error::InvalidParam(
            "grid function, data and weights use different grids".into(),
        ));
    }
    let spec = u.spec;
    let mid = SymMat::iso(spec.dim, 0.5 * (p.lambda_min + p.lambda_max));
    let nodes = spec.box_nodes();
    let mats: Vec<Result<SymMat>> = nodes
        .par_iter()
        .map(|s| {
            if !in_region(spec.position(*s)) {
                return Ok(mid);
            }
            let m = eval_sigma_hessian_at(u, w, *s);
            let e = m.eigen();
            let m_plus = pucci_from_eigenvalues(&e.values[..m.dim], p, PucciSide::Plus);
            let m_minus = pucci_from_eigenvalues(&e.values[..m.dim], p, PucciSide::Minus);
            let fv = f.at(*s);
            let f_plus = fv.max(0.0);
            let f_minus = (-fv).max(0.0);
            let tol = 1e-9 * (1.0 + m_plus.abs() + m_minus.abs() + fv.abs());
            if m_plus < -f_minus - tol {
                return Err(Error::Precondition(format!(
                    "node {s:?}: M+ u = {m_plus} < -f^- = {}",
                    -f_minus
                )));
            }
            if m_minus > f_plus + tol {
                return Err(Error::Precondition(format!(
                    "node {s:?}: M- u = {m_minus} > f^+ = {f_plus}"
                )));
            }
            let lo = m_minus.max(-1.5 * f_minus);
            let hi = m_plus.min(1.5 * f_plus);
            // Roundoff can leave hi microscopically below lo when the
            // admissible window degenerates to a point.
            let target = if hi >= lo { 0.0f64.clamp(lo, hi) } else { 0.5 * (lo + hi) };
            realize_target_a(&m, p, target)
        })
        .collect();
    let mut flat = Vec::with_capacity(mats.len());
    for m in mats {
        flat.push(m?);
    }
    let field = MatrixField {
        spec,
        params: *p,
        mats: flat,
    };
    field.validate()?;
    Ok(field)
}

/// Zoom `u` around a grid point: returns `l^{-sigma} u(x0 + l x)` with
/// `l = 2^{-k}` on a grid with `n_cells / 2^k` cells over the same box, so
/// every sample pulls back to a stored node. The exterior constant is scaled
/// by `l^{-sigma}`; beyond the pulled-back window this is the documented
/// approximation of the zoomed tail.
pub fn rescale(u: &GridFunction, x0: [i32; 2], k: u32, sigma: f64) -> Result<GridFunction> {
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::SigmaOutOfRange(sigma));
    }
    let spec = u.spec;
    if !spec.in_box(x0) {
        return Err(Error::InvalidParam(format!(
            "zoom centre {x0:?} is outside the computational box"
        )));
    }
    if k == 0 && x0 != [0, 0] {
        return Err(Error::InvalidParam(
            "unit zoom must be centred at the origin".into(),
        ));
    }
    let factor = 1usize << k;
    if spec.n_cells / factor < 8 || spec.n_cells % factor != 0 {
        return Err(Error::InvalidParam(format!(
            "zoom level {k} leaves fewer than 8 cells"
        )));
    }
    if spec.ext_steps % factor as i32 != 0 {
        return Err(Error::InvalidParam(format!(
            "zoom level {k} does not align with the extended grid"
        )));
    }
    let new_spec = GridSpec::new(
        spec.dim,
        spec.n_cells / factor,
        spec.half_width,
        spec.exterior_radius,
    )?;
    let l = (0.5f64).powi(k as i32);
    let amp = l.powf(-sigma);
    let mut values = vec![0.0; new_spec.value_count()];
    for s in new_spec.extended_nodes() {
        // node i of the zoomed grid pulls back to x0 + i in original steps
        let src = [x0[0] + s[0], x0[1] + s[1]];
        values[new_spec.value_index(s)] = amp * u.at(src);
    }
    let exterior = match u.exterior {
        ExteriorRule::Zero => ExteriorRule::Zero,
        ExteriorRule::Constant(c) => ExteriorRule::Constant(amp * c),
    };
    Ok(GridFunction {
        spec: new_spec,
        values,
        exterior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample_function, Descriptor};
    use crate::kernel::build_weights;

    fn params(sigma: f64) -> EllipticityParams {
        EllipticityParams::new(sigma, 1.0, 2.0).unwrap()
    }

    #[test]
    fn zero_function_has_zero_hessian() {
        let spec = make_grid(2, 16, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 1.5).unwrap();
        let u = GridFunction::zeros(&spec);
        let field = eval_sigma_hessian(&u, &w).unwrap();
        for m in &field.mats {
            assert_eq!(m.m, [0.0; 3]);
        }
    }

    #[test]
    fn constant_function_is_annihilated() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 0.8).unwrap();
        let u = GridFunction::constant(&spec, 3.25);
        let p = params(0.8);
        let a = MatrixField::identity_scaled(&spec, p, 1.5).unwrap();
        let la = eval_la(&u, &a, &w).unwrap();
        for s in spec.box_nodes() {
            assert_eq!(la.at(s), 0.0);
        }
    }

    #[test]
    fn gaussian_half_laplacian_matches_closed_form() {
        // n = 1, sigma = 1, u = exp(-x^2): the trace integral at 0 is
        // -4 sqrt(pi), approached within 1% at this resolution.
        let spec = make_grid(1, 1024, 1.0, 16.0).unwrap();
        let w = build_weights(&spec, 1.0).unwrap();
        let u = sample_function(&spec, &Descriptor::Gaussian { decay: 1.0 }).unwrap();
        let m = eval_sigma_hessian_at(&u, &w, [0, 0]);
        let expect = -4.0 * std::f64::consts::PI.sqrt();
        assert!(
            ((m.m[0] - expect) / expect).abs() < 0.01,
            "got {} expect {expect}",
            m.m[0]
        );
    }

    #[test]
    fn radial_function_has_diagonal_hessian_at_origin() {
        let spec = make_grid(2, 32, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 1.2).unwrap();
        let u = sample_function(&spec, &Descriptor::Gaussian { decay: 1.0 }).unwrap();
        let m = eval_sigma_hessian_at(&u, &w, [0, 0]);
        assert!(m.m[1].abs() < 1e-12, "off-diagonal {}", m.m[1]);
        assert!((m.m[0] - m.m[2]).abs() < 1e-12);
    }

    #[test]
    fn pucci_closed_form_hand_case() {
        // eigenvalues {1, -2}, lambda = 1, Lambda = 2
        let p = params(1.0);
        let m = SymMat::diag(2, -2.0, 1.0);
        assert_eq!(pucci_of(&m, &p, PucciSide::Plus), 0.0);
        assert_eq!(pucci_of(&m, &p, PucciSide::Minus), -3.0);
    }

    #[test]
    fn pucci_duality_is_exact() {
        let p = params(1.3);
        for k in 0..50 {
            let t = k as f64 * 0.37;
            let m = SymMat::from_rotation(t, (k as f64).sin() * 3.0, (k as f64).cos() - 0.2);
            let neg = m.scale(-1.0);
            let lhs = pucci_of(&neg, &p, PucciSide::Plus);
            let rhs = -pucci_of(&m, &p, PucciSide::Minus);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn tilde_a_hand_case_and_inequality() {
        let p = params(1.0);
        // eigenvalues {3, -1}: value = 4*(-1) + 0.5*3 = -2.5
        let m = SymMat::diag(2, -1.0, 3.0);
        let (a_tilde, value) = construct_tilde_a(&m, &p);
        assert!((value + 2.5).abs() < 1e-14);
        let e = a_tilde.eigen();
        for i in 0..2 {
            assert!(e.values[i] >= 0.5 - 1e-14 && e.values[i] <= 4.0 + 1e-14);
        }
        // against A = I: (A~ : m) - (I : m) <= -min(Lambda, lambda/2) |m|
        let ident = SymMat::identity(2);
        let diff = value - ident.frob(&m);
        assert!(diff <= -0.5 * m.nuclear_norm() + 1e-12);
        // degenerate: m = 0 gives the lambda/2 isotropic matrix
        let (a0, v0) = construct_tilde_a(&SymMat::zero(2), &p);
        assert_eq!(v0, 0.0);
        assert_eq!(a0.m, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn realize_target_interpolates() {
        let p = params(1.0);
        let m = SymMat::diag(2, -2.0, 1.0); // M+ = 0, M- = -3
        let a = realize_target_a(&m, &p, -1.5).unwrap();
        assert!((a.frob(&m) + 1.5).abs() < 1e-12);
        let e = a.eigen();
        for i in 0..2 {
            assert!(e.values[i] >= 1.0 - 1e-12 && e.values[i] <= 2.0 + 1e-12);
        }
        // target = M+ gives the plus realizer
        let a = realize_target_a(&m, &p, 0.0).unwrap();
        assert!((a.frob(&m) - 0.0).abs() < 1e-12);
        // outside the range: rejected
        assert!(realize_target_a(&m, &p, 0.1).is_err());
    }

    #[test]
    fn rescale_identity_and_constant() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        let u = sample_function(&spec, &Descriptor::Gaussian { decay: 2.0 }).unwrap();
        let same = rescale(&u, [0, 0], 0, 1.5).unwrap();
        assert_eq!(same.values, u.values);

        let c = GridFunction::constant(&spec, 2.0);
        let z = rescale(&c, [4, 0], 2, 1.5).unwrap();
        let amp = 4.0f64.powf(1.5);
        for v in &z.values {
            assert!((v - 2.0 * amp).abs() < 1e-12);
        }
        assert_eq!(z.spec.n_cells, 16);
    }

    #[test]
    fn rescale_rejects_misalignment() {
        let spec = make_grid(1, 16, 1.0, 2.0).unwrap();
        let u = GridFunction::zeros(&spec);
        assert!(rescale(&u, [1, 0], 2, 1.5).is_err()); // 4 cells left
        assert!(rescale(&u, [3, 0], 0, 1.5).is_err()); // unit zoom off-centre
        assert!(rescale(&u, [99, 0], 1, 1.5).is_err()); // outside the box
    }
}
