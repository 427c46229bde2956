//! Quadrature weights turning the singular second-difference integrals into
//! finite sums.
//!
//! For each nonzero grid offset `y_k` with `|y_k|_inf <= exterior_radius` the
//! weight matrix holds the exact integral of
//! `(2 - sigma) y_i y_j |y|^{-n - sigma - 2}` over the grid cell centred at
//! `y_k`. The origin cell `|y|_inf < h/2` is excluded (the scheme stays
//! monotone and the omission contributes O(h^{2-sigma}) consistency error).
//! The cells tile the extended box exactly; everything beyond it is carried
//! by a closed-form tail tensor, so the trace sum rule
//! `sum_k tr(W_k) + tr(T) = (2-sigma) int_{|y|_inf > h/2} |y|^{-n-sigma} dy`
//! holds to quadrature precision.
//!
//! In 1D the cell integrals have closed forms and are exact. In 2D a tensor
//! Gauss-Legendre rule is used, with order and subdivision raised near the
//! origin ring where the integrand varies fastest; weights are computed on
//! the fundamental wedge `i >= j >= 0` and extended by the dihedral symmetry
//! of the kernel, which makes evenness and 90-degree equivariance exact.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::quad::{gauss_16, gauss_32, gauss_4, gauss_8, GaussRule};
use crate::symmat::SymMat;

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// Precomputed quadrature weights for one (grid, sigma) pair.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    pub spec: GridSpec,
    pub sigma: f64,
    /// Nonzero offsets in grid steps, sorted by (|y|^2, i, j) ascending; the
    /// fixed summation order of every operator evaluation.
    pub offsets: Vec<[i32; 2]>,
    /// Weight matrix per offset, aligned with `offsets`.
    pub weights: Vec<SymMat>,
    /// Closed-form tail tensor for the constant-exterior rule.
    pub tail: SymMat,
    /// Set when the tail trace exceeds half the summed cell traces, i.e. the
    /// exterior radius is too small for the requested order.
    pub tail_dominates: bool,
}

impl KernelWeights {
    pub fn trace_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.trace()).sum()
    }

    /// Hex digest over the canonical offset list.
    pub fn offsets_checksum(&self) -> String {
        checksum_of_offsets(&self.offsets)
    }
}

fn checksum_of_offsets(offsets: &[[i32; 2]]) -> String {
    let mut hasher = Sha256::new();
    for o in offsets {
        hasher.update(o[0].to_le_bytes());
        hasher.update(o[1].to_le_bytes());
    }
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// `int_0^{pi/4} cos(theta)^sigma d theta`, the angular factor of the 2D
/// box-complement tail.
pub fn angular_cos_integral(sigma: f64) -> f64 {
    gauss_32().integrate(0.0, std::f64::consts::FRAC_PI_4, |t| t.cos().powf(sigma))
}

/// Scalar tail coefficient: the tail tensor is `tau * I` with
/// `tau = (2-sigma)/n * int_{outside box(a)} |y|^{-n-sigma} dy` and
/// `a = exterior_radius + h/2` the outer face of the last cell ring.
pub fn tail_scalar(dim: usize, sigma: f64, a: f64) -> f64 {
    match dim {
        1 => (2.0 - sigma) * 2.0 * a.powf(-sigma) / sigma,
        _ => (2.0 - sigma) * 4.0 * angular_cos_integral(sigma) * a.powf(-sigma) / sigma,
    }
}

/// `(2-sigma) int_{|y|_inf > a} |y|^{-n-sigma} dy`, the exact trace mass
/// outside an axis box of half-side `a`.
pub fn box_complement_trace_integral(dim: usize, sigma: f64, a: f64) -> f64 {
    match dim {
        1 => (2.0 - sigma) * 2.0 * a.powf(-sigma) / sigma,
        _ => (2.0 - sigma) * 8.0 * angular_cos_integral(sigma) * a.powf(-sigma) / sigma,
    }
}

/// Exact 1D cell weight over `[a, b]`, `0 < a < b`:
/// `(2-sigma) int_a^b y^{-1-sigma} dy`.
fn cell_weight_1d(sigma: f64, a: f64, b: f64) -> f64 {
    (2.0 - sigma) * (a.powf(-sigma) - b.powf(-sigma)) / sigma
}

/// Tensor Gauss integral of the three kernel components over one 2D cell,
/// optionally subdivided `sub x sub`.
fn cell_weight_2d(sigma: f64, center: [f64; 2], h: f64, rule: &GaussRule, sub: usize) -> [f64; 3] {
    let mut acc = [0.0f64; 3];
    let sh = h / sub as f64; // subcell side
    let half = 0.5 * sh;
    let expo = -(4.0 + sigma) / 2.0;
    for si in 0..sub {
        for sj in 0..sub {
            let cx = center[0] - 0.5 * h + (si as f64 + 0.5) * sh;
            let cy = center[1] - 0.5 * h + (sj as f64 + 0.5) * sh;
            for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
                let y1 = cx + half * xi;
                for (xj, wj) in rule.nodes.iter().zip(&rule.weights) {
                    let y2 = cy + half * xj;
                    let r2 = y1 * y1 + y2 * y2;
                    let k = r2.powf(expo) * wi * wj;
                    acc[0] += k * y1 * y1;
                    acc[1] += k * y1 * y2;
                    acc[2] += k * y2 * y2;
                }
            }
        }
    }
    let jac = half * half; // per-subcell Jacobian of the [-1,1]^2 map
    let c = (2.0 - sigma) * jac;
    [acc[0] * c, acc[1] * c, acc[2] * c]
}

/// Quadrature order/subdivision schedule by Chebyshev ring distance.
fn ring_rule(d: i32) -> (&'static GaussRule, usize) {
    match d {
        0 | 1 => (gauss_16(), 4),
        2 => (gauss_16(), 1),
        3..=8 => (gauss_8(), 1),
        _ => (gauss_4(), 1),
    }
}

/// Enumerate offsets in the canonical order: |y|^2 ascending, then (i, j).
fn canonical_offsets(spec: &GridSpec) -> Vec<[i32; 2]> {
    let n = spec.ext_steps;
    let mut offs = Vec::new();
    if spec.dim == 1 {
        for i in -n..=n {
            if i != 0 {
                offs.push([i, 0]);
            }
        }
    } else {
        for i in -n..=n {
            for j in -n..=n {
                if i != 0 || j != 0 {
                    offs.push([i, j]);
                }
            }
        }
    }
    offs.sort_by_key(|o| {
        let (i, j) = (o[0] as i64, o[1] as i64);
        (i * i + j * j, i, j)
    });
    offs
}

/// Build the weights for a grid and order `sigma` in (0, 2).
pub fn build_weights(spec: &GridSpec, sigma: f64) -> Result<KernelWeights> {
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::SigmaOutOfRange(sigma));
    }
    let h = spec.h;
    let offsets = canonical_offsets(spec);

    let weights: Vec<SymMat> = if spec.dim == 1 {
        offsets
            .iter()
            .map(|o| {
                let k = o[0].unsigned_abs() as f64;
                let a = (k - 0.5) * h;
                let b = (k + 0.5) * h;
                SymMat::scalar(cell_weight_1d(sigma, a, b))
            })
            .collect()
    } else {
        // Fundamental wedge i >= j >= 0 (i >= 1), extended by dihedral
        // symmetry so the full table is exactly symmetric.
        let n = spec.ext_steps;
        let mut wedge_cells = Vec::new();
        for i in 1..=n {
            for j in 0..=i {
                wedge_cells.push((i, j));
            }
        }
        let wedge: Vec<[f64; 3]> = wedge_cells
            .par_iter()
            .map(|&(i, j)| {
                let (rule, sub) = ring_rule(i);
                let mut w =
                    cell_weight_2d(sigma, [i as f64 * h, j as f64 * h], h, rule, sub);
                if j == 0 {
                    w[1] = 0.0; // axis cell: odd integrand cancels exactly
                }
                if i == j {
                    // diagonal cell: swap symmetry forces equal diagonal
                    let m = 0.5 * (w[0] + w[2]);
                    w[0] = m;
                    w[2] = m;
                }
                w
            })
            .collect();
        let index = |i: i32, j: i32| -> usize {
            // triangular index of wedge entry (i, j), i >= j >= 0, i >= 1
            ((i - 1) * i / 2 + (i - 1) + j) as usize
        };
        offsets
            .iter()
            .map(|o| {
                let (ai, aj) = (o[0].abs(), o[1].abs());
                let (p, q) = (ai.max(aj), ai.min(aj));
                let base = wedge[index(p, q)];
                let (w11, w22) = if ai >= aj {
                    (base[0], base[2])
                } else {
                    (base[2], base[0])
                };
                let sgn = if (o[0] as i64) * (o[1] as i64) < 0 { -1.0 } else { 1.0 };
                SymMat::new2(w11, sgn * base[1], w22)
            })
            .collect()
    };

    let a_out = (spec.ext_steps as f64 + 0.5) * h;
    let tau = tail_scalar(spec.dim, sigma, a_out);
    let tail = SymMat::iso(spec.dim, tau);
    let trace_sum: f64 = weights.iter().map(|w| w.trace()).sum();
    let tail_dominates = tail.trace() > 0.5 * trace_sum;

    Ok(KernelWeights {
        spec: *spec,
        sigma,
        offsets,
        weights,
        tail,
        tail_dominates,
    })
}

/// Per-spec weight cache keyed by (dim, n_cells, half_width bits, radius
/// bits, sigma bits); experiments reuse weights across instances.
pub fn cached_weights(spec: &GridSpec, sigma: f64) -> Result<std::sync::Arc<KernelWeights>> {
    type Key = (usize, usize, u64, u64, u64);
    static CACHE: OnceLock<std::sync::Mutex<std::collections::HashMap<Key, std::sync::Arc<KernelWeights>>>> =
        OnceLock::new();
    let key: Key = (
        spec.dim,
        spec.n_cells,
        spec.half_width.to_bits(),
        spec.exterior_radius.to_bits(),
        sigma.to_bits(),
    );
    let cache = CACHE.get_or_init(|| std::sync::Mutex::new(std::collections::HashMap::new()));
    if let Some(w) = cache.lock().unwrap().get(&key) {
        return Ok(w.clone());
    }
    let built = std::sync::Arc::new(build_weights(spec, sigma)?);
    cache
        .lock()
        .unwrap()
        .insert(key, built.clone());
    Ok(built)
}

/// Write the weight table to a text cache file.
pub fn save_weights(w: &KernelWeights, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("# nonlocal kernel weights cache\n");
    let _ = writeln!(out, "format_version = {CACHE_FORMAT_VERSION}");
    let _ = writeln!(out, "dim = {}", w.spec.dim);
    let _ = writeln!(out, "n_cells = {}", w.spec.n_cells);
    let _ = writeln!(out, "half_width = {:.17e}", w.spec.half_width);
    let _ = writeln!(out, "exterior_radius = {:.17e}", w.spec.exterior_radius);
    let _ = writeln!(out, "h = {:.17e}", w.spec.h);
    let _ = writeln!(out, "sigma = {:.17e}", w.sigma);
    let _ = writeln!(out, "offsets_checksum = {}", w.offsets_checksum());
    let _ = writeln!(out, "offset_count = {}", w.offsets.len());
    if w.spec.dim == 1 {
        let _ = writeln!(out, "tail = {:.17e}", w.tail.m[0]);
        for (o, m) in w.offsets.iter().zip(&w.weights) {
            let _ = writeln!(out, "{} {:.17e}", o[0], m.m[0]);
        }
    } else {
        let _ = writeln!(out, "tail = {:.17e} {:.17e} {:.17e}", w.tail.m[0], w.tail.m[1], w.tail.m[2]);
        for (o, m) in w.offsets.iter().zip(&w.weights) {
            let _ = writeln!(
                out,
                "{} {} {:.17e} {:.17e} {:.17e}",
                o[0], o[1], m.m[0], m.m[1], m.m[2]
            );
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a weight cache, rejecting version or checksum mismatches.
pub fn load_weights(path: &Path) -> Result<KernelWeights> {
    let text = std::fs::read_to_string(path)?;
    let mut header = std::collections::HashMap::new();
    let mut body_start = 0usize;
    let mut tail_line: Option<String> = None;
    let lines: Vec<&str> = text.lines().collect();
    for (idx, line) in lines.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            let k = k.trim();
            if k == "tail" {
                tail_line = Some(v.trim().to_string());
                body_start = idx + 1;
                break;
            }
            header.insert(k.to_string(), v.trim().to_string());
        } else {
            body_start = idx;
            break;
        }
    }
    let get = |k: &str| -> Result<&String> {
        header
            .get(k)
            .ok_or_else(|| Error::Cache(format!("missing header field {k}")))
    };
    let version: u32 = get("format_version")?
        .parse()
        .map_err(|_| Error::Cache("bad format_version".into()))?;
    if version != CACHE_FORMAT_VERSION {
        return Err(Error::Cache(format!(
            "format_version {version} unsupported (expected {CACHE_FORMAT_VERSION})"
        )));
    }
    let dim: usize = get("dim")?.parse().map_err(|_| Error::Cache("bad dim".into()))?;
    let n_cells: usize = get("n_cells")?
        .parse()
        .map_err(|_| Error::Cache("bad n_cells".into()))?;
    let half_width: f64 = get("half_width")?
        .parse()
        .map_err(|_| Error::Cache("bad half_width".into()))?;
    let exterior_radius: f64 = get("exterior_radius")?
        .parse()
        .map_err(|_| Error::Cache("bad exterior_radius".into()))?;
    let sigma: f64 = get("sigma")?
        .parse()
        .map_err(|_| Error::Cache("bad sigma".into()))?;
    let expected_checksum = get("offsets_checksum")?.clone();
    let count: usize = get("offset_count")?
        .parse()
        .map_err(|_| Error::Cache("bad offset_count".into()))?;
    let spec = GridSpec::new(dim, n_cells, half_width, exterior_radius)?;

    let tail_line = tail_line.ok_or_else(|| Error::Cache("missing tail line".into()))?;
    let tail_vals: Vec<f64> = tail_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Cache("bad tail entry".into())))
        .collect::<Result<_>>()?;
    let tail = match (dim, tail_vals.as_slice()) {
        (1, [t]) => SymMat::scalar(*t),
        (2, [a, b, c]) => SymMat::new2(*a, *b, *c),
        _ => return Err(Error::Cache("tail entry count does not match dim".into())),
    };

    let mut offsets = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for line in &lines[body_start..] {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Cache(format!("malformed weight line: {line}"));
        if dim == 1 {
            if toks.len() != 2 {
                return Err(bad());
            }
            let i: i32 = toks[0].parse().map_err(|_| bad())?;
            let w: f64 = toks[1].parse().map_err(|_| bad())?;
            offsets.push([i, 0]);
            weights.push(SymMat::scalar(w));
        } else {
            if toks.len() != 5 {
                return Err(bad());
            }
            let i: i32 = toks[0].parse().map_err(|_| bad())?;
            let j: i32 = toks[1].parse().map_err(|_| bad())?;
            let vals: Vec<f64> = toks[2..]
                .iter()
                .map(|t| t.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            offsets.push([i, j]);
            weights.push(SymMat::new2(vals[0], vals[1], vals[2]));
        }
    }
    if offsets.len() != count {
        return Err(Error::Cache(format!(
            "offset_count {count} does not match parsed {} lines",
            offsets.len()
        )));
    }
    let actual = checksum_of_offsets(&offsets);
    if actual != expected_checksum {
        return Err(Error::Cache(format!(
            "offsets checksum mismatch: header {expected_checksum}, recomputed {actual}"
        )));
    }
    let trace_sum: f64 = weights.iter().map(|w| w.trace()).sum();
    let tail_dominates = tail.trace() > 0.5 * trace_sum;
    Ok(KernelWeights {
        spec,
        sigma,
        offsets,
        weights,
        tail,
        tail_dominates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn rejects_sigma_outside_range() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        assert!(build_weights(&spec, 0.0).is_err());
        assert!(build_weights(&spec, 2.0).is_err());
        assert!(build_weights(&spec, 2.5).is_err());
    }

    #[test]
    fn evenness_is_exact() {
        for (dim, n) in [(1usize, 64usize), (2, 16)] {
            let spec = make_grid(dim, n, 1.0, 2.0).unwrap();
            let w = build_weights(&spec, 1.3).unwrap();
            let lookup: std::collections::HashMap<[i32; 2], SymMat> = w
                .offsets
                .iter()
                .copied()
                .zip(w.weights.iter().copied())
                .collect();
            for (o, m) in w.offsets.iter().zip(&w.weights) {
                let neg = lookup[&[-o[0], -o[1]]];
                assert_eq!(m.m, neg.m, "offset {o:?}");
            }
        }
    }

    #[test]
    fn trace_sum_rule_1d() {
        // sigma = 1: sum of weights plus tail equals (2-sigma) * 2 * (h/2)^-1
        let spec = make_grid(1, 128, 1.0, 4.0).unwrap();
        let w = build_weights(&spec, 1.0).unwrap();
        let total = w.trace_sum() + w.tail.trace();
        let expect = 2.0 * (2.0 / spec.h);
        assert!(
            ((total - expect) / expect).abs() < 1e-12,
            "total {total} expect {expect}"
        );
        // and for generic sigma against the closed form
        for sigma in [0.5, 1.5, 1.9] {
            let w = build_weights(&spec, sigma).unwrap();
            let total = w.trace_sum() + w.tail.trace();
            let expect = box_complement_trace_integral(1, sigma, 0.5 * spec.h);
            assert!(((total - expect) / expect).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_sum_rule_2d() {
        let spec = make_grid(2, 32, 1.0, 2.0).unwrap();
        for sigma in [0.5, 1.0, 1.5] {
            let w = build_weights(&spec, sigma).unwrap();
            let total = w.trace_sum() + w.tail.trace();
            let expect = box_complement_trace_integral(2, sigma, 0.5 * spec.h);
            assert!(
                ((total - expect) / expect).abs() < 1e-7,
                "sigma {sigma}: total {total} expect {expect}"
            );
        }
    }

    #[test]
    fn axis_offsets_have_zero_cross_term() {
        let spec = make_grid(2, 16, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 1.5).unwrap();
        for (o, m) in w.offsets.iter().zip(&w.weights) {
            if o[0] == 0 || o[1] == 0 {
                assert_eq!(m.m[1], 0.0, "offset {o:?}");
            }
        }
    }

    #[test]
    fn weights_are_positive_semidefinite() {
        let spec = make_grid(2, 16, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 0.7).unwrap();
        for m in &w.weights {
            assert!(m.m[0] >= 0.0 && m.m[2] >= 0.0);
            let det = m.m[0] * m.m[2] - m.m[1] * m.m[1];
            assert!(det >= -1e-18 * m.m[0].max(m.m[2]).max(1e-300));
        }
    }

    #[test]
    fn near_cell_quadrature_matches_refined_oracle() {
        // Production weights vs an 8x8-subdivided Gauss-16 reference on the
        // cells where the integrand varies fastest.
        let spec = make_grid(2, 16, 1.0, 2.0).unwrap();
        let h = spec.h;
        for sigma in [0.5, 1.5, 1.9] {
            let w = build_weights(&spec, sigma).unwrap();
            let lookup: std::collections::HashMap<[i32; 2], SymMat> = w
                .offsets
                .iter()
                .copied()
                .zip(w.weights.iter().copied())
                .collect();
            for off in [[1i32, 0i32], [1, 1], [2, 1], [3, 2], [5, 0], [9, 4]] {
                let oracle = cell_weight_2d(
                    sigma,
                    [off[0] as f64 * h, off[1] as f64 * h],
                    h,
                    gauss_16(),
                    8,
                );
                let got = lookup[&off];
                let scale = oracle[0].abs() + oracle[2].abs();
                for c in 0..3 {
                    assert!(
                        (got.m[c] - oracle[c]).abs() <= 1e-6 * scale,
                        "sigma {sigma} offset {off:?} comp {c}: {} vs {}",
                        got.m[c],
                        oracle[c]
                    );
                }
            }
        }
    }

    #[test]
    fn one_d_weights_match_gauss_oracle() {
        let spec = make_grid(1, 64, 1.0, 2.0).unwrap();
        let h = spec.h;
        for sigma in [0.5, 1.0, 1.9] {
            let w = build_weights(&spec, sigma).unwrap();
            let lookup: std::collections::HashMap<[i32; 2], SymMat> = w
                .offsets
                .iter()
                .copied()
                .zip(w.weights.iter().copied())
                .collect();
            for k in [1i32, 2, 7, 33] {
                let (a, b) = ((k as f64 - 0.5) * h, (k as f64 + 0.5) * h);
                let oracle =
                    (2.0 - sigma) * gauss_16().integrate(a, b, |y| y.powf(-1.0 - sigma));
                let got = lookup[&[k, 0]].m[0];
                assert!(
                    ((got - oracle) / oracle).abs() < 1e-6,
                    "sigma {sigma} k {k}: {got} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn tail_dominance_flag_trips_on_small_radius() {
        // Minimal radius with a very low order: most of the mass is beyond
        // the extended box.
        let spec = make_grid(1, 8, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 0.05).unwrap();
        assert!(w.tail_dominates);
        let spec = make_grid(1, 128, 1.0, 8.0).unwrap();
        let w = build_weights(&spec, 1.5).unwrap();
        assert!(!w.tail_dominates);
    }

    #[test]
    fn cache_roundtrip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let spec = make_grid(2, 16, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 1.5).unwrap();
        let path = dir.path().join("weights.txt");
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.offsets, w.offsets);
        assert_eq!(back.weights.len(), w.weights.len());
        for (a, b) in back.weights.iter().zip(&w.weights) {
            assert_eq!(a.m, b.m);
        }
        assert_eq!(back.tail.m, w.tail.m);

        // tamper with an offset line: checksum must reject
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\n1 0 ", "\n2 0 ", 1);
        assert_ne!(text, tampered);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Cache(_))));

        // version bump must reject
        let tampered = text.replace("format_version = 1", "format_version = 99");
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Cache(_))));
    }
}
