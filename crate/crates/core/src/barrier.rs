//! Numerically certified barrier construction.
//!
//! The candidate is a capped inverse power `min(cap, |x|^-q)` shifted to
//! vanish on the support sphere `|x| = 8 sqrt(n)` and truncated to zero
//! beyond it. For each exponent in the sweep the extremal operator is
//! evaluated on the whole box; the certificate requires it to be nonnegative
//! outside the unit ball (up to a 1e-8 slack) and bounded below by -1 inside
//! after rescaling the barrier. Beyond the support the second differences are
//! nonnegative termwise, so no numerical check is needed there.

use crate::error::{Error, Result};
use crate::grid::{ExteriorRule, GridFunction, GridSpec};
use crate::kernel::KernelWeights;
use crate::ops::{eval_sigma_hessian_at, pucci_of, EllipticityParams, PucciSide};
use rayon::prelude::*;

/// Result of a passing barrier sweep.
#[derive(Debug, Clone)]
pub struct BarrierCertificate {
    pub phi: GridFunction,
    pub psi: GridFunction,
    /// Positive floor of the barrier on the cube Q(0;6).
    pub c_phi: f64,
    /// Minimum over box nodes of `M^- phi + psi`; passing means >= -1e-8.
    pub min_slack: f64,
    pub support_ok: bool,
    /// Exponent that certified.
    pub q: f64,
    /// Rescaling applied so that `0 <= psi <= 1`.
    pub scale: f64,
}

pub const SLACK_TOLERANCE: f64 = 1e-8;

/// Default exponent sweep, from the regime where the pure power already has
/// a nonnegative extremal image to the cap-dominated regime.
pub fn default_sweep() -> Vec<f64> {
    vec![0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0]
}

/// Radial profile: inverse power with a C^1 quadratic cap on `[0, r_cap]`.
fn capped_power(r: f64, q: f64, r_cap: f64) -> f64 {
    if r >= r_cap {
        r.powf(-q)
    } else {
        // a - b r^2 matching value and slope at r_cap
        let b = 0.5 * q * r_cap.powf(-q - 2.0);
        let a = r_cap.powf(-q) * (1.0 + 0.5 * q);
        a - b * r * r
    }
}

fn build_phi(spec: &GridSpec, q: f64, r_cap: f64, support_radius: f64) -> GridFunction {
    let shift = support_radius.powf(-q);
    GridFunction::from_fn(spec, ExteriorRule::Zero, |p| {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if r >= support_radius {
            0.0
        } else {
            capped_power(r, q, r_cap) - shift
        }
    })
}

/// Sweep the exponent range and return the first certifying barrier.
pub fn barrier_construct(
    spec: &GridSpec,
    params: &EllipticityParams,
    weights: &KernelWeights,
    sweep: &[f64],
) -> Result<BarrierCertificate> {
    let support_radius = 8.0 * (spec.dim as f64).sqrt();
    if spec.half_width < support_radius {
        return Err(Error::InvalidGrid(format!(
            "box half_width {} cannot hold the barrier support radius {support_radius}",
            spec.half_width
        )));
    }
    if sweep.is_empty() {
        return Err(Error::InvalidParam("empty exponent sweep".into()));
    }
    let r_cap = 2.0 * spec.h;
    let nodes = spec.box_nodes();
    let mut best: Vec<(f64, f64)> = Vec::new();

    for &q in sweep {
        let phi = build_phi(spec, q, r_cap, support_radius);
        let m_minus: Vec<f64> = nodes
            .par_iter()
            .map(|s| pucci_of(&eval_sigma_hessian_at(&phi, weights, *s), params, PucciSide::Minus))
            .collect();

        // Rescale so the worst dip inside B_1 is exactly -1.
        let mut worst_inside = 0.0f64;
        for (s, v) in nodes.iter().zip(&m_minus) {
            if spec.radius2(*s) <= 1.0 {
                worst_inside = worst_inside.max(-v);
            }
        }
        let scale = if worst_inside > 1.0 { 1.0 / worst_inside } else { 1.0 };

        let mut psi = GridFunction::zeros(spec);
        let mut min_slack = f64::INFINITY;
        for (s, v) in nodes.iter().zip(&m_minus) {
            let mv = scale * v;
            let inside_b1 = spec.radius2(*s) <= 1.0;
            let psi_v = if inside_b1 { (-mv).max(0.0) } else { 0.0 };
            psi.set(*s, psi_v);
            min_slack = min_slack.min(mv + psi_v);
        }

        let mut c_phi = f64::INFINITY;
        let mut support_ok = true;
        for s in spec.extended_nodes() {
            let p = spec.position(s);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let v = phi.at(s);
            let inf_norm = if spec.dim == 1 {
                p[0].abs()
            } else {
                p[0].abs().max(p[1].abs())
            };
            if inf_norm <= 6.0 {
                c_phi = c_phi.min(scale * v);
            }
            if r > support_radius && v != 0.0 {
                support_ok = false;
            }
        }

        if min_slack >= -SLACK_TOLERANCE && c_phi > 0.0 && support_ok {
            return Ok(BarrierCertificate {
                phi: phi.scaled(scale),
                psi,
                c_phi,
                min_slack,
                support_ok,
                q,
                scale,
            });
        }
        best.push((q, min_slack));
    }
    let detail: Vec<String> = best
        .iter()
        .map(|(q, s)| format!("q={q}: min_slack={s:.3e}"))
        .collect();
    Err(Error::Numerical(format!(
        "no exponent in the sweep certified a barrier; best slacks per q: {}",
        detail.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernel::build_weights;

    #[test]
    fn barrier_certifies_at_reference_parameters() {
        // n = 1, sigma = 1, lambda = 1, Lambda = 2 on a box holding B_8.
        let spec = make_grid(1, 256, 16.0, 32.0).unwrap();
        let params = EllipticityParams::new(1.0, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 1.0).unwrap();
        let cert = barrier_construct(&spec, &params, &w, &default_sweep()).unwrap();
        assert!(cert.min_slack >= -SLACK_TOLERANCE);
        assert!(cert.c_phi > 0.0);
        assert!(cert.support_ok);
        // support: zero at every node beyond 8 sqrt(n)
        for s in spec.extended_nodes() {
            let r = spec.radius2(s).sqrt();
            if r > 8.0 {
                assert_eq!(cert.phi.at(s), 0.0);
            }
        }
        // psi is an admissible right-hand side: 0 <= psi <= 1, zero outside B_1
        for s in spec.box_nodes() {
            let v = cert.psi.at(s);
            assert!((0.0..=1.0).contains(&v));
            if spec.radius2(s).sqrt() > 1.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn undersized_box_is_rejected() {
        let spec = make_grid(1, 64, 2.0, 4.0).unwrap();
        let params = EllipticityParams::new(1.0, 1.0, 2.0).unwrap();
        let w = build_weights(&spec, 1.0).unwrap();
        assert!(barrier_construct(&spec, &params, &w, &default_sweep()).is_err());
    }
}
