//! Power-law fitting and region quasi-norms used by the experiment runners.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::solver::Region;

/// Least-squares line through (log x, log y).
#[derive(Debug, Clone, Copy)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_constant: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fit `y = C x^p` by least squares in log-log coordinates. Requires at
/// least three strictly positive pairs.
pub fn fit_powerlaw(pairs: &[(f64, f64)]) -> Result<PowerLawFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParam(format!(
            "power-law fit needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidParam(
            "power-law fit needs strictly positive data".into(),
        ));
    }
    let n = pairs.len() as f64;
    let logs: Vec<(f64, f64)> = pairs.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let mean_x = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in &logs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParam(
            "power-law fit needs at least two distinct abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = logs
        .iter()
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if syy <= 1e-300 {
        // constant ordinates: the zero-slope line fits perfectly
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        exponent: slope,
        log_constant: intercept,
        r_squared,
        samples: pairs.len(),
    })
}

/// Node-sampled values of `|v|` on a region of the computational box,
/// each carrying `h^dim` of measure.
pub fn region_samples(v: &GridFunction, region: &Region) -> Vec<f64> {
    let spec = &v.spec;
    spec.box_nodes()
        .into_iter()
        .filter(|s| region.contains(spec.dim, spec.position(*s)))
        .map(|s| v.at(s).abs())
        .collect()
}

/// The L^eps quasi-norm `(sum |v|^eps h^dim)^{1/eps}` over a region.
pub fn lepsilon_norm(v: &GridFunction, eps: f64, region: &Region) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "quasi-norm exponent must be positive, got {eps}"
        )));
    }
    let measure = v.spec.cell_measure();
    let total: f64 = region_samples(v, region)
        .into_iter()
        .map(|a| a.powf(eps) * measure)
        .sum();
    Ok(total.powf(1.0 / eps))
}

/// Distribution function `m(t) = measure of { |v| > t }` over a region.
pub fn distribution_measure(samples: &[f64], cell_measure: f64, t: f64) -> f64 {
    samples.iter().filter(|a| **a > t).count() as f64 * cell_measure
}

/// The same quasi-norm computed through the layer-cake identity
/// `int_0^inf eps t^{eps-1} m(t) dt`, integrated exactly over the piecewise-
/// constant distribution function. Independent route used to cross-check
/// `lepsilon_norm` on every experiment instance.
pub fn lepsilon_norm_layercake(samples: &[f64], cell_measure: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "quasi-norm exponent must be positive, got {eps}"
        )));
    }
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|a| *a > 0.0).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    // m(t) is constant between consecutive distinct sample values; the exact
    // integral telescopes over the jumps.
    let mut total = 0.0;
    let mut prev_t = 0.0f64;
    let n = sorted.len();
    let mut idx = 0usize;
    while idx < n {
        let t = sorted[idx];
        let mut j = idx;
        while j < n && sorted[j] == t {
            j += 1;
        }
        // on (prev_t, t], m = measure of samples >= current value group start
        let m_here = (n - idx) as f64 * cell_measure;
        total += m_here * (t.powf(eps) - prev_t.powf(eps));
        prev_t = t;
        idx = j;
    }
    Ok(total.powf(1.0 / eps))
}

/// Log-spaced quantile thresholds over the top decade of the samples.
pub fn top_decade_thresholds(samples: &[f64], count: usize) -> Vec<f64> {
    let max = samples.iter().fold(0.0f64, |m, v| m.max(*v));
    if max <= 0.0 {
        return Vec::new();
    }
    let lo = max / 10.0;
    let hi = max * (1.0 - 1e-9); // keep m(t) > 0 at the top threshold
    let n = count.max(2);
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridFunction};

    #[test]
    fn exact_line_fits_exactly() {
        let fit = fit_powerlaw(&[(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]).unwrap();
        assert!((fit.exponent - 1.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_data_has_zero_exponent() {
        let c = 3.7;
        let fit = fit_powerlaw(&[(1.0, c), (10.0, c), (100.0, c)]).unwrap();
        assert!(fit.exponent.abs() < 1e-14);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn noisy_power_law_recovers_exponent() {
        // y = 3 x^2.5 with deterministic +-1% perturbation
        let pairs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = 1.0 + i as f64;
                let noise = 1.0 + 0.01 * ((i * 2654435761u64 as usize) % 200) as f64 / 100.0 - 0.01;
                (x, 3.0 * x.powf(2.5) * noise)
            })
            .collect();
        let fit = fit_powerlaw(&pairs).unwrap();
        assert!((fit.exponent - 2.5).abs() < 0.1, "exponent {}", fit.exponent);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_powerlaw(&[(1.0, 2.0), (2.0, 4.0)]).is_err());
        assert!(fit_powerlaw(&[(1.0, 2.0), (-2.0, 4.0), (3.0, 1.0)]).is_err());
        assert!(fit_powerlaw(&[(1.0, 0.0), (2.0, 4.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn quasi_norm_of_constant_on_half_ball() {
        // v = 1 on B_1/2, eps = 1/2: norm = |B_1/2|^2 in cell measure
        let spec = make_grid(1, 256, 1.0, 2.0).unwrap();
        let v = GridFunction::constant(&spec, 1.0);
        let region = Region::Ball { radius: 0.5 };
        let norm = lepsilon_norm(&v, 0.5, &region).unwrap();
        let node_count = spec
            .box_nodes()
            .iter()
            .filter(|s| region.contains(1, spec.position(**s)))
            .count();
        let measure = node_count as f64 * spec.h;
        assert!((norm - measure * measure).abs() < 1e-12);
        let z = GridFunction::zeros(&spec);
        assert_eq!(lepsilon_norm(&z, 0.5, &region).unwrap(), 0.0);
    }

    #[test]
    fn layercake_route_matches_direct_sum() {
        let samples: Vec<f64> = (0..500)
            .map(|i| ((i * 37) % 101) as f64 / 17.0)
            .collect();
        for eps in [0.3, 0.5, 1.0] {
            let direct: f64 = samples
                .iter()
                .map(|a| a.powf(eps) * 0.01)
                .sum::<f64>()
                .powf(1.0 / eps);
            let lc = lepsilon_norm_layercake(&samples, 0.01, eps).unwrap();
            assert!(
                ((direct - lc) / direct).abs() < 1e-12,
                "eps {eps}: {direct} vs {lc}"
            );
        }
    }
}
