//! Experiment runners that instantiate the quantitative estimates at desk
//! scale, fit the free exponents, and emit reproducible reports.
//!
//! Determinism contract: every instance draws from its own counter-derived
//! RNG stream, rows are ordered by instance index, and all numeric output
//! uses the shortest round-trip decimal form. Re-running a configuration
//! reproduces every output byte for byte.

pub mod abp;
pub mod levelset;
pub mod localize;
pub mod potential;

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec, SetIndicator};
use crate::io::Manifest;
use crate::ops::{EllipticityParams, MatrixField};
use crate::symmat::SymMat;

/// Coefficient-field families. The rough families are the point of the
/// level-set experiments; smooth fields would make them vacuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffFamily {
    Constant,
    Checkerboard,
    RandomRotation,
    /// Alternate checkerboard / random-rotation by instance parity.
    Alternating,
}

impl std::str::FromStr for CoeffFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(CoeffFamily::Constant),
            "checkerboard" => Ok(CoeffFamily::Checkerboard),
            "random-rotation" => Ok(CoeffFamily::RandomRotation),
            "alternating" => Ok(CoeffFamily::Alternating),
            other => Err(Error::Config(format!("unknown coefficient family {other}"))),
        }
    }
}

impl std::fmt::Display for CoeffFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CoeffFamily::Constant => "constant",
            CoeffFamily::Checkerboard => "checkerboard",
            CoeffFamily::RandomRotation => "random-rotation",
            CoeffFamily::Alternating => "alternating",
        };
        f.write_str(s)
    }
}

/// Source-set families for the potential experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetFamily {
    RandomCells,
    Balls,
    Unions,
}

impl std::str::FromStr for SetFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-cells" => Ok(SetFamily::RandomCells),
            "balls" => Ok(SetFamily::Balls),
            "unions" => Ok(SetFamily::Unions),
            other => Err(Error::Config(format!("unknown set family {other}"))),
        }
    }
}

impl std::fmt::Display for SetFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SetFamily::RandomCells => "random-cells",
            SetFamily::Balls => "balls",
            SetFamily::Unions => "unions",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_cells: usize,
    pub half_width: f64,
    pub exterior_radius: f64,
    pub sigmas: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub instance_count: usize,
    pub coeff_family: CoeffFamily,
    pub set_family: SetFamily,
    /// Density thresholds swept by the cube sub-experiment.
    pub beta_sweep: Vec<f64>,
    pub alpha: f64,
    /// Replace the random right-hand side by this constant (the constant-K
    /// estimate mode).
    pub constant_rhs: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dim: 1,
            n_cells: 256,
            half_width: 1.0,
            exterior_radius: 4.0,
            sigmas: vec![0.5, 1.0, 1.5, 1.9],
            lambda_min: 1.0,
            lambda_max: 2.0,
            instance_count: 50,
            coeff_family: CoeffFamily::RandomRotation,
            set_family: SetFamily::RandomCells,
            beta_sweep: vec![0.9, 0.95, 0.99],
            alpha: 0.5,
            constant_rhs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instance_count < 1 {
            return Err(Error::Config("instance count must be at least 1".into()));
        }
        if self.sigmas.is_empty() {
            return Err(Error::Config("need at least one sigma".into()));
        }
        for s in &self.sigmas {
            if !(*s > 0.0 && *s < 2.0) {
                return Err(Error::SigmaOutOfRange(*s));
            }
        }
        if self.beta_sweep.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Config("beta values must lie in (0,1)".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0,1)".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.n_cells, self.half_width, self.exterior_radius)
    }

    pub fn params(&self, sigma: f64) -> Result<EllipticityParams> {
        EllipticityParams::new(sigma, self.lambda_min, self.lambda_max)
    }

    pub fn sigma_for(&self, instance: usize) -> f64 {
        self.sigmas[instance % self.sigmas.len()]
    }

    /// Per-instance RNG stream, decorrelated by splitmix over (seed, index).
    pub fn instance_rng(&self, instance: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, instance as u64))
    }

    /// Independent per-purpose stream, so drawing a resolution-dependent
    /// object (such as a per-node coefficient field) does not perturb the
    /// other draws of the instance across resolutions.
    pub fn instance_rng_salted(&self, instance: usize, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(mix(self.seed, instance as u64), salt))
    }

    pub fn echo_into(&self, m: &mut Manifest) {
        m.set("seed", self.seed);
        m.set("dim", self.dim);
        m.set("n-cells", self.n_cells);
        m.set("half-width", self.half_width);
        m.set("exterior-radius", self.exterior_radius);
        m.set(
            "sigma",
            self.sigmas
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.set("lambda", self.lambda_min);
        m.set("Lambda", self.lambda_max);
        m.set("instances", self.instance_count);
        m.set("coeff-family", self.coeff_family);
        m.set("set-family", self.set_family);
        m.set(
            "beta",
            self.beta_sweep
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.set("alpha", self.alpha);
        if let Some(k) = self.constant_rhs {
            m.set("constant-rhs", k);
        }
    }
}

fn mix(seed: u64, idx: u64) -> u64 {
    // splitmix64 over the pair
    let mut z = seed
        .wrapping_add(0x9E3779B97F4A7C15)
        .wrapping_add(idx.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Draw an admissible coefficient field from a family.
pub fn random_matrix_field(
    spec: &GridSpec,
    p: EllipticityParams,
    family: CoeffFamily,
    instance: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MatrixField> {
    let family = match family {
        CoeffFamily::Alternating => {
            if instance % 2 == 0 {
                CoeffFamily::Checkerboard
            } else {
                CoeffFamily::RandomRotation
            }
        }
        f => f,
    };
    let (lo, hi) = (p.lambda_min, p.lambda_max);
    match family {
        CoeffFamily::Constant => {
            let a = random_admissible(spec.dim, lo, hi, rng);
            MatrixField::constant(spec, p, a)
        }
        CoeffFamily::Checkerboard => MatrixField::from_fn(spec, p, |s| {
            let flip = (s[0] + s[1]).rem_euclid(2) == 1;
            if spec.dim == 1 {
                SymMat::scalar(if flip { hi } else { lo })
            } else if flip {
                SymMat::diag(2, hi, lo)
            } else {
                SymMat::diag(2, lo, hi)
            }
        }),
        CoeffFamily::RandomRotation => {
            // Pre-draw one matrix per box node in canonical (row-major) node
            // order, then look them up by node address.
            let nodes = spec.box_nodes();
            let mats: Vec<SymMat> = nodes
                .iter()
                .map(|_| random_admissible(spec.dim, lo, hi, rng))
                .collect();
            let b = spec.box_steps;
            let per_axis = (2 * b + 1) as usize;
            let dim = spec.dim;
            MatrixField::from_fn(spec, p, move |s| {
                let idx = if dim == 1 {
                    (s[0] + b) as usize
                } else {
                    (s[0] + b) as usize * per_axis + (s[1] + b) as usize
                };
                mats[idx]
            })
        }
        CoeffFamily::Alternating => unreachable!(),
    }
}

fn random_admissible(dim: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> SymMat {
    if dim == 1 {
        SymMat::scalar(rng.gen_range(lo..=hi))
    } else {
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let d0 = rng.gen_range(lo..=hi);
        let d1 = rng.gen_range(lo..=hi);
        SymMat::from_rotation(theta, d0, d1)
    }
}

/// Random smooth field: a few Gaussian bumps with random centres, widths and
/// signed amplitudes, vanishing at infinity.
pub fn random_smooth_field(
    spec: &GridSpec,
    rng: &mut ChaCha8Rng,
    bump_count: usize,
    center_radius: f64,
    signed: bool,
) -> GridFunction {
    let mut bumps = Vec::new();
    for _ in 0..bump_count {
        let cx = rng.gen_range(-center_radius..=center_radius);
        let cy = if spec.dim == 2 {
            rng.gen_range(-center_radius..=center_radius)
        } else {
            0.0
        };
        let width = rng.gen_range(4.0..40.0);
        let amp = if signed {
            rng.gen_range(-1.0..=1.0)
        } else {
            rng.gen_range(0.1..=1.0)
        };
        bumps.push((cx, cy, width, amp));
    }
    GridFunction::from_fn(spec, crate::grid::ExteriorRule::Zero, |p| {
        bumps
            .iter()
            .map(|&(cx, cy, w, a)| {
                let dx = p[0] - cx;
                let dy = p[1] - cy;
                a * (-w * (dx * dx + dy * dy)).exp()
            })
            .sum::<f64>()
    })
}

/// Random source set inside the half ball, sized so its measure tracks
/// `fill * |B_1/2|`.
pub fn random_source_set(
    spec: &GridSpec,
    family: SetFamily,
    fill: f64,
    rng: &mut ChaCha8Rng,
) -> SetIndicator {
    let mut e = SetIndicator::empty(spec);
    let in_half_ball = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1] < 0.25;
    match family {
        SetFamily::RandomCells => {
            let n = spec.n_cells;
            let cells: Vec<[usize; 2]> = if spec.dim == 1 {
                (0..n).map(|i| [i, 0]).collect()
            } else {
                (0..n).flat_map(|i| (0..n).map(move |j| [i, j])).collect()
            };
            for c in cells {
                if in_half_ball(spec.cell_center(c)) && rng.gen::<f64>() < fill {
                    e.insert(c);
                }
            }
        }
        SetFamily::Balls | SetFamily::Unions => {
            let count = if family == SetFamily::Balls {
                1
            } else {
                rng.gen_range(2..=4)
            };
            // split the target measure across the balls
            let per_fill = fill / count as f64;
            let radius = 0.5 * per_fill.powf(1.0 / spec.dim as f64).min(1.0) * 0.9 + 0.5 * spec.h;
            for _ in 0..count {
                let cx = rng.gen_range(-0.4..=0.4);
                let cy = if spec.dim == 2 { rng.gen_range(-0.4..=0.4) } else { 0.0 };
                e.fill_where(|p| {
                    let dx = p[0] - cx;
                    let dy = p[1] - cy;
                    in_half_ball(p) && dx * dx + dy * dy < radius * radius
                });
            }
        }
    }
    if e.count() == 0 {
        // keep the instance nondegenerate: force one cell near the centre
        let mid = spec.n_cells / 2;
        e.insert(if spec.dim == 1 { [mid, 0] } else { [mid, mid] });
    }
    e
}

/// Verdict of one acceptance rule inside a report.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub rule: String,
    pub pass: bool,
    pub detail: String,
}

/// Fitted or measured scalar recorded alongside the rows.
#[derive(Debug, Clone)]
pub struct FitEntry {
    pub name: String,
    pub exponent: f64,
    pub log_constant: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Per-experiment output: instance rows, fits, and verdicts, serializable to
/// rows.csv / fits.csv / manifest.txt.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub experiment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub fits: Vec<FitEntry>,
    pub constants: Vec<(String, f64)>,
    pub verdicts: Vec<Verdict>,
    pub wall_seconds: f64,
}

impl EstimateReport {
    pub fn new(experiment: &str, columns: &[&str]) -> Self {
        EstimateReport {
            experiment: experiment.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            fits: Vec::new(),
            constants: Vec::new(),
            verdicts: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn verdict(&mut self, rule: &str, pass: bool, detail: String) {
        self.verdicts.push(Verdict {
            rule: rule.to_string(),
            pass,
            detail,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn rows_csv(&self, manifest_checksum: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# manifest_checksum={manifest_checksum} experiment={}",
            self.experiment
        );
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn fits_csv(&self, manifest_checksum: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# manifest_checksum={manifest_checksum} experiment={}",
            self.experiment
        );
        let _ = writeln!(out, "name,exponent,log_constant,r_squared,samples");
        for f in &self.fits {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                f.name, f.exponent, f.log_constant, f.r_squared, f.samples
            );
        }
        for (name, value) in &self.constants {
            let _ = writeln!(out, "{name},{value},,,");
        }
        out
    }

    /// Write rows.csv, fits.csv and manifest.txt under `dir`.
    pub fn write_outputs(&self, dir: &Path, manifest: &mut Manifest) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let checksum = manifest.checksum();
        std::fs::write(dir.join("rows.csv"), self.rows_csv(&checksum))?;
        std::fs::write(dir.join("fits.csv"), self.fits_csv(&checksum))?;
        manifest.note("experiment", &self.experiment);
        manifest.note("wall_seconds", self.wall_seconds);
        for v in &self.verdicts {
            manifest.note(
                &format!("verdict.{}", v.rule),
                format!("{} ({})", if v.pass { "pass" } else { "FAIL" }, v.detail),
            );
        }
        manifest.note("all_pass", self.all_pass());
        manifest.write(&dir.join("manifest.txt"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_streams_are_decorrelated_and_deterministic() {
        let cfg = ExperimentConfig::default();
        let mut a = cfg.instance_rng(3);
        let mut b = cfg.instance_rng(4);
        let mut a2 = cfg.instance_rng(3);
        let x: f64 = a.gen();
        let y: f64 = b.gen();
        let x2: f64 = a2.gen();
        assert_ne!(x, y);
        assert_eq!(x, x2);
    }

    #[test]
    fn families_parse_and_display() {
        for s in ["constant", "checkerboard", "random-rotation", "alternating"] {
            let f: CoeffFamily = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("smooth".parse::<CoeffFamily>().is_err());
        for s in ["random-cells", "balls", "unions"] {
            let f: SetFamily = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
    }

    #[test]
    fn random_fields_are_admissible() {
        let cfg = ExperimentConfig::default();
        let spec = GridSpec::new(2, 16, 1.0, 2.0).unwrap();
        let p = cfg.params(1.5).unwrap();
        for (i, fam) in [
            CoeffFamily::Constant,
            CoeffFamily::Checkerboard,
            CoeffFamily::RandomRotation,
            CoeffFamily::Alternating,
        ]
        .iter()
        .enumerate()
        {
            let mut rng = cfg.instance_rng(i);
            let field = random_matrix_field(&spec, p, *fam, i, &mut rng).unwrap();
            field.validate().unwrap();
        }
    }

    #[test]
    fn source_sets_are_nonempty_and_inside_the_half_ball() {
        let cfg = ExperimentConfig::default();
        let spec = GridSpec::new(1, 256, 1.0, 2.0).unwrap();
        for (i, fam) in [SetFamily::RandomCells, SetFamily::Balls, SetFamily::Unions]
            .iter()
            .enumerate()
        {
            let mut rng = cfg.instance_rng(i);
            let e = random_source_set(&spec, *fam, 0.03, &mut rng);
            assert!(e.count() > 0);
            for i in 0..spec.n_cells {
                if e.contains([i, 0]) {
                    let c = spec.cell_center([i, 0]);
                    assert!(c[0] * c[0] < 0.25);
                }
            }
        }
    }
}
