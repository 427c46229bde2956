//! CSV serialization for grid data, run manifests, and checksums.
//!
//! Every CSV starts with one comment line carrying the manifest checksum and
//! the grid parameters, then a header row. Numeric cells use the shortest
//! round-trip decimal form, which is deterministic, so identical runs emit
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cz::CzResult;
use crate::error::{Error, Result};
use crate::grid::{ExteriorRule, GridFunction, GridSpec, SetIndicator};

pub fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn spec_attrs(spec: &GridSpec) -> String {
    format!(
        "dim={} n_cells={} half_width={} exterior_radius={}",
        spec.dim, spec.n_cells, spec.half_width, spec.exterior_radius
    )
}

fn exterior_attr(rule: &ExteriorRule) -> String {
    match rule {
        ExteriorRule::Zero => "zero".to_string(),
        ExteriorRule::Constant(c) => format!("constant:{c}"),
    }
}

pub fn write_grid_function_csv(
    path: &Path,
    g: &GridFunction,
    manifest_checksum: &str,
) -> Result<()> {
    let spec = &g.spec;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# manifest_checksum={manifest_checksum} kind=grid_function {} exterior_rule={}",
        spec_attrs(spec),
        exterior_attr(&g.exterior)
    );
    if spec.dim == 1 {
        out.push_str("x,value\n");
        for s in spec.extended_nodes() {
            let _ = writeln!(out, "{},{}", spec.position(s)[0], g.at(s));
        }
    } else {
        out.push_str("x,y,value\n");
        for s in spec.extended_nodes() {
            let p = spec.position(s);
            let _ = writeln!(out, "{},{},{}", p[0], p[1], g.at(s));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_attrs(line: &str) -> std::collections::HashMap<String, String> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn spec_from_attrs(attrs: &std::collections::HashMap<String, String>) -> Result<GridSpec> {
    let get = |k: &str| -> Result<&String> {
        attrs
            .get(k)
            .ok_or_else(|| Error::Config(format!("csv header missing {k}")))
    };
    let dim: usize = get("dim")?.parse().map_err(|_| Error::Config("bad dim".into()))?;
    let n_cells: usize = get("n_cells")?
        .parse()
        .map_err(|_| Error::Config("bad n_cells".into()))?;
    let hw: f64 = get("half_width")?
        .parse()
        .map_err(|_| Error::Config("bad half_width".into()))?;
    let er: f64 = get("exterior_radius")?
        .parse()
        .map_err(|_| Error::Config("bad exterior_radius".into()))?;
    GridSpec::new(dim, n_cells, hw, er)
}

pub fn read_grid_function_csv(path: &Path) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Config("empty csv".into()))?;
    if !head.starts_with('#') {
        return Err(Error::Config("csv missing comment header".into()));
    }
    let attrs = parse_attrs(head);
    let spec = spec_from_attrs(&attrs)?;
    let exterior = match attrs.get("exterior_rule").map(|s| s.as_str()) {
        Some("zero") | None => ExteriorRule::Zero,
        Some(s) => {
            let c = s
                .strip_prefix("constant:")
                .ok_or_else(|| Error::Config(format!("bad exterior_rule {s}")))?
                .parse()
                .map_err(|_| Error::Config("bad exterior constant".into()))?;
            ExteriorRule::Constant(c)
        }
    };
    let _header = lines.next();
    let mut g = GridFunction::zeros(&spec);
    g.exterior = exterior;
    let mut count = 0usize;
    for (s, line) in spec.extended_nodes().into_iter().zip(lines) {
        let val = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::Config(format!("malformed csv row: {line}")))?;
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad value in csv row: {line}")))?;
        g.set(s, v);
        count += 1;
    }
    if count != spec.value_count() {
        return Err(Error::Config(format!(
            "csv has {count} data rows, grid stores {}",
            spec.value_count()
        )));
    }
    Ok(g)
}

pub fn write_set_indicator_csv(
    path: &Path,
    e: &SetIndicator,
    manifest_checksum: &str,
) -> Result<()> {
    let spec = &e.spec;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# manifest_checksum={manifest_checksum} kind=set_indicator {}",
        spec_attrs(spec)
    );
    if spec.dim == 1 {
        out.push_str("x,value\n");
        for i in 0..spec.n_cells {
            let c = spec.cell_center([i, 0]);
            let _ = writeln!(out, "{},{}", c[0], u8::from(e.contains([i, 0])));
        }
    } else {
        out.push_str("x,y,value\n");
        for i in 0..spec.n_cells {
            for j in 0..spec.n_cells {
                let c = spec.cell_center([i, j]);
                let _ = writeln!(out, "{},{},{}", c[0], c[1], u8::from(e.contains([i, j])));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_set_indicator_csv(path: &Path) -> Result<SetIndicator> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Config("empty csv".into()))?;
    if !head.starts_with('#') {
        return Err(Error::Config("csv missing comment header".into()));
    }
    let attrs = parse_attrs(head);
    let spec = spec_from_attrs(&attrs)?;
    let _header = lines.next();
    let mut e = SetIndicator::empty(&spec);
    let n = spec.n_cells;
    let mut cells: Vec<[usize; 2]> = Vec::new();
    if spec.dim == 1 {
        for i in 0..n {
            cells.push([i, 0]);
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                cells.push([i, j]);
            }
        }
    }
    let mut count = 0usize;
    for (c, line) in cells.iter().zip(lines) {
        let val = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::Config(format!("malformed csv row: {line}")))?
            .trim();
        match val {
            "0" => {}
            "1" => e.insert(*c),
            other => {
                return Err(Error::Config(format!(
                    "set indicator cells must be 0 or 1, got {other}"
                )))
            }
        }
        count += 1;
    }
    if count != cells.len() {
        return Err(Error::Config(format!(
            "csv has {count} cells, grid has {}",
            cells.len()
        )));
    }
    Ok(e)
}

pub fn write_cz_csv(
    path: &Path,
    result: &CzResult,
    spec: &GridSpec,
    manifest_checksum: &str,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# manifest_checksum={manifest_checksum} kind=cz_result {} alpha={}",
        spec_attrs(spec),
        result.alpha
    );
    out.push_str("role,center_x,center_y,half_side,level,density\n");
    for (cube, density) in result.kept.iter().zip(&result.stats.kept_densities) {
        let c = cube.center(spec);
        let _ = writeln!(
            out,
            "kept,{},{},{},{},{}",
            c[0],
            c[1],
            cube.half_side(spec),
            cube.level,
            density
        );
    }
    for cube in &result.predecessors {
        let c = cube.center(spec);
        let _ = writeln!(
            out,
            "predecessor,{},{},{},{},",
            c[0],
            c[1],
            cube.half_side(spec),
            cube.level
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A run manifest: re-runnable `key = value` configuration lines followed by
/// commented result lines. Parsing the file as a config reproduces the run.
pub struct Manifest {
    pub config: Vec<(String, String)>,
    pub results: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            config: vec![("command".to_string(), command.to_string())],
            results: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.results.push((key.to_string(), value.to_string()));
    }

    /// Digest of the configuration lines; embedded in every CSV this run
    /// writes.
    pub fn checksum(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(text, "{k} = {v}");
        }
        sha256_hex(text.as_bytes())
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# nonlocal run manifest\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "# config_checksum = {}", self.checksum());
        for (k, v) in &self.results {
            let _ = writeln!(out, "# result.{k} = {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Descriptor};

    #[test]
    fn grid_function_roundtrips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let spec = make_grid(1, 32, 1.0, 2.0).unwrap();
        let g = crate::grid::sample_function(&spec, &Descriptor::Gaussian { decay: 2.0 }).unwrap();
        let path = dir.path().join("u.csv");
        write_grid_function_csv(&path, &g, "deadbeef").unwrap();
        let back = read_grid_function_csv(&path).unwrap();
        assert_eq!(back.spec, g.spec);
        assert_eq!(back.values, g.values);
        assert_eq!(back.exterior, g.exterior);
    }

    #[test]
    fn set_indicator_roundtrips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let spec = make_grid(2, 16, 1.0, 2.0).unwrap();
        let mut e = SetIndicator::empty(&spec);
        e.fill_where(|p| p[0] > 0.2 && p[1] < -0.1);
        let path = dir.path().join("e.csv");
        write_set_indicator_csv(&path, &e, "deadbeef").unwrap();
        let back = read_set_indicator_csv(&path).unwrap();
        assert_eq!(back.cells, e.cells);
    }

    #[test]
    fn manifest_checksum_tracks_config_only() {
        let mut m1 = Manifest::new("solve");
        m1.set("sigma", 1.5);
        let mut m2 = Manifest::new("solve");
        m2.set("sigma", 1.5);
        m2.note("wall_seconds", 99);
        assert_eq!(m1.checksum(), m2.checksum());
        let mut m3 = Manifest::new("solve");
        m3.set("sigma", 1.0);
        assert_ne!(m1.checksum(), m3.checksum());
    }
}
