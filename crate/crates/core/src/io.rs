//! Plain-text file formats: raster images, `key=value` parameter files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{RccError, Result};
use crate::model::{Configuration, LatticeShape, PairwiseFamily, ParameterField, Symbol};

/// Parse `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| RccError::Parse(format!("line {}: expected key=value", n + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn parse_list(value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| RccError::Parse(format!("bad number {v:?}: {e}"))))
        .collect()
}

pub fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

/// `RCCIMG q M N` header followed by `M` lines of `N` integers.
pub fn write_raster(config: &Configuration, q: usize) -> String {
    let shape = config.shape();
    let mut s = format!("RCCIMG {q} {} {}\n", shape.rows, shape.cols);
    for r in 0..shape.rows {
        let row: Vec<String> = config.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Returns the alphabet size from the header and the image.
pub fn read_raster(text: &str) -> Result<(usize, Configuration)> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("RCCIMG") {
        return Err(RccError::Parse("raster file must start with RCCIMG".into()));
    }
    let mut header = || -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| RccError::Parse("truncated raster header".into()))?
            .parse()
            .map_err(|e| RccError::Parse(format!("raster header: {e}")))
    };
    let (q, rows, cols) = (header()?, header()?, header()?);
    let shape = LatticeShape::new(rows, cols)?;
    let pixels: Vec<Symbol> = tokens
        .map(|t| t.parse::<Symbol>().map_err(|e| RccError::Parse(format!("pixel {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if pixels.len() != shape.sites() {
        return Err(RccError::Parse(format!("expected {} pixels, found {}", shape.sites(), pixels.len())));
    }
    let config = Configuration::new(shape, pixels)?;
    config.check_alphabet(q)?;
    Ok((q, config))
}

pub fn read_raster_file(path: &Path) -> Result<(usize, Configuration)> {
    read_raster(&std::fs::read_to_string(path)?)
}

pub fn write_raster_file(path: &Path, config: &Configuration, q: usize) -> Result<()> {
    Ok(std::fs::write(path, write_raster(config, q))?)
}

/// Family plus row-invariant parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub family: PairwiseFamily,
    pub field: ParameterField,
}

pub fn write_parameters(params: &ParameterSet) -> String {
    let f = &params.family;
    let mut s = String::new();
    writeln!(s, "q={}", f.q()).unwrap();
    writeln!(s, "node_stat={}", format_list(f.node_table())).unwrap();
    writeln!(s, "edge_stat_h={}", format_list(f.horiz_table())).unwrap();
    writeln!(s, "edge_stat_v={}", format_list(f.vert_table())).unwrap();
    writeln!(s, "theta_node={}", format_list(params.field.node())).unwrap();
    writeln!(s, "theta_h={}", format_list(params.field.horiz())).unwrap();
    writeln!(s, "theta_v={}", format_list(params.field.vert())).unwrap();
    s
}

pub fn parameters_from_map(map: &BTreeMap<String, String>) -> Result<ParameterSet> {
    let get = |k: &str| map.get(k).ok_or_else(|| RccError::Parse(format!("missing key {k}")));
    let q: usize = get("q")?.parse().map_err(|e| RccError::Parse(format!("q: {e}")))?;
    let family = PairwiseFamily::new(
        q,
        parse_list(get("node_stat")?)?,
        parse_list(get("edge_stat_h")?)?,
        parse_list(get("edge_stat_v")?)?,
    )?;
    let field = ParameterField::new(
        parse_list(get("theta_node")?)?,
        parse_list(get("theta_h")?)?,
        parse_list(get("theta_v")?)?,
    )?;
    Ok(ParameterSet { family, field })
}

pub fn read_parameters(text: &str) -> Result<ParameterSet> {
    parameters_from_map(&parse_key_values(text)?)
}
