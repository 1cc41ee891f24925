//! Flat parameter file: one record per line,
//!
//! ```text
//! <name> <rows>x<cols> = <v0> <v1> ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, which never
//! needs more than 17 significant digits and parses back bit-exactly.
//! Batch-norm running statistics are stored as `<layer>.bn.running_mean`
//! and `<layer>.bn.running_var` records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::bundle::ModelBundle;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const PARAM_FILE_HEADER: &str = "# saf-lab parameters v1";

fn render_record(out: &mut String, name: &str, t: &Tensor) {
    let _ = write!(out, "{name} {}x{} =", t.rows(), t.cols());
    for v in t.data() {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

/// Renders every parameter and running statistic of `bundle`.
pub fn render_params(bundle: &ModelBundle) -> String {
    let mut out = String::from(PARAM_FILE_HEADER);
    out.push('\n');
    for p in bundle.params() {
        render_record(&mut out, p.name(), p.value());
    }
    for (_, mlp) in bundle.stat_blocks() {
        for layer in mlp.layers() {
            if let Some(bn) = &layer.batch_norm {
                let base = bn.gamma.name().trim_end_matches(".gamma");
                let n = bn.stats.mean.len();
                let mean = Tensor::new(1, n, bn.stats.mean.clone()).expect("row");
                let var = Tensor::new(1, n, bn.stats.var.clone()).expect("row");
                render_record(&mut out, &format!("{base}.running_mean"), &mean);
                render_record(&mut out, &format!("{base}.running_var"), &var);
            }
        }
    }
    out
}

/// Parses records into a name → tensor map.
pub fn parse_params(text: &str) -> Result<BTreeMap<String, Tensor>> {
    let mut records = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            row,
            msg: msg.to_string(),
        };
        let (head, values) = line.split_once('=').ok_or_else(|| bad("missing `=`"))?;
        let mut head = head.split_whitespace();
        let name = head.next().ok_or_else(|| bad("missing name"))?;
        let shape = head.next().ok_or_else(|| bad("missing shape"))?;
        let (r, c) = shape.split_once('x').ok_or_else(|| bad("shape must be <rows>x<cols>"))?;
        let rows: usize = r.parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = c.parse().map_err(|_| bad("bad column count"))?;
        let data = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(&format!("bad value: {e}")))?;
        let t = Tensor::new(rows, cols, data).map_err(|e| bad(&e.to_string()))?;
        if records.insert(name.to_string(), t).is_some() {
            return Err(bad(&format!("duplicate record `{name}`")));
        }
    }
    Ok(records)
}

/// Overwrites `bundle`'s parameters and running statistics from parsed
/// records. Every record the bundle expects must be present with its shape.
pub fn apply_params(bundle: &mut ModelBundle, records: &BTreeMap<String, Tensor>) -> Result<()> {
    let fetch = |name: &str, shape: (usize, usize)| -> Result<&Tensor> {
        let t = records
            .get(name)
            .ok_or_else(|| Error::Data(format!("parameter file lacks `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Dimension {
                op: "load_params",
                lhs: shape,
                rhs: t.shape(),
            });
        }
        Ok(t)
    };
    for p in bundle.params_mut() {
        let t = fetch(p.name(), p.value().shape())?.clone();
        *p.value_mut() = t;
    }
    for (_, mlp) in bundle.stat_blocks_mut() {
        for layer in mlp.layers_mut() {
            if let Some(bn) = &mut layer.batch_norm {
                let base = bn.gamma.name().trim_end_matches(".gamma").to_string();
                let n = bn.stats.mean.len();
                bn.stats.mean = fetch(&format!("{base}.running_mean"), (1, n))?.data().to_vec();
                bn.stats.var = fetch(&format!("{base}.running_var"), (1, n))?.data().to_vec();
            }
        }
    }
    Ok(())
}

pub fn save_params(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, render_params(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_params(bundle: &mut ModelBundle, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    apply_params(bundle, &parse_params(&text)?)
}
