//! Multi-seed run manifest.
//!
//! ```text
//! # saf-lab run manifest v1
//! config = config.cfg
//! source_sha256 = <hex>
//! target_sha256 = <hex>
//! seed.0 = seed-0 0.8675
//! ...
//! mean_tgt_acc = 0.86
//! sd_tgt_acc = 0.01
//! ```
//!
//! Each `seed.<s>` line holds the run directory (relative to the manifest)
//! and that run's final target accuracy. The standard deviation is the
//! sample one (`n − 1`), zero for a single seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{render_csv, Batch};
use crate::error::{Error, Result};
use crate::train::{parse_metrics_csv, METRICS_FILE};

pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER: &str = "# saf-lab run manifest v1";

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub tgt_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub config: PathBuf,
    pub source_sha256: String,
    pub target_sha256: String,
    pub runs: Vec<SeedResult>,
    pub mean_tgt_acc: f64,
    pub sd_tgt_acc: f64,
}

/// Hex SHA-256 of a domain's canonical CSV rendering.
pub fn data_hash(batch: &Batch) -> String {
    Sha256::digest(render_csv(batch).as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Sample mean and standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl RunManifest {
    pub fn new(config: PathBuf, source: &Batch, target: &Batch, runs: Vec<SeedResult>) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.tgt_acc).collect();
        let (mean_tgt_acc, sd_tgt_acc) = mean_sd(&accs);
        Self {
            config,
            source_sha256: data_hash(source),
            target_sha256: data_hash(target),
            runs,
            mean_tgt_acc,
            sd_tgt_acc,
        }
    }

    pub fn render(&self) -> String {
        let mut o = String::from(HEADER);
        o.push('\n');
        let _ = writeln!(o, "config = {}", self.config.display());
        let _ = writeln!(o, "source_sha256 = {}", self.source_sha256);
        let _ = writeln!(o, "target_sha256 = {}", self.target_sha256);
        for r in &self.runs {
            let _ = writeln!(o, "seed.{} = {} {:?}", r.seed, r.dir.display(), r.tgt_acc);
        }
        let _ = writeln!(o, "mean_tgt_acc = {:?}", self.mean_tgt_acc);
        let _ = writeln!(o, "sd_tgt_acc = {:?}", self.sd_tgt_acc);
        o
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest {
            config: PathBuf::new(),
            source_sha256: String::new(),
            target_sha256: String::new(),
            runs: Vec::new(),
            mean_tgt_acc: f64::NAN,
            sd_tgt_acc: f64::NAN,
        };
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
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let float = |v: &str| v.parse::<f64>().map_err(|_| bad("bad number"));
            match key {
                "config" => m.config = PathBuf::from(value),
                "source_sha256" => m.source_sha256 = value.to_string(),
                "target_sha256" => m.target_sha256 = value.to_string(),
                "mean_tgt_acc" => m.mean_tgt_acc = float(value)?,
                "sd_tgt_acc" => m.sd_tgt_acc = float(value)?,
                k => {
                    let seed = k
                        .strip_prefix("seed.")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(&format!("unknown key `{k}`")))?;
                    let (dir, acc) = value.rsplit_once(' ').ok_or_else(|| bad("expected `<dir> <acc>`"))?;
                    m.runs.push(SeedResult {
                        seed,
                        dir: PathBuf::from(dir.trim()),
                        tgt_acc: float(acc)?,
                    });
                }
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// Re-reads every run's metrics CSV under `root` and rebuilds the
    /// per-seed accuracies and aggregates from their final rows.
    pub fn recompute(&self, root: &Path) -> Result<RunManifest> {
        let mut runs = Vec::with_capacity(self.runs.len());
        for r in &self.runs {
            let path = root.join(&r.dir).join(METRICS_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let last = parse_metrics_csv(&text)?
                .pop()
                .ok_or_else(|| Error::Data(format!("{} has no rows", path.display())))?;
            runs.push(SeedResult {
                tgt_acc: last.tgt_acc,
                ..r.clone()
            });
        }
        let accs: Vec<f64> = runs.iter().map(|r| r.tgt_acc).collect();
        let (mean_tgt_acc, sd_tgt_acc) = mean_sd(&accs);
        Ok(RunManifest {
            runs,
            mean_tgt_acc,
            sd_tgt_acc,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_small_cases() {
        assert_eq!(mean_sd(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_sd(&[]).0.is_nan());
    }

    #[test]
    fn text_round_trip() {
        let m = RunManifest {
            config: "config.cfg".into(),
            source_sha256: "ab".into(),
            target_sha256: "cd".into(),
            runs: vec![
                SeedResult { seed: 0, dir: "seed-0".into(), tgt_acc: 0.1 + 0.2 },
                SeedResult { seed: 3, dir: "seed-3".into(), tgt_acc: 0.875 },
            ],
            mean_tgt_acc: 0.5875,
            sd_tgt_acc: 0.4,
        };
        assert_eq!(RunManifest::parse(&m.render()).unwrap(), m);
    }
}
