//! Synthetic shifted domains, CSV ingestion and batching.
//!
//! Two-moons construction: moon 0 is the upper unit half-circle
//! `(cos t, sin t)` centred at the origin, moon 1 the lower unit
//! half-circle `(1 − cos t, 0.5 − sin t)` centred at `(1, 0.5)`, with
//! `t` evenly spaced over `[0, π]`. Noise is added before the domain's
//! affine map, which applies scale, then rotation about the origin, then
//! translation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::LabRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source = 0,
    Target = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    TwoMoons,
    GaussianBlobs,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::TwoMoons => "moons",
            Generator::GaussianBlobs => "blobs",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" | "two_moons" => Ok(Generator::TwoMoons),
            "blobs" | "gaussian_blobs" => Ok(Generator::GaussianBlobs),
            other => Err(Error::Config(format!("unknown generator `{other}` (moons | blobs)"))),
        }
    }
}

/// One synthetic domain: base generator plus an affine shift.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub generator: Generator,
    pub n_samples: usize,
    pub noise_sd: f64,
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub scale: f64,
    pub seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            generator: Generator::TwoMoons,
            n_samples: 400,
            noise_sd: 0.15,
            rotation_deg: 0.0,
            translation: [0.0, 0.0],
            scale: 1.0,
            seed: 0,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd {} must be >= 0", self.noise_sd)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        if !self.rotation_deg.is_finite() || !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::Config("rotation and translation must be finite".into()));
        }
        Ok(())
    }

    /// Scale, rotate, translate.
    pub fn transform(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (x, y) = (p[0] * self.scale, p[1] * self.scale);
        [
            c * x - s * y + self.translation[0],
            s * x + c * y + self.translation[1],
        ]
    }
}

/// Feature rows with optional labels and per-row domain tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub domain_tags: Vec<Domain>,
}

impl Batch {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, domain: Domain) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
        }
        let domain_tags = vec![domain; features.rows()];
        Ok(Self {
            features,
            labels,
            domain_tags,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            domain_tags: indices.iter().map(|&i| self.domain_tags[i]).collect(),
        }
    }

    /// Same rows with labels removed; what a training path sees of a target domain.
    pub fn without_labels(&self) -> Batch {
        Batch {
            labels: None,
            ..self.clone()
        }
    }

    pub fn labels_or_err(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data(format!("{what} requires labels")))
    }
}

fn class_counts(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

fn linspace_pi(count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(move |i| {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    })
}

pub fn gen_two_moons(spec: &DomainSpec) -> Result<Batch> {
    spec.validate()?;
    let mut rng = LabRng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let counts = class_counts(spec.n_samples, 2);
    let mut rows = Vec::with_capacity(spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for (class, &count) in counts.iter().enumerate() {
        for t in linspace_pi(count) {
            let base = if class == 0 {
                [t.cos(), t.sin()]
            } else {
                [1.0 - t.cos(), 0.5 - t.sin()]
            };
            let noisy = [base[0] + noise.sample(&mut rng), base[1] + noise.sample(&mut rng)];
            rows.push(spec.transform(noisy));
            labels.push(class);
        }
    }
    Batch::new(Tensor::from_rows(&rows)?, Some(labels), Domain::Source)
}

pub fn gen_gaussian_blobs(spec: &DomainSpec, centers: &[[f64; 2]]) -> Result<Batch> {
    spec.validate()?;
    if centers.len() < 2 {
        return Err(Error::Config("gaussian blobs need at least 2 centers".into()));
    }
    for (i, a) in centers.iter().enumerate() {
        if centers[i + 1..].contains(a) {
            return Err(Error::Config(format!("duplicate blob center {a:?}")));
        }
    }
    let mut rng = LabRng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let counts = class_counts(spec.n_samples, centers.len());
    let mut rows = Vec::with_capacity(spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for (class, (&count, center)) in counts.iter().zip(centers).enumerate() {
        let c = spec.transform(*center);
        for _ in 0..count {
            rows.push([c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            labels.push(class);
        }
    }
    Batch::new(Tensor::from_rows(&rows)?, Some(labels), Domain::Source)
}

/// Default blob centres: three classes on a triangle.
pub const DEFAULT_BLOB_CENTERS: [[f64; 2]; 3] = [[0.0, 0.0], [2.0, 0.0], [1.0, 1.7]];

/// Generates a domain with the given generator and tags its rows.
pub fn generate(spec: &DomainSpec, domain: Domain) -> Result<Batch> {
    let mut batch = match spec.generator {
        Generator::TwoMoons => gen_two_moons(spec)?,
        Generator::GaussianBlobs => gen_gaussian_blobs(spec, &DEFAULT_BLOB_CENTERS)?,
    };
    batch.domain_tags = vec![domain; batch.len()];
    Ok(batch)
}

pub fn render_csv(batch: &Batch) -> String {
    let mut out = (0..batch.width())
        .map(|j| format!("f{j}"))
        .collect::<Vec<_>>()
        .join(",");
    if batch.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for r in 0..batch.len() {
        let mut cells: Vec<String> = batch.features.row(r).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &batch.labels {
            cells.push(l[r].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn save_csv(batch: &Batch, path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(batch)).map_err(|e| Error::io(path, e))
}

/// Parses CSV text with a header row. With `has_labels`, the last column
/// holds integer labels; otherwise every column is a feature.
pub fn parse_csv(text: &str, has_labels: bool, domain: Domain) -> Result<Batch> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header_width = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .len();
    let width = if has_labels {
        header_width.checked_sub(1).filter(|w| *w > 0).ok_or(Error::Parse {
            row: 0,
            msg: "a labelled file needs at least one feature column".into(),
        })?
    } else {
        header_width
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != header_width {
            return Err(Error::Parse {
                row,
                msg: format!("expected {header_width} cells, found {}", record.len()),
            });
        }
        for cell in record.iter().take(width) {
            data.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                row,
                msg: format!("`{cell}` is not a number"),
            })?);
        }
        if has_labels {
            let cell = &record[width];
            labels.push(cell.parse::<usize>().map_err(|_| Error::Parse {
                row,
                msg: format!("label `{cell}` is not a non-negative integer"),
            })?);
        }
    }
    let rows = data.len() / width.max(1);
    Batch::new(
        Tensor::new(rows, width, data)?,
        has_labels.then_some(labels),
        domain,
    )
}

pub fn load_csv(path: &Path, has_labels: bool, domain: Domain) -> Result<Batch> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, has_labels, domain)
}

/// Checks that every label lies in `[0, classes)`.
pub fn check_label_range(batch: &Batch, classes: usize) -> Result<()> {
    if let Some(labels) = &batch.labels {
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Parse {
                row: i + 1,
                msg: format!("label {y} outside [0, {classes})"),
            });
        }
    }
    Ok(())
}

/// One epoch of batches; the final batch may be short.
pub fn batch_iterator<R: Rng + ?Sized>(
    data: &Batch,
    batch_size: usize,
    shuffle: bool,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(|idx| data.select(idx)).collect())
}

/// Endless batch stream that reshuffles at every epoch boundary.
#[derive(Debug)]
pub struct CyclingSampler {
    data: Batch,
    batch_size: usize,
    rng: LabRng,
    queue: std::vec::IntoIter<Batch>,
}

impl CyclingSampler {
    pub fn new(data: Batch, batch_size: usize, rng: LabRng) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("cannot sample from an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(Self {
            data,
            batch_size,
            rng,
            queue: Vec::new().into_iter(),
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        loop {
            if let Some(b) = self.queue.next() {
                return b;
            }
            self.queue = batch_iterator(&self.data, self.batch_size, true, &mut self.rng)
                .expect("validated batch size")
                .into_iter();
        }
    }
}
