//! Synthetic datasets and point-cloud utilities.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// The toy distributions used throughout the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    /// N(0, 0.1) in one dimension.
    #[serde(rename = "gauss1d-1cluster")]
    Gauss1d1Cluster,
    /// Equal mixture of N(0, 0.1) and N(0.5, 0.1).
    #[serde(rename = "gauss1d-2cluster")]
    Gauss1d2Cluster,
    /// N(0, 0.1 I) in two dimensions.
    #[serde(rename = "gauss2d-1cluster")]
    Gauss2d1Cluster,
    /// Equal mixture of N((±0.5, ±0.5), 0.01 I).
    #[serde(rename = "gauss2d-4cluster")]
    Gauss2d4Cluster,
    /// Two interleaved half circles with Gaussian jitter.
    #[serde(rename = "two-moons")]
    TwoMoons,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Gauss1d1Cluster,
        DatasetKind::Gauss1d2Cluster,
        DatasetKind::Gauss2d1Cluster,
        DatasetKind::Gauss2d4Cluster,
        DatasetKind::TwoMoons,
    ];

    pub fn dim(self) -> usize {
        match self {
            DatasetKind::Gauss1d1Cluster | DatasetKind::Gauss1d2Cluster => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gauss1d1Cluster => "gauss1d-1cluster",
            DatasetKind::Gauss1d2Cluster => "gauss1d-2cluster",
            DatasetKind::Gauss2d1Cluster => "gauss2d-1cluster",
            DatasetKind::Gauss2d4Cluster => "gauss2d-4cluster",
            DatasetKind::TwoMoons => "two-moons",
        }
    }

    /// Mixture components as (mean, variance) for the Gaussian kinds.
    pub fn gaussian_components(self) -> Option<Vec<(Vec<f64>, f64)>> {
        match self {
            DatasetKind::Gauss1d1Cluster => Some(vec![(vec![0.0], 0.1)]),
            DatasetKind::Gauss1d2Cluster => Some(vec![(vec![0.0], 0.1), (vec![0.5], 0.1)]),
            DatasetKind::Gauss2d1Cluster => Some(vec![(vec![0.0, 0.0], 0.1)]),
            DatasetKind::Gauss2d4Cluster => Some(vec![
                (vec![0.5, 0.5], 0.01),
                (vec![0.5, -0.5], 0.01),
                (vec![-0.5, 0.5], 0.01),
                (vec![-0.5, -0.5], 0.01),
            ]),
            DatasetKind::TwoMoons => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset kind `{s}`")))
    }
}

pub const DEFAULT_MOONS_NOISE: f64 = 0.05;

fn default_noise() -> f64 {
    DEFAULT_MOONS_NOISE
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
    /// Jitter standard deviation for two moons; ignored by the Gaussian kinds.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n: usize, seed: u64) -> Self {
        DatasetSpec {
            kind,
            n,
            seed,
            noise: DEFAULT_MOONS_NOISE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("invalid jitter {}", self.noise)));
        }
        Ok(())
    }
}

/// A batch of points in R^d, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
    pub spec: Option<DatasetSpec>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::Empty("sample set"));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        Ok(SampleSet {
            dim,
            data,
            spec: None,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("sample set"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        SampleSet::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The first `n` points (or all of them if fewer).
    pub fn head(&self, n: usize) -> SampleSet {
        let n = n.clamp(1, self.len());
        SampleSet {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
            spec: self.spec.clone(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Result<SampleSet> {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.point(i));
        }
        SampleSet::new(self.dim, data)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Per-coordinate sample variance (denominator n - 1, or n for a single point).
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim];
        for p in self.points() {
            for ((a, x), mu) in v.iter_mut().zip(p).zip(&m) {
                *a += (x - mu) * (x - mu);
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        v.iter_mut().for_each(|a| *a /= denom);
        v
    }

    /// Per-coordinate (min, max).
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for p in self.points() {
            for ((lo, hi), &x) in b.iter_mut().zip(p) {
                *lo = lo.min(x);
                *hi = hi.max(x);
            }
        }
        b
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        wtr.write_record(&header)?;
        for p in self.points() {
            wtr.write_record(p.iter().map(|x| x.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<SampleSet> {
        let mut rdr = csv::Reader::from_reader(r);
        let dim = rdr.headers()?.len();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rec.len(),
                });
            }
            for field in rec.iter() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number `{field}`")))?;
                data.push(x);
            }
        }
        SampleSet::new(dim, data)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<SampleSet> {
        SampleSet::read_csv(std::fs::File::open(path)?)
    }
}

/// Draws `spec.n` points from the distribution named by `spec.kind`.
///
/// Component labels are drawn for every point before any coordinates, so the
/// stream layout is fixed by `n` alone.
pub fn generate(spec: &DatasetSpec) -> Result<SampleSet> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, &[rng::tag::DATA]);
    let dim = spec.kind.dim();
    let mut data = Vec::with_capacity(spec.n * dim);

    match spec.kind.gaussian_components() {
        Some(components) => {
            let k = components.len();
            let labels: Vec<usize> = (0..spec.n).map(|_| rng.random_range(0..k)).collect();
            for &c in &labels {
                let (mean, var) = &components[c];
                let sd = var.sqrt();
                for m in mean {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + sd * z);
                }
            }
        }
        None => {
            let labels: Vec<bool> = (0..spec.n).map(|_| rng.random_bool(0.5)).collect();
            for &inner in &labels {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (x, y) = if inner {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                } else {
                    (theta.cos(), theta.sin())
                };
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                data.push(x + spec.noise * zx);
                data.push(y + spec.noise * zy);
            }
        }
    }

    let mut set = SampleSet::new(dim, data)?;
    set.spec = Some(spec.clone());
    Ok(set)
}

/// Adds i.i.d. N(0, eps^2) noise to every coordinate.
pub fn perturb(s: &SampleSet, eps: f64, seed: u64) -> Result<SampleSet> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("perturbation scale {eps}")));
    }
    let mut out = s.clone();
    if eps == 0.0 {
        return Ok(out);
    }
    let mut rng = rng::stream(seed, &[rng::tag::PERTURB]);
    for x in out.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *x += eps * z;
    }
    Ok(out)
}

/// Draws `n` points of N(0, I) in `dim` dimensions.
pub fn standard_normal(dim: usize, n: usize, rng: &mut rng::Rng) -> Result<SampleSet> {
    let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    SampleSet::new(dim, data)
}
