//! Dataset generation, normalization and file formats.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Polynomial;
use crate::error::{arg_err, Error, Result};
use crate::fitting::{evaluate, fit_direct, FitReport, SeparationInstance, EVAL_TOL};
use crate::moments::Dataset;
use crate::solver::Settings;

/// Points generated (or sampled) per RNG stream. Streams are derived from the
/// seed and the chunk index, so output does not depend on the thread count.
const CHUNK: usize = 4096;

/// One Gaussian component of a [`ClusterSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub mean: Vec<f64>,
    /// Row-major `n × n` covariance.
    pub covariance: Vec<Vec<f64>>,
    pub count: usize,
}

/// Mixture of Gaussian clusters, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub n: usize,
    pub clusters: Vec<Cluster>,
    #[serde(default)]
    pub seed: u64,
}

impl ClusterSpec {
    /// Two isotropic clusters with σ = 0.15 centred at ±(0.4, 0.4).
    pub fn two_clusters(count_each: usize, seed: u64) -> Self {
        let cov = vec![vec![0.0225, 0.0], vec![0.0, 0.0225]];
        let cluster = |m: f64| Cluster {
            mean: vec![m, m],
            covariance: cov.clone(),
            count: count_each,
        };
        Self {
            n: 2,
            clusters: vec![cluster(0.4), cluster(-0.4)],
            seed,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return arg_err("cluster dimension must be positive");
        }
        if self.clusters.is_empty() {
            return arg_err("cluster spec lists no clusters");
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.count == 0 {
                return arg_err(format!("cluster {i} has count 0"));
            }
            if c.mean.len() != self.n {
                return arg_err(format!(
                    "cluster {i} mean has length {}, expected {}",
                    c.mean.len(),
                    self.n
                ));
            }
            if c.covariance.len() != self.n || c.covariance.iter().any(|r| r.len() != self.n) {
                return arg_err(format!("cluster {i} covariance is not {0}×{0}", self.n));
            }
            if c.mean
                .iter()
                .chain(c.covariance.iter().flatten())
                .any(|v| !v.is_finite())
            {
                return arg_err(format!("cluster {i} has non-finite entries"));
            }
            covariance_factor(&c.covariance).map_err(|e| match e {
                Error::Argument(m) => Error::Argument(format!("cluster {i}: {m}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.count).sum()
    }
}

/// Symmetric square root `L` with `L·L' = Σ`. Works for singular Σ, where a
/// Cholesky factor does not exist.
fn covariance_factor(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = cov.len();
    let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return arg_err("covariance is not symmetric");
    }
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 * scale {
        return arg_err(format!(
            "covariance is not positive semidefinite (eigenvalue {:.3e})",
            eig.eigenvalues.min()
        ));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples every cluster of `spec`, in order. Deterministic given the seed.
pub fn generate_clusters(spec: &ClusterSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n;
    let mut coords = Vec::with_capacity(spec.total() * n);
    let mut stream = 0u64;
    for c in &spec.clusters {
        let factor = covariance_factor(&c.covariance)?;
        let mean = DVector::from_column_slice(&c.mean);
        let chunks = c.count.div_ceil(CHUNK);
        let first = stream;
        stream += chunks as u64;
        let parts: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream_rng(spec.seed, first + k as u64);
                let len = CHUNK.min(c.count - k * CHUNK);
                let mut out = Vec::with_capacity(len * n);
                let mut z = DVector::zeros(n);
                for _ in 0..len {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    out.extend((&mean + &factor * &z).iter());
                }
                out
            })
            .collect();
        for p in parts {
            coords.extend(p);
        }
    }
    Dataset::new(n, coords)
}

/// `x ↦ (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub shift: Vec<f64>,
    pub scale: f64,
}

impl AffineMap {
    pub fn new(shift: Vec<f64>, scale: f64) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return arg_err(format!("affine scale must be positive, got {scale}"));
        }
        Ok(Self { shift, scale })
    }

    fn check(&self, s: &Dataset) -> Result<()> {
        if s.dim() != self.shift.len() {
            return arg_err(format!(
                "map has dimension {}, dataset has {}",
                self.shift.len(),
                s.dim()
            ));
        }
        Ok(())
    }

    pub fn apply(&self, s: &Dataset) -> Result<Dataset> {
        self.check(s)?;
        let n = s.dim();
        let coords = s
            .coords()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.shift[i % n]) / self.scale)
            .collect();
        Dataset::new(n, coords)
    }

    pub fn invert(&self, s: &Dataset) -> Result<Dataset> {
        self.check(s)?;
        let n = s.dim();
        let coords = s
            .coords()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.scale + self.shift[i % n])
            .collect();
        Dataset::new(n, coords)
    }
}

/// Centres `s` at its coordinate mean and scales it so the farthest point has
/// norm 1. A single repeated point keeps scale 1.
pub fn normalize_to_unit_ball(s: &Dataset) -> Result<(Dataset, AffineMap)> {
    if s.is_empty() {
        return arg_err("cannot normalize an empty dataset");
    }
    let shift = s.mean();
    let radius = s
        .iter()
        .map(|x| {
            x.iter()
                .zip(&shift)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let map = AffineMap::new(shift, if radius > 0.0 { radius } else { 1.0 })?;
    Ok((map.apply(s)?, map))
}

/// Points of `s2` strictly outside the minimum-volume degree-`d` set covering
/// `s1`, together with that covering polynomial, which separates the pair.
pub fn make_separable_with_witness(
    s1: &Dataset,
    s2: &Dataset,
    d: usize,
) -> Result<(Dataset, Polynomial)> {
    if s1.dim() != s2.dim() {
        return arg_err("datasets have different dimensions");
    }
    if s1.affine_rank() < s1.dim() {
        return Err(Error::DegenerateData(
            "first class does not span its ambient space affinely".into(),
        ));
    }
    let inst = SeparationInstance::covering(s1.clone(), d, d)?;
    let fit = fit_direct(&inst, &Settings::default())?;
    let values = evaluate(&fit.theta, s2)?;
    // strict: points within evaluation tolerance of the boundary are dropped
    let keep: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] < -EVAL_TOL)
        .collect();
    Ok((s2.subset(&keep), fit.theta))
}

/// [`make_separable_with_witness`] without the witness.
pub fn make_separable(s1: &Dataset, s2: &Dataset, d: usize) -> Result<Dataset> {
    Ok(make_separable_with_witness(s1, s2, d)?.0)
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return arg_err("box corners must have the same positive dimension");
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| a >= b || !a.is_finite() || !b.is_finite())
        {
            return arg_err("box must satisfy lo < hi in every coordinate");
        }
        Ok(Self { lo, hi })
    }

    /// Bounding box of `s` grown by `pad` times its extent on every side.
    /// Flat extents get a unit width.
    pub fn around(s: &Dataset, pad: f64) -> Result<Self> {
        if s.is_empty() {
            return arg_err("cannot bound an empty dataset");
        }
        let n = s.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for x in s.iter() {
            for k in 0..n {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        for k in 0..n {
            let w = if hi[k] > lo[k] { hi[k] - lo[k] } else { 1.0 };
            lo[k] -= pad * w;
            hi[k] += pad * w;
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

/// Monte-Carlo estimate of the volume of `{x ∈ box : θ(x) ≥ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub volume: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

pub fn monte_carlo_volume(
    theta: &Polynomial,
    bbox: &BoundingBox,
    samples: usize,
    seed: u64,
) -> Result<VolumeReport> {
    if theta.nvars() != bbox.dim() {
        return arg_err(format!(
            "polynomial has {} variables, box has dimension {}",
            theta.nvars(),
            bbox.dim()
        ));
    }
    if samples == 0 {
        return arg_err("need at least one sample");
    }
    let n = bbox.dim();
    let sides: Vec<Uniform<f64>> = bbox
        .lo
        .iter()
        .zip(&bbox.hi)
        .map(|(a, b)| Uniform::new(*a, *b).map_err(|e| Error::Argument(e.to_string())))
        .collect::<Result<_>>()?;
    let hits: usize = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut x = vec![0.0; n];
            let mut hits = 0;
            for _ in 0..CHUNK.min(samples - k * CHUNK) {
                for (v, u) in x.iter_mut().zip(&sides) {
                    *v = u.sample(&mut rng);
                }
                if theta.eval(&x).is_ok_and(|v| v >= 0.0) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    let vol = bbox.volume();
    Ok(VolumeReport {
        volume: p * vol,
        stderr: (p * (1.0 - p) / samples as f64).sqrt() * vol,
        samples,
        seed,
    })
}

/// Points read from CSV, with their class labels when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub points: Dataset,
    pub labels: Option<Vec<u8>>,
}

impl CsvData {
    /// `(S1, S2)` by label; unlabeled data is all class 1.
    pub fn split(&self) -> (Dataset, Dataset) {
        match &self.labels {
            None => (self.points.clone(), Dataset::empty(self.points.dim())),
            Some(l) => {
                let pick = |c: u8| -> Vec<usize> { (0..l.len()).filter(|&i| l[i] == c).collect() };
                (self.points.subset(&pick(1)), self.points.subset(&pick(2)))
            }
        }
    }
}

fn parse_err(path: &Path, line: u64, column: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Reads one point per row. With `labeled`, the last column is the class
/// (1 or 2). A first row that does not parse as numbers is a header.
pub fn load_csv(path: &Path, labeled: bool) -> Result<CsvData> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, labeled, path)
}

/// [`load_csv`] on in-memory text; `path` only labels errors.
pub fn parse_csv(text: &str, labeled: bool, path: &Path) -> Result<CsvData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, None, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let is_header = first && rec.iter().any(|f| f.parse::<f64>().is_err());
        first = false;
        if is_header {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(parse_err(
                    path,
                    line,
                    None,
                    format!("expected {w} columns, found {}", rec.len()),
                ))
            }
            Some(_) => {}
        }
        let ncoord = if labeled {
            rec.len().saturating_sub(1)
        } else {
            rec.len()
        };
        if ncoord == 0 {
            return Err(parse_err(path, line, None, "row has no coordinate columns"));
        }
        for (j, f) in rec.iter().enumerate().take(ncoord) {
            let v: f64 = f.parse().map_err(|_| {
                parse_err(path, line, Some(j + 1), format!("'{f}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line,
                    Some(j + 1),
                    "coordinate is not finite",
                ));
            }
            coords.push(v);
        }
        if labeled {
            let f = &rec[ncoord];
            match f.parse::<u8>() {
                Ok(c @ (1 | 2)) => labels.push(c),
                _ => {
                    return Err(parse_err(
                        path,
                        line,
                        Some(ncoord + 1),
                        format!("label '{f}' is not 1 or 2"),
                    ))
                }
            }
        }
    }
    let Some(w) = width else {
        return Err(parse_err(path, 0, None, "no data rows"));
    };
    let n = if labeled { w - 1 } else { w };
    Ok(CsvData {
        points: Dataset::new(n, coords)?,
        labels: labeled.then_some(labels),
    })
}

/// Writes one point per row with shortest round-trip float formatting, and a
/// trailing label column when `labels` is given.
pub fn write_csv(w: &mut impl Write, s: &Dataset, labels: Option<&[u8]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != s.len() {
            return arg_err("label count differs from point count");
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut row: Vec<String> = Vec::with_capacity(s.dim() + 1);
    for (i, x) in s.iter().enumerate() {
        row.clear();
        row.extend(x.iter().map(|v| format!("{v:?}")));
        if let Some(l) = labels {
            row.push(l[i].to_string());
        }
        out.write_record(&row).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn save_csv(path: &Path, s: &Dataset, labels: Option<&[u8]>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(&mut f, s, labels)?;
    f.flush()?;
    Ok(())
}

pub fn save_model_json(report: &FitReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()? + "\n")?;
    Ok(())
}

pub fn load_model_json(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path)?;
    FitReport::from_json(&text).map_err(|e| match e {
        Error::Json(j) => parse_err(path, j.line() as u64, Some(j.column()), j.to_string()),
        other => other,
    })
}
