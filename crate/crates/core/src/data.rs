//! Synthetic datasets, task splitting and the CLDS binary dataset format.
//!
//! CLDS layout (all little-endian):
//!
//! ```text
//! magic        4 bytes  "CLDS"
//! version      u32      = 1
//! flags        u32      bit 0: domain ids present
//! num_samples  u64
//! num_classes  u32
//! input_dim    u32
//! inputs       f32 x num_samples x input_dim   (row-major)
//! class ids    u32 x num_samples
//! task ids     u32 x num_samples
//! sample ids   u64 x num_samples
//! domain ids   u32 x num_samples               (only if flag bit 0)
//! ```
//!
//! Inputs are stored as f32; generated datasets are rounded to f32 at creation
//! so that save/load round-trips bit-exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::{Protocol, Task, TaskStream};

pub const CLDS_MAGIC: &[u8; 4] = b"CLDS";
pub const CLDS_VERSION: u32 = 1;
const FLAG_DOMAINS: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 + 4;

/// Attempts per class mean before the minimum-distance requirement is relaxed.
const REJECTION_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x: Vec<f64>,
    pub class: u32,
    pub task: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub input_dim: usize,
    pub domain_labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if s.x.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    what: "sample input",
                    expected: self.input_dim,
                    actual: s.x.len(),
                });
            }
            if s.class as usize >= self.num_classes {
                return Err(Error::ClassOutOfRange {
                    class_id: s.class,
                    max: self.num_classes,
                });
            }
            if !ids.insert(s.id) {
                return Err(Error::MalformedFile(format!("duplicate sample id {}", s.id)));
            }
        }
        if let Some(d) = &self.domain_labels {
            if d.len() != self.samples.len() {
                return Err(Error::DimensionMismatch {
                    what: "domain labels",
                    expected: self.samples.len(),
                    actual: d.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_domains(&self) -> usize {
        self.domain_labels
            .as_ref()
            .map(|d| d.iter().copied().collect::<BTreeSet<_>>().len())
            .unwrap_or(0)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Class means on a sphere of radius `separation`, kept at least `separation`
/// apart (relaxed by 10% whenever rejection sampling stalls).
pub fn class_means(num_classes: usize, input_dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut min_dist = separation;
    while means.len() < num_classes {
        let mut placed = false;
        for _ in 0..REJECTION_ATTEMPTS {
            let mut v = gaussian_vec(rng, input_dim);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            for a in &mut v {
                *a *= separation / n;
            }
            if means.iter().all(|m| distance(m, &v) >= min_dist) {
                means.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            min_dist *= 0.9;
            if min_dist < separation * 1e-6 {
                min_dist = 0.0;
            }
        }
    }
    means
}

/// Gaussian blobs around well-separated class means. Sample ids are `0..n`,
/// ordered class by class.
pub fn gen_synthetic(
    num_classes: usize,
    per_class: usize,
    input_dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || input_dim == 0 {
        return Err(Error::InvalidConfig(
            "classes, per-class count and dimension must all be positive".into(),
        ));
    }
    if !(separation > 0.0) || !(noise >= 0.0) {
        return Err(Error::InvalidConfig(
            "separation must be > 0 and noise >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = class_means(num_classes, input_dim, separation, &mut rng);
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let x = mean
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    round_f32(m + noise * e)
                })
                .collect();
            samples.push(Sample {
                id: samples.len() as u64,
                x,
                class: c as u32,
                task: 0,
            });
        }
    }
    Ok(Dataset {
        samples,
        num_classes,
        input_dim,
        domain_labels: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftKind {
    Rotation,
    Scaling,
    MeanOffset,
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(ShiftKind::Rotation),
            "scaling" => Ok(ShiftKind::Scaling),
            "mean-offset" => Ok(ShiftKind::MeanOffset),
            other => Err(Error::InvalidConfig(format!("unknown shift kind `{other}`"))),
        }
    }
}

/// An input-space transform applied to a whole domain.
#[derive(Debug, Clone)]
enum DomainTransform {
    /// Sequence of Givens rotations `(p, q, angle)`.
    Rotation(Vec<(usize, usize, f64)>),
    Scaling(Vec<f64>),
    Offset(Vec<f64>),
}

impl DomainTransform {
    fn sample(kind: ShiftKind, dim: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            ShiftKind::Rotation => {
                let mut planes = Vec::new();
                if dim >= 2 {
                    for _ in 0..dim {
                        let p = rng.random_range(0..dim);
                        let mut q = rng.random_range(0..dim - 1);
                        if q >= p {
                            q += 1;
                        }
                        let angle = magnitude * rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                        planes.push((p, q, angle));
                    }
                }
                DomainTransform::Rotation(planes)
            }
            ShiftKind::Scaling => DomainTransform::Scaling(
                gaussian_vec(rng, dim)
                    .into_iter()
                    .map(|z| (magnitude * z).exp())
                    .collect(),
            ),
            ShiftKind::MeanOffset => {
                let mut v = gaussian_vec(rng, dim);
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                for a in &mut v {
                    *a *= magnitude / n;
                }
                DomainTransform::Offset(v)
            }
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        match self {
            DomainTransform::Rotation(planes) => {
                for &(p, q, angle) in planes {
                    let (s, c) = angle.sin_cos();
                    let (a, b) = (y[p], y[q]);
                    y[p] = c * a - s * b;
                    y[q] = s * a + c * b;
                }
            }
            DomainTransform::Scaling(f) => {
                for (v, f) in y.iter_mut().zip(f) {
                    *v *= f;
                }
            }
            DomainTransform::Offset(o) => {
                for (v, o) in y.iter_mut().zip(o) {
                    *v += o;
                }
            }
        }
        y
    }
}

/// Replicates `base` into `num_domains` domains. Domain 0 is `base` itself;
/// every other domain gets an independent random transform of the given
/// magnitude. Labels are preserved; sample ids are `domain * n + index`.
pub fn gen_domain_shift(
    base: &Dataset,
    num_domains: usize,
    kind: ShiftKind,
    magnitude: f64,
    seed: u64,
) -> Result<Dataset> {
    base.validate()?;
    if num_domains < 2 {
        return Err(Error::InvalidConfig("num_domains must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = base.samples.len() as u64;
    let mut samples = Vec::with_capacity(base.samples.len() * num_domains);
    let mut domains = Vec::with_capacity(samples.capacity());
    for d in 0..num_domains {
        let transform = (d > 0).then(|| DomainTransform::sample(kind, base.input_dim, magnitude, &mut rng));
        for (i, s) in base.samples.iter().enumerate() {
            let x = match &transform {
                Some(t) => t.apply(&s.x).into_iter().map(round_f32).collect(),
                None => s.x.clone(),
            };
            samples.push(Sample {
                id: d as u64 * n + i as u64,
                x,
                class: s.class,
                task: s.task,
            });
            domains.push(d as u32);
        }
    }
    Ok(Dataset {
        samples,
        num_classes: base.num_classes,
        input_dim: base.input_dim,
        domain_labels: Some(domains),
    })
}

/// Stratified train/test split; returns (train, test), each sorted by sample id.
fn stratified_split(samples: Vec<Sample>, test_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<Sample>, Vec<Sample>) {
    let mut by_class: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.class).or_default().push(s);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut group) in by_class {
        group.sort_by_key(|s| s.id);
        group.shuffle(rng);
        let n_test = (test_fraction * group.len() as f64).round() as usize;
        let rest = group.split_off(n_test.min(group.len()));
        test.extend(group);
        train.extend(rest);
    }
    train.sort_by_key(|s| s.id);
    test.sort_by_key(|s| s.id);
    (train, test)
}

fn check_fraction(test_fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig("test_fraction must lie in [0, 1)".into()));
    }
    Ok(())
}

/// Class-incremental split: classes are shuffled by `seed` and cut into
/// `num_tasks` contiguous blocks of equal size.
pub fn split_cil(ds: &Dataset, num_tasks: usize, test_fraction: f64, seed: u64) -> Result<TaskStream> {
    ds.validate()?;
    check_fraction(test_fraction)?;
    if num_tasks == 0 || !ds.num_classes.is_multiple_of(num_tasks) {
        return Err(Error::InvalidConfig(format!(
            "{} classes cannot be split evenly into {} tasks",
            ds.num_classes, num_tasks
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u32> = (0..ds.num_classes as u32).collect();
    order.shuffle(&mut rng);
    let per_task = ds.num_classes / num_tasks;

    let mut tasks = Vec::with_capacity(num_tasks);
    for (t, block) in order.chunks(per_task).enumerate() {
        let mut classes = block.to_vec();
        classes.sort_unstable();
        let members: Vec<Sample> = ds
            .samples
            .iter()
            .filter(|s| classes.binary_search(&s.class).is_ok())
            .map(|s| Sample {
                task: t as u32,
                ..s.clone()
            })
            .collect();
        let (train, test) = stratified_split(members, test_fraction, &mut rng);
        tasks.push(Task {
            train,
            test,
            classes,
            domain: None,
        });
    }
    let stream = TaskStream {
        protocol: Protocol::ClassIncremental,
        tasks,
    };
    stream.validate()?;
    Ok(stream)
}

/// Domain-incremental split: one task per domain, in `domain_order`.
pub fn split_dil(ds: &Dataset, domain_order: &[u32], test_fraction: f64, seed: u64) -> Result<TaskStream> {
    ds.validate()?;
    check_fraction(test_fraction)?;
    let domains = ds
        .domain_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("dataset has no domain labels".into()))?;
    let present: BTreeSet<u32> = domains.iter().copied().collect();
    let requested: BTreeSet<u32> = domain_order.iter().copied().collect();
    if requested != present || requested.len() != domain_order.len() {
        return Err(Error::InvalidConfig(format!(
            "domain order {domain_order:?} is not a permutation of the dataset's domains {present:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(domain_order.len());
    for (t, &d) in domain_order.iter().enumerate() {
        let members: Vec<Sample> = ds
            .samples
            .iter()
            .zip(domains)
            .filter(|(_, &sd)| sd == d)
            .map(|(s, _)| Sample {
                task: t as u32,
                ..s.clone()
            })
            .collect();
        let classes: Vec<u32> = members.iter().map(|s| s.class).collect::<BTreeSet<_>>().into_iter().collect();
        let (train, test) = stratified_split(members, test_fraction, &mut rng);
        tasks.push(Task {
            train,
            test,
            classes,
            domain: Some(d),
        });
    }
    let stream = TaskStream {
        protocol: Protocol::DomainIncremental,
        tasks,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let n = ds.samples.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (ds.input_dim * 4 + 24));
    out.extend_from_slice(CLDS_MAGIC);
    out.extend_from_slice(&CLDS_VERSION.to_le_bytes());
    let flags = if ds.domain_labels.is_some() { FLAG_DOMAINS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(ds.input_dim as u32).to_le_bytes());
    for s in &ds.samples {
        for &v in &s.x {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for s in &ds.samples {
        out.extend_from_slice(&s.class.to_le_bytes());
    }
    for s in &ds.samples {
        out.extend_from_slice(&s.task.to_le_bytes());
    }
    for s in &ds.samples {
        out.extend_from_slice(&s.id.to_le_bytes());
    }
    if let Some(d) = &ds.domain_labels {
        for v in d {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::MalformedFile(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CLDS_MAGIC {
        return Err(Error::MalformedFile("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != CLDS_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CLDS_VERSION,
        });
    }
    let flags = r.u32("flags")?;
    if flags & !FLAG_DOMAINS != 0 {
        return Err(Error::MalformedFile(format!("unknown flags {flags:#x}")));
    }
    let n = usize::try_from(r.u64("sample count")?)
        .map_err(|_| Error::MalformedFile("sample count overflows".into()))?;
    let num_classes = r.u32("class count")? as usize;
    let input_dim = r.u32("input dim")? as usize;

    let per_sample = input_dim
        .checked_mul(4)
        .and_then(|b| b.checked_add(16 + if flags & FLAG_DOMAINS != 0 { 4 } else { 0 }))
        .ok_or_else(|| Error::MalformedFile("input dim overflows".into()))?;
    let body = n
        .checked_mul(per_sample)
        .ok_or_else(|| Error::MalformedFile("body size overflows".into()))?;
    if bytes.len() - r.pos != body {
        return Err(Error::MalformedFile(format!(
            "expected {body} body bytes, found {}",
            bytes.len() - r.pos
        )));
    }

    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            x.push(r.f32("inputs")? as f64);
        }
        xs.push(x);
    }
    let classes = (0..n).map(|_| r.u32("class ids")).collect::<Result<Vec<_>>>()?;
    let tasks = (0..n).map(|_| r.u32("task ids")).collect::<Result<Vec<_>>>()?;
    let ids = (0..n).map(|_| r.u64("sample ids")).collect::<Result<Vec<_>>>()?;
    let domain_labels = if flags & FLAG_DOMAINS != 0 {
        Some((0..n).map(|_| r.u32("domain ids")).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };

    let samples = xs
        .into_iter()
        .zip(classes)
        .zip(tasks)
        .zip(ids)
        .map(|(((x, class), task), id)| Sample { id, x, class, task })
        .collect();
    let ds = Dataset {
        samples,
        num_classes,
        input_dim,
        domain_labels,
    };
    ds.validate().map_err(|e| Error::MalformedFile(e.to_string()))?;
    Ok(ds)
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Inspection-only CSV: `sample_id,class,task,domain,x0,x1,...`.
pub fn export_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "class".into(), "task".into(), "domain".into()];
    header.extend((0..ds.input_dim).map(|i| format!("x{i}")));
    let csv_err = |e: csv::Error| Error::MalformedFile(format!("csv export: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in ds.samples.iter().enumerate() {
        let domain = ds
            .domain_labels
            .as_ref()
            .map(|d| d[i].to_string())
            .unwrap_or_default();
        let mut rec = vec![s.id.to_string(), s.class.to_string(), s.task.to_string(), domain];
        rec.extend(s.x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
