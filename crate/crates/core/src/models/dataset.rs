//! Labeled example storage, synthetic cluster generation, and the plain-text
//! dataset file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::numerics::SeededRng;
use crate::{invalid, Error, Result};

/// One labeled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// The ground set: examples plus an active mask that shrinks as examples are
/// learned and dropped from the selection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    n_classes: usize,
    active: Vec<bool>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(invalid("dataset needs at least two classes"));
        }
        if examples.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        let dim = examples[0].features.len();
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != dim {
                return Err(invalid(format!(
                    "example {i} has dimension {} but example 0 has {dim}",
                    ex.features.len()
                )));
            }
            if ex.label >= n_classes {
                return Err(invalid(format!(
                    "example {i} has label {} with only {n_classes} classes",
                    ex.label
                )));
            }
            if !ex.features.iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("example {i} has non-finite features")));
            }
        }
        let n = examples.len();
        Ok(Self {
            examples,
            n_classes,
            active: vec![true; n],
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.examples[0].features.len()
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn deactivate(&mut self, i: usize) {
        self.active[i] = false;
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Indices of the current ground set, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    /// Serialize in the plain-text format read by [`load_dataset`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{} {}", self.input_dim(), self.n_classes).unwrap();
        for ex in &self.examples {
            for x in &ex.features {
                write!(out, "{x} ").unwrap();
            }
            writeln!(out, "{}", ex.label).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Parameters for [`generate_synthetic`]. Gaussian class clusters with
/// configurable redundancy, imbalance, and label noise.
///
/// Classes are ordered easy to hard: class c sits at radius
/// `CENTER_SCALE / (1 + c)` along a random direction, so later classes have
/// smaller feature scale (smaller gradients, slower to learn) while staying
/// linearly separable. Combined with `imbalance` this gives a populous
/// fast-learning head class and rare slow-learning tail classes, the
/// redundancy structure a subset-selection method can exploit.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub n_classes: usize,
    /// Cluster standard deviation relative to the class radius, so the
    /// clusters are heteroscedastic in absolute terms; 0 collapses every
    /// class to a point mass.
    pub spread: f64,
    /// Share of examples assigned to class 0; remaining classes split the
    /// rest evenly. `1/K` is balanced.
    pub imbalance: f64,
    /// Fraction of examples whose label is resampled uniformly.
    pub noise_fraction: f64,
}

impl SyntheticSpec {
    pub fn balanced(n: usize, dim: usize, n_classes: usize, spread: f64) -> Self {
        Self {
            n,
            dim,
            n_classes,
            spread,
            imbalance: 1.0 / n_classes as f64,
            noise_fraction: 0.0,
        }
    }
}

const CENTER_SCALE: f64 = 1.5;

/// Deterministic Gaussian class clusters. Same spec and seed produce a
/// bit-identical dataset.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.n_classes < 2 || spec.n < spec.n_classes {
        return Err(invalid("need n >= n_classes >= 2"));
    }
    if spec.dim == 0 {
        return Err(invalid("feature dimension must be >= 1"));
    }
    if spec.imbalance.is_nan() || spec.imbalance <= 0.0 || spec.imbalance >= 1.0 {
        return Err(invalid("imbalance must lie in (0, 1)"));
    }
    if !(0.0..=1.0).contains(&spec.noise_fraction) {
        return Err(invalid("noise fraction must lie in [0, 1]"));
    }
    if spec.spread < 0.0 {
        return Err(invalid("spread must be nonnegative"));
    }
    let mut rng = SeededRng::new(seed);

    // Class c: random direction scaled to radius CENTER_SCALE / (1 + c).
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|c| {
            let raw: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let radius = CENTER_SCALE / (1.0 + c as f64);
            raw.into_iter().map(|x| x * radius / norm).collect()
        })
        .collect();

    // Class counts: class 0 takes round(imbalance * n), the rest split evenly
    // with remainders going to the lowest class indices.
    let mut counts = vec![0usize; spec.n_classes];
    counts[0] = ((spec.imbalance * spec.n as f64).round() as usize)
        .clamp(1, spec.n - (spec.n_classes - 1));
    let rest = spec.n - counts[0];
    let others = spec.n_classes - 1;
    for (k, count) in counts.iter_mut().enumerate().skip(1) {
        *count = rest / others + usize::from(k - 1 < rest % others);
    }

    let mut examples = Vec::with_capacity(spec.n);
    for (class, &count) in counts.iter().enumerate() {
        let sigma = spec.spread * CENTER_SCALE / (1.0 + class as f64);
        for _ in 0..count {
            let features = centers[class]
                .iter()
                .map(|c| c + sigma * rng.normal())
                .collect();
            examples.push(Example {
                features,
                label: class,
            });
        }
    }

    if spec.noise_fraction > 0.0 {
        let n_noisy = (spec.noise_fraction * spec.n as f64).round() as usize;
        let noisy = rng.sample_without_replacement(spec.n, n_noisy.min(spec.n));
        for i in noisy {
            examples[i].label = rng.index(spec.n_classes);
        }
    }

    Dataset::new(examples, spec.n_classes)
}

/// Read a dataset file: header line `d K`, then one example per line with
/// `d` decimal features followed by an integer label.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or(Error::Format {
            line: 1,
            msg: "missing header".into(),
        })
        .and_then(|(i, l)| {
            if l.trim().is_empty() {
                Err(Error::Format {
                    line: i + 1,
                    msg: "missing header".into(),
                })
            } else {
                Ok((i, l))
            }
        })?;
    let mut parts = header.split_whitespace();
    let dim: usize = parse_field(parts.next(), 1, "feature dimension")?;
    let n_classes: usize = parse_field(parts.next(), 1, "class count")?;
    if parts.next().is_some() {
        return Err(Error::Format {
            line: 1,
            msg: "header must be exactly `d K`".into(),
        });
    }

    let mut examples = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 1 {
            return Err(Error::Format {
                line: lineno,
                msg: format!("expected {} fields, found {}", dim + 1, fields.len()),
            });
        }
        let mut features = Vec::with_capacity(dim);
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| Error::Format {
                line: lineno,
                msg: format!("bad feature value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    line: lineno,
                    msg: "non-finite feature".into(),
                });
            }
            features.push(v);
        }
        let label: usize = fields[dim].parse().map_err(|_| Error::Format {
            line: lineno,
            msg: format!("bad label `{}`", fields[dim]),
        })?;
        if label >= n_classes {
            return Err(Error::Format {
                line: lineno,
                msg: format!("label {label} out of range (K = {n_classes})"),
            });
        }
        examples.push(Example { features, label });
    }
    if examples.is_empty() {
        return Err(Error::Format {
            line: 1,
            msg: "dataset has a header but no examples".into(),
        });
    }
    Dataset::new(examples, n_classes)
}

fn parse_field(field: Option<&str>, line: usize, what: &str) -> Result<usize> {
    field
        .ok_or(Error::Format {
            line,
            msg: format!("missing {what}"),
        })?
        .parse()
        .map_err(|_| Error::Format {
            line,
            msg: format!("bad {what}"),
        })
}
