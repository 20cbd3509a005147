//! Synthetic multi-domain dataset generation, labeled/unlabeled pool
//! management for active learning, and CSV ingestion of precomputed
//! embeddings.
//!
//! Domains are rotated/scaled/shifted Gaussian class clusters: class `c` of
//! `C` sits on a circle of radius `class_radius` in the first two input
//! coordinates, and a domain applies a rotation of those two coordinates plus
//! a global scale and shift. The rotation angle is the single knob
//! controlling distribution shift.

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    pub rotation: f64,
    pub scale: f64,
    pub shift: Vec<f64>,
    pub noise_std: f64,
}

impl DomainSpec {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.scale <= 0.0 {
            return Err(Error::config("domain scale must be positive"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config("domain noise_std must be nonnegative"));
        }
        if self.shift.len() != input_dim {
            return Err(Error::config(format!(
                "domain shift length {} does not match input_dim {input_dim}",
                self.shift.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetConfig {
    pub num_domains: usize,
    pub num_classes: usize,
    pub samples_per_domain: usize,
    pub input_dim: usize,
    pub class_radius: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 2 {
            return Err(Error::config("need at least 2 domains"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.input_dim < 2 {
            return Err(Error::config("input_dim must be >= 2"));
        }
        if self.samples_per_domain == 0 {
            return Err(Error::config("samples_per_domain must be positive"));
        }
        if self.class_radius <= 0.0 {
            return Err(Error::config("class_radius must be positive"));
        }
        Ok(())
    }
}

/// Per-client features, labels, and the labeled/unlabeled pool mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub labeled_mask: Vec<bool>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled_mask[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled_mask[i]).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&m| m).count()
    }
}

/// Leave-one-domain-out split: every domain except `held_out_domain` becomes
/// a source client; the held-out domain is the (unlabeled) target.
#[derive(Debug, Clone)]
pub struct FederationSplit {
    pub sources: Vec<ClientDataset>,
    pub target: ClientDataset,
    pub held_out_domain: usize,
}

/// Per-class sample counts: as balanced as possible, remainder spread over
/// the trailing classes so counts never differ by more than one.
fn class_counts(total: usize, num_classes: usize) -> Vec<usize> {
    let base = total / num_classes;
    let rem = total % num_classes;
    (0..num_classes)
        .map(|c| base + usize::from(c >= num_classes - rem))
        .collect()
}

pub fn generate_domain(
    spec: &DomainSpec,
    config: &DatasetConfig,
    rng: &mut Rng,
) -> Result<ClientDataset> {
    config.validate()?;
    spec.validate(config.input_dim)?;
    let d = config.input_dim;
    let n = config.samples_per_domain;
    let (sin_r, cos_r) = spec.rotation.sin_cos();

    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, &count) in class_counts(n, config.num_classes).iter().enumerate() {
        let angle = std::f64::consts::TAU * c as f64 / config.num_classes as f64;
        let (mean_y, mean_x) = angle.sin_cos();
        for _ in 0..count {
            let out = features.row_mut(row);
            out[0] = config.class_radius * mean_x;
            out[1] = config.class_radius * mean_y;
            for v in out.iter_mut() {
                *v += spec.noise_std * rng.normal();
            }
            let (x0, x1) = (out[0], out[1]);
            out[0] = cos_r * x0 - sin_r * x1;
            out[1] = sin_r * x0 + cos_r * x1;
            for (v, &s) in out.iter_mut().zip(&spec.shift) {
                *v = spec.scale * *v + s;
            }
            labels.push(c);
            row += 1;
        }
    }
    Ok(ClientDataset {
        features,
        labels,
        labeled_mask: vec![true; n],
    })
}

pub fn make_federation(
    config: &DatasetConfig,
    domain_specs: &[DomainSpec],
    target_index: usize,
) -> Result<FederationSplit> {
    config.validate()?;
    if domain_specs.len() != config.num_domains {
        return Err(Error::argument(format!(
            "expected {} domain specs, got {}",
            config.num_domains,
            domain_specs.len()
        )));
    }
    if target_index >= config.num_domains {
        return Err(Error::argument(format!(
            "target index {target_index} out of range for {} domains",
            config.num_domains
        )));
    }
    let root = Rng::new(config.seed);
    let mut sources = Vec::with_capacity(config.num_domains - 1);
    let mut target = None;
    for (idx, spec) in domain_specs.iter().enumerate() {
        let mut rng = root.split(idx as u64);
        let dataset = generate_domain(spec, config, &mut rng)?;
        if idx == target_index {
            let mut t = dataset;
            // The target is unseen: no labels are available to the protocol.
            t.labeled_mask = vec![false; t.len()];
            target = Some(t);
        } else {
            sources.push(dataset);
        }
    }
    Ok(FederationSplit {
        sources,
        target: target.unwrap(),
        held_out_domain: target_index,
    })
}

/// Re-initialise the labeled pool: exactly `round(fraction * n)` rows become
/// labeled, uniformly without replacement; the rest revert to unlabeled.
pub fn init_labeled_pool(dataset: &mut ClientDataset, fraction: f64, rng: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::argument(format!(
            "labeled fraction {fraction} outside [0, 1]"
        )));
    }
    let n = dataset.len();
    let k = (fraction * n as f64).round() as usize;
    let chosen = rng.sample_without_replacement(n, k);
    dataset.labeled_mask = vec![false; n];
    for i in chosen {
        dataset.labeled_mask[i] = true;
    }
    Ok(())
}

/// Parse a header-less `label,f1,...,fd` CSV into a fully labeled dataset.
/// Accepts LF or CRLF line endings; reports 1-based line numbers on errors.
pub fn load_csv_embeddings(path: &Path) -> Result<ClientDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap();
        let label: usize = label_field.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid label {label_field:?}"),
        })?;
        let feats: Vec<f64> = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid feature value {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if feats.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "row has no feature columns".into(),
            });
        }
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("ragged row: {} features, expected {w}", feats.len()),
                })
            }
            _ => {}
        }
        labels.push(label);
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "empty embeddings file".into(),
        });
    }
    let features = Matrix::from_rows(&rows)?;
    let n = labels.len();
    Ok(ClientDataset {
        features,
        labels,
        labeled_mask: vec![true; n],
    })
}

/// Write a dataset in the same header-less CSV format `load_csv_embeddings`
/// reads.
pub fn write_csv_embeddings(dataset: &ClientDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..dataset.len() {
        out.push_str(&dataset.labels[i].to_string());
        for v in dataset.features.row(i) {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
