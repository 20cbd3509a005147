//! Single-document JSON experiment configuration with full defaulting.
//! Every field can be omitted; a missing file means "all defaults".

use crate::CliError;
use fedalign::al::{FalConfig, SelectorKind};
use fedalign::datagen::{DatasetConfig, DomainSpec, FederationSplit};
use fedalign::fed::{Baseline, FedConfig};
use fedalign::model::{LossLambdas, ModelConfig};
use fedalign::numcore::SgdHyper;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub num_domains: usize,
    pub num_classes: usize,
    pub samples_per_domain: usize,
    pub input_dim: usize,
    pub class_radius: f64,
    pub noise_std: f64,
    /// Rotation difference between consecutive domains, radians.
    pub rotation_gap: f64,
    /// Per-domain scale nuisance: domain d gets 1 + spread * centered(d).
    pub scale_spread: f64,
    /// Per-domain shift nuisance: domain d is displaced by this amount along
    /// the direction of its own rotation angle, in the first two non-class
    /// input axes. Every left-out domain's displacement is then a convex-hull
    /// vertex of the domains', and displacement proximity tracks rotation
    /// proximity.
    pub shift_magnitude: f64,
    /// Widens the displacement fan: the displacement direction angle is the
    /// rotation angle times this factor (kept below a half-turn overall so
    /// displacement adjacency stays monotone in rotation adjacency).
    pub shift_angle_scale: f64,
    /// Optional explicit per-domain overrides; defaults derive from the
    /// knobs above.
    pub scales: Option<Vec<f64>>,
    pub shifts: Option<Vec<Vec<f64>>>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            num_domains: 4,
            num_classes: 2,
            samples_per_domain: 500,
            input_dim: 8,
            class_radius: 0.7,
            noise_std: 0.3,
            rotation_gap: std::f64::consts::FRAC_PI_4,
            scale_spread: 0.0,
            shift_magnitude: 3.0,
            shift_angle_scale: 1.4,
            scales: None,
            shifts: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for ModelSection {
    /// The default encoder is the smallest one that reproduces the method
    /// orderings robustly at this scale; deeper encoders are a config knob.
    fn default() -> Self {
        ModelSection {
            hidden_dims: vec![],
            latent_dim: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSection {
    pub rounds: usize,
    pub comm_every: usize,
    pub local_batch: usize,
    pub target_batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda_l2: f64,
    pub lambda_cmi: f64,
    pub lambda_fea: f64,
    pub ema_alpha: f64,
    pub val_fraction: f64,
    pub baseline: Baseline,
}

impl Default for FedSection {
    fn default() -> Self {
        FedSection {
            rounds: 100,
            comm_every: 5,
            local_batch: 64,
            target_batch: 256,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            lambda_l2: 0.01,
            lambda_cmi: 0.001,
            lambda_fea: 0.1,
            ema_alpha: 0.9,
            val_fraction: 0.1,
            baseline: Baseline::Feda,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlSection {
    pub cycles: usize,
    /// Absolute per-cycle budget; takes precedence over `budget_fraction`.
    pub budget: Option<usize>,
    /// Per-cycle budget as a fraction of all source samples.
    pub budget_fraction: f64,
    pub initial_fraction: f64,
    /// Training length per cycle (the models re-initialise each cycle).
    pub rounds: usize,
    pub selector: SelectorKind,
}

impl Default for AlSection {
    fn default() -> Self {
        AlSection {
            cycles: 5,
            budget: None,
            budget_fraction: 0.02,
            initial_fraction: 0.02,
            rounds: 300,
            selector: SelectorKind::Fedalv,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub target_domain: usize,
    pub threads: usize,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub fed: FedSection,
    pub al: AlSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            target_domain: 0,
            threads: 1,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            fed: FedSection::default(),
            al: AlSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("invalid config {}: {e}", p.display())))
            }
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            num_domains: self.dataset.num_domains,
            num_classes: self.dataset.num_classes,
            samples_per_domain: self.dataset.samples_per_domain,
            input_dim: self.dataset.input_dim,
            class_radius: self.dataset.class_radius,
            seed: self.seed,
        }
    }

    pub fn domain_specs(&self) -> Result<Vec<DomainSpec>, CliError> {
        let d = &self.dataset;
        if let Some(scales) = &d.scales {
            if scales.len() != d.num_domains {
                return Err(CliError::config("scales length must equal num_domains"));
            }
        }
        if let Some(shifts) = &d.shifts {
            if shifts.len() != d.num_domains {
                return Err(CliError::config("shifts length must equal num_domains"));
            }
        }
        let centered = |i: usize| {
            if d.num_domains < 2 {
                return 0.0;
            }
            (2.0 * i as f64 - (d.num_domains - 1) as f64) / (d.num_domains - 1) as f64
        };
        let derived_scale = |i: usize| 1.0 + d.scale_spread * centered(i);
        let derived_shift = |i: usize| {
            let mut shift = vec![0.0; d.input_dim];
            let angle = d.shift_angle_scale * d.rotation_gap * i as f64;
            if d.input_dim >= 4 {
                shift[2] = d.shift_magnitude * angle.cos();
                shift[3] = d.shift_magnitude * angle.sin();
            } else if d.input_dim == 3 {
                shift[2] = d.shift_magnitude * centered(i);
            }
            shift
        };
        Ok((0..d.num_domains)
            .map(|i| DomainSpec {
                rotation: d.rotation_gap * i as f64,
                scale: d.scales.as_ref().map_or_else(|| derived_scale(i), |s| s[i]),
                shift: d
                    .shifts
                    .as_ref()
                    .map_or_else(|| derived_shift(i), |s| s[i].clone()),
                noise_std: d.noise_std,
            })
            .collect())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.dataset.input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            latent_dim: self.model.latent_dim,
            num_classes: self.dataset.num_classes,
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            rounds: self.fed.rounds,
            comm_every: self.fed.comm_every,
            local_batch: self.fed.local_batch,
            target_batch: self.fed.target_batch,
            lambdas: LossLambdas {
                lambda_l2: self.fed.lambda_l2,
                lambda_cmi: self.fed.lambda_cmi,
            },
            lambda_fea: self.fed.lambda_fea,
            ema_alpha: self.fed.ema_alpha,
            optimizer: SgdHyper {
                learning_rate: self.fed.learning_rate,
                momentum: self.fed.momentum,
                weight_decay: self.fed.weight_decay,
            },
            val_fraction: self.fed.val_fraction,
            baseline: self.fed.baseline,
            threads: self.threads,
            seed: self.seed,
        }
    }

    /// Per-cycle absolute budget: explicit count, or the fraction of all
    /// source samples, rounded.
    pub fn al_budget(&self) -> usize {
        match self.al.budget {
            Some(b) => b,
            None => {
                let total =
                    (self.dataset.num_domains - 1) * self.dataset.samples_per_domain;
                (self.al.budget_fraction * total as f64).round() as usize
            }
        }
    }

    pub fn fal_config(&self) -> FalConfig {
        let mut fed = self.fed_config();
        fed.rounds = self.al.rounds;
        FalConfig {
            fed,
            cycles: self.al.cycles,
            budget: self.al_budget(),
            initial_fraction: self.al.initial_fraction,
            selector: self.al.selector,
        }
    }

    pub fn federation(&self) -> Result<FederationSplit, CliError> {
        let specs = self.domain_specs()?;
        fedalign::datagen::make_federation(&self.dataset_config(), &specs, self.target_domain)
            .map_err(CliError::from)
    }

    /// Canonical JSON for hashing and the manifest snapshot.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
