//! Run configuration (TOML).
//!
//! ```toml
//! seed = 7
//! project = "wing"
//! model = "gpr"            # gpr | mlp, for train / tune / convergence
//! payload = "text"         # text | binary bundle payloads
//!
//! [split]
//! train_frac = 0.70
//! test_frac = 0.15
//! val_frac = 0.15
//!
//! [data]                   # single-fidelity commands
//! input = "hf_inputs.txt"
//! output = "hf_outputs.txt"
//! fidelity = "HF"
//!
//! [[fidelity]]             # mf-train chain, lowest fidelity first
//! name = "LF"
//! input = "lf_inputs.txt"
//! output = "lf_outputs.txt"
//! model = "gpr"            # optional, defaults to the top-level `model`
//!
//! [[gpr.kernels]]
//! family = "matern"        # rbf | matern
//! nu = 2.5
//! scaled = true
//! length_scale = 1.0       # or one value per input dimension
//!
//! [gpr.optimize]
//! restarts = 3
//! max_iter = 200
//!
//! [mlp]
//! layers = [1, 2, 3]
//! widths = [16, 32, 64, 128]
//! activation = "tanh"
//! [mlp.train]
//! learning_rate = 1e-3
//! max_epochs = 2000
//!
//! [convergence]
//! sizes = [8, 16, 32]
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! of the config file. The top-level `seed` drives the split, the GPR
//! restarts and the MLP initialization.

use std::path::{Path, PathBuf};

use mfsurrogate::gpr::{KernelSpec, LengthScale, MaternNu, OptimizeOptions};
use mfsurrogate::modelstore::PayloadFormat;
use mfsurrogate::preprocess::SplitSpec;
use mfsurrogate::surrogate::ModelKind;
use mfsurrogate::tuner::{GprGrid, MlpGrid, SweepGrid};
use mfsurrogate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub project: String,
    pub model: ModelKind,
    pub payload: PayloadFormat,
    pub out: Option<PathBuf>,
    pub split: SplitSection,
    pub data: Option<DataSection>,
    pub fidelity: Vec<FidelitySection>,
    pub gpr: GprSection,
    pub mlp: MlpGrid,
    pub convergence: ConvergenceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            project: "surrogate".into(),
            model: ModelKind::Gpr,
            payload: PayloadFormat::Text,
            out: None,
            split: SplitSection::default(),
            data: None,
            fidelity: Vec::new(),
            gpr: GprSection::default(),
            mlp: MlpGrid::default(),
            convergence: ConvergenceSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            train_frac: s.train_frac,
            test_frac: s.test_frac,
            val_frac: s.val_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default = "default_fidelity")]
    pub fidelity: String,
}

fn default_fidelity() -> String {
    "HF".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySection {
    pub name: String,
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthScaleEntry {
    Isotropic(f64),
    PerDimension(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default = "yes")]
    pub scaled: bool,
    #[serde(default = "unit_length_scale")]
    pub length_scale: LengthScaleEntry,
    #[serde(default = "one")]
    pub signal_variance: f64,
    #[serde(default)]
    pub noise: f64,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn unit_length_scale() -> LengthScaleEntry {
    LengthScaleEntry::Isotropic(1.0)
}

impl KernelEntry {
    pub fn to_spec(&self, key: &str) -> Result<KernelSpec> {
        let mut spec = match (self.family.to_ascii_lowercase().as_str(), self.nu) {
            ("rbf", None) => KernelSpec::rbf(1.0),
            ("rbf", Some(_)) => return Err(Error::config(format!("{key}.nu"), "only Matern kernels take nu")),
            ("matern", Some(nu)) => {
                KernelSpec::matern(MaternNu::from_value(nu).map_err(|e| Error::config(format!("{key}.nu"), e.to_string()))?, 1.0)
            }
            ("matern", None) => return Err(Error::config(format!("{key}.nu"), "Matern kernels need nu (0.5, 1.5 or 2.5)")),
            (other, _) => {
                return Err(Error::config(
                    format!("{key}.family"),
                    format!("unknown kernel family `{other}`, expected rbf or matern"),
                ))
            }
        };
        spec.scaled = self.scaled;
        spec.length_scale = match &self.length_scale {
            LengthScaleEntry::Isotropic(l) => LengthScale::Isotropic(*l),
            LengthScaleEntry::PerDimension(v) => LengthScale::PerDimension(v.clone()),
        };
        spec.signal_variance = self.signal_variance;
        spec.noise = self.noise;
        Ok(spec)
    }

    fn from_spec(spec: &KernelSpec) -> Self {
        use mfsurrogate::gpr::KernelFamily;
        let (family, nu) = match spec.family {
            KernelFamily::Rbf => ("rbf", None),
            KernelFamily::Matern { nu } => ("matern", Some(nu.value())),
        };
        Self {
            family: family.into(),
            nu,
            scaled: spec.scaled,
            length_scale: match &spec.length_scale {
                LengthScale::Isotropic(l) => LengthScaleEntry::Isotropic(*l),
                LengthScale::PerDimension(v) => LengthScaleEntry::PerDimension(v.clone()),
            },
            signal_variance: spec.signal_variance,
            noise: spec.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprSection {
    pub kernels: Vec<KernelEntry>,
    pub optimize: OptimizeOptions,
}

impl Default for GprSection {
    fn default() -> Self {
        let grid = GprGrid::default();
        Self {
            kernels: grid.kernels.iter().map(KernelEntry::from_spec).collect(),
            optimize: grid.optimize,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub sizes: Vec<usize>,
}

impl RunConfig {
    /// Parses and validates; errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<syntax>", e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path.is_empty() || path == "." { "<root>".to_string() } else { path };
            Error::config(key, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = mfsurrogate::dataset::read_text(path)?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.input);
            fix(&mut d.output);
        }
        for f in &mut self.fidelity {
            fix(&mut f.input);
            fix(&mut f.output);
        }
        if let Some(out) = &mut self.out {
            fix(out);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec()
            .validate()
            .map_err(|e| Error::config("split", e.to_string()))?;
        if self.project.is_empty() || self.project.contains(['/', '\\']) {
            return Err(Error::config("project", "must be a non-empty name without path separators"));
        }
        if self.gpr.kernels.is_empty() {
            return Err(Error::config("gpr.kernels", "at least one kernel is required"));
        }
        self.gpr_grid()?;
        SweepGrid::Mlp(self.mlp.clone())
            .validate()
            .map_err(|e| Error::config("mlp", e.to_string()))?;
        if self.gpr.optimize.restarts == 0 {
            return Err(Error::config("gpr.optimize.restarts", "must be at least 1"));
        }
        if !self.convergence.sizes.windows(2).all(|w| w[0] < w[1]) || self.convergence.sizes.contains(&0) {
            return Err(Error::config("convergence.sizes", "must be positive and strictly increasing"));
        }
        for (i, f) in self.fidelity.iter().enumerate() {
            if f.name.trim().is_empty() {
                return Err(Error::config(format!("fidelity[{i}].name"), "must not be empty"));
            }
        }
        if self.fidelity.len() == 1 {
            return Err(Error::config("fidelity", "a chain needs at least two levels"));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.split.train_frac,
            test_frac: self.split.test_frac,
            val_frac: self.split.val_frac,
            seed: self.seed,
        }
    }

    pub fn gpr_grid(&self) -> Result<GprGrid> {
        let kernels = self
            .gpr
            .kernels
            .iter()
            .enumerate()
            .map(|(i, k)| k.to_spec(&format!("gpr.kernels[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        Ok(GprGrid {
            kernels,
            optimize: OptimizeOptions {
                seed: self.seed,
                ..self.gpr.optimize.clone()
            },
        })
    }

    pub fn mlp_grid(&self) -> MlpGrid {
        let mut grid = self.mlp.clone();
        grid.train.seed = self.seed;
        grid
    }

    pub fn grid(&self, kind: ModelKind) -> Result<SweepGrid> {
        Ok(match kind {
            ModelKind::Gpr => SweepGrid::Gpr(self.gpr_grid()?),
            ModelKind::Mlp => SweepGrid::Mlp(self.mlp_grid()),
        })
    }
}
