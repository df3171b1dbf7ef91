//! Versioned on-disk model bundles.
//!
//! Layout of a bundle directory `<dir>/<project>_v<k>`:
//!
//! ```text
//! meta.json        format version, model type, hyperparameters, scalers,
//!                  layouts and training metadata (JSON)
//! payload/*.txt    numeric arrays in tensor-text (`rows cols 1` header)
//! payload/*.bin    or the same arrays as flat binary, see below
//! CHECKSUMS        `<sha256 hex>  <relative path>` for every file above
//! ```
//!
//! Binary payloads are little-endian: the magic `MFSB`, a `u32` version (1),
//! `u64` rows, `u64` cols, then `rows * cols` `f64` values in row-major
//! order.
//!
//! Composite payload names are prefixed by their position in the chain
//! (`lf.`, `mf.`, `lf.lf.` ...). Saving never overwrites: `k` is one more
//! than the largest existing version for the project.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{parse_tensor_text, read_text, render_tensor_text, write_text, DataTensor};
use crate::error::{Error, Result};
use crate::gpr::{GprModel, KernelSpec};
use crate::mlp::{Dense, MlpArchitecture, MlpModel};
use crate::multifid::{MfComposite, Stage};
use crate::preprocess::StandardScaler;
use crate::surrogate::{Layout, RawPredictor, ScaledModel, Surrogate};

pub const FORMAT_VERSION: u32 = 1;
const BIN_MAGIC: &[u8; 4] = b"MFSB";
const BIN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    #[default]
    Text,
    Binary,
}

/// Anything a bundle can hold.
#[derive(Debug, Clone)]
pub enum StoredModel {
    Single(ScaledModel),
    Composite(MfComposite),
}

impl StoredModel {
    fn as_predictor(&self) -> &dyn RawPredictor {
        match self {
            StoredModel::Single(m) => m,
            StoredModel::Composite(c) => c,
        }
    }

    pub fn model_type(&self) -> &'static str {
        match self {
            StoredModel::Single(m) => match m.model {
                Surrogate::Gpr(_) => "gpr",
                Surrogate::Mlp(_) => "mlp",
            },
            StoredModel::Composite(_) => "mf-composite",
        }
    }

    pub fn as_single(&self) -> Option<&ScaledModel> {
        match self {
            StoredModel::Single(m) => Some(m),
            StoredModel::Composite(_) => None,
        }
    }
}

impl RawPredictor for StoredModel {
    fn input_dim(&self) -> usize {
        self.as_predictor().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.as_predictor().output_dim()
    }

    fn output_layout(&self) -> &Layout {
        self.as_predictor().output_layout()
    }

    fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.as_predictor().predict_raw(x_raw)
    }

    fn describe(&self) -> String {
        self.as_predictor().describe()
    }

    fn hyperparameters(&self) -> serde_json::Value {
        self.as_predictor().hyperparameters()
    }
}

/// Free-form training context stored alongside the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: Option<u64>,
    /// Named array shapes, e.g. `"x_train": [280, 4]`.
    #[serde(default)]
    pub shapes: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, Default)]
pub struct SaveOptions {
    pub fidelity: String,
    pub payload: PayloadFormat,
    pub training: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerPair {
    pub x: Option<StandardScaler>,
    pub y: Option<StandardScaler>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Component {
    Gpr {
        kernel: KernelSpec,
        lml: f64,
        jitter_used: f64,
        scalers: ScalerPair,
        inputs: Layout,
        outputs: Layout,
        /// Role (`x_train`, `cholesky`, `alpha`) to payload path.
        payload: BTreeMap<String, String>,
    },
    Mlp {
        architecture: MlpArchitecture,
        best_epoch: usize,
        epochs_run: usize,
        final_train_loss: Option<f64>,
        best_val_loss: Option<f64>,
        scalers: ScalerPair,
        inputs: Layout,
        outputs: Layout,
        /// `w<k>` / `b<k>` to payload path.
        payload: BTreeMap<String, String>,
    },
    MfComposite {
        lf: Box<Component>,
        mf: Box<Component>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub model_type: String,
    pub project: String,
    pub version: u32,
    pub fidelity: String,
    pub tool_version: String,
    pub created_unix: u64,
    pub payload_format: PayloadFormat,
    pub hyperparameters: serde_json::Value,
    pub training: TrainingMetadata,
    pub component: Component,
}

#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub meta: BundleMeta,
    pub model: StoredModel,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_binary(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

fn decode_binary(bytes: &[u8], file: &str) -> Result<DMatrix<f64>> {
    let bad = |msg: &str| Error::Bundle(format!("{file}: {msg}"));
    if bytes.len() < 24 || &bytes[..4] != BIN_MAGIC {
        return Err(bad("not a binary payload"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BIN_VERSION {
        return Err(bad(&format!("unsupported binary payload version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(bad("length does not match header"));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

struct Writer {
    root: PathBuf,
    format: PayloadFormat,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, name: &str, m: &DMatrix<f64>) -> Result<String> {
        let rel = match self.format {
            PayloadFormat::Text => format!("payload/{name}.txt"),
            PayloadFormat::Binary => format!("payload/{name}.bin"),
        };
        let path = self.root.join(&rel);
        match self.format {
            PayloadFormat::Text => write_text(&path, render_tensor_text(&DataTensor::from_table(m)?))?,
            PayloadFormat::Binary => write_text(&path, encode_binary(m))?,
        }
        self.files.push(rel.clone());
        Ok(rel)
    }

    fn scaled(&mut self, prefix: &str, sm: &ScaledModel) -> Result<Component> {
        let scalers = ScalerPair {
            x: Some(sm.x_scaler.clone()),
            y: Some(sm.y_scaler.clone()),
        };
        match &sm.model {
            Surrogate::Gpr(gp) => {
                let mut payload = BTreeMap::new();
                for (role, m) in [("x_train", gp.x_train()), ("cholesky", gp.cholesky()), ("alpha", gp.alpha())] {
                    payload.insert(role.to_string(), self.put(&format!("{prefix}{role}"), m)?);
                }
                Ok(Component::Gpr {
                    kernel: gp.kernel().clone(),
                    lml: gp.lml(),
                    jitter_used: gp.jitter_used(),
                    scalers,
                    inputs: sm.inputs.clone(),
                    outputs: sm.outputs.clone(),
                    payload,
                })
            }
            Surrogate::Mlp(net) => {
                let mut payload = BTreeMap::new();
                for (k, layer) in net.layers().iter().enumerate() {
                    let w = format!("w{k}");
                    payload.insert(w.clone(), self.put(&format!("{prefix}{w}"), &layer.weights)?);
                    let b = format!("b{k}");
                    let bias = DMatrix::from_row_slice(1, layer.bias.len(), layer.bias.as_slice());
                    payload.insert(b.clone(), self.put(&format!("{prefix}{b}"), &bias)?);
                }
                let history = net.history();
                Ok(Component::Mlp {
                    architecture: net.architecture().clone(),
                    best_epoch: net.best_epoch(),
                    epochs_run: history.len(),
                    final_train_loss: history.last().map(|h| h.train_loss),
                    best_val_loss: history.iter().map(|h| h.val_loss).reduce(f64::min),
                    scalers,
                    inputs: sm.inputs.clone(),
                    outputs: sm.outputs.clone(),
                    payload,
                })
            }
        }
    }

    fn stage(&mut self, prefix: &str, stage: &Stage) -> Result<Component> {
        match stage {
            Stage::Single(sm) => self.scaled(prefix, sm),
            Stage::Composite(c) => self.composite(prefix, c),
        }
    }

    fn composite(&mut self, prefix: &str, c: &MfComposite) -> Result<Component> {
        Ok(Component::MfComposite {
            lf: Box::new(self.stage(&format!("{prefix}lf."), &c.lf)?),
            mf: Box::new(self.scaled(&format!("{prefix}mf."), &c.mf)?),
        })
    }
}

fn next_version_dir(dir: &Path, project: &str) -> Result<(PathBuf, u32)> {
    if project.is_empty() || project.contains(['/', '\\']) || project.trim() != project {
        return Err(Error::InvalidParameter(format!("invalid project name `{project}`")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("{project}_v");
    let mut k = 1;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(v) = name.strip_prefix(&stem).and_then(|s| s.parse::<u32>().ok()) {
            k = k.max(v + 1);
        }
    }
    loop {
        let path = dir.join(format!("{stem}{k}"));
        match fs::create_dir(&path) {
            Ok(()) => return Ok((path, k)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
            Err(e) => return Err(Error::io(&path, e)),
        }
    }
}

/// Writes a new bundle version and returns its directory.
pub fn save_model(model: &StoredModel, dir: &Path, project: &str, opts: &SaveOptions) -> Result<PathBuf> {
    let (root, version) = next_version_dir(dir, project)?;
    let mut w = Writer {
        root: root.clone(),
        format: opts.payload,
        files: Vec::new(),
    };
    let component = match model {
        StoredModel::Single(sm) => w.scaled("", sm)?,
        StoredModel::Composite(c) => w.composite("", c)?,
    };
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        model_type: model.model_type().to_string(),
        project: project.to_string(),
        version,
        fidelity: opts.fidelity.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        payload_format: opts.payload,
        hyperparameters: model.hyperparameters(),
        training: opts.training.clone(),
        component,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    write_text(&root.join("meta.json"), &json)?;
    w.files.insert(0, "meta.json".to_string());

    let mut sums = String::new();
    for rel in &w.files {
        let bytes = fs::read(root.join(rel)).map_err(|e| Error::io(root.join(rel), e))?;
        sums.push_str(&format!("{}  {rel}\n", sha256_hex(&bytes)));
    }
    write_text(&root.join("CHECKSUMS"), sums)?;
    log::info!("saved {} bundle to {}", meta.model_type, root.display());
    Ok(root)
}

fn verify_checksums(root: &Path) -> Result<()> {
    let sums = read_text(&root.join("CHECKSUMS"))?;
    let mut saw_meta = false;
    for (lineno, line) in sums.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (hash, rel) = line
            .split_once("  ")
            .ok_or_else(|| Error::Bundle(format!("CHECKSUMS line {} is malformed", lineno + 1)))?;
        if rel.contains("..") || Path::new(rel).is_absolute() {
            return Err(Error::Bundle(format!("CHECKSUMS names a path outside the bundle: {rel}")));
        }
        saw_meta |= rel == "meta.json";
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != hash {
            return Err(Error::Checksum { file: rel.to_string() });
        }
    }
    if !saw_meta {
        return Err(Error::Bundle("CHECKSUMS does not cover meta.json".into()));
    }
    Ok(())
}

struct Reader<'a> {
    root: &'a Path,
}

impl Reader<'_> {
    fn get(&self, payload: &BTreeMap<String, String>, role: &str) -> Result<DMatrix<f64>> {
        let rel = payload
            .get(role)
            .ok_or_else(|| Error::Bundle(format!("payload `{role}` is missing from meta.json")))?;
        let path = self.root.join(rel);
        if rel.ends_with(".bin") {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            decode_binary(&bytes, rel)
        } else {
            let t = parse_tensor_text(&read_text(&path)?, &path)?;
            if t.l() != 1 {
                return Err(Error::Bundle(format!("{rel}: payload matrices must have l = 1")));
            }
            Ok(DMatrix::from_row_slice(t.n(), t.m(), t.values()))
        }
    }

    fn scalers(scalers: &ScalerPair, what: &str) -> Result<(StandardScaler, StandardScaler)> {
        match (&scalers.x, &scalers.y) {
            (Some(x), Some(y)) => Ok((x.clone(), y.clone())),
            _ => Err(Error::Bundle(format!("{what}: missing input or output scaler"))),
        }
    }

    fn scaled(&self, c: &Component) -> Result<ScaledModel> {
        match c {
            Component::Gpr {
                kernel,
                lml,
                jitter_used,
                scalers,
                inputs,
                outputs,
                payload,
            } => {
                let (xs, ys) = Self::scalers(scalers, "gpr component")?;
                let gp = GprModel::from_parts(
                    kernel.clone(),
                    self.get(payload, "x_train")?,
                    self.get(payload, "cholesky")?,
                    self.get(payload, "alpha")?,
                    *lml,
                    *jitter_used,
                )?;
                ScaledModel::new(Surrogate::Gpr(gp), xs, ys, inputs.clone(), outputs.clone())
            }
            Component::Mlp {
                architecture,
                scalers,
                inputs,
                outputs,
                payload,
                ..
            } => {
                let (xs, ys) = Self::scalers(scalers, "mlp component")?;
                let n_layers = architecture.layer_shapes().len();
                let layers = (0..n_layers)
                    .map(|k| {
                        let weights = self.get(payload, &format!("w{k}"))?;
                        let b = self.get(payload, &format!("b{k}"))?;
                        Ok(Dense {
                            weights,
                            bias: nalgebra::DVector::from_iterator(b.len(), b.iter().copied()),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let net = MlpModel::from_parts(architecture.clone(), layers)?;
                ScaledModel::new(Surrogate::Mlp(net), xs, ys, inputs.clone(), outputs.clone())
            }
            Component::MfComposite { .. } => Err(Error::Bundle("expected a single model, found a composite".into())),
        }
    }

    fn stage(&self, c: &Component) -> Result<Stage> {
        match c {
            Component::MfComposite { .. } => Ok(Stage::Composite(Box::new(self.composite(c)?))),
            _ => Ok(Stage::Single(self.scaled(c)?)),
        }
    }

    fn composite(&self, c: &Component) -> Result<MfComposite> {
        match c {
            Component::MfComposite { lf, mf } => MfComposite::new(self.stage(lf)?, self.scaled(mf)?),
            _ => Err(Error::Bundle("expected a composite".into())),
        }
    }
}

/// Verifies checksums and the format version, then rebuilds the model.
pub fn load_model(path: &Path) -> Result<LoadedBundle> {
    verify_checksums(path)?;
    let text = read_text(&path.join("meta.json"))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Bundle("meta.json has no format_version".into()))?;
    if found > FORMAT_VERSION as u64 || found == 0 {
        return Err(Error::FormatVersion {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            supported: FORMAT_VERSION,
        });
    }
    let meta: BundleMeta = serde_json::from_value(raw)?;
    let reader = Reader { root: path };
    let model = match &meta.component {
        Component::MfComposite { .. } => StoredModel::Composite(reader.composite(&meta.component)?),
        other => StoredModel::Single(reader.scaled(other)?),
    };
    if model.model_type() != meta.model_type {
        return Err(Error::Bundle(format!(
            "meta.json says `{}` but the component tree is `{}`",
            meta.model_type,
            model.model_type()
        )));
    }
    Ok(LoadedBundle { meta, model })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let back = decode_binary(&encode_binary(&m), "x").unwrap();
        assert_eq!(back, m);
        let mut bytes = encode_binary(&m);
        bytes.pop();
        assert!(decode_binary(&bytes, "x").is_err());
        assert!(decode_binary(b"NOPE0000000000000000000000", "x").is_err());
    }

    #[test]
    fn versions_increment() {
        let dir = tempfile::tempdir().unwrap();
        let (a, ka) = next_version_dir(dir.path(), "proj").unwrap();
        let (b, kb) = next_version_dir(dir.path(), "proj").unwrap();
        assert_eq!((ka, kb), (1, 2));
        assert!(a.ends_with("proj_v1") && b.ends_with("proj_v2"));
        assert!(next_version_dir(dir.path(), "a/b").is_err());
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
