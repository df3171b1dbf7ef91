//! Analytic low/high-fidelity function pairs and space-filling samplers.
//!
//! Built-in pairs:
//!
//! * `forrester` (d = 1, q = 1, x in [0, 1]):
//!   `f_hf(x) = (6x - 2)^2 sin(12x - 4)`,
//!   `f_lf(x) = 0.5 f_hf(x) + 10 (x - 0.5) - 5`.
//! * `linear` (d = 1, q = 1, x in [0, 1]): `f_hf(x) = x`, `f_lf(x) = 0.8 x + 0.1`.
//! * `trig4` (d = 4, q = 3, x in [0, 1]^4):
//!   `h1 = sin(2 pi x1) + 0.5 x2^2 + x3 x4`,
//!   `h2 = cos(pi x2) + x1 x3 + 0.3 x4`,
//!   `h3 = x1 + x2^2 - 0.5 sin(pi x3 x4)`,
//!   and `lf_k = 0.8 h_k + 0.2 (x1 - 0.5) - 0.1`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataTensor, FidelityDataset};
use crate::error::{Error, Result};
use crate::gpr::{gpr_fit, KernelSpec};
use crate::preprocess::StandardScaler;
use crate::rng::SeededRng;
use crate::surrogate::{Layout, ScaledModel, Surrogate};

type PointFn = fn(&[f64]) -> Vec<f64>;

#[derive(Clone)]
pub struct AnalyticPair {
    pub name: &'static str,
    pub bounds: Vec<(f64, f64)>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    hf: PointFn,
    lf: PointFn,
}

impl fmt::Debug for AnalyticPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticPair")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

fn names(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn forrester_hf(x: &[f64]) -> Vec<f64> {
    let t = 6.0 * x[0] - 2.0;
    vec![t * t * (12.0 * x[0] - 4.0).sin()]
}

fn forrester_lf(x: &[f64]) -> Vec<f64> {
    vec![0.5 * forrester_hf(x)[0] + 10.0 * (x[0] - 0.5) - 5.0]
}

fn trig4_hf(x: &[f64]) -> Vec<f64> {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    vec![
        (2.0 * PI * x1).sin() + 0.5 * x2 * x2 + x3 * x4,
        (PI * x2).cos() + x1 * x3 + 0.3 * x4,
        x1 + x2 * x2 - 0.5 * (PI * x3 * x4).sin(),
    ]
}

fn trig4_lf(x: &[f64]) -> Vec<f64> {
    trig4_hf(x).into_iter().map(|h| 0.8 * h + 0.2 * (x[0] - 0.5) - 0.1).collect()
}

impl AnalyticPair {
    pub fn forrester() -> Self {
        Self {
            name: "forrester",
            bounds: vec![(0.0, 1.0)],
            input_names: names(&["x"]),
            output_names: names(&["y"]),
            hf: forrester_hf,
            lf: forrester_lf,
        }
    }

    pub fn linear() -> Self {
        Self {
            name: "linear",
            bounds: vec![(0.0, 1.0)],
            input_names: names(&["x"]),
            output_names: names(&["y"]),
            hf: |x| vec![x[0]],
            lf: |x| vec![0.8 * x[0] + 0.1],
        }
    }

    pub fn trig4() -> Self {
        Self {
            name: "trig4",
            bounds: vec![(0.0, 1.0); 4],
            input_names: names(&["x1", "x2", "x3", "x4"]),
            output_names: names(&["h1", "h2", "h3"]),
            hf: trig4_hf,
            lf: trig4_lf,
        }
    }

    pub fn all() -> Vec<Self> {
        vec![Self::forrester(), Self::linear(), Self::trig4()]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|p| p.name.eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| {
                Error::InvalidParameter(format!("unknown benchmark pair `{name}` (forrester, linear, trig4)"))
            })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn outputs(&self) -> usize {
        self.output_names.len()
    }

    fn evaluate_with(&self, f: PointFn, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Dimension {
                context: "benchmark inputs",
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        let mut out = DMatrix::zeros(x.nrows(), self.outputs());
        let mut warned = false;
        let mut row = vec![0.0; self.dim()];
        for i in 0..x.nrows() {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = x[(i, j)];
                let (lo, hi) = self.bounds[j];
                if !warned && !(lo..=hi).contains(slot) {
                    log::warn!("{} evaluated outside its bounds at row {i}", self.name);
                    warned = true;
                }
            }
            for (c, v) in f(&row).into_iter().enumerate() {
                out[(i, c)] = v;
            }
        }
        Ok(out)
    }

    /// Exact high-fidelity values at each row of `x`.
    pub fn truth_evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.evaluate_with(self.hf, x)
    }

    pub fn lf_evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.evaluate_with(self.lf, x)
    }

    pub fn hf_at(&self, x: &[f64]) -> Vec<f64> {
        (self.hf)(x)
    }

    pub fn lf_at(&self, x: &[f64]) -> Vec<f64> {
        (self.lf)(x)
    }
}

/// Input ranges of the aerodynamic coefficient table: angle of attack and
/// sideslip in degrees, altitude in km, Mach number.
pub fn coefficient_table_bounds() -> (Vec<String>, Vec<(f64, f64)>) {
    (
        names(&["alpha", "beta", "altitude", "mach"]),
        vec![(-20.0, 20.0), (0.0, 2.0), (0.0, 90.0), (1.2, 20.0)],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    LatinHypercube,
    UniformGrid,
    UniformRandom,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lhs" | "latin-hypercube" => Ok(SamplerKind::LatinHypercube),
            "grid" | "uniform-grid" => Ok(SamplerKind::UniformGrid),
            "random" | "uniform-random" => Ok(SamplerKind::UniformRandom),
            other => Err(Error::InvalidParameter(format!("unknown sampler `{other}`"))),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::LatinHypercube => "latin-hypercube",
            SamplerKind::UniformGrid => "uniform-grid",
            SamplerKind::UniformRandom => "uniform-random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub seed: u64,
}

impl Sampler {
    pub fn lhs(seed: u64) -> Self {
        Self {
            kind: SamplerKind::LatinHypercube,
            seed,
        }
    }

    pub fn grid() -> Self {
        Self {
            kind: SamplerKind::UniformGrid,
            seed: 0,
        }
    }

    pub fn random(seed: u64) -> Self {
        Self {
            kind: SamplerKind::UniformRandom,
            seed,
        }
    }
}

// Keeps jittered LHS points strictly inside their stratum after rounding.
const STRATUM_INTERIOR: f64 = 1.0 - 1e-9;

fn sample_stream(s: &Sampler, bounds: &[(f64, f64)], n: usize, stream: u64) -> Result<DMatrix<f64>> {
    if n == 0 || bounds.is_empty() {
        return Err(Error::InvalidParameter("need n >= 1 samples in d >= 1 dimensions".into()));
    }
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "degenerate bounds for dimension {j}: [{lo}, {hi}]"
            )));
        }
    }
    let d = bounds.len();
    let mut rng = SeededRng::derive(s.seed, stream);
    let mut unit = DMatrix::zeros(n, d);
    match s.kind {
        SamplerKind::LatinHypercube => {
            for j in 0..d {
                let strata = rng.permutation(n);
                for (i, k) in strata.into_iter().enumerate() {
                    unit[(i, j)] = (k as f64 + rng.unit() * STRATUM_INTERIOR) / n as f64;
                }
            }
        }
        SamplerKind::UniformRandom => {
            for i in 0..n {
                for j in 0..d {
                    unit[(i, j)] = rng.unit();
                }
            }
        }
        SamplerKind::UniformGrid => {
            let k = (n as f64).powf(1.0 / d as f64).round() as usize;
            if k.checked_pow(d as u32) != Some(n) {
                return Err(Error::InvalidParameter(format!(
                    "a uniform grid in {d} dimensions needs a perfect power point count, got {n}"
                )));
            }
            for i in 0..n {
                let mut rest = i;
                // Last dimension varies fastest.
                for j in (0..d).rev() {
                    let idx = rest % k;
                    rest /= k;
                    unit[(i, j)] = if k == 1 { 0.5 } else { idx as f64 / (k - 1) as f64 };
                }
            }
        }
    }
    Ok(DMatrix::from_fn(n, d, |i, j| {
        let (lo, hi) = bounds[j];
        (lo + (hi - lo) * unit[(i, j)]).clamp(lo, hi)
    }))
}

/// `n x d` design within `bounds`.
pub fn sample(s: &Sampler, bounds: &[(f64, f64)], n: usize) -> Result<DMatrix<f64>> {
    sample_stream(s, bounds, n, 0)
}

fn tensor(table: &DMatrix<f64>, names: &[String]) -> Result<DataTensor> {
    DataTensor::from_table(table)?.with_scalar_names(names.iter().cloned())
}

/// Independent designs for each fidelity, evaluated on the pair's functions.
/// Inputs are `(n, d, 1)` tensors and outputs `(n, q, 1)`.
pub fn generate_pair_dataset(
    pair: &AnalyticPair,
    n_lf: usize,
    n_hf: usize,
    sampler: &Sampler,
) -> Result<(FidelityDataset, FidelityDataset)> {
    if n_lf < n_hf {
        log::warn!("fewer low-fidelity ({n_lf}) than high-fidelity ({n_hf}) samples");
    }
    let x_lf = sample_stream(sampler, &pair.bounds, n_lf, 0)?;
    let x_hf = sample_stream(sampler, &pair.bounds, n_hf, 1)?;
    let note = format!("synthetic {} pair, {} design, seed {}", pair.name, sampler.kind, sampler.seed);
    let lf = FidelityDataset::new(
        "LF",
        tensor(&x_lf, &pair.input_names)?,
        tensor(&pair.lf_evaluate(&x_lf)?, &pair.output_names)?,
    )?
    .with_provenance(note.clone());
    let hf = FidelityDataset::new(
        "HF",
        tensor(&x_hf, &pair.input_names)?,
        tensor(&pair.truth_evaluate(&x_hf)?, &pair.output_names)?,
    )?
    .with_provenance(note);
    Ok((lf, hf))
}

/// `n` evenly spaced points per axis-aligned line through `bounds`, one
/// dimension only.
pub fn linspace(lo: f64, hi: f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

/// Fixed-hyperparameter GPR on `n` LHS points in `[0, 1]^4` with `q` smooth
/// outputs. Used for prediction-rate measurements.
pub fn throughput_gpr(n: usize, q: usize, seed: u64) -> Result<ScaledModel> {
    let d = 4;
    let x = sample(&Sampler::lhs(seed), &vec![(0.0, 1.0); d], n)?;
    let y = DMatrix::from_fn(n, q, |i, k| {
        let f = 1.0 + k as f64 / q.max(1) as f64;
        (3.0 * f * x[(i, 0)]).sin() + f * x[(i, 1)] * x[(i, 2)] - 0.5 * x[(i, 3)]
    });
    let xs = StandardScaler::fit(&x)?;
    let ys = StandardScaler::fit(&y)?;
    let gp = gpr_fit(&xs.transform(&x)?, &ys.transform(&y)?, &KernelSpec::rbf(0.5).with_noise(1e-6))?;
    ScaledModel::new(Surrogate::Gpr(gp), xs, ys, Layout::plain(d), Layout::plain(q))
}
