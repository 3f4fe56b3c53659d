//! Factorized task-parameter spaces and the per-dimension distributions
//! placed over them.
//!
//! Continuous dimensions are modelled by a Gaussian over an unbounded
//! pre-image `u`, squashed into `[lower, upper]` through
//! `lower + (upper − lower)·(tanh(u) + 1)/2`. Densities include the
//! change-of-variables term; entropies are those of the pre-squash Gaussian.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::f64::consts::{E, PI};

use crate::error::{Result, SlideError};
use crate::nn::log_softmax;

/// Default clamp on continuous-head log standard deviations.
pub const LOG_STD_BOUNDS: (f64, f64) = (-5.0, 2.0);

/// Pre-squash log-std whose tanh image is closest to uniform in
/// Kolmogorov distance (σ ≈ 0.851, sup-distance ≈ 0.0095).
pub const UNIFORM_LOG_STD: f64 = -0.161_494_348;

/// `0.5·ln(2πe)`: differential entropy of a unit Gaussian.
pub const GAUSSIAN_ENTROPY_CONST: f64 = 1.418_938_533_204_672_7;

/// How close the squashed pre-image may get to ±1 when inverting.
const SQUASH_EDGE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    Discrete { cardinality: usize },
    Continuous { lower: f64, upper: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamSpecRecord", into = "ParamSpecRecord")]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

/// Flat key-value form used in config files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamSpecRecord {
    name: String,
    kind: String,
    #[serde(default)]
    cardinality: Option<usize>,
    #[serde(default)]
    lower: Option<f64>,
    #[serde(default)]
    upper: Option<f64>,
}

impl TryFrom<ParamSpecRecord> for ParamSpec {
    type Error = SlideError;

    fn try_from(r: ParamSpecRecord) -> Result<Self> {
        let kind = match (r.kind.as_str(), r.cardinality, r.lower, r.upper) {
            ("discrete", Some(cardinality), None, None) => ParamKind::Discrete { cardinality },
            ("continuous", None, Some(lower), Some(upper)) => ParamKind::Continuous { lower, upper },
            ("discrete", ..) => {
                return Err(SlideError::structural(
                    r.name,
                    "discrete parameters take exactly `cardinality`",
                ))
            }
            ("continuous", ..) => {
                return Err(SlideError::structural(
                    r.name,
                    "continuous parameters take exactly `lower` and `upper`",
                ))
            }
            (other, ..) => {
                return Err(SlideError::structural(
                    r.name,
                    format!("unknown kind `{other}` (expected discrete or continuous)"),
                ))
            }
        };
        ParamSpec::new(r.name, kind)
    }
}

impl From<ParamSpec> for ParamSpecRecord {
    fn from(p: ParamSpec) -> Self {
        match p.kind {
            ParamKind::Discrete { cardinality } => ParamSpecRecord {
                name: p.name,
                kind: "discrete".into(),
                cardinality: Some(cardinality),
                lower: None,
                upper: None,
            },
            ParamKind::Continuous { lower, upper } => ParamSpecRecord {
                name: p.name,
                kind: "continuous".into(),
                cardinality: None,
                lower: Some(lower),
                upper: Some(upper),
            },
        }
    }
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, kind: ParamKind) -> Result<Self> {
        let name = name.into();
        match kind {
            ParamKind::Discrete { cardinality } if cardinality < 2 => {
                return Err(SlideError::structural(name, "cardinality must be at least 2"))
            }
            ParamKind::Continuous { lower, upper }
                if !(lower.is_finite() && upper.is_finite() && lower < upper) =>
            {
                return Err(SlideError::structural(
                    name,
                    "continuous bounds must be finite with lower < upper",
                ))
            }
            _ => {}
        }
        Ok(ParamSpec { name, kind })
    }

    pub fn discrete(name: &str, cardinality: usize) -> Result<Self> {
        Self::new(name, ParamKind::Discrete { cardinality })
    }

    pub fn continuous(name: &str, lower: f64, upper: f64) -> Result<Self> {
        Self::new(name, ParamKind::Continuous { lower, upper })
    }

    /// Number of distribution-head parameters this dimension needs.
    pub fn head_arity(&self) -> usize {
        match self.kind {
            ParamKind::Discrete { cardinality } => cardinality,
            ParamKind::Continuous { .. } => 2,
        }
    }

    fn check_value(&self, v: f64) -> Result<()> {
        match self.kind {
            ParamKind::Discrete { cardinality } => {
                if v.fract() != 0.0 || v < 0.0 || v >= cardinality as f64 {
                    return Err(SlideError::Domain(format!(
                        "`{}` = {v} is not a category index below {cardinality}",
                        self.name
                    )));
                }
            }
            ParamKind::Continuous { lower, upper } => {
                if !(v >= lower && v <= upper) {
                    return Err(SlideError::Domain(format!(
                        "`{}` = {v} outside [{lower}, {upper}]",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered list of independent task-parameter dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "Vec<ParamSpec>", into = "Vec<ParamSpec>")]
pub struct TaskParamSpec {
    params: Vec<ParamSpec>,
}

impl TryFrom<Vec<ParamSpec>> for TaskParamSpec {
    type Error = SlideError;

    fn try_from(params: Vec<ParamSpec>) -> Result<Self> {
        TaskParamSpec::new(params)
    }
}

impl From<TaskParamSpec> for Vec<ParamSpec> {
    fn from(s: TaskParamSpec) -> Self {
        s.params
    }
}

impl TaskParamSpec {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(SlideError::structural(&p.name, "duplicate parameter name"));
            }
        }
        Ok(TaskParamSpec { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn head_arity(&self) -> usize {
        self.params.iter().map(ParamSpec::head_arity).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// A concrete assignment `w`. Discrete entries hold category indices as
/// integral floats so the whole vector logs as a flat numeric array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskParams {
    pub values: Vec<f64>,
}

impl TaskParams {
    pub fn new(values: Vec<f64>) -> Self {
        TaskParams { values }
    }

    pub fn validate(&self, spec: &TaskParamSpec) -> Result<()> {
        if self.values.len() != spec.len() {
            return Err(SlideError::Domain(format!(
                "expected {} task parameters, got {}",
                spec.len(),
                self.values.len()
            )));
        }
        for (p, &v) in spec.params().iter().zip(&self.values) {
            p.check_value(v)?;
        }
        Ok(())
    }

    pub fn category(&self, i: usize) -> usize {
        self.values[i] as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(SlideError::Domain("task parameter bytes not a multiple of 8".into()));
        }
        Ok(TaskParams {
            values: bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

/// Distribution head for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Categorical { logits: Vec<f64> },
    Gaussian { mean: f64, log_std: f64 },
}

impl Head {
    pub fn entropy(&self) -> f64 {
        match self {
            Head::Categorical { logits } => {
                let lp = log_softmax(logits);
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            }
            Head::Gaussian { log_std, .. } => GAUSSIAN_ENTROPY_CONST + log_std,
        }
    }
}

pub fn squash(u: f64, lower: f64, upper: f64) -> f64 {
    let x = lower + (upper - lower) * 0.5 * (u.tanh() + 1.0);
    x.clamp(lower, upper)
}

/// Inverse of [`squash`], with the tanh image kept off ±1 so the result is
/// finite. Returns `(u, tanh(u))`.
pub fn unsquash(x: f64, lower: f64, upper: f64) -> (f64, f64) {
    let y = (2.0 * (x - lower) / (upper - lower) - 1.0).clamp(-1.0 + SQUASH_EDGE, 1.0 - SQUASH_EDGE);
    (y.atanh(), y)
}

/// Factorized distribution `g(w)` conforming to a [`TaskParamSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedDistribution {
    spec: TaskParamSpec,
    heads: Vec<Head>,
}

impl FactorizedDistribution {
    /// Validates head arity against `spec`; log-stds are clamped to
    /// [`LOG_STD_BOUNDS`].
    pub fn new(spec: &TaskParamSpec, heads: Vec<Head>) -> Result<Self> {
        Self::with_log_std_bounds(spec, heads, LOG_STD_BOUNDS)
    }

    pub fn with_log_std_bounds(
        spec: &TaskParamSpec,
        mut heads: Vec<Head>,
        (lo, hi): (f64, f64),
    ) -> Result<Self> {
        if heads.len() != spec.len() {
            return Err(SlideError::structural(
                "<distribution>",
                format!("{} heads for {} parameters", heads.len(), spec.len()),
            ));
        }
        for (p, head) in spec.params().iter().zip(heads.iter_mut()) {
            match (&p.kind, head) {
                (ParamKind::Discrete { cardinality }, Head::Categorical { logits }) => {
                    if logits.len() != *cardinality {
                        return Err(SlideError::structural(
                            &p.name,
                            format!("{} logits for cardinality {cardinality}", logits.len()),
                        ));
                    }
                    if !logits.iter().all(|l| l.is_finite()) {
                        return Err(SlideError::structural(&p.name, "non-finite logit"));
                    }
                }
                (ParamKind::Continuous { .. }, Head::Gaussian { mean, log_std }) => {
                    if !mean.is_finite() || log_std.is_nan() {
                        return Err(SlideError::structural(&p.name, "non-finite Gaussian head"));
                    }
                    *log_std = log_std.clamp(lo, hi);
                }
                _ => return Err(SlideError::structural(&p.name, "head kind does not match parameter kind")),
            }
        }
        Ok(FactorizedDistribution {
            spec: spec.clone(),
            heads,
        })
    }

    pub fn spec(&self) -> &TaskParamSpec {
        &self.spec
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TaskParams {
        let values = self
            .spec
            .params()
            .iter()
            .zip(&self.heads)
            .map(|(p, head)| match (&p.kind, head) {
                (ParamKind::Discrete { .. }, Head::Categorical { logits }) => {
                    sample_categorical(logits, rng) as f64
                }
                (ParamKind::Continuous { lower, upper }, Head::Gaussian { mean, log_std }) => {
                    let eps: f64 = StandardNormal.sample(rng);
                    squash(mean + log_std.exp() * eps, *lower, *upper)
                }
                _ => unreachable!("validated at construction"),
            })
            .collect();
        TaskParams { values }
    }

    /// Per-dimension log mass / log density of `w`.
    pub fn log_prob_terms(&self, w: &TaskParams) -> Result<Vec<f64>> {
        w.validate(&self.spec)?;
        Ok(self
            .spec
            .params()
            .iter()
            .zip(&self.heads)
            .zip(&w.values)
            .map(|((p, head), &v)| match (&p.kind, head) {
                (ParamKind::Discrete { .. }, Head::Categorical { logits }) => log_softmax(logits)[v as usize],
                (ParamKind::Continuous { lower, upper }, Head::Gaussian { mean, log_std }) => {
                    squashed_log_density(v, *mean, *log_std, *lower, *upper)
                }
                _ => unreachable!("validated at construction"),
            })
            .collect())
    }

    pub fn log_prob(&self, w: &TaskParams) -> Result<f64> {
        Ok(self.log_prob_terms(w)?.iter().sum())
    }

    /// Σ of per-dimension analytic entropies (nats; pre-squash for continuous).
    pub fn entropy(&self) -> f64 {
        self.heads.iter().map(Head::entropy).sum()
    }

    /// Gradient of `log_prob(w)` w.r.t. the flattened head parameters
    /// (logits, or `[mean, log_std]`), in spec order.
    pub fn log_prob_grad(&self, w: &TaskParams) -> Result<Vec<f64>> {
        w.validate(&self.spec)?;
        let mut grad = Vec::with_capacity(self.spec.head_arity());
        for ((p, head), &v) in self.spec.params().iter().zip(&self.heads).zip(&w.values) {
            match (&p.kind, head) {
                (ParamKind::Discrete { .. }, Head::Categorical { logits }) => {
                    let probs: Vec<f64> = log_softmax(logits).into_iter().map(f64::exp).collect();
                    let k = v as usize;
                    grad.extend(probs.iter().enumerate().map(|(i, p)| if i == k { 1.0 - p } else { -p }));
                }
                (ParamKind::Continuous { lower, upper }, Head::Gaussian { mean, log_std }) => {
                    let (u, _) = unsquash(v, *lower, *upper);
                    let z = (u - mean) / log_std.exp();
                    grad.push(z / log_std.exp());
                    grad.push(z * z - 1.0);
                }
                _ => unreachable!(),
            }
        }
        Ok(grad)
    }

    /// Gradient of [`Self::entropy`] w.r.t. the flattened head parameters.
    pub fn entropy_grad(&self) -> Vec<f64> {
        let mut grad = Vec::with_capacity(self.spec.head_arity());
        for head in &self.heads {
            match head {
                Head::Categorical { logits } => {
                    let lp = log_softmax(logits);
                    let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
                    grad.extend(lp.iter().map(|l| -l.exp() * (l + h)));
                }
                Head::Gaussian { .. } => {
                    grad.push(0.0);
                    grad.push(1.0);
                }
            }
        }
        grad
    }

    /// Most likely categories and squashed means.
    pub fn mode(&self) -> TaskParams {
        let values = self
            .spec
            .params()
            .iter()
            .zip(&self.heads)
            .map(|(p, head)| match (&p.kind, head) {
                (ParamKind::Discrete { .. }, Head::Categorical { logits }) => logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
                    .0 as f64,
                (ParamKind::Continuous { lower, upper }, Head::Gaussian { mean, .. }) => squash(*mean, *lower, *upper),
                _ => unreachable!(),
            })
            .collect();
        TaskParams { values }
    }
}

fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs: Vec<f64> = log_softmax(logits).into_iter().map(f64::exp).collect();
    let mut r: f64 = rng.random::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if r < *p {
            return i;
        }
        r -= p;
    }
    probs.len() - 1
}

/// Log density of the squashed Gaussian at `x ∈ [lower, upper]`.
pub fn squashed_log_density(x: f64, mean: f64, log_std: f64, lower: f64, upper: f64) -> f64 {
    let (u, y) = unsquash(x, lower, upper);
    let z = (u - mean) / log_std.exp();
    let gaussian = -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln();
    let jacobian = (0.5 * (upper - lower) * (1.0 - y * y)).ln();
    gaussian - jacobian
}

/// Zero logits and near-uniform squashed Gaussians: the skill-independent
/// sampler used by the uniform-task baseline.
pub fn uniform_distribution(spec: &TaskParamSpec) -> FactorizedDistribution {
    let heads = spec
        .params()
        .iter()
        .map(|p| match p.kind {
            ParamKind::Discrete { cardinality } => Head::Categorical {
                logits: vec![0.0; cardinality],
            },
            ParamKind::Continuous { .. } => Head::Gaussian {
                mean: 0.0,
                log_std: UNIFORM_LOG_STD,
            },
        })
        .collect();
    FactorizedDistribution::new(spec, heads).expect("uniform heads conform by construction")
}

/// `0.5·ln(2πe·σ²)`, spelled out for callers that think in σ.
pub fn gaussian_entropy(std: f64) -> f64 {
    0.5 * (2.0 * PI * E * std * std).ln()
}
