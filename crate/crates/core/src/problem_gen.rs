//! Seeded generation of the three benchmark families.
//!
//! Every trial has one root seed. Each sub-generator draws from its own
//! ChaCha20 stream selected by a fixed label, so the sensing matrix does not
//! depend on how many noise samples were drawn and vice versa.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BoxBounds, LossModel, SquaredRatioModel};

/// Name recorded in configs and instance files for the generator in use.
pub const RNG_NAME: &str = "chacha20";

/// Stream labels for the sub-generators of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Matrix = 1,
    Signal = 2,
    Noise = 3,
    Impulse = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// Gaussian sensing, Gaussian plus impulsive noise, trimmed quadratic loss.
    RobustCs { scale: u32 },
    /// Gaussian sensing, Cauchy noise, Lorentzian loss.
    Cauchy { scale: u32 },
    /// Random-frequency cosine sensing, dynamic-range signal, quadratic loss.
    GaussianDct { sparsity: usize, coherence: f64, dynamic_range: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::RobustCs { .. } => "robust",
            Family::Cauchy { .. } => "cauchy",
            Family::GaussianDct { .. } => "dct",
        }
    }

    /// Parameter string used in reports, e.g. `i=2` or `K=8,F=5,D=2`.
    pub fn params_label(&self) -> String {
        match self {
            Family::RobustCs { scale } | Family::Cauchy { scale } => format!("i={scale}"),
            Family::GaussianDct {
                sparsity,
                coherence,
                dynamic_range,
            } => format!("K={sparsity},F={coherence},D={dynamic_range}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::RobustCs { scale } | Family::Cauchy { scale } if scale == 0 => {
                Err(Error::InvalidArgument("family scale must be a positive integer".into()))
            }
            Family::GaussianDct {
                sparsity,
                coherence,
                dynamic_range,
            } => {
                if sparsity == 0 || sparsity > DCT_N {
                    Err(Error::InvalidArgument(format!("sparsity {sparsity} out of range 1..={DCT_N}")))
                } else if !(coherence > 0.0) {
                    Err(Error::InvalidArgument(format!("coherence parameter must be positive, got {coherence}")))
                } else if !(dynamic_range > 0.0) {
                    Err(Error::InvalidArgument(format!("dynamic range must be positive, got {dynamic_range}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

const DCT_N: usize = 1024;
const DCT_M: usize = 64;

/// Problem dimensions implied by a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    /// Total number of measurements.
    pub m: usize,
    pub sparsity: usize,
    /// Impulsive entries (robust family only).
    pub impulses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    #[serde(flatten)]
    pub family: Family,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self { family, seed }
    }

    pub fn dims(&self) -> Dims {
        match self.family {
            Family::RobustCs { scale } => {
                let i = scale as usize;
                Dims {
                    n: 2560 * i,
                    m: 720 * i + 10 * i,
                    sparsity: 80 * i,
                    impulses: 10 * i,
                }
            }
            Family::Cauchy { scale } => {
                let i = scale as usize;
                Dims {
                    n: 2060 * i,
                    m: 720 * i,
                    sparsity: 80 * i,
                    impulses: 0,
                }
            }
            Family::GaussianDct { sparsity, .. } => Dims {
                n: DCT_N,
                m: DCT_M,
                sparsity,
                impulses: 0,
            },
        }
    }

    pub fn generate(&self) -> Result<GeneratedInstance> {
        self.generate_with(NoiseLevels::default())
    }

    pub fn generate_with(&self, noise: NoiseLevels) -> Result<GeneratedInstance> {
        self.family.validate()?;
        match self.family {
            Family::RobustCs { scale } => gen_robust_instance_with(scale, self.seed, noise),
            Family::Cauchy { scale } => gen_cauchy_instance_with(scale, self.seed, noise),
            Family::GaussianDct {
                sparsity,
                coherence,
                dynamic_range,
            } => gen_gaussian_dct_instance_with(sparsity, coherence, dynamic_range, self.seed, noise),
        }
    }
}

/// Noise magnitudes; the defaults are the benchmark protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    /// Multiplier on the dense (Gaussian or Cauchy) noise.
    pub dense: f64,
    /// Magnitude of the impulsive entries (robust family).
    pub impulse: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            dense: 0.01,
            impulse: 2.0,
        }
    }
}

impl NoiseLevels {
    pub fn none() -> Self {
        Self {
            dense: 0.0,
            impulse: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub spec: GenSpec,
    pub model: SquaredRatioModel,
    pub x_true: DVector<f64>,
    /// `b - A x_true`.
    pub noise: DVector<f64>,
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// i.i.d. standard Gaussian `m x n` matrix with unit-norm columns.
pub fn gen_gaussian_sensing(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, Stream::Matrix);
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..n {
        let start = data.len();
        data.extend((0..m).map(|_| normal(&mut rng)));
        let col = &mut data[start..];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v /= norm);
        }
    }
    DMatrix::from_vec(m, n, data)
}

/// Columns `a_j = cos(2 pi omega j / coherence) / sqrt(m)`, `j = 1..n`, with
/// `omega` uniform on `[0, 1]^m`.
pub fn gen_dct_sensing(m: usize, n: usize, coherence: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, Stream::Matrix);
    let omega: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let scale = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, n, |i, j| scale * (2.0 * PI * omega[i] * (j + 1) as f64 / coherence).cos())
}

fn random_support(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// `k` standard Gaussian entries at uniformly random positions.
pub fn gen_sparse_signal(n: usize, k: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Signal);
    let mut x = DVector::zeros(n);
    for j in random_support(&mut rng, n, k.min(n)) {
        x[j] = normal(&mut rng);
    }
    x
}

/// `k` entries `±10^(D u)`, `u` uniform on `[0, 1]`, random sign.
pub fn gen_dynamic_range_signal(n: usize, k: usize, dynamic_range: f64, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Signal);
    let mut x = DVector::zeros(n);
    for j in random_support(&mut rng, n, k.min(n)) {
        let sign = if normal(&mut rng) < 0.0 { -1.0 } else { 1.0 };
        let u: f64 = rng.random();
        x[j] = sign * 10f64.powf(dynamic_range * u);
    }
    x
}

/// `tan(pi (u - 1/2))` with `u` uniform on `[0, 1)`.
pub fn cauchy_transform(u: f64) -> f64 {
    (PI * (u - 0.5)).tan()
}

pub fn gen_cauchy_noise(m: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Noise);
    DVector::from_fn(m, |_, _| cauchy_transform(rng.random::<f64>()))
}

pub fn gen_gaussian_noise(m: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Noise);
    DVector::from_fn(m, |_, _| normal(&mut rng))
}

/// Impulsive vector: zero on the first `m - d` entries, `magnitude * sign(N(0,1))`
/// on the last `d`.
pub fn gen_impulses(m: usize, d: usize, magnitude: f64, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Impulse);
    let mut z = DVector::zeros(m);
    for i in (m - d)..m {
        let s = if normal(&mut rng) < 0.0 { -1.0 } else { 1.0 };
        z[i] = magnitude * s;
    }
    z
}

fn measure(a: &DMatrix<f64>, x: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
    let mut b = noise.clone();
    b.gemv(1.0, a, x, 1.0);
    b
}

pub fn gen_robust_instance(scale: u32, seed: u64) -> Result<GeneratedInstance> {
    gen_robust_instance_with(scale, seed, NoiseLevels::default())
}

/// `b = A x - z + dense * eps`, `lambda = 0.01`, outlier count `2d`.
pub fn gen_robust_instance_with(scale: u32, seed: u64, levels: NoiseLevels) -> Result<GeneratedInstance> {
    let spec = GenSpec::new(Family::RobustCs { scale }, seed);
    spec.family.validate()?;
    let dims = spec.dims();
    let a = gen_gaussian_sensing(dims.m, dims.n, seed);
    let x_true = gen_sparse_signal(dims.n, dims.sparsity, seed);
    let z = gen_impulses(dims.m, dims.impulses, levels.impulse, seed);
    let eps = gen_gaussian_noise(dims.m, seed);
    let noise = eps * levels.dense - z;
    let b = measure(&a, &x_true, &noise);
    let model = SquaredRatioModel::new(
        a,
        b,
        0.01,
        BoxBounds::unbounded(dims.n),
        LossModel::RobustDistance {
            outlier_count: 2 * dims.impulses,
        },
    )?;
    Ok(GeneratedInstance {
        spec,
        model,
        x_true,
        noise,
    })
}

pub fn gen_cauchy_instance(scale: u32, seed: u64) -> Result<GeneratedInstance> {
    gen_cauchy_instance_with(scale, seed, NoiseLevels::default())
}

/// `b = A x + dense * eps` with Cauchy `eps`, `gamma = 0.02`, `lambda = 40`.
pub fn gen_cauchy_instance_with(scale: u32, seed: u64, levels: NoiseLevels) -> Result<GeneratedInstance> {
    let spec = GenSpec::new(Family::Cauchy { scale }, seed);
    spec.family.validate()?;
    let dims = spec.dims();
    let a = gen_gaussian_sensing(dims.m, dims.n, seed);
    let x_true = gen_sparse_signal(dims.n, dims.sparsity, seed);
    let noise = gen_cauchy_noise(dims.m, seed) * levels.dense;
    let b = measure(&a, &x_true, &noise);
    let model = SquaredRatioModel::new(
        a,
        b,
        40.0,
        BoxBounds::unbounded(dims.n),
        LossModel::Lorentzian { gamma: 0.02 },
    )?;
    Ok(GeneratedInstance {
        spec,
        model,
        x_true,
        noise,
    })
}

pub fn gen_gaussian_dct_instance(
    sparsity: usize,
    coherence: f64,
    dynamic_range: f64,
    seed: u64,
) -> Result<GeneratedInstance> {
    gen_gaussian_dct_instance_with(sparsity, coherence, dynamic_range, seed, NoiseLevels::default())
}

/// `b = A x + dense * eps` with Gaussian `eps`, quadratic loss, `lambda = 0.4`.
pub fn gen_gaussian_dct_instance_with(
    sparsity: usize,
    coherence: f64,
    dynamic_range: f64,
    seed: u64,
    levels: NoiseLevels,
) -> Result<GeneratedInstance> {
    let spec = GenSpec::new(
        Family::GaussianDct {
            sparsity,
            coherence,
            dynamic_range,
        },
        seed,
    );
    spec.family.validate()?;
    let dims = spec.dims();
    let a = gen_dct_sensing(dims.m, dims.n, coherence, seed);
    let x_true = gen_dynamic_range_signal(dims.n, sparsity, dynamic_range, seed);
    let noise = gen_gaussian_noise(dims.m, seed) * levels.dense;
    let b = measure(&a, &x_true, &noise);
    let model = SquaredRatioModel::new(a, b, 0.4, BoxBounds::unbounded(dims.n), LossModel::Quadratic)?;
    Ok(GeneratedInstance {
        spec,
        model,
        x_true,
        noise,
    })
}
