//! Synthetic degradations: additive white Gaussian noise and the
//! signal-dependent model with variance `a·x + b`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    /// Standard deviation on the 0–255 scale.
    Awgn { sigma: f32 },
    /// Per-pixel variance `a·x + b` with intensities on [0, 1].
    Heteroscedastic { a: f32, b: f32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn awgn(sigma: f32, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Awgn { sigma },
            seed,
        }
    }

    pub fn heteroscedastic(a: f32, b: f32, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Heteroscedastic { a, b },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::Awgn { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                config(format!("noise sigma must be non-negative, got {sigma}"))
            }
            NoiseKind::Heteroscedastic { a, b }
                if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) =>
            {
                config(format!("noise parameters must be non-negative, got a={a} b={b}"))
            }
            // Variance at unit intensity above 1 is never a plausible sensor.
            NoiseKind::Heteroscedastic { a, b } if a + b > 1.0 => {
                config(format!("noise variance a+b={} exceeds 1 at full intensity", a + b))
            }
            _ => Ok(()),
        }
    }

    fn std_at(&self, x: f32) -> f64 {
        match self.kind {
            NoiseKind::Awgn { sigma } => f64::from(sigma) / 255.0,
            NoiseKind::Heteroscedastic { a, b } => (f64::from(a) * f64::from(x) + f64::from(b)).sqrt(),
        }
    }
}

/// Standard normal variates by the Box–Muller transform over a seeded
/// ChaCha8 stream; both variates of each pair are used.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        self.spare = Some(r * (TAU * u2).sin());
        r * (TAU * u2).cos()
    }
}

/// Adds noise to every frame and clamps to [0, 1]. Frames are visited in
/// order, pixels in storage order, so the result depends only on the
/// inputs and `spec`.
pub fn add_noise(frames: &[Tensor], spec: &NoiseSpec) -> Result<Vec<Tensor>> {
    spec.validate()?;
    if frames
        .iter()
        .any(|f| f.data().iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return config("clean intensities must lie in [0, 1]");
    }
    let mut gauss = GaussianSampler::new(spec.seed);
    frames
        .iter()
        .map(|f| {
            let (c, h, w) = f.dims();
            let data = f
                .data()
                .iter()
                .map(|&x| {
                    let z = gauss.sample();
                    let std = spec.std_at(x);
                    if std == 0.0 {
                        x
                    } else {
                        (f64::from(x) + std * z).clamp(0.0, 1.0) as f32
                    }
                })
                .collect();
            Tensor::new(c, h, w, data)
        })
        .collect()
}
