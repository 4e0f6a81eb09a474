//! Synthetic clean sequences.

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidbuf::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Gradient plus random texture moving right by one pixel per frame.
    Translate,
    /// The first frame of `translate`, repeated.
    Static,
}

/// `frames` frames of `channels x height x width`, values in [0, 1].
pub fn generate(pattern: Pattern, frames: usize, channels: usize, height: usize, width: usize, seed: u64) -> Vec<Tensor> {
    // A canvas wide enough to slide a width-W window across it T-1 times;
    // frame t starts T-1-t columns in, so content moves right over time.
    let span = width + frames.saturating_sub(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture: Vec<f32> = (0..channels * height * span).map(|_| rng.gen()).collect();
    let canvas = |c: usize, y: usize, x: usize| {
        let gx = x as f32 / span.max(2).saturating_sub(1) as f32;
        let gy = y as f32 / height.max(2).saturating_sub(1) as f32;
        let phase = c as f32 / channels as f32;
        let gradient = (gx + gy + phase) / 3.0;
        0.6 * gradient + 0.4 * texture[(c * height + y) * span + x]
    };
    (0..frames)
        .map(|t| {
            let start = match pattern {
                Pattern::Translate => frames - 1 - t,
                Pattern::Static => frames - 1,
            };
            Tensor::from_fn(channels, height, width, |c, y, x| canvas(c, y, start + x))
                .expect("pattern values are finite")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translates_one_pixel_per_frame() {
        let xs = generate(Pattern::Translate, 5, 3, 8, 12, 7);
        for t in 1..5 {
            for c in 0..3 {
                for y in 0..8 {
                    for x in 1..12 {
                        assert_eq!(xs[t].get(c, y, x), xs[t - 1].get(c, y, x - 1));
                    }
                }
            }
            assert!(!xs[t].bitwise_eq(&xs[t - 1]));
        }
        assert!(xs.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn deterministic_and_static() {
        let a = generate(Pattern::Translate, 3, 1, 4, 4, 1);
        assert_eq!(a, generate(Pattern::Translate, 3, 1, 4, 4, 1));
        assert_ne!(a, generate(Pattern::Translate, 3, 1, 4, 4, 2));
        let s = generate(Pattern::Static, 3, 1, 4, 4, 1);
        assert!(s.iter().all(|f| f.bitwise_eq(&s[0])));
    }
}
