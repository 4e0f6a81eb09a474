#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidbuf::model::{build_wnet, FusionLayout, FusionMode, ModelConfig};
use vidbuf::weights::{init_weights_with, InitScheme, Model};
use vidbuf::Tensor;

/// Small networks with `n` buffer blocks when run bidirectionally.
pub fn tiny(base: usize, n: usize, mode: FusionMode, seed: u64) -> Model {
    let (unets, layout) = match n {
        1 => (1, FusionLayout::Custom([0, 1, 0, 0, 0, 0])),
        2 => (2, FusionLayout::Pixel),
        4 => (1, FusionLayout::Custom([0, 1, 1, 1, 1, 0])),
        8 => (1, FusionLayout::Down),
        16 => (2, FusionLayout::Down),
        24 => (2, FusionLayout::DownPixel),
        _ => panic!("no tiny layout with {n} blocks"),
    };
    let cfg = ModelConfig {
        base_channels: base,
        input_channels: 3,
        fusion_mode: mode,
        unets,
        fusion_layout: layout,
        ..ModelConfig::default()
    };
    let net = build_wnet(&cfg).unwrap();
    let w = init_weights_with(&net, seed, InitScheme::HeUniformBiased);
    Model::new(net, w).unwrap()
}

pub fn frames(seed: u64, t: usize, c: usize, h: usize, w: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(0.0..1.0)).unwrap())
        .collect()
}

/// Copy of `xs` with frame `j` nudged.
pub fn perturb(xs: &[Tensor], j: usize) -> Vec<Tensor> {
    let mut out = xs.to_vec();
    out[j] = out[j].map(|v| v + 0.25).unwrap();
    out
}

pub fn changed(a: &[Tensor], b: &[Tensor]) -> Vec<usize> {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(_, (x, y))| !x.bitwise_eq(y))
        .map(|(i, _)| i)
        .collect()
}
