//! Convolution weight storage, seeded initialization and the binary weight
//! file.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic    "BSVDWGT1"            8 bytes
//! version  u32 = 1
//! count    u32                   number of tensors
//! repeated count times:
//!   name_len u16, name (UTF-8), rank u8, dims u32 x rank, data f32 x prod(dims)
//! ```
//!
//! Each convolution `name` is stored as two tensors, `name.weight` with dims
//! `[out, in, k, k]` and `name.bias` with dims `[out]`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};
use crate::model::{ConvSpec, NetDef};
use crate::tensor::ConvWeights;

pub const WEIGHT_MAGIC: &[u8; 8] = b"BSVDWGT1";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    convs: BTreeMap<String, ConvWeights>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, w: ConvWeights) {
        self.convs.insert(name.into(), w);
    }

    pub fn get(&self, name: &str) -> Option<&ConvWeights> {
        self.convs.get(name)
    }

    /// Weights for a conv stage, or an `IncompleteStore` error naming it.
    pub fn conv(&self, name: &str) -> Result<&ConvWeights> {
        self.convs.get(name).ok_or_else(|| Error::IncompleteStore {
            stage: name.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.convs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.convs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConvWeights)> {
        self.convs.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of stored parameters.
    pub fn parameter_count(&self) -> usize {
        self.convs
            .values()
            .map(|w| w.kernel().len() + w.bias().len())
            .sum()
    }

    /// Checks that every conv of `net` has weights of the right shape and
    /// stride, and that nothing else is stored.
    pub fn check_against(&self, net: &NetDef) -> Result<()> {
        let mut expected = 0;
        for spec in net.convs() {
            expected += 1;
            let w = self.conv(&spec.name)?;
            let want = spec_dims(spec);
            if w.kernel_dims() != want {
                return Err(Error::DimMismatch {
                    name: spec.name.clone(),
                    expected: want.to_vec(),
                    found: w.kernel_dims().to_vec(),
                });
            }
            if w.stride() != spec.stride || w.padding() != spec.kernel_size / 2 {
                return config(format!(
                    "conv `{}` has stride {} / padding {}, network expects {} / {}",
                    spec.name,
                    w.stride(),
                    w.padding(),
                    spec.stride,
                    spec.kernel_size / 2
                ));
            }
        }
        if self.convs.len() != expected {
            let extra = self
                .convs
                .keys()
                .find(|k| !net.convs().any(|c| &c.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Format {
                what: "weight store",
                detail: format!("tensor `{extra}` does not belong to the network"),
            });
        }
        Ok(())
    }
}

fn spec_dims(spec: &ConvSpec) -> [usize; 4] {
    [
        spec.out_channels,
        spec.in_channels,
        spec.kernel_size,
        spec.kernel_size,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / fan_in)`, zero biases.
    HeUniform,
    /// As `HeUniform`, with biases uniform in `±0.1`.
    HeUniformBiased,
    /// All kernels zero, every bias set to the given value.
    ZeroWeights { bias: f32 },
}

/// Seeded He-uniform initialization with zero biases.
pub fn init_weights(net: &NetDef, seed: u64) -> WeightStore {
    init_weights_with(net, seed, InitScheme::HeUniform)
}

/// Deterministic initialization. Values come from a ChaCha8 stream seeded
/// with `seed`, consumed conv by conv in stage order (kernel entries first,
/// then biases); `rng.gen::<f32>()` maps to `[-bound, bound)`.
pub fn init_weights_with(net: &NetDef, seed: u64, scheme: InitScheme) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in net.convs() {
        let fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size;
        let n = spec.out_channels * fan_in;
        let (kernel, bias) = match scheme {
            InitScheme::ZeroWeights { bias } => (vec![0.0; n], vec![bias; spec.out_channels]),
            InitScheme::HeUniform | InitScheme::HeUniformBiased => {
                let bound = (6.0 / fan_in as f32).sqrt();
                let kernel = (0..n)
                    .map(|_| (2.0 * rng.gen::<f32>() - 1.0) * bound)
                    .collect();
                let bias = if scheme == InitScheme::HeUniformBiased {
                    (0..spec.out_channels)
                        .map(|_| (2.0 * rng.gen::<f32>() - 1.0) * 0.1)
                        .collect()
                } else {
                    vec![0.0; spec.out_channels]
                };
                (kernel, bias)
            }
        };
        let w = ConvWeights::new(
            spec.out_channels,
            spec.in_channels,
            spec.kernel_size,
            spec.stride,
            kernel,
            bias,
        )
        .expect("initializer produces consistent shapes");
        store.insert(spec.name.clone(), w);
    }
    store
}

pub fn write_weights(store: &WeightStore, mut out: impl Write) -> Result<()> {
    out.write_all(WEIGHT_MAGIC)?;
    out.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    out.write_all(&(2 * store.len() as u32).to_le_bytes())?;
    for (name, w) in store.iter() {
        write_tensor(&mut out, &format!("{name}.weight"), &w.kernel_dims(), w.kernel())?;
        write_tensor(&mut out, &format!("{name}.bias"), &[w.out_channels()], w.bias())?;
    }
    out.flush()?;
    Ok(())
}

fn write_tensor(out: &mut impl Write, name: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Config(format!("tensor name `{name}` too long")))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[dims.len() as u8])?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    write_weights(store, BufWriter::new(File::create(path)?))
}

struct RawTensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn read_exact_or_truncated(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated("weight file"),
        _ => Error::Io(e),
    })
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_raw(mut input: impl Read) -> Result<BTreeMap<String, RawTensor>> {
    let mut magic = [0u8; 8];
    read_exact_or_truncated(&mut input, &mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::BadMagic {
            what: "weight file",
            expected: "BSVDWGT1",
        });
    }
    let version = read_u32(&mut input)?;
    if version != WEIGHT_VERSION {
        return Err(Error::Version {
            what: "weight file",
            found: version,
            expected: WEIGHT_VERSION,
        });
    }
    let count = read_u32(&mut input)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact_or_truncated(&mut input, &mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or_truncated(&mut input, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            what: "weight file",
            detail: "tensor name is not UTF-8".into(),
        })?;
        let mut rank = [0u8; 1];
        read_exact_or_truncated(&mut input, &mut rank)?;
        let dims = (0..rank[0])
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        read_exact_or_truncated(&mut input, &mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), RawTensor { dims, data }).is_some() {
            return Err(Error::Format {
                what: "weight file",
                detail: format!("tensor `{name}` appears twice"),
            });
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format {
            what: "weight file",
            detail: "trailing bytes after last tensor".into(),
        });
    }
    Ok(tensors)
}

/// Reads a weight file and binds it to `net`: every conv must be present
/// with matching dims, and no foreign tensors may appear.
pub fn read_weights(input: impl Read, net: &NetDef) -> Result<WeightStore> {
    let mut raw = read_raw(input)?;
    let mut store = WeightStore::new();
    for spec in net.convs() {
        let missing = || Error::IncompleteStore {
            stage: spec.name.clone(),
        };
        let kernel = raw.remove(&format!("{}.weight", spec.name)).ok_or_else(missing)?;
        let bias = raw.remove(&format!("{}.bias", spec.name)).ok_or_else(missing)?;
        let want = spec_dims(spec);
        if kernel.dims != want {
            return Err(Error::DimMismatch {
                name: format!("{}.weight", spec.name),
                expected: want.to_vec(),
                found: kernel.dims,
            });
        }
        if bias.dims != [spec.out_channels] {
            return Err(Error::DimMismatch {
                name: format!("{}.bias", spec.name),
                expected: vec![spec.out_channels],
                found: bias.dims,
            });
        }
        let w = ConvWeights::new(
            spec.out_channels,
            spec.in_channels,
            spec.kernel_size,
            spec.stride,
            kernel.data,
            bias.data,
        )?;
        store.insert(spec.name.clone(), w);
    }
    if let Some(name) = raw.keys().next() {
        return Err(Error::Format {
            what: "weight file",
            detail: format!("tensor `{name}` does not belong to the network"),
        });
    }
    Ok(store)
}

pub fn load_weights(path: impl AsRef<Path>, net: &NetDef) -> Result<WeightStore> {
    read_weights(BufReader::new(File::open(path)?), net)
}

/// A network together with weights that have been checked against it.
#[derive(Clone, Debug)]
pub struct Model {
    net: NetDef,
    weights: WeightStore,
}

impl Model {
    pub fn new(net: NetDef, weights: WeightStore) -> Result<Self> {
        net.shapes()?;
        weights.check_against(&net)?;
        Ok(Self { net, weights })
    }

    pub fn net(&self) -> &NetDef {
        &self.net
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn conv(&self, name: &str) -> Result<&ConvWeights> {
        self.weights.conv(name)
    }

    /// Same weights, different fusion behaviour.
    pub fn with_fusion_mode(&self, mode: crate::model::FusionMode) -> Self {
        Self {
            net: self.net.with_fusion_mode(mode),
            weights: self.weights.clone(),
        }
    }
}
