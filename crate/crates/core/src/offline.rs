//! Offline (whole-clip) execution with the temporal shift operation.
//!
//! This is the reference the streaming engine is checked against: every
//! stage is applied to all frames of a clip before the next stage runs, and
//! each fusion point shifts channel slices between neighbouring frames with
//! zero padding at the clip ends.

use std::collections::HashMap;

use crate::error::{config, Result};
use crate::model::{FusionMode, Stage};
use crate::tensor::{add, concat_channels, conv2d, pixel_shuffle, relu6, slice_channels, FeatureMap, Tensor};
use crate::weights::Model;

/// Bidirectional temporal shift of one frame: channels `[0, f)` come from
/// `past`, `[f, C-f)` from `cur` and `[C-f, C)` from `future`. An absent
/// neighbour contributes zeros.
pub fn tsm_fuse(
    past: Option<&Tensor>,
    cur: &Tensor,
    future: Option<&Tensor>,
    f: usize,
) -> Result<Tensor> {
    let (c, h, w) = cur.dims();
    if 2 * f >= c {
        return config(format!("shift of {f} channels is too large for {c} channels"));
    }
    for n in past.iter().chain(future.iter()) {
        if n.dims() != cur.dims() {
            return config(format!(
                "temporal neighbour {:?} does not match frame {:?}",
                n.dims(),
                cur.dims()
            ));
        }
    }
    if f == 0 {
        return Ok(cur.clone());
    }
    let head = match past {
        Some(p) => slice_channels(p, 0, f)?,
        None => Tensor::zeros(f, h, w),
    };
    let mid = slice_channels(cur, f, c - f)?;
    let tail = match future {
        Some(n) => slice_channels(n, c - f, c)?,
        None => Tensor::zeros(f, h, w),
    };
    concat_channels(&[&head, &mid, &tail])
}

/// Causal variant: the first `2f` channels come from `past` (zeros when
/// absent), the rest from `cur`.
pub fn uni_fuse(past: Option<&Tensor>, cur: &Tensor, f: usize) -> Result<Tensor> {
    let (c, h, w) = cur.dims();
    if 2 * f >= c {
        return config(format!("shift of {f} channels is too large for {c} channels"));
    }
    if let Some(p) = past {
        if p.dims() != cur.dims() {
            return config("temporal neighbour does not match frame");
        }
    }
    if f == 0 {
        return Ok(cur.clone());
    }
    let head = match past {
        Some(p) => slice_channels(p, 0, 2 * f)?,
        None => Tensor::zeros(2 * f, h, w),
    };
    let rest = slice_channels(cur, 2 * f, c)?;
    concat_channels(&[&head, &rest])
}

/// Consecutive feature maps of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClip {
    frames: Vec<FeatureMap>,
    origin: i64,
}

impl FeatureClip {
    pub fn new(frames: Vec<Tensor>, origin: i64) -> Result<Self> {
        if let Some(first) = frames.first() {
            if frames.iter().any(|t| t.dims() != first.dims()) {
                return config("clip frames must share dimensions");
            }
        }
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(k, t)| FeatureMap::new(t, origin + k as i64, 0))
            .collect();
        Ok(Self { frames, origin })
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FeatureMap] {
        &self.frames
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.frames.into_iter().map(|m| m.tensor).collect()
    }

    fn elements(&self) -> usize {
        self.frames.iter().map(|m| m.tensor.len()).sum()
    }

    fn map(self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Self> {
        let frames = self
            .frames
            .into_iter()
            .map(|m| Ok(FeatureMap::new(f(&m.tensor)?, m.index, m.layer)))
            .collect::<Result<_>>()?;
        Ok(Self {
            frames,
            origin: self.origin,
        })
    }

    /// Applies the temporal fusion of `mode` to every frame of the clip.
    pub fn fuse(&self, mode: FusionMode, f: usize) -> Result<Self> {
        let n = self.frames.len();
        let frames = (0..n)
            .map(|k| {
                let past = k.checked_sub(1).map(|p| &self.frames[p].tensor);
                let cur = &self.frames[k];
                let fused = match mode {
                    FusionMode::Bidirectional => {
                        let future = self.frames.get(k + 1).map(|m| &m.tensor);
                        tsm_fuse(past, &cur.tensor, future, f)?
                    }
                    FusionMode::Unidirectional => uni_fuse(past, &cur.tensor, f)?,
                    FusionMode::None => cur.tensor.clone(),
                };
                let layer = if mode == FusionMode::None { cur.layer } else { cur.layer + 1 };
                Ok(FeatureMap::new(fused, cur.index, layer))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            frames,
            origin: self.origin,
        })
    }
}

/// Segmentation of a long sequence into independently processed clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipConfig {
    pub t_clip: usize,
    /// Clip ends are always zero padded.
    pub edge_mode: EdgeMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeMode {
    ZeroPad,
}

impl ClipConfig {
    pub fn new(t_clip: usize) -> Result<Self> {
        if t_clip == 0 {
            return config("T_clip must be at least 1");
        }
        Ok(Self {
            t_clip,
            edge_mode: EdgeMode::ZeroPad,
        })
    }
}

/// Counters collected during an offline run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActivationStats {
    /// Largest number of live activation bytes at any stage: the stage's
    /// input and output clips plus every clip held for a skip join.
    pub peak_bytes: usize,
    pub conv_evals: usize,
}

/// Applies a non-temporal stage to one frame.
pub(crate) fn apply_spatial(model: &Model, stage: &Stage, input: &Tensor) -> Result<Tensor> {
    match stage {
        Stage::Conv(spec) => conv2d(input, model.conv(&spec.name)?),
        Stage::Relu6 => Ok(relu6(input)),
        Stage::PixelShuffle(r) => pixel_shuffle(input, *r),
        other => unreachable!("stage {other:?} is not spatial"),
    }
}

fn check_frames(model: &Model, frames: &[Tensor]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| crate::Error::Config("need at least one frame".into()))?;
    model.net().check_frame(first)?;
    if frames.iter().any(|t| t.dims() != first.dims()) {
        return config("all frames must share dimensions");
    }
    Ok(())
}

fn forward_clip(model: &Model, clip: FeatureClip, stats: &mut ActivationStats) -> Result<FeatureClip> {
    let net = model.net();
    let mut clip = clip;
    let mut held: HashMap<&str, FeatureClip> = HashMap::new();
    let mut held_elems = 0usize;
    for stage in net.stages() {
        let in_elems = clip.elements();
        clip = match stage {
            Stage::Conv(_) => {
                stats.conv_evals += clip.len();
                clip.map(|t| apply_spatial(model, stage, t))?
            }
            Stage::Relu6 | Stage::PixelShuffle(_) => clip.map(|t| apply_spatial(model, stage, t))?,
            Stage::Fusion(p) => clip.fuse(net.fusion_mode(), p.shift)?,
            Stage::SkipSource(tag) => {
                held_elems += in_elems;
                held.insert(tag, clip.clone());
                clip
            }
            Stage::SkipJoin(tag) => {
                let skip = held
                    .remove(tag.as_str())
                    .ok_or_else(|| crate::Error::Compile(format!("skip `{tag}` has no source")))?;
                held_elems -= skip.elements();
                let frames = clip
                    .frames
                    .into_iter()
                    .zip(skip.frames)
                    .map(|(m, s)| Ok(FeatureMap::new(add(&m.tensor, &s.tensor)?, m.index, m.layer)))
                    .collect::<Result<_>>()?;
                FeatureClip {
                    frames,
                    origin: clip.origin,
                }
            }
        };
        let live = in_elems + clip.elements() + held_elems;
        stats.peak_bytes = stats.peak_bytes.max(live * 4);
    }
    Ok(clip)
}

/// Runs the whole sequence as a single clip. This is the golden reference
/// for streaming equivalence.
pub fn forward_full_sequence(model: &Model, frames: &[Tensor]) -> Result<Vec<Tensor>> {
    forward_full_sequence_metered(model, frames).map(|(out, _)| out)
}

pub fn forward_full_sequence_metered(
    model: &Model,
    frames: &[Tensor],
) -> Result<(Vec<Tensor>, ActivationStats)> {
    check_frames(model, frames)?;
    let mut stats = ActivationStats::default();
    let clip = FeatureClip::new(frames.to_vec(), 0)?;
    let out = forward_clip(model, clip, &mut stats)?;
    Ok((out.into_tensors(), stats))
}

/// Frame-wise forward of a single frame (fusion sees no neighbours).
pub fn forward_frame(model: &Model, frame: &Tensor) -> Result<Tensor> {
    let mut out = forward_full_sequence(model, std::slice::from_ref(frame))?;
    Ok(out.pop().expect("one frame in, one frame out"))
}

/// Splits the sequence into consecutive non-overlapping clips of
/// `clip.t_clip` frames (the last one may be shorter), runs each clip on its
/// own and concatenates the results.
pub fn forward_clipped_mimo(model: &Model, frames: &[Tensor], clip: ClipConfig) -> Result<Vec<Tensor>> {
    forward_clipped_mimo_metered(model, frames, clip).map(|(out, _)| out)
}

/// As [`forward_clipped_mimo`]; `peak_bytes` is the maximum over clips since
/// clips are processed one at a time.
pub fn forward_clipped_mimo_metered(
    model: &Model,
    frames: &[Tensor],
    clip: ClipConfig,
) -> Result<(Vec<Tensor>, ActivationStats)> {
    check_frames(model, frames)?;
    let clip = ClipConfig::new(clip.t_clip)?;
    let mut stats = ActivationStats::default();
    let mut out = Vec::with_capacity(frames.len());
    for (k, chunk) in frames.chunks(clip.t_clip).enumerate() {
        let fc = FeatureClip::new(chunk.to_vec(), (k * clip.t_clip) as i64)?;
        out.extend(forward_clip(model, fc, &mut stats)?.into_tensors());
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_wnet, FusionLayout, ModelConfig};
    use crate::weights::{init_weights_with, InitScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
    }

    fn tiny_model(mode: FusionMode) -> Model {
        let cfg = ModelConfig {
            base_channels: 8,
            input_channels: 3,
            fusion_mode: mode,
            unets: 1,
            fusion_layout: FusionLayout::Custom([0, 1, 1, 1, 1, 0]),
            ..ModelConfig::default()
        };
        let net = build_wnet(&cfg).unwrap();
        let w = init_weights_with(&net, 5, InitScheme::HeUniformBiased);
        Model::new(net, w).unwrap()
    }

    #[test]
    fn fuse_identical_frames_is_identity() {
        let x = seeded(1, 8, 3, 3);
        assert!(tsm_fuse(Some(&x), &x, Some(&x), 2).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn fuse_boundary_zeroes_shift_channels() {
        let x = seeded(2, 8, 3, 3);
        let out = tsm_fuse(None, &x, None, 2).unwrap();
        for c in 0..8 {
            if (2..6).contains(&c) {
                assert_eq!(out.channel(c), x.channel(c));
            } else {
                assert!(out.channel(c).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn fuse_channel_partition() {
        let (p, c, n) = (seeded(3, 8, 4, 4), seeded(4, 8, 4, 4), seeded(5, 8, 4, 4));
        let out = tsm_fuse(Some(&p), &c, Some(&n), 2).unwrap();
        for ch in 0..8 {
            let src = match ch {
                0 | 1 => &p,
                6 | 7 => &n,
                _ => &c,
            };
            assert_eq!(out.channel(ch), src.channel(ch), "channel {ch}");
        }
    }

    #[test]
    fn fuse_rejects_oversized_shift() {
        let x = seeded(6, 8, 2, 2);
        assert!(tsm_fuse(None, &x, None, 4).is_err());
        assert!(tsm_fuse(Some(&seeded(7, 4, 2, 2)), &x, None, 1).is_err());
    }

    #[test]
    fn uni_fuse_layout() {
        let (p, c) = (seeded(8, 8, 2, 2), seeded(9, 8, 2, 2));
        let out = uni_fuse(Some(&p), &c, 2).unwrap();
        for ch in 0..8 {
            let src = if ch < 4 { &p } else { &c };
            assert_eq!(out.channel(ch), src.channel(ch));
        }
        let first = uni_fuse(None, &c, 2).unwrap();
        assert!((0..4).all(|ch| first.channel(ch).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_frame_equals_zeroed_shift_forward() {
        let model = tiny_model(FusionMode::Bidirectional);
        let x = seeded(10, 3, 16, 16);
        let seq = forward_full_sequence(&model, std::slice::from_ref(&x)).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0].dims(), (3, 16, 16));
        assert!(forward_frame(&model, &x).unwrap().bitwise_eq(&seq[0]));
    }

    #[test]
    fn no_fusion_is_framewise() {
        let model = tiny_model(FusionMode::None);
        let frames: Vec<Tensor> = (0..5).map(|s| seeded(20 + s, 3, 16, 16)).collect();
        let base = forward_full_sequence(&model, &frames).unwrap();
        let mut perturbed = frames.clone();
        perturbed[2] = perturbed[2].map(|v| v + 0.5).unwrap();
        let out = forward_full_sequence(&model, &perturbed).unwrap();
        for (t, (a, b)) in base.iter().zip(&out).enumerate() {
            assert_eq!(a.bitwise_eq(b), t != 2, "frame {t}");
        }
    }

    #[test]
    fn mimo_with_full_clip_equals_full_sequence() {
        let model = tiny_model(FusionMode::Bidirectional);
        let frames: Vec<Tensor> = (0..6).map(|s| seeded(30 + s, 3, 16, 16)).collect();
        let full = forward_full_sequence(&model, &frames).unwrap();
        for t_clip in [6, 10] {
            let mimo = forward_clipped_mimo(&model, &frames, ClipConfig::new(t_clip).unwrap()).unwrap();
            assert!(full.iter().zip(&mimo).all(|(a, b)| a.bitwise_eq(b)));
        }
    }

    #[test]
    fn unit_clips_are_framewise_with_zeroed_shifts() {
        let model = tiny_model(FusionMode::Bidirectional);
        let frames: Vec<Tensor> = (0..4).map(|s| seeded(40 + s, 3, 16, 16)).collect();
        let mimo = forward_clipped_mimo(&model, &frames, ClipConfig::new(1).unwrap()).unwrap();
        for (x, y) in frames.iter().zip(&mimo) {
            assert!(forward_frame(&model, x).unwrap().bitwise_eq(y));
        }
    }

    #[test]
    fn activation_bytes_scale_with_clip_length() {
        let model = tiny_model(FusionMode::Bidirectional);
        let frames: Vec<Tensor> = (0..16).map(|s| seeded(50 + s, 3, 16, 16)).collect();
        let peak = |t| {
            forward_clipped_mimo_metered(&model, &frames, ClipConfig::new(t).unwrap())
                .unwrap()
                .1
                .peak_bytes
        };
        assert_eq!(peak(8), 2 * peak(4));
        assert_eq!(peak(16), 2 * peak(8));
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = tiny_model(FusionMode::Bidirectional);
        assert!(forward_full_sequence(&model, &[]).is_err());
        assert!(forward_full_sequence(&model, &[seeded(1, 3, 16, 16), seeded(2, 3, 8, 8)]).is_err());
        assert!(forward_full_sequence(&model, &[seeded(1, 3, 18, 16)]).is_err());
        assert!(ClipConfig::new(0).is_err());
    }
}
