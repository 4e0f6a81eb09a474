//! Network description: model configuration, the two-U-Net backbone builder
//! and the stage list both executors walk.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::tensor::{concat_channels, Tensor};

/// How temporal information is mixed at each fusion point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Shift `f` channels from the previous frame and `f` from the next one.
    Bidirectional,
    /// Replace the first `2f` channels with the previous frame's.
    Unidirectional,
    /// Fusion points are pass-through; the network is frame-wise.
    None,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Bidirectional => "bidirectional",
            FusionMode::Unidirectional => "unidirectional",
            FusionMode::None => "none",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" | "bi" => Ok(FusionMode::Bidirectional),
            "unidirectional" | "uni" => Ok(FusionMode::Unidirectional),
            "none" => Ok(FusionMode::None),
            other => config(format!("unknown fusion mode `{other}`")),
        }
    }
}

/// Where fusion points go inside each U-Net. Counts are per block, in the
/// order input layer, down1, down2, up1, up2, output layer; each block holds
/// two convolutions and the fusion points sit in front of the last `k` of
/// them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionLayout {
    /// Two fusion points in every down/up block (8 per U-Net).
    Down,
    /// One fusion point in front of the last output-layer convolution.
    Pixel,
    /// `Down` plus two fusion points in each full-resolution layer
    /// (12 per U-Net).
    DownPixel,
    Custom([u8; 6]),
}

impl FusionLayout {
    pub fn counts(&self) -> [usize; 6] {
        match self {
            FusionLayout::Down => [0, 2, 2, 2, 2, 0],
            FusionLayout::Pixel => [0, 0, 0, 0, 0, 1],
            FusionLayout::DownPixel => [2, 2, 2, 2, 2, 2],
            FusionLayout::Custom(c) => c.map(usize::from),
        }
    }
}

impl fmt::Display for FusionLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionLayout::Down => f.write_str("down"),
            FusionLayout::Pixel => f.write_str("pixel"),
            FusionLayout::DownPixel => f.write_str("down+pixel"),
            FusionLayout::Custom(c) => {
                let parts: Vec<String> = c.iter().map(u8::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for FusionLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(FusionLayout::Down),
            "pixel" => Ok(FusionLayout::Pixel),
            "down+pixel" => Ok(FusionLayout::DownPixel),
            list => {
                let counts: Vec<u8> = list
                    .split(',')
                    .map(|p| p.trim().parse::<u8>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad fusion layout `{list}`")))?;
                let counts: [u8; 6] = counts.try_into().map_err(|_| {
                    Error::Config(format!("fusion layout `{list}` needs six counts"))
                })?;
                if counts.iter().any(|&c| c > 2) {
                    return config("at most two fusion points per block");
                }
                Ok(FusionLayout::Custom(counts))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Smallest feature width; every other width is a multiple of it.
    pub base_channels: usize,
    /// 3 (blind RGB), 4 (RGB + noise map) or 5 (raw RGGB + noise map).
    pub input_channels: usize,
    pub shift_ratio: usize,
    pub fusion_mode: FusionMode,
    /// 2 for the W-Net, 1 for a single U-Net.
    pub unets: usize,
    pub fusion_layout: FusionLayout,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            input_channels: 4,
            shift_ratio: 8,
            fusion_mode: FusionMode::Bidirectional,
            unets: 2,
            fusion_layout: FusionLayout::Down,
        }
    }
}

impl ModelConfig {
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            ..Self::default()
        }
    }

    /// Channels of the image part of an input frame.
    pub fn image_channels(&self) -> usize {
        match self.input_channels {
            5 => 4,
            _ => 3,
        }
    }

    pub fn uses_noise_map(&self) -> bool {
        self.input_channels != 3
    }

    /// Parses the flat `key=value` format. Blank lines and `#` comments are
    /// ignored; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "model config",
                detail: format!("line {}: expected key=value", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), ()).is_some() {
                return config(format!("duplicate key `{key}` in model config"));
            }
            let count = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("`{key}` must be a count, got `{value}`")))
            };
            match key {
                "base_channels" => cfg.base_channels = count()?,
                "input_channels" => cfg.input_channels = count()?,
                "shift_ratio" => cfg.shift_ratio = count()?,
                "unets" => cfg.unets = count()?,
                "fusion_mode" => cfg.fusion_mode = value.parse()?,
                "fusion_layout" => cfg.fusion_layout = value.parse()?,
                other => return config(format!("unknown model config key `{other}`")),
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "base_channels={}\ninput_channels={}\nshift_ratio={}\nfusion_mode={}\nunets={}\nfusion_layout={}\n",
            self.base_channels,
            self.input_channels,
            self.shift_ratio,
            self.fusion_mode,
            self.unets,
            self.fusion_layout
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Number of channels moved in each temporal direction for a fusion point of
/// `channels` width, or an error if the split leaves nothing in the middle.
pub fn shift_channels(channels: usize, shift_ratio: usize) -> Result<usize> {
    if shift_ratio == 0 {
        return config("shift ratio must be positive");
    }
    let f = channels / shift_ratio;
    if f < 1 {
        return config(format!(
            "fusion over {channels} channels with r={shift_ratio} shifts no channels"
        ));
    }
    if channels < 2 * f + 1 {
        return config(format!(
            "fusion over {channels} channels with r={shift_ratio} leaves no unshifted channels"
        ));
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionPoint {
    pub id: usize,
    /// Width `C_f` of the feature being fused.
    pub channels: usize,
    /// `f = floor(C_f / r)`.
    pub shift: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage {
    Conv(ConvSpec),
    Relu6,
    PixelShuffle(usize),
    /// Temporal fusion; always followed by a convolution.
    Fusion(FusionPoint),
    SkipSource(String),
    /// Elementwise addition of the matching source's feature.
    SkipJoin(String),
}

/// Channel count and spatial downscale factor after a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub channels: usize,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetDef {
    fusion_mode: FusionMode,
    input_channels: usize,
    stages: Vec<Stage>,
}

impl NetDef {
    /// Wraps a raw stage list without validating it; see [`NetDef::shapes`].
    pub fn from_stages(fusion_mode: FusionMode, input_channels: usize, stages: Vec<Stage>) -> Self {
        Self {
            fusion_mode,
            input_channels,
            stages,
        }
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.fusion_mode
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Same network, different fusion behaviour. Weights stay compatible
    /// because fusion never changes a convolution's input width.
    pub fn with_fusion_mode(&self, mode: FusionMode) -> Self {
        Self {
            fusion_mode: mode,
            ..self.clone()
        }
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn fusion_points(&self) -> impl Iterator<Item = &FusionPoint> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Fusion(p) => Some(p),
            _ => None,
        })
    }

    pub fn output_channels(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map_or(self.input_channels, |s| s.channels))
    }

    /// Largest spatial downscale reached; frame sizes must be multiples.
    pub fn max_scale(&self) -> Result<usize> {
        Ok(self.shapes()?.iter().map(|s| s.scale).max().unwrap_or(1))
    }

    pub fn check_frame(&self, frame: &Tensor) -> Result<()> {
        let scale = self.max_scale()?;
        if frame.channels() != self.input_channels {
            return config(format!(
                "frame has {} channels, network expects {}",
                frame.channels(),
                self.input_channels
            ));
        }
        if frame.height() == 0
            || frame.width() == 0
            || !frame.height().is_multiple_of(scale)
            || !frame.width().is_multiple_of(scale)
        {
            return config(format!(
                "frame size {}x{} must be a positive multiple of {scale}",
                frame.height(),
                frame.width()
            ));
        }
        Ok(())
    }

    /// Infers the shape after every stage, checking channel agreement, that
    /// every fusion point feeds a convolution and that each skip join has
    /// exactly one earlier source of the same shape.
    pub fn shapes(&self) -> Result<Vec<StageShape>> {
        let mut cur = StageShape {
            channels: self.input_channels,
            scale: 1,
        };
        let mut sources: HashMap<&str, StageShape> = HashMap::new();
        let mut joined: HashMap<&str, ()> = HashMap::new();
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Conv(c) => {
                    if c.in_channels != cur.channels {
                        return config(format!(
                            "conv `{}` expects {} channels, receives {}",
                            c.name, c.in_channels, cur.channels
                        ));
                    }
                    cur = StageShape {
                        channels: c.out_channels,
                        scale: cur.scale * c.stride,
                    };
                }
                Stage::Relu6 => {}
                Stage::PixelShuffle(r) => {
                    if *r == 0 || !cur.channels.is_multiple_of(r * r) || !cur.scale.is_multiple_of(*r) {
                        return config(format!("pixel shuffle x{r} at stage {i} is invalid"));
                    }
                    cur = StageShape {
                        channels: cur.channels / (r * r),
                        scale: cur.scale / r,
                    };
                }
                Stage::Fusion(p) => {
                    if p.channels != cur.channels {
                        return config(format!(
                            "fusion point {} declared for {} channels, receives {}",
                            p.id, p.channels, cur.channels
                        ));
                    }
                    if !matches!(self.stages.get(i + 1), Some(Stage::Conv(_))) {
                        return config(format!("fusion point {} is not followed by a conv", p.id));
                    }
                }
                Stage::SkipSource(tag) => {
                    if sources.insert(tag, cur).is_some() {
                        return Err(Error::Compile(format!("skip source `{tag}` defined twice")));
                    }
                }
                Stage::SkipJoin(tag) => {
                    let src = sources.get(tag.as_str()).ok_or_else(|| {
                        Error::Compile(format!("skip join `{tag}` has no preceding source"))
                    })?;
                    if joined.insert(tag, ()).is_some() {
                        return Err(Error::Compile(format!("skip source `{tag}` joined twice")));
                    }
                    if *src != cur {
                        return config(format!(
                            "skip `{tag}` joins {:?} onto {:?}",
                            src, cur
                        ));
                    }
                }
            }
            out.push(cur);
        }
        if let Some(tag) = sources.keys().find(|t| !joined.contains_key(*t)) {
            return Err(Error::Compile(format!("skip source `{tag}` is never joined")));
        }
        Ok(out)
    }

    /// Checks the shift split at every fusion point for the active mode.
    pub fn validate_fusion(&self, shift_ratio: usize) -> Result<()> {
        if self.fusion_mode == FusionMode::None {
            return Ok(());
        }
        for p in self.fusion_points() {
            let f = shift_channels(p.channels, shift_ratio)?;
            if f != p.shift {
                return config(format!(
                    "fusion point {} records shift {}, expected {f}",
                    p.id, p.shift
                ));
            }
        }
        Ok(())
    }
}

/// Backbone parameters independent of the input-channel conventions of
/// [`ModelConfig`]; the FastDVDnet-style stages reuse this directly.
#[derive(Clone, Debug)]
pub struct BackboneSpec {
    pub base_channels: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub unets: usize,
    pub counts: [usize; 6],
    pub fusion_mode: FusionMode,
    pub shift_ratio: usize,
}

struct Builder {
    stages: Vec<Stage>,
    shift_ratio: usize,
    mode: FusionMode,
    next_fusion: usize,
}

impl Builder {
    fn conv(&mut self, name: String, cin: usize, cout: usize, stride: usize) {
        self.stages.push(Stage::Conv(ConvSpec {
            name,
            in_channels: cin,
            out_channels: cout,
            kernel_size: 3,
            stride,
        }));
    }

    fn fusion(&mut self, channels: usize) -> Result<()> {
        let shift = match self.mode {
            FusionMode::None => channels / self.shift_ratio.max(1),
            _ => shift_channels(channels, self.shift_ratio)?,
        };
        self.stages.push(Stage::Fusion(FusionPoint {
            id: self.next_fusion,
            channels,
            shift,
        }));
        self.next_fusion += 1;
        Ok(())
    }

    /// Two `conv (+relu6)` units; the last `fused` of them get a fusion
    /// point in front. `relu_last` controls the activation after unit two.
    fn block_pair(
        &mut self,
        prefix: &str,
        widths: [(usize, usize); 2],
        fused: usize,
        relu_last: bool,
    ) -> Result<()> {
        for (k, (cin, cout)) in widths.into_iter().enumerate() {
            if k + fused >= 2 {
                self.fusion(cin)?;
            }
            self.conv(format!("{prefix}.conv{}", k + 1), cin, cout, 1);
            if k == 0 || relu_last {
                self.stages.push(Stage::Relu6);
            }
        }
        Ok(())
    }
}

/// Builds the backbone described by `spec`:
///
/// ```text
/// input   [conv 3x3 b, relu6] x2                        -> skip s0
/// down1   conv 3x3 2b /2, relu6, [fusion, conv 2b, relu6] x2  -> skip s1
/// down2   conv 3x3 4b /2, relu6, [fusion, conv 4b, relu6] x2
/// up1     [fusion, conv 4b, relu6] x2, conv 8b, shuffle x2, + s1
/// up2     [fusion, conv 2b, relu6] x2, conv 4b, shuffle x2, + s0
/// output  conv b, relu6, conv (b | out)
/// ```
///
/// A second U-Net, when present, consumes the first one's `b`-channel
/// output. No normalization layers are used anywhere.
pub fn build_backbone(spec: &BackboneSpec) -> Result<NetDef> {
    let b = spec.base_channels;
    if b == 0 {
        return config("base_channels must be positive");
    }
    if spec.unets != 1 && spec.unets != 2 {
        return config(format!("unets must be 1 or 2, got {}", spec.unets));
    }
    if spec.counts.iter().any(|&c| c > 2) {
        return config("at most two fusion points per block");
    }
    if spec.input_channels == 0 || spec.output_channels == 0 {
        return config("input and output channels must be positive");
    }
    let mut bld = Builder {
        stages: Vec::new(),
        shift_ratio: spec.shift_ratio,
        mode: spec.fusion_mode,
        next_fusion: 0,
    };
    let [c_in, c_d1, c_d2, c_u1, c_u2, c_out] = spec.counts;
    for u in 1..=spec.unets {
        let p = format!("u{u}");
        let cin = if u == 1 { spec.input_channels } else { b };
        let cout = if u == spec.unets { spec.output_channels } else { b };

        // The raw input is too narrow to shift, so input-layer fusion points
        // sit behind each conv instead of in front of it.
        bld.block_pair(&format!("{p}.in"), [(cin, b), (b, b)], c_in.min(1), true)?;
        bld.stages.push(Stage::SkipSource(format!("{p}.s0")));
        if c_in == 2 {
            bld.fusion(b)?;
        }

        bld.conv(format!("{p}.down1.stride"), b, 2 * b, 2);
        bld.stages.push(Stage::Relu6);
        bld.block_pair(&format!("{p}.down1"), [(2 * b, 2 * b); 2], c_d1, true)?;
        bld.stages.push(Stage::SkipSource(format!("{p}.s1")));

        bld.conv(format!("{p}.down2.stride"), 2 * b, 4 * b, 2);
        bld.stages.push(Stage::Relu6);
        bld.block_pair(&format!("{p}.down2"), [(4 * b, 4 * b); 2], c_d2, true)?;

        bld.block_pair(&format!("{p}.up1"), [(4 * b, 4 * b); 2], c_u1, true)?;
        bld.conv(format!("{p}.up1.widen"), 4 * b, 8 * b, 1);
        bld.stages.push(Stage::PixelShuffle(2));
        bld.stages.push(Stage::SkipJoin(format!("{p}.s1")));

        bld.block_pair(&format!("{p}.up2"), [(2 * b, 2 * b); 2], c_u2, true)?;
        bld.conv(format!("{p}.up2.widen"), 2 * b, 4 * b, 1);
        bld.stages.push(Stage::PixelShuffle(2));
        bld.stages.push(Stage::SkipJoin(format!("{p}.s0")));

        bld.block_pair(&format!("{p}.out"), [(b, b), (b, cout)], c_out, false)?;
    }
    let net = NetDef::from_stages(spec.fusion_mode, spec.input_channels, bld.stages);
    net.shapes()?;
    Ok(net)
}

/// The denoising backbone for `cfg` (two U-Nets unless configured
/// otherwise), emitting a 3-channel image.
pub fn build_wnet(cfg: &ModelConfig) -> Result<NetDef> {
    if !(3..=5).contains(&cfg.input_channels) {
        return config(format!(
            "input_channels must be 3, 4 or 5, got {}",
            cfg.input_channels
        ));
    }
    build_backbone(&BackboneSpec {
        base_channels: cfg.base_channels,
        input_channels: cfg.input_channels,
        output_channels: 3,
        unets: cfg.unets,
        counts: cfg.fusion_layout.counts(),
        fusion_mode: cfg.fusion_mode,
        shift_ratio: cfg.shift_ratio,
    })
}

/// Constant `sigma / 255` plane.
pub fn make_noise_map(sigma: f32, height: usize, width: usize) -> Result<Tensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return config(format!("noise level must be a finite value >= 0, got {sigma}"));
    }
    Ok(Tensor::filled(1, height, width, sigma / 255.0))
}

/// Appends the noise map to an image frame when the configuration expects
/// one. `sigma` is on the 0-255 scale.
pub fn assemble_input(frame: &Tensor, sigma: Option<f32>, cfg: &ModelConfig) -> Result<Tensor> {
    if frame.channels() != cfg.image_channels() {
        return config(format!(
            "frame has {} channels, model expects {} image channels",
            frame.channels(),
            cfg.image_channels()
        ));
    }
    if !cfg.uses_noise_map() {
        return Ok(frame.clone());
    }
    let sigma = sigma.ok_or_else(|| {
        Error::Config("a non-blind model needs a noise level (sigma)".into())
    })?;
    let map = make_noise_map(sigma, frame.height(), frame.width())?;
    concat_channels(&[frame, &map])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_widths(net: &NetDef) -> Vec<usize> {
        net.convs().map(|c| c.out_channels).collect()
    }

    #[test]
    fn wnet_64_ladder() {
        let net = build_wnet(&ModelConfig::with_base(64)).unwrap();
        assert_eq!(net.fusion_points().count(), 16);
        assert_eq!(net.output_channels().unwrap(), 3);
        let widths = conv_widths(&net);
        // in, in, down1.stride, down1 x2, down2.stride, down2 x2, up1 x2,
        // up1.widen, up2 x2, up2.widen, out, out
        assert_eq!(
            &widths[..16],
            &[64, 64, 128, 128, 128, 256, 256, 256, 256, 256, 512, 128, 128, 256, 64, 64]
        );
        assert_eq!(*widths.last().unwrap(), 3);
        let fusion_widths: Vec<usize> = net.fusion_points().map(|p| p.channels).collect();
        assert_eq!(
            &fusion_widths[..8],
            &[128, 128, 256, 256, 256, 256, 128, 128]
        );
        assert!(net.fusion_points().all(|p| p.shift == p.channels / 8));
        assert_eq!(net.max_scale().unwrap(), 4);
        // No normalization stage exists in the vocabulary; the skip joins
        // meet at H/2 (128) and H (64).
        let shapes = net.shapes().unwrap();
        let joins: Vec<StageShape> = net
            .stages()
            .iter()
            .zip(&shapes)
            .filter(|(s, _)| matches!(s, Stage::SkipJoin(_)))
            .map(|(_, sh)| *sh)
            .collect();
        assert_eq!(joins[0], StageShape { channels: 128, scale: 2 });
        assert_eq!(joins[1], StageShape { channels: 64, scale: 1 });
    }

    #[test]
    fn wnet_32_halves_every_width() {
        let w64 = conv_widths(&build_wnet(&ModelConfig::with_base(64)).unwrap());
        let net32 = build_wnet(&ModelConfig::with_base(32)).unwrap();
        let w32 = conv_widths(&net32);
        assert_eq!(net32.fusion_points().count(), 16);
        for (a, b) in w64.iter().zip(&w32).take(w64.len() - 1) {
            assert_eq!(*a, 2 * b);
        }
    }

    #[test]
    fn second_unet_consumes_base_features() {
        let net = build_wnet(&ModelConfig::with_base(16)).unwrap();
        let u2_first = net.convs().find(|c| c.name == "u2.in.conv1").unwrap();
        assert_eq!(u2_first.in_channels, 16);
        let u1_last = net.convs().find(|c| c.name == "u1.out.conv2").unwrap();
        assert_eq!(u1_last.out_channels, 16);
    }

    #[test]
    fn fusion_none_keeps_structure() {
        let bi = build_wnet(&ModelConfig::with_base(16)).unwrap();
        let none = build_wnet(&ModelConfig {
            fusion_mode: FusionMode::None,
            ..ModelConfig::with_base(16)
        })
        .unwrap();
        assert_eq!(bi.stages(), none.stages());
        assert_eq!(none.fusion_mode(), FusionMode::None);
    }

    #[test]
    fn layouts_give_expected_block_counts() {
        let n = |layout, unets| {
            build_wnet(&ModelConfig {
                fusion_layout: layout,
                unets,
                ..ModelConfig::with_base(8)
            })
            .unwrap()
            .fusion_points()
            .count()
        };
        assert_eq!(n(FusionLayout::Down, 2), 16);
        assert_eq!(n(FusionLayout::Pixel, 2), 2);
        assert_eq!(n(FusionLayout::DownPixel, 2), 24);
        assert_eq!(n(FusionLayout::Custom([0, 1, 1, 1, 1, 0]), 1), 4);
        assert_eq!(n(FusionLayout::Custom([0, 1, 0, 0, 0, 0]), 1), 1);
    }

    #[test]
    fn shift_ratio_handling() {
        for r in [4, 6, 8, 16] {
            let net = build_wnet(&ModelConfig {
                shift_ratio: r,
                ..ModelConfig::with_base(64)
            })
            .unwrap();
            assert!(net.fusion_points().all(|p| p.shift == p.channels / r));
        }
        assert_eq!(shift_channels(64, 8).unwrap(), 8);
        assert!(shift_channels(4, 2).is_err());
        assert!(shift_channels(7, 8).is_err());
        assert!(build_wnet(&ModelConfig {
            shift_ratio: 2,
            ..ModelConfig::with_base(16)
        })
        .is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = ModelConfig {
            base_channels: 8,
            input_channels: 3,
            shift_ratio: 4,
            fusion_mode: FusionMode::Unidirectional,
            unets: 1,
            fusion_layout: FusionLayout::Custom([0, 1, 1, 1, 1, 0]),
        };
        assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let parsed = ModelConfig::parse("# tiny\nbase_channels = 16\n\ninput_channels=4\n").unwrap();
        assert_eq!(parsed.base_channels, 16);
        assert_eq!(parsed.shift_ratio, 8);
        assert!(ModelConfig::parse("colour=red").is_err());
        assert!(ModelConfig::parse("base_channels").is_err());
        assert!(ModelConfig::parse("base_channels=1\nbase_channels=2").is_err());
    }

    #[test]
    fn rejects_bad_input_channels() {
        assert!(build_wnet(&ModelConfig {
            input_channels: 6,
            ..ModelConfig::default()
        })
        .is_err());
    }

    #[test]
    fn noise_map_values() {
        assert!(make_noise_map(0.0, 2, 2).unwrap().data().iter().all(|&v| v == 0.0));
        let m = make_noise_map(25.5, 3, 5).unwrap();
        assert_eq!(m.dims(), (1, 3, 5));
        assert!(m.data().iter().all(|&v| v == 25.5f32 / 255.0));
        assert!((m.get(0, 0, 0) - 0.1).abs() < 1e-7);
        assert!(make_noise_map(-1.0, 2, 2).is_err());
    }

    #[test]
    fn blind_config_appends_nothing() {
        let cfg = ModelConfig {
            input_channels: 3,
            ..ModelConfig::default()
        };
        let frame = Tensor::filled(3, 4, 4, 0.5);
        assert_eq!(assemble_input(&frame, None, &cfg).unwrap(), frame);
        let nb = ModelConfig::default();
        let with_map = assemble_input(&frame, Some(25.5), &nb).unwrap();
        assert_eq!(with_map.channels(), 4);
        assert!(assemble_input(&frame, None, &nb).is_err());
    }

    #[test]
    fn shape_checks_catch_unmatched_skips() {
        let stages = vec![
            Stage::SkipSource("a".into()),
            Stage::Relu6,
            Stage::SkipJoin("b".into()),
        ];
        let net = NetDef::from_stages(FusionMode::Bidirectional, 3, stages);
        assert!(matches!(net.shapes(), Err(Error::Compile(_))));
    }
}
