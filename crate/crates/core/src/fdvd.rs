//! Two-stage, window-5 cascade (FastDVDnet style) run either as a sliding
//! window or as a two-buffer pipeline.
//!
//! Temporal edges use replicate padding. Stage 1 is padded by two frames on
//! each side so that it also produces the edge features `s1(-1)` and
//! `s1(T)` that the sliding window sees; stage 2 is unpadded and starts
//! emitting once it has seen `s1(-1)`, `s1(0)`, `s1(1)`.

use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::model::{build_backbone, make_noise_map, BackboneSpec, FusionMode, ModelConfig};
use crate::offline::forward_frame;
use crate::tensor::{concat_channels, Tensor};
use crate::weights::{init_weights_with, InitScheme, Model};

/// Both denoising stages of the cascade.
#[derive(Clone, Debug)]
pub struct FdvdModel {
    stage1: Model,
    stage2: Model,
    image_channels: usize,
    noise_map: bool,
}

impl FdvdModel {
    /// Builds both stages for `cfg` (3 stacked frames plus an optional noise
    /// map in, one frame out) and seeds their weights with `seed` and
    /// `seed + 1`.
    pub fn seeded(cfg: &ModelConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        let img = cfg.image_channels();
        let noise_map = cfg.uses_noise_map();
        let net = build_backbone(&BackboneSpec {
            base_channels: cfg.base_channels,
            input_channels: 3 * img + usize::from(noise_map),
            output_channels: img,
            unets: 1,
            counts: [0; 6],
            fusion_mode: FusionMode::None,
            shift_ratio: cfg.shift_ratio,
        })?;
        let stage1 = Model::new(net.clone(), init_weights_with(&net, seed, scheme))?;
        let stage2 = Model::new(net.clone(), init_weights_with(&net, seed.wrapping_add(1), scheme))?;
        Ok(Self {
            stage1,
            stage2,
            image_channels: img,
            noise_map,
        })
    }

    pub fn stage1(&self) -> &Model {
        &self.stage1
    }

    pub fn stage2(&self) -> &Model {
        &self.stage2
    }

    pub fn image_channels(&self) -> usize {
        self.image_channels
    }

    fn noise(&self, sigma: Option<f32>, height: usize, width: usize) -> Result<Option<Tensor>> {
        match (self.noise_map, sigma) {
            (false, _) => Ok(None),
            (true, Some(s)) => make_noise_map(s, height, width).map(Some),
            (true, None) => config("this cascade needs a noise level"),
        }
    }
}

/// A frame denoiser over three stacked frames with full-frame buffers.
#[derive(Clone, Debug)]
pub struct CascadeStage<'m> {
    model: &'m Model,
    noise: Option<Tensor>,
    past: Option<Tensor>,
    current: Option<Tensor>,
    /// Replicate frames inserted before the first and after the last input.
    pad: usize,
    evals: usize,
    ended: bool,
}

impl<'m> CascadeStage<'m> {
    pub fn new(model: &'m Model, noise: Option<Tensor>, pad: usize) -> Self {
        Self {
            model,
            noise,
            past: None,
            current: None,
            pad,
            evals: 0,
            ended: false,
        }
    }

    pub fn evals(&self) -> usize {
        self.evals
    }

    /// Feeds one input (`None` ends the stream) and returns whatever the
    /// stage emits: nothing while filling its buffers, one frame per input
    /// afterwards, and `pad` trailing frames at end of stream.
    pub fn step(&mut self, input: Option<Tensor>) -> Result<Vec<Tensor>> {
        if self.ended {
            return Err(Error::State("cascade stage stepped after end of stream".into()));
        }
        let mut out = Vec::new();
        match input {
            Some(x) => {
                let copies = if self.current.is_none() { self.pad + 1 } else { 1 };
                for _ in 0..copies {
                    out.extend(self.push(x.clone())?);
                }
            }
            None => {
                self.ended = true;
                if let Some(last) = self.current.clone() {
                    for _ in 0..self.pad {
                        out.extend(self.push(last.clone())?);
                    }
                }
            }
        }
        Ok(out)
    }

    fn push(&mut self, x: Tensor) -> Result<Option<Tensor>> {
        let out = match (&self.past, &self.current) {
            (Some(p), Some(c)) => {
                self.evals += 1;
                Some(eval_stage(self.model, p, c, &x, self.noise.as_ref())?)
            }
            _ => None,
        };
        self.past = self.current.take();
        self.current = Some(x);
        Ok(out)
    }
}

fn eval_stage(model: &Model, a: &Tensor, b: &Tensor, c: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
    let mut parts = vec![a, b, c];
    parts.extend(noise);
    forward_frame(model, &concat_channels(&parts)?)
}

/// Evaluation counters of one cascade run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpCountReport {
    pub mode: String,
    pub frames: usize,
    pub stage1_evals: usize,
    pub stage2_evals: usize,
    /// Evaluations spent filling buffers before the first output.
    pub warmup_evals: usize,
    /// Stage evaluations per output frame, excluding warm-up.
    pub per_frame: f64,
}

/// Streaming cascade: one stage-1 and one stage-2 evaluation per frame,
/// two frames of latency.
pub struct FdvdPipeline<'m> {
    stage1: CascadeStage<'m>,
    stage2: CascadeStage<'m>,
    height: usize,
    width: usize,
    channels: usize,
    emitted: usize,
    steady_evals: usize,
}

impl<'m> FdvdPipeline<'m> {
    pub fn new(model: &'m FdvdModel, sigma: Option<f32>, height: usize, width: usize) -> Result<Self> {
        model
            .stage1
            .net()
            .check_frame(&Tensor::zeros(model.stage1.net().input_channels(), height, width))?;
        let noise = model.noise(sigma, height, width)?;
        Ok(Self {
            stage1: CascadeStage::new(&model.stage1, noise.clone(), 2),
            stage2: CascadeStage::new(&model.stage2, noise, 0),
            height,
            width,
            channels: model.image_channels,
            emitted: 0,
            steady_evals: 0,
        })
    }

    /// Feeds one noisy frame, or `None` at end of stream.
    pub fn step(&mut self, frame: Option<Tensor>) -> Result<Vec<Tensor>> {
        if let Some(f) = &frame {
            if f.dims() != (self.channels, self.height, self.width) {
                return config(format!(
                    "frame {:?} does not match cascade {}x{}x{}",
                    f.dims(),
                    self.channels,
                    self.height,
                    self.width
                ));
            }
        }
        let end = frame.is_none();
        let mut out = Vec::new();
        // Each stage-1 feature costs one evaluation; it counts as steady
        // state when stage 2 turns it straight into an output.
        for s in self.stage1.step(frame)? {
            let y = self.stage2.step(Some(s))?;
            if !y.is_empty() {
                self.steady_evals += 2;
            }
            out.extend(y);
        }
        if end {
            out.extend(self.stage2.step(None)?);
        }
        self.emitted += out.len();
        Ok(out)
    }

    fn evals(&self) -> usize {
        self.stage1.evals() + self.stage2.evals()
    }

    pub fn report(&self) -> OpCountReport {
        let total = self.evals();
        OpCountReport {
            mode: "pipeline".into(),
            frames: self.emitted,
            stage1_evals: self.stage1.evals(),
            stage2_evals: self.stage2.evals(),
            warmup_evals: total - self.steady_evals,
            per_frame: per_frame(self.steady_evals, self.emitted),
        }
    }
}

fn per_frame(evals: usize, frames: usize) -> f64 {
    if frames == 0 {
        0.0
    } else {
        evals as f64 / frames as f64
    }
}

fn check_sequence(model: &FdvdModel, frames: &[Tensor]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("need at least one frame".into()))?;
    if first.channels() != model.image_channels || frames.iter().any(|f| f.dims() != first.dims()) {
        return config("cascade frames must share dimensions and match the image channels");
    }
    Ok(())
}

/// Runs the whole sequence through the pipeline.
pub fn run_fdvd_pipeline(
    model: &FdvdModel,
    frames: &[Tensor],
    sigma: Option<f32>,
) -> Result<(Vec<Tensor>, OpCountReport)> {
    check_sequence(model, frames)?;
    let mut p = FdvdPipeline::new(model, sigma, frames[0].height(), frames[0].width())?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        out.extend(p.step(Some(f.clone()))?);
    }
    out.extend(p.step(None)?);
    Ok((out, p.report()))
}

/// Naive reference: every output re-runs stage 1 on three overlapping
/// windows and stage 2 once, with replicate padding at the ends.
pub fn fdvd_sliding_oracle(
    model: &FdvdModel,
    frames: &[Tensor],
    sigma: Option<f32>,
) -> Result<(Vec<Tensor>, OpCountReport)> {
    check_sequence(model, frames)?;
    let (h, w) = (frames[0].height(), frames[0].width());
    let noise = model.noise(sigma, h, w)?;
    let last = frames.len() as i64 - 1;
    let x = |j: i64| &frames[j.clamp(0, last) as usize];
    let mut out = Vec::with_capacity(frames.len());
    let (mut e1, mut e2) = (0, 0);
    for i in 0..frames.len() as i64 {
        let mut mid = Vec::with_capacity(3);
        for j in i - 1..=i + 1 {
            mid.push(eval_stage(&model.stage1, x(j - 1), x(j), x(j + 1), noise.as_ref())?);
            e1 += 1;
        }
        out.push(eval_stage(&model.stage2, &mid[0], &mid[1], &mid[2], noise.as_ref())?);
        e2 += 1;
    }
    let report = OpCountReport {
        mode: "sliding".into(),
        frames: out.len(),
        stage1_evals: e1,
        stage2_evals: e2,
        warmup_evals: 0,
        per_frame: per_frame(e1 + e2, out.len()),
    };
    Ok((out, report))
}
