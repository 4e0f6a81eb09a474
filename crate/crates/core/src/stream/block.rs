use crate::error::{config, Error, Result};
use crate::tensor::{concat_channels, conv2d, slice_channels, ConvWeights, FeatureMap, Tensor};

/// What travels between stages of a streaming pipeline at one step.
#[derive(Clone, Debug, PartialEq)]
pub enum Flow {
    Frame(FeatureMap),
    /// End of stream. Blocks holding a frame emit it with zero future
    /// context, then forward the marker on the next step.
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Active,
    Drained,
}

/// Bidirectional buffer block: caches the previous input in full and the
/// first `f` channels of the one before it, so each step can fuse past,
/// present and the incoming (future) frame with one frame of latency.
#[derive(Clone, Debug)]
pub struct BufferState {
    past: Tensor,
    current: Option<FeatureMap>,
    channels: usize,
    shift: usize,
    phase: Phase,
}

impl BufferState {
    pub fn new(channels: usize, shift: usize, height: usize, width: usize) -> Result<Self> {
        if shift == 0 || 2 * shift >= channels {
            return config(format!(
                "buffer block cannot shift {shift} of {channels} channels"
            ));
        }
        Ok(Self {
            past: Tensor::zeros(shift, height, width),
            current: None,
            channels,
            shift,
            phase: Phase::Idle,
        })
    }

    /// `B^{-1}`: first `f` channels of the frame before `current`.
    pub fn past(&self) -> &Tensor {
        &self.past
    }

    /// `B^0`: the most recent input, once the block is activated.
    pub fn current(&self) -> Option<&FeatureMap> {
        self.current.as_ref()
    }

    pub fn is_activated(&self) -> bool {
        self.phase != Phase::Idle
    }

    pub fn retained_elements(&self) -> usize {
        self.past.len() + self.current.as_ref().map_or(0, |m| m.tensor.len())
    }

    fn check(&self, m: &FeatureMap) -> Result<()> {
        let (c, h, w) = m.tensor.dims();
        if c != self.channels || h != self.past.height() || w != self.past.width() {
            return config(format!(
                "buffer block expects {}x{}x{}, got {c}x{h}x{w}",
                self.channels,
                self.past.height(),
                self.past.width()
            ));
        }
        Ok(())
    }

    /// One step of the block. Returns `None` while the block is being
    /// activated, otherwise the fused and convolved feature of the frame
    /// held in `current` (one index behind the input).
    pub fn step(&mut self, input: Flow, conv: &ConvWeights) -> Result<Option<Flow>> {
        let (c, f) = (self.channels, self.shift);
        match (self.phase, input) {
            (Phase::Drained, Flow::Frame(_)) => Err(Error::State(
                "buffer block received a frame after end of stream".into(),
            )),
            (Phase::Idle, Flow::Frame(x)) => {
                self.check(&x)?;
                self.current = Some(x);
                self.phase = Phase::Active;
                Ok(None)
            }
            (Phase::Active, Flow::Frame(x)) => {
                self.check(&x)?;
                let cur = self.current.take().expect("active block holds a frame");
                if x.index != cur.index + 1 {
                    return Err(Error::State(format!(
                        "buffer block expected index {}, got {}",
                        cur.index + 1,
                        x.index
                    )));
                }
                let future = slice_channels(&x.tensor, c - f, c)?;
                let out = self.emit(&cur, &future, conv)?;
                self.current = Some(x);
                Ok(Some(Flow::Frame(out)))
            }
            (Phase::Active, Flow::End) => {
                let cur = self.current.take().expect("active block holds a frame");
                let (_, h, w) = cur.tensor.dims();
                let out = self.emit(&cur, &Tensor::zeros(f, h, w), conv)?;
                self.phase = Phase::Drained;
                Ok(Some(Flow::Frame(out)))
            }
            (Phase::Idle | Phase::Drained, Flow::End) => {
                self.phase = Phase::Drained;
                Ok(Some(Flow::End))
            }
        }
    }

    fn emit(&mut self, cur: &FeatureMap, future: &Tensor, conv: &ConvWeights) -> Result<FeatureMap> {
        let (c, f) = (self.channels, self.shift);
        let mid = slice_channels(&cur.tensor, f, c - f)?;
        let fused = concat_channels(&[&self.past, &mid, future])?;
        let out = conv2d(&fused, conv)?;
        self.past = slice_channels(&cur.tensor, 0, f)?;
        Ok(FeatureMap::new(out, cur.index, cur.layer + 1))
    }
}

/// Causal stream buffer: replaces the first `2f` channels of each input
/// with those of the previous input. No latency.
#[derive(Clone, Debug)]
pub struct UniState {
    past: Tensor,
    channels: usize,
    shift: usize,
    last_index: Option<i64>,
    ended: bool,
}

impl UniState {
    pub fn new(channels: usize, shift: usize, height: usize, width: usize) -> Result<Self> {
        if shift == 0 || 2 * shift >= channels {
            return config(format!(
                "stream buffer cannot shift {shift} of {channels} channels"
            ));
        }
        Ok(Self {
            past: Tensor::zeros(2 * shift, height, width),
            channels,
            shift,
            last_index: None,
            ended: false,
        })
    }

    pub fn past(&self) -> &Tensor {
        &self.past
    }

    pub fn is_activated(&self) -> bool {
        self.last_index.is_some()
    }

    pub fn retained_elements(&self) -> usize {
        self.past.len()
    }

    pub fn step(&mut self, input: Flow, conv: &ConvWeights) -> Result<Option<Flow>> {
        let x = match input {
            Flow::End => {
                self.ended = true;
                return Ok(Some(Flow::End));
            }
            Flow::Frame(_) if self.ended => {
                return Err(Error::State(
                    "stream buffer received a frame after end of stream".into(),
                ))
            }
            Flow::Frame(x) => x,
        };
        let (c, h, w) = x.tensor.dims();
        if c != self.channels || h != self.past.height() || w != self.past.width() {
            return config(format!(
                "stream buffer expects {} channels at {}x{}, got {c}x{h}x{w}",
                self.channels,
                self.past.height(),
                self.past.width()
            ));
        }
        if let Some(prev) = self.last_index {
            if x.index != prev + 1 {
                return Err(Error::State(format!(
                    "stream buffer expected index {}, got {}",
                    prev + 1,
                    x.index
                )));
            }
        }
        let f2 = 2 * self.shift;
        let rest = slice_channels(&x.tensor, f2, c)?;
        let fused = concat_channels(&[&self.past, &rest])?;
        let out = conv2d(&fused, conv)?;
        self.past = slice_channels(&x.tensor, 0, f2)?;
        self.last_index = Some(x.index);
        Ok(Some(Flow::Frame(FeatureMap::new(out, x.index, x.layer + 1))))
    }
}
