use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::model::{FusionMode, Stage};
use crate::offline::apply_spatial;
use crate::tensor::{add, FeatureMap, Tensor};
use crate::weights::Model;

use super::block::{BufferState, Flow, UniState};
use super::graph::{analyze, compile_pipeline, PipelineGraph, PipelineReport};

/// How the last `N` in-flight frames are drained at end of stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FlushMode {
    /// Feed `N` all-zero input frames. Their features are not zero (biases),
    /// so the tail differs from offline zero padding.
    PaperZeroFrames,
    /// Propagate an end marker; each block zero-fills only its future
    /// slice, which reproduces the offline result bit for bit.
    #[default]
    ExactEos,
}

impl fmt::Display for FlushMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlushMode::PaperZeroFrames => "paper",
            FlushMode::ExactEos => "exact",
        })
    }
}

impl FromStr for FlushMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(FlushMode::PaperZeroFrames),
            "exact" => Ok(FlushMode::ExactEos),
            other => config(format!("unknown flush mode `{other}` (expected paper or exact)")),
        }
    }
}

enum Node<'m> {
    Spatial(&'m Stage),
    Bi(BufferState, &'m crate::tensor::ConvWeights),
    Uni(UniState, &'m crate::tensor::ConvWeights),
    Source(usize),
    Join(usize),
}

/// One live stream through a compiled pipeline.
pub struct StreamState<'m> {
    model: &'m Model,
    graph: PipelineGraph,
    nodes: Vec<Node<'m>>,
    fifos: Vec<VecDeque<FeatureMap>>,
    flush_mode: FlushMode,
    height: usize,
    width: usize,
    step: usize,
    next_index: i64,
    ended: bool,
    flushed: bool,
    conv_evals: usize,
    trace: Option<Box<dyn Write + 'm>>,
}

impl<'m> StreamState<'m> {
    pub fn new(model: &'m Model, height: usize, width: usize, flush_mode: FlushMode) -> Result<Self> {
        let graph = compile_pipeline(model.net())?;
        model
            .net()
            .check_frame(&Tensor::zeros(graph.input_channels(), height, width))?;
        let mode = graph.mode();
        let stages = model.net().stages();
        let mut nodes = Vec::with_capacity(stages.len());
        let mut fifo_of = vec![usize::MAX; stages.len()];
        for (k, link) in graph.skips().iter().enumerate() {
            fifo_of[link.source] = k;
            fifo_of[link.join] = k;
        }
        let mut i = 0;
        while i < stages.len() {
            let gs = &graph.stages()[i];
            match (&stages[i], mode) {
                (Stage::Fusion(_), FusionMode::None) => {}
                (Stage::Fusion(p), _) => {
                    let Some(Stage::Conv(spec)) = stages.get(i + 1) else {
                        return Err(Error::Compile(format!("fusion point {} has no conv", p.id)));
                    };
                    let conv = model.conv(&spec.name)?;
                    let (h, w) = (height / gs.input.scale, width / gs.input.scale);
                    nodes.push(if mode == FusionMode::Bidirectional {
                        Node::Bi(BufferState::new(p.channels, p.shift, h, w)?, conv)
                    } else {
                        Node::Uni(UniState::new(p.channels, p.shift, h, w)?, conv)
                    });
                    i += 1;
                }
                (Stage::SkipSource(_), _) => nodes.push(Node::Source(fifo_of[i])),
                (Stage::SkipJoin(_), _) => nodes.push(Node::Join(fifo_of[i])),
                (stage, _) => nodes.push(Node::Spatial(stage)),
            }
            i += 1;
        }
        let fifos = graph
            .skips()
            .iter()
            .map(|l| VecDeque::with_capacity(l.depth + 1))
            .collect();
        Ok(Self {
            model,
            graph,
            nodes,
            fifos,
            flush_mode,
            height,
            width,
            step: 0,
            next_index: 0,
            ended: false,
            flushed: false,
            conv_evals: 0,
            trace: None,
        })
    }

    pub fn graph(&self) -> &PipelineGraph {
        &self.graph
    }

    pub fn flush_mode(&self) -> FlushMode {
        self.flush_mode
    }

    /// Steps taken so far, including flush steps.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Convolutions evaluated so far.
    pub fn conv_evals(&self) -> usize {
        self.conv_evals
    }

    /// Closed-form figures for this stream's frame size.
    pub fn report(&self) -> PipelineReport {
        analyze(&self.graph, self.height, self.width).expect("frame size checked at construction")
    }

    /// Writes one CSV line per step: `step,activated_blocks,emitted_index,state_bytes`.
    pub fn set_trace(&mut self, mut out: Box<dyn Write + 'm>) -> Result<()> {
        writeln!(out, "step,activated_blocks,emitted_index,state_bytes")?;
        self.trace = Some(out);
        Ok(())
    }

    /// Bytes currently retained between steps by buffer blocks and FIFOs.
    pub fn state_bytes(&self) -> usize {
        let blocks: usize = self
            .nodes
            .iter()
            .map(|n| match n {
                Node::Bi(b, _) => b.retained_elements(),
                Node::Uni(u, _) => u.retained_elements(),
                _ => 0,
            })
            .sum();
        let queued: usize = self.fifos.iter().flatten().map(|m| m.tensor.len()).sum();
        4 * (blocks + queued)
    }

    pub fn activated_blocks(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| match n {
                Node::Bi(b, _) => b.is_activated(),
                Node::Uni(u, _) => u.is_activated(),
                _ => false,
            })
            .count()
    }

    /// Feeds the next input frame, or `None` for end of stream. Returns the
    /// finished output, whose index is `N` behind the input during steady
    /// state.
    pub fn step(&mut self, frame: Option<Tensor>) -> Result<Option<FeatureMap>> {
        if self.flushed {
            return Err(Error::State("pipeline has already been flushed".into()));
        }
        let flow = match frame {
            Some(t) => {
                if self.ended {
                    return Err(Error::State("frame fed after end of stream".into()));
                }
                if t.dims() != (self.graph.input_channels(), self.height, self.width) {
                    return config(format!(
                        "frame {:?} does not match stream {}x{}x{}",
                        t.dims(),
                        self.graph.input_channels(),
                        self.height,
                        self.width
                    ));
                }
                self.feed(t)
            }
            None => {
                self.ended = true;
                match self.flush_mode {
                    FlushMode::ExactEos => Flow::End,
                    FlushMode::PaperZeroFrames => {
                        let zero = Tensor::zeros(self.graph.input_channels(), self.height, self.width);
                        self.feed(zero)
                    }
                }
            }
        };
        let out = self.propagate(flow)?;
        if self.trace.is_some() {
            let emitted = out.as_ref().map(|m| m.index.to_string()).unwrap_or_default();
            let (step, activated, bytes) = (self.step, self.activated_blocks(), self.state_bytes());
            if let Some(tr) = self.trace.as_mut() {
                writeln!(tr, "{step},{activated},{emitted},{bytes}")?;
            }
        }
        self.step += 1;
        Ok(out)
    }

    /// Drains the remaining `N` frames and closes the stream.
    pub fn flush(&mut self) -> Result<Vec<FeatureMap>> {
        if self.flushed {
            return Err(Error::State("pipeline flushed twice".into()));
        }
        let mut out = Vec::with_capacity(self.graph.latency());
        for _ in 0..self.graph.latency() {
            out.extend(self.step(None)?);
        }
        self.ended = true;
        self.flushed = true;
        if let Some(tr) = self.trace.as_mut() {
            tr.flush()?;
        }
        Ok(out)
    }

    fn feed(&mut self, t: Tensor) -> Flow {
        let m = FeatureMap::new(t, self.next_index, 0);
        self.next_index += 1;
        Flow::Frame(m)
    }

    fn propagate(&mut self, mut flow: Flow) -> Result<Option<FeatureMap>> {
        let model = self.model;
        for node in &mut self.nodes {
            flow = match node {
                Node::Spatial(stage) => match flow {
                    Flow::Frame(m) => {
                        if matches!(stage, Stage::Conv(_)) {
                            self.conv_evals += 1;
                        }
                        let t = apply_spatial(model, stage, &m.tensor)?;
                        Flow::Frame(FeatureMap::new(t, m.index, m.layer))
                    }
                    Flow::End => Flow::End,
                },
                Node::Bi(block, conv) => {
                    match block.step(flow, conv)? {
                        Some(next) => {
                            if matches!(next, Flow::Frame(_)) {
                                self.conv_evals += 1;
                            }
                            next
                        }
                        // Still warming up: deeper stages have nothing to do.
                        None => return Ok(None),
                    }
                }
                Node::Uni(block, conv) => {
                    let next = block.step(flow, conv)?.expect("stream buffers never hold back");
                    if matches!(next, Flow::Frame(_)) {
                        self.conv_evals += 1;
                    }
                    next
                }
                Node::Source(k) => {
                    if let Flow::Frame(m) = &flow {
                        self.fifos[*k].push_back(m.clone());
                    }
                    flow
                }
                Node::Join(k) => match flow {
                    Flow::Frame(m) => {
                        let skip = self.fifos[*k].pop_front().ok_or_else(|| {
                            Error::State(format!("skip queue {} ran dry", self.graph.skips()[*k].tag))
                        })?;
                        if skip.index != m.index {
                            return Err(Error::State(format!(
                                "skip `{}` joins frame {} onto frame {}",
                                self.graph.skips()[*k].tag,
                                skip.index,
                                m.index
                            )));
                        }
                        Flow::Frame(FeatureMap::new(add(&m.tensor, &skip.tensor)?, m.index, m.layer))
                    }
                    Flow::End => Flow::End,
                },
            };
        }
        Ok(match flow {
            Flow::Frame(m) => Some(m),
            Flow::End => None,
        })
    }
}

/// Streams `frames` through the pipeline and flushes it, returning the
/// outputs in temporal order.
pub fn run_stream(model: &Model, frames: &[Tensor], flush_mode: FlushMode) -> Result<Vec<Tensor>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("need at least one frame".into()))?;
    let mut st = StreamState::new(model, first.height(), first.width(), flush_mode)?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        out.extend(st.step(Some(f.clone()))?);
    }
    out.extend(st.flush()?);
    out.truncate(frames.len());
    Ok(out.into_iter().map(|m| m.tensor).collect())
}
