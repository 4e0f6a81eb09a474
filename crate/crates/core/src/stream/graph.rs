//! Delay balancing: every stage gets a temporal offset equal to the number
//! of bidirectional buffer blocks between it and the network input, and each
//! skip join gets a FIFO whose depth is the offset difference between its
//! two operands.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FusionMode, NetDef, Stage, StageShape};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphStage {
    pub stage: Stage,
    /// Buffer blocks passed before this stage runs.
    pub offset: usize,
    pub input: StageShape,
    pub output: StageShape,
}

/// Queue carrying a skip-connection feature from its source to its join.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipLink {
    pub tag: String,
    pub source: usize,
    pub join: usize,
    pub depth: usize,
    pub shape: StageShape,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineGraph {
    stages: Vec<GraphStage>,
    skips: Vec<SkipLink>,
    buffer_blocks: usize,
    mode: FusionMode,
    input_channels: usize,
    max_scale: usize,
}

impl PipelineGraph {
    pub fn stages(&self) -> &[GraphStage] {
        &self.stages
    }

    /// All skip links, including zero-depth ones that need no queue.
    pub fn skips(&self) -> &[SkipLink] {
        &self.skips
    }

    /// Skip links that actually buffer frames.
    pub fn fifos(&self) -> impl Iterator<Item = &SkipLink> {
        self.skips.iter().filter(|s| s.depth > 0)
    }

    /// Number of temporal buffer blocks (`N`).
    pub fn buffer_blocks(&self) -> usize {
        self.buffer_blocks
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn max_scale(&self) -> usize {
        self.max_scale
    }

    /// Steps between feeding a frame and receiving its output.
    pub fn latency(&self) -> usize {
        match self.mode {
            FusionMode::Bidirectional => self.buffer_blocks,
            _ => 0,
        }
    }

    /// Number of input frames that can influence one output.
    pub fn receptive_field(&self) -> usize {
        match self.mode {
            FusionMode::Bidirectional => 2 * self.buffer_blocks + 1,
            FusionMode::Unidirectional => self.buffer_blocks + 1,
            FusionMode::None => 1,
        }
    }
}

pub fn compile_pipeline(net: &NetDef) -> Result<PipelineGraph> {
    let shapes = net.shapes()?;
    let mode = net.fusion_mode();
    let mut stages = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    let mut blocks = 0;
    let mut sources: HashMap<&str, (usize, usize, StageShape)> = HashMap::new();
    let mut skips = Vec::new();
    let mut input = StageShape {
        channels: net.input_channels(),
        scale: 1,
    };
    for (i, (stage, &output)) in net.stages().iter().zip(&shapes).enumerate() {
        stages.push(GraphStage {
            stage: stage.clone(),
            offset,
            input,
            output,
        });
        match stage {
            Stage::Fusion(_) if mode != FusionMode::None => {
                blocks += 1;
                if mode == FusionMode::Bidirectional {
                    offset += 1;
                }
            }
            Stage::SkipSource(tag) => {
                sources.insert(tag, (i, offset, output));
            }
            Stage::SkipJoin(tag) => {
                let (src, src_offset, shape) = sources.remove(tag.as_str()).ok_or_else(|| {
                    Error::Compile(format!("skip join `{tag}` has no matching source"))
                })?;
                skips.push(SkipLink {
                    tag: tag.clone(),
                    source: src,
                    join: i,
                    depth: offset - src_offset,
                    shape,
                });
            }
            _ => {}
        }
        input = output;
    }
    if let Some(tag) = sources.keys().next() {
        return Err(Error::Compile(format!("skip source `{tag}` is never joined")));
    }
    Ok(PipelineGraph {
        stages,
        skips,
        buffer_blocks: blocks,
        mode,
        input_channels: net.input_channels(),
        max_scale: shapes.iter().map(|s| s.scale).max().unwrap_or(1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PipelineReport {
    pub buffer_blocks: usize,
    pub latency: usize,
    pub receptive_field: usize,
    /// Bytes held between steps once every block is active: buffer
    /// contents plus skip FIFO contents, 4 bytes per element.
    pub state_bytes: usize,
}

/// Closed-form latency, receptive field and steady-state memory of `graph`
/// for `height × width` frames.
pub fn analyze(graph: &PipelineGraph, height: usize, width: usize) -> Result<PipelineReport> {
    let s = graph.max_scale;
    if height == 0 || width == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
        return Err(Error::Config(format!(
            "frame size {height}x{width} must be a positive multiple of {s}"
        )));
    }
    let plane = |shape: &StageShape| (height / shape.scale) * (width / shape.scale);
    let mut elements = 0;
    for st in &graph.stages {
        if let Stage::Fusion(p) = &st.stage {
            let px = plane(&st.input);
            elements += match graph.mode {
                FusionMode::Bidirectional => (p.shift + p.channels) * px,
                FusionMode::Unidirectional => 2 * p.shift * px,
                FusionMode::None => 0,
            };
        }
    }
    for link in &graph.skips {
        elements += link.depth * link.shape.channels * plane(&link.shape);
    }
    Ok(PipelineReport {
        buffer_blocks: graph.buffer_blocks,
        latency: graph.latency(),
        receptive_field: graph.receptive_field(),
        state_bytes: elements * 4,
    })
}
