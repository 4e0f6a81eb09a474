use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use vidbuf::fdvd::{fdvd_sliding_oracle, run_fdvd_pipeline, FdvdModel};
use vidbuf::io::{check_unit_range, load_pnm, load_sequence, save_pnm, save_sequence};
use vidbuf::metrics::per_frame_report;
use vidbuf::model::{assemble_input, build_wnet, FusionMode, ModelConfig};
use vidbuf::noise::{add_noise, NoiseSpec};
use vidbuf::offline::{forward_clipped_mimo, forward_full_sequence_metered, forward_clipped_mimo_metered, ClipConfig};
use vidbuf::stream::{FlushMode, StreamState};
use vidbuf::weights::{init_weights, load_weights, save_weights, InitScheme, Model};
use vidbuf::Tensor;

use crate::manifest::{manifest_path_for, RunFiles};
use crate::pattern::{generate, Pattern};

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p).with_context(|| format!("loading model config {}", p.display())),
        None => Ok(ModelConfig::default()),
    }
}

fn noise_spec(sigma: Option<f32>, het_a: Option<f32>, het_b: Option<f32>, seed: u64) -> Result<NoiseSpec> {
    match (sigma, het_a, het_b) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            bail!("--sigma cannot be combined with --het-a/--het-b")
        }
        (_, None, None) => Ok(NoiseSpec::awgn(sigma.unwrap_or(0.0), seed)),
        (None, a, b) => Ok(NoiseSpec::heteroscedastic(a.unwrap_or(0.0), b.unwrap_or(0.0), seed)),
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GenArgs {
    /// Number of frames.
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    /// Image channels (3 for RGB, 4 for packed raw).
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, value_enum, default_value_t = Pattern::Translate)]
    pub pattern: Pattern,
    /// AWGN level on the 0-255 scale.
    #[arg(long)]
    pub sigma: Option<f32>,
    /// Signal-dependent noise slope `a` (variance a*x + b, intensities in [0, 1]).
    #[arg(long)]
    pub het_a: Option<f32>,
    /// Signal-independent noise variance `b`.
    #[arg(long)]
    pub het_b: Option<f32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives clean.seq, noisy.seq and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen(args: &GenArgs) -> Result<RunFiles> {
    ensure!(args.frames > 0, "--frames must be positive");
    ensure!(
        args.height > 0 && args.width > 0 && args.height.is_multiple_of(4) && args.width.is_multiple_of(4),
        "frame size must be a positive multiple of 4"
    );
    ensure!(args.channels > 0, "--channels must be positive");
    let noise = noise_spec(args.sigma, args.het_a, args.het_b, args.seed.wrapping_add(1))?;
    let clean = generate(args.pattern, args.frames, args.channels, args.height, args.width, args.seed);
    let noisy = add_noise(&clean, &noise)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (c, n) = (args.out.join("clean.seq"), args.out.join("noisy.seq"));
    save_sequence(&clean, &c)?;
    save_sequence(&noisy, &n)?;
    Ok(RunFiles {
        inputs: vec![],
        outputs: vec![("clean", c), ("noisy", n)],
    })
}

pub fn gen_manifest_path(args: &GenArgs) -> PathBuf {
    args.out.join("manifest.json")
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct InitArgs {
    /// Model config file (key=value); defaults apply when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn init(args: &InitArgs) -> Result<RunFiles> {
    let cfg = load_config(args.model.as_deref())?;
    let net = build_wnet(&cfg)?;
    net.validate_fusion(cfg.shift_ratio)?;
    save_weights(&init_weights(&net, args.seed), &args.out)?;
    Ok(RunFiles {
        inputs: args.model.iter().map(|p| ("model", p.clone())).collect(),
        outputs: vec![("weights", args.out.clone())],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Whole sequence as one clip.
    OfflineFull,
    /// Non-overlapping clips of --t-clip frames.
    OfflineMimo,
    /// Frame-by-frame bidirectional streaming.
    Pipeline,
    /// Frame-by-frame causal streaming (no latency).
    Unidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlushArg {
    /// Feed zero frames at the end of the stream.
    Paper,
    /// Zero-fill only the future features (matches offline results).
    Exact,
}

impl From<FlushArg> for FlushMode {
    fn from(f: FlushArg) -> Self {
        match f {
            FlushArg::Paper => FlushMode::PaperZeroFrames,
            FlushArg::Exact => FlushMode::ExactEos,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct DenoiseArgs {
    /// Model config file; defaults apply when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Weight file written by `init` or converted from a trained model.
    #[arg(long)]
    pub weights: PathBuf,
    /// Noisy sequence file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Pipeline)]
    pub mode: Mode,
    /// Clip length for offline-mimo.
    #[arg(long)]
    pub t_clip: Option<usize>,
    #[arg(long, value_enum, default_value_t = FlushArg::Exact)]
    pub flush: FlushArg,
    /// Noise level (0-255 scale) for the noise-map channel of non-blind models.
    #[arg(long)]
    pub sigma: Option<f32>,
    /// Output sequence file; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export every output frame as an 8-bit PPM/PGM here.
    #[arg(long)]
    pub ppm_dir: Option<PathBuf>,
}

fn trace_enabled() -> bool {
    std::env::var("BSVD_TRACE").is_ok_and(|v| v == "1")
}

fn stream(model: &Model, inputs: &[Tensor], flush: FlushMode, trace: bool) -> Result<Vec<Tensor>> {
    let (h, w) = (inputs[0].height(), inputs[0].width());
    let mut st = StreamState::new(model, h, w, flush)?;
    if trace {
        st.set_trace(Box::new(io::stderr()))?;
    }
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        out.extend(st.step(Some(x.clone()))?);
    }
    out.extend(st.flush()?);
    out.truncate(inputs.len());
    Ok(out.into_iter().map(|m| m.tensor).collect())
}

pub fn denoise(args: &DenoiseArgs) -> Result<RunFiles> {
    let cfg = load_config(args.model.as_deref())?;
    let net = build_wnet(&cfg)?;
    net.validate_fusion(cfg.shift_ratio)?;
    let weights = load_weights(&args.weights, &net)
        .with_context(|| format!("loading weights {}", args.weights.display()))?;
    let model = Model::new(net, weights)?;
    let noisy = load_sequence(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    check_unit_range(&noisy)?;
    let inputs = noisy
        .iter()
        .map(|f| assemble_input(f, args.sigma, &cfg))
        .collect::<vidbuf::Result<Vec<_>>>()?;
    if args.t_clip.is_some() && args.mode != Mode::OfflineMimo {
        bail!("--t-clip only applies to --mode offline-mimo");
    }
    let out = match args.mode {
        Mode::OfflineFull => forward_full_sequence_metered(&model, &inputs)?.0,
        Mode::OfflineMimo => {
            let t_clip = args.t_clip.context("--mode offline-mimo needs --t-clip")?;
            forward_clipped_mimo(&model, &inputs, ClipConfig::new(t_clip)?)?
        }
        Mode::Pipeline => stream(&model, &inputs, args.flush.into(), trace_enabled())?,
        Mode::Unidirectional => {
            let uni = model.with_fusion_mode(FusionMode::Unidirectional);
            stream(&uni, &inputs, args.flush.into(), trace_enabled())?
        }
    };
    save_sequence(&out, &args.out)?;
    if let Some(dir) = &args.ppm_dir {
        export_frames(&out, dir)?;
    }
    let mut inputs = vec![("weights", args.weights.clone()), ("input", args.input.clone())];
    inputs.extend(args.model.iter().map(|p| ("model", p.clone())));
    Ok(RunFiles {
        inputs,
        outputs: vec![("output", args.out.clone())],
    })
}

pub fn denoise_manifest_path(args: &DenoiseArgs) -> PathBuf {
    manifest_path_for(&args.out)
}

fn export_frames(frames: &[Tensor], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, f) in frames.iter().enumerate() {
        let ext = if f.channels() == 1 { "pgm" } else { "ppm" };
        save_pnm(f, dir.join(format!("frame_{i:04}.{ext}")))?;
    }
    Ok(())
}

#[derive(Args, Clone, Debug)]
pub struct VerifyArgs {
    /// First sequence.
    pub a: PathBuf,
    /// Second sequence.
    pub b: PathBuf,
    /// Clean reference; adds PSNR/SSIM columns for both sequences.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Largest per-frame absolute difference still counted as a pass.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f32,
    /// Write the JSON summary here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn verify(args: &VerifyArgs) -> Result<ExitCode> {
    let a = load_sequence(&args.a).with_context(|| format!("reading {}", args.a.display()))?;
    let b = load_sequence(&args.b).with_context(|| format!("reading {}", args.b.display()))?;
    ensure!(a.len() == b.len(), "sequences have {} and {} frames", a.len(), b.len());
    ensure!(a[0].dims() == b[0].dims(), "frame shapes differ: {:?} vs {:?}", a[0].dims(), b[0].dims());
    let maxabs: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x.max_abs_diff(y)).collect();
    let worst = maxabs.iter().copied().fold(0.0, f32::max);
    let mut stdout = io::stdout().lock();
    let summary = match &args.clean {
        Some(path) => {
            let clean = load_sequence(path).with_context(|| format!("reading {}", path.display()))?;
            let report = per_frame_report(&clean, &a, Some(&b))?;
            stdout.write_all(report.to_csv().as_bytes())?;
            serde_json::to_value(report.summary())?
        }
        None => {
            writeln!(stdout, "frame,maxabs")?;
            for (i, d) in maxabs.iter().enumerate() {
                writeln!(stdout, "{i},{d}")?;
            }
            json!({ "frames": a.len(), "max_abs": worst })
        }
    };
    let pass = worst <= args.threshold;
    if let Some(path) = &args.report {
        let mut s = summary;
        s["threshold"] = json!(args.threshold);
        s["pass"] = json!(pass);
        fs::write(path, serde_json::to_string_pretty(&s)? + "\n")?;
    }
    eprintln!(
        "max abs diff {worst} over {} frames (threshold {}): {}",
        a.len(),
        args.threshold,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileMode {
    Pipeline,
    OfflineFull,
    OfflineMimo,
    Fdvd,
}

#[derive(Args, Clone, Debug)]
pub struct ProfileArgs {
    /// Model config file; defaults apply when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Weights to profile; seeded weights are used when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pipeline,offline-full,offline-mimo,fdvd")]
    pub mode: Vec<ProfileMode>,
    /// Stream lengths.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    pub frames: Vec<usize>,
    /// Clip lengths for offline-mimo.
    #[arg(long, value_delimiter = ',', default_value = "8,16")]
    pub t_clip: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Noise level for non-blind models.
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f32,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn profile_pipeline(model: &Model, inputs: &[Tensor]) -> Result<Value> {
    let (h, w) = (inputs[0].height(), inputs[0].width());
    let mut st = StreamState::new(model, h, w, FlushMode::ExactEos)?;
    let report = st.report();
    let mut measured = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        st.step(Some(x.clone()))?;
        if i >= report.buffer_blocks {
            measured.push(st.state_bytes());
        }
    }
    st.flush()?;
    let constant = measured.windows(2).all(|p| p[0] == p[1]);
    Ok(json!({
        "frames": inputs.len(),
        "buffer_blocks": report.buffer_blocks,
        "latency": report.latency,
        "receptive_field": report.receptive_field,
        "state_bytes": measured.last(),
        "predicted_state_bytes": report.state_bytes,
        "state_bytes_constant": constant,
        "conv_evals_per_frame": st.conv_evals() as f64 / inputs.len() as f64,
    }))
}

fn profile_full(model: &Model, inputs: &[Tensor]) -> Result<Value> {
    let (_, stats) = forward_full_sequence_metered(model, inputs)?;
    Ok(json!({
        "frames": inputs.len(),
        "peak_activation_bytes": stats.peak_bytes,
        "conv_evals_per_frame": stats.conv_evals as f64 / inputs.len() as f64,
    }))
}

fn profile_mimo(model: &Model, inputs: &[Tensor], t_clip: usize) -> Result<Value> {
    let (_, stats) = forward_clipped_mimo_metered(model, inputs, ClipConfig::new(t_clip)?)?;
    Ok(json!({
        "frames": inputs.len(),
        "t_clip": t_clip,
        "peak_activation_bytes": stats.peak_bytes,
        "conv_evals_per_frame": stats.conv_evals as f64 / inputs.len() as f64,
    }))
}

fn profile_fdvd(cfg: &ModelConfig, seed: u64, frames: &[Tensor], sigma: f32) -> Result<Value> {
    let cascade = FdvdModel::seeded(cfg, seed, InitScheme::HeUniform)?;
    let sigma = cfg.uses_noise_map().then_some(sigma);
    let (_, pipe) = run_fdvd_pipeline(&cascade, frames, sigma)?;
    let (_, sliding) = fdvd_sliding_oracle(&cascade, frames, sigma)?;
    Ok(json!({
        "pipeline": pipe,
        "sliding": sliding,
        "ratio": sliding.per_frame / pipe.per_frame,
    }))
}

type Job<'a> = (&'static str, Box<dyn FnOnce() -> Result<Value> + Send + 'a>);

pub fn profile(args: &ProfileArgs) -> Result<()> {
    let cfg = load_config(args.model.as_deref())?;
    let net = build_wnet(&cfg)?;
    net.validate_fusion(cfg.shift_ratio)?;
    let weights = match &args.weights {
        Some(p) => load_weights(p, &net).with_context(|| format!("loading weights {}", p.display()))?,
        None => init_weights(&net, args.seed),
    };
    let model = Model::new(net, weights)?;
    ensure!(!args.frames.is_empty() && args.frames.iter().all(|&t| t > 0), "--frames needs positive lengths");
    let longest = *args.frames.iter().max().expect("non-empty");
    let clean = generate(Pattern::Translate, longest, cfg.image_channels(), args.height, args.width, args.seed);
    let noisy = add_noise(&clean, &NoiseSpec::awgn(args.sigma, args.seed.wrapping_add(1)))?;
    let inputs = noisy
        .iter()
        .map(|f| assemble_input(f, Some(args.sigma), &cfg))
        .collect::<vidbuf::Result<Vec<_>>>()?;

    let (model, inputs, noisy) = (&model, &inputs, &noisy);
    let mut jobs: Vec<Job> = Vec::new();
    for &mode in &args.mode {
        match mode {
            ProfileMode::Pipeline => {
                for &t in &args.frames {
                    jobs.push(("pipeline", Box::new(move || profile_pipeline(model, &inputs[..t]))));
                }
            }
            ProfileMode::OfflineFull => {
                for &t in &args.frames {
                    jobs.push(("offline_full", Box::new(move || profile_full(model, &inputs[..t]))));
                }
            }
            ProfileMode::OfflineMimo => {
                for &tc in &args.t_clip {
                    jobs.push(("offline_mimo", Box::new(move || profile_mimo(model, &inputs[..longest], tc))));
                }
            }
            ProfileMode::Fdvd => {
                let (cfg, seed, sigma) = (cfg.clone(), args.seed, args.sigma);
                let t = *args.frames.iter().min().expect("non-empty");
                jobs.push(("fdvd", Box::new(move || profile_fdvd(&cfg, seed, &noisy[..t], sigma))));
            }
        }
    }
    // Settings are independent, so each gets its own thread and state.
    let results: Vec<(&str, Result<Value>)> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(name, job)| (name, s.spawn(job)))
            .collect();
        handles
            .into_iter()
            .map(|(name, h)| (name, h.join().expect("profile worker panicked")))
            .collect()
    });
    let mut doc = json!({
        "engine": format!("vidbuf {}", env!("CARGO_PKG_VERSION")),
        "model": cfg.to_text().lines().collect::<Vec<_>>(),
        "height": args.height,
        "width": args.width,
    });
    for (name, r) in results {
        let v = r?;
        if name == "fdvd" {
            doc[name] = v;
        } else {
            match doc.get_mut(name) {
                Some(Value::Array(a)) => a.push(v),
                _ => doc[name] = json!([v]),
            }
        }
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Args, Clone, Debug)]
pub struct PpmExportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn ppm_export(args: &PpmExportArgs) -> Result<()> {
    export_frames(&load_sequence(&args.input)?, &args.out_dir)
}

#[derive(Args, Clone, Debug)]
pub struct PpmImportArgs {
    /// Sequence file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// PGM/PPM frames in temporal order.
    #[arg(required = true)]
    pub frames: Vec<PathBuf>,
}

pub fn ppm_import(args: &PpmImportArgs) -> Result<()> {
    let frames = args
        .frames
        .iter()
        .map(|p| load_pnm(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    save_sequence(&frames, &args.out)?;
    Ok(())
}
