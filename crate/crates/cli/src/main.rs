mod commands;
mod manifest;
mod pattern;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{
    denoise, denoise_manifest_path, gen, gen_manifest_path, init, ppm_export, ppm_import, profile, verify,
    DenoiseArgs, GenArgs, InitArgs, PpmExportArgs, PpmImportArgs, ProfileArgs, VerifyArgs,
};
use manifest::{manifest_path_for, sha256_file, Run, RunManifest};

/// Streaming video denoiser with bidirectional temporal buffers.
///
/// Noise levels given with --sigma are on the 0-255 scale; sequence values
/// are on [0, 1].
#[derive(Parser)]
#[command(name = "vidbuf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clean/noisy sequence pair.
    Gen(GenArgs),
    /// Write seeded weights for a model config.
    Init(InitArgs),
    /// Denoise a sequence offline or as a stream.
    Denoise(DenoiseArgs),
    /// Compare two sequences frame by frame (exit 0 pass, 1 fail, 2 error).
    Verify(VerifyArgs),
    /// Report memory and evaluation counts as JSON.
    Profile(ProfileArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
    /// Convert between sequences and 8-bit PGM/PPM frames.
    #[command(subcommand)]
    Ppm(PpmCommand),
}

#[derive(Subcommand)]
enum PpmCommand {
    Export(PpmExportArgs),
    Import(PpmImportArgs),
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Re-run into a scratch directory and compare output digests instead
    /// of overwriting the recorded outputs.
    #[arg(long)]
    check: bool,
}

fn execute(run: &Run) -> Result<()> {
    let (files, path) = match run {
        Run::Gen(a) => (gen(a)?, gen_manifest_path(a)),
        Run::Init(a) => (init(a)?, manifest_path_for(&a.out)),
        Run::Denoise(a) => (denoise(a)?, denoise_manifest_path(a)),
    };
    RunManifest::new(run.clone(), &files)?.save(&path)
}

/// Points every output of `run` into `dir`.
fn redirect(run: &Run, dir: &Path) -> Run {
    match run.clone() {
        Run::Gen(a) => Run::Gen(GenArgs {
            out: dir.join("gen"),
            ..a
        }),
        Run::Init(a) => Run::Init(InitArgs {
            out: dir.join("weights.bin"),
            ..a
        }),
        Run::Denoise(a) => Run::Denoise(DenoiseArgs {
            out: dir.join("output.seq"),
            ppm_dir: a.ppm_dir.as_ref().map(|_| dir.join("ppm")),
            ..a
        }),
    }
}

fn replay(args: &ReplayArgs) -> Result<ExitCode> {
    let recorded = RunManifest::load(&args.manifest)?;
    if !args.check {
        execute(&recorded.run)?;
        return Ok(ExitCode::SUCCESS);
    }
    let mut ok = true;
    for (role, d) in &recorded.inputs {
        let now = sha256_file(&d.path)?;
        if now != d.sha256 {
            eprintln!("input {role} ({}) changed since the recorded run", d.path.display());
            ok = false;
        }
    }
    let scratch = std::env::temp_dir().join(format!("vidbuf-replay-{}", std::process::id()));
    std::fs::create_dir_all(&scratch)?;
    let rerun = redirect(&recorded.run, &scratch);
    let result = execute(&rerun).and_then(|()| {
        let manifest = match &rerun {
            Run::Gen(a) => gen_manifest_path(a),
            Run::Init(a) => manifest_path_for(&a.out),
            Run::Denoise(a) => denoise_manifest_path(a),
        };
        RunManifest::load(&manifest)
    });
    let fresh = result.inspect_err(|_| {
        let _ = std::fs::remove_dir_all(&scratch);
    })?;
    for (role, d) in &recorded.outputs {
        match fresh.outputs.get(role) {
            Some(f) if f.sha256 == d.sha256 => println!("{role}: {} reproduced", d.sha256),
            Some(f) => {
                println!("{role}: recorded {} but got {}", d.sha256, f.sha256);
                ok = false;
            }
            None => {
                println!("{role}: not produced by the re-run");
                ok = false;
            }
        }
    }
    std::fs::remove_dir_all(&scratch).context("removing scratch directory")?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen(a) => execute(&Run::Gen(a))?,
        Command::Init(a) => execute(&Run::Init(a))?,
        Command::Denoise(a) => execute(&Run::Denoise(a))?,
        Command::Verify(a) => return verify(&a),
        Command::Profile(a) => profile(&a)?,
        Command::Replay(a) => return replay(&a),
        Command::Ppm(PpmCommand::Export(a)) => ppm_export(&a)?,
        Command::Ppm(PpmCommand::Import(a)) => ppm_import(&a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
