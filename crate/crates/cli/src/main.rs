//! Command-line driver: lowering, fusion, equivalence checks, and metrics
//! over JSON program files.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use blockfuse::engine::{fuse, EngineConfig};
use blockfuse::examples::Example;
use blockfuse::frontend::{parse_program, to_dot, to_pseudocode, Program, ProgramFile};
use blockfuse::interp::{check_equivalence, DimBinding, Tolerance};
use blockfuse::ir::BlockProgram;
use blockfuse::lower::lower;
use blockfuse::metrics::{report, TrafficModel};
use blockfuse::rules::Rule;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

/// Exit status when `verify` runs but the programs disagree.
const EXIT_MISMATCH: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "blockfuse", version, about = "Lower, fuse, and check block programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lower an array program to a block program.
    Lower {
        /// Array program file, or `-` for stdin.
        input: String,
        /// Destination, or `-` for stdout.
        #[arg(short, long, default_value = "-")]
        output: String,
    },
    /// Fuse a program, writing every snapshot with its DOT, pseudocode and trace.
    Fuse {
        /// Block or array program file, or `-` for stdin. Array programs are lowered first.
        input: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated rule priority, e.g. `R8,R4,R5,R9,R3,R1,R2`.
        #[arg(long, value_delimiter = ',')]
        rules: Option<Vec<Rule>>,
        /// Stop at the first fixpoint instead of extending maps.
        #[arg(long)]
        no_extend: bool,
        /// Allow peeling when no map can be extended.
        #[arg(long)]
        peel: bool,
        #[arg(long, default_value_t = 10_000)]
        max_rounds: usize,
    },
    /// Check two programs for equal outputs on random inputs.
    Verify {
        first: String,
        second: String,
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Relative tolerance; an absolute slack of 1e-12 is always added.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Report buffered edges, kernel count, and modeled memory traffic.
    Metrics {
        input: String,
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value_t = 4)]
        elem_bytes: usize,
    },
    /// Print a built-in array program.
    Examples {
        #[arg(value_parser = parse_example)]
        name: Example,
    },
}

#[derive(Debug, Args)]
struct ShapeArgs {
    /// Block counts per dimension, e.g. `M=2,N=2,D=2,L=2`.
    #[arg(long, value_delimiter = ',', value_parser = parse_assign, required = true)]
    dims: Vec<(String, usize)>,
    /// Block edge lengths as `RxC`; both must be equal since blocks are
    /// sized per dimension. Override single dims with `--edge`.
    #[arg(long, default_value = "4x4", value_parser = parse_block)]
    block: usize,
    /// Per-dimension block edge lengths, e.g. `D=8`.
    #[arg(long, value_delimiter = ',', value_parser = parse_assign)]
    edge: Vec<(String, usize)>,
}

impl ShapeArgs {
    fn binding(&self) -> DimBinding {
        let mut b = DimBinding::new();
        b.default_edge = Some(self.block);
        for (d, n) in &self.dims {
            b = b.with_count(d, *n);
        }
        for (d, n) in &self.edge {
            b = b.with_edge(d, *n);
        }
        b
    }
}

fn parse_example(s: &str) -> Result<Example, String> {
    s.parse()
}

fn parse_assign(s: &str) -> Result<(String, usize), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=COUNT, got {s:?}"))?;
    let n: usize = v.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if n == 0 {
        return Err(format!("{s:?}: must be positive"));
    }
    Ok((k.trim().to_string(), n))
}

fn parse_block(s: &str) -> Result<usize, String> {
    let (r, c) = s.split_once(['x', 'X']).unwrap_or((s, s));
    let (r, c): (usize, usize) =
        (r.trim().parse().map_err(|e| format!("{s:?}: {e}"))?, c.trim().parse().map_err(|e| format!("{s:?}: {e}"))?);
    if r != c {
        return Err(format!("{s:?}: blocks are sized per dimension; use a square size and --edge DIM=N"));
    }
    if r == 0 {
        return Err(format!("{s:?}: must be positive"));
    }
    Ok(r)
}

fn read_text(path: &str) -> Result<String> {
    if path == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {path}"))
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e).context("writing stdout"),
        _ => Ok(()),
    }
}

fn write_text(path: &str, text: &str) -> Result<()> {
    if path == "-" {
        emit(text)
    } else {
        fs::write(path, text).with_context(|| format!("writing {path}"))
    }
}

fn read_file(path: &str) -> Result<ProgramFile> {
    let parsed = parse_program(&read_text(path)?).with_context(|| format!("parsing {path}"))?;
    Ok(parsed.file)
}

/// The block program in `path`, lowering it first if it is an array program.
fn read_block(path: &str) -> Result<BlockProgram> {
    match read_file(path)?.program {
        Program::Block(p) => Ok(p),
        Program::Array(ap) => {
            info!("{path}: lowering array program");
            lower(&ap).with_context(|| format!("lowering {path}"))
        }
    }
}

fn write_artifact(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Lower { input, output } => {
            let ap = match read_file(&input)?.program {
                Program::Array(ap) => ap,
                Program::Block(_) => bail!("{input}: already a block program"),
            };
            let p = lower(&ap).with_context(|| format!("lowering {input}"))?;
            write_text(&output, &(ProgramFile::block(p).to_json() + "\n"))?;
        }
        Command::Fuse { input, out_dir, rules, no_extend, peel, max_rounds } => {
            let p = read_block(&input)?;
            let mut cfg = EngineConfig::default();
            if let Some(r) = rules {
                cfg.priority = r;
            }
            cfg.enable_extend = !no_extend;
            cfg.enable_peel = peel;
            cfg.max_rounds = max_rounds;
            let snaps = fuse(&p, &cfg)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut log = String::new();
            for s in &snaps {
                let k = s.round_index;
                write_artifact(
                    &out_dir,
                    &format!("snapshot_{k}.json"),
                    &(ProgramFile::block(s.program.clone()).to_json() + "\n"),
                )?;
                write_artifact(&out_dir, &format!("snapshot_{k}.dot"), &to_dot(&s.program))?;
                write_artifact(&out_dir, &format!("snapshot_{k}.txt"), &to_pseudocode(&s.program))?;
                log.push_str(&format!("# snapshot {k}\n"));
                for m in &s.trace {
                    log.push_str(&format!("{m}\n"));
                }
            }
            write_artifact(&out_dir, "trace.log", &log)?;
            let all: Vec<_> = snaps.iter().flat_map(|s| s.trace.iter().cloned()).collect();
            let json = serde_json::to_string_pretty(&all).context("serializing trace")?;
            write_artifact(&out_dir, "trace.json", &(json + "\n"))?;
            emit(&format!(
                "{} snapshot(s), {} rule application(s) written to {}\n",
                snaps.len(),
                all.len(),
                out_dir.display()
            ))?;
        }
        Command::Verify { first, second, shape, trials, seed, tol } => {
            let (p1, p2) = (read_block(&first)?, read_block(&second)?);
            let r = check_equivalence(&p1, &p2, &shape.binding(), trials, seed, Tolerance::relative(tol))?;
            emit(&(serde_json::to_string_pretty(&r).context("serializing report")? + "\n"))?;
            if !r.passed {
                warn!("{} element(s) outside tolerance", r.mismatches);
                eprintln!(
                    "programs differ: {} mismatching element(s), max relative error {:e}",
                    r.mismatches, r.max_rel_err
                );
                return Ok(ExitCode::from(EXIT_MISMATCH));
            }
        }
        Command::Metrics { input, shape, elem_bytes } => {
            if elem_bytes == 0 {
                return Err(anyhow!("--elem-bytes must be positive"));
            }
            let p = read_block(&input)?;
            let r = report(&p, &shape.binding(), TrafficModel { elem_bytes })?;
            emit(&(serde_json::to_string_pretty(&r).context("serializing report")? + "\n"))?;
        }
        Command::Examples { name } => {
            emit(&(ProgramFile::array(name.program()).to_json() + "\n"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BLOCKFUSE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
