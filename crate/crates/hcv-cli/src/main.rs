//! Command-line front end: flow estimation, synthetic pairs, evaluation,
//! memory accounting and the embedded selfcheck suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use hcv_core::{Error, LocalMode, RunConfig};

mod commands;

const USAGE: &str = "\
hcv — memory-efficient optical flow via hybrid cost volumes

USAGE:
    hcv estimate <img1> <img2> -o <out.flo> [--viz <out.ppm>] [config flags]
    hcv synth --shift <DX> <DY> --size <WxH> --seed <N> -o <dir>
    hcv eval <pred.flo> <gt.flo> [--mask]
    hcv bench-mem --size <WxH> [--levels <L>] [config flags]
    hcv selfcheck

CONFIG FLAGS (estimate, bench-mem):
    --d-h <N>          horizontal displacement range (default: level-16 width, max 128)
    --d-v <N>          vertical displacement range (default: level-16 height, max 128)
    --k <N>            retained candidates per slot (default 8)
    --l-r <N>          local window radius at 1/8 resolution (default 4)
    --r-g <N>          global lookup radius (default 3)
    --iters <N>        refinement iterations (default 24)
    --damping <X>      refinement step damping in [0, 1] (default 0.8)
    --temperature <X>  softmax temperature (default 0.006)
    --weights <path>   HCVW aggregation weights (default: built-in stack)
    --local <mode>     local correlation path: recentered | precomputed
    --threads <N>      worker threads (default: all cores; env HCV_THREADS)
    --config <path>    key = value config file, lower precedence than flags

EXIT CODES:
    0 success, 1 usage error, 2 format error, 3 selfcheck or eval failure
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Format { .. } | Error::Io { .. } => 2u8,
                _ => 1u8,
            })
        }
    }
}

fn run(args: &[String]) -> Result<ExitCode, Error> {
    let Some(cmd) = args.first() else {
        eprint!("{USAGE}");
        return Ok(ExitCode::from(1));
    };
    match cmd.as_str() {
        "estimate" => commands::estimate::run(&args[1..]),
        "synth" => commands::synth::run(&args[1..]),
        "eval" => commands::eval::run(&args[1..]),
        "bench-mem" => commands::bench_mem::run(&args[1..]),
        "selfcheck" => commands::selfcheck::run(&args[1..]),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(ExitCode::SUCCESS)
        }
        other => {
            eprintln!("error: unknown subcommand {other}\n");
            eprint!("{USAGE}");
            Ok(ExitCode::from(1))
        }
    }
}

/// Shared flag cursor for the subcommands.
pub struct ArgCursor<'a> {
    args: &'a [String],
    pos: usize,
    positional: Vec<&'a str>,
}

impl<'a> ArgCursor<'a> {
    pub fn new(args: &'a [String]) -> Self {
        ArgCursor {
            args,
            pos: 0,
            positional: Vec::new(),
        }
    }

    pub fn next_flag(&mut self) -> Option<&'a str> {
        while self.pos < self.args.len() {
            let a = self.args[self.pos].as_str();
            self.pos += 1;
            if a.starts_with("--") || a == "-o" {
                return Some(a);
            }
            self.positional.push(a);
        }
        None
    }

    pub fn value(&mut self, flag: &str) -> Result<&'a str, Error> {
        if self.pos >= self.args.len() {
            return Err(Error::InvalidArgument(format!("{flag} expects a value")));
        }
        let v = self.args[self.pos].as_str();
        self.pos += 1;
        Ok(v)
    }

    pub fn positional(self) -> Vec<&'a str> {
        let mut out = self.positional;
        out.extend(self.args[self.pos..].iter().map(|s| s.as_str()));
        out
    }
}

/// Parses `WxH` into (width, height).
pub fn parse_size(value: &str) -> Result<(usize, usize), Error> {
    let (w, h) = value
        .split_once('x')
        .ok_or_else(|| Error::InvalidArgument(format!("--size expects WxH, got {value}")))?;
    let w = w
        .trim()
        .parse::<usize>()
        .map_err(|e| Error::InvalidArgument(format!("bad width in --size: {e}")))?;
    let h = h
        .trim()
        .parse::<usize>()
        .map_err(|e| Error::InvalidArgument(format!("bad height in --size: {e}")))?;
    Ok((w, h))
}

/// Applies one config flag to the run configuration; returns false if the
/// flag is not a config flag.
pub fn apply_config_flag(
    cfg: &mut RunConfig,
    flag: &str,
    cursor: &mut ArgCursor,
) -> Result<bool, Error> {
    match flag {
        "--d-h" => cfg.d_h = Some(parse_usize(cursor.value(flag)?, flag)?),
        "--d-v" => cfg.d_v = Some(parse_usize(cursor.value(flag)?, flag)?),
        "--k" => cfg.k = parse_usize(cursor.value(flag)?, flag)?,
        "--l-r" => cfg.l_r = parse_usize(cursor.value(flag)?, flag)?,
        "--r-g" => cfg.r_g = parse_usize(cursor.value(flag)?, flag)?,
        "--iters" => cfg.iters = parse_usize(cursor.value(flag)?, flag)?,
        "--damping" => cfg.damping = parse_f32(cursor.value(flag)?, flag)?,
        "--temperature" => cfg.temperature = parse_f32(cursor.value(flag)?, flag)?,
        "--weights" => cfg.weights = Some(PathBuf::from(cursor.value(flag)?)),
        "--threads" => cfg.threads = Some(parse_usize(cursor.value(flag)?, flag)?),
        "--config" => {
            // handled up front by base_config; skip the value here
            cursor.value(flag)?;
        }
        "--local" => {
            cfg.local_mode = match cursor.value(flag)? {
                "recentered" => LocalMode::Recentered,
                "precomputed" => LocalMode::Precomputed,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "--local expects recentered or precomputed, got {other}"
                    )))
                }
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn parse_usize(value: &str, flag: &str) -> Result<usize, Error> {
    value
        .parse::<usize>()
        .map_err(|e| Error::InvalidArgument(format!("{flag}: {e}")))
}

pub fn parse_f32(value: &str, flag: &str) -> Result<f32, Error> {
    value
        .parse::<f32>()
        .map_err(|e| Error::InvalidArgument(format!("{flag}: {e}")))
}

pub fn parse_i64(value: &str, flag: &str) -> Result<i64, Error> {
    value
        .parse::<i64>()
        .map_err(|e| Error::InvalidArgument(format!("{flag}: {e}")))
}

/// Resolves the worker thread count: flag/config, then HCV_THREADS, then
/// the rayon default.
pub fn thread_count(cfg: &RunConfig) -> Option<usize> {
    cfg.threads.or_else(|| {
        std::env::var("HCV_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    })
}

/// Runs `f` inside a rayon pool of the configured width; results are
/// identical at any width.
pub fn with_threads<T>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, Error> + Send,
) -> Result<T, Error>
where
    T: Send,
{
    match threads {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
            pool.install(f)
        }
        _ => f(),
    }
}

/// Loads a config file if `--config` appears in the raw args, returning the
/// baseline configuration flags apply on top of.
pub fn base_config(args: &[String]) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            let path = args
                .get(i + 1)
                .ok_or_else(|| Error::InvalidArgument("--config expects a path".to_string()))?;
            cfg.apply_file(Path::new(path))?;
            i += 2;
        } else {
            i += 1;
        }
    }
    Ok(cfg)
}
