//! Command-line driver around the simulator library.
//!
//! `run` executes one program under one config and leaves a self-contained
//! run directory behind: the canonical config render, the program source,
//! stats, per-core commit traces and the post-drain structure dump. Such a
//! directory doubles as a checkpoint, since config plus program fully
//! determine a run; `compare` and `dump` re-execute from it rather than
//! trusting the saved artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use precache_sim::config::{Mode, SimConfig};
use precache_sim::harness::{self, run_attack, Gadget, Verdict};
use precache_sim::isa::{assemble, Program};
use precache_sim::trace::render_trace;

#[derive(Parser)]
#[command(name = "precache", version, about = "Transient-execution cache defense simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program under a config and write a run directory.
    Run {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Assembly program to execute.
        #[arg(long)]
        program: PathBuf,
        /// Output directory for the run artifacts.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in attack gadget under both secrets and report a verdict.
    Attack {
        /// Gadget: meltdown, spectre, imeltdown or ispectre.
        #[arg(long)]
        name: String,
        /// Machine mode: baseline or precache.
        #[arg(long)]
        mode: String,
    },
    /// Re-execute two run directories and compare them architecturally.
    Compare {
        a: PathBuf,
        b: PathBuf,
    },
    /// Run random programs against the reference interpreter in both modes.
    Fuzz {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: u32,
        /// Core count for every generated program.
        #[arg(long, default_value_t = 1)]
        cores: u32,
    },
    /// Re-execute a run directory and print its structure dump.
    Dump {
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, String> {
    match cmd {
        Cmd::Run { config, program, out } => cmd_run(&config, &program, &out),
        Cmd::Attack { name, mode } => cmd_attack(&name, &mode),
        Cmd::Compare { a, b } => cmd_compare(&a, &b),
        Cmd::Fuzz { seed, count, cores } => cmd_fuzz(seed, count, cores),
        Cmd::Dump { dir } => cmd_dump(&dir),
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_config(path: &Path) -> Result<SimConfig, String> {
    SimConfig::parse(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_program(path: &Path) -> Result<(String, Program), String> {
    let src = read(path)?;
    let prog = assemble(&src).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((src, prog))
}

/// Reads the config and program a `run` invocation saved.
fn load_run_dir(dir: &Path) -> Result<(SimConfig, Program), String> {
    let cfg = load_config(&dir.join("config.txt"))?;
    let (_, prog) = load_program(&dir.join("program.pasm"))?;
    Ok((cfg, prog))
}

fn cmd_run(config: &Path, program: &Path, out: &Path) -> Result<ExitCode, String> {
    let cfg = load_config(config)?;
    let (src, prog) = load_program(program)?;
    let outcome = harness::run_program(&cfg, &prog);

    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    write(&out.join("config.txt"), &cfg.render())?;
    write(&out.join("program.pasm"), &src)?;
    write(&out.join("stats.csv"), &outcome.stats.to_csv())?;
    write(&out.join("dump.txt"), &outcome.dump)?;
    for (core, trace) in outcome.traces.iter().enumerate() {
        write(&out.join(format!("trace_core{core}.txt")), &render_trace(trace))?;
    }

    let s = &outcome.stats;
    println!(
        "mode={} cores={} cycles={} committed={} ipc={:.4}",
        cfg.mode, cfg.cores, s.cycles, s.committed, s.ipc()
    );
    if s.max_cycles_exceeded {
        eprintln!("warning: stopped at max_cycles before all cores halted");
    }
    println!("wrote {}", out.display());

    if !outcome.violations.is_empty() {
        write(&out.join("violations.txt"), &(outcome.violations.join("\n") + "\n"))?;
        eprintln!("{} invariant violation(s), see violations.txt", outcome.violations.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "baseline" => Ok(Mode::Baseline),
        "precache" => Ok(Mode::Precache),
        other => Err(format!("unknown mode `{other}` (expected baseline or precache)")),
    }
}

fn cmd_attack(name: &str, mode: &str) -> Result<ExitCode, String> {
    let gadget = Gadget::parse(name).ok_or_else(|| {
        format!("unknown gadget `{name}` (expected meltdown, spectre, imeltdown or ispectre)")
    })?;
    let mode = parse_mode(mode)?;
    let report = run_attack(gadget, mode);
    print!("{}", report.render());

    // The defended machine must contain the leak; the undefended one must
    // demonstrate it, or the gadget proves nothing.
    let expected = match mode {
        Mode::Baseline => Verdict::SecretObservable,
        Mode::Precache => Verdict::Contained,
    };
    if report.verdict() == expected {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("expected {expected} under {mode}");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_compare(a: &Path, b: &Path) -> Result<ExitCode, String> {
    let (cfg_a, prog_a) = load_run_dir(a)?;
    let (cfg_b, prog_b) = load_run_dir(b)?;
    let run_a = harness::run_program(&cfg_a, &prog_a);
    let run_b = harness::run_program(&cfg_b, &prog_b);
    let report = harness::compare_runs(&run_a, &run_b);
    if report.equivalent {
        println!("equivalent: {} vs {}", a.display(), b.display());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("divergence: {}", report.divergence.as_deref().unwrap_or("unknown"));
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_fuzz(seed: u64, count: u32, cores: u32) -> Result<ExitCode, String> {
    let report = harness::fuzz(seed, count, cores);
    print!("{}", report.render());
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_dump(dir: &Path) -> Result<ExitCode, String> {
    let (cfg, prog) = load_run_dir(dir)?;
    let outcome = harness::run_program(&cfg, &prog);
    print!("{}", outcome.dump);
    Ok(ExitCode::SUCCESS)
}
