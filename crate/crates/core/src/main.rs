use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qpag::compile::{compile, equiv_check};
use qpag::format::{parse_machine, serialize_machine, Machine};
use qpag::model::{Signature, DEFAULT_TOL};
use qpag::ppa::run_ppa;
use qpag::problem1::{self, Instance, PromiseClass, SweepMode};
use qpag::qcpda::run_qcpda;
use qpag::sim::{run, RunOptions};
use qpag::validate::{audit_unitarity, check_ppa, check_qcpda, check_qpag, AuditOptions, Mode};

#[derive(Parser)]
#[command(name = "qpag", version, about = "Quantum pushdown automata workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check well-formedness of a machine file.
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "partial")]
        mode: ModeArg,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Check unitarity on the configurations reachable from one input.
    Audit {
        file: PathBuf,
        #[command(flatten)]
        word: WordArgs,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Run a machine on one input.
    Run {
        file: PathBuf,
        #[command(flatten)]
        word: WordArgs,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Record the K largest surviving amplitudes after every step (QPAG only).
        #[arg(long, value_name = "K")]
        trace: Option<usize>,
        /// Drop QCPDA branches below this probability.
        #[arg(long, default_value_t = 0.0)]
        prune_prob: f64,
    },
    /// Translate a QCPDA into an equivalent QPAG.
    Compile {
        file: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        /// Comma-separated words to compare both machines on.
        #[arg(long, allow_hyphen_values = true)]
        equiv_words: Option<String>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Tokens inside an equivalence word are separated by spaces.
        #[arg(long)]
        tokens: bool,
    },
    /// The promise problem and its exact machine.
    #[command(subcommand)]
    Problem1(Problem1Command),
}

#[derive(Subcommand)]
enum Problem1Command {
    /// Write the machine file.
    Build {
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Generate an instance of the requested class.
    Gen {
        #[arg(short = 'n')]
        n: usize,
        #[arg(long, value_enum)]
        class: ClassArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the machine with the classical oracle.
    Sweep {
        #[arg(short = 'n')]
        n: usize,
        #[arg(long, conflicts_with = "samples")]
        exhaustive: bool,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_steps: Option<usize>,
    },
}

#[derive(Args)]
struct WordArgs {
    /// Input word without endmarkers.
    #[arg(long, allow_hyphen_values = true)]
    input: String,
    /// Treat the input as comma-separated multi-character tokens.
    #[arg(long)]
    tokens: bool,
}

impl WordArgs {
    fn split(&self) -> Vec<String> {
        Signature::split_word(&self.input, self.tokens)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Partial,
    Total,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Yes,
    No,
}

/// A command's JSON output and whether it counts as success.
struct Outcome {
    json: String,
    ok: bool,
}

fn emit<T: Serialize>(value: &T, ok: bool) -> Result<Outcome> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    Ok(Outcome { json, ok })
}

fn load(path: &Path) -> Result<Machine> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_machine(&text).with_context(|| format!("{}", path.display()))
}

fn execute(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Check { file, mode, tol } => {
            let mode = match mode {
                ModeArg::Partial => Mode::Partial,
                ModeArg::Total => Mode::Total,
            };
            let report = match load(&file)? {
                Machine::Qpag(m) => check_qpag(&m, mode, tol),
                Machine::Qcpda(m) => check_qcpda(&m, mode, tol),
                Machine::Ppa(m) => check_ppa(&m, tol),
            };
            emit(&report, report.passed)
        }
        Command::Audit { file, word, depth, tol } => {
            let Machine::Qpag(m) = load(&file)? else {
                bail!("audit needs a qpag machine");
            };
            let opts = AuditOptions {
                depth,
                tol,
                ..Default::default()
            };
            let report = audit_unitarity(&m, &word.split(), &opts)?;
            emit(&report, report.passed)
        }
        Command::Run {
            file,
            word,
            max_steps,
            trace,
            prune_prob,
        } => {
            let w = word.split();
            let result = match load(&file)? {
                Machine::Qpag(m) => run(
                    &m,
                    &w,
                    &RunOptions {
                        max_steps,
                        trace_depth: trace,
                        ..Default::default()
                    },
                )?,
                Machine::Qcpda(m) => {
                    if !(0.0..1e-6).contains(&prune_prob) {
                        bail!("--prune-prob must lie in [0, 1e-6)");
                    }
                    run_qcpda(&m, &w, max_steps, prune_prob)?
                }
                Machine::Ppa(m) => run_ppa(&m, &w, max_steps)?,
            };
            emit(&result, true)
        }
        Command::Compile {
            file,
            output,
            equiv_words,
            max_steps,
            tol,
            tokens,
        } => {
            let Machine::Qcpda(m) = load(&file)? else {
                bail!("compile needs a qcpda machine");
            };
            let (compiled, map) = compile(&m)?;
            fs::write(&output, serialize_machine(&Machine::Qpag(compiled.clone())))
                .with_context(|| format!("cannot write {}", output.display()))?;
            let equiv = match equiv_words {
                Some(list) => {
                    let words: Vec<Vec<String>> = list
                        .split(',')
                        .map(|w| if tokens { w.split_whitespace().map(str::to_string).collect() } else { Signature::split_word(w, false) })
                        .collect();
                    Some(equiv_check(&m, &compiled, &words, max_steps, tol)?)
                }
                None => None,
            };
            #[derive(Serialize)]
            struct CompileOutput {
                output: String,
                map: qpag::compile::CompileMap,
                #[serde(skip_serializing_if = "Option::is_none")]
                equiv: Option<qpag::compile::EquivReport>,
            }
            let ok = equiv.as_ref().is_none_or(|e| e.passed);
            emit(
                &CompileOutput {
                    output: output.display().to_string(),
                    map,
                    equiv,
                },
                ok,
            )
        }
        Command::Problem1(p) => problem1_command(p),
    }
}

fn problem1_command(cmd: Problem1Command) -> Result<Outcome> {
    match cmd {
        Problem1Command::Build { output } => {
            let m = Machine::Qpag(problem1::build_problem1_machine());
            fs::write(&output, serialize_machine(&m)).with_context(|| format!("cannot write {}", output.display()))?;
            #[derive(Serialize)]
            struct Built {
                output: String,
                states: usize,
                transitions: usize,
            }
            let Machine::Qpag(q) = &m else { unreachable!() };
            emit(
                &Built {
                    output: output.display().to_string(),
                    states: q.signature().state_count(),
                    transitions: q.rules().len(),
                },
                true,
            )
        }
        Problem1Command::Gen { n, class, seed } => {
            let class = match class {
                ClassArg::Yes => PromiseClass::Yes,
                ClassArg::No => PromiseClass::No,
            };
            let inst: Instance = problem1::generate(n, class, seed)?;
            #[derive(Serialize)]
            struct Generated {
                n: usize,
                class: PromiseClass,
                seed: u64,
                instance: String,
            }
            emit(
                &Generated {
                    n,
                    class,
                    seed,
                    instance: inst.to_string(),
                },
                true,
            )
        }
        Problem1Command::Sweep {
            n,
            exhaustive,
            samples,
            seed,
            max_steps,
        } => {
            let mode = match (exhaustive, samples) {
                (_, Some(count)) => SweepMode::Sample { count, seed },
                (true, None) => SweepMode::Exhaustive,
                (false, None) => {
                    if problem1::instance_count(n) <= problem1::EXHAUSTIVE_CAP {
                        SweepMode::Exhaustive
                    } else {
                        SweepMode::Sample { count: 500, seed }
                    }
                }
            };
            let report = problem1::sweep(n, mode, max_steps)?;
            emit(&report, report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(out) => {
            print!("{}", out.json);
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}", format_chain(&e));
            ExitCode::from(2)
        }
    }
}

fn format_chain(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ")
}
