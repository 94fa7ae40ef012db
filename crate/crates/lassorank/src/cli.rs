//! Command-line front end.
//!
//! Exit codes: 0 verified/valid, 1 termination not proven or certificate
//! invalid, 2 input error, 3 solver failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::argument::{sample_execution, verify_certificate, TraceEnd, Verdict};
use crate::constraints::{branches_are_linear, dump_system, InvariantMode};
use crate::parse::LassoProgram;
use crate::pipeline::{
    build_system, load_program, synthesize, PipelineConfig, PipelineError, SynthesisOutcome,
};
use crate::rational::fmt_rational;
use crate::report::{parse_report, render_failure, render_human, render_report};
use crate::solver::{emit_smtlib, SolverConfig};
use crate::templates::{parse_template_spec, TemplateKind};

pub const EXIT_PROVEN: i32 = 0;
pub const EXIT_NOT_PROVEN: i32 = 1;
pub const EXIT_INPUT_ERROR: i32 = 2;
pub const EXIT_SOLVER_FAILURE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "lassorank",
    version,
    about = "Synthesizes and checks termination arguments for linear lasso programs"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a ranking function and supporting invariants
    Synthesize(SynthesizeArgs),
    /// Check a serialized termination argument against a program
    Check(CheckArgs),
    /// Print the stem/loop normal form
    Normalize(NormalizeArgs),
    /// Emit the constraint system as an SMT-LIB script without solving
    EmitSmt(EmitSmtArgs),
    /// Sample and print an execution of the program
    Execute(ExecuteArgs),
}

#[derive(Args)]
struct CommonOpts {
    /// Input program file
    input: PathBuf,
    /// Template: affine, phase:k, piece:k or lex:k
    #[arg(long, default_value = "affine")]
    template: String,
    /// Number of supporting-invariant slots
    #[arg(long, default_value_t = 1)]
    invariants: usize,
    /// Restrict invariants to non-decreasing ones
    #[arg(long)]
    nondecreasing: bool,
    /// 1-based invariant slot to make strict (repeatable)
    #[arg(long = "strict-invariant")]
    strict_invariant: Vec<usize>,
    /// Solver cascade: comma list of internal, chi, smt:<command>
    #[arg(long, default_value = "internal,chi")]
    solver: String,
    /// External solver timeout in seconds
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    /// Candidate-enumeration depth for residual non-linear multipliers
    #[arg(long = "chi-depth", default_value_t = 1)]
    chi_depth: u32,
    /// Cap on explored branches
    #[arg(long = "branch-cap", default_value_t = 65536)]
    branch_cap: u64,
    /// Cap on normal-form disjuncts
    #[arg(long = "dnf-cap", default_value_t = 64)]
    dnf_cap: usize,
}

impl CommonOpts {
    fn pipeline_config(&self) -> Result<PipelineConfig, String> {
        let (template_kind, k) =
            parse_template_spec(&self.template).map_err(|e| e.to_string())?;
        let strategies =
            SolverConfig::parse_strategies(&self.solver).map_err(|e| e.to_string())?;
        let mut strict_slots = vec![false; self.invariants];
        for slot in &self.strict_invariant {
            if *slot == 0 || *slot > self.invariants {
                return Err(format!("strict-invariant slot {slot} out of range"));
            }
            strict_slots[slot - 1] = true;
        }
        Ok(PipelineConfig {
            template_kind,
            k,
            num_invariants: self.invariants,
            mode: if self.nondecreasing {
                InvariantMode::NonDecreasing
            } else {
                InvariantMode::General
            },
            strict_slots,
            solver: SolverConfig {
                strategies,
                timeout_secs: self.timeout,
                branch_cap: self.branch_cap,
                chi_depth: self.chi_depth,
            },
            dnf_cap: self.dnf_cap,
        })
    }
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Output format
    #[arg(long, default_value = "human")]
    format: Format,
    /// Try affine, phase:2..k, lex:2..k and piece:2..k in order and
    /// report the first verified argument
    #[arg(long = "try-all")]
    try_all: Option<usize>,
    /// Seed recorded in reports (reserved for sampling-based commands)
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CheckArgs {
    /// Input program file
    input: PathBuf,
    /// Serialized argument/certificate file
    #[arg(long)]
    argument: PathBuf,
}

#[derive(Args)]
struct NormalizeArgs {
    input: PathBuf,
    #[arg(long = "dnf-cap", default_value_t = 64)]
    dnf_cap: usize,
}

#[derive(Args)]
struct EmitSmtArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Output file for the SMT-LIB script (defaults to <input>.smt2)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also print the constraint-system debug dump
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct ExecuteArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-steps", default_value_t = 50)]
    max_steps: usize,
    #[arg(long = "dnf-cap", default_value_t = 64)]
    dnf_cap: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Human,
    Structured,
}

fn read_program(path: &PathBuf, dnf_cap: usize) -> Result<LassoProgram, (i32, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| (EXIT_INPUT_ERROR, format!("cannot read {}: {e}", path.display())))?;
    load_program(&text, dnf_cap).map_err(|e| (EXIT_INPUT_ERROR, format!("{}: {e}", path.display())))
}

fn pipeline_exit(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Parse(_) | PipelineError::Template(_) => EXIT_INPUT_ERROR,
        PipelineError::Solver(_) => EXIT_SOLVER_FAILURE,
        PipelineError::Argument(_) => EXIT_SOLVER_FAILURE,
    }
}

fn cmd_synthesize(args: &SynthesizeArgs) -> i32 {
    let base = match args.common.pipeline_config() {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_INPUT_ERROR;
        }
    };
    let prog = match read_program(&args.common.input, base.dnf_cap) {
        Ok(p) => p,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let specs: Vec<(TemplateKind, usize)> = match args.try_all {
        None => vec![(base.template_kind, base.k)],
        Some(kmax) => {
            let mut specs = vec![(TemplateKind::Affine, 1)];
            for kind in [TemplateKind::Phase, TemplateKind::Lex, TemplateKind::Piece] {
                for k in 2..=kmax.max(1) {
                    specs.push((kind, k));
                }
            }
            specs
        }
    };
    let structured = args.format == Format::Structured;
    let mut last_reason = String::from("constraints unsatisfiable");
    for (kind, k) in specs {
        let cfg = PipelineConfig {
            template_kind: kind,
            k,
            ..base.clone()
        };
        match synthesize(&prog, &cfg) {
            Ok(result) => match result.outcome {
                SynthesisOutcome::Proven(arg) => {
                    let text = if structured {
                        render_report(&prog, &arg, &result.extras)
                    } else {
                        render_human(&prog, &arg, &result.extras)
                    };
                    print!("{text}");
                    return EXIT_PROVEN;
                }
                SynthesisOutcome::Unsat => last_reason = "constraints unsatisfiable".into(),
                SynthesisOutcome::Unknown(reason) => last_reason = reason,
            },
            Err(e) => {
                eprintln!("error: {e}");
                return pipeline_exit(&e);
            }
        }
    }
    print!("{}", render_failure("NOT_PROVEN", &last_reason, structured));
    EXIT_NOT_PROVEN
}

fn cmd_check(args: &CheckArgs) -> i32 {
    let prog = match read_program(&args.input, crate::parse::DEFAULT_DNF_CAP) {
        Ok(p) => p,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let text = match std::fs::read_to_string(&args.argument) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.argument.display());
            return EXIT_INPUT_ERROR;
        }
    };
    let parsed = match parse_report(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: malformed argument file: {e}");
            return EXIT_INPUT_ERROR;
        }
    };
    let arg = match parsed.bind(&prog) {
        Ok(a) => a,
        Err(reason) => {
            println!("INVALID: {reason}");
            return EXIT_NOT_PROVEN;
        }
    };
    match verify_certificate(&prog, &arg) {
        Verdict::Valid => {
            println!("VALID");
            EXIT_PROVEN
        }
        Verdict::Invalid(reason) => {
            println!("INVALID: {reason}");
            EXIT_NOT_PROVEN
        }
    }
}

fn cmd_normalize(args: &NormalizeArgs) -> i32 {
    let prog = match read_program(&args.input, args.dnf_cap) {
        Ok(p) => p,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let order = prog.display_order();
    println!("#N = {}", prog.stem.len());
    println!("#M = {}", prog.loop_.len());
    for (i, disjunct) in prog.stem.iter().enumerate() {
        println!("stem disjunct {}:", i + 1);
        for atom in disjunct.atoms() {
            println!("  {}", crate::linear::fmt_atom(atom, &order, |v| prog.name(v)));
        }
    }
    for (m, disjunct) in prog.loop_.iter().enumerate() {
        println!("loop disjunct {}:", m + 1);
        for atom in disjunct.atoms() {
            println!("  {}", crate::linear::fmt_atom(atom, &order, |v| prog.name(v)));
        }
    }
    EXIT_PROVEN
}

fn cmd_emit_smt(args: &EmitSmtArgs) -> i32 {
    let cfg = match args.common.pipeline_config() {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_INPUT_ERROR;
        }
    };
    let prog = match read_program(&args.common.input, cfg.dnf_cap) {
        Ok(p) => p,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let (template, sys) = match build_system(&prog, &cfg) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return pipeline_exit(&e);
        }
    };
    let script = emit_smtlib(&sys);
    let out_path = args
        .output
        .clone()
        .unwrap_or_else(|| args.common.input.with_extension("smt2"));
    if let Err(e) = std::fs::write(&out_path, script) {
        eprintln!("error: cannot write {}: {e}", out_path.display());
        return EXIT_INPUT_ERROR;
    }
    let (naive, bound) = crate::constraints::predicted_dimensions(
        &prog,
        &template,
        cfg.num_invariants,
        cfg.mode,
    );
    let actual = crate::constraints::nonlinear_dimension(&sys);
    println!("non-linear dimension: {actual}");
    println!("predicted: naive {naive}, transformed bound {bound}");
    println!("linear: {}", if branches_are_linear(&sys) { "yes" } else { "no" });
    println!("subsystems: {}", sys.subsystems.len());
    println!("branches-total: {}", sys.total_branches());
    println!("wrote: {}", out_path.display());
    if args.dump {
        print!("{}", dump_system(&sys));
    }
    EXIT_PROVEN
}

fn cmd_execute(args: &ExecuteArgs) -> i32 {
    let prog = match read_program(&args.input, args.dnf_cap) {
        Ok(p) => p,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let trace = sample_execution(&prog, args.max_steps, args.seed);
    if !trace.stem_satisfied {
        println!("no execution");
        return EXIT_PROVEN;
    }
    for (i, state) in trace.states.iter().enumerate() {
        let rendered: Vec<String> = (0..prog.n())
            .map(|j| {
                let v = &state[&crate::linear::Var(j as u32)];
                format!("{} = {}", prog.var_names[j], fmt_rational(v))
            })
            .collect();
        println!("state {i}: {}", rendered.join(", "));
    }
    println!("length: {}", trace.states.len());
    println!(
        "ended: {}",
        match trace.ended {
            TraceEnd::LoopExit => "loop-exit",
            TraceEnd::StepCap => "step cap",
        }
    );
    EXIT_PROVEN
}

/// Parses arguments and runs the selected command, returning the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version with success exits
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match &cli.command {
        Command::Synthesize(args) => cmd_synthesize(args),
        Command::Check(args) => cmd_check(args),
        Command::Normalize(args) => cmd_normalize(args),
        Command::EmitSmt(args) => cmd_emit_smt(args),
        Command::Execute(args) => cmd_execute(args),
    }
}
