//! `dfa`: assemble, instrument, run, attest and verify operations on the
//! emulated prover.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use dfa_core::corpus::{build_app, inject_attack, load_app, App, AttackKind, Variant, APP_NAMES};
use dfa_core::emulator::{run_operation, ExecutionResult, DEFAULT_MAX_STEPS};
use dfa_core::instrument::{instrument, InstrumentMode};
use dfa_core::isa::{encode, parse_assembly, render, Program};
use dfa_core::layout::MemoryLayout;
use dfa_core::metrics::{measure_all, to_csv, to_table};
use dfa_core::pox::{random_challenge, AttestationKey, Challenge, Device, Report, CHALLENGE_LEN};
use dfa_core::trace::PeripheralTrace;
use dfa_core::verifier::{parse_objects, verify, verify_fresh, NonceStore, Policies};

const EX_USAGE: u8 = 64;
const EX_DATAERR: u8 = 65;
const EX_IOERR: u8 = 74;

#[derive(Parser)]
#[command(name = "dfa", version, about = "Data-flow attestation workbench for a 16-bit MCU model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a program into a raw code image.
    Asm {
        input: PathBuf,
        /// Load address of the image.
        #[arg(long, default_value = "0xE000", value_parser = parse_u16)]
        base: u16,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rewrite a program with control-flow or control-plus-data-flow logging.
    Instrument {
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        layout: PathBuf,
        /// Defaults to standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one operation and print its outcome.
    Run {
        program: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Run one operation on the prover and write the signed report.
    Attest {
        program: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        key: PathBuf,
        /// 16-byte challenge in hex; random if omitted.
        #[arg(long, value_parser = parse_challenge)]
        challenge: Option<Challenge>,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check a report against the program the device should have run.
    Verify {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Expected challenge in hex; taken from the report if omitted.
        #[arg(long, value_parser = parse_challenge)]
        challenge: Option<Challenge>,
        /// Check transfers against the control-flow graph and a shadow stack.
        #[arg(long)]
        cfg_policy: bool,
        /// Objects file for the write-bounds check.
        #[arg(long)]
        data_policy: Option<PathBuf>,
        /// File of challenges already accepted.
        #[arg(long)]
        nonce_store: Option<PathBuf>,
    },
    /// Run a corpus attack through instrumentation, attestation and verification.
    DemoAttack {
        app: String,
        #[arg(value_parser = clap::value_parser!(AttackKind))]
        kind: AttackKind,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Measure code size, cycles and log size for every corpus app.
    Bench {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct ExecArgs {
    /// Up to eight comma-separated argument words for r8..r15.
    #[arg(long, value_delimiter = ',', value_parser = parse_u16)]
    args: Vec<u16>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cfa,
    Dfa,
}

impl From<Mode> for InstrumentMode {
    fn from(m: Mode) -> InstrumentMode {
        match m {
            Mode::Cfa => InstrumentMode::CfaOnly,
            Mode::Dfa => InstrumentMode::CfaPlusDfa,
        }
    }
}

fn parse_u16(s: &str) -> Result<u16, String> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u16::from_str_radix(h, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("`{s}`: {e}"))
}

fn parse_challenge(s: &str) -> Result<Challenge, String> {
    let bytes = hex::decode(s.trim()).map_err(|e| e.to_string())?;
    bytes.try_into().map_err(|_| format!("expected {CHALLENGE_LEN} bytes of hex"))
}

/// An error with the process exit status it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Failure {
        Failure { code: EX_USAGE, err: anyhow!(msg.into()) }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Failure {
        let io = err.chain().any(|c| {
            c.is::<std::io::Error>() || matches!(c.downcast_ref::<dfa_core::Error>(), Some(dfa_core::Error::Io(_)))
        });
        Failure { code: if io { EX_IOERR } else { EX_DATAERR }, err }
    }
}

type Outcome = Result<u8, Failure>;

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_program(path: &Path) -> anyhow::Result<Program> {
    parse_assembly(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_layout(path: &Path) -> anyhow::Result<MemoryLayout> {
    let layout = MemoryLayout::from_toml(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    layout.validate().with_context(|| format!("checking {}", path.display()))?;
    Ok(layout)
}

fn load_trace(path: Option<&Path>) -> anyhow::Result<PeripheralTrace> {
    match path {
        None => Ok(PeripheralTrace::default()),
        Some(p) => PeripheralTrace::parse(&read_text(p)?).with_context(|| format!("parsing {}", p.display())),
    }
}

fn load_key(path: &Path) -> anyhow::Result<AttestationKey> {
    AttestationKey::from_hex(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn check_args(args: &[u16]) -> Result<(), Failure> {
    if args.len() > 8 {
        return Err(Failure::usage(format!("at most 8 argument words, got {}", args.len())));
    }
    Ok(())
}

fn print_run(r: &ExecutionResult) {
    println!(
        "halt={:?} exec={} steps={} cycles={} log_pointer={:#06x}",
        r.halt,
        r.exec,
        r.steps,
        r.state.cycles,
        r.log_pointer()
    );
    for w in &r.gpio_log {
        println!("gpio cycle={} addr={:#06x} value={:#06x}", w.cycle, w.addr, w.value);
    }
}

fn corpus_app(dir: Option<&Path>, name: &str) -> anyhow::Result<App> {
    Ok(match dir {
        Some(d) => load_app(d, name)?,
        None => build_app(name)?,
    })
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Asm { input, base, output } => {
            let program = load_program(&input)?;
            let image = encode(&program, base).context("encoding")?;
            println!(
                "{} instructions, {} code bytes at {:#06x}, {} data blocks",
                program.instructions.len(),
                image.bytes.len(),
                image.base,
                image.data.len()
            );
            if let Some(out) = output {
                write_bytes(&out, &image.bytes)?;
            }
            Ok(0)
        }
        Command::Instrument { input, mode, layout, output } => {
            let program = load_program(&input)?;
            let layout = load_layout(&layout)?;
            let out = instrument(&program, &layout, mode.into()).context("instrumenting")?;
            let text = render(&out);
            match output {
                Some(p) => write_bytes(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Run { program, layout, trace, exec } => {
            check_args(&exec.args)?;
            let program = load_program(&program)?;
            let layout = load_layout(&layout)?;
            let trace = load_trace(trace.as_deref())?;
            let r = run_operation(&program, &layout, &exec.args, &trace, exec.max_steps).context("loading program")?;
            print_run(&r);
            Ok(0)
        }
        Command::Attest { program, layout, trace, key, challenge, exec, output } => {
            check_args(&exec.args)?;
            let program = load_program(&program)?;
            let layout = load_layout(&layout)?;
            let trace = load_trace(trace.as_deref())?;
            let key = load_key(&key)?;
            let challenge = challenge.unwrap_or_else(|| random_challenge(&mut rand::thread_rng()));
            let mut dev = Device::boot(&program, &layout, &trace).context("loading program")?;
            let r = dev.run(&exec.args, exec.max_steps);
            let report = dev.attest(challenge, &key);
            write_bytes(&output, &report.to_bytes())?;
            println!("challenge={}", hex::encode(challenge));
            print_run(&r);
            Ok(0)
        }
        Command::Verify { program, layout, key, report, challenge, cfg_policy, data_policy, nonce_store } => {
            let program = load_program(&program)?;
            let layout = load_layout(&layout)?;
            let key = load_key(&key)?;
            let objects = match &data_policy {
                Some(p) => Some(parse_objects(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
                None => None,
            };
            let bytes = fs::read(&report).with_context(|| format!("reading {}", report.display()))?;
            let challenge = match challenge {
                Some(c) => c,
                // An unparseable report fails verification below anyway.
                None => Report::from_bytes(&bytes).map(|r| r.challenge).unwrap_or_default(),
            };
            let policies = Policies { control_flow: cfg_policy, objects };
            let verdict = match nonce_store {
                Some(path) => {
                    let store = NonceStore::file(path);
                    verify_fresh(&store, &bytes, &program, &layout, &challenge, &key, &policies).context("verifying")?
                }
                None => verify(&bytes, &program, &layout, &challenge, &key, &policies).context("verifying")?,
            };
            println!("{verdict}");
            Ok(verdict.exit_code() as u8)
        }
        Command::DemoAttack { app, kind, corpus } => {
            if !APP_NAMES.contains(&app.as_str()) && corpus.is_none() {
                return Err(Failure::usage(format!("unknown app `{app}` (known: {})", APP_NAMES.join(", "))));
            }
            let app = corpus_app(corpus.as_deref(), &app)?;
            let attack = inject_attack(&app, kind, Variant::Dfa).context("crafting attack")?;
            let program = app.program(Variant::Dfa).context("instrumenting")?;
            let mut rng = rand::thread_rng();
            let key = AttestationKey::random(&mut rng);
            let challenge = random_challenge(&mut rng);
            let mut dev = Device::boot(&program, &app.layout, &attack.trace).context("loading program")?;
            let r = dev.run(&[0; 8], DEFAULT_MAX_STEPS);
            println!("app={} attack={} inputs={}", app.name, attack.kind, attack.trace.reads.len());
            print_run(&r);
            let report = dev.attest(challenge, &key).to_bytes();
            let policies = Policies { control_flow: true, objects: Some(app.objects.clone()) };
            let verdict = verify(&report, &program, &app.layout, &challenge, &key, &policies).context("verifying")?;
            println!("{verdict}");
            Ok(verdict.exit_code() as u8)
        }
        Command::Bench { corpus, output } => {
            let apps =
                APP_NAMES.iter().map(|n| corpus_app(corpus.as_deref(), n)).collect::<anyhow::Result<Vec<_>>>()?;
            let rows = measure_all(&apps).context("measuring")?;
            print!("{}", to_table(&rows));
            if let Some(out) = output {
                write_bytes(&out, to_csv(&rows).as_bytes())?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EX_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
