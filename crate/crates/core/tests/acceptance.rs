//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use dfa_core::corpus::{
    build_app, inject_attack, random_args, random_benign_trace, App, AttackKind, Variant, APP_NAMES,
};
use dfa_core::emulator::{run_operation, HaltReason, DEFAULT_MAX_STEPS};
use dfa_core::instrument::{instrument, InstrumentMode};
use dfa_core::isa::{parse_assembly, render};
use dfa_core::layout::MemoryLayout;
use dfa_core::metrics::{measure, REFERENCE_BAND};
use dfa_core::pox::Device;
use dfa_core::trace::PeripheralTrace;
use dfa_core::verifier::{parse_log, replay, verify, Policies, Verdict};

const MATRIX_BUDGET: Duration = Duration::from_secs(5);
const BITFLIP_BUDGET: Duration = Duration::from_secs(60);
const REPORT_LIMIT: usize = 256;
const REPLAY_RUNS: usize = 100;
const FUZZ_PROGRAMS: usize = 1000;
const TRANSPARENCY_RUNS: usize = 25;
const ENTRY_INSTRUCTIONS: usize = 36;
const PER_READ_INSTRUCTIONS: usize = 10;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn apps() -> Vec<App> {
    APP_NAMES.iter().map(|n| build_app(n).unwrap()).collect()
}

fn policies(app: &App) -> Policies {
    Policies { control_flow: true, objects: Some(app.objects.clone()) }
}

fn attack_matrix() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for (name, kind) in
        [("syringe_cf", AttackKind::ControlFlowOverwrite), ("syringe_df", AttackKind::DataOnlyOverwrite)]
    {
        let app = build_app(name).unwrap();
        let p = app.program(Variant::Dfa).unwrap();
        for t in &app.benign_traces {
            let (_, _, v) = attest_and_verify(&p, &app.layout, &[0; 8], t, &policies(&app));
            ensure(v.is_verified(), || format!("{name} benign: false positive {v}"))?;
            cases += 1;
        }
        let atk = inject_attack(&app, kind, Variant::Dfa).unwrap();
        let (_, _, v) = attest_and_verify(&p, &app.layout, &[0; 8], &atk.trace, &policies(&app));
        let detected = match kind {
            AttackKind::ControlFlowOverwrite => matches!(v, Verdict::ControlFlowAttack { .. }),
            AttackKind::DataOnlyOverwrite => matches!(v, Verdict::DataOnlyAttack { .. }),
        };
        ensure(detected, || format!("{name} {kind}: got {v}"))?;
        cases += 1;
    }
    let took = start.elapsed();
    ensure(took < MATRIX_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{cases} cases, 0 false positives, 0 false negatives, {took:.2?}"))
}

fn cf_stealth() -> Outcome {
    let app = build_app("syringe_df").unwrap();
    let atk = inject_attack(&app, AttackKind::DataOnlyOverwrite, Variant::Baseline).unwrap();
    let run = |t: &PeripheralTrace| run_operation(&app.source, &app.layout, &[0; 8], t, DEFAULT_MAX_STEPS).unwrap();
    let attacked = run(&atk.trace);
    let attacked_cf: Vec<_> = attacked.transfers().collect();
    let twin = app
        .benign_traces
        .iter()
        .map(run)
        .find(|b| b.transfers().collect::<Vec<_>>() == attacked_cf)
        .ok_or("no benign run shares the attack's control-transfer sequence")?;
    let values = |r: &dfa_core::emulator::ExecutionResult| r.gpio_log.iter().map(|w| w.value).collect::<Vec<_>>();
    ensure(values(&twin) != values(&attacked), || "attack did not change the actuation output".into())?;
    Ok(format!("{} identical transfers, actuation output differs", attacked_cf.len()))
}

fn replay_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let mut total = 0;
    for app in apps() {
        let p = app.program(Variant::Dfa).unwrap();
        for i in 0..REPLAY_RUNS {
            let args = random_args(&mut rng);
            let trace = random_benign_trace(&app, &mut rng).unwrap();
            let (r, _, v) = attest_and_verify(&p, &app.layout, &args, &trace, &policies(&app));
            ensure(v.is_verified(), || format!("{} run {i}: {v}", app.name))?;
            let or = r.state.bytes(app.layout.or_min, app.layout.or_len()).to_vec();
            let t = replay(&p, &app.layout, &parse_log(&or, &app.layout)?).map_err(|e| format!("{e:?}"))?;
            ensure(t.or_snapshot == or, || format!("{} run {i}: replayed OR differs", app.name))?;
            total += 1;
        }
    }
    Ok(format!("{total} randomized runs verified with bit-exact OR replay"))
}

fn token_soundness() -> Outcome {
    let start = Instant::now();
    let app = build_app("ultrasonic_ranger").unwrap();
    let layout = MemoryLayout { or_min: 0x0400, or_max: 0x0460, ..app.layout.clone() };
    layout.validate().map_err(|e| e.to_string())?;
    let p = instrument(&app.source, &layout, InstrumentMode::CfaPlusDfa).unwrap();
    let trace = PeripheralTrace::feeding(0x0040, [240]);
    let (_, report, v) = attest_and_verify(&p, &layout, &[0; 8], &trace, &Policies::all(&p));
    ensure(v.is_verified(), || format!("unmodified report: {v}"))?;
    ensure(report.len() <= REPORT_LIMIT, || format!("report is {} bytes", report.len()))?;
    let mut flips = 0;
    for i in 0..report.len() * 8 {
        let mut bad = report.clone();
        bad[i / 8] ^= 1 << (i % 8);
        let v = verify(&bad, &p, &layout, &CHALLENGE, &KEY, &Policies::all(&p)).unwrap();
        ensure(!v.is_verified(), || format!("flipping bit {i} still verifies"))?;
        flips += 1;
    }
    let took = start.elapsed();
    ensure(took < BITFLIP_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{flips}/{flips} flips of a {}-byte report rejected, {took:.2?}", report.len()))
}

/// A write aimed at or above the current log pointer, appended to a
/// random program so every path reaches it.
fn hostile_tail<R: Rng>(rng: &mut R, mode: InstrumentMode, or_max: u16) -> String {
    let slots = match mode {
        InstrumentMode::CfaOnly => 0,
        InstrumentMode::CfaPlusDfa => 8,
    };
    let word = or_max - 2 * rng.gen_range(0..=slots);
    let byte = word + rng.gen_range(0..=1);
    match rng.gen_range(0..5) {
        0 => format!("    mov r9, &0x{word:04X}\n"),
        1 => format!("    mov.b r10, &0x{byte:04X}\n"),
        2 => format!("    mov #0x{word:04X}, r7\n    add #1, 0(r7)\n"),
        3 => format!("    mov #0x{:04X}, r7\n    mov.b #0, 2(r7)\n", byte - 2),
        _ => format!("    mov #{}, r6\n    bis r11, g(r6)\n", word - GLOBALS),
    }
}

fn log_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0005);
    let layout = layout();
    for i in 0..FUZZ_PROGRAMS {
        let mode = if i % 2 == 0 { InstrumentMode::CfaOnly } else { InstrumentMode::CfaPlusDfa };
        let tail = hostile_tail(&mut rng, mode, layout.or_max);
        let text = random_program_with_tail(&mut rng, &tail);
        let p = instrument(&parse_assembly(&text).unwrap(), &layout, mode).map_err(|e| format!("{e}\n{text}"))?;
        let args: [u16; 8] = rng.gen();
        let (r, _, v) = attest_and_verify(&p, &layout, &args, &random_trace(&mut rng), &Policies::all(&p));
        ensure(r.halt == HaltReason::Aborted && !r.exec, || {
            format!("program {i}: {:?} exec={}\n{text}", r.halt, r.exec)
        })?;
        ensure(!v.is_verified(), || format!("program {i} verified\n{text}"))?;
    }
    Ok(format!("{FUZZ_PROGRAMS} hostile programs aborted with exec cleared, none verified"))
}

fn instrumentation_accounting() -> Outcome {
    let mut detail = Vec::new();
    for app in apps() {
        let count = |v| instruction_lines(&render(&app.program(v).unwrap())).len();
        let sites: usize = instruction_lines(&render(&app.source)).iter().map(|l| oracle_reads(l)).sum();
        let delta = count(Variant::Dfa) - count(Variant::Cfa);
        let want = ENTRY_INSTRUCTIONS + PER_READ_INSTRUCTIONS * sites;
        ensure(delta == want, || format!("{}: delta {delta}, formula {want}", app.name))?;
        detail.push(format!("{} {sites} sites", app.name));
    }
    Ok(detail.join(", "))
}

fn overhead_ordering() -> Outcome {
    let mut detail = Vec::new();
    for app in apps() {
        let r = measure(&app, app.canonical_trace()).map_err(|e| e.to_string())?;
        let (c, y) = (r.code_bytes, r.cycles);
        ensure(c.baseline < c.cfa && c.cfa <= c.dfa, || format!("{}: code {c:?}", app.name))?;
        ensure(y.baseline < y.cfa && y.cfa <= y.dfa, || format!("{}: cycles {y:?}", app.name))?;
        ensure(r.cfa_dominates(), || format!("{}: dfa adds more cycles than cfa ({y:?})", app.name))?;
        detail.push(format!("{} +{:.1}%", app.name, 100.0 * r.dfa_over_cfa_cycles()));
    }
    Ok(format!(
        "dfa over cfa cycles: {} (reference band {:.0}%..{:.0}%, informational)",
        detail.join(", "),
        100.0 * REFERENCE_BAND.0,
        100.0 * REFERENCE_BAND.1
    ))
}

fn semantic_transparency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0008);
    let mut runs = 0;
    for app in apps() {
        let programs: Vec<_> = Variant::ALL.iter().map(|&v| app.program(v).unwrap()).collect();
        let mut traces = app.benign_traces.clone();
        traces.extend((0..TRANSPARENCY_RUNS).map(|_| random_benign_trace(&app, &mut rng).unwrap()));
        for t in &traces {
            let outputs: Vec<_> = programs
                .iter()
                .map(|p| {
                    let mut dev = Device::boot(p, &app.layout, t).unwrap();
                    let r = dev.run(&[0; 8], DEFAULT_MAX_STEPS);
                    (r.halt, r.gpio_log.iter().map(|w| (w.addr, w.value)).collect::<Vec<_>>())
                })
                .collect();
            ensure(outputs[0].0 == HaltReason::Completed, || format!("{}: baseline {:?}", app.name, outputs[0].0))?;
            ensure(outputs.iter().all(|o| *o == outputs[0]), || format!("{}: outputs differ on {t:?}", app.name))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} traces, identical output sequences across all three variants"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("attack-detection matrix", attack_matrix),
        ("control-flow stealth of the data-only attack", cf_stealth),
        ("replay determinism", replay_determinism),
        ("token soundness under single-bit flips", token_soundness),
        ("log integrity under hostile writes", log_integrity),
        ("instrumentation accounting", instrumentation_accounting),
        ("overhead ordering", overhead_ordering),
        ("semantic transparency", semantic_transparency),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
