//! Shared helpers: a random program generator and one-call attest+verify.
#![allow(dead_code)]

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use dfa_core::emulator::{ExecutionResult, DEFAULT_MAX_STEPS};
use dfa_core::isa::Program;
use dfa_core::layout::MemoryLayout;
use dfa_core::pox::{AttestationKey, Challenge, Device};
use dfa_core::trace::PeripheralTrace;
use dfa_core::verifier::{verify, Policies, Verdict};

pub const KEY: AttestationKey = AttestationKey([0x5A; 32]);
pub const CHALLENGE: Challenge = *b"fixed-challenge!";

pub const GLOBALS: u16 = 0x0200;
pub const SENSOR: u16 = 0x0030;
pub const GPIO: u16 = 0x0019;

pub fn layout() -> MemoryLayout {
    MemoryLayout {
        er_min: 0xE000,
        er_max: 0xFFFF,
        or_min: 0x0400,
        or_max: 0x07FE,
        stack_init: 0x0A00,
        peripherals: vec![[0x0010, 0x00FF]],
    }
}

/// Runs `program` on a fresh device, attests and verifies the report.
pub fn attest_and_verify(
    program: &Program,
    layout: &MemoryLayout,
    args: &[u16],
    trace: &PeripheralTrace,
    policies: &Policies,
) -> (ExecutionResult, Vec<u8>, Verdict) {
    let mut dev = Device::boot(program, layout, trace).expect("boot");
    let r = dev.run(args, DEFAULT_MAX_STEPS);
    let report = dev.attest(CHALLENGE, &KEY).to_bytes();
    let verdict = verify(&report, program, layout, &CHALLENGE, &KEY, policies).expect("verify setup");
    (r, report, verdict)
}

const DATA_REGS: [&str; 7] = ["r9", "r10", "r11", "r12", "r13", "r14", "r15"];
const ALU: [&str; 6] = ["mov", "add", "sub", "and", "bis", "xor"];
const BRANCHES: [&str; 7] = ["jeq", "jne", "jn", "jlo", "jhs", "jl", "jge"];

fn reg<R: Rng>(rng: &mut R) -> &'static str {
    DATA_REGS.choose(rng).unwrap()
}

fn global<R: Rng>(rng: &mut R) -> u16 {
    GLOBALS + 2 * rng.gen_range(0..16)
}

/// A readable source operand. Index and pointer registers are loaded by
/// the setup lines returned alongside.
fn source<R: Rng>(rng: &mut R) -> (String, String) {
    match rng.gen_range(0..7) {
        0 => (String::new(), format!("#{}", rng.gen_range(0..=0x40u16))),
        1 | 2 => (String::new(), reg(rng).to_string()),
        3 => (String::new(), format!("&0x{:04X}", global(rng))),
        4 => (format!("    mov #{}, r6\n", 2 * rng.gen_range(0..16)), "g(r6)".into()),
        5 => (format!("    mov #0x{:04X}, r7\n", global(rng)), if rng.gen() { "@r7".into() } else { "@r7+".into() }),
        _ => (String::new(), format!("&0x{SENSOR:04X}")),
    }
}

fn alu<R: Rng>(rng: &mut R, out: &mut String) {
    let (setup, src) = source(rng);
    out.push_str(&setup);
    let op = ALU.choose(rng).unwrap();
    match rng.gen_range(0..4) {
        0 => {
            let _ = writeln!(out, "    mov {src}, &0x{:04X}", global(rng));
        }
        1 if !src.starts_with('@') => {
            let _ = writeln!(out, "    mov.b {src}, &0x{:04X}", global(rng) + rng.gen_range(0..2));
        }
        _ => {
            let _ = writeln!(out, "    {op} {src}, {}", reg(rng));
        }
    }
}

fn straight<R: Rng>(rng: &mut R, out: &mut String) {
    match rng.gen_range(0..10) {
        0 => {
            let (a, b) = (reg(rng), reg(rng));
            let _ = writeln!(out, "    push {a}\n    add @r1, {b}\n    pop {a}");
        }
        1 => {
            let _ = writeln!(out, "    mov &0x{SENSOR:04X}, {}\n    mov #0, &0x{SENSOR:04X}", reg(rng));
        }
        2 => {
            let _ = writeln!(out, "    mov.b {}, &0x{GPIO:04X}", reg(rng));
        }
        3 => {
            let r = reg(rng);
            let _ = writeln!(out, "    {} {r}", if rng.gen() { "inc" } else { "dec" });
        }
        _ => alu(rng, out),
    }
}

/// Generates an instrumentable, terminating program: straight-line data
/// operations, forward branches, small counted loops and calls to one
/// subroutine. r4 is never touched and every conditional jump directly
/// follows the `cmp` that sets its flags.
pub fn random_program<R: Rng>(rng: &mut R) -> String {
    random_program_with_tail(rng, "")
}

/// As [`random_program`], with `tail` inserted just before the final halt
/// so that every path executes it.
pub fn random_program_with_tail<R: Rng>(rng: &mut R, tail: &str) -> String {
    let items = rng.gen_range(1..=10);
    let mut targets = vec![false; items + 1];
    let mut body = vec![String::new(); items];
    let mut next_loop = 0;
    for (i, text) in body.iter_mut().enumerate() {
        match rng.gen_range(0..8) {
            0 => {
                let t = rng.gen_range(i + 1..=items);
                targets[t] = true;
                let (setup, src) = source(rng);
                text.push_str(&setup);
                let _ = writeln!(text, "    cmp {src}, {}\n    {} L{t}", reg(rng), BRANCHES.choose(rng).unwrap());
            }
            1 => {
                let t = rng.gen_range(i + 1..=items);
                targets[t] = true;
                let _ = writeln!(text, "    jmp L{t}");
            }
            2 => {
                let _ = writeln!(text, "    mov #{}, r5\nloop{next_loop}:", rng.gen_range(1..=4));
                straight(rng, text);
                let _ = writeln!(text, "    dec r5\n    jne loop{next_loop}");
                next_loop += 1;
            }
            3 => text.push_str("    call #sub\n"),
            _ => straight(rng, text),
        }
    }
    let mut out = String::from(".object g 0x0200 32\nmain:\n");
    for (i, text) in body.iter().enumerate() {
        if targets[i] {
            let _ = writeln!(out, "L{i}:");
        }
        out.push_str(text);
    }
    if targets[items] {
        let _ = writeln!(out, "L{items}:");
    }
    out.push_str(tail);
    out.push_str("    halt\nsub:\n");
    for _ in 0..rng.gen_range(0..3) {
        straight(rng, &mut out);
    }
    out.push_str("    ret\n");
    out
}

pub fn random_trace<R: Rng>(rng: &mut R) -> PeripheralTrace {
    let n = rng.gen_range(0..6);
    PeripheralTrace::feeding(SENSOR, (0..n).map(|_| rng.gen()).collect::<Vec<u16>>())
}

/// Instruction lines of assembly text, labels and comments removed.
pub fn instruction_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split(';').next().unwrap().trim())
        .map(|l| match l.find(':') {
            Some(i) if !l[..i].contains(char::is_whitespace) => l[i + 1..].trim(),
            _ => l,
        })
        .filter(|l| !l.is_empty() && !l.starts_with('.'))
        .map(str::to_string)
        .collect()
}

fn split_line(line: &str) -> (String, Vec<String>) {
    let (m, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let m = m.to_ascii_lowercase();
    let m = m.strip_suffix(".b").or_else(|| m.strip_suffix(".w")).unwrap_or(&m).to_string();
    let ops = rest.split(',').map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect();
    (m, ops)
}

fn is_memory_operand(op: &str) -> bool {
    op.starts_with('@') || op.starts_with('&') || op.contains('(')
}

/// Code size of one instruction line: one word, plus one per immediate,
/// absolute or indexed operand; jumps are a single word.
pub fn oracle_bytes(line: &str) -> usize {
    let (m, ops) = split_line(line);
    if m.starts_with('j') {
        return 2;
    }
    2 + 2 * ops.iter().filter(|o| o.starts_with('#') || o.starts_with('&') || o.contains('(')).count()
}

/// Memory operands whose contents an instruction line reads.
pub fn oracle_reads(line: &str) -> usize {
    let (m, ops) = split_line(line);
    let mem = |i: usize| ops.get(i).is_some_and(|o| is_memory_operand(o)) as usize;
    match m.as_str() {
        "mov" => mem(0),
        "add" | "sub" | "cmp" | "and" | "bis" | "xor" => mem(0) + mem(1),
        "inc" | "dec" | "push" | "call" => mem(0),
        _ => 0,
    }
}
