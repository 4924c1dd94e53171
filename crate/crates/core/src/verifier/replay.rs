//! Re-execution of the instrumented program driven by the reported log.
//!
//! The verifier runs the same image on its own machine with no peripheral
//! inputs. At every log push it takes the next reported entry: if the push
//! copies memory from outside the current stack, the entry is first written
//! to that address so the program sees the device's input; after the push,
//! the slot it wrote must equal the entry.

use crate::emulator::{Event, HaltReason, Machine, TransferKind, DEFAULT_MAX_STEPS};
use crate::error::RunError;
use crate::instrument::{instrumented_mode, template_regions, InstrumentMode, ARG_REGS};
use crate::isa::{encode, Image, Instruction, Opcode, Operand, Program, Value, Width, LOG_REG, SP};
use crate::layout::MemoryLayout;
use crate::trace::{GpioWrite, PeripheralTrace};

/// Log recovered from the OR snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLog {
    /// Entries in device push order, starting at the `OR_MAX` slot.
    pub entries: Vec<u16>,
    /// Log pointer at exit, from the `OR_MIN` slot.
    pub final_pointer: u16,
}

impl ParsedLog {
    /// Saved stack base, the first entry of a data-flow instrumented run.
    pub fn ls(&self) -> Option<u16> {
        self.entries.first().copied()
    }
}

/// Splits an OR snapshot into log entries, or explains why it cannot.
pub fn parse_log(or_snapshot: &[u8], layout: &MemoryLayout) -> Result<ParsedLog, String> {
    if or_snapshot.len() != layout.or_len() {
        return Err(format!("OR snapshot is {} bytes, layout says {}", or_snapshot.len(), layout.or_len()));
    }
    let word = |addr: u16| {
        let i = (addr - layout.or_min) as usize;
        u16::from_le_bytes([or_snapshot[i], or_snapshot[i + 1]])
    };
    let r = word(layout.or_min);
    if r % 2 != 0 || r <= layout.or_min || r > layout.or_max {
        return Err(format!("final log pointer {r:#06x} outside the log area"));
    }
    let entries = (0..(layout.or_max - r) / 2).map(|k| word(layout.or_max - 2 * k)).collect();
    Ok(ParsedLog { entries, final_pointer: r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayTransfer {
    pub step: u64,
    pub from: u16,
    pub to: u16,
    pub kind: TransferKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayWrite {
    pub step: u64,
    pub pc: u16,
    pub addr: u16,
    pub width: Width,
}

#[derive(Debug, Clone)]
pub struct ReplayTrace {
    pub image: Image,
    pub transfers: Vec<ReplayTransfer>,
    pub writes: Vec<ReplayWrite>,
    pub gpio_log: Vec<GpioWrite>,
    pub or_snapshot: Vec<u8>,
    pub steps: u64,
    /// Entries consumed by control-flow pushes.
    pub cf_entries: usize,
    /// Entries consumed by data-flow pushes (prologue included).
    pub data_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayError {
    Setup(RunError),
    Inconsistent(String),
}

fn inconsistent<T>(msg: String) -> Result<T, ReplayError> {
    Err(ReplayError::Inconsistent(msg))
}

fn lit(v: &Value) -> u16 {
    match v {
        Value::Lit(n) => *n,
        Value::Sym(_) => 0,
    }
}

fn effective_address(op: &Operand, regs: &[u16; 16]) -> Option<u16> {
    match op {
        Operand::Indirect(r) | Operand::AutoInc(r) => Some(regs[r.index()]),
        Operand::Indexed(off, r) => Some(regs[r.index()].wrapping_add(lit(off))),
        Operand::Absolute(v) => Some(lit(v)),
        Operand::Reg(_) | Operand::Immediate(_) => None,
    }
}

fn is_push_site(ins: &Instruction, next: Option<&Instruction>) -> bool {
    let pushes = ins.opcode == Opcode::Mov && ins.dst == Some(Operand::Indirect(LOG_REG));
    let decrements = next.is_some_and(|n| {
        n.opcode == Opcode::Sub
            && n.src == Some(Operand::Immediate(Value::Lit(2)))
            && n.dst == Some(Operand::Reg(LOG_REG))
    });
    pushes && decrements
}

pub fn replay(program: &Program, layout: &MemoryLayout, log: &ParsedLog) -> Result<ReplayTrace, ReplayError> {
    replay_with_budget(program, layout, log, DEFAULT_MAX_STEPS)
}

pub fn replay_with_budget(
    program: &Program,
    layout: &MemoryLayout,
    log: &ParsedLog,
    max_steps: u64,
) -> Result<ReplayTrace, ReplayError> {
    let image = encode(program, layout.er_min).map_err(|e| ReplayError::Setup(e.into()))?;
    let mut m = Machine::new(layout.clone(), &PeripheralTrace::default());
    m.load_image(&image).map_err(ReplayError::Setup)?;

    let dfa = instrumented_mode(program) == Some(InstrumentMode::CfaPlusDfa);
    let nargs = ARG_REGS.count();
    let mut args = vec![0u16; nargs];
    let ls = if dfa {
        if log.entries.len() < 1 + nargs {
            return inconsistent("log shorter than the argument prologue".into());
        }
        args.copy_from_slice(&log.entries[1..=nargs]);
        log.entries[0]
    } else {
        layout.stack_init
    };
    m.enter(&args);
    m.state.regs[SP.index()] = ls;

    let mut cf_site = vec![false; program.instructions.len()];
    for r in template_regions(program) {
        if r.kind.starts_with("cfa-") {
            for s in &mut cf_site[r.start..r.end] {
                *s = true;
            }
        }
    }

    let mut trace = ReplayTrace {
        image: image.clone(),
        transfers: Vec::new(),
        writes: Vec::new(),
        gpio_log: Vec::new(),
        or_snapshot: Vec::new(),
        steps: 0,
        cf_entries: 0,
        data_entries: 0,
    };
    let mut next_entry = 0usize;
    let mut events = Vec::new();
    let halt = loop {
        if trace.steps >= max_steps {
            break HaltReason::StepLimitExceeded(max_steps);
        }
        let step = trace.steps;
        let pc = m.state.pc();
        let idx = image.index_of(pc);
        let site = idx.filter(|&i| is_push_site(&program.instructions[i], program.instructions.get(i + 1)));
        let mut expected = None;
        if let Some(i) = site {
            let Some(&w) = log.entries.get(next_entry) else {
                return inconsistent(format!("log exhausted at step {step} (pc {pc:#06x})"));
            };
            next_entry += 1;
            if cf_site[i] {
                trace.cf_entries += 1;
            } else {
                trace.data_entries += 1;
            }
            let (decoded, _) = m.peek().map_err(|e| ReplayError::Inconsistent(format!("step {step}: {e}")))?;
            let src = decoded.src.as_ref().expect("push source");
            if let Some(a) = effective_address(src, &m.state.regs) {
                let sp = m.state.reg(SP);
                if a < sp || a > ls {
                    match decoded.width {
                        Width::Word if a % 2 == 0 => m.state.set_word(a, w),
                        Width::Word => {}
                        Width::Byte => m.state.memory[a as usize] = w as u8,
                    }
                }
            }
            expected = Some((m.state.reg(LOG_REG), w, next_entry - 1));
        }
        events.clear();
        let h = m.step(&mut events);
        trace.steps += 1;
        for ev in &events {
            match *ev {
                Event::ControlTransfer { from, to, kind } => {
                    trace.transfers.push(ReplayTransfer { step, from, to, kind })
                }
                Event::Write { addr, width, .. } => trace.writes.push(ReplayWrite { step, pc, addr, width }),
                _ => {}
            }
        }
        if let Some((slot, w, k)) = expected {
            let got = m.state.word(slot);
            if got != w {
                return inconsistent(format!("entry {k}: logged {w:#06x}, replay pushed {got:#06x} at step {step}"));
            }
        }
        if let Some(h) = h {
            break h;
        }
    };
    if halt != HaltReason::Completed {
        return inconsistent(format!("replay ended with {halt:?}"));
    }
    if next_entry != log.entries.len() {
        return inconsistent(format!("{} log entries left unconsumed", log.entries.len() - next_entry));
    }
    if m.state.reg(LOG_REG) != log.final_pointer {
        return inconsistent(format!(
            "replay log pointer {:#06x} differs from reported {:#06x}",
            m.state.reg(LOG_REG),
            log.final_pointer
        ));
    }
    trace.gpio_log = m.gpio_log.clone();
    trace.or_snapshot = m.state.bytes(layout.or_min, layout.or_len()).to_vec();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::run_operation;
    use crate::instrument::instrument;
    use crate::isa::parse_assembly;

    fn layout() -> MemoryLayout {
        MemoryLayout {
            er_min: 0xE000,
            er_max: 0xFFFF,
            or_min: 0x0400,
            or_max: 0x07FE,
            stack_init: 0x0A00,
            peripherals: vec![[0x0010, 0x00FF]],
        }
    }

    const SRC: &str = "mov &0x0020, r5\nmov #0, &0x0020\ncmp #3, r5\njeq three\nmov.b #1, &0x0019\nthree: halt";

    fn device_log(input: u16) -> (Program, Vec<u8>, ParsedLog) {
        let p = instrument(&parse_assembly(SRC).unwrap(), &layout(), InstrumentMode::CfaPlusDfa).unwrap();
        let r =
            run_operation(&p, &layout(), &[9; 8], &PeripheralTrace::feeding(0x20, [input]), DEFAULT_MAX_STEPS).unwrap();
        let or = r.state.bytes(0x0400, layout().or_len()).to_vec();
        let log = parse_log(&or, &layout()).unwrap();
        (p, or, log)
    }

    #[test]
    fn parse_prologue_only() {
        let p = instrument(&parse_assembly("halt").unwrap(), &layout(), InstrumentMode::CfaPlusDfa).unwrap();
        let args = [1, 2, 3, 4, 5, 6, 7, 8];
        let r = run_operation(&p, &layout(), &args, &PeripheralTrace::default(), DEFAULT_MAX_STEPS).unwrap();
        let log = parse_log(r.state.bytes(0x0400, layout().or_len()), &layout()).unwrap();
        assert_eq!(log.ls(), Some(0x0A00));
        assert_eq!(&log.entries[1..], &args);
    }

    #[test]
    fn benign_replay_matches_device() {
        for input in [3, 4] {
            let (p, or, log) = device_log(input);
            let t = replay(&p, &layout(), &log).unwrap();
            assert_eq!(t.or_snapshot, or);
            assert_eq!(t.cf_entries, 1);
            assert_eq!(t.data_entries, 9 + 1);
            assert_eq!(t.gpio_log.len(), if input == 3 { 1 } else { 2 });
        }
    }

    #[test]
    fn altered_entry_detected() {
        // The saved stack base and argument words only seed registers, so a
        // changed value there describes a different but consistent run.
        let (p, _, log) = device_log(3);
        for k in 9..log.entries.len() {
            let mut bad = log.clone();
            bad.entries[k] ^= 0x0002;
            assert!(replay(&p, &layout(), &bad).is_err(), "entry {k}");
        }
    }

    #[test]
    fn truncated_log_exhausts() {
        let (p, _, mut log) = device_log(4);
        log.entries.pop();
        log.final_pointer += 2;
        let Err(ReplayError::Inconsistent(msg)) = replay(&p, &layout(), &log) else { panic!() };
        assert!(msg.contains("exhausted"), "{msg}");
    }

    #[test]
    fn bad_final_pointer() {
        let mut or = vec![0u8; layout().or_len()];
        or[0] = 0x01;
        assert!(parse_log(&or, &layout()).is_err());
        assert!(parse_log(&or[1..], &layout()).is_err());
    }
}
