//! Source-to-source instrumentation.
//!
//! The log lives in OR as a stack that grows down from `OR_MAX`, with r4 as
//! the stack pointer. A push writes `@r4`, subtracts one word and aborts to
//! `.L11` once r4 drops below `OR_MIN`.
//!
//! Control-flow pass: entry check on r4, one push per executed transfer
//! (the actual destination, both outcomes of a conditional branch), a guard
//! before every memory write that aborts if the target lies in `[r4, OR_MAX]`,
//! and an exit sequence that stores the final r4 in the `OR_MIN` slot.
//!
//! Data-flow pass: a prologue that pushes the stack pointer and r8..r15, and
//! before every memory read a classifier that pushes the value when the
//! effective address is outside `[SP, ls]`, where `ls` is the saved stack
//! base at `OR_MAX`.
//!
//! Every inserted run of instructions is bracketed by `; ATTEST-BEGIN <kind>`
//! and `; ATTEST-END` comments. Templates clobber the status flags, so flags
//! must not be live across an instrumented memory access.

use std::collections::BTreeMap;

use crate::emulator::ABORT_LABEL;
use crate::error::InstrumentError;
use crate::isa::{Instruction, Opcode, Operand, Program, Register, Value, Width, LOG_REG, PC, SP};
use crate::layout::MemoryLayout;

pub const MARKER: &str = "ATTEST-INSTRUMENTED";
pub const BEGIN: &str = "ATTEST-BEGIN";
pub const END: &str = "ATTEST-END";
const LABEL_PREFIX: &str = ".LD";
/// Constants the instrumented code refers to.
pub const OR_MAX: &str = "OR_MAX";
pub const OR_MIN: &str = "OR_MIN";
pub const OR_END: &str = "OR_END";
/// Argument registers logged by the data-flow prologue.
pub const ARG_REGS: std::ops::RangeInclusive<u8> = 8..=15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentMode {
    CfaOnly,
    CfaPlusDfa,
}

impl InstrumentMode {
    pub fn name(self) -> &'static str {
        match self {
            InstrumentMode::CfaOnly => "cfa",
            InstrumentMode::CfaPlusDfa => "cfa+dfa",
        }
    }
}

/// Fails with the source lines of every instruction that names `reg`.
pub fn check_free_register(program: &Program, reg: Register) -> Result<(), InstrumentError> {
    let lines: Vec<usize> = program.instructions.iter().filter(|i| i.uses_register(reg)).map(|i| i.line).collect();
    if lines.is_empty() {
        Ok(())
    } else {
        Err(InstrumentError::FreeRegisterUnavailable(lines))
    }
}

pub fn instrument_cfa(program: &Program, layout: &MemoryLayout) -> Result<Program, InstrumentError> {
    instrument(program, layout, InstrumentMode::CfaOnly)
}

/// Adds data-flow logging to a program already carrying control-flow logging.
pub fn instrument_dfa(cfa_program: &Program, layout: &MemoryLayout) -> Result<Program, InstrumentError> {
    if !cfa_program.has_comment(&marker_text(InstrumentMode::CfaOnly)) {
        return Err(InstrumentError::Unsupported { line: 0, reason: "input is not control-flow instrumented" });
    }
    instrument(&strip_instrumentation(cfa_program), layout, InstrumentMode::CfaPlusDfa)
}

fn marker_text(mode: InstrumentMode) -> String {
    format!("{MARKER} {}", mode.name())
}

pub fn is_instrumented(program: &Program) -> bool {
    program.comments.iter().any(|(_, c)| c.trim().starts_with(MARKER))
}

pub fn instrument(program: &Program, layout: &MemoryLayout, mode: InstrumentMode) -> Result<Program, InstrumentError> {
    if is_instrumented(program) {
        return Err(InstrumentError::AlreadyInstrumented);
    }
    check_free_register(program, LOG_REG)?;
    validate(program)?;

    let mut out = Program {
        constants: program.constants.clone(),
        object_map: program.object_map.clone(),
        data: program.data.clone(),
        ..Program::default()
    };
    for (name, v) in [(OR_MAX, layout.or_max), (OR_MIN, layout.or_min), (OR_END, layout.or_max.wrapping_add(2))] {
        match out.constants.insert(name.to_string(), v) {
            Some(old) if old != v => return Err(InstrumentError::ConstantConflict(name.to_string())),
            _ => {}
        }
    }
    let mut e = Emitter { out, next_label: 0, line: 0 };
    e.comment(marker_text(mode));

    e.begin("entry");
    e.emit(Instruction::two(Opcode::Cmp, imm(OR_MAX), Operand::Reg(LOG_REG)));
    e.emit(Instruction::jump(Opcode::Jne, Value::sym(ABORT_LABEL)));
    if mode == InstrumentMode::CfaPlusDfa {
        e.push(Operand::Reg(SP), Width::Word);
        for r in ARG_REGS {
            e.push(Operand::Reg(Register::new(r).expect("argument register")), Width::Word);
        }
    }
    e.end();

    let mut comments = program.comments.iter().peekable();
    for (idx, ins) in program.instructions.iter().enumerate() {
        e.line = ins.line;
        for label in program.labels_at(idx) {
            e.label(label.to_string());
        }
        while let Some((_, c)) = comments.next_if(|(i, _)| *i <= idx) {
            e.comment(c.clone());
        }
        if mode == InstrumentMode::CfaPlusDfa {
            for op in ins.memory_reads() {
                e.begin("dfa-read");
                e.read_classifier(op, ins.width);
                e.end();
            }
        }
        if let Some(dst) = ins.memory_write() {
            e.begin("write-guard");
            e.write_guard(dst);
            e.end();
        }
        e.control_flow(ins);
    }
    for label in program.labels_at(program.instructions.len()) {
        e.label(label.to_string());
    }
    for (_, c) in comments {
        e.comment(c.clone());
    }

    e.line = 0;
    e.begin("abort");
    e.label(ABORT_LABEL.to_string());
    e.emit(Instruction::two(Opcode::Mov, Operand::Reg(LOG_REG), abs(OR_MIN)));
    e.emit(Instruction::new(Opcode::Halt, None, None));
    e.end();
    Ok(e.out)
}

fn imm(name: &str) -> Operand {
    Operand::Immediate(Value::sym(name))
}

fn abs(name: &str) -> Operand {
    Operand::Absolute(Value::sym(name))
}

fn sets_flags(op: Opcode) -> bool {
    matches!(op, Opcode::Add | Opcode::Sub | Opcode::Cmp | Opcode::And | Opcode::Xor | Opcode::Dec | Opcode::Inc)
}

fn validate(program: &Program) -> Result<(), InstrumentError> {
    for name in program.labels.keys() {
        if name == ABORT_LABEL || is_template_label(name) {
            return Err(InstrumentError::Unsupported { line: 0, reason: "label name reserved for instrumentation" });
        }
    }
    let n = program.instructions.len();
    for (idx, ins) in program.instructions.iter().enumerate() {
        let unsupported = |reason| Err(InstrumentError::Unsupported { line: ins.line, reason });
        if ins.operands().any(|o| o.is_memory() && o.register() == Some(PC)) {
            return unsupported("PC-relative operands cannot be relocated");
        }
        if ins.writes_pc() && ins.opcode != Opcode::Mov {
            return unsupported("only `mov` may write the program counter");
        }
        if let (Some(Operand::AutoInc(r)), Some(dst)) = (&ins.src, &ins.dst) {
            if dst.is_memory() && dst.register() == Some(*r) {
                return unsupported("auto-incremented register reused as destination base");
            }
        }
        let touched = !ins.memory_reads().is_empty() || ins.memory_write().is_some();
        if touched && !sets_flags(ins.opcode) && !ins.alters_control_flow() {
            for j in idx + 1..n {
                if program.labels_at(j).next().is_some() {
                    break;
                }
                let next = &program.instructions[j];
                if next.opcode.is_conditional_jump() {
                    return unsupported("status flags live across an instrumented memory access");
                }
                if sets_flags(next.opcode) || next.alters_control_flow() || next.opcode == Opcode::Halt {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn is_template_label(name: &str) -> bool {
    name.strip_prefix(LABEL_PREFIX).is_some_and(|rest| rest.bytes().next().is_some_and(|b| b.is_ascii_digit()))
}

struct Emitter {
    out: Program,
    next_label: usize,
    line: usize,
}

impl Emitter {
    fn emit(&mut self, mut ins: Instruction) {
        ins.line = self.line;
        self.out.instructions.push(ins);
    }

    fn label(&mut self, name: String) {
        self.out.labels.insert(name, self.out.instructions.len());
    }

    fn fresh(&mut self, tag: &str) -> String {
        self.next_label += 1;
        format!("{LABEL_PREFIX}{}_{tag}", self.next_label)
    }

    fn comment(&mut self, text: String) {
        self.out.comments.push((self.out.instructions.len(), text));
    }

    fn begin(&mut self, kind: &str) {
        self.comment(format!("{BEGIN} {kind}"));
    }

    fn end(&mut self) {
        self.comment(END.to_string());
    }

    fn mov(&mut self, src: Operand, dst: Operand, width: Width) {
        let ins = Instruction::two(Opcode::Mov, src, dst);
        self.emit(if width == Width::Byte { ins.byte() } else { ins });
    }

    /// Four-instruction log push.
    fn push(&mut self, src: Operand, width: Width) {
        self.mov(src, Operand::Indirect(LOG_REG), width);
        self.emit(Instruction::two(Opcode::Sub, Operand::Immediate(Value::Lit(2)), Operand::Reg(LOG_REG)));
        self.emit(Instruction::two(Opcode::Cmp, imm(OR_MIN), Operand::Reg(LOG_REG)));
        self.emit(Instruction::jump(Opcode::Jlo, Value::sym(ABORT_LABEL)));
    }

    /// Stores the effective address of `op` in the free slot at `@r4`.
    fn effective_address(&mut self, op: &Operand) {
        let scratch = Operand::Indirect(LOG_REG);
        let (base, off) = match op {
            Operand::Indirect(r) | Operand::AutoInc(r) => (Operand::Reg(*r), Value::Lit(0)),
            Operand::Indexed(off, r) => (Operand::Reg(*r), off.clone()),
            Operand::Absolute(v) => (Operand::Immediate(v.clone()), Value::Lit(0)),
            Operand::Reg(_) | Operand::Immediate(_) => unreachable!("not a memory operand"),
        };
        self.mov(base, scratch.clone(), Width::Word);
        self.emit(Instruction::two(Opcode::Add, Operand::Immediate(off), scratch));
    }

    /// Ten instructions: compute the address, compare with SP and the saved
    /// stack base, push the value if outside.
    fn read_classifier(&mut self, op: &Operand, width: Width) {
        let (log, skip) = (self.fresh("log"), self.fresh("skip"));
        let scratch = Operand::Indirect(LOG_REG);
        self.effective_address(op);
        self.emit(Instruction::two(Opcode::Cmp, Operand::Reg(SP), scratch.clone()));
        self.emit(Instruction::jump(Opcode::Jlo, Value::sym(&log)));
        self.emit(Instruction::two(Opcode::Cmp, scratch, abs(OR_MAX)));
        self.emit(Instruction::jump(Opcode::Jhs, Value::sym(&skip)));
        self.label(log);
        self.push(op.without_increment(), width);
        self.label(skip);
    }

    /// Aborts unless the write target is below r4 or above the OR top slot.
    fn write_guard(&mut self, dst: &Operand) {
        let ok = self.fresh("ok");
        let scratch = Operand::Indirect(LOG_REG);
        self.effective_address(dst);
        self.emit(Instruction::two(Opcode::Cmp, Operand::Reg(LOG_REG), scratch.clone()));
        self.emit(Instruction::jump(Opcode::Jlo, Value::sym(&ok)));
        self.emit(Instruction::two(Opcode::Cmp, imm(OR_END), scratch));
        self.emit(Instruction::jump(Opcode::Jhs, Value::sym(&ok)));
        self.emit(Instruction::jump(Opcode::Jmp, Value::sym(ABORT_LABEL)));
        self.label(ok);
    }

    fn control_flow(&mut self, ins: &Instruction) {
        match ins.opcode {
            Opcode::Halt => {
                self.begin("exit");
                self.emit(Instruction::two(Opcode::Mov, Operand::Reg(LOG_REG), abs(OR_MIN)));
                self.end();
                self.emit(ins.clone());
            }
            Opcode::Jmp => {
                let target = ins.jump_target().expect("jump target").clone();
                self.begin("cfa-jump");
                self.push(Operand::Immediate(target), Width::Word);
                self.end();
                self.emit(ins.clone());
            }
            op if op.is_conditional_jump() => {
                let target = ins.jump_target().expect("jump target").clone();
                let (taken, fall) = (self.fresh("taken"), self.fresh("fall"));
                self.begin("cfa-branch");
                self.emit(Instruction::jump(op, Value::sym(&taken)));
                self.push(Operand::Immediate(Value::sym(&fall)), Width::Word);
                self.emit(Instruction::jump(Opcode::Jmp, Value::sym(&fall)));
                self.label(taken);
                self.push(Operand::Immediate(target.clone()), Width::Word);
                self.emit(Instruction::jump(Opcode::Jmp, target));
                self.label(fall);
                self.end();
            }
            Opcode::Call => {
                let src = ins.src.as_ref().expect("call operand").without_increment();
                self.begin("cfa-call");
                self.push(src, Width::Word);
                self.end();
                self.emit(ins.clone());
            }
            Opcode::Ret => {
                self.begin("cfa-return");
                self.push(Operand::Indirect(SP), Width::Word);
                self.end();
                self.emit(ins.clone());
            }
            _ if ins.writes_pc() => {
                let src = ins.src.as_ref().expect("mov operand").without_increment();
                self.begin("cfa-jump");
                self.push(src, Width::Word);
                self.end();
                self.emit(ins.clone());
            }
            _ => self.emit(ins.clone()),
        }
    }
}

/// A run of template instructions, `[start, end)` by instruction index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

/// Template regions delimited by the BEGIN/END marker comments.
pub fn template_regions(program: &Program) -> Vec<Region> {
    let n = program.instructions.len();
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (idx, c) in &program.comments {
        let c = c.trim();
        if let Some(kind) = c.strip_prefix(BEGIN) {
            open = Some((kind.trim().to_string(), *idx));
        } else if c == END {
            if let Some((kind, start)) = open.take() {
                out.push(Region { kind, start: start.min(n), end: (*idx).min(n) });
            }
        }
    }
    out
}

/// Mode recorded in the marker comment, if any.
pub fn instrumented_mode(program: &Program) -> Option<InstrumentMode> {
    [InstrumentMode::CfaPlusDfa, InstrumentMode::CfaOnly].into_iter().find(|m| program.has_comment(&marker_text(*m)))
}

/// Recovers the uninstrumented program.
///
/// Template regions are dropped, except that a `cfa-branch` region is
/// replaced by the original conditional jump. Template labels, the marker
/// comment and the layout constants are removed.
pub fn strip_instrumentation(program: &Program) -> Program {
    let n = program.instructions.len();
    let regions = template_regions(program);
    let mut region: Vec<Option<&str>> = vec![None; n];
    let mut starts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &regions {
        for slot in &mut region[r.start..r.end] {
            *slot = Some(r.kind.as_str());
        }
        starts.insert(r.start, r.end);
    }

    let mut out = Program {
        constants: program.constants.clone(),
        object_map: program.object_map.clone(),
        data: program.data.clone(),
        ..Program::default()
    };
    for name in [OR_MAX, OR_MIN, OR_END] {
        out.constants.remove(name);
    }
    let mut new_index = vec![0usize; n + 1];
    let mut idx = 0;
    while idx < n {
        new_index[idx] = out.instructions.len();
        match (region[idx], starts.get(&idx)) {
            (Some("cfa-branch"), Some(end)) => {
                let first = &program.instructions[idx];
                let last = &program.instructions[end - 1];
                let mut ins = Instruction::jump(first.opcode, last.jump_target().expect("branch target").clone());
                ins.line = first.line;
                out.instructions.push(ins);
                new_index[idx + 1..*end].fill(out.instructions.len());
                idx = *end;
                continue;
            }
            (Some(_), _) => {}
            (None, _) => out.instructions.push(program.instructions[idx].clone()),
        }
        idx += 1;
    }
    new_index[n] = out.instructions.len();
    for (name, &i) in &program.labels {
        if name != ABORT_LABEL && !is_template_label(name) {
            out.labels.insert(name.clone(), new_index[i.min(n)]);
        }
    }
    for (i, c) in &program.comments {
        let t = c.trim();
        if !(t.starts_with(BEGIN) || t == END || t.starts_with(MARKER)) {
            out.comments.push((new_index[(*i).min(n)], c.clone()));
        }
    }
    out
}

/// Number of memory operands the data-flow pass classifies in `program`.
pub fn read_sites(program: &Program) -> usize {
    program.instructions.iter().map(|i| i.memory_reads().len()).sum()
}
