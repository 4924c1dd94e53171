//! Instruction-level emulator.
//!
//! Cost model: one cycle per fetched word (opcode plus extension words) and
//! one cycle per data memory access.

use crate::error::{EmuError, RunError};
use crate::isa::{
    decode, Format, Image, Instruction, Opcode, Operand, Program, Register, Value, Width, LOG_REG, PC, SP, SR,
};
use crate::layout::MemoryLayout;
use crate::pox::Device;
use crate::trace::{GpioWrite, PeripheralQueues, PeripheralTrace};

/// Label of the abort stub emitted by the instrumenter.
pub const ABORT_LABEL: &str = ".L11";
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
/// First argument register; arguments occupy r8..r15.
pub const ARG_BASE: usize = 8;
pub const ARG_COUNT: usize = 8;

const MEM_SIZE: usize = 0x1_0000;

const FLAG_C: u16 = 1 << 0;
const FLAG_Z: u16 = 1 << 1;
const FLAG_N: u16 = 1 << 2;
const FLAG_V: u16 = 1 << 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub c: bool,
    pub z: bool,
    pub n: bool,
    pub v: bool,
}

impl Flags {
    fn bits(self) -> u16 {
        (self.c as u16 * FLAG_C) | (self.z as u16 * FLAG_Z) | (self.n as u16 * FLAG_N) | (self.v as u16 * FLAG_V)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub regs: [u16; 16],
    pub memory: Vec<u8>,
    pub cycles: u64,
}

impl Default for MachineState {
    fn default() -> Self {
        MachineState { regs: [0; 16], memory: vec![0; MEM_SIZE], cycles: 0 }
    }
}

impl MachineState {
    pub fn pc(&self) -> u16 {
        self.regs[PC.index()]
    }

    pub fn reg(&self, r: Register) -> u16 {
        self.regs[r.index()]
    }

    /// Flags live in the status register.
    pub fn flags(&self) -> Flags {
        let sr = self.regs[SR.index()];
        Flags { c: sr & FLAG_C != 0, z: sr & FLAG_Z != 0, n: sr & FLAG_N != 0, v: sr & FLAG_V != 0 }
    }

    pub fn set_flags(&mut self, f: Flags) {
        let sr = &mut self.regs[SR.index()];
        *sr = (*sr & !(FLAG_C | FLAG_Z | FLAG_N | FLAG_V)) | f.bits();
    }

    pub fn word(&self, addr: u16) -> u16 {
        let a = addr as usize;
        u16::from_le_bytes([self.memory[a], self.memory[(a + 1) % MEM_SIZE]])
    }

    pub fn set_word(&mut self, addr: u16, value: u16) {
        let [lo, hi] = value.to_le_bytes();
        let a = addr as usize;
        self.memory[a] = lo;
        self.memory[(a + 1) % MEM_SIZE] = hi;
    }

    pub fn bytes(&self, lo: u16, len: usize) -> &[u8] {
        &self.memory[lo as usize..lo as usize + len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferKind {
    Jump,
    BranchTaken,
    BranchFallthrough,
    Call,
    Return,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    Completed,
    /// Reached the abort stub.
    Aborted,
    /// The program counter left the executable range.
    LeftEr(u16),
    StepLimitExceeded(u64),
    Fault(EmuError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Read {
        addr: u16,
        width: Width,
        value: u16,
    },
    Write {
        addr: u16,
        width: Width,
        value: u16,
    },
    ControlTransfer {
        from: u16,
        to: u16,
        kind: TransferKind,
    },
    /// A write by something other than the CPU, such as DMA.
    ExternalWrite {
        addr: u16,
        value: u16,
    },
    Halt(HaltReason),
}

#[derive(Debug, Clone, Copy)]
enum Loc {
    Reg(Register),
    Mem(u16),
    Imm(u16),
}

fn lit(v: &Value) -> u16 {
    match v {
        Value::Lit(n) => *n,
        Value::Sym(s) => unreachable!("decoded operand carries symbol {s}"),
    }
}

fn mask(w: Width) -> u16 {
    match w {
        Width::Word => 0xFFFF,
        Width::Byte => 0x00FF,
    }
}

fn sign(w: Width) -> u16 {
    match w {
        Width::Word => 0x8000,
        Width::Byte => 0x0080,
    }
}

fn nz(r: u16, w: Width) -> (bool, bool) {
    (r & sign(w) != 0, r == 0)
}

fn add(d: u16, s: u16, carry_in: u16, w: Width) -> (u16, Flags) {
    let m = mask(w);
    let wide = d as u32 + s as u32 + carry_in as u32;
    let r = wide as u16 & m;
    let (n, z) = nz(r, w);
    let v = (!(d ^ s) & (d ^ r) & sign(w)) != 0;
    (r, Flags { c: wide > m as u32, z, n, v })
}

/// `d - s` with carry meaning "no borrow".
fn sub(d: u16, s: u16, w: Width) -> (u16, Flags) {
    add(d, !s & mask(w), 1, w)
}

fn logic(r: u16, v: bool, w: Width) -> Flags {
    let (n, z) = nz(r, w);
    Flags { c: !z, z, n, v }
}

/// CPU plus memory and peripherals, with no attestation hardware.
#[derive(Debug, Clone)]
pub struct Machine {
    pub state: MachineState,
    pub layout: MemoryLayout,
    pub gpio_log: Vec<GpioWrite>,
    /// Address of the HALT that ends the abort stub, if the image has one.
    pub abort_addr: Option<u16>,
    pub halted: Option<HaltReason>,
    queues: PeripheralQueues,
}

impl Machine {
    pub fn new(layout: MemoryLayout, trace: &PeripheralTrace) -> Machine {
        Machine {
            state: MachineState::default(),
            layout,
            gpio_log: Vec::new(),
            abort_addr: None,
            halted: None,
            queues: PeripheralQueues::new(trace),
        }
    }

    /// Copies the image into ER and applies its loader data.
    pub fn load_image(&mut self, image: &Image) -> Result<(), RunError> {
        let er = er_contents(image, &self.layout)?;
        let lo = self.layout.er_min as usize;
        self.state.memory[lo..lo + er.len()].copy_from_slice(&er);
        for (addr, words) in &image.data {
            for (k, w) in words.iter().enumerate() {
                self.state.set_word(addr.wrapping_add(2 * k as u16), *w);
            }
        }
        self.abort_addr = image.label(ABORT_LABEL).and_then(|a| self.first_halt_from(a));
        Ok(())
    }

    fn first_halt_from(&self, mut addr: u16) -> Option<u16> {
        while self.layout.in_er(addr) {
            let (ins, size) = decode(&self.state.memory, addr).ok()?;
            if ins.opcode == Opcode::Halt {
                return Some(addr);
            }
            addr = addr.checked_add(size)?;
        }
        None
    }

    /// Register state at operation entry: arguments in r8..r15, the stack
    /// pointer at its initial value, the log pointer at the top of OR.
    pub fn enter(&mut self, args: &[u16]) {
        let mut regs = [0u16; 16];
        regs[PC.index()] = self.layout.er_min;
        regs[SP.index()] = self.layout.stack_init;
        regs[LOG_REG.index()] = self.layout.or_max;
        for (k, a) in args.iter().take(ARG_COUNT).enumerate() {
            regs[ARG_BASE + k] = *a;
        }
        self.state.regs = regs;
        self.halted = None;
    }

    /// Executes one instruction, appending its events to `out`.
    pub fn step(&mut self, out: &mut Vec<Event>) -> Option<HaltReason> {
        if let Some(h) = self.halted {
            return Some(h);
        }
        let halt = match self.execute(out) {
            Ok(Some(h)) => Some(h),
            Ok(None) => {
                let pc = self.state.pc();
                (!self.layout.in_er(pc)).then_some(HaltReason::LeftEr(pc))
            }
            Err(e) => Some(HaltReason::Fault(e)),
        };
        if let Some(h) = halt {
            out.push(Event::Halt(h));
            self.halted = Some(h);
        }
        halt
    }

    /// Decodes the instruction at the current program counter.
    pub fn peek(&self) -> Result<(Instruction, u16), EmuError> {
        decode(&self.state.memory, self.state.pc())
    }

    pub fn external_write(&mut self, addr: u16, value: u16) -> Event {
        self.state.set_word(addr, value);
        Event::ExternalWrite { addr, value }
    }

    fn read(&mut self, addr: u16, w: Width, out: &mut Vec<Event>) -> Result<u16, EmuError> {
        if w == Width::Word && !addr.is_multiple_of(2) {
            return Err(EmuError::UnalignedWordAccess(addr));
        }
        self.state.cycles += 1;
        let latched = if self.layout.in_peripheral(addr) { self.queues.head(addr) } else { None };
        let value = match (latched, w) {
            (Some(v), _) => v & mask(w),
            (None, Width::Word) => self.state.word(addr),
            (None, Width::Byte) => self.state.memory[addr as usize] as u16,
        };
        out.push(Event::Read { addr, width: w, value });
        Ok(value)
    }

    fn write(&mut self, addr: u16, w: Width, value: u16, out: &mut Vec<Event>) -> Result<(), EmuError> {
        if w == Width::Word && !addr.is_multiple_of(2) {
            return Err(EmuError::UnalignedWordAccess(addr));
        }
        self.state.cycles += 1;
        let value = value & mask(w);
        match w {
            Width::Word => self.state.set_word(addr, value),
            Width::Byte => self.state.memory[addr as usize] = value as u8,
        }
        if self.layout.in_peripheral(addr) {
            self.gpio_log.push(GpioWrite { cycle: self.state.cycles, addr, value });
            self.queues.acknowledge(addr);
        }
        out.push(Event::Write { addr, width: w, value });
        Ok(())
    }

    fn locate(&mut self, op: &Operand, w: Width) -> Loc {
        let regs = &mut self.state.regs;
        match op {
            Operand::Reg(r) => Loc::Reg(*r),
            Operand::Indirect(r) => Loc::Mem(regs[r.index()]),
            Operand::AutoInc(r) => {
                let a = regs[r.index()];
                regs[r.index()] = a.wrapping_add(w.bytes());
                Loc::Mem(a)
            }
            Operand::Indexed(off, r) => Loc::Mem(regs[r.index()].wrapping_add(lit(off))),
            Operand::Immediate(v) => Loc::Imm(lit(v)),
            Operand::Absolute(v) => Loc::Mem(lit(v)),
        }
    }

    fn load(&mut self, loc: Loc, w: Width, out: &mut Vec<Event>) -> Result<u16, EmuError> {
        match loc {
            Loc::Reg(r) => Ok(self.state.regs[r.index()] & mask(w)),
            Loc::Mem(a) => self.read(a, w, out),
            Loc::Imm(v) => Ok(v & mask(w)),
        }
    }

    fn store(&mut self, loc: Loc, w: Width, value: u16, out: &mut Vec<Event>) -> Result<(), EmuError> {
        match loc {
            Loc::Reg(r) => {
                self.state.regs[r.index()] = value & mask(w);
                Ok(())
            }
            Loc::Mem(a) => self.write(a, w, value, out),
            Loc::Imm(_) => unreachable!("immediate destination rejected by decoder"),
        }
    }

    fn push_word(&mut self, value: u16, out: &mut Vec<Event>) -> Result<(), EmuError> {
        let sp = self.state.regs[SP.index()].wrapping_sub(2);
        self.state.regs[SP.index()] = sp;
        self.write(sp, Width::Word, value, out)
    }

    fn execute(&mut self, out: &mut Vec<Event>) -> Result<Option<HaltReason>, EmuError> {
        let pc = self.state.pc();
        let (ins, size) = decode(&self.state.memory, pc)?;
        self.state.cycles += (size / 2) as u64;
        let next = pc.wrapping_add(size);
        self.state.regs[PC.index()] = next;
        let w = ins.width;

        match ins.opcode.format() {
            Format::TwoOperand => {
                let (src, dst) =
                    (ins.src.as_ref().expect("two-operand src"), ins.dst.as_ref().expect("two-operand dst"));
                let sloc = self.locate(src, w);
                let s = self.load(sloc, w, out)?;
                let dloc = self.locate(dst, w);
                let d = if ins.opcode.reads_dst() { self.load(dloc, w, out)? } else { 0 };
                let (result, flags) = match ins.opcode {
                    Opcode::Mov => (s, None),
                    Opcode::Add => {
                        let (r, f) = add(d, s, 0, w);
                        (r, Some(f))
                    }
                    Opcode::Sub | Opcode::Cmp => {
                        let (r, f) = sub(d, s, w);
                        (r, Some(f))
                    }
                    Opcode::And => (d & s, Some(logic(d & s, false, w))),
                    Opcode::Bis => (d | s, None),
                    Opcode::Xor => {
                        let r = d ^ s;
                        (r, Some(logic(r, d & s & sign(w) != 0, w)))
                    }
                    _ => unreachable!("not a two-operand opcode"),
                };
                if ins.opcode.writes_dst() {
                    self.store(dloc, w, result, out)?;
                }
                if let Some(f) = flags {
                    self.state.set_flags(f);
                }
                if ins.writes_pc() {
                    let to = self.state.pc();
                    out.push(Event::ControlTransfer { from: pc, to, kind: TransferKind::Jump });
                }
            }
            Format::SingleDst => {
                let dst = ins.dst.as_ref().expect("single-operand dst");
                match ins.opcode {
                    Opcode::Pop => {
                        let sp = self.state.regs[SP.index()];
                        let v = self.read(sp, Width::Word, out)?;
                        self.state.regs[SP.index()] = sp.wrapping_add(2);
                        let dloc = self.locate(dst, w);
                        self.store(dloc, w, v, out)?;
                    }
                    op => {
                        let dloc = self.locate(dst, w);
                        let d = self.load(dloc, w, out)?;
                        let (r, f) = if op == Opcode::Dec { sub(d, 1, w) } else { add(d, 1, 0, w) };
                        self.store(dloc, w, r, out)?;
                        self.state.set_flags(f);
                    }
                }
                if ins.writes_pc() {
                    let to = self.state.pc();
                    out.push(Event::ControlTransfer { from: pc, to, kind: TransferKind::Jump });
                }
            }
            Format::SingleSrc => {
                let src = ins.src.as_ref().expect("single-operand src");
                let sloc = self.locate(src, Width::Word);
                let v = self.load(sloc, Width::Word, out)?;
                self.push_word(if ins.opcode == Opcode::Call { next } else { v }, out)?;
                if ins.opcode == Opcode::Call {
                    self.state.regs[PC.index()] = v;
                    out.push(Event::ControlTransfer { from: pc, to: v, kind: TransferKind::Call });
                }
            }
            Format::Jump => {
                let target = lit(ins.jump_target().expect("jump target"));
                let f = self.state.flags();
                let taken = match ins.opcode {
                    Opcode::Jmp => true,
                    Opcode::Jeq => f.z,
                    Opcode::Jne => !f.z,
                    Opcode::Jn => f.n,
                    Opcode::Jlo => !f.c,
                    Opcode::Jhs => f.c,
                    Opcode::Jl => f.n != f.v,
                    Opcode::Jge => f.n == f.v,
                    _ => unreachable!("not a jump"),
                };
                let kind = match (ins.opcode, taken) {
                    (Opcode::Jmp, _) => TransferKind::Jump,
                    (_, true) => TransferKind::BranchTaken,
                    (_, false) => TransferKind::BranchFallthrough,
                };
                let to = if taken { target } else { next };
                self.state.regs[PC.index()] = to;
                out.push(Event::ControlTransfer { from: pc, to, kind });
            }
            Format::NoOperand => match ins.opcode {
                Opcode::Ret => {
                    let sp = self.state.regs[SP.index()];
                    let to = self.read(sp, Width::Word, out)?;
                    self.state.regs[SP.index()] = sp.wrapping_add(2);
                    self.state.regs[PC.index()] = to;
                    out.push(Event::ControlTransfer { from: pc, to, kind: TransferKind::Return });
                }
                Opcode::Nop => {}
                Opcode::Halt => {
                    self.state.regs[PC.index()] = pc;
                    let reason = if self.abort_addr == Some(pc) { HaltReason::Aborted } else { HaltReason::Completed };
                    return Ok(Some(reason));
                }
                _ => unreachable!("not a no-operand opcode"),
            },
        }
        Ok(None)
    }
}

/// Contents of the whole executable range after loading `image`.
pub fn er_contents(image: &Image, layout: &MemoryLayout) -> Result<Vec<u8>, RunError> {
    let len = layout.er_len();
    if image.base != layout.er_min || image.bytes.len() > len {
        return Err(RunError::ImageTooLarge { size: image.bytes.len() });
    }
    let mut er = vec![0u8; len];
    er[..image.bytes.len()].copy_from_slice(&image.bytes);
    for (addr, words) in &image.data {
        for (k, w) in words.iter().enumerate() {
            for (j, b) in w.to_le_bytes().into_iter().enumerate() {
                let a = addr.wrapping_add(2 * k as u16 + j as u16);
                if layout.in_er(a) {
                    er[(a - layout.er_min) as usize] = b;
                }
            }
        }
    }
    Ok(er)
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub state: MachineState,
    pub events: Vec<Event>,
    pub halt: HaltReason,
    pub steps: u64,
    pub gpio_log: Vec<GpioWrite>,
    /// Execution flag at the end of the run.
    pub exec: bool,
    pub image: Image,
}

impl ExecutionResult {
    pub fn transfers(&self) -> impl Iterator<Item = (u16, u16, TransferKind)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::ControlTransfer { from, to, kind } => Some((*from, *to, *kind)),
            _ => None,
        })
    }

    /// Log pointer at exit.
    pub fn log_pointer(&self) -> u16 {
        self.state.reg(LOG_REG)
    }
}

/// Loads `program` into a fresh device and runs one operation to completion.
pub fn run_operation(
    program: &Program,
    layout: &MemoryLayout,
    args: &[u16],
    trace: &PeripheralTrace,
    max_steps: u64,
) -> Result<ExecutionResult, RunError> {
    let mut dev = Device::boot(program, layout, trace)?;
    Ok(dev.run(args, max_steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_assembly;

    fn layout() -> MemoryLayout {
        MemoryLayout {
            er_min: 0xE000,
            er_max: 0xFFFF,
            or_min: 0x0400,
            or_max: 0x07FE,
            stack_init: 0x0A00,
            peripherals: vec![[0x0010, 0x00FF], [0x0200, 0x0201]],
        }
    }

    fn run(text: &str, trace: &PeripheralTrace) -> ExecutionResult {
        run_operation(&parse_assembly(text).unwrap(), &layout(), &[], trace, DEFAULT_MAX_STEPS).unwrap()
    }

    #[test]
    fn dec_costs_one_cycle() {
        let r = run("mov #0x1000, r4\ndec r4\nhalt", &PeripheralTrace::default());
        assert_eq!(r.state.reg(LOG_REG), 0x0FFF);
        // mov #imm: 2 words; dec: 1 word; halt: 1 word.
        assert_eq!(r.state.cycles, 4);
    }

    #[test]
    fn cmp_sets_zero() {
        let r = run("mov #5, r4\ncmp #5, r4\nhalt", &PeripheralTrace::default());
        let f = r.state.flags();
        assert!(f.z && f.c && !f.n);
        assert_eq!(r.state.reg(LOG_REG), 5);
    }

    #[test]
    fn byte_read_from_peripheral() {
        let trace = PeripheralTrace::feeding(0x0200, [0x1234]);
        let r = run("mov #0x0200, r15\nmov.b @r15, r14\nhalt", &trace);
        assert!(r.events.contains(&Event::Read { addr: 0x0200, width: Width::Byte, value: 0x34 }));
        assert_eq!(r.state.regs[14], 0x34);
    }

    #[test]
    fn halt_only_completes() {
        let r = run("halt", &PeripheralTrace::default());
        assert_eq!(r.halt, HaltReason::Completed);
        assert_eq!(r.state.cycles, 1);
        assert!(r.exec);
    }

    #[test]
    fn zero_step_budget() {
        let p = parse_assembly("halt").unwrap();
        let r = run_operation(&p, &layout(), &[], &PeripheralTrace::default(), 0).unwrap();
        assert_eq!(r.halt, HaltReason::StepLimitExceeded(0));
        assert!(!r.exec);
    }

    #[test]
    fn undecodable_word_faults() {
        let r = run("mov #0xFFFF, &0x0300\nmov #0x0300, r5\nmov r5, pc", &PeripheralTrace::default());
        assert!(matches!(r.halt, HaltReason::LeftEr(0x0300)));
        let r = run(".init 0xE010 0xFFFF\nmov #0xE010, pc", &PeripheralTrace::default());
        assert_eq!(r.halt, HaltReason::Fault(EmuError::DecodeFault(0xE010)));
    }

    #[test]
    fn unaligned_word_faults() {
        let r = run("mov &0x0301, r5\nhalt", &PeripheralTrace::default());
        assert_eq!(r.halt, HaltReason::Fault(EmuError::UnalignedWordAccess(0x0301)));
    }

    #[test]
    fn call_and_return() {
        let r = run("call #f\nhalt\nf: mov #7, r5\nret", &PeripheralTrace::default());
        assert_eq!(r.halt, HaltReason::Completed);
        assert_eq!(r.state.regs[5], 7);
        assert_eq!(r.state.reg(SP), 0x0A00);
        let kinds: Vec<_> = r.transfers().map(|t| t.2).collect();
        assert_eq!(kinds, vec![TransferKind::Call, TransferKind::Return]);
    }

    #[test]
    fn conditional_jumps() {
        // r5 = 3 - 5 is negative and borrows.
        let r = run(
            "mov #3, r5\ncmp #5, r5\njlo a\nhalt\na: jl b\nhalt\nb: jn c\nhalt\nc: jhs d\nmov #1, r6\nd: halt",
            &PeripheralTrace::default(),
        );
        assert_eq!(r.state.regs[6], 1);
        let kinds: Vec<_> = r.transfers().map(|t| t.2).collect();
        assert_eq!(
            kinds,
            vec![
                TransferKind::BranchTaken,
                TransferKind::BranchTaken,
                TransferKind::BranchTaken,
                TransferKind::BranchFallthrough
            ]
        );
    }

    #[test]
    fn latched_input_acknowledged_by_write() {
        let trace = PeripheralTrace::feeding(0x0020, [4, 9]);
        let r = run("mov &0x0020, r5\nmov &0x0020, r6\nmov #0, &0x0020\nmov &0x0020, r7\nmov #0, &0x0020\nmov &0x0020, r8\nhalt", &trace);
        assert_eq!(&r.state.regs[5..9], &[4, 4, 9, 0]);
        assert_eq!(r.gpio_log.len(), 2);
    }

    #[test]
    fn byte_ops_clear_high_byte() {
        let r = run("mov #0xABCD, r5\nmov.b #0x12, r5\nmov #0x00FF, r6\ninc.b r6\nhalt", &PeripheralTrace::default());
        assert_eq!(r.state.regs[5], 0x0012);
        assert_eq!(r.state.regs[6], 0);
        assert!(r.state.flags().c && r.state.flags().z);
    }

    #[test]
    fn leaving_er_halts() {
        let r = run("mov #0x0300, pc", &PeripheralTrace::default());
        assert_eq!(r.halt, HaltReason::LeftEr(0x0300));
    }

    #[test]
    fn cycles_strictly_increase() {
        let p = parse_assembly("mov #3, r5\nl: dec r5\njne l\nhalt").unwrap();
        let mut m = Machine::new(layout(), &PeripheralTrace::default());
        m.load_image(&crate::isa::encode(&p, 0xE000).unwrap()).unwrap();
        m.enter(&[]);
        let mut out = Vec::new();
        let mut last = 0;
        while m.step(&mut out).is_none() {
            assert!(m.state.cycles > last);
            last = m.state.cycles;
        }
    }
}
