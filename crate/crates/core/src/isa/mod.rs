//! A 16-bit MSP430-like instruction set: registers, operands, instructions,
//! the textual assembly front end, a binary encoding under a fixed size
//! model, and static control-flow graphs.

mod cfg;
mod encode;
pub(crate) mod parse;

use std::collections::BTreeMap;
use std::fmt;

pub use cfg::{build_cfg, Block, Cfg, Edge, EdgeKind};
pub use encode::{decode, encode, instruction_size, Image};
pub use parse::{parse_assembly, render};

use crate::error::ParseError;

/// Program counter.
pub const PC: Register = Register(0);
/// Stack pointer.
pub const SP: Register = Register(1);
/// Status register.
pub const SR: Register = Register(2);
/// Constant generator.
pub const CG: Register = Register(3);
/// Reserved by instrumentation as the log pointer.
pub const LOG_REG: Register = Register(4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Register(u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterRole {
    ProgramCounter,
    StackPointer,
    Status,
    ConstantGenerator,
    General,
}

impl Register {
    pub fn new(index: u8) -> Option<Register> {
        (index < 16).then_some(Register(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn role(self) -> RegisterRole {
        match self.0 {
            0 => RegisterRole::ProgramCounter,
            1 => RegisterRole::StackPointer,
            2 => RegisterRole::Status,
            3 => RegisterRole::ConstantGenerator,
            _ => RegisterRole::General,
        }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A 16-bit quantity that is either already known or names a constant,
/// label or object resolved when the program is encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Lit(u16),
    Sym(String),
}

impl Value {
    pub fn sym(name: impl Into<String>) -> Value {
        Value::Sym(name.into())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Lit(v) => write!(f, "0x{v:04X}"),
            Value::Sym(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Register),
    Indirect(Register),
    AutoInc(Register),
    Indexed(Value, Register),
    Immediate(Value),
    Absolute(Value),
}

impl Operand {
    /// True for operands that address data memory.
    pub fn is_memory(&self) -> bool {
        matches!(self, Operand::Indirect(_) | Operand::AutoInc(_) | Operand::Indexed(..) | Operand::Absolute(_))
    }

    /// Number of extension words this operand adds under the size model.
    pub fn extension_words(&self) -> u16 {
        match self {
            Operand::Indexed(..) | Operand::Immediate(_) | Operand::Absolute(_) => 1,
            _ => 0,
        }
    }

    pub fn register(&self) -> Option<Register> {
        match self {
            Operand::Reg(r) | Operand::Indirect(r) | Operand::AutoInc(r) | Operand::Indexed(_, r) => Some(*r),
            Operand::Immediate(_) | Operand::Absolute(_) => None,
        }
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            Operand::Indexed(v, _) | Operand::Immediate(v) | Operand::Absolute(v) => Some(v),
            _ => None,
        }
    }

    /// The same memory location without the post-increment side effect.
    pub fn without_increment(&self) -> Operand {
        match self {
            Operand::AutoInc(r) => Operand::Indirect(*r),
            other => other.clone(),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Indirect(r) => write!(f, "@{r}"),
            Operand::AutoInc(r) => write!(f, "@{r}+"),
            Operand::Indexed(v, r) => write!(f, "{v}({r})"),
            Operand::Immediate(v) => write!(f, "#{v}"),
            Operand::Absolute(v) => write!(f, "&{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Mov,
    Add,
    Sub,
    Cmp,
    And,
    Bis,
    Xor,
    Dec,
    Inc,
    Push,
    Pop,
    Call,
    Ret,
    Jmp,
    Jeq,
    Jne,
    Jn,
    Jlo,
    Jhs,
    Jl,
    Jge,
    Nop,
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    TwoOperand,
    /// Operand lives in `dst` (DEC, INC, POP).
    SingleDst,
    /// Operand lives in `src` (PUSH, CALL).
    SingleSrc,
    Jump,
    NoOperand,
}

impl Opcode {
    pub const ALL: [Opcode; 23] = [
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Cmp,
        Opcode::And,
        Opcode::Bis,
        Opcode::Xor,
        Opcode::Dec,
        Opcode::Inc,
        Opcode::Push,
        Opcode::Pop,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Jmp,
        Opcode::Jeq,
        Opcode::Jne,
        Opcode::Jn,
        Opcode::Jlo,
        Opcode::Jhs,
        Opcode::Jl,
        Opcode::Jge,
        Opcode::Nop,
        Opcode::Halt,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Cmp => "cmp",
            Opcode::And => "and",
            Opcode::Bis => "bis",
            Opcode::Xor => "xor",
            Opcode::Dec => "dec",
            Opcode::Inc => "inc",
            Opcode::Push => "push",
            Opcode::Pop => "pop",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Jmp => "jmp",
            Opcode::Jeq => "jeq",
            Opcode::Jne => "jne",
            Opcode::Jn => "jn",
            Opcode::Jlo => "jlo",
            Opcode::Jhs => "jhs",
            Opcode::Jl => "jl",
            Opcode::Jge => "jge",
            Opcode::Nop => "nop",
            Opcode::Halt => "halt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let lower = s.to_ascii_lowercase();
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == lower)
    }

    pub fn format(self) -> Format {
        use Opcode::*;
        match self {
            Mov | Add | Sub | Cmp | And | Bis | Xor => Format::TwoOperand,
            Dec | Inc | Pop => Format::SingleDst,
            Push | Call => Format::SingleSrc,
            Jmp | Jeq | Jne | Jn | Jlo | Jhs | Jl | Jge => Format::Jump,
            Ret | Nop | Halt => Format::NoOperand,
        }
    }

    pub fn is_jump(self) -> bool {
        self.format() == Format::Jump
    }

    pub fn is_conditional_jump(self) -> bool {
        self.is_jump() && self != Opcode::Jmp
    }

    /// Whether the instruction reads its destination before writing it.
    pub fn reads_dst(self) -> bool {
        use Opcode::*;
        matches!(self, Add | Sub | Cmp | And | Bis | Xor | Dec | Inc)
    }

    /// Whether the instruction stores into its destination operand.
    pub fn writes_dst(self) -> bool {
        use Opcode::*;
        matches!(self, Mov | Add | Sub | And | Bis | Xor | Dec | Inc | Pop)
    }

    /// Byte forms exist only for data-processing instructions.
    pub fn allows_byte(self) -> bool {
        matches!(self.format(), Format::TwoOperand) || matches!(self, Opcode::Dec | Opcode::Inc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    Word,
    Byte,
}

impl Width {
    pub fn bytes(self) -> u16 {
        match self {
            Width::Word => 2,
            Width::Byte => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub width: Width,
    pub src: Option<Operand>,
    pub dst: Option<Operand>,
    /// 1-based source line, 0 for synthesized instructions.
    pub line: usize,
}

impl Instruction {
    pub fn new(opcode: Opcode, src: Option<Operand>, dst: Option<Operand>) -> Instruction {
        Instruction { opcode, width: Width::Word, src, dst, line: 0 }
    }

    pub fn two(opcode: Opcode, src: Operand, dst: Operand) -> Instruction {
        Instruction::new(opcode, Some(src), Some(dst))
    }

    pub fn byte(mut self) -> Instruction {
        self.width = Width::Byte;
        self
    }

    pub fn jump(opcode: Opcode, target: Value) -> Instruction {
        Instruction::new(opcode, None, Some(Operand::Immediate(target)))
    }

    /// Jump target for the jump family.
    pub fn jump_target(&self) -> Option<&Value> {
        if !self.opcode.is_jump() {
            return None;
        }
        match &self.dst {
            Some(Operand::Immediate(v)) => Some(v),
            _ => None,
        }
    }

    pub fn operands(&self) -> impl Iterator<Item = &Operand> {
        self.src.iter().chain(self.dst.iter())
    }

    /// Memory operands whose contents this instruction reads, in access order.
    pub fn memory_reads(&self) -> Vec<&Operand> {
        let mut out = Vec::new();
        match self.opcode.format() {
            Format::TwoOperand => {
                if let Some(src) = self.src.as_ref().filter(|o| o.is_memory()) {
                    out.push(src);
                }
                if self.opcode.reads_dst() {
                    if let Some(dst) = self.dst.as_ref().filter(|o| o.is_memory()) {
                        out.push(dst);
                    }
                }
            }
            Format::SingleDst => {
                if self.opcode.reads_dst() {
                    if let Some(dst) = self.dst.as_ref().filter(|o| o.is_memory()) {
                        out.push(dst);
                    }
                }
            }
            Format::SingleSrc => {
                if let Some(src) = self.src.as_ref().filter(|o| o.is_memory()) {
                    out.push(src);
                }
            }
            Format::Jump | Format::NoOperand => {}
        }
        out
    }

    /// The explicit destination operand if this instruction stores to memory through it.
    pub fn memory_write(&self) -> Option<&Operand> {
        if self.opcode.writes_dst() {
            self.dst.as_ref().filter(|o| o.is_memory())
        } else {
            None
        }
    }

    /// Changes control flow (jumps, branches, calls, returns and writes to PC).
    pub fn alters_control_flow(&self) -> bool {
        self.opcode.is_jump() || matches!(self.opcode, Opcode::Call | Opcode::Ret) || self.writes_pc()
    }

    pub fn writes_pc(&self) -> bool {
        self.opcode.writes_dst() && self.dst == Some(Operand::Reg(PC))
    }

    pub fn uses_register(&self, reg: Register) -> bool {
        self.operands().any(|o| o.register() == Some(reg))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectDecl {
    pub name: String,
    pub base: u16,
    pub len: u16,
}

impl ObjectDecl {
    pub fn contains(&self, addr: u16) -> bool {
        addr >= self.base && (addr as u32) < self.base as u32 + self.len as u32
    }
}

/// Initial contents for data memory, written by the loader before a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataInit {
    pub addr: Value,
    pub words: Vec<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    /// Label name to the index of the instruction it precedes (may equal `len`).
    pub labels: BTreeMap<String, usize>,
    pub constants: BTreeMap<String, u16>,
    pub object_map: Vec<ObjectDecl>,
    pub data: Vec<DataInit>,
    /// Comment lines attached before the instruction at the given index.
    pub comments: Vec<(usize, String)>,
}

impl Program {
    pub fn object(&self, name: &str) -> Option<&ObjectDecl> {
        self.object_map.iter().find(|o| o.name == name)
    }

    /// Labels attached to instruction `index`, in name order.
    pub fn labels_at(&self, index: usize) -> impl Iterator<Item = &str> {
        self.labels.iter().filter(move |(_, &i)| i == index).map(|(n, _)| n.as_str())
    }

    pub fn has_comment(&self, text: &str) -> bool {
        self.comments.iter().any(|(_, c)| c.trim() == text)
    }

    /// Copy with every `line` field cleared, for comparisons that ignore provenance.
    pub fn without_lines(&self) -> Program {
        let mut p = self.clone();
        for i in &mut p.instructions {
            i.line = 0;
        }
        p
    }

    /// Resolves a constant or object name; labels need an encoded image.
    pub fn data_symbol(&self, name: &str) -> Option<u16> {
        self.constants.get(name).copied().or_else(|| self.object(name).map(|o| o.base))
    }

    pub(crate) fn check_symbols(&self) -> Result<(), ParseError> {
        let known = |name: &str| {
            self.labels.contains_key(name) || self.constants.contains_key(name) || self.object(name).is_some()
        };
        for ins in &self.instructions {
            for op in ins.operands() {
                if let Some(Value::Sym(s)) = op.value() {
                    if !known(s) {
                        return Err(ParseError::UnresolvedLabel(s.clone()));
                    }
                }
            }
        }
        for d in &self.data {
            if let Value::Sym(s) = &d.addr {
                if !known(s) {
                    return Err(ParseError::UnresolvedLabel(s.clone()));
                }
            }
        }
        Ok(())
    }
}
