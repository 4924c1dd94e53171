//! Binary encoding.
//!
//! Every instruction is one opcode word followed by one extension word per
//! Indexed/Immediate/Absolute operand (source first). The opcode word is a
//! mixed-radix packing of (opcode, width, addressing modes, registers); jumps
//! carry an 11-bit signed word offset relative to the following instruction.

use std::collections::BTreeMap;

use super::{Format, Instruction, Opcode, Operand, Program, Register, Value, Width};
use crate::error::{EmuError, EncodeError};

const TWO_OPS: [Opcode; 7] =
    [Opcode::Mov, Opcode::Add, Opcode::Sub, Opcode::Cmp, Opcode::And, Opcode::Bis, Opcode::Xor];
const SINGLE_OPS: [Opcode; 5] = [Opcode::Dec, Opcode::Inc, Opcode::Pop, Opcode::Push, Opcode::Call];
const NO_OPS: [Opcode; 3] = [Opcode::Ret, Opcode::Nop, Opcode::Halt];
const JUMP_OPS: [Opcode; 8] =
    [Opcode::Jmp, Opcode::Jeq, Opcode::Jne, Opcode::Jn, Opcode::Jlo, Opcode::Jhs, Opcode::Jl, Opcode::Jge];

const SRC_CODES: u32 = 66;
const DST_CODES: u32 = 49;
const SINGLE_BASE: u32 = 14 * SRC_CODES * DST_CODES;
const NONE_BASE: u32 = SINGLE_BASE + 10 * SRC_CODES;
const JUMP_BASE: u32 = NONE_BASE + 16;
const JUMP_SPAN: u32 = 2048;

/// Size in bytes under the size model.
pub fn instruction_size(ins: &Instruction) -> u16 {
    if ins.opcode.is_jump() {
        return 2;
    }
    2 + 2 * ins.operands().map(Operand::extension_words).sum::<u16>()
}

/// An encoded program placed at `base`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub base: u16,
    pub bytes: Vec<u8>,
    /// Address of each instruction, by index.
    pub addresses: Vec<u16>,
    pub labels: BTreeMap<String, u16>,
    /// Loader writes, resolved to absolute addresses.
    pub data: Vec<(u16, Vec<u16>)>,
    constants: BTreeMap<String, u16>,
}

impl Image {
    /// One past the last code byte.
    pub fn end(&self) -> u32 {
        self.base as u32 + self.bytes.len() as u32
    }

    pub fn label(&self, name: &str) -> Option<u16> {
        self.labels.get(name).copied()
    }

    pub fn resolve(&self, v: &Value) -> Option<u16> {
        match v {
            Value::Lit(n) => Some(*n),
            Value::Sym(s) => self.labels.get(s).or_else(|| self.constants.get(s)).copied(),
        }
    }

    /// Instruction index starting at `addr`, if any.
    pub fn index_of(&self, addr: u16) -> Option<usize> {
        self.addresses.binary_search(&addr).ok()
    }
}

fn src_code(op: &Operand) -> u32 {
    match op {
        Operand::Reg(r) => r.index() as u32,
        Operand::Indirect(r) => 16 + r.index() as u32,
        Operand::AutoInc(r) => 32 + r.index() as u32,
        Operand::Indexed(_, r) => 48 + r.index() as u32,
        Operand::Immediate(_) => 64,
        Operand::Absolute(_) => 65,
    }
}

fn dst_code(op: &Operand) -> Option<u32> {
    Some(match op {
        Operand::Reg(r) => r.index() as u32,
        Operand::Indirect(r) => 16 + r.index() as u32,
        Operand::Indexed(_, r) => 32 + r.index() as u32,
        Operand::Absolute(_) => 48,
        Operand::AutoInc(_) | Operand::Immediate(_) => return None,
    })
}

fn position(ops: &[Opcode], op: Opcode) -> u32 {
    ops.iter().position(|&o| o == op).expect("opcode in table") as u32
}

pub fn encode(program: &Program, base: u16) -> Result<Image, EncodeError> {
    if !base.is_multiple_of(2) {
        return Err(EncodeError::OddBase(base));
    }
    let mut addresses = Vec::with_capacity(program.instructions.len());
    let mut addr = base as u32;
    for ins in &program.instructions {
        addresses.push(addr as u16);
        addr += instruction_size(ins) as u32;
        if addr > 0x1_0000 {
            return Err(EncodeError::ImageOverflow);
        }
    }
    let end = addr;
    let mut labels = BTreeMap::new();
    for (name, &idx) in &program.labels {
        let a = addresses.get(idx).map(|&a| a as u32).unwrap_or(end);
        if a > 0xFFFF {
            return Err(EncodeError::ImageOverflow);
        }
        labels.insert(name.clone(), a as u16);
    }
    let mut constants = program.constants.clone();
    for o in &program.object_map {
        constants.insert(o.name.clone(), o.base);
    }
    let mut image = Image { base, bytes: Vec::new(), addresses, labels, data: Vec::new(), constants };
    let resolve = |image: &Image, v: &Value| {
        image.resolve(v).ok_or_else(|| match v {
            Value::Sym(s) => EncodeError::Unresolved(s.clone()),
            Value::Lit(_) => unreachable!(),
        })
    };

    let mut bytes = Vec::with_capacity((end - base as u32) as usize);
    for (index, ins) in program.instructions.iter().enumerate() {
        let here = image.addresses[index];
        let byte = (ins.width == Width::Byte) as u32;
        let unencodable = |reason| EncodeError::Unencodable { index, reason };
        let word = match ins.opcode.format() {
            Format::TwoOperand => {
                let src = ins.src.as_ref().ok_or(unencodable("missing source"))?;
                let dst = ins.dst.as_ref().ok_or(unencodable("missing destination"))?;
                let d = dst_code(dst).ok_or(unencodable("destination mode"))?;
                ((position(&TWO_OPS, ins.opcode) * 2 + byte) * SRC_CODES + src_code(src)) * DST_CODES + d
            }
            Format::SingleDst | Format::SingleSrc => {
                let op = ins.src.as_ref().or(ins.dst.as_ref()).ok_or(unencodable("missing operand"))?;
                SINGLE_BASE + (position(&SINGLE_OPS, ins.opcode) * 2 + byte) * SRC_CODES + src_code(op)
            }
            Format::NoOperand => NONE_BASE + position(&NO_OPS, ins.opcode),
            Format::Jump => {
                let target = resolve(&image, ins.jump_target().ok_or(unencodable("missing target"))?)?;
                let next = here as i32 + 2;
                let delta = target as i32 - next;
                if delta % 2 != 0 || !(-2048..=2046).contains(&delta) {
                    return Err(EncodeError::JumpOutOfRange { index });
                }
                JUMP_BASE + position(&JUMP_OPS, ins.opcode) * JUMP_SPAN + ((delta / 2) as u32 & 0x7FF)
            }
        };
        bytes.extend_from_slice(&(word as u16).to_le_bytes());
        if !ins.opcode.is_jump() {
            for op in ins.operands() {
                if let Some(v) = op.value() {
                    bytes.extend_from_slice(&resolve(&image, v)?.to_le_bytes());
                }
            }
        }
    }
    image.bytes = bytes;
    for d in &program.data {
        let addr = resolve(&image, &d.addr)?;
        image.data.push((addr, d.words.clone()));
    }
    Ok(image)
}

fn read_word(mem: &[u8], addr: u32) -> Result<u16, EmuError> {
    if !addr.is_multiple_of(2) || addr + 1 >= mem.len() as u32 {
        return Err(EmuError::DecodeFault(addr as u16));
    }
    Ok(u16::from_le_bytes([mem[addr as usize], mem[addr as usize + 1]]))
}

fn reg(i: u32) -> Register {
    Register::new(i as u8).expect("register index below 16")
}

struct Cursor<'a> {
    mem: &'a [u8],
    next: u32,
    fault: EmuError,
}

impl Cursor<'_> {
    fn ext(&mut self) -> Result<Value, EmuError> {
        let w = read_word(self.mem, self.next).map_err(|_| self.fault)?;
        self.next += 2;
        Ok(Value::Lit(w))
    }

    fn src_operand(&mut self, code: u32) -> Result<Operand, EmuError> {
        Ok(match code {
            0..=15 => Operand::Reg(reg(code)),
            16..=31 => Operand::Indirect(reg(code - 16)),
            32..=47 => Operand::AutoInc(reg(code - 32)),
            48..=63 => Operand::Indexed(self.ext()?, reg(code - 48)),
            64 => Operand::Immediate(self.ext()?),
            _ => Operand::Absolute(self.ext()?),
        })
    }

    fn dst_operand(&mut self, code: u32) -> Result<Operand, EmuError> {
        Ok(match code {
            0..=15 => Operand::Reg(reg(code)),
            16..=31 => Operand::Indirect(reg(code - 16)),
            32..=47 => Operand::Indexed(self.ext()?, reg(code - 32)),
            _ => Operand::Absolute(self.ext()?),
        })
    }
}

/// Decodes the instruction at `addr`, returning it with literal operands
/// and its size in bytes.
pub fn decode(mem: &[u8], addr: u16) -> Result<(Instruction, u16), EmuError> {
    let fault = EmuError::DecodeFault(addr);
    let word = read_word(mem, addr as u32)? as u32;
    let mut cur = Cursor { mem, next: addr as u32 + 2, fault };
    let ins = if word < SINGLE_BASE {
        let d = word % DST_CODES;
        let rest = word / DST_CODES;
        let s = rest % SRC_CODES;
        let opw = rest / SRC_CODES;
        let opcode = TWO_OPS[(opw / 2) as usize];
        let width = if opw % 2 == 1 { Width::Byte } else { Width::Word };
        let src = cur.src_operand(s)?;
        let dst = cur.dst_operand(d)?;
        Instruction { opcode, width, src: Some(src), dst: Some(dst), line: 0 }
    } else if word < NONE_BASE {
        let v = word - SINGLE_BASE;
        let code = v % SRC_CODES;
        let opw = v / SRC_CODES;
        let opcode = SINGLE_OPS[(opw / 2) as usize];
        let width = if opw % 2 == 1 { Width::Byte } else { Width::Word };
        if width == Width::Byte && !opcode.allows_byte() {
            return Err(fault);
        }
        let op = cur.src_operand(code)?;
        let mut ins = Instruction { opcode, width, src: None, dst: None, line: 0 };
        if opcode.format() == Format::SingleSrc {
            ins.src = Some(op);
        } else {
            if matches!(op, Operand::Immediate(_) | Operand::AutoInc(_)) {
                return Err(fault);
            }
            ins.dst = Some(op);
        }
        ins
    } else if word < NONE_BASE + NO_OPS.len() as u32 {
        Instruction::new(NO_OPS[(word - NONE_BASE) as usize], None, None)
    } else if (JUMP_BASE..JUMP_BASE + 8 * JUMP_SPAN).contains(&word) {
        let v = word - JUMP_BASE;
        let opcode = JUMP_OPS[(v / JUMP_SPAN) as usize];
        let raw = (v % JUMP_SPAN) as i32;
        let offset = if raw >= 1024 { raw - 2048 } else { raw };
        let target = (addr as i32 + 2 + offset * 2) as u16;
        Instruction::jump(opcode, Value::Lit(target))
    } else {
        return Err(fault);
    };
    Ok((ins, (cur.next - addr as u32) as u16))
}
