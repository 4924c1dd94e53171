use std::fmt::Write as _;

use super::{DataInit, Format, Instruction, ObjectDecl, Opcode, Operand, Program, Register, Value, Width};
use crate::error::ParseError;

/// Parses assembly text.
///
/// One statement per line. Supported forms: `label:` (optionally followed by
/// an instruction), `; comment`, `.const NAME = VALUE`, `.object NAME BASE LEN`,
/// `.init ADDR WORD...` and instructions with an optional `.b`/`.w` suffix.
pub fn parse_assembly(text: &str) -> Result<Program, ParseError> {
    let mut p = Program::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(c) = trimmed.strip_prefix(';') {
            p.comments.push((p.instructions.len(), c.trim().to_string()));
            continue;
        }
        let mut body = strip_comment(trimmed).trim();
        if body.starts_with('.') && !is_label_line(body) {
            directive(&mut p, body, line)?;
            continue;
        }
        if let Some((label, rest)) = split_label(body) {
            if !is_symbol(label) {
                return Err(ParseError::syntax(line, format!("bad label `{label}`")));
            }
            define(&p, label)?;
            p.labels.insert(label.to_string(), p.instructions.len());
            body = rest.trim();
            if body.is_empty() {
                continue;
            }
        }
        let ins = instruction(body, line)?;
        p.instructions.push(ins);
    }
    check_objects(&p)?;
    p.check_symbols()?;
    Ok(p)
}

fn strip_comment(s: &str) -> &str {
    match s.find(';') {
        Some(i) => &s[..i],
        None => s,
    }
}

fn is_label_line(s: &str) -> bool {
    split_label(s).is_some()
}

fn split_label(s: &str) -> Option<(&str, &str)> {
    let colon = s.find(':')?;
    let head = &s[..colon];
    (!head.contains(char::is_whitespace)).then(|| (head, &s[colon + 1..]))
}

fn define(p: &Program, name: &str) -> Result<(), ParseError> {
    if p.labels.contains_key(name) || p.constants.contains_key(name) || p.object(name).is_some() {
        return Err(ParseError::DuplicateLabel(name.to_string()));
    }
    Ok(())
}

fn directive(p: &mut Program, body: &str, line: usize) -> Result<(), ParseError> {
    let mut words = body.split_whitespace();
    let name = words.next().unwrap_or_default().to_ascii_lowercase();
    match name.as_str() {
        ".const" => {
            let rest = body[6..].trim();
            let (sym, val) =
                rest.split_once('=').ok_or_else(|| ParseError::syntax(line, "expected `.const NAME = VALUE`"))?;
            let sym = sym.trim();
            if !is_symbol(sym) {
                return Err(ParseError::syntax(line, format!("bad constant name `{sym}`")));
            }
            let v = number(val.trim()).ok_or_else(|| ParseError::syntax(line, "bad constant value"))?;
            define(p, sym)?;
            p.constants.insert(sym.to_string(), v);
        }
        ".object" => {
            let args: Vec<&str> = words.collect();
            let [sym, base, len] = args[..] else {
                return Err(ParseError::syntax(line, "expected `.object NAME BASE LEN`"));
            };
            if !is_symbol(sym) {
                return Err(ParseError::syntax(line, format!("bad object name `{sym}`")));
            }
            let base = number(base).ok_or_else(|| ParseError::syntax(line, "bad object base"))?;
            let len = number(len).ok_or_else(|| ParseError::syntax(line, "bad object length"))?;
            define(p, sym)?;
            p.object_map.push(ObjectDecl { name: sym.to_string(), base, len });
        }
        ".init" => {
            let addr = words.next().ok_or_else(|| ParseError::syntax(line, "`.init` needs an address"))?;
            let addr = value(addr).ok_or_else(|| ParseError::syntax(line, "bad `.init` address"))?;
            let words = words
                .map(|w| number(w).ok_or_else(|| ParseError::syntax(line, format!("bad word `{w}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            p.data.push(DataInit { addr, words });
        }
        _ => return Err(ParseError::syntax(line, format!("unknown directive `{name}`"))),
    }
    Ok(())
}

fn check_objects(p: &Program) -> Result<(), ParseError> {
    for (i, a) in p.object_map.iter().enumerate() {
        for b in &p.object_map[i + 1..] {
            let a_end = a.base as u32 + a.len as u32;
            let b_end = b.base as u32 + b.len as u32;
            if (a.base as u32) < b_end && (b.base as u32) < a_end {
                return Err(ParseError::ObjectOverlap(a.name.clone(), b.name.clone()));
            }
        }
    }
    Ok(())
}

fn instruction(body: &str, line: usize) -> Result<Instruction, ParseError> {
    let (mnemonic, rest) = match body.find(char::is_whitespace) {
        Some(i) => (&body[..i], body[i..].trim()),
        None => (body, ""),
    };
    let lower = mnemonic.to_ascii_lowercase();
    let (base, width) = if let Some(b) = lower.strip_suffix(".b") {
        (b, Width::Byte)
    } else if let Some(w) = lower.strip_suffix(".w") {
        (w, Width::Word)
    } else {
        (lower.as_str(), Width::Word)
    };
    let opcode = Opcode::from_mnemonic(base)
        .ok_or_else(|| ParseError::UnknownOpcode { line, mnemonic: mnemonic.to_string() })?;
    if width == Width::Byte && !opcode.allows_byte() {
        return Err(ParseError::syntax(line, format!("`{base}` has no byte form")));
    }
    let args: Vec<&str> = if rest.is_empty() { Vec::new() } else { rest.split(',').map(str::trim).collect() };
    let bad = |msg: &str| ParseError::syntax(line, format!("{base}: {msg}"));
    let mut ins = Instruction { opcode, width, src: None, dst: None, line };
    match opcode.format() {
        Format::TwoOperand => {
            let [s, d] = args[..] else { return Err(bad("expected two operands")) };
            ins.src = Some(operand(s).ok_or_else(|| bad("bad source operand"))?);
            let dst = operand(d).ok_or_else(|| bad("bad destination operand"))?;
            if matches!(dst, Operand::Immediate(_) | Operand::AutoInc(_)) {
                return Err(bad("invalid destination addressing mode"));
            }
            ins.dst = Some(dst);
        }
        Format::SingleDst => {
            let [d] = args[..] else { return Err(bad("expected one operand")) };
            let dst = operand(d).ok_or_else(|| bad("bad operand"))?;
            if matches!(dst, Operand::Immediate(_) | Operand::AutoInc(_)) {
                return Err(bad("invalid destination addressing mode"));
            }
            ins.dst = Some(dst);
        }
        Format::SingleSrc => {
            let [s] = args[..] else { return Err(bad("expected one operand")) };
            let src = match operand(s) {
                Some(o) => o,
                // `call label` is shorthand for `call #label`.
                None if opcode == Opcode::Call => Operand::Immediate(value(s).ok_or_else(|| bad("bad call target"))?),
                None => return Err(bad("bad operand")),
            };
            ins.src = Some(src);
        }
        Format::Jump => {
            let [t] = args[..] else { return Err(bad("expected a jump target")) };
            ins.dst = Some(Operand::Immediate(value(t).ok_or_else(|| bad("bad jump target"))?));
        }
        Format::NoOperand => {
            if !args.is_empty() {
                return Err(bad("takes no operands"));
            }
        }
    }
    Ok(ins)
}

fn operand(s: &str) -> Option<Operand> {
    if let Some(v) = s.strip_prefix('#') {
        return value(v).map(Operand::Immediate);
    }
    if let Some(v) = s.strip_prefix('&') {
        return value(v).map(Operand::Absolute);
    }
    if let Some(r) = s.strip_prefix('@') {
        return match r.strip_suffix('+') {
            Some(r) => register(r).map(Operand::AutoInc),
            None => register(r).map(Operand::Indirect),
        };
    }
    if let Some(open) = s.find('(') {
        let inner = s[open + 1..].strip_suffix(')')?;
        let offset = s[..open].trim();
        let offset = if offset.is_empty() { Value::Lit(0) } else { value(offset)? };
        return register(inner.trim()).map(|r| Operand::Indexed(offset, r));
    }
    register(s).map(Operand::Reg)
}

fn register(s: &str) -> Option<Register> {
    let lower = s.to_ascii_lowercase();
    match lower.as_str() {
        "pc" => return Some(super::PC),
        "sp" => return Some(super::SP),
        "sr" => return Some(super::SR),
        "cg" => return Some(super::CG),
        _ => {}
    }
    let digits = lower.strip_prefix('r')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Register::new(digits.parse().ok()?)
}

fn value(s: &str) -> Option<Value> {
    let s = s.trim();
    if let Some(n) = number(s) {
        return Some(Value::Lit(n));
    }
    is_symbol(s).then(|| Value::Sym(s.to_string()))
}

pub(crate) fn number(s: &str) -> Option<u16> {
    let s = s.trim();
    if let Some(neg) = s.strip_prefix('-') {
        let v = number(neg)?;
        return Some(v.wrapping_neg());
    }
    let v = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u32::from_str_radix(h, 16).ok()?
    } else if s.bytes().next().is_some_and(|b| b.is_ascii_digit()) {
        s.parse::<u32>().ok()?
    } else {
        return None;
    };
    u16::try_from(v).ok()
}

fn is_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && register(s).is_none()
}

/// Renders a program back to assembly text accepted by [`parse_assembly`].
pub fn render(p: &Program) -> String {
    let mut out = String::new();
    for (name, v) in &p.constants {
        let _ = writeln!(out, ".const {name} = 0x{v:04X}");
    }
    for o in &p.object_map {
        let _ = writeln!(out, ".object {} 0x{:04X} {}", o.name, o.base, o.len);
    }
    for d in &p.data {
        let _ = write!(out, ".init {}", d.addr);
        for w in &d.words {
            let _ = write!(out, " 0x{w:04X}");
        }
        out.push('\n');
    }
    let mut comments = p.comments.iter().peekable();
    for idx in 0..=p.instructions.len() {
        for label in p.labels_at(idx) {
            let _ = writeln!(out, "{label}:");
        }
        while let Some((_, c)) = comments.next_if(|(i, _)| *i <= idx) {
            let _ = writeln!(out, "; {c}");
        }
        if let Some(ins) = p.instructions.get(idx) {
            let _ = writeln!(out, "    {}", render_instruction(ins));
        }
    }
    out
}

pub(crate) fn render_instruction(ins: &Instruction) -> String {
    let mut s = ins.opcode.mnemonic().to_string();
    if ins.width == Width::Byte {
        s.push_str(".b");
    }
    if let Some(t) = ins.jump_target() {
        let _ = write!(s, " {t}");
        return s;
    }
    let ops: Vec<String> = ins.operands().map(|o| o.to_string()).collect();
    if !ops.is_empty() {
        s.push(' ');
        s.push_str(&ops.join(", "));
    }
    s
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&render_instruction(self))
    }
}
