//! Checks applied to a successful replay.

use crate::emulator::TransferKind;
use crate::error::ConfigError;
use crate::isa::parse::number;
use crate::isa::{build_cfg, instruction_size, EdgeKind, ObjectDecl, Operand, Program, Value};

use super::replay::ReplayTrace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfViolation {
    pub step: u64,
    /// Return address the shadow stack expected, if the transfer was a return.
    pub expected: Option<u16>,
    pub logged: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataViolation {
    pub step: u64,
    /// Object actually overwritten, or `"<unmapped>"`.
    pub object: String,
    pub address: u16,
}

/// Shadow call stack of expected return addresses.
#[derive(Debug, Clone, Default)]
pub struct ShadowCallStack(Vec<u16>);

impl ShadowCallStack {
    pub fn push(&mut self, ret: u16) {
        self.0.push(ret);
    }

    pub fn pop(&mut self) -> Option<u16> {
        self.0.pop()
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

/// Every transfer must follow a static edge of the instrumented program's
/// CFG, call a known entry, or return to the shadow-stack top.
pub fn check_control_flow(program: &Program, trace: &ReplayTrace) -> Result<(), CfViolation> {
    let cfg = build_cfg(program);
    let image = &trace.image;
    let mut shadow = ShadowCallStack::default();
    for t in &trace.transfers {
        let violation = |expected| CfViolation { step: t.step, expected, logged: t.to };
        let (Some(from), Some(to)) = (image.index_of(t.from), image.index_of(t.to)) else {
            return Err(violation(None));
        };
        match t.kind {
            TransferKind::Return => {
                let expected = shadow.pop();
                if expected != Some(t.to) {
                    return Err(violation(expected));
                }
            }
            TransferKind::Call => {
                if !(cfg.has_static_edge(from, to, &[EdgeKind::Call]) || cfg.call_entries.contains(&to)) {
                    return Err(violation(None));
                }
                shadow.push(t.from.wrapping_add(instruction_size(&program.instructions[from])));
            }
            TransferKind::BranchTaken | TransferKind::BranchFallthrough => {
                if !cfg.has_static_edge(from, to, &[EdgeKind::Taken, EdgeKind::Fallthrough]) {
                    return Err(violation(None));
                }
            }
            TransferKind::Jump => {
                let static_ok = cfg.has_static_edge(from, to, &[EdgeKind::Taken]);
                let indirect_ok = program.instructions[from].writes_pc() && program.labels.values().any(|&i| i == to);
                if !(static_ok || indirect_ok) {
                    return Err(violation(None));
                }
            }
        }
    }
    Ok(())
}

/// The object a write operand names, if any.
fn target_object<'a>(op: &Operand, objects: &'a [ObjectDecl]) -> Option<&'a ObjectDecl> {
    let name = match op {
        Operand::Indexed(Value::Sym(s), _) | Operand::Absolute(Value::Sym(s)) => s,
        _ => return None,
    };
    objects.iter().find(|o| &o.name == name)
}

/// Writes through an operand that names an object must stay inside it.
pub fn check_data_flow(program: &Program, trace: &ReplayTrace, objects: &[ObjectDecl]) -> Result<(), DataViolation> {
    for w in &trace.writes {
        let Some(idx) = trace.image.index_of(w.pc) else { continue };
        let Some(dst) = program.instructions[idx].memory_write() else { continue };
        let Some(obj) = target_object(dst, objects) else { continue };
        let last = w.addr.wrapping_add(w.width.bytes() - 1);
        if !(obj.contains(w.addr) && obj.contains(last)) {
            let hit = objects.iter().find(|o| o.contains(w.addr));
            return Err(DataViolation {
                step: w.step,
                object: hit.map_or_else(|| "<unmapped>".to_string(), |o| o.name.clone()),
                address: w.addr,
            });
        }
    }
    Ok(())
}

/// Parses an objects file: one `name base len` per line, `#`/`;` comments.
pub fn parse_objects(text: &str) -> Result<Vec<ObjectDecl>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let err = |msg: &str| ConfigError::Objects { line: i + 1, msg: msg.to_string() };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, base, len] = parts[..] else {
            return Err(err("expected `name base len`"));
        };
        let base = number(base).ok_or_else(|| err("bad base"))?;
        let len = number(len).ok_or_else(|| err("bad length"))?;
        out.push(ObjectDecl { name: name.to_string(), base, len });
    }
    Ok(out)
}

pub fn render_objects(objects: &[ObjectDecl]) -> String {
    objects.iter().map(|o| format!("{} 0x{:04X} {}\n", o.name, o.base, o.len)).collect()
}
