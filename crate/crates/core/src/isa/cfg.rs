use std::collections::BTreeSet;

use super::{Opcode, Operand, Program, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Call,
    ReturnDynamic,
    IndirectDynamic,
}

impl EdgeKind {
    pub fn is_dynamic(self) -> bool {
        matches!(self, EdgeKind::ReturnDynamic | EdgeKind::IndirectDynamic)
    }
}

/// Instruction index range `[start, end]`, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    /// Destination block; `None` for dynamic edges.
    pub to: Option<usize>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    /// Instruction indices that are targets of direct calls.
    pub call_entries: BTreeSet<usize>,
}

impl Cfg {
    pub fn block_of(&self, index: usize) -> Option<usize> {
        let pos = self.blocks.partition_point(|b| b.start <= index);
        let b = pos.checked_sub(1)?;
        (index <= self.blocks[b].end).then_some(b)
    }

    /// Whether a transfer from instruction `from` to instruction `to` is a
    /// static edge of one of the given kinds.
    pub fn has_static_edge(&self, from: usize, to: usize, kinds: &[EdgeKind]) -> bool {
        let (Some(fb), Some(tb)) = (self.block_of(from), self.block_of(to)) else {
            return false;
        };
        self.blocks[fb].end == from
            && self.blocks[tb].start == to
            && self.edges.iter().any(|e| e.from == fb && e.to == Some(tb) && kinds.contains(&e.kind))
    }
}

fn static_target(p: &Program, v: &Value) -> Option<usize> {
    match v {
        Value::Sym(s) => p.labels.get(s).copied().filter(|&i| i < p.instructions.len()),
        Value::Lit(_) => None,
    }
}

pub fn build_cfg(p: &Program) -> Cfg {
    let n = p.instructions.len();
    if n == 0 {
        return Cfg::default();
    }
    let mut leaders = BTreeSet::from([0]);
    let mut call_entries = BTreeSet::new();
    for (i, ins) in p.instructions.iter().enumerate() {
        if let Some(t) = ins.jump_target().and_then(|v| static_target(p, v)) {
            leaders.insert(t);
        }
        if ins.opcode == Opcode::Call {
            if let Some(Operand::Immediate(v)) = &ins.src {
                if let Some(t) = static_target(p, v) {
                    leaders.insert(t);
                    call_entries.insert(t);
                }
            }
        }
        if (ins.alters_control_flow() || ins.opcode == Opcode::Halt) && i + 1 < n {
            leaders.insert(i + 1);
        }
    }
    let starts: Vec<usize> = leaders.into_iter().collect();
    let blocks: Vec<Block> = starts
        .iter()
        .enumerate()
        .map(|(k, &s)| Block { start: s, end: starts.get(k + 1).map_or(n - 1, |&e| e - 1) })
        .collect();
    let mut cfg = Cfg { blocks, edges: Vec::new(), call_entries };
    let block_at = |cfg: &Cfg, i: usize| cfg.block_of(i).filter(|&b| cfg.blocks[b].start == i);

    let mut edges = Vec::new();
    for b in 0..cfg.blocks.len() {
        let last = cfg.blocks[b].end;
        let ins = &p.instructions[last];
        let next = (last + 1 < n).then(|| block_at(&cfg, last + 1)).flatten();
        let mut push = |to, kind| edges.push(Edge { from: b, to, kind });
        match ins.opcode {
            Opcode::Halt => {}
            Opcode::Ret => push(None, EdgeKind::ReturnDynamic),
            Opcode::Call => {
                match &ins.src {
                    Some(Operand::Immediate(v)) if static_target(p, v).is_some() => {
                        let t = static_target(p, v).and_then(|t| block_at(&cfg, t));
                        push(t, EdgeKind::Call);
                    }
                    _ => push(None, EdgeKind::IndirectDynamic),
                }
                if next.is_some() {
                    push(next, EdgeKind::Fallthrough);
                }
            }
            op if op.is_jump() => {
                match ins.jump_target().and_then(|v| static_target(p, v)) {
                    Some(t) => push(block_at(&cfg, t), EdgeKind::Taken),
                    None => push(None, EdgeKind::IndirectDynamic),
                }
                if op.is_conditional_jump() && next.is_some() {
                    push(next, EdgeKind::Fallthrough);
                }
            }
            _ if ins.writes_pc() => push(None, EdgeKind::IndirectDynamic),
            _ => {
                if next.is_some() {
                    push(next, EdgeKind::Fallthrough);
                }
            }
        }
    }
    cfg.edges = edges;
    cfg
}
