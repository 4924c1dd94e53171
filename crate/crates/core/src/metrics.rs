//! Code size, cycle and log size comparison across the three variants.

use std::fmt::Write as _;

use crate::corpus::{App, Variant};
use crate::emulator::{run_operation, ExecutionResult, HaltReason, DEFAULT_MAX_STEPS};
use crate::error::{Error, RunError};
use crate::isa::encode;
use crate::trace::PeripheralTrace;

/// Relative data-flow-over-control-flow increase quoted for reference.
pub const REFERENCE_BAND: (f64, f64) = (0.01, 0.20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PerVariant<T> {
    pub baseline: T,
    pub cfa: T,
    pub dfa: T,
}

impl<T: Copy> PerVariant<T> {
    pub fn get(&self, v: Variant) -> T {
        match v {
            Variant::Baseline => self.baseline,
            Variant::Cfa => self.cfa,
            Variant::Dfa => self.dfa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogBytes {
    pub cflog_only: usize,
    pub cflog_plus_ilog: usize,
}

impl LogBytes {
    pub fn ilog(&self) -> usize {
        self.cflog_plus_ilog.saturating_sub(self.cflog_only)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverheadRow {
    pub app: String,
    pub code_bytes: PerVariant<usize>,
    pub cycles: PerVariant<u64>,
    pub log_bytes: LogBytes,
}

impl OverheadRow {
    /// `(dfa - cfa) / cfa` in cycles.
    pub fn dfa_over_cfa_cycles(&self) -> f64 {
        (self.cycles.dfa as f64 - self.cycles.cfa as f64) / self.cycles.cfa as f64
    }

    /// `(dfa - cfa) / cfa` in code bytes.
    pub fn dfa_over_cfa_code(&self) -> f64 {
        (self.code_bytes.dfa as f64 - self.code_bytes.cfa as f64) / self.code_bytes.cfa as f64
    }

    /// Whether the control-flow pass costs at least as many cycles as the
    /// data-flow pass adds on top of it.
    pub fn cfa_dominates(&self) -> bool {
        self.cycles.cfa - self.cycles.baseline >= self.cycles.dfa.saturating_sub(self.cycles.cfa)
    }
}

fn run_variant(app: &App, variant: Variant, trace: &PeripheralTrace) -> Result<(usize, ExecutionResult), Error> {
    let program = app.program(variant)?;
    let code = encode(&program, app.layout.er_min).map_err(RunError::from)?.bytes.len();
    let r = run_operation(&program, &app.layout, &[0; 8], trace, DEFAULT_MAX_STEPS)?;
    if r.halt != HaltReason::Completed {
        return Err(Error::Incomplete {
            what: format!("{} {}", app.name, variant.name()),
            halt: format!("{:?}", r.halt),
        });
    }
    Ok((code, r))
}

/// Runs all three variants of `app` on `trace` and collects the costs.
pub fn measure(app: &App, trace: &PeripheralTrace) -> Result<OverheadRow, Error> {
    let (b_code, b) = run_variant(app, Variant::Baseline, trace)?;
    let (c_code, c) = run_variant(app, Variant::Cfa, trace)?;
    let (d_code, d) = run_variant(app, Variant::Dfa, trace)?;
    let logged = |r: &ExecutionResult| usize::from(app.layout.or_max - r.log_pointer());
    Ok(OverheadRow {
        app: app.name.clone(),
        code_bytes: PerVariant { baseline: b_code, cfa: c_code, dfa: d_code },
        cycles: PerVariant { baseline: b.state.cycles, cfa: c.state.cycles, dfa: d.state.cycles },
        log_bytes: LogBytes { cflog_only: logged(&c), cflog_plus_ilog: logged(&d) },
    })
}

/// Measures every app on its canonical trace, one thread per app.
pub fn measure_all(apps: &[App]) -> Result<Vec<OverheadRow>, Error> {
    std::thread::scope(|s| {
        let handles: Vec<_> = apps.iter().map(|a| s.spawn(move || measure(a, a.canonical_trace()))).collect();
        handles.into_iter().map(|h| h.join().expect("measurement thread panicked")).collect()
    })
}

pub const CSV_HEADER: &str = "app,variant,code_bytes,cycles,cflog_bytes,ilog_bytes";

/// Three CSV lines per row, header first.
pub fn to_csv(rows: &[OverheadRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        for v in Variant::ALL {
            let (cf, il) = match v {
                Variant::Baseline => (0, 0),
                Variant::Cfa => (r.log_bytes.cflog_only, 0),
                Variant::Dfa => (r.log_bytes.cflog_only, r.log_bytes.ilog()),
            };
            let _ = writeln!(out, "{},{},{},{},{},{}", r.app, v.name(), r.code_bytes.get(v), r.cycles.get(v), cf, il);
        }
    }
    out
}

fn percent(value: f64, base: f64) -> String {
    format!("{:+.1}%", 100.0 * (value - base) / base)
}

/// Aligned table with increases relative to the baseline.
pub fn to_table(rows: &[OverheadRow]) -> String {
    let mut out = format!(
        "{:<18} {:<8} {:>10} {:>9} {:>10} {:>9} {:>7} {:>7}\n",
        "app", "variant", "code", "vs base", "cycles", "vs base", "cflog", "ilog"
    );
    for r in rows {
        for v in Variant::ALL {
            let (cf, il) = match v {
                Variant::Baseline => (0, 0),
                Variant::Cfa => (r.log_bytes.cflog_only, 0),
                Variant::Dfa => (r.log_bytes.cflog_only, r.log_bytes.ilog()),
            };
            let _ = writeln!(
                out,
                "{:<18} {:<8} {:>10} {:>9} {:>10} {:>9} {:>7} {:>7}",
                r.app,
                v.name(),
                r.code_bytes.get(v),
                percent(r.code_bytes.get(v) as f64, r.code_bytes.baseline as f64),
                r.cycles.get(v),
                percent(r.cycles.get(v) as f64, r.cycles.baseline as f64),
                cf,
                il
            );
        }
    }
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}: dfa over cfa {:+.1}% code, {:+.1}% cycles (reference band {:.0}%..{:.0}%); cfa dominates: {}",
            r.app,
            100.0 * r.dfa_over_cfa_code(),
            100.0 * r.dfa_over_cfa_cycles(),
            100.0 * REFERENCE_BAND.0,
            100.0 * REFERENCE_BAND.1,
            if r.cfa_dominates() { "yes" } else { "NO" }
        );
    }
    out
}
