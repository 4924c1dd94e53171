//! Demonstration applications, their benign inputs and crafted attacks.
//!
//! Each app lives in `corpus/<name>/` as `app.s`, `layout.toml`, `objects`
//! and one or more `benign-*.trace` files. The same files are compiled into
//! the library so the apps are available without a corpus directory.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{CorpusError, Error, InstrumentError, RunError};
use crate::instrument::{instrument, InstrumentMode};
use crate::isa::{encode, parse_assembly, ObjectDecl, Program};
use crate::layout::MemoryLayout;
use crate::trace::PeripheralTrace;
use crate::verifier::parse_objects;

pub const APP_NAMES: [&str; 4] = ["syringe_cf", "syringe_df", "fire_sensor", "ultrasonic_ranger"];

/// Receive register shared by both syringe apps.
pub const RX: u16 = 0x0020;
/// Actuation port driven by the syringe apps.
pub const P3OUT: u16 = 0x0019;

struct Embedded {
    source: &'static str,
    layout: &'static str,
    objects: &'static str,
    traces: &'static [&'static str],
}

macro_rules! embedded {
    ($dir:literal, [$($trace:literal),*]) => {
        Embedded {
            source: include_str!(concat!("../corpus/", $dir, "/app.s")),
            layout: include_str!(concat!("../corpus/", $dir, "/layout.toml")),
            objects: include_str!(concat!("../corpus/", $dir, "/objects")),
            traces: &[$(include_str!(concat!("../corpus/", $dir, "/", $trace))),*],
        }
    };
}

fn embedded(name: &str) -> Option<Embedded> {
    Some(match name {
        "syringe_cf" => embedded!("syringe_cf", ["benign-0.trace", "benign-1.trace", "benign-2.trace"]),
        "syringe_df" => embedded!("syringe_df", ["benign-0.trace", "benign-1.trace"]),
        "fire_sensor" => embedded!("fire_sensor", ["benign-0.trace", "benign-1.trace"]),
        "ultrasonic_ranger" => embedded!("ultrasonic_ranger", ["benign-0.trace", "benign-1.trace"]),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Cfa,
    Dfa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Cfa, Variant::Dfa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Cfa => "cfa",
            Variant::Dfa => "dfa",
        }
    }

    pub fn mode(self) -> Option<InstrumentMode> {
        match self {
            Variant::Baseline => None,
            Variant::Cfa => Some(InstrumentMode::CfaOnly),
            Variant::Dfa => Some(InstrumentMode::CfaPlusDfa),
        }
    }
}

#[derive(Debug, Clone)]
pub struct App {
    pub name: String,
    pub source: Program,
    pub layout: MemoryLayout,
    pub objects: Vec<ObjectDecl>,
    /// The first trace is the canonical measurement input.
    pub benign_traces: Vec<PeripheralTrace>,
}

impl App {
    fn from_texts<'a>(
        name: &str,
        source: &str,
        layout: &str,
        objects: &str,
        traces: impl IntoIterator<Item = &'a str>,
    ) -> Result<App, Error> {
        let layout = MemoryLayout::from_toml(layout)?;
        layout.validate()?;
        Ok(App {
            name: name.to_string(),
            source: parse_assembly(source)?,
            layout,
            objects: parse_objects(objects)?,
            benign_traces: traces.into_iter().map(PeripheralTrace::parse).collect::<Result<_, _>>()?,
        })
    }

    pub fn program(&self, variant: Variant) -> Result<Program, InstrumentError> {
        match variant.mode() {
            None => Ok(self.source.clone()),
            Some(mode) => instrument(&self.source, &self.layout, mode),
        }
    }

    pub fn canonical_trace(&self) -> &PeripheralTrace {
        &self.benign_traces[0]
    }
}

/// Builds a corpus app from the copy compiled into the library.
pub fn build_app(name: &str) -> Result<App, Error> {
    let e = embedded(name).ok_or_else(|| CorpusError::UnknownApp(name.to_string()))?;
    App::from_texts(name, e.source, e.layout, e.objects, e.traces.iter().copied())
}

/// Loads `dir/<name>/`, taking every `benign-*.trace` in name order.
pub fn load_app(dir: &Path, name: &str) -> Result<App, Error> {
    let root = dir.join(name);
    if !root.is_dir() {
        return Err(CorpusError::UnknownApp(name.to_string()).into());
    }
    let read = |f: &str| std::fs::read_to_string(root.join(f));
    let mut trace_files: Vec<_> = std::fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("benign-") && n.ends_with(".trace"))
        })
        .collect();
    trace_files.sort();
    let traces = trace_files.iter().map(std::fs::read_to_string).collect::<Result<Vec<_>, _>>()?;
    if traces.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} has no benign-*.trace files", root.display()),
        )));
    }
    App::from_texts(name, &read("app.s")?, &read("layout.toml")?, &read("objects")?, traces.iter().map(String::as_str))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    ControlFlowOverwrite,
    DataOnlyOverwrite,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::ControlFlowOverwrite => "cf",
            AttackKind::DataOnlyOverwrite => "data",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<AttackKind, String> {
        match s {
            "cf" | "control-flow" => Ok(AttackKind::ControlFlowOverwrite),
            "data" | "data-only" => Ok(AttackKind::DataOnlyOverwrite),
            _ => Err(format!("unknown attack kind `{s}` (expected cf or data)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attack {
    pub kind: AttackKind,
    pub trace: PeripheralTrace,
}

/// Dose the control-flow exploit smuggles past the range check.
pub const OVERDOSE: u16 = 20;

/// Crafts the malicious input for `app` as it runs in `variant`. Code
/// addresses in the control-flow exploit depend on the variant's layout.
pub fn inject_attack(app: &App, kind: AttackKind, variant: Variant) -> Result<Attack, Error> {
    let trace = match (app.name.as_str(), kind) {
        ("syringe_cf", AttackKind::ControlFlowOverwrite) => {
            let image = encode(&app.program(variant)?, app.layout.er_min).map_err(RunError::from)?;
            let addr = |l: &str| image.label(l).ok_or(CorpusError::AttackNotApplicable);
            // Five buffer words, then the saved return address, then the
            // word injectMedicine will return through.
            let commands = [OVERDOSE, 0, 0, 0, 0, addr("inject_pulse")?, addr("after_inject")?];
            let mut words = vec![commands.len() as u16];
            words.extend(commands);
            PeripheralTrace::feeding(RX, words)
        }
        ("syringe_df", AttackKind::DataOnlyOverwrite) => PeripheralTrace::feeding(RX, [0, 8]),
        (name, _) if !APP_NAMES.contains(&name) => return Err(CorpusError::UnknownApp(name.to_string()).into()),
        _ => return Err(CorpusError::AttackNotApplicable.into()),
    };
    Ok(Attack { kind, trace })
}

pub fn random_args<R: Rng>(rng: &mut R) -> [u16; 8] {
    rng.gen()
}

/// A benign input of the kind the app expects, drawn from `rng`.
pub fn random_benign_trace<R: Rng>(app: &App, rng: &mut R) -> Result<PeripheralTrace, CorpusError> {
    Ok(match app.name.as_str() {
        "syringe_cf" => {
            let n = rng.gen_range(1..=5u16);
            let mut words = vec![n, rng.gen_range(0..=12)];
            words.extend((1..n).map(|_| rng.gen_range(0..=100)));
            PeripheralTrace::feeding(RX, words)
        }
        "syringe_df" => PeripheralTrace::feeding(RX, [rng.gen_range(0..=3), rng.gen_range(0..=7)]),
        "fire_sensor" => PeripheralTrace::new(
            (0..8).flat_map(|_| [(0x0030, rng.gen_range(20..=80)), (0x0032, rng.gen_range(5..=90))]).collect(),
        ),
        "ultrasonic_ranger" => PeripheralTrace::feeding(0x0040, [rng.gen_range(0..=58 * 150)]),
        other => return Err(CorpusError::UnknownApp(other.to_string())),
    })
}
