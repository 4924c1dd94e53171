//! Verifier pipeline: token, EXEC flag, log parse, replay, policies.

mod nonce;
mod policy;
mod replay;

use std::fmt;

pub use nonce::NonceStore;
pub use policy::{
    check_control_flow, check_data_flow, parse_objects, render_objects, CfViolation, DataViolation, ShadowCallStack,
};
pub use replay::{
    parse_log, replay, replay_with_budget, ParsedLog, ReplayError, ReplayTrace, ReplayTransfer, ReplayWrite,
};

use crate::error::RunError;
use crate::isa::{ObjectDecl, Program};
use crate::layout::MemoryLayout;
use crate::pox::{expected_er, token_matches, AttestationKey, Challenge, Report};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    TokenInvalid,
    ExecCleared,
    ControlFlowAttack { step: u64, expected: Option<u16>, logged: u16 },
    DataOnlyAttack { step: u64, object: String, address: u16 },
    LogInconsistent(String),
    LogOverflowAbort,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Verified => "Verified",
            Verdict::TokenInvalid => "TokenInvalid",
            Verdict::ExecCleared => "ExecCleared",
            Verdict::ControlFlowAttack { .. } => "ControlFlowAttack",
            Verdict::DataOnlyAttack { .. } => "DataOnlyAttack",
            Verdict::LogInconsistent(_) => "LogInconsistent",
            Verdict::LogOverflowAbort => "LogOverflowAbort",
        }
    }

    /// Process exit status used by the command-line verifier.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Verified => 0,
            Verdict::TokenInvalid => 2,
            Verdict::ExecCleared => 3,
            Verdict::ControlFlowAttack { .. } => 4,
            Verdict::DataOnlyAttack { .. } => 5,
            Verdict::LogInconsistent(_) => 6,
            Verdict::LogOverflowAbort => 7,
        }
    }

    pub fn is_verified(&self) -> bool {
        *self == Verdict::Verified
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verdict={}", self.name())?;
        match self {
            Verdict::ControlFlowAttack { step, expected, logged } => {
                write!(f, " step={step} expected=")?;
                match expected {
                    Some(a) => write!(f, "{a:#06x}")?,
                    None => f.write_str("none")?,
                }
                write!(f, " logged={logged:#06x}")
            }
            Verdict::DataOnlyAttack { step, object, address } => {
                write!(f, " step={step} object={object} address={address:#06x}")
            }
            Verdict::LogInconsistent(detail) => write!(f, " detail=\"{detail}\""),
            _ => Ok(()),
        }
    }
}

/// Which post-replay checks to run.
#[derive(Debug, Clone, Default)]
pub struct Policies {
    pub control_flow: bool,
    /// Object bounds for the data policy; `None` disables it.
    pub objects: Option<Vec<ObjectDecl>>,
}

impl Policies {
    /// Both policies, with the objects the program declares.
    pub fn all(program: &Program) -> Policies {
        Policies { control_flow: true, objects: Some(program.object_map.clone()) }
    }
}

/// Verifies a serialized report against the instrumented program the
/// verifier expects the device to run. Only setup problems with `program`
/// itself are errors; everything about the report yields a verdict.
pub fn verify(
    report_bytes: &[u8],
    program: &Program,
    layout: &MemoryLayout,
    challenge: &Challenge,
    key: &AttestationKey,
    policies: &Policies,
) -> Result<Verdict, RunError> {
    let er = expected_er(program, layout)?;
    let Ok(report) = Report::from_bytes(report_bytes) else {
        return Ok(Verdict::TokenInvalid);
    };
    if report.challenge != *challenge || report.er_min != layout.er_min || report.er_max != layout.er_max {
        return Ok(Verdict::TokenInvalid);
    }
    if !token_matches(&report, key, &er) {
        return Ok(Verdict::TokenInvalid);
    }
    if !report.exec {
        let pointer = report.or_word(layout.or_min, layout.or_min);
        return Ok(match pointer {
            Some(r) if r < layout.or_min => Verdict::LogOverflowAbort,
            _ => Verdict::ExecCleared,
        });
    }
    let log = match parse_log(&report.or_snapshot, layout) {
        Ok(log) => log,
        Err(detail) => return Ok(Verdict::LogInconsistent(detail)),
    };
    let trace = match replay(program, layout, &log) {
        Ok(t) => t,
        Err(ReplayError::Inconsistent(detail)) => return Ok(Verdict::LogInconsistent(detail)),
        Err(ReplayError::Setup(e)) => return Err(e),
    };
    if policies.control_flow {
        if let Err(v) = check_control_flow(program, &trace) {
            return Ok(Verdict::ControlFlowAttack { step: v.step, expected: v.expected, logged: v.logged });
        }
    }
    if let Some(objects) = &policies.objects {
        if let Err(v) = check_data_flow(program, &trace, objects) {
            return Ok(Verdict::DataOnlyAttack { step: v.step, object: v.object, address: v.address });
        }
    }
    Ok(Verdict::Verified)
}

/// [`verify`], after rejecting a challenge the store has already seen.
pub fn verify_fresh(
    store: &NonceStore,
    report_bytes: &[u8],
    program: &Program,
    layout: &MemoryLayout,
    challenge: &Challenge,
    key: &AttestationKey,
    policies: &Policies,
) -> Result<Verdict, crate::Error> {
    if !store.check_and_insert(challenge)? {
        return Ok(Verdict::TokenInvalid);
    }
    Ok(verify(report_bytes, program, layout, challenge, key, policies)?)
}
