//! Proof-of-execution hardware model and attestation reports.
//!
//! The monitor watches the CPU's event stream and keeps a single EXEC flag.
//! It is set when an operation starts at the first ER address and cleared
//! by anything that could let the output region disagree with a faithful
//! run of the ER code: writes into ER, writes into OR from outside ER,
//! external (DMA) writes into either region, leaving ER, or any halt other
//! than a normal one.
//!
//! Report wire format (integers little-endian):
//!
//! ```text
//! "DLD1" | challenge[16] | er_min u16 | er_max u16 | exec u8 | or_len u16 | or[or_len] | token[32]
//! ```

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::emulator::{er_contents, Event, ExecutionResult, HaltReason, Machine};
use crate::error::{ConfigError, ReportError, RunError};
use crate::isa::{encode, Image, Program};
use crate::layout::MemoryLayout;
use crate::trace::PeripheralTrace;

type HmacSha256 = Hmac<Sha256>;

pub const CHALLENGE_LEN: usize = 16;
pub const TOKEN_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
const MAGIC: &[u8; 4] = b"DLD1";
const HEADER_LEN: usize = 4 + CHALLENGE_LEN + 2 + 2 + 1 + 2;

pub type Challenge = [u8; CHALLENGE_LEN];

/// Device key shared with the verifier.
#[derive(Clone, PartialEq, Eq)]
pub struct AttestationKey(pub [u8; KEY_LEN]);

impl std::fmt::Debug for AttestationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AttestationKey(..)")
    }
}

impl AttestationKey {
    pub fn from_hex(text: &str) -> Result<AttestationKey, ConfigError> {
        let bytes = hex::decode(text.trim()).map_err(|e| ConfigError::Key(e.to_string()))?;
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| ConfigError::Key(format!("expected {KEY_LEN} bytes")))?;
        Ok(AttestationKey(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn random<R: RngCore>(rng: &mut R) -> AttestationKey {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        AttestationKey(k)
    }
}

pub fn random_challenge<R: RngCore>(rng: &mut R) -> Challenge {
    let mut c = [0u8; CHALLENGE_LEN];
    rng.fill_bytes(&mut c);
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub challenge: Challenge,
    pub er_min: u16,
    pub er_max: u16,
    pub exec: bool,
    pub or_snapshot: Vec<u8>,
    pub token: [u8; TOKEN_LEN],
}

impl Report {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.or_snapshot.len() + TOKEN_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.challenge);
        out.extend_from_slice(&self.er_min.to_le_bytes());
        out.extend_from_slice(&self.er_max.to_le_bytes());
        out.push(self.exec as u8);
        out.extend_from_slice(&(self.or_snapshot.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.or_snapshot);
        out.extend_from_slice(&self.token);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Report, ReportError> {
        let bad = |m: &str| ReportError::MalformedReport(m.to_string());
        if bytes.len() < HEADER_LEN + TOKEN_LEN {
            return Err(bad("truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let mut challenge = [0u8; CHALLENGE_LEN];
        challenge.copy_from_slice(&bytes[4..4 + CHALLENGE_LEN]);
        let er_min = u16_at(20);
        let er_max = u16_at(22);
        let exec = match bytes[24] {
            0 => false,
            1 => true,
            _ => return Err(bad("exec flag is not 0 or 1")),
        };
        let or_len = u16_at(25) as usize;
        if bytes.len() != HEADER_LEN + or_len + TOKEN_LEN {
            return Err(bad("length mismatch"));
        }
        let or_snapshot = bytes[HEADER_LEN..HEADER_LEN + or_len].to_vec();
        let mut token = [0u8; TOKEN_LEN];
        token.copy_from_slice(&bytes[HEADER_LEN + or_len..]);
        Ok(Report { challenge, er_min, er_max, exec, or_snapshot, token })
    }

    /// Word at `addr`, which must lie in the reported OR starting at `or_min`.
    pub fn or_word(&self, or_min: u16, addr: u16) -> Option<u16> {
        let i = addr.checked_sub(or_min)? as usize;
        Some(u16::from_le_bytes([*self.or_snapshot.get(i)?, *self.or_snapshot.get(i + 1)?]))
    }
}

pub type Digest32 = [u8; 32];

pub fn er_digest(er: &[u8]) -> Digest32 {
    Sha256::digest(er).into()
}

fn mac_for(
    key: &AttestationKey,
    challenge: &Challenge,
    er_min: u16,
    er_max: u16,
    er: &Digest32,
    or: &[u8],
    exec: bool,
) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("HMAC takes any key length");
    mac.update(challenge);
    mac.update(&er_min.to_le_bytes());
    mac.update(&er_max.to_le_bytes());
    mac.update(er);
    mac.update(or);
    mac.update(&[exec as u8]);
    mac
}

pub fn compute_token(
    key: &AttestationKey,
    challenge: &Challenge,
    er_min: u16,
    er_max: u16,
    er: &[u8],
    or: &[u8],
    exec: bool,
) -> [u8; TOKEN_LEN] {
    mac_for(key, challenge, er_min, er_max, &er_digest(er), or, exec).finalize().into_bytes().into()
}

/// Constant-time MAC check against the expected ER contents.
pub fn token_matches(report: &Report, key: &AttestationKey, expected_er: &[u8]) -> bool {
    let er = er_digest(expected_er);
    let mac = mac_for(key, &report.challenge, report.er_min, report.er_max, &er, &report.or_snapshot, report.exec);
    mac.verify_slice(&report.token).is_ok()
}

/// The MAC matches and EXEC is set.
pub fn verify_token(report: &Report, key: &AttestationKey, expected_er: &[u8]) -> bool {
    token_matches(report, key, expected_er) && report.exec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Finished,
}

#[derive(Debug, Clone)]
pub struct PoxMonitor {
    layout: MemoryLayout,
    exec: bool,
    phase: Phase,
    entry_digest: Option<Digest32>,
}

impl PoxMonitor {
    pub fn new(layout: MemoryLayout) -> PoxMonitor {
        PoxMonitor { layout, exec: false, phase: Phase::Idle, entry_digest: None }
    }

    pub fn exec(&self) -> bool {
        self.exec
    }

    /// Digest of ER taken when the operation started.
    pub fn entry_digest(&self) -> Option<Digest32> {
        self.entry_digest
    }

    pub fn start(&mut self, er: &[u8]) {
        self.entry_digest = Some(er_digest(er));
        self.exec = true;
        self.phase = Phase::Running;
    }

    /// Feeds one event caused by the instruction at `pc`.
    pub fn observe(&mut self, pc: u16, event: &Event) {
        let l = &self.layout;
        let clear = match *event {
            Event::Write { addr, .. } => {
                self.phase == Phase::Running && (l.in_er(addr) || (l.in_or(addr) && !l.in_er(pc)))
            }
            Event::ExternalWrite { addr, .. } => self.phase != Phase::Idle && (l.in_er(addr) || l.in_or(addr)),
            Event::ControlTransfer { to, .. } => !l.in_er(to),
            Event::Halt(reason) => {
                self.phase = Phase::Finished;
                reason != HaltReason::Completed
            }
            Event::Read { .. } => false,
        };
        if clear {
            self.exec = false;
        }
    }
}

/// A prover: CPU, memory, peripherals and the PoX monitor.
#[derive(Debug, Clone)]
pub struct Device {
    pub machine: Machine,
    pub monitor: PoxMonitor,
    pub image: Image,
    pub events: Vec<Event>,
    pub steps: u64,
}

impl Device {
    pub fn boot(program: &Program, layout: &MemoryLayout, trace: &PeripheralTrace) -> Result<Device, RunError> {
        let image = encode(program, layout.er_min)?;
        let mut machine = Machine::new(layout.clone(), trace);
        machine.load_image(&image)?;
        Ok(Device { machine, monitor: PoxMonitor::new(layout.clone()), image, events: Vec::new(), steps: 0 })
    }

    pub fn external_write(&mut self, addr: u16, value: u16) {
        let ev = self.machine.external_write(addr, value);
        self.monitor.observe(self.machine.state.pc(), &ev);
        self.events.push(ev);
    }

    pub fn start(&mut self, args: &[u16]) {
        self.machine.enter(args);
        let l = &self.machine.layout;
        self.monitor.start(self.machine.state.bytes(l.er_min, l.er_len()));
    }

    /// Executes one instruction unless already halted.
    pub fn step(&mut self) -> Option<HaltReason> {
        if let Some(h) = self.machine.halted {
            return Some(h);
        }
        let pc = self.machine.state.pc();
        let before = self.events.len();
        let halt = self.machine.step(&mut self.events);
        for ev in &self.events[before..] {
            self.monitor.observe(pc, ev);
        }
        self.steps += 1;
        halt
    }

    /// Steps until halt or until `max_steps` instructions have run.
    pub fn run_to_halt(&mut self, max_steps: u64) -> HaltReason {
        loop {
            if let Some(h) = self.machine.halted {
                return h;
            }
            if self.steps >= max_steps {
                let h = HaltReason::StepLimitExceeded(max_steps);
                let ev = Event::Halt(h);
                self.machine.halted = Some(h);
                self.monitor.observe(self.machine.state.pc(), &ev);
                self.events.push(ev);
                return h;
            }
            self.step();
        }
    }

    pub fn run(&mut self, args: &[u16], max_steps: u64) -> ExecutionResult {
        self.start(args);
        self.run_to_halt(max_steps);
        self.result()
    }

    pub fn result(&self) -> ExecutionResult {
        ExecutionResult {
            state: self.machine.state.clone(),
            events: self.events.clone(),
            halt: self.machine.halted.unwrap_or(HaltReason::StepLimitExceeded(self.steps)),
            steps: self.steps,
            gpio_log: self.machine.gpio_log.clone(),
            exec: self.monitor.exec(),
            image: self.image.clone(),
        }
    }

    pub fn or_snapshot(&self) -> Vec<u8> {
        let l = &self.machine.layout;
        self.machine.state.bytes(l.or_min, l.or_len()).to_vec()
    }

    pub fn attest(&self, challenge: Challenge, key: &AttestationKey) -> Report {
        let l = &self.machine.layout;
        let er =
            self.monitor.entry_digest().unwrap_or_else(|| er_digest(self.machine.state.bytes(l.er_min, l.er_len())));
        let or_snapshot = self.or_snapshot();
        let exec = self.monitor.exec();
        let token: [u8; TOKEN_LEN] =
            mac_for(key, &challenge, l.er_min, l.er_max, &er, &or_snapshot, exec).finalize().into_bytes().into();
        Report { challenge, er_min: l.er_min, er_max: l.er_max, exec, or_snapshot, token }
    }
}

/// ER contents the verifier expects for a program it compiled itself.
pub fn expected_er(program: &Program, layout: &MemoryLayout) -> Result<Vec<u8>, RunError> {
    er_contents(&encode(program, layout.er_min)?, layout)
}
