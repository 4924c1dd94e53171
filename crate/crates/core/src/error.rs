use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {msg}")]
    SyntaxError { line: usize, msg: String },
    #[error("line {line}: unknown opcode `{mnemonic}`")]
    UnknownOpcode { line: usize, mnemonic: String },
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("objects `{0}` and `{1}` overlap")]
    ObjectOverlap(String, String),
}

impl ParseError {
    pub(crate) fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
        ParseError::SyntaxError { line, msg: msg.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("base address {0:#06x} is not word aligned")]
    OddBase(u16),
    #[error("image overflows the address space")]
    ImageOverflow,
    #[error("unresolved symbol `{0}`")]
    Unresolved(String),
    #[error("instruction {index}: jump target out of range")]
    JumpOutOfRange { index: usize },
    #[error("instruction {index}: cannot encode: {reason}")]
    Unencodable { index: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EmuError {
    #[error("no decodable instruction at {0:#06x}")]
    DecodeFault(u16),
    #[error("unaligned word access at {0:#06x}")]
    UnalignedWordAccess(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("layout: {0}")]
    Layout(String),
    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
    #[error("objects line {line}: {msg}")]
    Objects { line: usize, msg: String },
    #[error("key: {0}")]
    Key(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("program image ({size} bytes) does not fit the executable range")]
    ImageTooLarge { size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("register r4 is used by the program at lines {0:?}")]
    FreeRegisterUnavailable(Vec<usize>),
    #[error("program has no instructions to use as an entry point")]
    NoEntryLabel,
    #[error("program is already instrumented")]
    AlreadyInstrumented,
    #[error("line {line}: {reason}")]
    Unsupported { line: usize, reason: &'static str },
    #[error("constant `{0}` conflicts with the memory layout")]
    ConstantConflict(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    MalformedReport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("attack not applicable to this app")]
    AttackNotApplicable,
}

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{what}: run ended with {halt}")]
    Incomplete { what: String, halt: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
