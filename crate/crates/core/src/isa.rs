//! Instruction model, synthetic workload generation and the trace file format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{class_of_delay, DelayClassConfig};
use crate::oracle::ProfileRecord;
use crate::scalar::Scalar;

pub const TRACE_HEADER: &str = "tracefmt v1";

#[derive(Debug, Error)]
pub enum IsaError {
    #[error("invalid workload mix: {0}")]
    InvalidMix(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("class {class} starved: {got} of {wanted} records after {attempts} attempts")]
    StarvedClass {
        class: usize,
        got: usize,
        wanted: usize,
        attempts: u64,
    },
    #[error("n_per_class must be positive")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Operation category as seen by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Arith,
    ArithImm,
    Logical,
    MulDiv,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Arith, OpKind::ArithImm, OpKind::Logical, OpKind::MulDiv];

    pub fn index(self) -> usize {
        match self {
            OpKind::Arith => 0,
            OpKind::ArithImm => 1,
            OpKind::Logical => 2,
            OpKind::MulDiv => 3,
        }
    }

    /// Concrete functions the generator draws from for this kind.
    pub fn subops(self) -> &'static [SubOp] {
        match self {
            OpKind::Arith => &[SubOp::Add, SubOp::Sub],
            OpKind::ArithImm => &[SubOp::Add],
            OpKind::Logical => &[SubOp::And, SubOp::Or, SubOp::Xor, SubOp::Nor],
            OpKind::MulDiv => &[SubOp::MulLo],
        }
    }

    pub fn accepts(self, subop: SubOp) -> bool {
        match self {
            OpKind::Arith | OpKind::ArithImm => matches!(subop, SubOp::Add | SubOp::Sub),
            OpKind::Logical => matches!(subop, SubOp::And | SubOp::Or | SubOp::Xor | SubOp::Nor),
            OpKind::MulDiv => subop == SubOp::MulLo,
        }
    }

    fn token(self) -> &'static str {
        match self {
            OpKind::Arith => "ARITH",
            OpKind::ArithImm => "ARITHI",
            OpKind::Logical => "LOGICAL",
            OpKind::MulDiv => "MULDIV",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for OpKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ARITH" => Ok(OpKind::Arith),
            "ARITHI" => Ok(OpKind::ArithImm),
            "LOGICAL" => Ok(OpKind::Logical),
            "MULDIV" => Ok(OpKind::MulDiv),
            _ => Err(format!("unknown op kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Nor,
    MulLo,
}

impl SubOp {
    fn token(self) -> &'static str {
        match self {
            SubOp::Add => "ADD",
            SubOp::Sub => "SUB",
            SubOp::And => "AND",
            SubOp::Or => "OR",
            SubOp::Xor => "XOR",
            SubOp::Nor => "NOR",
            SubOp::MulLo => "MUL",
        }
    }
}

impl fmt::Display for SubOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SubOp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ADD" => Ok(SubOp::Add),
            "SUB" => Ok(SubOp::Sub),
            "AND" => Ok(SubOp::And),
            "OR" => Ok(SubOp::Or),
            "XOR" => Ok(SubOp::Xor),
            "NOR" => Ok(SubOp::Nor),
            "MUL" => Ok(SubOp::MulLo),
            _ => Err(format!("unknown subop `{s}`")),
        }
    }
}

/// One executed ALU operation. For `ArithImm`, `op2` already holds the
/// sign-extended immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: OpKind,
    pub subop: SubOp,
    pub op1: u32,
    pub op2: u32,
}

impl Instruction {
    pub fn new(kind: OpKind, subop: SubOp, op1: u32, op2: u32) -> Self {
        debug_assert!(kind.accepts(subop), "{kind} does not accept {subop}");
        Instruction { kind, subop, op1, op2 }
    }

    /// The history assumed before the first instruction of a trace.
    pub fn zero() -> Self {
        Instruction::new(OpKind::Arith, SubOp::Add, 0, 0)
    }

    /// Reference integer semantics for a datapath `width` bits wide whose
    /// multiplier only sees the low `mul_width` bits of each operand.
    pub fn evaluate(&self, width: u32, mul_width: u32) -> u32 {
        let mask = low_mask(width);
        let (a, b) = (self.op1 & mask, self.op2 & mask);
        let r = match self.subop {
            SubOp::Add => a.wrapping_add(b),
            SubOp::Sub => a.wrapping_sub(b),
            SubOp::And => a & b,
            SubOp::Or => a | b,
            SubOp::Xor => a ^ b,
            SubOp::Nor => !(a | b),
            SubOp::MulLo => {
                let m = low_mask(mul_width);
                (a & m).wrapping_mul(b & m) & m
            }
        };
        r & mask
    }
}

pub(crate) fn low_mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub instructions: Vec<Instruction>,
    pub seed: u64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

/// How operand words are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperandDist {
    /// Every 32-bit word equally likely.
    Uniform32,
    /// Bit length drawn uniformly from 0..=32, then the value uniformly below it.
    SmallMagnitude,
    /// Each bit set independently with probability 1/8.
    SparseBits,
}

impl OperandDist {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> u32 {
        match self {
            OperandDist::Uniform32 => rng.gen(),
            OperandDist::SmallMagnitude => {
                let bits = rng.gen_range(0..=32u32);
                rng.gen::<u32>() & low_mask(bits)
            }
            OperandDist::SparseBits => rng.gen::<u32>() & rng.gen::<u32>() & rng.gen::<u32>(),
        }
    }
}

/// Probability per [`OpKind`], indexed by [`OpKind::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpMix(pub [f64; 4]);

impl OpMix {
    pub fn uniform() -> Self {
        OpMix([0.25; 4])
    }

    pub fn only(kind: OpKind) -> Self {
        let mut m = [0.0; 4];
        m[kind.index()] = 1.0;
        OpMix(m)
    }

    pub fn validate(&self) -> Result<(), IsaError> {
        for (k, p) in OpKind::ALL.iter().zip(self.0) {
            if !p.is_finite() || p < 0.0 {
                return Err(IsaError::InvalidMix(format!("{k} has probability {p}")));
            }
        }
        let s: f64 = self.0.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(IsaError::InvalidMix(format!("probabilities sum to {s}, expected 1")));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> OpKind {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for k in OpKind::ALL {
            acc += self.0[k.index()];
            if u < acc {
                return k;
            }
        }
        // rounding slack: fall back to the last kind with nonzero weight
        *OpKind::ALL
            .iter()
            .rev()
            .find(|k| self.0[k.index()] > 0.0)
            .unwrap_or(&OpKind::Arith)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub count: usize,
    pub mix: OpMix,
    pub operand_dist: OperandDist,
    pub seed: u64,
}

fn sample_instruction<R: Rng + ?Sized>(rng: &mut R, mix: &OpMix, dist: OperandDist) -> Instruction {
    let kind = mix.sample(rng);
    let subop = *kind.subops().choose(rng).expect("every kind has a subop");
    let op1 = dist.sample(rng);
    let op2 = match kind {
        // 16-bit immediate, sign-extended
        OpKind::ArithImm => dist.sample(rng) as u16 as i16 as i32 as u32,
        _ => dist.sample(rng),
    };
    Instruction::new(kind, subop, op1, op2)
}

/// Generates `spec.count` random instructions, deterministically in `spec.seed`.
pub fn gen_random_trace(spec: &WorkloadSpec) -> Result<Trace, IsaError> {
    spec.mix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let instructions = (0..spec.count)
        .map(|_| sample_instruction(&mut rng, &spec.mix, spec.operand_dist))
        .collect();
    Ok(Trace { instructions, seed: spec.seed })
}

/// Parameters of a class-balanced training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_per_class: usize,
    pub mix: OpMix,
    /// Each sampled instruction (and its predecessor) picks one of these at random.
    pub operand_dists: Vec<OperandDist>,
    pub seed: u64,
    pub max_attempts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedDataset {
    pub records: Vec<ProfileRecord>,
    pub labels: Vec<usize>,
}

impl BalancedDataset {
    pub fn trace(&self) -> Trace {
        Trace {
            instructions: self.records.iter().map(|r| r.instr).collect(),
            seed: 0,
        }
    }
}

/// Rejection-samples (predecessor, instruction) pairs until every delay class
/// holds exactly `spec.n_per_class` records.
///
/// `oracle` measures the instruction given its predecessor.
pub fn gen_balanced_dataset<T, F>(
    spec: &DatasetSpec,
    cfg: &DelayClassConfig<T>,
    mut oracle: F,
) -> Result<BalancedDataset, IsaError>
where
    T: Scalar,
    F: FnMut(&Instruction, &Instruction) -> ProfileRecord,
{
    if spec.n_per_class == 0 {
        return Err(IsaError::EmptyDataset);
    }
    spec.mix.validate()?;
    if spec.operand_dists.is_empty() {
        return Err(IsaError::InvalidMix("no operand distribution given".into()));
    }
    let n_classes = cfg.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counts = vec![0usize; n_classes];
    let mut records = Vec::with_capacity(spec.n_per_class * n_classes);
    let mut labels = Vec::with_capacity(records.capacity());
    let mut attempts = 0u64;
    while counts.iter().any(|&c| c < spec.n_per_class) {
        if attempts >= spec.max_attempts {
            let (class, &got) = counts
                .iter()
                .enumerate()
                .find(|(_, &c)| c < spec.n_per_class)
                .expect("some class is short");
            return Err(IsaError::StarvedClass {
                class,
                got,
                wanted: spec.n_per_class,
                attempts,
            });
        }
        attempts += 1;
        let d_prev = *spec.operand_dists.choose(&mut rng).expect("nonempty");
        let d_cur = *spec.operand_dists.choose(&mut rng).expect("nonempty");
        let prev = sample_instruction(&mut rng, &spec.mix, d_prev);
        let cur = sample_instruction(&mut rng, &spec.mix, d_cur);
        let rec = oracle(&prev, &cur);
        let class = match class_of_delay(rec.delay, cfg) {
            Ok(c) => c,
            Err(_) => continue,
        };
        if counts[class] < spec.n_per_class {
            counts[class] += 1;
            records.push(rec);
            labels.push(class);
        }
    }
    Ok(BalancedDataset { records, labels })
}

pub fn format_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 2));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    out.push_str(&format!("# seed={}\n", trace.seed));
    for i in &trace.instructions {
        out.push_str(&format!("{} {} {:08X} {:08X}\n", i.kind, i.subop, i.op1, i.op2));
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Trace, IsaError> {
    let mut trace = Trace::default();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| IsaError::Parse { line: line_no, msg };
        let trimmed = raw.trim();
        if let Some(c) = trimmed.strip_prefix('#') {
            if let Some(s) = c.trim().strip_prefix("seed=") {
                trace.seed = s.trim().parse().map_err(|e| err(format!("bad seed: {e}")))?;
            }
            continue;
        }
        let content = trimmed.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if !seen_header {
            if content != TRACE_HEADER {
                return Err(err(format!("expected header `{TRACE_HEADER}`, found `{content}`")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let kind: OpKind = fields[0].parse().map_err(err)?;
        let subop: SubOp = fields[1].parse().map_err(err)?;
        if !kind.accepts(subop) {
            return Err(err(format!("{kind} does not accept {subop}")));
        }
        let op1 = parse_hex32(fields[2]).map_err(err)?;
        let op2 = parse_hex32(fields[3]).map_err(err)?;
        trace.instructions.push(Instruction { kind, subop, op1, op2 });
    }
    Ok(trace)
}

pub(crate) fn parse_hex32(s: &str) -> Result<u32, String> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    if digits.is_empty() || digits.len() > 8 {
        return Err(format!("bad hex operand `{s}`"));
    }
    u32::from_str_radix(digits, 16).map_err(|_| format!("bad hex operand `{s}`"))
}

pub fn write_trace_file(trace: &Trace, path: &Path) -> Result<(), IsaError> {
    fs::write(path, format_trace(trace))?;
    Ok(())
}

pub fn parse_trace_file(path: &Path) -> Result<Trace, IsaError> {
    parse_trace(&fs::read_to_string(path)?)
}
