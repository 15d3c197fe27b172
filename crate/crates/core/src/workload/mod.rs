//! YCSB-style workloads: operation mixes, key choosers, record synthesis.
//!
//! The run phase draws each operation independently: the kind from the
//! configured proportions, the key from the request distribution, and for
//! writes a fresh value for one randomly chosen field. Every worker owns its
//! own generator seeded from `(seed, worker_index)`, so the op stream of a
//! worker is a pure function of the spec and its index.

mod props;
mod zipfian;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::FieldMap;
use crate::txn::{OperationSpec, Transform};

pub use zipfian::{uniform, Zipfian, DEFAULT_THETA};

/// Sum of proportions must be 1 within this.
pub const PROPORTION_EPSILON: f64 = 1e-9;

// Keeps record synthesis streams apart from worker op streams.
const RECORD_SEED_SALT: u64 = 0x0005_eed0_f7ec_04d5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("unknown workload {0:?} (expected A, B or F)")]
    UnknownWorkload(String),
    #[error("proportions sum to {0}, expected 1")]
    ProportionSum(f64),
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("record index {index} out of range for {record_count} records")]
    IndexOutOfRange { index: u64, record_count: u64 },
    #[error("unknown property {0:?}")]
    UnknownProperty(String),
    #[error("invalid value {value:?} for property {key}")]
    InvalidProperty { key: String, value: String },
    #[error("line {line}: expected key=value, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Zipfian,
    Uniform,
}

impl FromStr for Distribution {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zipfian" => Ok(Distribution::Zipfian),
            "uniform" => Ok(Distribution::Uniform),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BuiltinWorkload {
    A,
    B,
    F,
}

impl BuiltinWorkload {
    pub const ALL: [BuiltinWorkload; 3] =
        [BuiltinWorkload::A, BuiltinWorkload::B, BuiltinWorkload::F];

    pub fn spec(self) -> WorkloadSpec {
        let (read, update, rmw) = match self {
            BuiltinWorkload::A => (0.5, 0.5, 0.0),
            BuiltinWorkload::B => (0.95, 0.05, 0.0),
            BuiltinWorkload::F => (0.5, 0.0, 0.5),
        };
        WorkloadSpec {
            name: self.to_string(),
            read_proportion: read,
            update_proportion: update,
            rmw_proportion: rmw,
            ..WorkloadSpec::default()
        }
    }
}

impl fmt::Display for BuiltinWorkload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BuiltinWorkload::A => "A",
            BuiltinWorkload::B => "B",
            BuiltinWorkload::F => "F",
        };
        f.write_str(name)
    }
}

impl FromStr for BuiltinWorkload {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, WorkloadError> {
        match s.trim() {
            "A" | "a" => Ok(BuiltinWorkload::A),
            "B" | "b" => Ok(BuiltinWorkload::B),
            "F" | "f" => Ok(BuiltinWorkload::F),
            other => Err(WorkloadError::UnknownWorkload(other.to_string())),
        }
    }
}

pub fn builtin_workload(name: &str) -> Result<WorkloadSpec, WorkloadError> {
    Ok(name.parse::<BuiltinWorkload>()?.spec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub read_proportion: f64,
    pub update_proportion: f64,
    pub rmw_proportion: f64,
    pub record_count: u64,
    pub operation_count: u64,
    pub distribution: Distribution,
    pub zipfian_theta: f64,
    pub field_count: usize,
    pub field_length: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            name: "custom".to_string(),
            read_proportion: 1.0,
            update_proportion: 0.0,
            rmw_proportion: 0.0,
            record_count: 10_000,
            operation_count: 10_000,
            distribution: Distribution::Zipfian,
            zipfian_theta: DEFAULT_THETA,
            field_count: 10,
            field_length: 100,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        for (name, value) in [
            ("readproportion", self.read_proportion),
            ("updateproportion", self.update_proportion),
            ("readmodifywriteproportion", self.rmw_proportion),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(WorkloadError::OutOfRange { name, value });
            }
        }
        let sum = self.read_proportion + self.update_proportion + self.rmw_proportion;
        if (sum - 1.0).abs() > PROPORTION_EPSILON {
            return Err(WorkloadError::ProportionSum(sum));
        }
        for (name, value) in [
            ("recordcount", self.record_count as f64),
            ("operationcount", self.operation_count as f64),
            ("fieldcount", self.field_count as f64),
            ("fieldlength", self.field_length as f64),
        ] {
            if value < 1.0 {
                return Err(WorkloadError::OutOfRange { name, value });
            }
        }
        if !self.zipfian_theta.is_finite() || self.zipfian_theta < 0.0 {
            return Err(WorkloadError::OutOfRange {
                name: "zipfian theta",
                value: self.zipfian_theta,
            });
        }
        Ok(())
    }

    pub fn key_chooser(&self) -> KeyChooser {
        match self.distribution {
            Distribution::Zipfian => {
                KeyChooser::Zipfian(Zipfian::new(self.record_count, self.zipfian_theta))
            }
            Distribution::Uniform => KeyChooser::Uniform(self.record_count),
        }
    }

    /// Synthesizes the load-phase record at `index`; deterministic in
    /// `(index, seed)`.
    pub fn build_record(&self, index: u64) -> Result<(String, FieldMap), WorkloadError> {
        if index >= self.record_count {
            return Err(WorkloadError::IndexOutOfRange {
                index,
                record_count: self.record_count,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ RECORD_SEED_SALT);
        rng.set_stream(index);
        let fields = (0..self.field_count)
            .map(|f| (field_name(f), printable_bytes(&mut rng, self.field_length)))
            .collect();
        Ok((record_key(index), fields))
    }
}

pub fn record_key(index: u64) -> String {
    format!("user{index:010}")
}

pub fn field_name(index: usize) -> String {
    format!("field{index}")
}

fn printable_bytes<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random_range(b'!'..=b'~')).collect()
}

#[derive(Debug, Clone)]
pub enum KeyChooser {
    Zipfian(Zipfian),
    Uniform(u64),
}

impl KeyChooser {
    pub fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            KeyChooser::Zipfian(z) => z.sample(rng),
            KeyChooser::Uniform(n) => uniform(rng, *n),
        }
    }
}

/// Per-worker operation stream.
#[derive(Debug, Clone)]
pub struct OpGenerator {
    spec: WorkloadSpec,
    chooser: KeyChooser,
    rng: ChaCha8Rng,
}

impl OpGenerator {
    pub fn new(spec: &WorkloadSpec, worker_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(worker_index);
        Self {
            spec: spec.clone(),
            chooser: spec.key_chooser(),
            rng,
        }
    }

    pub fn next_op(&mut self) -> OperationSpec {
        let draw: f64 = self.rng.random();
        let key = record_key(self.chooser.next(&mut self.rng));
        if draw < self.spec.read_proportion {
            return OperationSpec::read(key);
        }
        let field = field_name(self.rng.random_range(0..self.spec.field_count));
        let value = printable_bytes(&mut self.rng, self.spec.field_length);
        if draw < self.spec.read_proportion + self.spec.update_proportion {
            OperationSpec::update(key, FieldMap::from([(field, value)]))
        } else {
            OperationSpec::read_modify_write(key, Transform::ReplaceField { field, value })
        }
    }
}

impl Iterator for OpGenerator {
    type Item = OperationSpec;

    fn next(&mut self) -> Option<OperationSpec> {
        Some(self.next_op())
    }
}
