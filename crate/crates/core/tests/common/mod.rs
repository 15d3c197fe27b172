#![allow(dead_code)]

use std::collections::BTreeMap;

use doclock::store::{FieldMap, Snapshot, Store, StoreError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One step of a single-threaded store history.
#[derive(Debug, Clone)]
pub enum Step {
    Insert(usize, FieldMap),
    Update(usize, FieldMap),
    Snapshot(usize),
    /// Restore the n-th snapshot taken so far (modulo count).
    Restore(usize),
}

pub fn key(i: usize) -> String {
    format!("user{i:010}")
}

fn random_fields<R: Rng>(rng: &mut R, max_fields: usize) -> FieldMap {
    let n = rng.random_range(1..=max_fields);
    (0..n)
        .map(|_| {
            let name = format!("field{}", rng.random_range(0..4));
            let len = rng.random_range(0..6);
            (name, (0..len).map(|_| rng.random()).collect())
        })
        .collect()
}

pub fn random_history(seed: u64, len: usize, keys: usize) -> Vec<Step> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| match rng.random_range(0..4) {
            0 => Step::Insert(rng.random_range(0..keys), random_fields(&mut rng, 4)),
            1 => Step::Update(rng.random_range(0..keys), random_fields(&mut rng, 2)),
            2 => Step::Snapshot(rng.random_range(0..keys)),
            _ => Step::Restore(rng.random_range(0..64)),
        })
        .collect()
}

/// Plain map reference: key -> (fields, version).
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Model {
    pub docs: BTreeMap<String, (FieldMap, u64)>,
    snaps: Vec<(String, FieldMap, u64)>,
}

#[derive(Debug, PartialEq)]
pub enum StepResult {
    Ok,
    Version(u64),
    Duplicate,
    NotFound,
    NoSnapshot,
}

impl Model {
    pub fn apply(&mut self, step: &Step) -> StepResult {
        match step {
            Step::Insert(k, f) => {
                let k = key(*k);
                if self.docs.contains_key(&k) {
                    return StepResult::Duplicate;
                }
                self.docs.insert(k, (f.clone(), 0));
                StepResult::Ok
            }
            Step::Update(k, changes) => match self.docs.get_mut(&key(*k)) {
                None => StepResult::NotFound,
                Some((fields, version)) => {
                    for (name, value) in changes {
                        fields.insert(name.clone(), value.clone());
                    }
                    *version += 1;
                    StepResult::Version(*version)
                }
            },
            Step::Snapshot(k) => match self.docs.get(&key(*k)) {
                None => StepResult::NotFound,
                Some((fields, version)) => {
                    self.snaps.push((key(*k), fields.clone(), *version));
                    StepResult::Ok
                }
            },
            Step::Restore(n) => {
                if self.snaps.is_empty() {
                    return StepResult::NoSnapshot;
                }
                let (k, fields, version) = self.snaps[n % self.snaps.len()].clone();
                match self.docs.get_mut(&k) {
                    None => StepResult::NotFound,
                    Some(doc) => {
                        *doc = (fields, version);
                        StepResult::Ok
                    }
                }
            }
        }
    }
}

/// Drives the real store alongside its own snapshot list.
#[derive(Default)]
pub struct Driver {
    pub store: Store,
    snaps: Vec<Snapshot>,
}

impl Driver {
    pub fn apply(&mut self, step: &Step) -> StepResult {
        fn err(e: StoreError) -> StepResult {
            match e {
                StoreError::DuplicateKey(_) => StepResult::Duplicate,
                StoreError::NotFound(_) => StepResult::NotFound,
            }
        }
        match step {
            Step::Insert(k, f) => self
                .store
                .insert(&key(*k), f.clone())
                .map_or_else(err, |()| StepResult::Ok),
            Step::Update(k, c) => self
                .store
                .update(&key(*k), c)
                .map_or_else(err, StepResult::Version),
            Step::Snapshot(k) => match self.store.snapshot(&key(*k)) {
                Ok(s) => {
                    self.snaps.push(s);
                    StepResult::Ok
                }
                Err(e) => err(e),
            },
            Step::Restore(n) => {
                if self.snaps.is_empty() {
                    return StepResult::NoSnapshot;
                }
                let snap = &self.snaps[n % self.snaps.len()];
                self.store
                    .restore(snap)
                    .map_or_else(err, |()| StepResult::Ok)
            }
        }
    }

    pub fn as_model_docs(&self) -> BTreeMap<String, (FieldMap, u64)> {
        self.store
            .export()
            .into_iter()
            .map(|d| (d.key, (d.fields, d.version)))
            .collect()
    }
}

/// Runs a history through both and reports the first divergence.
pub fn check_history(history: &[Step]) -> Result<(), String> {
    let mut model = Model::default();
    let mut driver = Driver::default();
    for (i, step) in history.iter().enumerate() {
        let expected = model.apply(step);
        let actual = driver.apply(step);
        if expected != actual {
            return Err(format!(
                "step {i} {step:?}: model {expected:?}, store {actual:?}"
            ));
        }
    }
    if model.docs != driver.as_model_docs() {
        return Err("final states differ".into());
    }
    Ok(())
}
