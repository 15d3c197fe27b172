//! In-memory document collection.
//!
//! Documents are addressed by record key and hold an ordered map of named
//! byte-string fields plus a system-maintained version counter. The counter
//! starts at 0 on insert and is bumped once per applied write; the audit
//! module relies on it to detect lost updates.
//!
//! Every public operation is atomic with respect to every other one: the
//! collection map is guarded by a reader-writer lock that only inserts take
//! exclusively, and each document sits behind its own mutex. Atomicity across
//! several operations is the transaction layer's job.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

/// Field name to value bytes, ordered by name.
pub type FieldMap = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key {0:?} not found")]
    NotFound(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub key: String,
    pub fields: FieldMap,
    pub version: u64,
}

/// Deep copy of a document taken before mutation, restored on abort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub key: String,
    pub fields: FieldMap,
    pub version: u64,
}

#[derive(Debug, Default)]
struct Entry {
    fields: FieldMap,
    version: u64,
}

#[derive(Debug, Default)]
pub struct Store {
    docs: RwLock<BTreeMap<String, Mutex<Entry>>>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.read().is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.docs.read().contains_key(key)
    }

    pub fn insert(&self, key: &str, fields: FieldMap) -> Result<()> {
        let mut docs = self.docs.write();
        if docs.contains_key(key) {
            return Err(StoreError::DuplicateKey(key.to_string()));
        }
        docs.insert(key.to_string(), Mutex::new(Entry { fields, version: 0 }));
        Ok(())
    }

    pub fn read(&self, key: &str) -> Result<Document> {
        self.with_entry(key, |e| Document {
            key: key.to_string(),
            fields: e.fields.clone(),
            version: e.version,
        })
    }

    /// Version of a document without copying its fields.
    pub fn version(&self, key: &str) -> Result<u64> {
        self.with_entry(key, |e| e.version)
    }

    /// Replaces the named fields and bumps the version by one. Returns the new
    /// version.
    pub fn update(&self, key: &str, changes: &FieldMap) -> Result<u64> {
        self.with_entry(key, |e| {
            for (name, value) in changes {
                e.fields.insert(name.clone(), value.clone());
            }
            e.version += 1;
            e.version
        })
    }

    /// Writes back a full field map computed from an earlier read at
    /// `observed_version`.
    ///
    /// The stored version becomes `max(current, observed_version + 1)`. When
    /// nothing was written in between this is exactly `current + 1`; otherwise
    /// the intervening writes are clobbered and a version number repeats,
    /// which is how an unguarded read-modify-write loses updates.
    pub fn write_back(&self, key: &str, fields: FieldMap, observed_version: u64) -> Result<u64> {
        self.with_entry(key, |e| {
            e.fields = fields;
            e.version = e.version.max(observed_version + 1);
            e.version
        })
    }

    pub fn snapshot(&self, key: &str) -> Result<Snapshot> {
        self.with_entry(key, |e| Snapshot {
            key: key.to_string(),
            fields: e.fields.clone(),
            version: e.version,
        })
    }

    pub fn restore(&self, snapshot: &Snapshot) -> Result<()> {
        self.with_entry(&snapshot.key, |e| {
            e.fields = snapshot.fields.clone();
            e.version = snapshot.version;
        })
    }

    /// Rollback of an insert made inside an aborted transaction.
    pub(crate) fn remove(&self, key: &str) -> Result<()> {
        self.docs
            .write()
            .remove(key)
            .map(|_| ())
            .ok_or_else(|| StoreError::NotFound(key.to_string()))
    }

    pub fn clear(&self) {
        self.docs.write().clear();
    }

    /// Point-in-time copy of every document, ordered by key.
    pub fn export(&self) -> Vec<Document> {
        let docs = self.docs.read();
        docs.iter()
            .map(|(key, entry)| {
                let e = entry.lock();
                Document {
                    key: key.clone(),
                    fields: e.fields.clone(),
                    version: e.version,
                }
            })
            .collect()
    }

    pub fn versions(&self) -> BTreeMap<String, u64> {
        let docs = self.docs.read();
        docs.iter()
            .map(|(key, entry)| (key.clone(), entry.lock().version))
            .collect()
    }

    fn with_entry<T>(&self, key: &str, f: impl FnOnce(&mut Entry) -> T) -> Result<T> {
        let docs = self.docs.read();
        let entry = docs
            .get(key)
            .ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        let mut guard = entry.lock();
        Ok(f(&mut guard))
    }

    /// Writes every document as a length-prefixed binary record stream.
    ///
    /// Per record: key length (u32 LE), key bytes, version (u64 LE), field
    /// count (u32 LE), then per field name length (u32 LE), name bytes, value
    /// length (u32 LE), value bytes. Records appear in ascending key order.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for doc in self.export() {
            write_bytes(&mut w, doc.key.as_bytes())?;
            w.write_all(&doc.version.to_le_bytes())?;
            write_len(&mut w, doc.fields.len())?;
            for (name, value) in &doc.fields {
                write_bytes(&mut w, name.as_bytes())?;
                write_bytes(&mut w, value)?;
            }
        }
        w.flush()
    }

    /// Reads a stream produced by [`Store::dump`] into a fresh store.
    pub fn load_dump<R: Read>(mut r: R) -> io::Result<Store> {
        let mut docs = BTreeMap::new();
        while let Some(bytes) = read_bytes_or_eof(&mut r)? {
            let key = into_string(bytes)?;
            let mut version = [0u8; 8];
            r.read_exact(&mut version)?;
            let field_count = read_u32(&mut r)?;
            let mut fields = FieldMap::new();
            for _ in 0..field_count {
                let name = into_string(read_bytes(&mut r)?)?;
                let value = read_bytes(&mut r)?;
                fields.insert(name, value);
            }
            let entry = Entry {
                fields,
                version: u64::from_le_bytes(version),
            };
            if docs.insert(key.clone(), Mutex::new(entry)).is_some() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("duplicate key {key:?} in dump"),
                ));
            }
        }
        Ok(Store {
            docs: RwLock::new(docs),
        })
    }
}

fn write_len<W: Write>(w: &mut W, len: usize) -> io::Result<()> {
    let len = u32::try_from(len)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
    w.write_all(&len.to_le_bytes())
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    write_len(w, bytes.len())?;
    w.write_all(bytes)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_bytes<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

// Clean EOF is only legal at a record boundary.
fn read_bytes_or_eof<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < len.len() {
        match r.read(&mut len[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

fn into_string(bytes: Vec<u8>) -> io::Result<String> {
    String::from_utf8(bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
