//! Append-only checkpoint store.
//!
//! Training emits one record per checkpointed round: the pre-update global
//! model `w_t`, the server rate `alpha_t` and every selected client's raw
//! update `g_t`. Forensics later replays these records, so the store is the
//! boundary between simulation and detection and has to round-trip bits
//! exactly. Parameters are narrowed to `f32` on save and widened back to
//! `f64` (exact) on load.
//!
//! On-disk layout, all little-endian. Data file `checkpoints.flfc`:
//!
//! ```text
//! magic "FLFC" | version u32
//! per record:
//!   round u64 | alpha f64 | P u64 | w_t: P x f32
//!   | n_updates u32 | n_updates x (client u32, P x f32)
//! ```
//!
//! Index file `checkpoints.idx` next to it, same magic and version, then
//! one entry per record: `round u64 | offset u64 | length u64 | crc32 u32`.
//! The CRC covers the record bytes in the data file. A record is durable
//! once its index entry is on disk: save writes the record, syncs, then
//! writes the entry and syncs again, so a torn write at worst leaves a
//! trailing record that no index entry points at.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::params::ParamVector;

const MAGIC: [u8; 4] = *b"FLFC";
const VERSION: u32 = 1;
const DATA_FILE: &str = "checkpoints.flfc";
const INDEX_FILE: &str = "checkpoints.idx";

/// One checkpointed round, exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Training round `t` (1-based).
    pub round: u64,
    /// Server learning rate `alpha_t` applied to the aggregate this round.
    pub alpha: f64,
    /// Pre-update global model `w_t`, the one clients trained against.
    pub global: Vec<f32>,
    /// Raw updates `g_t` keyed by client id, ascending. The selected set
    /// `C_t` is exactly the ids listed here.
    pub updates: Vec<(u32, Vec<f32>)>,
}

impl Checkpoint {
    /// Ids of the clients selected this round, ascending.
    pub fn selected_clients(&self) -> Vec<u32> {
        self.updates.iter().map(|(id, _)| *id).collect()
    }

    /// Global model widened to `f64`.
    pub fn global_params(&self) -> ParamVector {
        ParamVector::from_f32(&self.global)
    }

    fn validate(&self) -> Result<()> {
        let p = self.global.len();
        for (pos, (id, g)) in self.updates.iter().enumerate() {
            if g.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: g.len() });
            }
            if pos > 0 && self.updates[pos - 1].0 >= *id {
                return Err(Error::Malformed {
                    kind: "checkpoint",
                    detail: format!("client ids not strictly ascending at {id}"),
                });
            }
        }
        Ok(())
    }

    fn to_bytes(&self) -> Vec<u8> {
        let p = self.global.len();
        let mut buf =
            Vec::with_capacity(8 + 8 + 8 + 4 * p + 4 + self.updates.len() * (4 + 4 * p));
        buf.extend_from_slice(&self.round.to_le_bytes());
        buf.extend_from_slice(&self.alpha.to_le_bytes());
        buf.extend_from_slice(&(p as u64).to_le_bytes());
        for v in &self.global {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.updates.len() as u32).to_le_bytes());
        for (id, g) in &self.updates {
            buf.extend_from_slice(&id.to_le_bytes());
            for v in g {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let round = r.u64()?;
        let alpha = f64::from_bits(r.u64()?);
        let p = r.u64()? as usize;
        let global = r.f32s(p)?;
        let n = r.u32()? as usize;
        let mut updates = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u32()?;
            let g = r.f32s(p)?;
            updates.push((id, g));
        }
        if r.pos != buf.len() {
            return Err(Error::Malformed {
                kind: "checkpoint",
                detail: format!("{} trailing bytes after record", buf.len() - r.pos),
            });
        }
        let cp = Checkpoint { round, alpha, global, updates };
        cp.validate()?;
        Ok(cp)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Malformed {
                kind: "checkpoint",
                detail: "record truncated".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct IndexEntry {
    round: u64,
    offset: u64,
    length: u64,
    crc: u32,
}

/// Handle to the pair of data and index files in one directory.
///
/// `create` starts an empty store for writing, `open` attaches read-only to
/// an existing one. A single writer appends; readers opened after a save
/// returned see every record up to that save.
#[derive(Debug)]
pub struct CheckpointStore {
    data_path: PathBuf,
    entries: Vec<IndexEntry>,
    writer: Option<WriterState>,
}

#[derive(Debug)]
struct WriterState {
    data: File,
    index: File,
    next_offset: u64,
}

impl CheckpointStore {
    pub fn data_path(dir: &Path) -> PathBuf {
        dir.join(DATA_FILE)
    }

    pub fn index_path(dir: &Path) -> PathBuf {
        dir.join(INDEX_FILE)
    }

    /// Creates an empty store in `dir`, truncating any previous one.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let data_path = Self::data_path(dir);
        let index_path = Self::index_path(dir);
        let mut data = File::create(&data_path)?;
        let mut index = File::create(&index_path)?;
        let mut header = Vec::with_capacity(8);
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        data.write_all(&header)?;
        data.sync_all()?;
        index.write_all(&header)?;
        index.sync_all()?;
        Ok(CheckpointStore {
            data_path,
            entries: Vec::new(),
            writer: Some(WriterState { data, index, next_offset: header.len() as u64 }),
        })
    }

    /// Opens an existing store read-only and loads its index.
    pub fn open(dir: &Path) -> Result<Self> {
        let data_path = Self::data_path(dir);
        let index_path = Self::index_path(dir);
        let mut data = File::open(&data_path)?;
        check_header(&mut data, "checkpoint data")?;
        let mut index = File::open(&index_path)?;
        check_header(&mut index, "checkpoint index")?;
        let mut raw = Vec::new();
        index.read_to_end(&mut raw)?;
        if raw.len() % 28 != 0 {
            return Err(Error::Malformed {
                kind: "checkpoint index",
                detail: format!("{} stray bytes after last entry", raw.len() % 28),
            });
        }
        let mut entries = Vec::with_capacity(raw.len() / 28);
        for chunk in raw.chunks_exact(28) {
            let entry = IndexEntry {
                round: u64::from_le_bytes(chunk[0..8].try_into().unwrap()),
                offset: u64::from_le_bytes(chunk[8..16].try_into().unwrap()),
                length: u64::from_le_bytes(chunk[16..24].try_into().unwrap()),
                crc: u32::from_le_bytes(chunk[24..28].try_into().unwrap()),
            };
            if let Some(last) = entries.last() {
                let last: &IndexEntry = last;
                if entry.round <= last.round {
                    return Err(Error::Malformed {
                        kind: "checkpoint index",
                        detail: format!("round {} out of order", entry.round),
                    });
                }
            }
            entries.push(entry);
        }
        Ok(CheckpointStore { data_path, entries, writer: None })
    }

    /// Rounds present, ascending.
    pub fn rounds(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.round).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a checkpoint. Rounds must be strictly increasing.
    pub fn save_checkpoint(&mut self, cp: &Checkpoint) -> Result<()> {
        cp.validate()?;
        if let Some(last) = self.entries.last() {
            if cp.round <= last.round {
                return Err(Error::OutOfOrderRound { last: last.round, got: cp.round });
            }
        }
        let w = self.writer.as_mut().ok_or_else(|| {
            Error::InvalidConfig("checkpoint store was opened read-only".into())
        })?;
        let bytes = cp.to_bytes();
        let crc = crc32fast::hash(&bytes);
        let entry = IndexEntry {
            round: cp.round,
            offset: w.next_offset,
            length: bytes.len() as u64,
            crc,
        };
        w.data.write_all(&bytes)?;
        w.data.sync_all()?;
        let mut ebytes = Vec::with_capacity(28);
        ebytes.extend_from_slice(&entry.round.to_le_bytes());
        ebytes.extend_from_slice(&entry.offset.to_le_bytes());
        ebytes.extend_from_slice(&entry.length.to_le_bytes());
        ebytes.extend_from_slice(&entry.crc.to_le_bytes());
        w.index.write_all(&ebytes)?;
        w.index.sync_all()?;
        w.next_offset += bytes.len() as u64;
        self.entries.push(entry);
        Ok(())
    }

    fn load_entry(&self, entry: IndexEntry) -> Result<Checkpoint> {
        let mut f = File::open(&self.data_path)?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut buf = vec![0u8; entry.length as usize];
        f.read_exact(&mut buf).map_err(|_| Error::Malformed {
            kind: "checkpoint data",
            detail: format!("record for round {} truncated", entry.round),
        })?;
        let crc = crc32fast::hash(&buf);
        if crc != entry.crc {
            return Err(Error::ChecksumMismatch {
                round: entry.round,
                stored: entry.crc,
                computed: crc,
            });
        }
        let cp = Checkpoint::from_bytes(&buf)?;
        if cp.round != entry.round {
            return Err(Error::Malformed {
                kind: "checkpoint",
                detail: format!("index says round {}, record says {}", entry.round, cp.round),
            });
        }
        Ok(cp)
    }

    /// Loads the checkpoint for round `t`, verifying its checksum.
    pub fn load_checkpoint(&self, t: u64) -> Result<Checkpoint> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.round == t)
            .copied()
            .ok_or(Error::MissingRound(t))?;
        self.load_entry(entry)
    }

    /// Lazily loads checkpoints in ascending round order.
    pub fn iter_checkpoints(&self) -> impl Iterator<Item = Result<Checkpoint>> + '_ {
        self.entries.iter().map(move |&e| self.load_entry(e))
    }
}

fn check_header(f: &mut File, kind: &'static str) -> Result<()> {
    let mut header = [0u8; 8];
    f.read_exact(&mut header).map_err(|_| Error::Malformed {
        kind,
        detail: "file shorter than header".into(),
    })?;
    if header[0..4] != MAGIC {
        return Err(Error::Malformed { kind, detail: "bad magic".into() });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Malformed { kind, detail: format!("unsupported version {version}") });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample_checkpoint(round: u64, p: usize, clients: &[u32], seed: u64) -> Checkpoint {
        let mut rng = crate::seeds::stream(seed, &[round]);
        Checkpoint {
            round,
            alpha: rng.gen_range(0.01..2.0),
            global: (0..p).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            updates: clients
                .iter()
                .map(|&id| (id, (0..p).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
                .collect(),
        }
    }

    #[test]
    fn save_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        let cp = sample_checkpoint(10, 17, &[0, 3, 9], 1);
        store.save_checkpoint(&cp).unwrap();
        let back = store.load_checkpoint(10).unwrap();
        assert_eq!(back, cp);
        // And through a fresh read-only handle.
        let reader = CheckpointStore::open(dir.path()).unwrap();
        assert_eq!(reader.load_checkpoint(10).unwrap(), cp);
    }

    #[test]
    fn rounds_must_increase() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        store.save_checkpoint(&sample_checkpoint(10, 4, &[1], 1)).unwrap();
        let err = store.save_checkpoint(&sample_checkpoint(10, 4, &[1], 2)).unwrap_err();
        assert!(matches!(err, Error::OutOfOrderRound { last: 10, got: 10 }));
    }

    #[test]
    fn missing_round_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::create(dir.path()).unwrap();
        assert!(matches!(store.load_checkpoint(5).unwrap_err(), Error::MissingRound(5)));
    }

    #[test]
    fn corrupted_record_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        store.save_checkpoint(&sample_checkpoint(10, 8, &[0, 1], 3)).unwrap();
        drop(store);
        // Flip one byte in the middle of the record.
        let path = CheckpointStore::data_path(dir.path());
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let reader = CheckpointStore::open(dir.path()).unwrap();
        assert!(matches!(
            reader.load_checkpoint(10).unwrap_err(),
            Error::ChecksumMismatch { round: 10, .. }
        ));
    }

    #[test]
    fn iteration_is_ascending_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        for t in [10u64, 20, 30] {
            store.save_checkpoint(&sample_checkpoint(t, 5, &[2, 7], t)).unwrap();
        }
        let rounds: Vec<u64> =
            store.iter_checkpoints().map(|cp| cp.unwrap().round).collect();
        assert_eq!(rounds, vec![10, 20, 30]);
    }

    #[test]
    fn record_length_matches_layout_arithmetic() {
        // P=1000 and 100 clients: 28 byte fixed part, 4000 for the model,
        // then 100 * 4004 for the updates.
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        let clients: Vec<u32> = (0..100).collect();
        store.save_checkpoint(&sample_checkpoint(10, 1000, &clients, 4)).unwrap();
        assert_eq!(store.entries[0].length, 8 + 8 + 8 + 4000 + 4 + 100 * (4 + 4000));
    }

    #[test]
    fn header_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(CheckpointStore::data_path(dir.path()), b"not a store").unwrap();
        std::fs::write(CheckpointStore::index_path(dir.path()), b"not a store").unwrap();
        assert!(matches!(
            CheckpointStore::open(dir.path()).unwrap_err(),
            Error::Malformed { .. }
        ));
    }

    #[test]
    fn duplicate_update_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        let mut cp = sample_checkpoint(10, 3, &[1, 2], 5);
        cp.updates[1].0 = 1;
        assert!(store.save_checkpoint(&cp).is_err());
    }
}
