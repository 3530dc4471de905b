//! On-disk per-example gradient cache.
//!
//! ```text
//! "GSIM" | version: u32 LE | header_len: u32 LE | header: JSON | records
//! record = f32 LE * total | crc32(f32 bytes): u32 LE
//! ```
//! The header holds the hash identifying the model and checkpoints, the
//! checkpoint epochs, the layout table, the record length and an index of
//! `(id, epoch, offset)` entries, epoch-major with ids ascending. Offsets are
//! fixed before any gradient is computed, so an interrupted build resumes by
//! recomputing only the records whose checksum does not verify.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{GradientOrigin, GradientVector, Layout};

pub const CACHE_MAGIC: &[u8; 4] = b"GSIM";
pub const CACHE_VERSION: u32 = 1;
const PREFIX_LEN: u64 = 12;
const WRITE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: u64,
    pub epoch: u32,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CacheHeader {
    config_hash: String,
    epochs: Vec<u32>,
    layout: Layout,
    record_len: u64,
    index: Vec<IndexEntry>,
}

/// How many records a build computed and how many it found intact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub computed: usize,
    pub reused: usize,
}

pub struct GradientCache {
    path: PathBuf,
    file: File,
    header: CacheHeader,
    layout: Arc<Layout>,
    lookup: HashMap<(u64, u32), usize>,
}

#[cfg(unix)]
fn read_at(f: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(f, buf, offset)
}

#[cfg(unix)]
fn write_at(f: &File, buf: &[u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::write_all_at(f, buf, offset)
}

#[cfg(windows)]
fn read_at(f: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = f.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

#[cfg(windows)]
fn write_at(f: &File, mut buf: &[u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = f.seek_write(buf, offset)?;
        buf = &buf[n..];
        offset += n as u64;
    }
    Ok(())
}

fn encode_record(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * data.len() + 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn record_is_valid(bytes: &[u8]) -> bool {
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    crc32fast::hash(body) == u32::from_le_bytes(crc.try_into().unwrap())
}

fn header_bytes(header: &CacheHeader) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(PREFIX_LEN as usize + json.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

fn plan(config_hash: &str, layout: &Layout, epochs: &[u32], ids: &[u64]) -> Result<CacheHeader> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let record_len = 4 * layout.total as u64 + 4;
    let mut header = CacheHeader {
        config_hash: config_hash.to_string(),
        epochs: epochs.to_vec(),
        layout: layout.clone(),
        record_len,
        index: Vec::with_capacity(ids.len() * epochs.len()),
    };
    for &epoch in epochs {
        for &id in &ids {
            header.index.push(IndexEntry { id, epoch, offset: 0 });
        }
    }
    // offsets depend on the header length, which depends on the offsets;
    // iterate until the JSON length settles
    let mut start = 0u64;
    loop {
        for (i, e) in header.index.iter_mut().enumerate() {
            e.offset = start + i as u64 * record_len;
        }
        let len = header_bytes(&header)?.len() as u64;
        if len == start {
            return Ok(header);
        }
        start = len;
    }
}

impl GradientCache {
    /// Creates or completes the cache at `path` with one record per
    /// `(id, epoch)`. Intact records of a matching existing file are kept;
    /// missing or corrupt ones are recomputed with `compute`, using up to
    /// `workers` threads.
    pub fn build<F>(
        path: &Path,
        config_hash: &str,
        layout: &Arc<Layout>,
        epochs: &[u32],
        ids: &[u64],
        workers: usize,
        compute: F,
    ) -> Result<(GradientCache, BuildStats)>
    where
        F: Fn(u64, u32) -> Result<GradientVector> + Sync,
    {
        let header = plan(config_hash, layout, epochs, ids)?;
        let head = header_bytes(&header)?;
        let end = head.len() as u64 + header.index.len() as u64 * header.record_len;

        let reusable = match File::open(path) {
            Ok(f) => {
                let mut existing = vec![0u8; head.len()];
                f.metadata().is_ok_and(|m| m.len() == end) && read_at(&f, &mut existing, 0).is_ok() && existing == head
            }
            Err(_) => false,
        };
        let io = |e| Error::io(path, e);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(!reusable).open(path).map_err(io)?;
        if !reusable {
            file.set_len(0).map_err(io)?;
            write_at(&file, &head, 0).map_err(io)?;
            file.set_len(end).map_err(io)?;
        }

        let mut todo = Vec::new();
        let mut buf = vec![0u8; header.record_len as usize];
        for (i, e) in header.index.iter().enumerate() {
            if reusable {
                read_at(&file, &mut buf, e.offset).map_err(io)?;
                if record_is_valid(&buf) {
                    continue;
                }
            }
            todo.push(i);
        }
        let stats = BuildStats { computed: todo.len(), reused: header.index.len() - todo.len() };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        for chunk in todo.chunks(WRITE_CHUNK) {
            let records: Vec<Result<Vec<u8>>> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&i| {
                        let e = header.index[i];
                        let g = compute(e.id, e.epoch)?;
                        if g.layout.as_ref() != layout.as_ref() {
                            return Err(Error::IncompatibleGradient(format!(
                                "gradient for example {} has a foreign layout",
                                e.id
                            )));
                        }
                        Ok(encode_record(&g.data))
                    })
                    .collect()
            });
            for (&i, rec) in chunk.iter().zip(records) {
                write_at(&file, &rec?, header.index[i].offset).map_err(io)?;
            }
        }
        file.sync_all().map_err(io)?;
        drop(file);
        Ok((GradientCache::open(path)?, stats))
    }

    pub fn open(path: &Path) -> Result<GradientCache> {
        let io = |e| Error::io(path, e);
        let fail = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let file = File::open(path).map_err(io)?;
        let mut prefix = [0u8; PREFIX_LEN as usize];
        read_at(&file, &mut prefix, 0).map_err(|_| fail("truncated prefix".into()))?;
        if &prefix[..4] != CACHE_MAGIC {
            return Err(fail("missing GSIM magic".into()));
        }
        let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(prefix[8..12].try_into().unwrap()) as usize;
        let mut json = vec![0u8; hlen];
        read_at(&file, &mut json, PREFIX_LEN).map_err(|_| fail("truncated header".into()))?;
        let header: CacheHeader = serde_json::from_slice(&json)?;
        if header.record_len != 4 * header.layout.total as u64 + 4 {
            return Err(fail("record length does not match the layout".into()));
        }
        let len = file.metadata().map_err(io)?.len();
        if let Some(last) = header.index.last() {
            if last.offset + header.record_len > len {
                return Err(Error::Integrity {
                    path: path.to_path_buf(),
                    offset: len,
                    reason: "file ends before the last record".into(),
                });
            }
        }
        let lookup = header.index.iter().enumerate().map(|(i, e)| ((e.id, e.epoch), i)).collect();
        Ok(GradientCache { path: path.to_path_buf(), file, layout: Arc::new(header.layout.clone()), header, lookup })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config_hash(&self) -> &str {
        &self.header.config_hash
    }

    pub fn epochs(&self) -> &[u32] {
        &self.header.epochs
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.header.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.header.index.is_empty()
    }

    pub fn contains(&self, id: u64, epoch: u32) -> bool {
        self.lookup.contains_key(&(id, epoch))
    }

    /// Requested pairs that have no record.
    pub fn missing(&self, ids: &[u64], epochs: &[u32]) -> Vec<(u64, u32)> {
        epochs
            .iter()
            .flat_map(|&e| ids.iter().map(move |&id| (id, e)))
            .filter(|&(id, e)| !self.contains(id, e))
            .collect()
    }

    /// Reads one record into `out`, checking its CRC.
    pub fn read_into(&self, id: u64, epoch: u32, out: &mut Vec<f32>) -> Result<()> {
        let i = *self.lookup.get(&(id, epoch)).ok_or(Error::CacheMiss { missing: vec![(id, epoch)] })?;
        let offset = self.header.index[i].offset;
        let mut buf = vec![0u8; self.header.record_len as usize];
        read_at(&self.file, &mut buf, offset).map_err(|e| Error::io(&self.path, e))?;
        if !record_is_valid(&buf) {
            return Err(Error::Integrity {
                path: self.path.clone(),
                offset,
                reason: format!("checksum mismatch for example {id} at epoch {epoch}"),
            });
        }
        out.clear();
        out.extend(buf[..buf.len() - 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        Ok(())
    }

    pub fn get(&self, id: u64, epoch: u32) -> Result<GradientVector> {
        let mut data = Vec::with_capacity(self.layout.total);
        self.read_into(id, epoch, &mut data)?;
        GradientVector::new(self.layout.clone(), data, GradientOrigin { example_id: id, epoch, mask_id: None })
    }

    /// Checks every record; the first bad one is reported with its offset.
    pub fn verify(&self) -> Result<()> {
        let mut buf = Vec::new();
        for e in &self.header.index {
            self.read_into(e.id, e.epoch, &mut buf)?;
        }
        Ok(())
    }
}
