//! Hidden-state archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SEPH"            4 bytes magic
//! version           u32 (= 1)
//! manifest_len      u32
//! manifest          manifest_len bytes of UTF-8 JSON
//! records...        id_len u16 | id | position u8 | stream u8 | layer u16 | d x f32
//! ```
//!
//! The manifest's `record_count` is only known once every record has been
//! streamed out, so the writer reserves room for the widest possible count
//! and pads the JSON with trailing spaces when it rewrites the header.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{ArchiveManifest, HiddenStateRecord, Position, Result, StoreError, Stream};

pub const MAGIC: &[u8; 4] = b"SEPH";
pub const VERSION: u32 = 1;

/// Record selection applied while reading. `None` matches everything.
#[derive(Debug, Clone, Default)]
pub struct ArchiveFilter {
    pub position: Option<Position>,
    pub stream: Option<Stream>,
    pub layers: Option<BTreeSet<u16>>,
}

impl ArchiveFilter {
    pub fn matches(&self, r: &HiddenStateRecord) -> bool {
        self.position.is_none_or(|p| p == r.position)
            && self.stream.is_none_or(|s| s == r.stream)
            && self.layers.as_ref().is_none_or(|ls| ls.contains(&r.layer))
    }
}

pub struct ArchiveWriter {
    out: BufWriter<File>,
    manifest: ArchiveManifest,
    reserved: usize,
    written: u64,
}

impl ArchiveWriter {
    pub fn create(path: impl AsRef<Path>, manifest: ArchiveManifest) -> Result<Self> {
        if manifest.hidden_dim == 0 {
            return Err(StoreError::Corrupt("hidden_dim must be positive".into()));
        }
        let mut manifest = manifest;
        manifest.dtype = ArchiveManifest::DTYPE.to_owned();
        let reserved = {
            let mut widest = manifest.clone();
            widest.record_count = u64::MAX;
            manifest_bytes(&widest)?.len()
        };
        let mut out = BufWriter::new(File::create(path)?);
        manifest.record_count = 0;
        write_header(&mut out, &manifest, reserved)?;
        Ok(Self {
            out,
            manifest,
            reserved,
            written: 0,
        })
    }

    pub fn write(&mut self, r: &HiddenStateRecord) -> Result<()> {
        self.manifest.check(r)?;
        let mut buf = Vec::with_capacity(8 + r.id.len() + 4 * r.vector.len());
        buf.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
        buf.extend_from_slice(r.id.as_bytes());
        buf.push(r.position.code());
        buf.push(r.stream.code());
        buf.extend_from_slice(&r.layer.to_le_bytes());
        for v in &r.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    /// Rewrites the header with the final record count.
    pub fn finish(mut self) -> Result<u64> {
        self.manifest.record_count = self.written;
        self.out.flush()?;
        self.out.seek(SeekFrom::Start(0))?;
        write_header(&mut self.out, &self.manifest, self.reserved)?;
        self.out.flush()?;
        Ok(self.written)
    }
}

fn manifest_bytes(m: &ArchiveManifest) -> Result<Vec<u8>> {
    serde_json::to_vec(m).map_err(|e| StoreError::Corrupt(e.to_string()))
}

fn write_header(out: &mut impl Write, m: &ArchiveManifest, reserved: usize) -> Result<()> {
    let mut json = manifest_bytes(m)?;
    debug_assert!(json.len() <= reserved);
    json.resize(reserved, b' ');
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(reserved as u32).to_le_bytes())?;
    out.write_all(&json)?;
    Ok(())
}

/// Streams `records` into a fresh archive at `path`; returns the count written.
pub fn write_hidden_archive<'a, I>(
    manifest: &ArchiveManifest,
    records: I,
    path: impl AsRef<Path>,
) -> Result<u64>
where
    I: IntoIterator<Item = &'a HiddenStateRecord>,
{
    let mut w = ArchiveWriter::create(path, manifest.clone())?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// Sequential record reader. Yields every record in write order.
pub struct ArchiveReader<R> {
    input: R,
    manifest: ArchiveManifest,
    remaining: u64,
    done: bool,
}

impl ArchiveReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

fn eof_to_truncated(e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        StoreError::TruncatedFile
    } else {
        StoreError::Io(e)
    }
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                StoreError::BadMagic
            } else {
                StoreError::Io(e)
            }
        })?;
        if &magic != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(StoreError::VersionUnsupported(version));
        }
        let len = read_u32(&mut input)? as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(eof_to_truncated)?;
        let manifest: ArchiveManifest = serde_json::from_slice(&json)
            .map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;
        if manifest.dtype != ArchiveManifest::DTYPE {
            return Err(StoreError::Corrupt(format!("dtype {}", manifest.dtype)));
        }
        if manifest.hidden_dim == 0 {
            return Err(StoreError::Corrupt("hidden_dim is zero".into()));
        }
        Ok(Self {
            input,
            remaining: manifest.record_count,
            manifest,
            done: false,
        })
    }

    pub fn manifest(&self) -> &ArchiveManifest {
        &self.manifest
    }

    fn read_record(&mut self) -> Result<HiddenStateRecord> {
        let id_len = read_u16(&mut self.input)? as usize;
        let mut id = vec![0u8; id_len];
        self.input.read_exact(&mut id).map_err(eof_to_truncated)?;
        let id = String::from_utf8(id).map_err(|_| StoreError::Corrupt("id is not UTF-8".into()))?;
        let mut tags = [0u8; 4];
        self.input.read_exact(&mut tags).map_err(eof_to_truncated)?;
        let position = Position::from_code(tags[0])
            .ok_or_else(|| StoreError::Corrupt(format!("position code {}", tags[0])))?;
        let stream = Stream::from_code(tags[1])
            .ok_or_else(|| StoreError::Corrupt(format!("stream code {}", tags[1])))?;
        let layer = u16::from_le_bytes([tags[2], tags[3]]);
        let d = self.manifest.hidden_dim;
        let mut raw = vec![0u8; 4 * d];
        self.input.read_exact(&mut raw).map_err(eof_to_truncated)?;
        let vector = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(HiddenStateRecord {
            id,
            position,
            stream,
            layer,
            vector,
        })
    }
}

impl<R: Read> Iterator for ArchiveReader<R> {
    type Item = Result<HiddenStateRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.remaining == 0 {
            self.done = true;
            let mut probe = [0u8; 1];
            return match self.input.read(&mut probe) {
                Ok(0) => None,
                Ok(_) => Some(Err(StoreError::Corrupt(
                    "trailing bytes after last record".into(),
                ))),
                Err(e) => Some(Err(e.into())),
            };
        }
        self.remaining -= 1;
        let r = self.read_record();
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(eof_to_truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(eof_to_truncated)?;
    Ok(u16::from_le_bytes(b))
}

/// Reads an archive, keeping records that match `filter` in write order.
pub fn read_hidden_archive(
    path: impl AsRef<Path>,
    filter: &ArchiveFilter,
) -> Result<(ArchiveManifest, Vec<HiddenStateRecord>)> {
    let reader = ArchiveReader::open(path)?;
    let manifest = reader.manifest().clone();
    let mut out = Vec::new();
    for r in reader {
        let r = r?;
        if filter.matches(&r) {
            out.push(r);
        }
    }
    Ok((manifest, out))
}
