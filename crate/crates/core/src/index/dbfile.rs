//! Database files.
//!
//! Little-endian layout: magic `PNFPIDX1`; `u64` row count, dimension, track count,
//! metadata offset and IVFPQ offset (0 when absent); the `f32` fingerprint matrix; the
//! metadata table (per track: `u32` id length, UTF-8 id, `u64` first row, `u64` segment
//! count; then a `u32` segment index per row); and optionally the IVFPQ section (`u64`
//! n_list, m, ksub, dsub, n_probe, then coarse centroids and codebooks as `f32`, cell
//! assignments as `u32` and codes as `u8`).

use std::path::Path;

use super::db::{FingerprintDB, TrackEntry};
use super::ivfpq::IvfPqIndex;
use crate::error::{Error, Result};

pub const DB_MAGIC: &[u8; 8] = b"PNFPIDX1";
const HEADER: usize = 8 + 5 * 8;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_db(db: &FingerprintDB, ivf: Option<&IvfPqIndex>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + db.data().len() * 4);
    out.extend_from_slice(DB_MAGIC);
    for v in [db.len(), db.dim, db.tracks().len(), 0, 0] {
        put_u64(&mut out, v as u64);
    }
    put_f32s(&mut out, db.data());
    let meta_offset = out.len() as u64;
    for t in db.tracks() {
        out.extend_from_slice(&(t.id.len() as u32).to_le_bytes());
        out.extend_from_slice(t.id.as_bytes());
        put_u64(&mut out, t.first_row as u64);
        put_u64(&mut out, t.n_segments as u64);
    }
    for &s in db.row_segments() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let mut ivf_offset = 0u64;
    if let Some(ix) = ivf {
        ivf_offset = out.len() as u64;
        for v in [ix.n_list, ix.m, ix.ksub, ix.dsub(), ix.n_probe] {
            put_u64(&mut out, v as u64);
        }
        put_f32s(&mut out, &ix.coarse);
        put_f32s(&mut out, &ix.codebooks);
        for &a in &ix.assign {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&ix.codes);
    }
    out[8 + 3 * 8..8 + 4 * 8].copy_from_slice(&meta_offset.to_le_bytes());
    out[8 + 4 * 8..8 + 5 * 8].copy_from_slice(&ivf_offset.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated database file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("count overflows".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflows".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_db(buf: &[u8]) -> Result<(FingerprintDB, Option<IvfPqIndex>)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8).ok() != Some(&DB_MAGIC[..]) {
        return Err(Error::Format("missing PNFPIDX1 magic".into()));
    }
    let (n, dim, n_tracks) = (c.usize()?, c.usize()?, c.usize()?);
    let (meta_offset, ivf_offset) = (c.usize()?, c.usize()?);
    let data = c.f32s(
        n.checked_mul(dim)
            .ok_or_else(|| Error::Format("size overflows".into()))?,
    )?;
    if c.pos != meta_offset {
        return Err(Error::Format("metadata offset mismatch".into()));
    }
    let mut tracks = Vec::with_capacity(n_tracks.min(1 << 20));
    for _ in 0..n_tracks {
        let len = c.u32()? as usize;
        let id = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("track id is not UTF-8".into()))?;
        tracks.push(TrackEntry {
            id,
            first_row: c.usize()?,
            n_segments: c.usize()?,
        });
    }
    let segs = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let db = FingerprintDB::from_parts(dim, data, tracks, segs)?;
    if ivf_offset == 0 {
        return Ok((db, None));
    }
    if c.pos != ivf_offset {
        return Err(Error::Format("index section offset mismatch".into()));
    }
    let (n_list, m, ksub, dsub, n_probe) =
        (c.usize()?, c.usize()?, c.usize()?, c.usize()?, c.usize()?);
    if m == 0 || m * dsub != dim || ksub == 0 || ksub > 256 || n_list == 0 {
        return Err(Error::Format("inconsistent index parameters".into()));
    }
    let coarse = c.f32s(n_list * dim)?;
    let codebooks = c.f32s(m * ksub * dsub)?;
    let assign = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    if assign.iter().any(|&a| a as usize >= n_list) {
        return Err(Error::Format("cell assignment out of range".into()));
    }
    let codes = c.take(n * m)?.to_vec();
    if codes.iter().any(|&k| k as usize >= ksub) {
        return Err(Error::Format("code out of range".into()));
    }
    let ix = IvfPqIndex::assemble(
        dim, n_list, m, ksub, n_probe, coarse, codebooks, assign, codes,
    );
    Ok((db, Some(ix)))
}

pub fn write_db(path: &Path, db: &FingerprintDB, ivf: Option<&IvfPqIndex>) -> Result<()> {
    std::fs::write(path, encode_db(db, ivf)).map_err(|e| Error::io(path, e))
}

pub fn read_db(path: &Path) -> Result<(FingerprintDB, Option<IvfPqIndex>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_db(&buf)
}
