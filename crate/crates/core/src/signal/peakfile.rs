//! Peak cloud files.
//!
//! Binary layout (little-endian): the 8-byte magic `PKFP0001`, then one record per segment:
//! `u32` track-id byte length, UTF-8 track id, `u32` segment index and
//! [`CLOUD_SIZE`] `(t, f, a)` triples of `f32`. The JSON-lines export carries the same fields.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::peaks::{Peak, PeakCloud, CLOUD_SIZE};
use crate::error::{Error, Result};

pub const PEAK_MAGIC: &[u8; 8] = b"PKFP0001";

pub fn write_peaks<W: Write>(mut w: W, clouds: &[PeakCloud]) -> Result<()> {
    w.write_all(PEAK_MAGIC)?;
    for cloud in clouds {
        if cloud.peaks.len() != CLOUD_SIZE {
            return Err(Error::Contract(format!(
                "peak file records hold {CLOUD_SIZE} peaks, cloud has {}",
                cloud.peaks.len()
            )));
        }
        let id = cloud.track_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&cloud.segment_index.to_le_bytes())?;
        for p in &cloud.peaks {
            for c in p.coords() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(Error::Format("truncated peak record".into())),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_peaks<R: Read>(mut r: R) -> Result<Vec<PeakCloud>> {
    let mut magic = [0u8; 8];
    if !read_exact_or_eof(&mut r, &mut magic)? || &magic != PEAK_MAGIC {
        return Err(Error::Format("missing PKFP0001 magic".into()));
    }
    let mut clouds = Vec::new();
    let mut word = [0u8; 4];
    while read_exact_or_eof(&mut r, &mut word)? {
        let id_len = u32::from_le_bytes(word) as usize;
        if id_len > 1 << 20 {
            return Err(Error::Format(format!(
                "implausible track id length {id_len}"
            )));
        }
        let mut id = vec![0u8; id_len];
        let mut payload = vec![0u8; 4 + CLOUD_SIZE * 12];
        if !read_exact_or_eof(&mut r, &mut id)? || !read_exact_or_eof(&mut r, &mut payload)? {
            return Err(Error::Format("truncated peak record".into()));
        }
        let track_id =
            String::from_utf8(id).map_err(|_| Error::Format("track id is not UTF-8".into()))?;
        let f = |i: usize| f32::from_le_bytes(payload[i..i + 4].try_into().unwrap());
        let segment_index = u32::from_le_bytes(payload[..4].try_into().unwrap());
        let peaks = (0..CLOUD_SIZE)
            .map(|k| {
                let o = 4 + k * 12;
                Peak::new(f(o), f(o + 4), f(o + 8))
            })
            .collect();
        clouds.push(PeakCloud {
            peaks,
            track_id,
            segment_index,
        });
    }
    Ok(clouds)
}

#[derive(Serialize, Deserialize)]
struct CloudRecord {
    track_id: String,
    segment_index: u32,
    peaks: Vec<[f32; 3]>,
}

/// Line-delimited JSON export, one cloud per line.
pub fn write_peaks_jsonl<W: Write>(mut w: W, clouds: &[PeakCloud]) -> Result<()> {
    for cloud in clouds {
        let rec = CloudRecord {
            track_id: cloud.track_id.clone(),
            segment_index: cloud.segment_index,
            peaks: cloud.peaks.iter().map(Peak::coords).collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_peaks_jsonl<R: BufRead>(r: R) -> Result<Vec<PeakCloud>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let rec: CloudRecord =
                serde_json::from_str(&line?).map_err(|e| Error::Format(e.to_string()))?;
            Ok(PeakCloud {
                peaks: rec
                    .peaks
                    .iter()
                    .map(|c| Peak::new(c[0], c[1], c[2]))
                    .collect(),
                track_id: rec.track_id,
                segment_index: rec.segment_index,
            })
        })
        .collect()
}
