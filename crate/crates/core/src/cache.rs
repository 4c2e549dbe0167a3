//! Compact binary container for spike-record ensembles.
//!
//! Layout: magic, JSON metadata blob (caller-defined; typically the resolved
//! config hash, labels and split), then fixed-width per-neuron records.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::spikes::SpikeRecord;

const MAGIC: &[u8; 8] = b"SPKC0001";

pub fn write_records<W: Write>(mut w: W, records: &[SpikeRecord], meta: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u64::<LittleEndian>(meta.len() as u64)?;
    w.write_all(meta.as_bytes())?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    for record in records {
        w.write_u32::<LittleEndian>(record.stimulus_onset)?;
        w.write_u64::<LittleEndian>(record.len() as u64)?;
        for i in 0..record.len() {
            match (record.first_spike_time[i], record.amplitude[i]) {
                (Some(t), Some(a)) => {
                    w.write_i64::<LittleEndian>(t as i64)?;
                    w.write_f64::<LittleEndian>(a)?;
                }
                _ => {
                    w.write_i64::<LittleEndian>(-1)?;
                    w.write_f64::<LittleEndian>(0.0)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_records<R: Read>(mut r: R) -> Result<(Vec<SpikeRecord>, String)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated cache header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad cache magic".into()));
    }
    let meta_len = r.read_u64::<LittleEndian>()? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)
        .map_err(|_| Error::Format("truncated cache metadata".into()))?;
    let meta = String::from_utf8(meta).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let onset = r.read_u32::<LittleEndian>()?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let mut first = Vec::with_capacity(n);
        let mut amplitude = Vec::with_capacity(n);
        for _ in 0..n {
            let t = r.read_i64::<LittleEndian>()?;
            let a = r.read_f64::<LittleEndian>()?;
            if t < 0 {
                first.push(None);
                amplitude.push(None);
            } else {
                first.push(Some(t as u32));
                amplitude.push(Some(a));
            }
        }
        records.push(SpikeRecord {
            stimulus_onset: onset,
            first_spike_time: first,
            amplitude,
        });
    }
    Ok((records, meta))
}
