//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `PACNET01`, an 8-byte little-endian header length,
//! a JSON header (network spec, layout, mask presence, absolute byte
//! offsets), the flat parameter vector as little-endian 64-bit floats, and
//! optionally the mask as one byte per entry. Round-trips are bit-exact for
//! `f64` parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layout, NetworkSpec, ParamKind, ParamVector};
use crate::real::{lit, Real};
use crate::transfer::PruneMask;

const MAGIC: &[u8; 8] = b"PACNET01";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    layout: Layout,
    has_mask: bool,
    param_offset: u64,
    param_count: u64,
    mask_offset: u64,
}

/// Contents of a checkpoint file.
pub struct Checkpoint<T> {
    pub spec: NetworkSpec,
    pub params: ParamVector<T>,
    pub mask: Option<PruneMask>,
}

pub fn save<T: Real>(
    path: &Path,
    spec: &NetworkSpec,
    params: &ParamVector<T>,
    mask: Option<&PruneMask>,
) -> Result<()> {
    if params.layout.total_len != params.data.len() {
        return Err(Error::Checkpoint("layout/data length mismatch".into()));
    }
    if let Some(m) = mask {
        if m.len() != params.data.len() {
            return Err(Error::Checkpoint("mask length mismatch".into()));
        }
    }
    // The header states absolute offsets, and the offsets' decimal width
    // feeds back into the header length. Iterate to a fixed point, padding
    // with trailing whitespace if the serialized form comes up short.
    let param_count = params.data.len() as u64;
    let make = |assumed_len: usize| -> Result<Vec<u8>> {
        let h = Header {
            spec: spec.clone(),
            layout: params.layout.clone(),
            has_mask: mask.is_some(),
            param_offset: (16 + assumed_len) as u64,
            param_count,
            mask_offset: (16 + assumed_len) as u64 + 8 * param_count,
        };
        Ok(serde_json::to_vec(&h)?)
    };
    let mut assumed_len = make(0)?.len();
    let bytes = loop {
        let b = make(assumed_len)?;
        match b.len().cmp(&assumed_len) {
            std::cmp::Ordering::Equal => break b,
            std::cmp::Ordering::Less => {
                let mut padded = b;
                padded.resize(assumed_len, b' ');
                break padded;
            }
            std::cmp::Ordering::Greater => assumed_len = b.len(),
        }
    };
    let final_len = bytes.len() as u64;

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&final_len.to_le_bytes())?;
    w.write_all(&bytes)?;
    for &x in &params.data {
        let v = x.to_f64().ok_or_else(|| {
            Error::Checkpoint("parameter not representable as f64".into())
        })?;
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(m) = mask {
        let bytes: Vec<u8> = m.bits().iter().map(|&b| b as u8).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.param_offset != (16 + header_len) as u64 {
        return Err(Error::Checkpoint("inconsistent parameter offset".into()));
    }
    if header.layout.total_len as u64 != header.param_count {
        return Err(Error::Checkpoint("layout does not match payload size".into()));
    }

    let mut data = Vec::with_capacity(header.param_count as usize);
    let mut buf = [0u8; 8];
    for _ in 0..header.param_count {
        r.read_exact(&mut buf)?;
        data.push(lit::<T>(f64::from_le_bytes(buf)));
    }
    let params = ParamVector {
        data,
        layout: header.layout.clone(),
    };
    let mask = if header.has_mask {
        let mut mbytes = vec![0u8; header.param_count as usize];
        r.read_exact(&mut mbytes)?;
        let bits: Vec<bool> = mbytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Checkpoint(format!("bad mask byte {other}"))),
            })
            .collect::<Result<_>>()?;
        let is_bias = header.layout.is_bias();
        let kept_weights = bits
            .iter()
            .zip(&is_bias)
            .filter(|&(&b, &bias)| b && !bias)
            .count();
        Some(PruneMask::from_bits(bits, kept_weights))
    } else {
        None
    };
    Ok(Checkpoint {
        spec: header.spec,
        params,
        mask,
    })
}

/// Weight entries in a layout (used to sanity-check masks against layouts).
pub fn weight_count(layout: &Layout) -> usize {
    layout
        .entries
        .iter()
        .filter(|e| e.kind == ParamKind::Weight)
        .map(|e| e.len)
        .sum()
}
