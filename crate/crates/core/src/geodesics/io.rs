//! Momenta file formats: CSV, JSON run sidecars, and a compact binary.
//!
//! Binary layout: a 16-byte header (magic `DPA1`, point count as
//! little-endian u32, period as u8, 7 zero pad bytes) followed by the
//! `P x 4` matrix `(x, y, mx, my)` as little-endian f64, row-major.

use super::{KernelConfig, MomentaField, Period};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"DPA1";

/// Write momenta fields as `participant_id,period,point_index,x,y,mx,my`.
pub fn write_momenta_csv<W: Write>(mut w: W, fields: &[MomentaField]) -> Result<()> {
    writeln!(w, "participant_id,period,point_index,x,y,mx,my")?;
    for f in fields {
        for (i, (q, m)) in f.control_points.iter().zip(&f.momenta).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                f.participant_id, f.period, i, q.x, q.y, m.x, m.y
            )?;
        }
    }
    Ok(())
}

/// Read momenta fields written by [`write_momenta_csv`].
pub fn read_momenta_csv<R: Read>(reader: R) -> Result<Vec<MomentaField>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut acc: Vec<(String, Period, Vec<crate::vec2::Vec2>, Vec<crate::vec2::Vec2>)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| -> Result<&str> {
            row.get(i).ok_or_else(|| Error::invalid("short momenta row"))
        };
        let id = get(0)?.to_string();
        let period = Period::from_index(
            get(1)?
                .parse::<u8>()
                .map_err(|e| Error::invalid(format!("bad period: {e}")))?,
        )?;
        let num = |i: usize| -> Result<f64> {
            get(i)?
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad number: {e}")))
        };
        let q = crate::vec2::Vec2::new(num(3)?, num(4)?);
        let m = crate::vec2::Vec2::new(num(5)?, num(6)?);
        match acc.last_mut() {
            Some((lid, lp, qs, ms)) if *lid == id && *lp == period => {
                qs.push(q);
                ms.push(m);
            }
            _ => acc.push((id, period, vec![q], vec![m])),
        }
    }
    acc.into_iter()
        .map(|(id, period, qs, ms)| MomentaField::new(id, period, qs, ms))
        .collect()
}

/// Per-run JSON sidecar describing one matching run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSidecar {
    pub participant_id: String,
    pub period: Period,
    pub config: KernelConfig,
    /// Plain sum of squared momenta.
    pub energy: f64,
    /// Kernel-weighted energy `2 H(q0, p0)`, emitted for comparison.
    pub kernel_energy: f64,
    pub attachment_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn write_momenta_binary<W: Write>(mut w: W, field: &MomentaField) -> Result<()> {
    field.validate()?;
    let p = field.control_points.len();
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&(p as u32).to_le_bytes());
    header[8] = field.period.index();
    w.write_all(&header)?;
    for (q, m) in field.control_points.iter().zip(&field.momenta) {
        for v in [q.x, q.y, m.x, m.y] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_momenta_binary<R: Read>(mut r: R, participant_id: &str) -> Result<MomentaField> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::invalid("bad magic in momenta binary"));
    }
    let p = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let period = Period::from_index(header[8])?;
    if header[9..].iter().any(|&b| b != 0) {
        return Err(Error::invalid("nonzero padding in momenta binary header"));
    }
    let mut buf = vec![0u8; p * 4 * 8];
    r.read_exact(&mut buf)?;
    let mut qs = Vec::with_capacity(p);
    let mut ms = Vec::with_capacity(p);
    for row in 0..p {
        let at = |col: usize| -> f64 {
            let off = (row * 4 + col) * 8;
            f64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
        };
        qs.push(crate::vec2::Vec2::new(at(0), at(1)));
        ms.push(crate::vec2::Vec2::new(at(2), at(3)));
    }
    MomentaField::new(participant_id, period, qs, ms)
}
