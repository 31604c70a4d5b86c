//! File formats for the preprocessing stage.
//!
//! Input: minute-level CSV with header
//! `participant_id,visit,day,minute,va,ha,ppa,wear`.
//! Outputs: scaled curves as `participant_id,visit,x,y` (1,080 rows per
//! curve) and a JSON summary of exclusions and scaling constants.

use super::{DiurnalCurve, Exclusion, MinuteRecord, ScalingParams, Visit};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub fn read_minute_csv<R: Read>(reader: R) -> Result<Vec<MinuteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers()?;
        let expected = ["participant_id", "visit", "day", "minute", "va", "ha", "ppa", "wear"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::invalid(format!(
                "minute CSV header mismatch: expected {expected:?}, got {got:?}"
            )));
        }
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::invalid(format!("row {line}: missing field {i}")))
        };
        let parse_f = |i: usize| -> Result<f64> {
            field(i)?
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("row {line}: bad number: {e}")))
        };
        let wear = match field(7)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::invalid(format!(
                    "row {line}: wear must be 0 or 1, got `{other}`"
                )))
            }
        };
        let rec = MinuteRecord {
            participant_id: field(0)?.to_string(),
            visit: Visit::parse(field(1)?)?,
            day_index: field(2)?
                .parse::<u32>()
                .map_err(|e| Error::invalid(format!("row {line}: bad day: {e}")))?,
            minute_of_day: field(3)?
                .parse::<u32>()
                .map_err(|e| Error::invalid(format!("row {line}: bad minute: {e}")))?,
            axis_counts: [parse_f(4)?, parse_f(5)?, parse_f(6)?],
            wear,
        };
        rec.validate()?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::invalid("minute CSV contains no data rows"));
    }
    Ok(out)
}

pub fn read_minute_csv_path(path: &Path) -> Result<Vec<MinuteRecord>> {
    let file = std::fs::File::open(path)?;
    read_minute_csv(std::io::BufReader::new(file))
}

pub fn write_minute_csv<W: Write>(mut w: W, records: &[MinuteRecord]) -> Result<()> {
    writeln!(w, "participant_id,visit,day,minute,va,ha,ppa,wear")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.participant_id,
            r.visit,
            r.day_index,
            r.minute_of_day,
            r.axis_counts[0],
            r.axis_counts[1],
            r.axis_counts[2],
            if r.wear { 1 } else { 0 }
        )?;
    }
    Ok(())
}

/// Write scaled curves as `participant_id,visit,x,y` rows.
pub fn write_curves_csv<W: Write>(mut w: W, curves: &[DiurnalCurve]) -> Result<()> {
    writeln!(w, "participant_id,visit,x,y")?;
    for c in curves {
        for (x, y) in c.grid.iter().zip(&c.values) {
            writeln!(w, "{},{},{},{}", c.participant_id, c.visit, x, y)?;
        }
    }
    Ok(())
}

/// Read curves written by [`write_curves_csv`].
pub fn read_curves_csv<R: Read>(reader: R, stage: super::CurveStage) -> Result<Vec<DiurnalCurve>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut acc: Vec<(String, Visit, Vec<f64>, Vec<f64>)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let id = row.get(0).ok_or_else(|| Error::invalid("missing id"))?;
        let visit = Visit::parse(row.get(1).ok_or_else(|| Error::invalid("missing visit"))?)?;
        let x: f64 = row
            .get(2)
            .ok_or_else(|| Error::invalid("missing x"))?
            .parse()
            .map_err(|e| Error::invalid(format!("bad x: {e}")))?;
        let y: f64 = row
            .get(3)
            .ok_or_else(|| Error::invalid("missing y"))?
            .parse()
            .map_err(|e| Error::invalid(format!("bad y: {e}")))?;
        match acc.last_mut() {
            Some((lid, lv, gx, gy)) if *lid == id && *lv == visit => {
                gx.push(x);
                gy.push(y);
            }
            _ => acc.push((id.to_string(), visit, vec![x], vec![y])),
        }
    }
    acc.into_iter()
        .map(|(id, visit, gx, gy)| DiurnalCurve::new(id, visit, gx, gy, stage))
        .collect()
}

/// One excluded participant-visit in the prep summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub participant_id: String,
    pub visit: Visit,
    pub reason: String,
    pub retained_days: usize,
}

/// JSON summary emitted by the prep stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepSummary {
    pub scaling: ScalingParams,
    pub target_df: f64,
    pub achieved_df: f64,
    pub included_participant_visits: usize,
    pub exclusions: Vec<ExclusionRecord>,
}

impl PrepSummary {
    pub fn push_exclusion(&mut self, participant_id: &str, visit: Visit, e: &Exclusion) {
        self.exclusions.push(ExclusionRecord {
            participant_id: participant_id.to_string(),
            visit,
            reason: e.reason.clone(),
            retained_days: e.retained_days,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid;
    use crate::prep::CurveStage;

    #[test]
    fn minute_csv_roundtrip() {
        let records = vec![
            MinuteRecord {
                participant_id: "id1".into(),
                visit: Visit::Baseline,
                day_index: 1,
                minute_of_day: 360,
                axis_counts: [1.5, 2.0, 0.0],
                wear: true,
            },
            MinuteRecord {
                participant_id: "id1".into(),
                visit: Visit::W1,
                day_index: 2,
                minute_of_day: 1439,
                axis_counts: [0.0, 0.0, 0.0],
                wear: false,
            },
        ];
        let mut buf = Vec::new();
        write_minute_csv(&mut buf, &records).unwrap();
        let back = read_minute_csv(buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn minute_csv_rejects_bad_header_and_values() {
        let bad_header = "id,visit,day,minute,va,ha,ppa,wear\n";
        assert!(read_minute_csv(bad_header.as_bytes()).is_err());
        let bad_wear =
            "participant_id,visit,day,minute,va,ha,ppa,wear\np,baseline,1,0,1,1,1,yes\n";
        assert!(read_minute_csv(bad_wear.as_bytes()).is_err());
        let bad_minute =
            "participant_id,visit,day,minute,va,ha,ppa,wear\np,baseline,1,1440,1,1,1,1\n";
        assert!(read_minute_csv(bad_minute.as_bytes()).is_err());
    }

    #[test]
    fn curves_csv_roundtrip() {
        let g = grid::scaled_grid();
        let v: Vec<f64> = g.iter().map(|x| x * 0.25).collect();
        let curve = DiurnalCurve::new("p7", Visit::W2, g, v, CurveStage::Scaled).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, std::slice::from_ref(&curve)).unwrap();
        let back = read_curves_csv(buf.as_slice(), CurveStage::Scaled).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], curve);
    }
}
