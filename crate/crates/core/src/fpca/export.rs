//! Model export: JSON documents, score CSVs, and the PVE report.

use super::{FpcaModel, MfpcaModel};
use crate::error::{Error, Result};
use crate::geodesics::Period;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// JSON document bundling the per-domain univariate models and the
/// multivariate combination for one period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcaExport {
    pub period: Period,
    pub model_x: FpcaModel,
    pub model_y: FpcaModel,
    pub multivariate: MfpcaModel,
    pub concatenated: FpcaModel,
}

/// Write multivariate scores as `participant_id,period,pc,score`.
pub fn write_scores_csv<W: Write>(mut w: W, exports: &[FpcaExport]) -> Result<()> {
    writeln!(w, "participant_id,period,pc,score")?;
    for e in exports {
        let ids = e
            .multivariate
            .row_ids
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no participant ids"))?;
        for (i, id) in ids.iter().enumerate() {
            for (k, s) in e.multivariate.scores[i].iter().enumerate() {
                writeln!(w, "{},{},{},{}", id, e.period, k + 1, s)?;
            }
        }
    }
    Ok(())
}

/// Render the per-period PVE table (component, PVE% per period).
pub fn pve_table(exports: &[FpcaExport]) -> String {
    let mut out = String::new();
    out.push_str("component");
    for e in exports {
        out.push_str(&format!(",pve_period_{}", e.period));
    }
    out.push('\n');
    let max_l = exports.iter().map(|e| e.multivariate.l).max().unwrap_or(0);
    for l in 0..max_l {
        out.push_str(&format!("PC{}", l + 1));
        for e in exports {
            let m = &e.multivariate;
            if l < m.l {
                let total: f64 = m.spectrum.iter().sum();
                let share = 100.0 * m.eigenvalues[l] / total;
                out.push_str(&format!(",{share:.1}"));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}
