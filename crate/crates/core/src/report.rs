//! Tab-separated report files, one header row then one record per row.

use std::io::Write;

use crate::bootstrap::{IterationRecord, ThetaPoint};
use crate::error::Result;
use crate::metrics::Scores;

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// `iteration precision recall f1 weak_non_o`, scored on test when present
/// (dev otherwise). When both were evaluated, dev columns are appended.
pub fn write_history<W: Write>(history: &[IterationRecord], mut w: W) -> Result<()> {
    let both = history.iter().any(|r| r.dev.is_some() && r.test.is_some());
    write!(w, "iteration\tprecision\trecall\tf1\tweak_non_o")?;
    if both {
        write!(w, "\tdev_precision\tdev_recall\tdev_f1")?;
    }
    writeln!(w)?;
    for r in history {
        let s = r.scores().unwrap_or_default();
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.index,
            f(s.precision),
            f(s.recall),
            f(s.f1),
            r.weak_non_o_count
        )?;
        if both {
            let d = r.dev.unwrap_or_default();
            write!(w, "\t{}\t{}\t{}", f(d.precision), f(d.recall), f(d.f1))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(points: &[ThetaPoint], mut w: W) -> Result<()> {
    writeln!(w, "theta\tprecision\trecall\tf1\tweak_non_o")?;
    for p in points {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            p.theta,
            f(p.dev.precision),
            f(p.dev.recall),
            f(p.dev.f1),
            p.final_weak_non_o
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Single-record key/value report.
pub fn write_scores<W: Write>(scores: &Scores, mut w: W) -> Result<()> {
    let rec = scores.to_record();
    let keys: Vec<&str> = rec.iter().map(|(k, _)| *k).collect();
    let vals: Vec<&str> = rec.iter().map(|(_, v)| v.as_str()).collect();
    writeln!(w, "{}", keys.join("\t"))?;
    writeln!(w, "{}", vals.join("\t"))?;
    w.flush()?;
    Ok(())
}
