use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{align, paired_t_test, MetricsReport};
use crate::{Error, Result};

/// `method,mrr,p1,p5,r5,n` with six decimals.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[(String, MetricsReport)]) -> std::io::Result<()> {
    writeln!(w, "method,mrr,p1,p5,r5,n")?;
    for (name, r) in rows {
        writeln!(
            w,
            "{name},{:.6},{:.6},{:.6},{:.6},{}",
            r.mrr, r.p_at_1, r.p_at_5, r.recall_at_5, r.n_queries
        )?;
    }
    w.flush()
}

/// `query_id,rank,rr`, one line per query in id order.
pub fn write_per_query<W: Write>(mut w: W, r: &MetricsReport) -> std::io::Result<()> {
    writeln!(w, "query_id,rank,rr")?;
    for (q, rank) in &r.ranks {
        writeln!(w, "{q},{rank},{:?}", 1.0 / *rank as f64)?;
    }
    w.flush()
}

pub fn read_per_query<R: BufRead>(r: R, origin: &str) -> Result<MetricsReport> {
    let mut ranks = BTreeMap::new();
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: "expected query_id,rank,rr".into(),
        };
        let mut f = line.split(',');
        let q = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let rank = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        ranks.insert(q, rank);
    }
    MetricsReport::from_ranks(ranks)
}

/// Plain-text comparison table. With a reference row, each other row also
/// shows the paired t-test p-value of its per-query reciprocal ranks
/// against the reference, and `*` marks p < 0.05.
pub fn render_table(rows: &[(String, MetricsReport)], reference: Option<usize>) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}", "Method", "MRR", "P@1", "P@5", "R@5");
    if reference.is_some() {
        let _ = write!(out, "  {:>9}", "p(MRR)");
    }
    out.push('\n');
    for (i, (name, r)) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "{name:<width$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}",
            r.mrr, r.p_at_1, r.p_at_5, r.recall_at_5
        );
        if let Some(k) = reference {
            if i == k {
                let _ = write!(out, "  {:>9}", "-");
            } else {
                let (a, b) = align(&r.per_query, &rows[k].1.per_query);
                match paired_t_test(&a, &b) {
                    Ok(p) => {
                        let mark = if p < 0.05 { "*" } else { " " };
                        let _ = write!(out, "  {p:>8.4}{mark}");
                    }
                    Err(_) => {
                        let _ = write!(out, "  {:>9}", "n/a");
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}
