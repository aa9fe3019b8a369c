//! CSV and JSON export.

use std::io::Write;
use std::path::Path;

use crate::chain::{BoxLyapunov, ChainClassSet, EdgeKind, TransitionGraph};
use crate::error::{HybridError, Result};
use crate::integrate::ExecutionTrace;
use crate::suspension::SuspensionPoint;

fn io_err<E: std::fmt::Display>(e: E) -> HybridError {
    HybridError::Io(e.to_string())
}

fn coords(x: &[f64], width: usize) -> Vec<String> {
    (0..width).map(|i| x.get(i).map(|v| v.to_string()).unwrap_or_default()).collect()
}

/// Columns `arc_index, t, mode, x0, x1, ...`.
pub fn write_trace_csv<W: Write>(trace: &ExecutionTrace, w: W) -> Result<()> {
    let width = trace.arcs.iter().flatten().map(|(_, s)| s.x.len()).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["arc_index".to_string(), "t".into(), "mode".into()];
    header.extend((0..width).map(|i| format!("x{i}")));
    out.write_record(&header).map_err(io_err)?;
    for (k, arc) in trace.arcs.iter().enumerate() {
        for (t, s) in arc {
            let mut row = vec![k.to_string(), t.to_string(), s.mode.to_string()];
            row.extend(coords(&s.x, width));
            out.write_record(&row).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// Columns `t, variant, mode_or_guard_id, c0, c1, ..., s`; base points leave `s` empty.
pub fn write_suspension_csv<W: Write>(samples: &[(f64, SuspensionPoint)], w: W) -> Result<()> {
    let width = samples.iter().map(|(_, p)| p.footpoint().x.len()).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "variant".into(), "mode_or_guard_id".into()];
    header.extend((0..width).map(|i| format!("c{i}")));
    header.push("s".into());
    out.write_record(&header).map_err(io_err)?;
    for (t, p) in samples {
        let (variant, id, x, s) = match p {
            SuspensionPoint::Base { state } => ("Base", state.mode, &state.x, String::new()),
            SuspensionPoint::Cyl { z, guard, s } => ("Cyl", *guard, &z.x, s.to_string()),
        };
        let mut row = vec![t.to_string(), variant.to_string(), id.to_string()];
        row.extend(coords(x, width));
        row.push(s);
        out.write_record(&row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Columns `src_box, dst_box, kind`.
pub fn write_edges_csv<W: Write>(g: &TransitionGraph, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["src_box", "dst_box", "kind"]).map_err(io_err)?;
    for (a, b, k) in &g.edges {
        let kind = match k {
            EdgeKind::Flow => "flow",
            EdgeKind::Reset => "reset",
        };
        out.write_record([a.to_string(), b.to_string(), kind.to_string()]).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// One row per box: bounds, recurrence, SCC and box Lyapunov value.
pub fn write_boxes_csv<W: Write>(g: &TransitionGraph, classes: &ChainClassSet, lyap: &BoxLyapunov, w: W) -> Result<()> {
    let width = g.grid.modes.iter().map(|m| m.lo.len()).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["box".to_string(), "mode".into()];
    for i in 0..width {
        header.push(format!("lo{i}"));
        header.push(format!("hi{i}"));
    }
    header.extend(["recurrent", "scc", "level", "value"].map(String::from));
    out.write_record(&header).map_err(io_err)?;
    for b in 0..g.len() {
        let mut row = vec![b.to_string(), g.grid.boxes[b].mode.to_string()];
        let bounds = g.grid.bounds(b);
        for i in 0..width {
            match bounds.get(i) {
                Some((lo, hi)) => {
                    row.push(lo.to_string());
                    row.push(hi.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(classes.is_recurrent(b).to_string());
        row.push(classes.scc_of[b].to_string());
        row.push(lyap.node_level(b).to_string());
        row.push(lyap.value(b).to_string());
        out.write_record(&row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(io_err)?;
    std::fs::write(path, s + "\n").map_err(io_err)
}

pub fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?))
}
