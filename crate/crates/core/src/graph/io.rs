//! Text graph format used for plug-and-play export:
//!
//! ```text
//! n=<count> stage=<tag>
//! src<TAB>dst<TAB>weight
//! ```
//!
//! Weights carry 17 significant digits, enough to round-trip any `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GraphError, Result, SparseGraph, Stage};

pub fn write_graph<W: Write>(g: &SparseGraph, mut w: W) -> Result<()> {
    writeln!(w, "n={} stage={}", g.n(), g.stage())?;
    for (src, dst, weight) in g.edges() {
        writeln!(w, "{src}\t{dst}\t{weight:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Option<(usize, Stage)> {
    let mut n = None;
    let mut stage = None;
    for field in line.split_whitespace() {
        match field.split_once('=')? {
            ("n", v) => n = v.parse().ok(),
            ("stage", v) => stage = v.parse().ok(),
            _ => return None,
        }
    }
    Some((n?, stage?))
}

pub fn read_graph<R: Read>(r: R) -> Result<SparseGraph> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose()?.ok_or(GraphError::ParseError {
        line: 1,
        reason: "missing header".into(),
    })?;
    let (n, stage) = parse_header(header.trim()).ok_or_else(|| GraphError::ParseError {
        line: 1,
        reason: format!("bad header {header:?}"),
    })?;
    let mut rows = vec![Vec::new(); n];
    let mut line_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| GraphError::ParseError {
            line: line_no,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err("expected src<TAB>dst<TAB>weight"));
        }
        let src: usize = fields[0].parse().map_err(|_| err("bad source index"))?;
        let dst: usize = fields[1].parse().map_err(|_| err("bad destination index"))?;
        let w: f64 = fields[2].trim().parse().map_err(|_| err("bad weight"))?;
        if src >= n || dst >= n {
            return Err(err("index out of range"));
        }
        rows[src].push((dst, w));
        line_of[src].push(line_no);
    }
    SparseGraph::from_rows(n, stage, rows).map_err(|e| match e {
        GraphError::InvalidEdge { src, dst, reason } => {
            let line = line_of
                .get(src)
                .and_then(|ls| ls.last().copied())
                .unwrap_or(0);
            GraphError::ParseError {
                line,
                reason: format!("edge ({src},{dst}): {reason}"),
            }
        }
        other => other,
    })
}

pub fn export_graph(g: &SparseGraph, path: &Path) -> Result<()> {
    write_graph(g, BufWriter::new(File::create(path)?))
}

pub fn import_graph(path: &Path) -> Result<SparseGraph> {
    read_graph(File::open(path)?)
}
