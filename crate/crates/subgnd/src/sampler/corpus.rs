//! Plain-text cache for a sampled corpus.
//!
//! Layout: a header line `num_subgraphs feature_dim`, then per subgraph a
//! record header `ego_orig_id label num_nodes num_edges`, `num_nodes` node
//! lines (`orig_id f_1 .. f_d`), and `num_edges` edge lines (`src dst` in
//! local indices). Subgraphs appear node-major, the two dual samples of a
//! node consecutively. Floats are written with Rust's shortest round-trip
//! formatting, so read(write(c)) == c exactly.

use super::{InducedSubgraph, SampledNode, SamplerError, SubgraphCorpus};
use crate::graph::FeatureMatrix;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_corpus_string(corpus: &SubgraphCorpus) -> String {
    let mut out = String::new();
    let total = corpus.items.len() * 2;
    writeln!(out, "{} {}", total, corpus.feature_dim).unwrap();
    for item in &corpus.items {
        for sub in &item.samples {
            write_record(&mut out, sub);
        }
    }
    out
}

fn write_record(out: &mut String, sub: &InducedSubgraph) {
    writeln!(
        out,
        "{} {} {} {}",
        sub.orig_ids[0],
        sub.label,
        sub.num_nodes(),
        sub.local_edges.len()
    )
    .unwrap();
    for (i, &id) in sub.orig_ids.iter().enumerate() {
        write!(out, "{id}").unwrap();
        for x in sub.features.row(i) {
            write!(out, " {x}").unwrap();
        }
        out.push('\n');
    }
    for &(s, d) in &sub.local_edges {
        writeln!(out, "{s} {d}").unwrap();
    }
}

pub fn write_corpus(path: &Path, corpus: &SubgraphCorpus) -> Result<(), SamplerError> {
    std::fs::write(path, write_corpus_string(corpus))?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<SubgraphCorpus, SamplerError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, SamplerError> {
        loop {
            let line = self.inner.next().ok_or(SamplerError::Corpus {
                line: self.line_no + 1,
                msg: "unexpected end of file".into(),
            })?;
            self.line_no += 1;
            if !line.trim().is_empty() {
                return Ok(line);
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> SamplerError {
        SamplerError::Corpus { line: self.line_no, msg: msg.into() }
    }
}

fn parse_usize(lines: &Lines, tok: &str, what: &str) -> Result<usize, SamplerError> {
    tok.parse().map_err(|_| lines.err(format!("bad {what}: {tok:?}")))
}

/// Parses corpus text. Never panics on malformed input; counts are checked
/// against the lines actually present rather than trusted for allocation.
pub fn parse_corpus(text: &str) -> Result<SubgraphCorpus, SamplerError> {
    let mut lines = Lines { inner: text.lines(), line_no: 0 };
    let header = lines.next()?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(lines.err("header must be `num_subgraphs feature_dim`"));
    }
    let total = parse_usize(&lines, toks[0], "subgraph count")?;
    let dim = parse_usize(&lines, toks[1], "feature dim")?;
    if total % 2 != 0 {
        return Err(lines.err("subgraph count must be even (two samples per node)"));
    }
    let mut items = Vec::new();
    for _ in 0..total / 2 {
        let a = parse_record(&mut lines, dim)?;
        let b = parse_record(&mut lines, dim)?;
        if a.orig_ids[0] != b.orig_ids[0] {
            return Err(lines.err(format!(
                "dual samples disagree on ego: {} vs {}",
                a.orig_ids[0], b.orig_ids[0]
            )));
        }
        if a.label != b.label {
            return Err(lines.err("dual samples disagree on label"));
        }
        let ego = a.orig_ids[0];
        items.push(SampledNode { ego, samples: [a, b] });
    }
    if let Some(extra) = lines.inner.find(|l| !l.trim().is_empty()) {
        return Err(SamplerError::Corpus {
            line: lines.line_no + 1,
            msg: format!("trailing content after last record: {extra:?}"),
        });
    }
    Ok(SubgraphCorpus { feature_dim: dim, items })
}

fn parse_record(lines: &mut Lines, dim: usize) -> Result<InducedSubgraph, SamplerError> {
    let head = lines.next()?;
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(lines.err("record header must be `ego label num_nodes num_edges`"));
    }
    let ego = parse_usize(lines, toks[0], "ego id")?;
    let label = parse_usize(lines, toks[1], "label")?;
    let n = parse_usize(lines, toks[2], "node count")?;
    let m = parse_usize(lines, toks[3], "edge count")?;
    if n == 0 {
        return Err(lines.err("record must contain at least the ego node"));
    }
    let mut orig_ids = Vec::new();
    let mut data = Vec::new();
    for i in 0..n {
        let line = lines.next()?;
        let mut toks = line.split_whitespace();
        let id_tok = toks.next().ok_or_else(|| lines.err("empty node line"))?;
        let id = parse_usize(lines, id_tok, "node id")?;
        if i == 0 && id != ego {
            return Err(lines.err(format!("first node {id} does not match ego {ego}")));
        }
        orig_ids.push(id);
        let mut count = 0usize;
        for tok in toks {
            let x: f64 =
                tok.parse().map_err(|_| lines.err(format!("bad feature value: {tok:?}")))?;
            data.push(x);
            count += 1;
        }
        if count != dim {
            return Err(lines.err(format!("expected {dim} features, found {count}")));
        }
    }
    let mut local_edges = Vec::new();
    for _ in 0..m {
        let line = lines.next()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(lines.err("edge line must be `src dst`"));
        }
        let s = parse_usize(lines, toks[0], "edge src")?;
        let d = parse_usize(lines, toks[1], "edge dst")?;
        if s >= n || d >= n {
            return Err(lines.err(format!("edge ({s}, {d}) out of range for {n} nodes")));
        }
        local_edges.push((s, d));
    }
    let sub = InducedSubgraph {
        orig_ids,
        local_edges,
        features: FeatureMatrix::new(n, dim, data),
        label,
        ego_local: 0,
    };
    sub.check_invariants().map_err(|msg| lines.err(msg))?;
    Ok(sub)
}
