//! Dataset file ingestion.
//!
//! Three plain-text files describe a graph. Node ids are the 0-based row
//! order of the feature file; the edge and label files reference them.
//!
//! - edge file: one `src<TAB>dst` pair per line, `#` lines are comments
//! - feature file: CSV, row i holds the features of node i, no header
//! - label file: one integer per line, line i labels node i

use super::{FeatureMatrix, GraphError, GraphStore};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Parses edge-file text into (src, dst) pairs. Duplicates are kept here;
/// [`GraphStore::new`] drops them.
pub fn parse_edge_file(text: &str) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (src, dst) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => {
                return Err(GraphError::Malformed {
                    line: i + 1,
                    msg: format!("expected \"src<TAB>dst\", got {raw:?}"),
                })
            }
        };
        let parse = |s: &str| -> Result<usize, GraphError> {
            s.parse().map_err(|_| GraphError::Malformed {
                line: i + 1,
                msg: format!("invalid node id {s:?}"),
            })
        };
        edges.push((parse(src)?, parse(dst)?));
    }
    Ok(edges)
}

/// Parses feature-CSV text. Every row must have the same width.
pub fn parse_feature_file(text: &str) -> Result<FeatureMatrix, GraphError> {
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut count = 0usize;
        for field in raw.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| GraphError::Malformed {
                line: i + 1,
                msg: format!("invalid real {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(GraphError::Malformed {
                    line: i + 1,
                    msg: format!("non-finite feature {field:?}"),
                });
            }
            data.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(GraphError::InconsistentWidth { row: rows, got: count, expected: w })
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(FeatureMatrix::new(rows, width.unwrap_or(0), data))
}

/// Parses label-file text into per-node class ids.
pub fn parse_label_file(text: &str) -> Result<Vec<usize>, GraphError> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let label: usize = line.parse().map_err(|_| GraphError::Malformed {
            line: i + 1,
            msg: format!("invalid label {line:?}"),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

/// Reads the three dataset files and assembles a validated [`GraphStore`].
/// The class count is `max(label) + 1`.
pub fn ingest_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
) -> Result<GraphStore, GraphError> {
    let edges = parse_edge_file(&fs::read_to_string(edge_path)?)?;
    let features = parse_feature_file(&fs::read_to_string(feature_path)?)?;
    let labels = parse_label_file(&fs::read_to_string(label_path)?)?;
    if labels.len() != features.rows {
        return Err(GraphError::CountMismatch { features: features.rows, labels: labels.len() });
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    GraphStore::new(features.rows, edges, features, labels, num_classes)
}

/// Writes a graph back to the three dataset files (`edges.tsv`,
/// `features.csv`, `labels.txt`) under `dir`.
pub fn write_dataset(graph: &GraphStore, dir: &Path) -> Result<(), GraphError> {
    fs::create_dir_all(dir)?;
    let mut ef = fs::File::create(dir.join("edges.tsv"))?;
    for &(s, d) in &graph.edges {
        writeln!(ef, "{s}\t{d}")?;
    }
    let mut ff = fs::File::create(dir.join("features.csv"))?;
    for i in 0..graph.num_nodes {
        let row: Vec<String> = graph.features.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(ff, "{}", row.join(","))?;
    }
    let mut lf = fs::File::create(dir.join("labels.txt"))?;
    for &l in &graph.labels {
        writeln!(lf, "{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("e.tsv"), "# comment\n0\t1\n1\t2\n").unwrap();
        fs::write(dir.path().join("f.csv"), "1.0,0.0\n0.5,0.5\n0.0,1.0\n").unwrap();
        fs::write(dir.path().join("l.txt"), "0\n1\n0\n").unwrap();
        let g = ingest_graph(
            &dir.path().join("e.tsv"),
            &dir.path().join("f.csv"),
            &dir.path().join("l.txt"),
        )
        .unwrap();
        assert_eq!(g.num_nodes, 3);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.feature_dim(), 2);
        assert_eq!(g.num_classes, 2);
    }

    #[test]
    fn duplicate_edge_kept_once() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("e.tsv"), "0\t1\n0\t1\n").unwrap();
        fs::write(dir.path().join("f.csv"), "1\n2\n").unwrap();
        fs::write(dir.path().join("l.txt"), "0\n0\n").unwrap();
        let g = ingest_graph(
            &dir.path().join("e.tsv"),
            &dir.path().join("f.csv"),
            &dir.path().join("l.txt"),
        )
        .unwrap();
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn unknown_node_id_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("e.tsv"), "0\t7\n").unwrap();
        fs::write(dir.path().join("f.csv"), "1\n2\n3\n").unwrap();
        fs::write(dir.path().join("l.txt"), "0\n0\n0\n").unwrap();
        let err = ingest_graph(
            &dir.path().join("e.tsv"),
            &dir.path().join("f.csv"),
            &dir.path().join("l.txt"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown node id"), "{err}");
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_edge_file("0\t1\nnot an edge\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }

    #[test]
    fn inconsistent_width_rejected() {
        let err = parse_feature_file("1.0,2.0\n3.0\n").unwrap_err();
        assert!(matches!(err, GraphError::InconsistentWidth { got: 1, expected: 2, .. }));
    }

    #[test]
    fn dataset_round_trip() {
        let g = GraphStore::new(
            3,
            vec![(0, 1), (2, 2)],
            FeatureMatrix::new(3, 2, vec![0.25, -1.5, 3.0, 0.1, 0.0, 9.75]),
            vec![0, 1, 1],
            2,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        let back = ingest_graph(
            &dir.path().join("edges.tsv"),
            &dir.path().join("features.csv"),
            &dir.path().join("labels.txt"),
        )
        .unwrap();
        assert_eq!(g, back);
    }
}
