//! Plain-text formats.
//!
//! Samples are comma-separated doubles without a header. Graphs are JSON
//! objects `{"d": 3, "edges": [[1, 2], [2, 3]]}` with 1-based labels.
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sing_core::{Matrix, SampleMatrix, UndirectedGraph};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Core { path: PathBuf, source: sing_core::Error },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.into(), source })
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io { path: path.into(), source })
}

/// Parses headerless CSV; blank lines are skipped.
pub fn parse_samples(text: &str, path: &Path) -> Result<SampleMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| IoError::Parse { path: path.into(), line: i + 1, msg: e.to_string() })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(IoError::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    SampleMatrix::from_rows(&rows).map_err(|source| IoError::Core { path: path.into(), source })
}

pub fn read_samples(path: &Path) -> Result<SampleMatrix> {
    parse_samples(&read_string(path)?, path)
}

fn push_row(out: &mut String, row: impl IntoIterator<Item = f64>) {
    for (j, v) in row.into_iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

pub fn format_samples(data: &SampleMatrix) -> String {
    let mut out = String::with_capacity(data.n() * data.d() * 20);
    for row in data.rows() {
        push_row(&mut out, row.iter().copied());
    }
    out
}

pub fn write_samples(path: &Path, data: &SampleMatrix) -> Result<()> {
    write_string(path, &format_samples(data))
}

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        push_row(&mut out, m.row(i).iter().copied());
    }
    out
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_string(path, &format_matrix(m))
}

/// 0/1 adjacency matrix, one row per line.
pub fn format_adjacency(g: &UndirectedGraph) -> String {
    let mut out = String::new();
    for row in g.adjacency() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_adjacency(path: &Path, g: &UndirectedGraph) -> Result<()> {
    write_string(path, &format_adjacency(g))
}

/// On-disk graph layout with 1-based labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub d: usize,
    pub edges: Vec<[usize; 2]>,
}

impl From<&UndirectedGraph> for GraphJson {
    fn from(g: &UndirectedGraph) -> Self {
        GraphJson { d: g.d(), edges: g.to_one_based() }
    }
}

impl GraphJson {
    pub fn to_graph(&self) -> sing_core::Result<UndirectedGraph> {
        UndirectedGraph::from_one_based(self.d, self.edges.iter().map(|e| (e[0], e[1])))
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_string(path, &to_json_pretty(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_string(path)?).map_err(|source| IoError::Json { path: path.into(), source })
}

pub fn write_graph(path: &Path, g: &UndirectedGraph) -> Result<()> {
    write_json(path, &GraphJson::from(g))
}

pub fn read_graph(path: &Path) -> Result<UndirectedGraph> {
    let g: GraphJson = read_json(path)?;
    g.to_graph().map_err(|source| IoError::Core { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip_exactly() {
        let data = SampleMatrix::from_rows(&[[0.1, -2.5e-300], [1.0 / 3.0, 7e22]]).unwrap();
        let text = format_samples(&data);
        assert_eq!(parse_samples(&text, Path::new("x")).unwrap(), data);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_samples("1,2\n3,x\n", Path::new("f.csv")).unwrap_err();
        assert!(err.to_string().starts_with("f.csv:2:"), "{err}");
        let err = parse_samples("1,2\n\n3\n", Path::new("f.csv")).unwrap_err();
        assert!(err.to_string().contains("expected 2 columns"), "{err}");
        assert!(parse_samples("1,nan\n", Path::new("f.csv")).is_err());
    }

    #[test]
    fn graph_json_layout() {
        let g = UndirectedGraph::chain(3);
        let json = serde_json::to_string(&GraphJson::from(&g)).unwrap();
        assert_eq!(json, r#"{"d":3,"edges":[[1,2],[2,3]]}"#);
        let back: GraphJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_graph().unwrap(), g);
        let bad = GraphJson { d: 2, edges: vec![[1, 3]] };
        assert!(bad.to_graph().is_err());
    }

    #[test]
    fn adjacency_text() {
        assert_eq!(format_adjacency(&UndirectedGraph::chain(3)), "0,1,0\n1,0,1\n0,1,0\n");
    }
}
