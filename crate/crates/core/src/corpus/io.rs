//! Corpus TSV files: `id \t src \t trg \t provenance`, tokens space-separated.

use std::fmt::Write as _;
use std::path::Path;

use super::ParallelExample;
use crate::error::{Error, Result};

pub fn to_tsv(corpus: &[ParallelExample]) -> String {
    let mut s = String::new();
    for e in corpus {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", e.id, e.src.join(" "), e.trg.join(" "), e.provenance);
    }
    s
}

pub fn write_tsv(path: &Path, corpus: &[ParallelExample]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_tsv(corpus)).map_err(|e| Error::io(path, e))
}

pub fn parse_tsv(text: &str, path: &Path) -> Result<Vec<ParallelExample>> {
    let bad = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {}: {reason}", line + 1),
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad(n, format!("expected 4 columns, found {}", cols.len())));
        }
        let id = cols[0].parse().map_err(|e| bad(n, format!("id: {e}")))?;
        let src: Vec<String> = cols[1].split_whitespace().map(String::from).collect();
        let trg: Vec<String> = cols[2].split_whitespace().map(String::from).collect();
        if src.is_empty() || trg.is_empty() {
            return Err(bad(n, "empty side".into()));
        }
        let provenance = cols[3].parse().map_err(|e| bad(n, e))?;
        out.push(ParallelExample { id, src, trg, provenance });
    }
    Ok(out)
}

pub fn read_tsv(path: &Path) -> Result<Vec<ParallelExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path)
}
