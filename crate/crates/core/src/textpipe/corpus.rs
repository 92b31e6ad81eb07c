use std::collections::HashMap;
use std::path::Path;

use super::{tokenize, Result, TextError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusLine {
    pub label: usize,
    pub tokens: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| TextError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads `<label><TAB><text>` lines. Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusLine>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| TextError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (label, body) = line.split_once('\t').ok_or_else(|| err("missing TAB separator"))?;
        let label = label.trim().parse().map_err(|_| err("label is not a class index"))?;
        out.push(CorpusLine {
            label,
            tokens: tokenize(body),
        });
    }
    Ok(out)
}

/// Reads `<token> <f1> ... <fD>` lines. All rows must share one width.
pub fn read_embeddings(path: &Path) -> Result<(usize, HashMap<String, Vec<f32>>)> {
    let text = read(path)?;
    let mut dim = None;
    let mut rows = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let err = |msg: String| TextError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let vals = parts
            .map(|p| p.parse::<f32>().map_err(|e| err(format!("bad float {p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(err(format!("expected {d} values, found {}", vals.len())))
            }
            _ => {}
        }
        rows.insert(token.to_string(), vals);
    }
    Ok((dim.unwrap_or(0), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labelled_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        std::fs::write(&p, "1\tHello there, World\n\n0\tbye\n").unwrap();
        let c = read_corpus(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].label, 1);
        assert_eq!(c[0].tokens, vec!["hello", "there", "world"]);
        std::fs::write(&p, "x\tfoo\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(TextError::Parse { line: 1, .. })));
    }

    #[test]
    fn parses_embedding_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "a 1 2\nb 3 4\n").unwrap();
        let (d, rows) = read_embeddings(&p).unwrap();
        assert_eq!(d, 2);
        assert_eq!(rows["b"], vec![3.0, 4.0]);
        std::fs::write(&p, "a 1 2\nb 3\n").unwrap();
        assert!(read_embeddings(&p).is_err());
    }
}
