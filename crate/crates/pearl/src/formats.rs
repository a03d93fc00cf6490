//! Line-oriented text formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use pearl_core::embed::{parse_precomputed, EmbedError};
use pearl_core::intent::{IntentRanking, IntentTable};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and a rename so readers never see a
/// half-written artifact.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

/// One JSON value per line; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::format(path, i + 1, e))?);
    }
    if out.is_empty() {
        warn!("{} holds no records", path.display());
    }
    Ok(out)
}

pub fn jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_bytes(path, jsonl(records).as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e))
}

/// `query<TAB>symbols` per line, e.g. `good morning\tomcev`.
pub fn parse_intents(path: &Path, text: &str) -> Result<IntentTable> {
    let mut table = IntentTable::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (query, symbols) =
            line.rsplit_once('\t').ok_or_else(|| Error::format(path, i + 1, "expected query<TAB>ranking"))?;
        let ranking = IntentRanking::from_symbols(symbols.trim()).map_err(|e| Error::format(path, i + 1, e))?;
        table.insert(query, ranking);
    }
    Ok(table)
}

pub fn read_intents(path: &Path) -> Result<IntentTable> {
    let text = read_text(path)?;
    let t = parse_intents(path, &text)?;
    if t.is_empty() {
        warn!("{} holds no intent rankings", path.display());
    }
    Ok(t)
}

pub fn intents_tsv(table: &IntentTable) -> String {
    let mut s = String::new();
    for (q, r) in table.iter() {
        let _ = writeln!(s, "{q}\t{}", r.symbols());
    }
    s
}

pub fn write_intents(path: &Path, table: &IntentTable) -> Result<()> {
    write_bytes(path, intents_tsv(table).as_bytes())
}

pub fn read_embeddings(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let text = read_text(path)?;
    parse_precomputed(&text, dim).map_err(|e| match e {
        EmbedError::Parse { line, message } => Error::format(path, line, message),
        EmbedError::Dimension { line, token, expected, found } => {
            Error::format(path, line, format!("token {token:?} has {found} values, expected {expected}"))
        }
    })
}

pub fn embeddings_text(entries: &[(String, Vec<f64>)]) -> String {
    let mut s = String::new();
    for (t, v) in entries {
        s.push_str(t);
        for x in v {
            // `{:?}` prints the shortest form that parses back exactly.
            let _ = write!(s, " {x:?}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use pearl_core::corpus::Sticker;

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"ocr\":\"\",\"ip\":\"\",\"entity\":\"\",\"style\":\"\",\"meaning\":\"\"}\n\n{bad\n").unwrap();
        match read_jsonl::<Sticker>(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "").unwrap();
        assert!(read_jsonl::<Sticker>(&p).unwrap().is_empty());
    }

    #[test]
    fn intent_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.tsv");
        let mut t = IntentTable::new();
        t.insert("good morning", IntentRanking::from_symbols("omcev").unwrap());
        t.insert("pixel cat", IntentRanking::from_symbols("veocm").unwrap());
        write_intents(&p, &t).unwrap();
        assert_eq!(read_intents(&p).unwrap(), t);
        fs::write(&p, "x\tooooo\n").unwrap();
        assert!(matches!(read_intents(&p), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn embedding_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let entries = vec![("cat".to_string(), vec![0.1, -2.5e-7, 3.0]), ("dog".to_string(), vec![1.0 / 3.0, 0.0, 1.0])];
        write_bytes(&p, embeddings_text(&entries).as_bytes()).unwrap();
        assert_eq!(read_embeddings(&p, 3).unwrap(), entries);
        assert!(matches!(read_embeddings(&p, 4), Err(Error::Format { line: 1, .. })));
    }

    proptest::proptest! {
        #[test]
        fn intents_round_trip(rows in proptest::collection::btree_map("[a-z]{1,8}( [a-z]{1,8}){0,3}", proptest::sample::select(vec!["ocevm", "mvceo", "vcemo", "emocv"]), 0..20)) {
            let mut t = IntentTable::new();
            for (q, r) in &rows {
                t.insert(q, IntentRanking::from_symbols(r).unwrap());
            }
            let back = parse_intents(Path::new("i.tsv"), &intents_tsv(&t)).unwrap();
            proptest::prop_assert_eq!(back, t);
        }

        #[test]
        fn embeddings_round_trip_exactly(rows in proptest::collection::btree_map("[a-z]{1,8}", proptest::collection::vec(proptest::num::f64::NORMAL, 3), 1..10)) {
            let entries: Vec<(String, Vec<f64>)> = rows.into_iter().collect();
            let back = parse_precomputed(&embeddings_text(&entries), 3).unwrap();
            proptest::prop_assert_eq!(back, entries);
        }
    }
}
