//! `index,label` CSV sidecar pairing tiles with class or cluster ids.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub fn labels_to_csv(labels: &[u32]) -> String {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}").unwrap();
    }
    out
}

pub fn save_labels(labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, labels_to_csv(labels)).map_err(|e| Error::io(path, e))
}

/// Reads a labels sidecar. Rows must cover indices `0..n` exactly once, in
/// any order.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<u32>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "index,label" => {}
        _ => return Err(Error::Format("labels CSV must start with header index,label".into())),
    }
    let mut pairs = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::Format(format!("labels CSV row {}: {line:?}", n + 2));
        let (i, l) = line.trim().split_once(',').ok_or_else(bad)?;
        pairs.push((
            i.trim().parse::<usize>().map_err(|_| bad())?,
            l.trim().parse::<u32>().map_err(|_| bad())?,
        ));
    }
    let mut out = vec![None; pairs.len()];
    for (i, l) in pairs {
        match out.get_mut(i) {
            Some(slot @ None) => *slot = Some(l),
            _ => return Err(Error::Format(format!("labels CSV index {i} duplicated or out of range"))),
        }
    }
    Ok(out.into_iter().map(|l| l.unwrap()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let labels = vec![3, 0, 2, 2];
        assert_eq!(parse_labels(&labels_to_csv(&labels)).unwrap(), labels);
    }

    #[test]
    fn rejects_gaps_and_bad_header() {
        assert!(parse_labels("index,label\n0,1\n2,1\n").is_err());
        assert!(parse_labels("i,l\n0,1\n").is_err());
        assert!(parse_labels("index,label\n0,x\n").is_err());
    }
}
