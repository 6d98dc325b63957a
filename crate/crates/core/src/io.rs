//! Text and JSON file formats.
//!
//! Every format is line based, uses `l:k` interval labels, skips blank lines
//! and lines starting with `#`.
//!
//! * operator: header `N <int>`, then `row=l:k col=l:k value=<x>`; the value
//!   is the bilinear form `<T h_col, h_row>`, omitted entries are 0;
//! * collection: `target=l:k member=l':k'`, with optional `n <int>` and
//!   `N <int>` headers;
//! * signs: `l:k +1` or `l:k -1`, optional `N <int>` header, omitted
//!   coordinates are `+1`;
//! * vector: `l:k <value>`, optional `N <int>` header.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::block::{BlockCollection, SignAssignment};
use crate::dyadic::{dimension, DyadicInterval};
use crate::error::{Error, Result};
use crate::haar::HaarVector;
use crate::operators::{HaarMap, HaarOperator};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn label(line: usize, s: &str) -> Result<DyadicInterval> {
    s.parse().map_err(|e: Error| match e {
        Error::Parse { message, .. } => parse_err(line, message),
        other => parse_err(line, other.to_string()),
    })
}

/// `key value` header lines such as `N 8`.
fn header(line: usize, l: &str, key: &str) -> Result<Option<u32>> {
    let mut parts = l.split_whitespace();
    if parts.next() != Some(key) {
        return Ok(None);
    }
    let v = parts.next().ok_or_else(|| parse_err(line, format!("`{key}` needs a value")))?;
    if parts.next().is_some() {
        return Err(parse_err(line, format!("trailing input after `{key} {v}`")));
    }
    v.parse().map(Some).map_err(|_| parse_err(line, format!("bad integer `{v}`")))
}

/// `key=value` fields of one line.
fn fields<'a>(line: usize, l: &'a str, keys: &[&str]) -> Result<Vec<&'a str>> {
    let mut out = vec![None; keys.len()];
    for tok in l.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| parse_err(line, format!("expected key=value, got `{tok}`")))?;
        let slot = keys.iter().position(|x| *x == k).ok_or_else(|| parse_err(line, format!("unknown key `{k}`")))?;
        if out[slot].replace(v).is_some() {
            return Err(parse_err(line, format!("duplicate key `{k}`")));
        }
    }
    out.into_iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| parse_err(line, format!("missing `{k}=`"))))
        .collect()
}

fn number(line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| parse_err(line, format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value `{s}`")));
    }
    Ok(v)
}

fn check_within(line: usize, i: DyadicInterval, level: u32) -> Result<()> {
    if i.level() > level {
        return Err(parse_err(line, format!("interval {i} is finer than level {level}")));
    }
    Ok(())
}

/// One stored entry `<T h_col, h_row> = value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormEntry {
    pub row: DyadicInterval,
    pub col: DyadicInterval,
    pub value: f64,
}

/// JSON form of an operator file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorFile {
    #[serde(rename = "N")]
    pub level: u32,
    pub entries: Vec<FormEntry>,
}

impl OperatorFile {
    pub fn from_operator(t: &HaarOperator) -> Self {
        Self { level: t.level(), entries: nonzero_entries(t.form()) }
    }

    pub fn to_operator(&self) -> Result<HaarOperator> {
        let mut t = HaarOperator::zeros(self.level)?;
        for e in &self.entries {
            if e.row.level() > self.level || e.col.level() > self.level {
                return Err(Error::DimensionMismatch(format!("entry ({}, {}) outside level {}", e.row, e.col, self.level)));
            }
            t.set_entry(e.row, e.col, e.value)?;
        }
        Ok(t)
    }
}

fn nonzero_entries(g: &DMatrix<f64>) -> Vec<FormEntry> {
    let mut out = Vec::new();
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            let value = g[(r, c)];
            if value != 0.0 {
                out.push(FormEntry { row: DyadicInterval::from_index(r), col: DyadicInterval::from_index(c), value });
            }
        }
    }
    out
}

pub fn parse_operator_text(text: &str) -> Result<HaarOperator> {
    let mut it = lines(text);
    let (line, first) = it.next().ok_or_else(|| parse_err(1, "empty operator file"))?;
    let level = header(line, first, "N")?.ok_or_else(|| parse_err(line, "expected header `N <int>`"))?;
    let mut t = HaarOperator::zeros(level)?;
    for (line, l) in it {
        let f = fields(line, l, &["row", "col", "value"])?;
        let (row, col) = (label(line, f[0])?, label(line, f[1])?);
        check_within(line, row, level)?;
        check_within(line, col, level)?;
        t.set_entry(row, col, number(line, f[2])?)?;
    }
    Ok(t)
}

/// Text form; values use Rust's shortest round-trip formatting.
pub fn operator_to_text(t: &HaarOperator) -> String {
    let mut s = format!("N {}\n", t.level());
    for e in nonzero_entries(t.form()) {
        let _ = writeln!(s, "row={} col={} value={:?}", e.row, e.col, e.value);
    }
    s
}

/// Parses either format; JSON is recognized by a leading `{`.
pub fn parse_operator(text: &str) -> Result<HaarOperator> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str::<OperatorFile>(text)?.to_operator()
    } else {
        parse_operator_text(text)
    }
}

pub fn read_operator(path: &Path) -> Result<HaarOperator> {
    parse_operator(&std::fs::read_to_string(path)?)
}

/// A map `W_domain -> W_codomain` stored like an operator file: each entry
/// is `<E h_col, h_row>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub domain: u32,
    pub codomain: u32,
    pub entries: Vec<FormEntry>,
}

impl MapFile {
    pub fn from_map(m: &HaarMap) -> Self {
        Self { domain: m.domain, codomain: m.codomain, entries: nonzero_entries(&m.bilinear_form()) }
    }

    pub fn to_map(&self) -> Result<HaarMap> {
        let mut c = DMatrix::zeros(dimension(self.codomain), dimension(self.domain));
        for e in &self.entries {
            if e.row.level() > self.codomain || e.col.level() > self.domain {
                return Err(Error::DimensionMismatch(format!("entry ({}, {}) outside the map's levels", e.row, e.col)));
            }
            c[(e.row.index(), e.col.index())] = e.value / e.row.measure_f64();
        }
        HaarMap::new(self.domain, self.codomain, c)
    }
}

/// SHA-256 over the level and the little-endian bits of the form.
pub fn operator_hash(t: &HaarOperator) -> String {
    let mut h = Sha256::new();
    h.update(t.level().to_le_bytes());
    for v in t.form().iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn parse_collection(text: &str) -> Result<BlockCollection> {
    let (mut n, mut host) = (None, None);
    let mut pairs = Vec::new();
    for (line, l) in lines(text) {
        if let Some(v) = header(line, l, "n")? {
            n = Some(v);
            continue;
        }
        if let Some(v) = header(line, l, "N")? {
            host = Some(v);
            continue;
        }
        let f = fields(line, l, &["target", "member"])?;
        pairs.push((label(line, f[0])?, label(line, f[1])?));
    }
    if pairs.is_empty() {
        return Err(parse_err(1, "collection file has no entries"));
    }
    let n = n.unwrap_or_else(|| pairs.iter().map(|p| p.0.level()).max().unwrap_or(0));
    let host = host.unwrap_or_else(|| pairs.iter().map(|p| p.1.level()).max().unwrap_or(0));
    BlockCollection::from_pairs(n, host, &pairs)
}

pub fn collection_to_text(c: &BlockCollection) -> String {
    let mut s = format!("n {}\nN {}\n", c.target_level(), c.host_level());
    for (i, k) in c.pairs() {
        let _ = writeln!(s, "target={i} member={k}");
    }
    s
}

pub fn parse_signs(text: &str) -> Result<SignAssignment> {
    let mut level = None;
    let mut entries = Vec::new();
    for (line, l) in lines(text) {
        if let Some(v) = header(line, l, "N")? {
            level = Some(v);
            continue;
        }
        let mut parts = l.split_whitespace();
        let (Some(k), Some(s), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(line, "expected `l:k +1` or `l:k -1`"));
        };
        let sign = match s {
            "+1" | "1" => 1,
            "-1" => -1,
            _ => return Err(parse_err(line, format!("sign must be +1 or -1, got `{s}`"))),
        };
        entries.push((line, label(line, k)?, sign));
    }
    let level = level.unwrap_or_else(|| entries.iter().map(|e| e.1.level()).max().unwrap_or(0));
    let mut theta = SignAssignment::all_plus(level)?;
    for (line, k, sign) in entries {
        check_within(line, k, level)?;
        theta.set(k, sign)?;
    }
    Ok(theta)
}

pub fn signs_to_text(theta: &SignAssignment) -> String {
    let mut s = format!("N {}\n", theta.level());
    for (i, &v) in theta.signs().iter().enumerate() {
        let _ = writeln!(s, "{} {}", DyadicInterval::from_index(i), if v > 0 { "+1" } else { "-1" });
    }
    s
}

pub fn parse_vector(text: &str) -> Result<HaarVector> {
    let mut level = None;
    let mut terms = Vec::new();
    for (line, l) in lines(text) {
        if let Some(v) = header(line, l, "N")? {
            level = Some(v);
            continue;
        }
        let mut parts = l.split_whitespace();
        let (Some(k), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(line, "expected `l:k value`"));
        };
        terms.push((line, label(line, k)?, number(line, v)?));
    }
    let level = level.unwrap_or_else(|| terms.iter().map(|t| t.1.level()).max().unwrap_or(0));
    let mut f = HaarVector::zeros(level)?;
    for (line, k, v) in terms {
        check_within(line, k, level)?;
        f.set(k, v)?;
    }
    Ok(f)
}

pub fn vector_to_text(f: &HaarVector) -> String {
    let mut s = format!("N {}\n", f.level());
    for (k, v) in f.terms() {
        let _ = writeln!(s, "{k} {v:?}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::gamlen_gaudet;

    #[test]
    fn operator_round_trips() {
        let mut t = HaarOperator::identity(2).unwrap();
        t.set_entry("1:0".parse().unwrap(), "2:3".parse().unwrap(), -0.1).unwrap();
        let text = operator_to_text(&t);
        assert!(text.starts_with("N 2\n"));
        assert!(text.contains("row=1:0 col=2:3 value=-0.1"));
        assert_eq!(parse_operator(&text).unwrap(), t);
        let json = serde_json::to_string(&OperatorFile::from_operator(&t)).unwrap();
        assert!(json.contains("\"N\":2"));
        assert_eq!(parse_operator(&json).unwrap(), t);
        assert_eq!(operator_hash(&t), operator_hash(&parse_operator(&text).unwrap()));
        assert_ne!(operator_hash(&t), operator_hash(&t.scale(2.0)));
    }

    #[test]
    fn operator_parse_errors() {
        let e = parse_operator_text("N 2\nrow=1:0 col=9:0 value=1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(parse_operator_text("row=0:0 col=0:0 value=1").is_err());
        assert!(parse_operator_text("N 1\nrow=0:0 value=1").is_err());
        assert!(parse_operator_text("N 1\nrow=0:0 col=0:0 value=abc").is_err());
        let t = parse_operator_text("# comment\nN 0\n\nrow=0:0 col=0:0 value=2.5\n").unwrap();
        assert_eq!(t.entry(DyadicInterval::root(), DyadicInterval::root()), 2.5);
    }

    #[test]
    fn map_round_trip() {
        let c = gamlen_gaudet(1, 1, 3).unwrap();
        let theta = SignAssignment::random(3, 1).unwrap();
        let b = crate::factorization::build_b(&c, &theta).unwrap();
        let back = MapFile::from_map(&b).to_map().unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn collection_signs_vectors() {
        let c = gamlen_gaudet(2, 1, 4).unwrap();
        let text = collection_to_text(&c);
        assert_eq!(parse_collection(&text).unwrap(), c);
        let bare: String = text.lines().filter(|l| l.starts_with("target")).map(|l| format!("{l}\n")).collect();
        let inferred = parse_collection(&bare).unwrap();
        assert_eq!(inferred.members(DyadicInterval::root()), c.members(DyadicInterval::root()));
        assert_eq!(inferred.host_level(), 3);

        let theta = SignAssignment::random(3, 9).unwrap();
        assert_eq!(parse_signs(&signs_to_text(&theta)).unwrap().signs(), theta.signs());
        let partial = parse_signs("N 2\n1:1 -1\n").unwrap();
        assert_eq!(partial.signs(), &[1, 1, -1, 1, 1, 1, 1]);
        assert!(parse_signs("0:0 0").is_err());

        let f = HaarVector::from_coeffs(1, vec![0.5, -1.0, 0.0]).unwrap();
        assert_eq!(parse_vector(&vector_to_text(&f)).unwrap(), f);
        assert_eq!(parse_vector("1:0 -1\n0:0 0.5\n").unwrap(), f);
    }
}
