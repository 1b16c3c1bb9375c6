//! On-disk formats.
//!
//! * `.selx`: `"SELX"`, `u32` version 1, `u64` rows, `u64` cols, then
//!   row-major `f32` values, all little-endian.
//! * `.csv` embeddings: one row per line, no header.
//! * labels: CSV with header `row,label,is_labeled,is_known_category`.
//! * hierarchy and reports: JSON carrying the resolved run config and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use selex::eval::AccuracyReport;
use selex::hssk::{Hierarchy, HierarchyLevel};
use selex::train::EpochRecord;
use selex::{EmbeddingMatrix, LabelInfo, Matrix};

use crate::config::RunConfig;
use crate::error::CliError;

const MAGIC: &[u8; 4] = b"SELX";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

fn invalid(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}

fn io_failure(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

pub fn encode_selx(e: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * e.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(e.n() as u64).to_le_bytes());
    out.extend_from_slice(&(e.d() as u64).to_le_bytes());
    for &v in e.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_selx(bytes: &[u8]) -> Result<EmbeddingMatrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header: {} bytes, need {HEADER_LEN}", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic, not a .selx file".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (n, d) = (u64_at(8), u64_at(16));
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| format!("header sizes {n}x{d} overflow"))?;
    if bytes.len() as u64 != expected {
        return Err(format!("payload length mismatch: file has {} bytes, header implies {expected}", bytes.len()));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    EmbeddingMatrix::new(n as usize, d as usize, data).map_err(|e| e.to_string())
}

pub fn parse_embeddings_csv(text: &str) -> Result<EmbeddingMatrix, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("line {}: {e}", i + 1))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().map_err(|_| format!("line {} column {}: not a number: {cell:?}", i + 1, j + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    EmbeddingMatrix::from_rows(&rows).map_err(|e| e.to_string())
}

fn matrix_csv(m: &Matrix) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("selx") => {
            let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
            decode_selx(&bytes).map_err(|m| invalid(path, m))
        }
        Some("csv") => parse_embeddings_csv(&read_text(path)?).map_err(|m| invalid(path, m)),
        _ => Err(invalid(path, "embeddings must be .selx or .csv")),
    }
}

pub fn write_embeddings(path: &Path, e: &EmbeddingMatrix) -> Result<(), CliError> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("selx") => encode_selx(e),
        Some("csv") => matrix_csv(e.as_matrix()).map_err(|err| invalid(path, err))?,
        _ => return Err(invalid(path, "embeddings must be .selx or .csv")),
    };
    write_bytes(path, &bytes)
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<(), CliError> {
    let bytes = matrix_csv(m).map_err(|e| invalid(path, e))?;
    write_bytes(path, &bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    row: usize,
    label: usize,
    is_labeled: u8,
    is_known_category: u8,
}

fn flag(v: u8, row: usize, name: &str) -> Result<bool, String> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(format!("row {row}: {name} must be 0 or 1")),
    }
}

pub fn parse_labels(text: &str) -> Result<LabelInfo, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != ["row", "label", "is_labeled", "is_known_category"] {
        return Err("header must be row,label,is_labeled,is_known_category".into());
    }
    let mut rows: BTreeMap<usize, (usize, bool)> = BTreeMap::new();
    let mut known_flag: BTreeMap<usize, bool> = BTreeMap::new();
    for record in reader.deserialize::<LabelRow>() {
        let r = record.map_err(|e| e.to_string())?;
        let labeled = flag(r.is_labeled, r.row, "is_labeled")?;
        let known = flag(r.is_known_category, r.row, "is_known_category")?;
        if labeled && !known {
            return Err(format!("row {}: labeled novel category {}", r.row, r.label));
        }
        if *known_flag.entry(r.label).or_insert(known) != known {
            return Err(format!("category {} is marked both known and novel", r.label));
        }
        if rows.insert(r.row, (r.label, labeled)).is_some() {
            return Err(format!("duplicate row id {}", r.row));
        }
    }
    if rows.is_empty() {
        return Err("no rows".into());
    }
    if let Some(missing) = (0..rows.len()).find(|i| !rows.contains_key(i)) {
        return Err(format!("row ids must cover 0..{}; missing row {missing}", rows.len()));
    }
    let labels: Vec<usize> = rows.values().map(|v| v.0).collect();
    let mask: Vec<bool> = rows.values().map(|v| v.1).collect();
    let known: BTreeSet<usize> = known_flag.iter().filter(|(_, &k)| k).map(|(&c, _)| c).collect();
    let k_total = labels.iter().max().map_or(0, |m| m + 1);
    LabelInfo::new(labels, mask, known, k_total).map_err(|e| e.to_string())
}

pub fn read_labels(path: &Path) -> Result<LabelInfo, CliError> {
    parse_labels(&read_text(path)?).map_err(|m| invalid(path, m))
}

pub fn labels_csv(l: &LabelInfo) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..l.len() {
        let label = l.labels()[i];
        w.serialize(LabelRow {
            row: i,
            label,
            is_labeled: l.is_labeled(i) as u8,
            is_known_category: l.is_known(label) as u8,
        })
        .expect("in-memory writer");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn write_labels(path: &Path, l: &LabelInfo) -> Result<(), CliError> {
    write_bytes(path, &labels_csv(l))
}

/// Reads a `row,cluster` prediction file.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<usize, usize>, CliError> {
    #[derive(Deserialize)]
    struct Pred {
        row: usize,
        cluster: usize,
    }
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for record in reader.deserialize::<Pred>() {
        let p = record.map_err(|e| invalid(path, e))?;
        if out.insert(p.row, p.cluster).is_some() {
            return Err(invalid(path, format!("duplicate row id {}", p.row)));
        }
    }
    Ok(out)
}

pub fn predictions_csv(assignment: &[usize]) -> Vec<u8> {
    let mut out = b"row,cluster\n".to_vec();
    for (i, c) in assignment.iter().enumerate() {
        writeln!(out, "{i},{c}").expect("in-memory writer");
    }
    out
}

/// JSON envelope: a payload plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    #[serde(flatten)]
    pub body: T,
    pub config_echo: RunConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyBody {
    pub levels: Vec<HierarchyLevel>,
    pub base_k: usize,
}

pub type HierarchyFile = Report<HierarchyBody>;

impl HierarchyFile {
    pub fn new(h: &Hierarchy, config: &RunConfig, seed: u64) -> Self {
        Report { body: HierarchyBody { levels: h.levels.clone(), base_k: h.base_k }, config_echo: config.clone(), seed }
    }

    pub fn hierarchy(&self) -> Hierarchy {
        Hierarchy { levels: self.body.levels.clone(), base_k: self.body.base_k }
    }
}

fn check_hierarchy(h: &Hierarchy) -> Result<(), String> {
    let first = h.levels.first().ok_or("hierarchy has no levels")?;
    if first.label_count != h.base_k {
        return Err(format!("first level has {} labels, base_k is {}", first.label_count, h.base_k));
    }
    let n = first.assignment.len();
    for (i, lvl) in h.levels.iter().enumerate() {
        if lvl.assignment.len() != n {
            return Err(format!("level {} covers {} samples, expected {n}", i + 1, lvl.assignment.len()));
        }
        if let Some(&bad) = lvl.assignment.iter().find(|&&a| a >= lvl.label_count) {
            return Err(format!("level {} uses label {bad} of {}", i + 1, lvl.label_count));
        }
        if lvl.centers.as_slice().len() != lvl.centers.rows() * lvl.centers.cols() {
            return Err(format!("level {} centers have the wrong size", i + 1));
        }
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable report");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_bytes(path, &to_json(value))
}

pub fn read_hierarchy(path: &Path) -> Result<HierarchyFile, CliError> {
    let file: HierarchyFile = serde_json::from_str(&read_text(path)?).map_err(|e| invalid(path, e))?;
    check_hierarchy(&file.hierarchy()).map_err(|m| invalid(path, m))?;
    Ok(file)
}

/// Per-epoch metrics; absent subset accuracies are left empty.
pub fn metrics_csv(records: &[EpochRecord]) -> Vec<u8> {
    let mut out = b"epoch,l_use,l_sse,l_se,acc_all,acc_known,acc_novel\n".to_vec();
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.l_use,
            r.l_sse,
            r.l_se,
            r.accuracy.acc_all,
            opt(r.accuracy.acc_known),
            opt(r.accuracy.acc_novel)
        )
        .expect("in-memory writer");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBody {
    pub accuracy: AccuracyReport,
    pub rows_scored: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_identity() {
        let e = parse_embeddings_csv("1,0\n0,1").unwrap();
        assert_eq!((e.n(), e.d()), (2, 2));
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(parse_embeddings_csv("1,x\n").unwrap_err().contains("not a number"));
        assert!(parse_embeddings_csv("1,2\n3\n").is_err());
        assert!(parse_embeddings_csv("1,NaN\n").is_err());
        assert!(parse_embeddings_csv("").is_err());
    }

    #[test]
    fn selx_errors() {
        assert!(decode_selx(&[0u8; 23]).unwrap_err().contains("truncated header"));
        let good = encode_selx(&EmbeddingMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_selx(&bad).unwrap_err().contains("magic"));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode_selx(&bad).unwrap_err().contains("version"));
        assert!(decode_selx(&good[..good.len() - 1]).unwrap_err().contains("length"));
        let mut nan = good.clone();
        nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_selx(&nan).is_err());
    }

    #[test]
    fn label_examples() {
        let ok = "row,label,is_labeled,is_known_category\n0,0,1,1\n1,0,1,1\n2,1,0,0\n3,1,0,0\n";
        let l = parse_labels(ok).unwrap();
        assert_eq!(l.labeled_count(), 2);
        assert_eq!(l.known_count(), 1);
        assert_eq!(l.k_total(), 2);

        let novel = "row,label,is_labeled,is_known_category\n0,0,1,0\n";
        assert!(parse_labels(novel).unwrap_err().contains("labeled novel category"));
        let gap = "row,label,is_labeled,is_known_category\n0,0,1,1\n1,0,0,1\n2,1,0,0\n4,1,0,0\n";
        assert!(parse_labels(gap).unwrap_err().contains("missing row 3"));
        let dup = "row,label,is_labeled,is_known_category\n0,0,1,1\n0,0,1,1\n";
        assert!(parse_labels(dup).unwrap_err().contains("duplicate"));
        let mixed = "row,label,is_labeled,is_known_category\n0,0,1,1\n1,0,0,0\n";
        assert!(parse_labels(mixed).unwrap_err().contains("both known and novel"));
        assert!(parse_labels("a,b\n0,0\n").is_err());
    }

    #[test]
    fn labels_round_trip() {
        let l = LabelInfo::new(vec![2, 0, 1, 2], vec![false, true, false, false], [0, 2].into(), 3).unwrap();
        let back = parse_labels(std::str::from_utf8(&labels_csv(&l)).unwrap()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn predictions_format() {
        assert_eq!(predictions_csv(&[1, 0]), b"row,cluster\n0,1\n1,0\n");
    }
}
