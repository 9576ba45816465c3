//! Matrix Market and vector files, and the JSON report document.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{validate_structure, ProblemInstance};
use crate::recovery::{Branch, SolveReport, Status};
use crate::sparse::CsrMatrix;

pub const SCHEMA_VERSION: &str = "etrs-report/1";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// A line of text with its 1-based line number.
type Numbered = (usize, String);

/// Non-comment, non-blank lines with their line numbers. The banner line
/// starting with `%%` is returned separately.
fn content_lines(path: &Path) -> Result<(Option<Numbered>, Vec<Numbered>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut banner = None;
    let mut lines = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.starts_with("%%") && k == 0 {
            banner = Some((k + 1, trimmed.to_string()));
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        lines.push((k + 1, trimmed.to_string()));
    }
    Ok((banner, lines))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from {tok:?}")))
}

/// Reads a symmetric coordinate Matrix Market file. Entries above the
/// diagonal are accepted and mirrored; duplicates are summed.
pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix> {
    let (banner, lines) = content_lines(path)?;
    let (bline, banner) = banner.ok_or_else(|| parse_err(path, 1, "missing %%MatrixMarket header"))?;
    let fields: Vec<String> = banner.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(path, bline, "malformed %%MatrixMarket header"));
    }
    if fields[2] != "coordinate" {
        return Err(parse_err(path, bline, format!("format {:?} unsupported, coordinate required", fields[2])));
    }
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(parse_err(path, bline, format!("field {:?} unsupported, real required", fields[3])));
    }
    if fields[4] != "symmetric" {
        return Err(parse_err(path, bline, format!("symmetry {:?} rejected: symmetric kind required", fields[4])));
    }
    let mut it = lines.into_iter();
    let (sline, size) = it.next().ok_or_else(|| parse_err(path, bline, "missing size line"))?;
    let mut tok = size.split_whitespace();
    let rows: usize = parse_num(path, sline, tok.next(), "row count")?;
    let cols: usize = parse_num(path, sline, tok.next(), "column count")?;
    let nnz: usize = parse_num(path, sline, tok.next(), "entry count")?;
    if rows != cols {
        return Err(parse_err(path, sline, format!("matrix is {rows}x{cols}, not square")));
    }
    let mut entries = Vec::with_capacity(nnz);
    for (line, text) in it {
        let mut tok = text.split_whitespace();
        let i: usize = parse_num(path, line, tok.next(), "row index")?;
        let j: usize = parse_num(path, line, tok.next(), "column index")?;
        let v: f64 = parse_num(path, line, tok.next(), "value")?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(parse_err(path, line, format!("index ({i}, {j}) out of range for {rows}x{cols}")));
        }
        entries.push((i.max(j) - 1, i.min(j) - 1, v));
    }
    if entries.len() != nnz {
        return Err(parse_err(
            path,
            sline,
            format!("size line announces {nnz} entries, found {}", entries.len()),
        ));
    }
    CsrMatrix::from_triangle(rows, &entries)
}

/// Writes the lower triangle in symmetric coordinate format.
pub fn write_matrix_market(path: &Path, m: &CsrMatrix) -> Result<()> {
    let entries = m.lower_triplets();
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", m.n(), m.n(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dense vector: one value per line, optionally preceded by a
/// Matrix Market array header and its `n 1` size line.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let (banner, lines) = content_lines(path)?;
    let mut it = lines.into_iter().peekable();
    let mut expected = None;
    if let Some((bline, banner)) = banner {
        let fields: Vec<String> = banner.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
        if fields.len() < 3 || fields[0] != "%%matrixmarket" || fields[2] != "array" {
            return Err(parse_err(path, bline, "vector files need an array header"));
        }
        let (sline, size) = it.next().ok_or_else(|| parse_err(path, bline, "missing size line"))?;
        let mut tok = size.split_whitespace();
        let rows: usize = parse_num(path, sline, tok.next(), "row count")?;
        let cols: usize = parse_num(path, sline, tok.next(), "column count")?;
        if cols != 1 {
            return Err(parse_err(path, sline, format!("expected one column, found {cols}")));
        }
        expected = Some((sline, rows));
    }
    let mut values = Vec::new();
    for (line, text) in it {
        let mut tok = text.split_whitespace();
        values.push(parse_num(path, line, tok.next(), "value")?);
        if tok.next().is_some() {
            return Err(parse_err(path, line, "one value per line expected"));
        }
    }
    if let Some((sline, rows)) = expected {
        if rows != values.len() {
            return Err(parse_err(path, sline, format!("header announces {rows} values, found {}", values.len())));
        }
    }
    Ok(values)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} 1", v.len())?;
    for x in v {
        writeln!(out, "{x:e}")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads and structurally validates an instance. Definiteness of `A` is
/// checked when solving.
pub fn load_instance(matrix: &Path, a: &Path, b: &Path, c: f64, delta: f64) -> Result<ProblemInstance> {
    let m = read_matrix_market(matrix)?;
    let n = m.n();
    let av = read_vector(a)?;
    let bv = read_vector(b)?;
    for (path, v) in [(a, &av), (b, &bv)] {
        if v.len() != n {
            return Err(Error::Dimension(format!(
                "{} has {} entries but the matrix is {n}x{n}",
                path.display(),
                v.len()
            )));
        }
    }
    let inst = ProblemInstance::new(m, av, bv, c, delta)?;
    let report = validate_structure(&inst);
    if !report.is_ok() {
        return Err(Error::Invalid(report));
    }
    Ok(inst)
}

/// Serde helpers writing floats with 17 significant digits.
pub mod float17 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    fn raw(v: f64) -> Option<Box<RawValue>> {
        v.is_finite()
            .then(|| RawValue::from_string(format!("{v:.16e}")).expect("valid number"))
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        raw(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| raw(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|x| x.unwrap_or(f64::NAN))
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub nnz: usize,
    pub class: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktDoc {
    #[serde(with = "float17")]
    pub kkt1: f64,
    #[serde(with = "float17")]
    pub kkt2: f64,
    #[serde(with = "float17")]
    pub kkt3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateDoc {
    #[serde(with = "float17::vec")]
    pub x1: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub x2: Vec<f64>,
    #[serde(with = "float17")]
    pub mu: f64,
    #[serde(with = "float17::vec")]
    pub signs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingsDoc {
    #[serde(with = "float17")]
    pub eigen_ms: f64,
    #[serde(with = "float17")]
    pub dual_ms: f64,
    #[serde(with = "float17")]
    pub recovery_ms: f64,
    #[serde(with = "float17")]
    pub total_ms: f64,
}

/// Machine-readable summary of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub instance_meta: InstanceMeta,
    pub status: Status,
    #[serde(with = "float17")]
    pub objective: f64,
    #[serde(with = "float17")]
    pub dual_value: f64,
    #[serde(with = "float17")]
    pub lambda1: f64,
    #[serde(with = "float17")]
    pub lambda2: f64,
    pub kkt: Option<KktDoc>,
    pub gap_certificate: Option<CertificateDoc>,
    pub timings: TimingsDoc,
    pub matvec_count: usize,
    pub outer_iterations: usize,
    pub branch: Branch,
    pub near_degenerate: bool,
}

impl ReportDocument {
    pub fn from_report(report: &SolveReport, meta: InstanceMeta) -> Self {
        let t = &report.diagnostics.timings;
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            instance_meta: meta,
            status: report.status,
            objective: report.objective,
            dual_value: report.dual_value,
            lambda1: report.lambda1,
            lambda2: report.lambda2,
            kkt: report.kkt.map(|k| KktDoc {
                kkt1: k.kkt1,
                kkt2: k.kkt2,
                kkt3: k.kkt3,
            }),
            gap_certificate: report.gap_certificate.as_ref().map(|c| CertificateDoc {
                x1: c.x1.clone(),
                x2: c.x2.clone(),
                mu: c.mu,
                signs: vec![c.signs.0, c.signs.1],
            }),
            timings: TimingsDoc {
                eigen_ms: t.eigen_a_ms,
                dual_ms: t.dual_ms,
                recovery_ms: t.recovery_ms,
                total_ms: t.total_ms,
            },
            matvec_count: report.diagnostics.matvecs,
            outer_iterations: report.diagnostics.outer_iterations,
            branch: report.diagnostics.branch,
            near_degenerate: report.diagnostics.near_degenerate,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_small_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let m = file(&dir, "A.mtx", "%%MatrixMarket matrix coordinate real symmetric\n% c\n2 2 2\n1 1 -2\n2 2 1\n");
        let a = file(&dir, "a.txt", "0\n0\n");
        let b = file(&dir, "b.txt", "1\n0\n");
        let inst = load_instance(&m, &a, &b, 0.0, 1.0).unwrap();
        assert_eq!(inst.matrix, CsrMatrix::from_diagonal(&[-2.0, 1.0]));
        assert_eq!(inst.b, vec![1.0, 0.0]);
    }

    #[test]
    fn rejects_general_kind() {
        let dir = tempfile::tempdir().unwrap();
        let m = file(&dir, "A.mtx", "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 1\n");
        let err = read_matrix_market(&m).unwrap_err().to_string();
        assert!(err.contains("symmetric kind required"), "{err}");
    }

    #[test]
    fn index_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let m = file(&dir, "A.mtx", "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n3 1 4\n");
        match read_matrix_market(&m).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn upper_entries_are_mirrored() {
        let dir = tempfile::tempdir().unwrap();
        let m = file(&dir, "A.mtx", "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 2 3\n");
        let a = read_matrix_market(&m).unwrap();
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), 3.0);
    }

    #[test]
    fn matrix_and_vector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CsrMatrix::from_triangle(3, &[(0, 0, 0.1), (2, 1, -1.0 / 3.0), (1, 0, 1e-300), (2, 2, 0.0)]).unwrap();
        let p = dir.path().join("m.mtx");
        write_matrix_market(&p, &m).unwrap();
        assert_eq!(read_matrix_market(&p).unwrap(), m);
        let v = vec![std::f64::consts::PI, -0.0, 1e300, 5e-324];
        let q = dir.path().join("v.txt");
        write_vector(&q, &v).unwrap();
        assert_eq!(read_vector(&q).unwrap(), v);
    }

    #[test]
    fn vector_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = file(&dir, "A.mtx", "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 1 -1\n");
        let a = file(&dir, "a.txt", "0\n");
        let b = file(&dir, "b.txt", "0\n0\n");
        assert!(matches!(load_instance(&m, &a, &b, 1.0, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let k = KktDoc {
            kkt1: 0.1 + 0.2,
            kkt2: -1.0 / 3.0,
            kkt3: 1e-17,
        };
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains("3.0000000000000004e-1"), "{s}");
        let back: KktDoc = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
    }
}
