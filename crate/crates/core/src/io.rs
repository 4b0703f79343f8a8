//! File formats.
//!
//! Structured files are JSON; they are read with a JSON5 parser so that
//! hand-written descriptors such as `{ field: "real", blocks: [[8,4]] }` are
//! accepted. Matrices are nested row lists. Complex entries are written as
//! `[re, im]` pairs; plain numbers are accepted as purely real entries.
//!
//! CSV files use `,` separators, `.` decimals, one header row and any number
//! of leading `#` comment lines carrying provenance. Complex matrices in CSV
//! form store each column as an adjacent `re,im` pair.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::moments::{GramTuple, MraSampleSet};
use crate::priors::PriorSpec;
use crate::repr::{BlockSignal, RepresentationStructure};
use crate::scalar::{Field, Scalar};
use crate::solvers::SolveReport;
use crate::{Error, Result};

fn parse_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{path}: {msg}"))
}

/// Parses JSON or JSON5 text.
pub fn parse_json(text: &str) -> Result<Value> {
    json5::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads a JSON/JSON5 file; errors carry the path and the parser position.
pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|cause| Error::Read {
            path: path.display().to_string(),
            cause,
        })?;
    json5::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn scalar_to_json<T: Scalar>(z: T) -> Value {
    match T::FIELD {
        Field::Real => json!(z.real()),
        Field::Complex => json!([z.real(), z.imaginary()]),
    }
}

fn scalar_from_json<T: Scalar>(v: &Value, path: &str) -> Result<T> {
    let z = match v {
        Value::Number(n) => Complex64::new(n.as_f64().unwrap_or(f64::NAN), 0.0),
        Value::Array(parts) if parts.len() == 2 => match (parts[0].as_f64(), parts[1].as_f64()) {
            (Some(re), Some(im)) => Complex64::new(re, im),
            _ => return Err(parse_err(path, "expected [re, im] numbers")),
        },
        _ => return Err(parse_err(path, "expected a number or an [re, im] pair")),
    };
    if T::FIELD == Field::Real && z.im != 0.0 {
        return Err(parse_err(path, "complex entry in a real-field file"));
    }
    Ok(T::from_c64(z))
}

pub fn matrix_to_json<T: Scalar>(m: &DMatrix<T>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|row| Value::Array(row.iter().map(|&z| scalar_to_json(z)).collect()))
            .collect(),
    )
}

pub fn matrix_from_json<T: Scalar>(v: &Value, path: &str) -> Result<DMatrix<T>> {
    let rows = v
        .as_array()
        .ok_or_else(|| parse_err(path, "expected a list of rows"))?;
    let mut data = Vec::new();
    let mut ncols = None;
    for (i, row) in rows.iter().enumerate() {
        let rpath = format!("{path}[{i}]");
        let row = row
            .as_array()
            .ok_or_else(|| parse_err(&rpath, "expected a row list"))?;
        if *ncols.get_or_insert(row.len()) != row.len() {
            return Err(parse_err(&rpath, "ragged matrix rows"));
        }
        for (j, z) in row.iter().enumerate() {
            data.push(scalar_from_json::<T>(z, &format!("{rpath}[{j}]"))?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols.unwrap_or(0), &data))
}

fn field_of<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| parse_err(path, format!("missing field `{key}`")))
}

pub fn structure_to_json(s: &RepresentationStructure) -> Value {
    serde_json::to_value(s).expect("structure serializes")
}

/// Reads the `structure` entry of a file value.
pub fn structure_from_json(v: &Value) -> Result<RepresentationStructure> {
    let raw = field_of(v, "structure", "$")?;
    serde_json::from_value(raw.clone()).map_err(|e| parse_err("$.structure", e))
}

/// Parses a structure descriptor: a JSON object such as
/// `{field: "real", blocks: [[8, 4]]}`, or a shorthand `8x4,2x3`,
/// `cyclic:8` or `cryo:L:R`, each optionally followed by `:complex`.
pub fn parse_structure(text: &str) -> Result<RepresentationStructure> {
    let text = text.trim();
    if text.starts_with('{') {
        return json5::from_str(text).map_err(|e| Error::Parse(format!("structure descriptor: {e}")));
    }
    let bad = || Error::Parse(format!("structure descriptor `{text}`: expected e.g. `8x4`, `cyclic:8`, `cryo:2:5` or a JSON object"));
    let (body, field) = match text.strip_suffix(":complex") {
        Some(b) => (b, Field::Complex),
        None => (text.strip_suffix(":real").unwrap_or(text), Field::Real),
    };
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
    let parts: Vec<&str> = body.split(':').collect();
    match parts.as_slice() {
        ["cyclic", n] => RepresentationStructure::cyclic(num(n)?, field),
        ["cryo", l, r] => RepresentationStructure::cryo_em(num(l)?, num(r)?, field),
        [blocks] => {
            let blocks = blocks
                .split(',')
                .map(|b| {
                    let (n, r) = b.split_once('x').ok_or_else(bad)?;
                    Ok((num(n)?, num(r)?))
                })
                .collect::<Result<Vec<_>>>()?;
            RepresentationStructure::new(field, blocks)
        }
        _ => Err(bad()),
    }
}

pub fn gram_tuple_to_json<T: Scalar>(g: &GramTuple<T>) -> Value {
    json!({
        "structure": structure_to_json(g.structure()),
        "grams": g.grams().iter().map(matrix_to_json).collect::<Vec<_>>(),
    })
}

pub fn gram_tuple_from_json<T: Scalar>(v: &Value) -> Result<GramTuple<T>> {
    let s = structure_from_json(v)?;
    let grams = field_of(v, "grams", "$")?
        .as_array()
        .ok_or_else(|| parse_err("$.grams", "expected a list of matrices"))?
        .iter()
        .enumerate()
        .map(|(l, m)| matrix_from_json(m, &format!("$.grams[{l}]")))
        .collect::<Result<Vec<_>>>()?;
    GramTuple::new(s, grams)
}

pub fn signal_to_json<T: Scalar>(x: &BlockSignal<T>) -> Value {
    json!({
        "structure": structure_to_json(x.structure()),
        "blocks": x.matrices().iter().map(matrix_to_json).collect::<Vec<_>>(),
    })
}

pub fn signal_from_json<T: Scalar>(v: &Value) -> Result<BlockSignal<T>> {
    let s = structure_from_json(v)?;
    let blocks = field_of(v, "blocks", "$")?
        .as_array()
        .ok_or_else(|| parse_err("$.blocks", "expected a list of matrices"))?
        .iter()
        .enumerate()
        .map(|(l, m)| matrix_from_json(m, &format!("$.blocks[{l}]")))
        .collect::<Result<Vec<_>>>()?;
    BlockSignal::new(s, blocks)
}

pub fn prior_to_json<T: Scalar>(p: &PriorSpec<T>) -> Value {
    match p {
        PriorSpec::LinearSubspace { basis } => json!({
            "kind": "linear_subspace",
            "basis": matrix_to_json(basis),
        }),
        PriorSpec::Sparsity { k, dictionary } => {
            let mut v = json!({ "kind": "sparsity", "k": k });
            if let Some(d) = dictionary {
                v["dictionary"] = matrix_to_json(d);
            }
            v
        }
        PriorSpec::Support { mask } => json!({ "kind": "support", "mask": mask }),
    }
}

/// Reads a prior. A `basis_csv` entry is resolved relative to `base_dir`.
pub fn prior_from_json<T: Scalar>(v: &Value, base_dir: &Path) -> Result<PriorSpec<T>> {
    let kind = field_of(v, "kind", "$")?
        .as_str()
        .ok_or_else(|| parse_err("$.kind", "expected a string"))?;
    match kind {
        "linear_subspace" => {
            let basis = match (v.get("basis"), v.get("basis_csv")) {
                (Some(b), _) => matrix_from_json(b, "$.basis")?,
                (None, Some(Value::String(p))) => read_matrix_csv(&base_dir.join(p))?,
                _ => return Err(parse_err("$", "linear_subspace needs `basis` or `basis_csv`")),
            };
            PriorSpec::linear_subspace(basis)
        }
        "sparsity" => {
            let k = field_of(v, "k", "$")?
                .as_u64()
                .ok_or_else(|| parse_err("$.k", "expected a positive integer"))? as usize;
            match v.get("dictionary") {
                Some(d) => PriorSpec::sparsity_in(k, matrix_from_json(d, "$.dictionary")?),
                None => PriorSpec::sparsity(k),
            }
        }
        "support" => {
            let mask = field_of(v, "mask", "$")?
                .as_array()
                .ok_or_else(|| parse_err("$.mask", "expected a list of booleans"))?
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    b.as_bool()
                        .ok_or_else(|| parse_err(&format!("$.mask[{i}]"), "expected a boolean"))
                })
                .collect::<Result<Vec<_>>>()?;
            PriorSpec::support(mask)
        }
        other => Err(parse_err("$.kind", format!("unknown prior kind `{other}`"))),
    }
}

pub fn report_to_json<T: Scalar>(r: &SolveReport<T>) -> Value {
    json!({
        "iterations_used": r.iterations_used,
        "converged": r.converged,
        "residual_final": r.residual_final,
        "oracle_error": r.oracle_error,
        "seed": r.seed,
        "residual_trajectory": r.residual_trajectory,
        "estimate": signal_to_json(&r.estimate),
    })
}

/// SHA-256 of the canonical JSON form, truncated to 16 hex digits.
pub fn config_hash(v: &Value) -> String {
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A CSV table with `#` provenance comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8"));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Parses CSV text: leading `#` lines become comments, then a header row.
pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut comments = Vec::new();
    let mut body_start = 0;
    for line in text.lines() {
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim_start().to_string());
            body_start += line.len() + 1;
        } else {
            break;
        }
    }
    let body = text.get(body_start..).unwrap_or("");
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(format!("csv header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| Error::Parse(format!("csv row {}: {e}", i + 1)))
        })
        .collect::<Result<_>>()?;
    Ok(CsvTable {
        comments,
        header,
        rows,
    })
}

fn fmt_f64(a: f64) -> String {
    format!("{a}")
}

fn scalar_columns<T: Scalar>(name: &str) -> Vec<String> {
    match T::FIELD {
        Field::Real => vec![name.to_string()],
        Field::Complex => vec![format!("{name}_re"), format!("{name}_im")],
    }
}

fn scalar_cells<T: Scalar>(z: T) -> Vec<String> {
    match T::FIELD {
        Field::Real => vec![fmt_f64(z.real())],
        Field::Complex => vec![fmt_f64(z.real()), fmt_f64(z.imaginary())],
    }
}

/// Row-major matrix table with columns `c0, c1, …`.
pub fn matrix_to_csv<T: Scalar>(m: &DMatrix<T>) -> CsvTable {
    let header: Vec<String> = (0..m.ncols())
        .flat_map(|j| scalar_columns::<T>(&format!("c{j}")))
        .collect();
    let mut t = CsvTable {
        header,
        ..CsvTable::default()
    };
    for row in m.row_iter() {
        t.rows.push(row.iter().flat_map(|&z| scalar_cells(z)).collect());
    }
    t
}

pub fn matrix_from_csv<T: Scalar>(text: &str, what: &str) -> Result<DMatrix<T>> {
    let t = parse_csv(text)?;
    let width = T::FIELD.real_dim();
    if t.header.len() % width != 0 {
        return Err(Error::Parse(format!("{what}: odd column count for complex data")));
    }
    let ncols = t.header.len() / width;
    let mut data = Vec::with_capacity(t.rows.len() * ncols);
    for (i, row) in t.rows.iter().enumerate() {
        if row.len() != t.header.len() {
            return Err(Error::Parse(format!("{what}: row {} has {} fields", i + 1, row.len())));
        }
        for j in 0..ncols {
            let num = |k: usize| {
                row[k].trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("{what}: row {}, column `{}`: {e}", i + 1, t.header[k]))
                })
            };
            let z = if width == 1 {
                Complex64::new(num(j)?, 0.0)
            } else {
                Complex64::new(num(2 * j)?, num(2 * j + 1)?)
            };
            data.push(T::from_c64(z));
        }
    }
    Ok(DMatrix::from_row_slice(t.rows.len(), ncols, &data))
}

pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<DMatrix<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|cause| Error::Read {
            path: path.display().to_string(),
            cause,
        })?;
    matrix_from_csv(&text, &path.display().to_string())
}

/// One observation per row: `index, y0, y1, …`.
pub fn samples_to_csv<T: Scalar>(set: &MraSampleSet<T>) -> CsvTable {
    let dim = set.structure().ambient_dim();
    let mut header = vec!["index".to_string()];
    header.extend((0..dim).flat_map(|d| scalar_columns::<T>(&format!("y{d}"))));
    let mut t = CsvTable {
        header,
        ..CsvTable::default()
    };
    t.comment(format!("structure={}", set.structure()));
    t.comment(format!("sigma={}", set.sigma()));
    if let Some(seed) = set.master_seed() {
        t.comment(format!("master_seed={seed}"));
    }
    for (i, y) in set.observations().iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(y.iter().flat_map(|&z| scalar_cells(z)));
        t.rows.push(row);
    }
    t
}

pub fn vector_cells<T: Scalar>(v: &DVector<T>) -> Vec<String> {
    v.iter().flat_map(|&z| scalar_cells(z)).collect()
}

/// Resolves `path` relative to the directory of `file` unless absolute.
pub fn sibling_path(file: &Path, path: &str) -> PathBuf {
    file.parent().unwrap_or(Path::new(".")).join(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::gram_tuple;
    use crate::priors::random_subspace_prior;
    use crate::repr::random_signal;
    use crate::rng::stream_rng;

    #[test]
    fn structure_shorthand() {
        assert_eq!(parse_structure("8x4").unwrap(), RepresentationStructure::real([(8, 4)]).unwrap());
        assert_eq!(
            parse_structure("3x2,1x1:complex").unwrap(),
            RepresentationStructure::complex([(3, 2), (1, 1)]).unwrap()
        );
        assert_eq!(
            parse_structure("cyclic:8").unwrap(),
            RepresentationStructure::cyclic(8, Field::Real).unwrap()
        );
        assert_eq!(
            parse_structure("cryo:2:5").unwrap(),
            RepresentationStructure::cryo_em(2, 5, Field::Real).unwrap()
        );
        assert_eq!(
            parse_structure("{field: 'real', blocks: [[8, 4]]}").unwrap(),
            RepresentationStructure::real([(8, 4)]).unwrap()
        );
        assert!(parse_structure("8y4").is_err());
        assert!(parse_structure("cyclic:x").is_err());
    }

    #[test]
    fn gram_tuple_json_round_trip() {
        let s = RepresentationStructure::complex([(3, 2), (1, 1)]).unwrap();
        let x = random_signal::<Complex64, _>(&s, &mut stream_rng(1, 0)).unwrap();
        let g = gram_tuple(&x);
        let text = to_pretty(&gram_tuple_to_json(&g));
        let back: GramTuple<Complex64> = gram_tuple_from_json(&parse_json(&text).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn hand_written_gram_file() {
        let v = parse_json(r#"{ structure: { field: "real", blocks: [[2,1]] }, grams: [[[4]]] }"#).unwrap();
        let g: GramTuple<f64> = gram_tuple_from_json(&v).unwrap();
        assert_eq!(g.grams()[0][(0, 0)], 4.0);
    }

    #[test]
    fn malformed_files_name_the_field() {
        let v = parse_json(r#"{ structure: { field: "real", blocks: [[2,2]] }, grams: [[[1, 0], [0, "x"]]] }"#).unwrap();
        let err = gram_tuple_from_json::<f64>(&v).unwrap_err().to_string();
        assert!(err.contains("$.grams[0][1][1]"), "{err}");
        let err = parse_json("{ structure: ").unwrap_err().to_string();
        assert!(err.contains("1"), "{err}");
        let v = parse_json(r#"{ kind: "support" }"#).unwrap();
        let err = prior_from_json::<f64>(&v, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("mask"), "{err}");
    }

    #[test]
    fn prior_json_round_trip() {
        let s = RepresentationStructure::real([(4, 2)]).unwrap();
        let p = random_subspace_prior::<f64, _>(&s, 3, &mut stream_rng(2, 0)).unwrap();
        let back: PriorSpec<f64> =
            prior_from_json(&parse_json(&prior_to_json(&p).to_string()).unwrap(), Path::new(".")).unwrap();
        assert_eq!(back, p);
        for p in [PriorSpec::<f64>::sparsity(2).unwrap(), PriorSpec::support(vec![true, false]).unwrap()] {
            let back: PriorSpec<f64> = prior_from_json(&prior_to_json(&p), Path::new(".")).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn basis_csv_is_loadable() {
        let s = RepresentationStructure::complex([(3, 1)]).unwrap();
        let p = random_subspace_prior::<Complex64, _>(&s, 2, &mut stream_rng(2, 1)).unwrap();
        let dir = std::env::temp_dir().join(format!("gpr-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        matrix_to_csv(p.basis().unwrap()).write(&dir.join("basis.csv")).unwrap();
        let v = parse_json(r#"{ kind: "linear_subspace", basis_csv: "basis.csv" }"#).unwrap();
        let back: PriorSpec<Complex64> = prior_from_json(&v, &dir).unwrap();
        assert_eq!(back, p);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_reports_bad_cells() {
        let err = matrix_from_csv::<f64>("# c\nc0,c1\n1,2\n3,oops\n", "basis").unwrap_err();
        assert!(err.to_string().contains("row 2, column `c1`"), "{err}");
    }

    #[test]
    fn csv_render_and_parse() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.comment("seed=1");
        t.push(vec!["1".into(), "0.5".into()]);
        let text = t.render();
        assert_eq!(text, "# seed=1\na,b\n1,0.5\n");
        assert_eq!(parse_csv(&text).unwrap(), t);
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&json!({"x": 1, "y": [1, 2]}));
        assert_eq!(a, config_hash(&json!({"x": 1, "y": [1, 2]})));
        assert_ne!(a, config_hash(&json!({"x": 2, "y": [1, 2]})));
        assert_eq!(a.len(), 16);
    }
}
