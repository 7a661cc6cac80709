//! Dataset files: a JSON sidecar describing dimensions, generator config and
//! section offsets, next to a blob of little-endian `f64` values stored
//! row-major, one section per matrix or vector in declared order.
//!
//! For a blob at `data.bin` the sidecar lives at `data.bin.json`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GenConfig, Instance, ProblemSetup};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "hyperlista-dataset";
const FORMAT_VERSION: u32 = 1;

/// Everything a dataset file can hold. `setup` is present once the
/// dictionary solver has run; `instances` may be empty for setup-only files.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dictionary: DMatrix<f64>,
    pub setup: Option<ProblemSetup>,
    pub gen: Option<GenConfig>,
    pub instances: Vec<Instance>,
    /// Free-form provenance (dictionary seed, solver summary, ...).
    pub meta: serde_json::Value,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn n(&self) -> usize {
        self.dictionary.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub n: usize,
    pub count: usize,
    pub has_setup: bool,
    pub mu: Option<f64>,
    pub gen: Option<GenConfig>,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub sections: Vec<SectionInfo>,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn expected_sections(m: usize, n: usize, count: usize, has_setup: bool) -> Vec<(String, usize, usize)> {
    let mut out = vec![("A".to_string(), m, n)];
    if has_setup {
        out.push(("A_pinv".into(), n, m));
        out.push(("W".into(), m, n));
        out.push(("D".into(), m, n));
        out.push(("G".into(), m, m));
    }
    for i in 0..count {
        out.push((format!("x_star[{i}]"), n, 1));
        out.push((format!("epsilon[{i}]"), m, 1));
        out.push((format!("b[{i}]"), m, 1));
    }
    out
}

fn push_matrix(buf: &mut Vec<u8>, mat: &DMatrix<f64>) {
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            buf.extend_from_slice(&mat[(i, j)].to_le_bytes());
        }
    }
}

fn push_vector(buf: &mut Vec<u8>, v: &DVector<f64>) {
    for x in v.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Write `data` to `path` (blob) and its sidecar. Returns the sidecar path.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<PathBuf> {
    let (m, n) = data.dictionary.shape();
    if let Some(setup) = &data.setup {
        if setup.a() != &data.dictionary {
            return Err(Error::config("setup dictionary differs from dataset dictionary"));
        }
    }
    for (i, inst) in data.instances.iter().enumerate() {
        if inst.x_star.len() != n || inst.b.len() != m || inst.epsilon.len() != m {
            return Err(Error::dims(format!("instance {i}"), format!("n={n}, m={m}"), "other"));
        }
    }

    let mut blob = Vec::new();
    let mut sections = Vec::new();
    let mut record = |blob: &mut Vec<u8>, name: String, rows: usize, cols: usize| {
        sections.push(SectionInfo { name, rows, cols, offset: blob.len() as u64 });
    };

    record(&mut blob, "A".into(), m, n);
    push_matrix(&mut blob, &data.dictionary);
    if let Some(setup) = &data.setup {
        for (name, mat) in [("A_pinv", setup.a_pinv()), ("W", setup.w()), ("D", setup.d()), ("G", setup.g())] {
            record(&mut blob, name.into(), mat.nrows(), mat.ncols());
            push_matrix(&mut blob, mat);
        }
    }
    for (i, inst) in data.instances.iter().enumerate() {
        record(&mut blob, format!("x_star[{i}]"), n, 1);
        push_vector(&mut blob, &inst.x_star);
        record(&mut blob, format!("epsilon[{i}]"), m, 1);
        push_vector(&mut blob, &inst.epsilon);
        record(&mut blob, format!("b[{i}]"), m, 1);
        push_vector(&mut blob, &inst.b);
    }

    let header = DatasetHeader {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        m,
        n,
        count: data.instances.len(),
        has_setup: data.setup.is_some(),
        mu: data.setup.as_ref().map(|s| s.mu()),
        gen: data.gen.clone(),
        meta: data.meta.clone(),
        sections,
    };
    fs::write(path, &blob)?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&header)?)?;
    Ok(side)
}

fn read_header(path: &Path) -> Result<DatasetHeader> {
    let side = sidecar_path(path);
    let malformed = |reason: String| Error::MalformedHeader { path: side.clone(), reason };
    let text = match fs::read(&side) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(malformed("header file missing".into())),
        Err(e) => return Err(e.into()),
    };
    if text.iter().all(|c| c.is_ascii_whitespace()) {
        return Err(malformed("empty header".into()));
    }
    let header: DatasetHeader = serde_json::from_slice(&text).map_err(|e| malformed(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(malformed(format!("unknown format tag {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {}", header.version)));
    }
    Ok(header)
}

/// Load a dataset written by [`save_dataset`].
///
/// Fails with [`Error::MalformedHeader`] when the sidecar is missing, empty
/// or unparsable, [`Error::DimensionMismatch`] when sections disagree with
/// the declared dimensions (or the payload is longer than declared), and
/// [`Error::TruncatedPayload`] when the blob is too short.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let header = read_header(path)?;
    let side = sidecar_path(path);
    let (m, n) = (header.m, header.n);
    if m == 0 || n == 0 {
        return Err(Error::MalformedHeader { path: side, reason: "zero dimension".into() });
    }
    let expected = expected_sections(m, n, header.count, header.has_setup);
    if expected.len() != header.sections.len() {
        return Err(Error::dims("section count", expected.len(), header.sections.len()));
    }
    let mut offset = 0u64;
    for ((name, rows, cols), sec) in expected.iter().zip(&header.sections) {
        if &sec.name != name {
            return Err(Error::MalformedHeader {
                path: side,
                reason: format!("expected section {name}, found {}", sec.name),
            });
        }
        if (sec.rows, sec.cols) != (*rows, *cols) {
            return Err(Error::dims(
                format!("section {name}"),
                format!("{rows}x{cols}"),
                format!("{}x{}", sec.rows, sec.cols),
            ));
        }
        if sec.offset != offset {
            return Err(Error::MalformedHeader {
                path: side,
                reason: format!("section {name} at offset {} instead of {offset}", sec.offset),
            });
        }
        offset += (rows * cols * 8) as u64;
    }

    let blob = fs::read(path)?;
    let found = blob.len() as u64;
    if found < offset {
        return Err(Error::TruncatedPayload { path: path.to_path_buf(), expected: offset, found });
    }
    if found > offset {
        return Err(Error::dims("payload length (bytes)", offset, found));
    }

    let mut cursor = 0usize;
    let mut take = |rows: usize, cols: usize| -> DMatrix<f64> {
        let mat = DMatrix::from_fn(rows, cols, |i, j| {
            let at = cursor + (i * cols + j) * 8;
            f64::from_le_bytes(blob[at..at + 8].try_into().expect("8-byte slice"))
        });
        cursor += rows * cols * 8;
        mat
    };

    let dictionary = take(m, n);
    let setup = if header.has_setup {
        let a_pinv = take(n, m);
        let w = take(m, n);
        let d = take(m, n);
        let g = take(m, m);
        let mu = header.mu.ok_or_else(|| Error::MalformedHeader {
            path: sidecar_path(path),
            reason: "setup present but mu missing".into(),
        })?;
        Some(ProblemSetup::from_parts(dictionary.clone(), a_pinv, w, d, g, mu)?)
    } else {
        None
    };
    let mut instances = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let x_star = DVector::from_column_slice(take(n, 1).as_slice());
        let epsilon = DVector::from_column_slice(take(m, 1).as_slice());
        let b = DVector::from_column_slice(take(m, 1).as_slice());
        instances.push(Instance { x_star, epsilon, b });
    }
    Ok(Dataset { dictionary, setup, gen: header.gen, instances, meta: header.meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{generate_dictionary, generate_instances};

    fn sample() -> Dataset {
        let gen = GenConfig { m: 6, n: 10, snr_db: Some(20.0), ..GenConfig::standard(3, 4) };
        let a = generate_dictionary(6, 10, 1).unwrap();
        let instances = generate_instances(&a, &gen).unwrap();
        Dataset { dictionary: a, setup: None, gen: Some(gen), instances, meta: serde_json::json!({"dict_seed": 1}) }
    }

    fn bits_equal(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
        a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        let data = sample();
        save_dataset(&path, &data).unwrap();
        let back = load_dataset(&path).unwrap();
        assert!(bits_equal(&data.dictionary, &back.dictionary));
        assert_eq!(data, back);
    }

    #[test]
    fn round_trip_with_setup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("setup.bin");
        let mut data = sample();
        let a = data.dictionary.clone();
        let pinv = crate::linalg::pseudoinverse(&a, 1e-12);
        let setup = ProblemSetup::new(a.clone(), pinv, a.clone(), DMatrix::identity(6, 6), 0.25).unwrap();
        data.setup = Some(setup);
        save_dataset(&path, &data).unwrap();
        let back = load_dataset(&path).unwrap();
        let s = back.setup.as_ref().unwrap();
        assert!(bits_equal(s.w(), data.setup.as_ref().unwrap().w()));
        assert_eq!(s.mu(), 0.25);
        assert_eq!(data, back);
    }

    #[test]
    fn header_dims_disagreeing_with_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&path, &sample()).unwrap();
        let side = sidecar_path(&path);
        let mut header: DatasetHeader = serde_json::from_slice(&fs::read(&side).unwrap()).unwrap();
        header.n = 11;
        fs::write(&side, serde_json::to_vec(&header).unwrap()).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
    }

    #[test]
    fn truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&path, &sample()).unwrap();
        let blob = fs::read(&path).unwrap();
        fs::write(&path, &blob[..blob.len() - 3]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
        assert_eq!(err.code(), 13);
    }

    #[test]
    fn empty_files_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        fs::write(&path, b"").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }), "{err}");
        fs::write(sidecar_path(&path), b"").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }), "{err}");
        fs::write(sidecar_path(&path), b"{\"format\": 3}").unwrap();
        assert!(matches!(load_dataset(&path).unwrap_err(), Error::MalformedHeader { .. }));
    }
}
