//! Dataset loading, saving and synthetic generation.
//!
//! Binary vector file (`SVEC`), little-endian:
//!
//! ```text
//! "SVEC" | version u32 | count u64 | dim u64 | width u32 (32 or 64)
//! count * dim reals of the given width, row-major
//! ```
//!
//! Ids are implicit (`0..count`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Record, Vector};

pub const VECTOR_MAGIC: [u8; 4] = *b"SVEC";
pub const VECTOR_VERSION: u32 = 1;
const VECTOR_HEADER: usize = 4 + 4 + 8 + 8 + 4;

/// Whether the first CSV column holds ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdColumn {
    /// Ids present iff the file has a header whose first field is `id`.
    #[default]
    Auto,
    Present,
    Absent,
}

fn parse_number(field: &str, line: u64, column: usize) -> Result<f64> {
    let value: f64 = field.parse().map_err(|_| Error::NonNumeric {
        line,
        column,
        field: field.to_string(),
    })?;
    if !value.is_finite() {
        return Err(Error::NonFiniteField { line, column });
    }
    Ok(value)
}

/// Reads `[id,]x1,...,xd` rows. A first line whose first field is not a
/// number is treated as a header.
pub fn load_csv<R: Read>(source: R, ids: IdColumn) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut records = Vec::new();
    let mut has_ids = ids == IdColumn::Present;
    let mut width = None;
    let mut first = true;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if first {
            first = false;
            let head = row.get(0).unwrap_or_default();
            if head.parse::<f64>().is_err() {
                if ids == IdColumn::Auto {
                    has_ids = head.eq_ignore_ascii_case("id");
                }
                continue;
            }
        }
        let expected = *width.get_or_insert(row.len());
        if row.len() != expected {
            return Err(Error::RaggedRow {
                line,
                expected,
                found: row.len(),
            });
        }
        let skip = usize::from(has_ids);
        if row.len() <= skip {
            return Err(Error::EmptyVector);
        }
        let id = if has_ids {
            let field = &row[0];
            field.parse::<u64>().map_err(|_| Error::NonNumeric {
                line,
                column: 1,
                field: field.to_string(),
            })?
        } else {
            records.len() as u64
        };
        let values = row
            .iter()
            .enumerate()
            .skip(skip)
            .map(|(c, f)| parse_number(f, line, c + 1))
            .collect::<Result<Vec<f64>>>()?;
        records.push(Record::new(id, Vector::new(values)?));
    }
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(records)
}

/// Writes a header plus one row per record. Values use the shortest
/// decimal form that parses back to the same `f64`.
pub fn save_csv<W: Write>(records: &[Record], sink: W, with_ids: bool) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let dim = records.first().map_or(0, |r| r.vector.dim());
    let mut header: Vec<String> = Vec::with_capacity(dim + 1);
    if with_ids {
        header.push("id".into());
    }
    header.extend((0..dim).map(|i| format!("x{i}")));
    writer.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(dim + 1);
    for r in records {
        row.clear();
        if with_ids {
            row.push(r.id.to_string());
        }
        row.extend(r.vector.as_slice().iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Width {
    F32,
    F64,
}

impl Width {
    fn flag(self) -> u32 {
        match self {
            Width::F32 => 32,
            Width::F64 => 64,
        }
    }

    fn bytes(self) -> usize {
        match self {
            Width::F32 => 4,
            Width::F64 => 8,
        }
    }
}

/// Writes vectors in the `SVEC` format; ids are not stored.
pub fn save_binary<W: Write>(records: &[Record], mut sink: W, width: Width) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.vector.dim());
    sink.write_all(&VECTOR_MAGIC)?;
    sink.write_all(&VECTOR_VERSION.to_le_bytes())?;
    sink.write_all(&(records.len() as u64).to_le_bytes())?;
    sink.write_all(&(dim as u64).to_le_bytes())?;
    sink.write_all(&width.flag().to_le_bytes())?;
    for r in records {
        if r.vector.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.vector.dim(),
            });
        }
        for &v in r.vector.as_slice() {
            match width {
                Width::F32 => sink.write_all(&(v as f32).to_le_bytes())?,
                Width::F64 => sink.write_all(&v.to_le_bytes())?,
            }
        }
    }
    sink.flush()?;
    Ok(())
}

/// Reads an `SVEC` file, widening 32-bit values exactly.
pub fn load_binary<R: Read>(mut source: R) -> Result<Vec<Record>> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let truncated = |needed: usize| Error::Truncated {
        needed: needed as u64,
        available: buf.len() as u64,
    };
    if buf.len() < 8 {
        return Err(truncated(8));
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != VECTOR_MAGIC {
        return Err(Error::BadMagic {
            expected: VECTOR_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VECTOR_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: VECTOR_VERSION,
            found: version,
        });
    }
    if buf.len() < VECTOR_HEADER {
        return Err(truncated(VECTOR_HEADER));
    }
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
    let width = match u32::from_le_bytes(buf[24..28].try_into().unwrap()) {
        32 => Width::F32,
        64 => Width::F64,
        other => return Err(Error::InvalidWidth(other)),
    };
    let needed = count
        .checked_mul(dim)
        .and_then(|x| x.checked_mul(width.bytes()))
        .and_then(|x| x.checked_add(VECTOR_HEADER))
        .ok_or(Error::Corrupt("declared sizes overflow".into()))?;
    if buf.len() < needed {
        return Err(truncated(needed));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if dim == 0 {
        return Err(Error::EmptyVector);
    }

    let payload = &buf[VECTOR_HEADER..needed];
    let mut records = Vec::with_capacity(count);
    for (i, row) in payload.chunks_exact(dim * width.bytes()).take(count).enumerate() {
        let values: Vec<f64> = match width {
            Width::F32 => row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            Width::F64 => row
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        if let Some(component) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { record: i, component });
        }
        records.push(Record::new(i as u64, Vector::new(values)?));
    }
    Ok(records)
}

/// Loads `.csv` as CSV (ids auto-detected) and anything else as `SVEC`.
pub fn load_path(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        load_csv(file, IdColumn::Auto)
    } else {
        load_binary(file)
    }
}

/// Saves `.csv` as CSV with ids and anything else as 64-bit `SVEC`.
pub fn save_path(records: &[Record], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        save_csv(records, file, true)
    } else {
        save_binary(records, file, Width::F64)
    }
}

/// Default lognormal shape for [`VectorDistribution::NormSkewed`].
pub const DEFAULT_NORM_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum VectorDistribution {
    /// Components uniform in `[-1, 1]`.
    Uniform,
    /// Components standard normal.
    Gaussian,
    /// Standard normal vectors, each scaled by a `LogNormal(0, sigma)` factor.
    NormSkewed { sigma: f64 },
}

impl VectorDistribution {
    pub fn norm_skewed() -> Self {
        VectorDistribution::NormSkewed {
            sigma: DEFAULT_NORM_SIGMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub distribution: VectorDistribution,
    pub seed: u64,
}

fn draw(rng: &mut ChaCha8Rng, count: usize, d: usize, dist: VectorDistribution) -> Result<Vec<Record>> {
    let scale = match dist {
        VectorDistribution::NormSkewed { sigma } => {
            Some(LogNormal::new(0.0, sigma).map_err(|e| Error::InvalidDataset(format!("lognormal sigma: {e}")))?)
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let mut v: Vec<f64> = match dist {
            VectorDistribution::Uniform => (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            _ => (0..d).map(|_| StandardNormal.sample(rng)).collect(),
        };
        if let Some(scale) = &scale {
            let c = scale.sample(rng);
            v.iter_mut().for_each(|x| *x *= c);
        }
        out.push(Record::new(id as u64, Vector::new(v)?));
    }
    Ok(out)
}

/// Generates `(users, items)`; identical output for identical specs.
pub fn generate(spec: &DatasetSpec) -> Result<(Vec<Record>, Vec<Record>)> {
    if spec.n == 0 || spec.m == 0 || spec.d == 0 {
        return Err(Error::InvalidDataset(format!(
            "n, m and d must be positive (got n={}, m={}, d={})",
            spec.n, spec.m, spec.d
        )));
    }
    // separate streams so resizing one side leaves the other unchanged
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users = draw(&mut rng, spec.n, spec.d, spec.distribution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let items = draw(&mut rng, spec.m, spec.d, spec.distribution)?;
    Ok((users, items))
}

/// Positions of `count` distinct items (all of them, shuffled, if
/// `count >= m`), reproducible per seed.
pub fn sample_query_positions(m: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4552_5953);
    sample(&mut rng, m, count.min(m)).into_vec()
}
