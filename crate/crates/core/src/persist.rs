//! Binary index file.
//!
//! Little-endian throughout:
//!
//! ```text
//! "SMPF" | version u32
//! d n m k_max capacity pool_factor pool_size n_blocks : u64
//! build_seconds : f64
//! items:  ids[m] u64, norms[m] f64, vectors[m*d] f64
//! users:  ids[n] u64, norms[n] f64, vectors[n*d] f64, lower_bounds[n*k_max] f64
//! blocks: (start u64, end u64)[n_blocks], lower_bounds[n_blocks*k_max] f64
//! crc32 u32 of every preceding byte
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{Block, BuildStats, Index, ItemStore, UserStore};

pub const INDEX_MAGIC: [u8; 4] = *b"SMPF";
pub const INDEX_VERSION: u32 = 1;

const PREAMBLE: usize = 8;
const HEADER: usize = PREAMBLE + 8 * 8 + 8;

struct Hashing<W> {
    inner: W,
    hasher: crc32fast::Hasher,
    written: u64,
}

impl<W: Write> Write for Hashing<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn put_u64s<W: Write>(w: &mut W, values: impl IntoIterator<Item = u64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes `index` to `sink`, returning the number of bytes written.
pub fn save_index<W: Write>(index: &Index, sink: W) -> Result<u64> {
    let mut w = Hashing {
        inner: sink,
        hasher: crc32fast::Hasher::new(),
        written: 0,
    };
    w.write_all(&INDEX_MAGIC)?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    put_u64s(
        &mut w,
        [
            index.dim,
            index.n(),
            index.m(),
            index.k_max,
            index.block_capacity,
            index.pool_factor,
            index.pool_size,
            index.blocks.len(),
        ]
        .map(|v| v as u64),
    )?;
    w.write_all(&index.stats.build_seconds.to_le_bytes())?;

    put_u64s(&mut w, index.items.ids.iter().copied())?;
    put_f64s(&mut w, &index.items.norms)?;
    put_f64s(&mut w, &index.items.vectors)?;

    put_u64s(&mut w, index.users.ids.iter().copied())?;
    put_f64s(&mut w, &index.users.norms)?;
    put_f64s(&mut w, &index.users.vectors)?;
    put_f64s(&mut w, &index.users.lower_bounds)?;

    put_u64s(
        &mut w,
        index
            .blocks
            .iter()
            .flat_map(|b| [b.members.start as u64, b.members.end as u64]),
    )?;
    for b in &index.blocks {
        put_f64s(&mut w, &b.lower_bounds)?;
    }

    let crc = w.hasher.clone().finalize();
    let written = w.written;
    let mut inner = w.inner;
    inner.write_all(&crc.to_le_bytes())?;
    inner.flush()?;
    Ok(written + 4)
}

pub fn save_index_to_path(index: &Index, path: impl AsRef<Path>) -> Result<u64> {
    save_index(index, BufWriter::new(File::create(path)?))
}

/// Size in bytes of the encoded index.
pub fn encoded_len(index: &Index) -> u64 {
    let (d, n, m, k) = (index.dim, index.n(), index.m(), index.k_max);
    let nb = index.blocks.len();
    (HEADER + 8 * (m * (2 + d) + n * (2 + d + k) + nb * (2 + k)) + 4) as u64
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn f64(&mut self) -> f64 {
        f64::from_bits(self.u64())
    }

    fn u64s(&mut self, count: usize) -> Vec<u64> {
        (0..count).map(|_| self.u64()).collect()
    }

    fn f64s(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.f64()).collect()
    }
}

fn truncated(needed: usize, available: usize) -> Error {
    Error::Truncated {
        needed: needed as u64,
        available: available as u64,
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

/// Reads an index written by [`save_index`].
pub fn load_index<R: Read>(mut source: R) -> Result<Index> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    if buf.len() < PREAMBLE {
        return Err(truncated(PREAMBLE, buf.len()));
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != INDEX_MAGIC {
        return Err(Error::BadMagic {
            expected: INDEX_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: INDEX_VERSION,
            found: version,
        });
    }
    if buf.len() < HEADER {
        return Err(truncated(HEADER, buf.len()));
    }

    let mut cur = Cursor {
        buf: &buf,
        pos: PREAMBLE,
    };
    let header: Vec<usize> = (0..8)
        .map(|_| usize::try_from(cur.u64()).map_err(|_| corrupt("header field overflows usize")))
        .collect::<Result<_>>()?;
    let [d, n, m, k_max, capacity, pool_factor, pool_size, nb] = header[..] else {
        unreachable!()
    };
    let build_seconds = cur.f64();

    let words = [
        m.checked_mul(d.checked_add(2).ok_or_else(|| corrupt("dimension"))?),
        n.checked_mul(
            d.checked_add(k_max)
                .and_then(|x| x.checked_add(2))
                .ok_or_else(|| corrupt("dimension"))?,
        ),
        nb.checked_mul(k_max.checked_add(2).ok_or_else(|| corrupt("k_max"))?),
    ]
    .into_iter()
    .try_fold(0usize, |acc, w| w.and_then(|w| acc.checked_add(w)))
    .and_then(|w| w.checked_mul(8))
    .and_then(|b| b.checked_add(HEADER + 4))
    .ok_or_else(|| corrupt("declared sizes overflow"))?;
    let expected = words;
    if buf.len() < expected {
        return Err(truncated(expected, buf.len()));
    }
    if buf.len() > expected {
        return Err(corrupt(format!("{} trailing bytes", buf.len() - expected)));
    }

    let body = expected - 4;
    let stored = u32::from_le_bytes(buf[body..].try_into().unwrap());
    let computed = crc32fast::hash(&buf[..body]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let items = ItemStore {
        ids: cur.u64s(m),
        norms: cur.f64s(m),
        vectors: cur.f64s(m * d),
    };
    let users = UserStore {
        ids: cur.u64s(n),
        norms: cur.f64s(n),
        vectors: cur.f64s(n * d),
        lower_bounds: cur.f64s(n * k_max),
    };
    let ranges = cur.u64s(2 * nb);
    let mut blocks = Vec::with_capacity(nb);
    let mut next = 0usize;
    for r in ranges.chunks_exact(2) {
        let (start, end) = (r[0] as usize, r[1] as usize);
        if start != next || end <= start || end > n {
            return Err(corrupt("block table does not partition the users"));
        }
        next = end;
        blocks.push(Block {
            members: start..end,
            lower_bounds: cur.f64s(k_max),
        });
    }
    if next != n {
        return Err(corrupt("block table does not cover every user"));
    }
    if d == 0 || k_max == 0 || capacity == 0 || pool_factor == 0 || pool_size > m {
        return Err(corrupt("invalid header values"));
    }

    Ok(Index {
        dim: d,
        k_max,
        pool_factor,
        pool_size,
        block_capacity: capacity,
        users,
        items,
        blocks,
        stats: BuildStats { build_seconds, n, m },
    })
}

pub fn load_index_from_path(path: impl AsRef<Path>) -> Result<Index> {
    load_index(BufReader::new(File::open(path)?))
}
