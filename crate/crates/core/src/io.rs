//! On-disk formats for sample batches and partitions.
//!
//! CSV batch layout:
//!
//! ```text
//! # blockspin-batch v1 n_sites=8 n_obs=2 master_seed=42 stream_index=0
//! s0,s1,s2,s3,s4,s5,s6,s7
//! 1,-1,1,1,-1,-1,1,-1
//! -1,-1,1,1,-1,1,1,-1
//! ```
//!
//! The comment line is always written; the seed fields are `-` when the batch
//! has no seed lineage. Readers also accept files without the comment line.
//!
//! Binary batch layout (all integers little-endian):
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `BSPN` |
//! | 4  | 1 | format version, `1` |
//! | 5  | 1 | flags, bit 0 set when the seed fields are meaningful |
//! | 6  | 2 | reserved, zero |
//! | 8  | 4 | `n_sites` (u32) |
//! | 12 | 8 | `n_obs` (u64) |
//! | 20 | 8 | `master_seed` (u64) |
//! | 28 | 8 | `stream_index` (u64) |
//! | 36 | … | `n_obs` rows of `ceil(n_sites / 8)` bytes |
//!
//! In each row, bit `j % 8` of byte `j / 8` is set iff spin `j` is `+1`.
//! Unused high bits of the last byte are zero.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Partition;
use crate::sampler::{SampleBatch, SeedSpec};

pub const BINARY_MAGIC: [u8; 4] = *b"BSPN";
pub const BINARY_VERSION: u8 = 1;
const HEADER_LEN: usize = 36;
const CSV_TAG: &str = "blockspin-batch v1";

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => malformed(format!("{other:?}")),
        }
    } else {
        malformed(e.to_string())
    }
}

pub fn write_batch_csv<W: Write>(batch: &SampleBatch, out: W) -> Result<()> {
    let mut out = out;
    let (ms, si) = match batch.seed() {
        Some(s) => (s.master_seed.to_string(), s.stream_index.to_string()),
        None => ("-".to_string(), "-".to_string()),
    };
    writeln!(
        out,
        "# {CSV_TAG} n_sites={} n_obs={} master_seed={ms} stream_index={si}",
        batch.n_sites(),
        batch.n_obs()
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..batch.n_sites()).map(|j| format!("s{j}")))
        .map_err(csv_err)?;
    for row in batch.rows() {
        w.write_record(row.iter().map(|&s| if s > 0 { "1" } else { "-1" }))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_seed_comment(line: &str) -> Option<SeedSpec> {
    let mut master = None;
    let mut stream = None;
    for tok in line.split_whitespace() {
        if let Some(v) = tok.strip_prefix("master_seed=") {
            master = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("stream_index=") {
            stream = v.parse().ok();
        }
    }
    Some(SeedSpec::new(master?, stream?))
}

pub fn read_batch_csv<R: Read>(input: R) -> Result<SampleBatch> {
    let mut reader = BufReader::new(input);
    let mut seed = None;
    let mut buf = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if seed.is_none() {
                seed = parse_seed_comment(rest);
            }
        } else {
            buf.extend_from_slice(line.as_bytes());
            break;
        }
    }
    reader.read_to_end(&mut buf)?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(buf.as_slice());
    let n_sites = r.headers().map_err(csv_err)?.len();
    if n_sites == 0 {
        return Err(malformed("batch CSV has no header row"));
    }
    let mut spins = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != n_sites {
            return Err(malformed(format!(
                "row {} has {} fields, expected {n_sites}",
                line + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            spins.push(match field.trim() {
                "1" | "+1" => 1,
                "-1" => -1,
                other => return Err(malformed(format!("row {}: bad spin {other:?}", line + 1))),
            });
        }
    }
    SampleBatch::new(n_sites, spins, seed).map_err(|e| malformed(e.to_string()))
}

pub fn write_batch_binary<W: Write>(batch: &SampleBatch, mut out: W) -> Result<()> {
    let n_sites = u32::try_from(batch.n_sites()).map_err(|_| malformed("too many sites for binary format"))?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&BINARY_MAGIC);
    header.push(BINARY_VERSION);
    header.push(batch.seed().is_some() as u8);
    header.extend_from_slice(&[0, 0]);
    header.extend_from_slice(&n_sites.to_le_bytes());
    header.extend_from_slice(&(batch.n_obs() as u64).to_le_bytes());
    let seed = batch.seed().unwrap_or(SeedSpec::new(0, 0));
    header.extend_from_slice(&seed.master_seed.to_le_bytes());
    header.extend_from_slice(&seed.stream_index.to_le_bytes());
    out.write_all(&header)?;
    let row_bytes = batch.n_sites().div_ceil(8);
    let mut packed = vec![0u8; row_bytes];
    for row in batch.rows() {
        packed.iter_mut().for_each(|b| *b = 0);
        for (j, &s) in row.iter().enumerate() {
            if s > 0 {
                packed[j / 8] |= 1 << (j % 8);
            }
        }
        out.write_all(&packed)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_batch_binary<R: Read>(mut input: R) -> Result<SampleBatch> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| malformed("binary batch shorter than its header"))?;
    if header[..4] != BINARY_MAGIC {
        return Err(malformed("bad magic in binary batch"));
    }
    if header[4] != BINARY_VERSION {
        return Err(malformed(format!("unsupported binary batch version {}", header[4])));
    }
    let flags = header[5];
    if flags & !1 != 0 || header[6..8] != [0, 0] {
        return Err(malformed("reserved header bits are set"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let n_sites = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n_obs = u64_at(12);
    let seed = (flags & 1 == 1).then(|| SeedSpec::new(u64_at(20), u64_at(28)));
    if n_sites == 0 {
        return Err(malformed("binary batch declares zero sites"));
    }
    let row_bytes = n_sites.div_ceil(8);
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    let expected = (row_bytes as u64)
        .checked_mul(n_obs)
        .ok_or_else(|| malformed("declared size overflows"))?;
    if payload.len() as u64 != expected {
        return Err(malformed(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut spins = Vec::with_capacity(n_sites * n_obs as usize);
    let pad_mask: u8 = if n_sites.is_multiple_of(8) { 0 } else { !((1u16 << (n_sites % 8)) - 1) as u8 };
    for row in payload.chunks_exact(row_bytes) {
        if row[row_bytes - 1] & pad_mask != 0 {
            return Err(malformed("nonzero padding bits in binary batch"));
        }
        spins.extend((0..n_sites).map(|j| if row[j / 8] >> (j % 8) & 1 == 1 { 1i8 } else { -1 }));
    }
    SampleBatch::new(n_sites, spins, seed)
}

/// On-disk batch encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchFormat {
    Csv,
    Binary,
}

impl BatchFormat {
    /// `.bin` means binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => BatchFormat::Binary,
            _ => BatchFormat::Csv,
        }
    }
}

pub fn save_batch(batch: &SampleBatch, path: &Path, format: BatchFormat) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        BatchFormat::Csv => write_batch_csv(batch, file),
        BatchFormat::Binary => write_batch_binary(batch, file),
    }
}

/// Read a batch, sniffing the binary magic before falling back to CSV.
pub fn load_batch(path: &Path) -> Result<SampleBatch> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(&BINARY_MAGIC) {
        read_batch_binary(bytes.as_slice())
    } else {
        read_batch_csv(bytes.as_slice())
    }
}

/// A partition as a single comma-separated line of `1`/`-1`.
pub fn write_partition<W: Write>(part: &Partition, mut out: W) -> Result<()> {
    writeln!(out, "{part}")?;
    Ok(())
}

pub fn read_partition<R: Read>(input: R) -> Result<Partition> {
    for line in BufReader::new(input).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let r = line
            .split(',')
            .map(|t| match t.trim() {
                "1" | "+1" => Ok(1i8),
                "-1" => Ok(-1),
                other => Err(malformed(format!("bad partition entry {other:?}"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        return Partition::new(r).map_err(|e| malformed(e.to_string()));
    }
    Err(malformed("partition file is empty"))
}

pub fn load_partition(path: &Path) -> Result<Partition> {
    read_partition(std::fs::File::open(path)?)
}
