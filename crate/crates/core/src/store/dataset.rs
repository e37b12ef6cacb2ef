//! Binary dataset format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "CFAD" | version u32 | M N K tau u32 | feature tag u8, 3 zero bytes
//! sample count u64 | config digest u64 | seed u64
//! config text length u32 | canonical config text
//! M x (x f64, y f64) AP positions
//! tau x K pilots, column-major, (re f64, im f64)
//! records: N*K*depth f32 tensor (n -> k -> m) | ceil(K/8) activity bytes
//! ```
//!
//! The AP positions and pilots come from the embedded configuration's
//! `rng_seed`; record `i` was simulated from random stream `i` of the header
//! seed, so the received frames behind any record can be regenerated from the
//! header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;

use super::bytes::{Decoder, Encoder};
use crate::airlink::{CMatrix, PilotMatrix};
use crate::error::{Error, Result};
use crate::neuralnet::LabeledSet;
use crate::preprocess::{FeatureMode, InputTensor};
use crate::scenario::{Activity, Point, SystemConfig};
use crate::synth::Layout;

pub const DATASET_MAGIC: [u8; 4] = *b"CFAD";
pub const DATASET_VERSION: u32 = 1;
const FIXED_HEADER_LEN: usize = 56;
const SAMPLE_COUNT_OFFSET: u64 = 28;
const MAX_DIM: u32 = 1 << 20;
/// Samples simulated per parallel batch before writing.
const GENERATION_CHUNK: u64 = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub sample_count: u64,
    pub config_digest: u64,
    pub seed: u64,
    /// Configuration, AP positions and pilot book shared by every record.
    pub layout: Layout,
}

impl DatasetHeader {
    pub fn new(layout: Layout, seed: u64, sample_count: u64) -> Self {
        Self {
            version: DATASET_VERSION,
            sample_count,
            config_digest: layout.config.digest(),
            seed,
            layout,
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.layout.config
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.config().feature_mode
    }

    pub fn depth(&self) -> usize {
        self.config().tensor_depth()
    }

    /// Values per tensor, `N * K * depth`.
    pub fn tensor_len(&self) -> usize {
        let c = self.config();
        c.num_antennas * c.num_users * self.depth()
    }

    pub fn bitmap_len(&self) -> usize {
        self.config().num_users.div_ceil(8)
    }

    pub fn record_len(&self) -> usize {
        4 * self.tensor_len() + self.bitmap_len()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let c = self.config();
        let mut e = Encoder::default();
        e.bytes(&DATASET_MAGIC);
        e.u32(self.version);
        for d in [c.num_aps, c.num_antennas, c.num_users, c.pilot_len] {
            e.len_u32(d)?;
        }
        e.u8(c.feature_mode.tag());
        e.bytes(&[0; 3]);
        e.u64(self.sample_count);
        e.u64(self.config_digest);
        e.u64(self.seed);
        let text = c.to_text();
        e.len_u32(text.len())?;
        e.bytes(text.as_bytes());
        for p in &self.layout.ap_positions {
            e.f64(p.x);
            e.f64(p.y);
        }
        for z in self.layout.pilots.phi.iter() {
            e.f64(z.re);
            e.f64(z.im);
        }
        Ok(e.buf)
    }
}

/// One stored sample. `index` is its position in the file, which is also the
/// random stream it was simulated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: u64,
    /// `N * K * depth` values, `n -> k -> m` row-major.
    pub tensor: Vec<f32>,
    pub activity: Activity,
}

impl SampleRecord {
    /// Tensor in the `depth × N × K` order the network consumes.
    pub fn to_chw(&self, num_antennas: usize, num_users: usize) -> Vec<f32> {
        let depth = self.tensor.len() / (num_antennas * num_users).max(1);
        let mut out = vec![0.0; self.tensor.len()];
        for n in 0..num_antennas {
            for k in 0..num_users {
                for d in 0..depth {
                    out[(d * num_antennas + n) * num_users + k] = self.tensor[(n * num_users + k) * depth + d];
                }
            }
        }
        out
    }
}

fn encode_record(tensor: &InputTensor, activity: &Activity, out: &mut Vec<u8>) {
    for v in &tensor.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut bitmap = vec![0u8; activity.len().div_ceil(8)];
    for (k, &a) in activity.0.iter().enumerate() {
        if a {
            bitmap[k / 8] |= 1 << (k % 8);
        }
    }
    out.extend_from_slice(&bitmap);
}

fn decode_record(header: &DatasetHeader, index: u64, buf: &[u8], base: u64) -> Result<SampleRecord> {
    let k = header.config().num_users;
    let mut d = Decoder::new(buf, base);
    let tensor = (0..header.tensor_len())
        .map(|_| d.f32("tensor value"))
        .collect::<Result<Vec<_>>>()?;
    let at = d.offset();
    let bitmap = d.take(header.bitmap_len(), "activity bitmap")?;
    let activity = Activity((0..k).map(|u| bitmap[u / 8] >> (u % 8) & 1 == 1).collect());
    if k % 8 != 0 && bitmap[k / 8] >> (k % 8) != 0 {
        return Err(Error::format(at, "activity bitmap has bits set beyond K"));
    }
    Ok(SampleRecord { index, tensor, activity })
}

fn simulate_record(layout: &Layout, seed: u64, index: u64, out: &mut Vec<u8>) -> Result<()> {
    let frame = layout.simulate(seed, index)?;
    let tensor = layout.features(&frame.frames)?;
    encode_record(&tensor, &frame.activity, out);
    Ok(())
}

/// Simulates `count` samples from `seed` on the configuration's layout and
/// writes them to `path`.
///
/// Samples are simulated in parallel but written in index order, so the file
/// is byte-identical for every thread count.
pub fn generate_dataset(config: &SystemConfig, count: u64, seed: u64, path: &Path) -> Result<DatasetHeader> {
    let layout = Layout::draw(config)?;
    let header = DatasetHeader::new(layout, seed, count);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.encode()?).map_err(|e| Error::io(path, e))?;
    let mut start = 0;
    while start < count {
        let end = (start + GENERATION_CHUNK).min(count);
        let records = (start..end)
            .into_par_iter()
            .map(|i| {
                let mut buf = Vec::with_capacity(header.record_len());
                simulate_record(&header.layout, seed, i, &mut buf)?;
                Ok(buf)
            })
            .collect::<Result<Vec<_>>>()?;
        for r in records {
            w.write_all(&r).map_err(|e| Error::io(path, e))?;
        }
        start = end;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    log::info!("wrote {count} samples to {}", path.display());
    Ok(header)
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(offset, format!("file ends inside {what}"))
        } else {
            Error::Format {
                offset,
                message: format!("reading {what}: {e}"),
            }
        }
    })
}

fn parse_header(r: &mut impl Read, file_len: u64) -> Result<(DatasetHeader, u64)> {
    let mut fixed = [0u8; FIXED_HEADER_LEN];
    read_exact_at(r, &mut fixed, 0, "fixed header")?;
    let mut d = Decoder::new(&fixed, 0);
    if d.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::format(0, "bad magic, not a dataset file"));
    }
    let version = d.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}, expected {DATASET_VERSION}")));
    }
    let m = d.dim("M", MAX_DIM)?;
    let n = d.dim("N", MAX_DIM)?;
    let k = d.dim("K", MAX_DIM)?;
    let tau = d.dim("tau", MAX_DIM)?;
    let tag_at = d.offset();
    let tag = d.u8("feature tag")?;
    let mode = FeatureMode::from_tag(tag)
        .ok_or_else(|| Error::format(tag_at, format!("unknown feature tag {tag}")))?;
    if d.take(3, "reserved")? != [0; 3] {
        return Err(Error::format(tag_at + 1, "reserved bytes must be zero"));
    }
    let sample_count = d.u64("sample count")?;
    let digest_at = d.offset();
    let config_digest = d.u64("config digest")?;
    let seed = d.u64("seed")?;
    let text_len = d.dim("config length", MAX_DIM)?;
    let text_at = d.offset();

    let mut text = vec![0u8; text_len];
    read_exact_at(r, &mut text, text_at, "config text")?;
    let text = String::from_utf8(text).map_err(|_| Error::format(text_at, "config text is not UTF-8"))?;
    let config =
        SystemConfig::from_text(&text).map_err(|e| Error::format(text_at, format!("embedded config: {e}")))?;
    if (config.num_aps, config.num_antennas, config.num_users, config.pilot_len) != (m, n, k, tau)
        || config.feature_mode != mode
    {
        return Err(Error::format(
            text_at,
            format!("embedded config disagrees with header dims M={m} N={n} K={k} tau={tau} mode={}", mode.as_str()),
        ));
    }
    if config.digest() != config_digest {
        return Err(Error::format(digest_at, "config digest does not match embedded config"));
    }

    let geo_at = text_at + text_len as u64;
    let geo_len = 16 * m + 16 * tau * k;
    if geo_at + geo_len as u64 > file_len {
        return Err(Error::format(file_len, "file ends inside AP positions or pilots"));
    }
    let mut geo = vec![0u8; geo_len];
    read_exact_at(r, &mut geo, geo_at, "AP positions and pilots")?;
    let mut d = Decoder::new(&geo, geo_at);
    let ap_positions = (0..m)
        .map(|_| Ok(Point { x: d.f64("AP x")?, y: d.f64("AP y")? }))
        .collect::<Result<Vec<_>>>()?;
    let pilot_at = d.offset();
    let mut entries = Vec::with_capacity(tau * k);
    for _ in 0..tau * k {
        entries.push(Complex64::new(d.f64("pilot re")?, d.f64("pilot im")?));
    }
    let pilots = PilotMatrix::new(CMatrix::from_vec(tau, k, entries))
        .map_err(|e| Error::format(pilot_at, e.to_string()))?;
    let layout = Layout::from_parts(config, ap_positions, pilots)
        .map_err(|e| Error::format(geo_at, e.to_string()))?;
    let header = DatasetHeader {
        version,
        sample_count,
        config_digest,
        seed,
        layout,
    };
    Ok((header, geo_at + geo_len as u64))
}

/// Streaming and random-access reader over a dataset file.
#[derive(Debug)]
pub struct DatasetReader {
    header: DatasetHeader,
    path: PathBuf,
    file: BufReader<File>,
    data_offset: u64,
    /// Record index the underlying reader is positioned at.
    position: u64,
    next: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut file = BufReader::new(file);
        let (header, data_offset) = parse_header(&mut file, file_len)?;
        let expected = (header.record_len() as u64)
            .checked_mul(header.sample_count)
            .and_then(|v| v.checked_add(data_offset))
            .ok_or_else(|| Error::format(SAMPLE_COUNT_OFFSET, "sample count overflows file size"))?;
        if expected != file_len {
            return Err(Error::format(
                file_len.min(expected),
                format!(
                    "file is {file_len} bytes but header promises {expected} ({} records of {} bytes after offset {data_offset})",
                    header.sample_count,
                    header.record_len()
                ),
            ));
        }
        Ok(Self {
            header,
            path: path.to_path_buf(),
            file,
            data_offset,
            position: 0,
            next: 0,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.header.sample_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record `index`, located by the fixed record size.
    pub fn read_sample(&mut self, index: u64) -> Result<SampleRecord> {
        if index >= self.header.sample_count {
            return Err(Error::Structural(format!(
                "sample {index} out of range, dataset has {}",
                self.header.sample_count
            )));
        }
        let len = self.header.record_len();
        let offset = self.data_offset + index * len as u64;
        if index != self.position {
            self.file
                .seek(SeekFrom::Start(offset))
                .map_err(|e| Error::io(&self.path, e))?;
        }
        let mut buf = vec![0u8; len];
        read_exact_at(&mut self.file, &mut buf, offset, "sample record")?;
        self.position = index + 1;
        decode_record(&self.header, index, &buf, offset)
    }

    /// Loads every record as network inputs and labels.
    pub fn load_labeled(mut self) -> Result<(DatasetHeader, LabeledSet)> {
        let c = self.header.config().clone();
        let mut set = LabeledSet::new(self.header.tensor_len(), c.num_users);
        for i in 0..self.len() {
            let r = self.read_sample(i)?;
            set.push(&r.to_chw(c.num_antennas, c.num_users), &r.activity.0)?;
        }
        Ok((self.header, set))
    }
}

impl Iterator for DatasetReader {
    type Item = Result<SampleRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.sample_count {
            return None;
        }
        let r = self.read_sample(self.next);
        self.next += 1;
        Some(r)
    }
}

pub fn read_dataset(path: &Path) -> Result<DatasetReader> {
    DatasetReader::open(path)
}
