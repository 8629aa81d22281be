//! Sample records and the binary dataset file format.
//!
//! File layout (little-endian throughout):
//!   magic "AIMM" | version u32 = 1 | n_records u32 | n_t u16 | n_c u16 |
//!   meta_len u32 | UTF-8 JSON metadata | records...
//!
//! Each record:
//!   256-byte occupancy grid (row-major u8) | bs_xy 2xf32 | ue_xy 2xf32 |
//!   csi 2*n_t*n_c xf32 (antenna-major rows, (re, im) interleaved) |
//!   position 2xf32 (meters) | los u8 | path_loss_db f32 |
//!   precoder 2*n_t xf32 | beam_index u16
//!
//! Round trips are byte-identical.

use crate::channel::{csi_matrix, trace_paths, ChannelConfig};
use crate::error::{Error, Result};
use crate::labels::make_labels;
use crate::par::{par_map_indexed, seq_map_indexed};
use crate::rng::{domain, SplitMix64};
use crate::scene::{generate_scene, occupancy_grid, place_free_point, Scene, GRID};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"AIMM";
pub const VERSION: u32 = 1;
pub const GRID_BYTES: usize = GRID * GRID;
/// Environment modality width: occupancy grid + normalized BS and UE coords.
pub const ENV_DIM: usize = GRID_BYTES + 4;

/// One generated sample, stored exactly as serialized (f32 quantized).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub grid: [u8; GRID_BYTES],
    /// BS position normalized to [0,1] by side_length.
    pub bs_xy: [f32; 2],
    /// UE position normalized to [0,1] by side_length.
    pub ue_xy: [f32; 2],
    /// Interleaved (re, im), antenna-major rows: 2 * n_t * n_c floats.
    pub csi: Vec<f32>,
    /// UE position in meters.
    pub position: [f32; 2],
    pub los: bool,
    pub path_loss_db: f32,
    /// Interleaved (re, im): 2 * n_t floats, unit norm.
    pub precoder: Vec<f32>,
    pub beam_index: u16,
}

impl SampleRecord {
    /// Environment modality input: grid bits + normalized BS/UE coordinates.
    pub fn env_vector(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(ENV_DIM);
        v.extend(self.grid.iter().map(|&b| b as f32));
        v.extend_from_slice(&self.bs_xy);
        v.extend_from_slice(&self.ue_xy);
        v
    }

    /// Channel modality input: CSI scaled by the dataset RMS amplitude.
    pub fn csi_vector(&self, csi_rms: f64) -> Vec<f32> {
        let inv = 1.0 / csi_rms as f32;
        self.csi.iter().map(|&v| v * inv).collect()
    }
}

/// Dataset-level metadata carried in the JSON blob.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub config: ChannelConfig,
    pub seed: u64,
    pub area_index: u64,
    pub side_length: f64,
    pub bs_xy: [f64; 2],
    pub bs_boresight: f64,
    pub n_buildings: usize,
    /// Root-mean-square CSI entry amplitude over the whole dataset.
    pub csi_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<SampleRecord>,
}

// ── generation ──────────────────────────────────────────────────────────

/// Generate one sample: place the UE, trace paths, label. Outage
/// placements are regenerated with further draws from the same per-sample
/// stream, so the result is deterministic in (seed, area_index, sample_index).
pub fn generate_sample(
    seed: u64,
    area_index: u64,
    sample_index: u64,
    scene: &Scene,
    config: &ChannelConfig,
) -> SampleRecord {
    let mut rng = SplitMix64::stream(seed, &[domain::UE_PLACEMENT, area_index, sample_index]);
    let grid = occupancy_grid(scene);
    let side = scene.side_length;
    loop {
        let ue = match place_free_point(&mut rng, side, &scene.buildings) {
            Some(p) => p,
            None => continue,
        };
        let mut s = scene.clone();
        s.ue_pos = ue;
        let paths = match trace_paths(&s, config) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if paths.is_empty() {
            continue; // outage: regenerate with a new UE position
        }
        let csi = csi_matrix(&paths, config);
        let labels = make_labels(&s, &paths, &csi, config).expect("non-empty path set");
        let mut precoder = Vec::with_capacity(2 * config.n_t);
        for &(re, im) in &labels.precoder {
            precoder.push(re as f32);
            precoder.push(im as f32);
        }
        return SampleRecord {
            grid,
            bs_xy: [(scene.bs_pos.x / side) as f32, (scene.bs_pos.y / side) as f32],
            ue_xy: [(ue.x / side) as f32, (ue.y / side) as f32],
            csi: csi.entries().iter().map(|&v| v as f32).collect(),
            position: [labels.position.0 as f32, labels.position.1 as f32],
            los: labels.los,
            path_loss_db: labels.path_loss_db as f32,
            precoder,
            beam_index: labels.beam_index as u16,
        };
    }
}

fn assemble_dataset(
    seed: u64,
    area_index: u64,
    scene: Scene,
    config: &ChannelConfig,
    records: Vec<SampleRecord>,
) -> Dataset {
    // dataset-wide RMS CSI amplitude, for encoder input normalization
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for r in &records {
        for pair in r.csi.chunks_exact(2) {
            sum_sq += (pair[0] as f64).powi(2) + (pair[1] as f64).powi(2);
            count += 1;
        }
    }
    let csi_rms = if count > 0 { (sum_sq / count as f64).sqrt() } else { 1.0 };
    Dataset {
        meta: DatasetMeta {
            config: config.clone(),
            seed,
            area_index,
            side_length: scene.side_length,
            bs_xy: [scene.bs_pos.x, scene.bs_pos.y],
            bs_boresight: scene.bs_boresight,
            n_buildings: scene.buildings.len(),
            csi_rms,
        },
        records,
    }
}

/// Generate a full area dataset (parallel over samples when the `parallel`
/// feature is on; output order is by sample index either way).
pub fn generate_area_dataset(
    seed: u64,
    area_index: u64,
    n_samples: usize,
    config: &ChannelConfig,
) -> Result<Dataset> {
    config.validate()?;
    let scene = generate_scene(seed, area_index);
    let records = par_map_indexed(n_samples, |i| {
        generate_sample(seed, area_index, i as u64, &scene, config)
    });
    Ok(assemble_dataset(seed, area_index, scene, config, records))
}

/// Sequential twin of [`generate_area_dataset`] (bench baseline; results
/// are identical).
pub fn generate_area_dataset_seq(
    seed: u64,
    area_index: u64,
    n_samples: usize,
    config: &ChannelConfig,
) -> Result<Dataset> {
    config.validate()?;
    let scene = generate_scene(seed, area_index);
    let records = seq_map_indexed(n_samples, |i| {
        generate_sample(seed, area_index, i as u64, &scene, config)
    });
    Ok(assemble_dataset(seed, area_index, scene, config, records))
}

// ── serialization ───────────────────────────────────────────────────────

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }
    fn need(&self, n: usize, what: &str) -> Result<()> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                what: format!("truncated while reading {} ({} bytes missing)", what, self.pos + n - self.buf.len()),
            });
        }
        Ok(())
    }
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.need(n, what)?;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.records.is_empty() {
        return Err(Error::Config("refusing to write an empty dataset".into()));
    }
    let n_t = ds.meta.config.n_t;
    let n_c = ds.meta.config.n_c;
    let mut w = ByteWriter::new();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u32(ds.records.len() as u32);
    w.u16(n_t as u16);
    w.u16(n_c as u16);
    let meta = serde_json::to_string(&ds.meta)?;
    w.u32(meta.len() as u32);
    w.bytes(meta.as_bytes());
    for (i, r) in ds.records.iter().enumerate() {
        if r.csi.len() != 2 * n_t * n_c || r.precoder.len() != 2 * n_t {
            return Err(Error::Dimension(format!("record {i} has wrong csi/precoder length")));
        }
        w.bytes(&r.grid);
        for v in r.bs_xy {
            w.f32(v);
        }
        for v in r.ue_xy {
            w.f32(v);
        }
        for &v in &r.csi {
            w.f32(v);
        }
        for v in r.position {
            w.f32(v);
        }
        w.bytes(&[r.los as u8]);
        w.f32(r.path_loss_db);
        for &v in &r.precoder {
            w.f32(v);
        }
        w.u16(r.beam_index);
    }
    Ok(w.buf)
}

pub fn dataset_from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, what: format!("bad magic {:?}, want {:?}", magic, MAGIC) });
    }
    let ver_off = r.pos as u64;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: ver_off, what: format!("unsupported version {version}") });
    }
    let n_records = r.u32("record count")? as usize;
    let n_t = r.u16("n_t")? as usize;
    let n_c = r.u16("n_c")? as usize;
    let meta_len = r.u32("metadata length")? as usize;
    let meta_off = r.pos as u64;
    let meta_bytes = r.take(meta_len, "metadata json")?;
    let meta: DatasetMeta = serde_json::from_slice(meta_bytes).map_err(|e| Error::Format {
        offset: meta_off,
        what: format!("metadata json: {e}"),
    })?;
    if meta.config.n_t != n_t || meta.config.n_c != n_c {
        return Err(Error::Format {
            offset: meta_off,
            what: format!(
                "header dims {}x{} disagree with metadata config {}x{}",
                n_t, n_c, meta.config.n_t, meta.config.n_c
            ),
        });
    }

    let record_bytes = GRID_BYTES + 8 + 8 + 8 * n_t * n_c + 8 + 1 + 4 + 8 * n_t + 2;
    let expect_total = r.pos + n_records * record_bytes;
    if buf.len() != expect_total {
        return Err(Error::Format {
            offset: buf.len().min(expect_total) as u64,
            what: format!(
                "header promises {} records of {} bytes (file should be {} bytes, is {})",
                n_records,
                record_bytes,
                expect_total,
                buf.len()
            ),
        });
    }

    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let mut grid = [0u8; GRID_BYTES];
        grid.copy_from_slice(r.take(GRID_BYTES, "grid")?);
        let bs_xy = [r.f32("bs_x")?, r.f32("bs_y")?];
        let ue_xy = [r.f32("ue_x")?, r.f32("ue_y")?];
        let mut csi = Vec::with_capacity(2 * n_t * n_c);
        for _ in 0..2 * n_t * n_c {
            csi.push(r.f32("csi")?);
        }
        let position = [r.f32("pos_x")?, r.f32("pos_y")?];
        let los_off = r.pos as u64;
        let los_byte = r.take(1, "los")?[0];
        let los = match los_byte {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Format {
                    offset: los_off,
                    what: format!("record {i}: los byte must be 0 or 1, got {v}"),
                })
            }
        };
        let path_loss_db = r.f32("path_loss_db")?;
        let mut precoder = Vec::with_capacity(2 * n_t);
        for _ in 0..2 * n_t {
            precoder.push(r.f32("precoder")?);
        }
        let beam_index = r.u16("beam_index")?;
        records.push(SampleRecord {
            grid,
            bs_xy,
            ue_xy,
            csi,
            position,
            los,
            path_loss_db,
            precoder,
            beam_index,
        });
    }
    Ok(Dataset { meta, records })
}

pub fn write_dataset<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let bytes = dataset_to_bytes(ds)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    dataset_from_bytes(&buf)
}
