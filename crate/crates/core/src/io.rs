//! On-disk formats.
//!
//! A volume is a JSON header (`<stem>.hdr`) beside a raw payload
//! (`<stem>.raw`) of little-endian binary32 samples in `[time][depth][lateral]`
//! order. Reports are CSV with a fixed column order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{DampingReport, DampingRow, EvaluationReport, ReportRow};
use crate::synth::SuiteScene;
use crate::volume::{AcquisitionMeta, Geometry, WaveFieldVolume};

pub const FORMAT_NAME: &str = "shearwave-volume";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_EXTENSION: &str = "hdr";
pub const PAYLOAD_EXTENSION: &str = "raw";
const DTYPE: &str = "float32-le";
const ORDER: [&str; 3] = ["time", "depth", "lateral"];

pub const REPORT_HEADER: [&str; 7] = [
    "source_id",
    "frequency_hz",
    "e_true_pa",
    "e_est_pa",
    "valid",
    "v_mps",
    "dominant_frequency_hz",
];

pub const DAMPING_HEADER: [&str; 6] = [
    "source_id",
    "frequency_hz",
    "e_undamped_pa",
    "e_damped_pa",
    "measured_frequency_undamped_hz",
    "measured_frequency_damped_hz",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub order: Vec<String>,
    pub frames: usize,
    pub depth_px: usize,
    pub width_px: usize,
    pub dx_m: f64,
    pub dz_m: f64,
    pub dt_s: f64,
    /// Payload file name, relative to the header.
    pub payload: String,
    pub meta: AcquisitionMeta,
}

impl VolumeHeader {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            width_px: self.width_px,
            depth_px: self.depth_px,
            frames: self.frames,
            dx_m: self.dx_m,
            dz_m: self.dz_m,
            dt_s: self.dt_s,
        }
    }

    pub fn payload_len(&self) -> u64 {
        self.geometry().voxel_count() as u64 * 4
    }
}

/// Header path for a stem inside `dir`.
pub fn header_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.{HEADER_EXTENSION}"))
}

/// Writes `<path>` (header) and the payload beside it; `path` should end in
/// `.hdr`.
pub fn write_volume(volume: &WaveFieldVolume, path: &Path) -> Result<()> {
    if let Some(i) = volume.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidVolume(format!(
            "non-finite value at index {i}"
        )));
    }
    let payload_path = path.with_extension(PAYLOAD_EXTENSION);
    let payload_name = payload_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad volume path {}", path.display())))?
        .to_string();
    let g = volume.geometry();
    let header = VolumeHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        order: ORDER.iter().map(|s| s.to_string()).collect(),
        frames: g.frames,
        depth_px: g.depth_px,
        width_px: g.width_px,
        dx_m: g.dx_m,
        dz_m: g.dz_m,
        dt_s: g.dt_s,
        payload: payload_name,
        meta: volume.meta.clone(),
    };
    let mut text = serde_json::to_string_pretty(&header).expect("header serialises");
    text.push('\n');
    fs::write(&payload_path, volume.payload_bytes()).map_err(|e| Error::io(&payload_path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|source| Error::Header {
        path: path.to_path_buf(),
        source,
    })?;
    if header.format != FORMAT_NAME {
        return Err(Error::UnsupportedFormat(format!(
            "format '{}'",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "version {}",
            header.version
        )));
    }
    if header.dtype != DTYPE || header.order != ORDER {
        return Err(Error::UnsupportedFormat(format!(
            "dtype {} order {:?}",
            header.dtype, header.order
        )));
    }
    Ok(header)
}

pub fn read_volume(path: &Path) -> Result<WaveFieldVolume> {
    let header = read_header(path)?;
    let payload_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let expected = header.payload_len();
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadSize {
            path: payload_path,
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    WaveFieldVolume::new(data, header.geometry(), header.meta)
}

/// Sorted header paths in a directory (non-recursive).
pub fn list_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == HEADER_EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    write_report_rows(&report.per_dataset, path)
}

/// Rows are written sorted by source id, then frequency.
pub fn write_report_rows(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut rows: Vec<&ReportRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        a.source_id
            .cmp(&b.source_id)
            .then(a.frequency_hz.total_cmp(&b.frequency_hz))
    });
    let mut w = create(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.source_id.clone(),
            r.frequency_hz.to_string(),
            r.e_true_pa.to_string(),
            fmt_opt(r.e_est_pa),
            r.valid.to_string(),
            r.v_mps.to_string(),
            r.dominant_frequency_hz.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_f64(field: &str, name: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad {name} '{field}'")))
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name).map(Some)
    }
}

fn check_header(reader: &mut csv::Reader<fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::UnsupportedFormat(format!(
            "unexpected CSV header in {}",
            path.display()
        )));
    }
    Ok(())
}

pub fn read_report_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &REPORT_HEADER, path)?;
    reader
        .records()
        .map(|record| {
            let r = record?;
            Ok(ReportRow {
                source_id: r[0].to_string(),
                frequency_hz: parse_f64(&r[1], "frequency_hz")?,
                e_true_pa: parse_f64(&r[2], "e_true_pa")?,
                e_est_pa: parse_opt(&r[3], "e_est_pa")?,
                valid: r[4]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad valid '{}'", &r[4])))?,
                v_mps: parse_f64(&r[5], "v_mps")?,
                dominant_frequency_hz: parse_f64(&r[6], "dominant_frequency_hz")?,
            })
        })
        .collect()
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    EvaluationReport::from_rows(read_report_rows(path)?)
}

pub fn write_damping_report(report: &DampingReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(DAMPING_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.source_id.clone(),
            r.frequency_hz.to_string(),
            fmt_opt(r.e_undamped_pa),
            fmt_opt(r.e_damped_pa),
            r.measured_frequency_undamped_hz.to_string(),
            r.measured_frequency_damped_hz.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_damping_rows(path: &Path) -> Result<Vec<DampingRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &DAMPING_HEADER, path)?;
    reader
        .records()
        .map(|record| {
            let r = record?;
            Ok(DampingRow {
                source_id: r[0].to_string(),
                frequency_hz: parse_f64(&r[1], "frequency_hz")?,
                e_undamped_pa: parse_opt(&r[2], "e_undamped_pa")?,
                e_damped_pa: parse_opt(&r[3], "e_damped_pa")?,
                measured_frequency_undamped_hz: parse_f64(&r[4], "measured_frequency_undamped_hz")?,
                measured_frequency_damped_hz: parse_f64(&r[5], "measured_frequency_damped_hz")?,
            })
        })
        .collect()
}

/// One generated scene as listed in a suite manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Header file name relative to the manifest.
    pub file: String,
    pub phantom_id: String,
    #[serde(flatten)]
    pub scene: SuiteScene,
}

impl ManifestEntry {
    pub fn new(scene: SuiteScene) -> Self {
        Self {
            file: format!("{}.{HEADER_EXTENSION}", scene.file_stem()),
            phantom_id: scene.phantom_id(),
            scene,
        }
    }
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, entries).expect("manifest serialises");
    file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Header {
        path: path.to_path_buf(),
        source,
    })
}
