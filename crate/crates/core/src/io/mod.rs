//! Annotation ingestion, configuration, and on-disk formats for maps, regions, detections
//! and reports.

mod config;
mod dataset;
mod omap;

pub use config::{Config, TppSection};
pub use dataset::{
    load_annotations, load_dataset, parse_visdrone, save_dataset, AnnotationFormat, AnnotationSource, Dataset, DatasetManifest, ImageRecord,
    ManifestImage, VisdroneParams, VISDRONE_CATEGORIES,
};
pub use omap::{decode_omap, encode_omap, load_omap, save_omap, OMAP_MAGIC};

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::geometry::Detection;
use crate::region_select::Region;

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Pretty-printed JSON; floats are written with shortest round-trip precision.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save_regions(path: &Path, regions: &[Region]) -> Result<()> {
    write_json(path, regions)
}

pub fn load_regions(path: &Path) -> Result<Vec<Region>> {
    let regions: Vec<Region> = read_json(path)?;
    for (i, r) in regions.iter().enumerate() {
        r.rect.validate().map_err(|e| Error::Format(format!("{}: region {i}: {e}", path.display())))?;
    }
    Ok(regions)
}

/// Per-image detection lists.
pub fn save_detections(path: &Path, dets: &[Vec<Detection>]) -> Result<()> {
    write_json(path, dets)
}

pub fn load_detections(path: &Path) -> Result<Vec<Vec<Detection>>> {
    let dets: Vec<Vec<Detection>> = read_json(path)?;
    for (img, list) in dets.iter().enumerate() {
        for (i, d) in list.iter().enumerate() {
            d.validate().map_err(|e| Error::Format(format!("{}: image {img}, detection {i}: {e}", path.display())))?;
        }
    }
    Ok(dets)
}

pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_json(path, report)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let report: EvalReport = read_json(path)?;
    report.validate().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(report)
}
