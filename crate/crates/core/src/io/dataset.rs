//! Datasets: the native JSON schema, VisDrone-style txt annotation files, and manifests that
//! reference such files.
//!
//! Native JSON:
//!
//! ```json
//! {"categories": ["car", "bus"],
//!  "images": [{"id": 1, "width": 1920, "height": 1080,
//!              "annotations": [{"x": 10, "y": 20, "w": 30, "h": 40, "category": 0, "occlusion_ratio": 0.2}]}]}
//! ```
//!
//! In a manifest, `annotations` may instead be a path (relative to the manifest) of a
//! VisDrone txt file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Annotation, BBox};
use crate::tpp::SceneSpec;

/// VisDrone-DET category names, indexed by id.
pub const VISDRONE_CATEGORIES: [&str; 12] = [
    "ignored-regions",
    "pedestrian",
    "people",
    "bicycle",
    "car",
    "van",
    "truck",
    "tricycle",
    "awning-tricycle",
    "bus",
    "motor",
    "others",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationFormat {
    NativeJson,
    VisdroneTxt,
}

impl std::str::FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native-json" | "native_json" | "json" => Ok(AnnotationFormat::NativeJson),
            "visdrone-txt" | "visdrone_txt" | "visdrone" => Ok(AnnotationFormat::VisdroneTxt),
            other => Err(Error::invalid(format!("unknown annotation format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisdroneParams {
    /// Occlusion ratio assigned to occlusion levels 0, 1 and 2.
    pub occlusion_levels: [f64; 3],
    /// Skip rows of category 0 ("ignored regions").
    pub drop_ignored: bool,
}

impl Default for VisdroneParams {
    fn default() -> Self {
        VisdroneParams {
            occlusion_levels: [0.0, 0.25, 0.75],
            drop_ignored: false,
        }
    }
}

impl VisdroneParams {
    pub fn validate(&self) -> Result<()> {
        if self.occlusion_levels.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid(format!("occlusion level ratios {:?} must lie in [0, 1]", self.occlusion_levels)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl ImageRecord {
    /// Root synthetic scene over this image's annotations, in file order.
    pub fn scene(&self) -> Result<SceneSpec> {
        SceneSpec::from_annotations(self.width, self.height, &self.annotations)
    }

    pub fn from_scene(id: u64, scene: &SceneSpec) -> Self {
        ImageRecord {
            id,
            width: scene.img_w,
            height: scene.img_h,
            annotations: scene.annotations(),
        }
    }
}

/// Images with inline annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    #[serde(default)]
    pub categories: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.id) {
                return Err(Error::invalid(format!("duplicate image id {}", img.id)));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::invalid(format!("image {} has non-positive size {}x{}", img.id, img.width, img.height)));
            }
            for (i, a) in img.annotations.iter().enumerate() {
                a.validate()
                    .map_err(|e| Error::invalid(format!("image {}, annotation {i}: {e}", img.id)))?;
                if !self.categories.is_empty() && a.category as usize >= self.categories.len() {
                    return Err(Error::invalid(format!(
                        "image {}, annotation {i}: unknown category {}; valid ids are 0..={}",
                        img.id,
                        a.category,
                        self.categories.len() - 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn annotations(&self) -> Vec<Vec<Annotation>> {
        self.images.iter().map(|i| i.annotations.clone()).collect()
    }

    pub fn scenes(&self) -> Result<Vec<SceneSpec>> {
        self.images.iter().map(ImageRecord::scene).collect()
    }

    pub fn from_scenes(scenes: &[SceneSpec], categories: Vec<String>) -> Self {
        Dataset {
            categories,
            images: scenes.iter().enumerate().map(|(i, s)| ImageRecord::from_scene(i as u64, s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotationSource {
    Inline(Vec<Annotation>),
    /// VisDrone txt file, relative to the manifest.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub annotations: AnnotationSource,
}

/// Dataset description whose images may point at external annotation files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub categories: Vec<String>,
    pub images: Vec<ManifestImage>,
}

impl DatasetManifest {
    /// Reads every referenced file; relative paths are taken from `base`.
    pub fn resolve(self, base: &Path, visdrone: &VisdroneParams) -> Result<Dataset> {
        let images = self
            .images
            .into_iter()
            .map(|m| {
                let annotations = match m.annotations {
                    AnnotationSource::Inline(a) => a,
                    AnnotationSource::File(p) => {
                        let path = if p.is_absolute() { p } else { base.join(p) };
                        parse_visdrone(&super::read_to_string(&path)?, &path, visdrone)?
                    }
                };
                Ok(ImageRecord {
                    id: m.id,
                    width: m.width,
                    height: m.height,
                    annotations,
                })
            })
            .collect::<Result<_>>()?;
        let ds = Dataset {
            categories: self.categories,
            images,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Loads a native dataset or a manifest. A blank file is an empty dataset.
pub fn load_dataset(path: &Path, visdrone: &VisdroneParams) -> Result<Dataset> {
    let text = super::read_to_string(path)?;
    if text.trim().is_empty() {
        return Ok(Dataset::default());
    }
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| super::json_error(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest.resolve(base, visdrone).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::invalid(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    super::write_json(path, dataset)
}

/// Per-image annotation lists. A VisDrone file holds a single image.
pub fn load_annotations(path: &Path, format: AnnotationFormat, visdrone: &VisdroneParams) -> Result<Vec<Vec<Annotation>>> {
    match format {
        AnnotationFormat::NativeJson => Ok(load_dataset(path, visdrone)?.annotations()),
        AnnotationFormat::VisdroneTxt => {
            let anns = parse_visdrone(&super::read_to_string(path)?, path, visdrone)?;
            Ok(if anns.is_empty() { Vec::new() } else { vec![anns] })
        }
    }
}

/// Parses VisDrone-DET rows `left,top,width,height,score,category,truncation,occlusion`.
/// Blank lines and a trailing comma are tolerated; `path` is only used in error messages.
pub fn parse_visdrone(text: &str, path: &Path, params: &VisdroneParams) -> Result<Vec<Annotation>> {
    params.validate()?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.strip_suffix(',').unwrap_or(line).split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 comma-separated fields, found {}", fields.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{name} '{}' is not a number", fields[k])))
        };
        let int = |k: usize, name: &str| -> Result<u32> {
            fields[k]
                .parse::<u32>()
                .map_err(|_| err(format!("{name} '{}' is not a non-negative integer", fields[k])))
        };
        let bbox = BBox {
            x: num(0, "bbox_left")?,
            y: num(1, "bbox_top")?,
            w: num(2, "bbox_width")?,
            h: num(3, "bbox_height")?,
        };
        bbox.validate().map_err(|e| err(e.to_string()))?;
        num(4, "score")?;
        let category = int(5, "object_category")?;
        if category as usize >= VISDRONE_CATEGORIES.len() {
            return Err(err(format!(
                "unknown category id {category}; valid ids are 0..={} ({})",
                VISDRONE_CATEGORIES.len() - 1,
                VISDRONE_CATEGORIES.join(", ")
            )));
        }
        int(6, "truncation")?;
        let level = int(7, "occlusion")?;
        let ratio = *params
            .occlusion_levels
            .get(level as usize)
            .ok_or_else(|| err(format!("occlusion level {level} outside 0..=2")))?;
        if params.drop_ignored && category == 0 {
            continue;
        }
        out.push(Annotation::with_occlusion(bbox, category, ratio));
    }
    Ok(out)
}
