//! On-disk artifacts: clip manifests, label-map PNGs, masklet JSONL streams,
//! and `MFEA` feature maps.
//!
//! Relative paths inside a manifest resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelMap, Masklet, MaskletSet, DEFAULT_IGNORE_LABEL};

pub const FEATURE_MAGIC: &[u8; 4] = b"MFEA";

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_LABEL
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masklet_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
}

/// Description of one video clip and where its per-frame artifacts live.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    #[serde(default = "default_ignore")]
    pub ignore_label: u8,
    /// Clip-wide masklet stream; per-frame `masklet_path`s are read as well.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masklets: Option<PathBuf>,
    pub frames: Vec<FrameEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ClipManifest {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != i {
                return Err(Error::Validation(format!(
                    "clip {}: frame entry {i} has frame_index {}; indices must run 0,1,2,...",
                    self.clip_id, f.frame_index
                )));
            }
        }
        if self.num_classes == 0 || self.num_classes > 256 {
            return Err(Error::Validation(format!(
                "clip {}: num_classes {} must lie in 1..=256 for 8-bit label maps",
                self.clip_id, self.num_classes
            )));
        }
        if self.ignore_label == 255 && self.num_classes > 254 {
            return Err(Error::Validation(format!(
                "clip {}: num_classes {} exceeds 254 with ignore label 255",
                self.clip_id, self.num_classes
            )));
        }
        Ok(())
    }

    /// Resolve a manifest-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn load_labels(&self, pick: impl Fn(&FrameEntry) -> Option<&PathBuf>, what: &str) -> Result<Vec<LabelMap>> {
        self.frames
            .iter()
            .map(|f| {
                let p = pick(f).ok_or_else(|| Error::File {
                    path: self.base_dir.clone(),
                    message: format!("clip {} frame {} has no {what} path", self.clip_id, f.frame_index),
                })?;
                let path = self.resolve(p);
                let mut map = read_labelmap(&path)?;
                map = LabelMap::new(map.width(), map.height(), map.into_labels(), self.ignore_label)?;
                map.check_same_dims(self.dims()).map_err(|e| e.at(&path))?;
                map.validate(self.num_classes).map_err(|e| e.at(&path))?;
                Ok(map)
            })
            .collect()
    }

    pub fn load_gt(&self) -> Result<Vec<LabelMap>> {
        self.load_labels(|f| f.gt_path.as_ref(), "gt")
    }

    /// Predictions may carry out-of-range labels; those are scored as wrong.
    pub fn load_pred(&self) -> Result<Vec<LabelMap>> {
        self.frames
            .iter()
            .map(|f| {
                let p = f.pred_path.as_ref().ok_or_else(|| Error::File {
                    path: self.base_dir.clone(),
                    message: format!("clip {} frame {} has no pred path", self.clip_id, f.frame_index),
                })?;
                let path = self.resolve(p);
                let map = read_labelmap(&path)?;
                let map = LabelMap::new(map.width(), map.height(), map.into_labels(), self.ignore_label)?;
                map.check_same_dims(self.dims()).map_err(|e| e.at(&path))?;
                Ok(map)
            })
            .collect()
    }

    pub fn has_gt(&self) -> bool {
        self.frames.iter().all(|f| f.gt_path.is_some())
    }

    pub fn has_pred(&self) -> bool {
        self.frames.iter().all(|f| f.pred_path.is_some())
    }

    /// Masklets for every frame (empty sets for frames without detections).
    pub fn load_masklets(&self) -> Result<Vec<MaskletSet>> {
        let mut paths: Vec<PathBuf> = Vec::new();
        if let Some(p) = &self.masklets {
            paths.push(self.resolve(p));
        }
        for f in &self.frames {
            if let Some(p) = &f.masklet_path {
                let p = self.resolve(p);
                if !paths.contains(&p) {
                    paths.push(p);
                }
            }
        }
        let mut by_frame: BTreeMap<usize, Vec<Masklet>> = BTreeMap::new();
        for path in &paths {
            for set in read_masklets(path, Some(self.dims()))? {
                by_frame
                    .entry(set.frame_index())
                    .or_default()
                    .extend(set.iter().cloned());
            }
        }
        if let Some((&f, _)) = by_frame.range(self.frames.len()..).next() {
            return Err(Error::Validation(format!(
                "clip {}: masklet on frame {f} but clip has {} frames",
                self.clip_id,
                self.frames.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for m in by_frame.values().flatten() {
            if !seen.insert(m.masklet_id()) {
                return Err(Error::Validation(format!(
                    "clip {}: duplicate masklet_id {}",
                    self.clip_id,
                    m.masklet_id()
                )));
            }
        }
        (0..self.frames.len())
            .map(|i| MaskletSet::new(i, by_frame.remove(&i).unwrap_or_default()))
            .collect()
    }

    pub fn has_features(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.feature_path.is_some())
    }

    pub fn load_feature(&self, frame: usize) -> Result<FeatureMap> {
        let entry = &self.frames[frame];
        let p = entry.feature_path.as_ref().ok_or_else(|| Error::File {
            path: self.base_dir.clone(),
            message: format!("clip {} frame {frame} has no feature path", self.clip_id),
        })?;
        read_featuremap(&self.resolve(p))
    }
}

pub fn read_manifest(path: &Path) -> Result<ClipManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: ClipManifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()).at(path))?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate().map_err(|e| e.at(path))?;
    Ok(m)
}

pub fn write_manifest(m: &ClipManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Index file listing several clip manifests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub clips: Vec<PathBuf>,
}

/// Load either a single clip manifest or a `{"clips": [...]}` index of them.
pub fn read_dataset(path: &Path) -> Result<Vec<ClipManifest>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()).at(path))?;
    if value.get("clips").is_some() {
        let index: DatasetIndex = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()).at(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        index
            .clips
            .iter()
            .map(|p| read_manifest(&if p.is_absolute() { p.clone() } else { base.join(p) }))
            .collect()
    } else {
        Ok(vec![read_manifest(path)?])
    }
}

pub fn write_dataset_index(index: &DatasetIndex, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(index).expect("index serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Read an 8-bit single-channel PNG. Pixel values are taken verbatim as
/// class ids; palette images yield their raw indices.
pub fn read_labelmap(path: &Path) -> Result<LabelMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_labelmap(BufReader::new(file)).map_err(|e| e.at(path))
}

pub fn decode_labelmap(r: impl BufRead + std::io::Seek) -> Result<LabelMap> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    match info.color_type {
        png::ColorType::Grayscale | png::ColorType::Indexed => {}
        other => {
            return Err(Error::Format(format!(
                "expected single-channel (grayscale or palette) PNG, got {other:?}"
            )))
        }
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("expected 8-bit depth, got {:?}", info.bit_depth)));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h)];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    let labels = if frame.line_size == w {
        buf
    } else {
        buf.chunks(frame.line_size).flat_map(|row| &row[..w]).copied().collect()
    };
    LabelMap::new(w, h, labels, DEFAULT_IGNORE_LABEL)
}

/// Write an 8-bit grayscale PNG holding the labels verbatim.
pub fn write_labelmap(map: &LabelMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_labelmap(map, BufWriter::new(file)).map_err(|e| e.at(path))
}

pub fn encode_labelmap(map: &LabelMap, w: impl Write) -> Result<()> {
    let width = u32::try_from(map.width()).map_err(|_| Error::Range("width exceeds u32".into()))?;
    let height = u32::try_from(map.height()).map_err(|_| Error::Range("height exceeds u32".into()))?;
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer
        .write_image_data(map.labels())
        .map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))
}

/// One line of a masklet stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskletRecord {
    pub frame_index: usize,
    pub masklet_id: u64,
    pub pred_iou: f64,
    pub stability: f64,
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl MaskletRecord {
    pub fn from_masklet(m: &Masklet) -> Self {
        Self {
            frame_index: m.frame_index(),
            masklet_id: m.masklet_id(),
            pred_iou: m.pred_iou(),
            stability: m.stability(),
            width: m.mask().width(),
            height: m.mask().height(),
            counts: m.mask().counts().to_vec(),
        }
    }

    /// Validate into a masklet; `dims` is the clip size when known.
    pub fn into_masklet(self, dims: Option<(usize, usize)>) -> Result<Masklet> {
        if let Some(d) = dims {
            if d != (self.width, self.height) {
                return Err(Error::Validation(format!(
                    "masklet {} is {}x{}, clip is {}x{}",
                    self.masklet_id, self.width, self.height, d.0, d.1
                )));
            }
        }
        let mask = BinaryMask::from_counts(self.width, self.height, self.counts)?;
        let m = Masklet::new(mask, self.frame_index, self.masklet_id, self.pred_iou, self.stability)?;
        if m.area() == 0 {
            return Err(Error::Validation(format!(
                "masklet {} on frame {} has zero area",
                m.masklet_id(),
                m.frame_index()
            )));
        }
        Ok(m)
    }
}

/// Parse a JSONL masklet stream into per-frame sets ordered by frame index.
/// Record order is preserved within a frame.
pub fn read_masklets(path: &Path, dims: Option<(usize, usize)>) -> Result<Vec<MaskletSet>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_masklets(BufReader::new(file), dims).map_err(|e| e.at(path))
}

pub fn parse_masklets(r: impl BufRead, dims: Option<(usize, usize)>) -> Result<Vec<MaskletSet>> {
    let mut by_frame: BTreeMap<usize, Vec<Masklet>> = BTreeMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MaskletRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let m = rec.into_masklet(dims).map_err(|e| match e {
            Error::Format(s) => Error::Format(format!("line {}: {s}", lineno + 1)),
            Error::Validation(s) => Error::Validation(format!("line {}: {s}", lineno + 1)),
            other => other,
        })?;
        by_frame.entry(m.frame_index()).or_default().push(m);
    }
    by_frame.into_iter().map(|(f, ms)| MaskletSet::new(f, ms)).collect()
}

pub fn write_masklets<'a>(path: &Path, sets: impl IntoIterator<Item = &'a MaskletSet>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_masklets(&mut w, sets).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_masklets<'a>(mut w: impl Write, sets: impl IntoIterator<Item = &'a MaskletSet>) -> std::io::Result<()> {
    for set in sets {
        for m in set {
            let line = serde_json::to_string(&MaskletRecord::from_masklet(m)).expect("record serializes");
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

/// Dense per-pixel feature vectors, row-major and pixel-major
/// (`values[(y * width + x) * dim + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height * dim {
            return Err(Error::Format(format!(
                "feature map {width}x{height}x{dim} needs {} values, got {}",
                width * height * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value at offset {i}")));
        }
        Ok(Self {
            width,
            height,
            dim,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Feature vector of the cell at `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let o = (y * self.width + x) * self.dim;
        &self.values[o..o + self.dim]
    }
}

pub fn read_featuremap(path: &Path) -> Result<FeatureMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_featuremap(BufReader::new(file)).map_err(|e| e.at(path))
}

pub fn decode_featuremap(mut r: impl Read) -> Result<FeatureMap> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated MFEA header".into()))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"MFEA\"",
            &header[..4]
        )));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (width, height, dim) = (field(4), field(8), field(12));
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Format("MFEA dimensions overflow".into()))?;
    let mut bytes = Vec::with_capacity(n.saturating_mul(4).min(1 << 30));
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "MFEA header declares {width}x{height}x{dim} = {n} floats but payload holds {} bytes ({} floats)",
            bytes.len(),
            bytes.len() / 4
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMap::new(width, height, dim, values)
}

pub fn write_featuremap(map: &FeatureMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_featuremap(map, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_featuremap(map: &FeatureMap, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    for v in [map.width, map.height, map.dim] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in &map.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
