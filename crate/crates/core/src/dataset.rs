//! On-disk clip containers, per-avatar metadata and dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::avatar::{AvatarSpec, SkinTypeBin};
use crate::error::{Error, Result};
use crate::physio::{load_waveform_csv, write_waveform_csv, WaveformKind};
use crate::render::{Frame, VideoClip};

pub const CLIP_MAGIC: &[u8; 4] = b"PHYS";
pub const CLIP_VERSION: u32 = 1;
/// dtype code for little-endian f32.
pub const DTYPE_F32: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 16;

pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const PPG_FILE: &str = "ppg.csv";
pub const RESP_FILE: &str = "resp.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AVATARS_DIR: &str = "avatars";

/// Decoded clip container: dims `[T, H, W, 3]` plus the flat payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipContainer {
    pub dims: [u32; 4],
    pub data: Vec<f32>,
}

impl ClipContainer {
    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let (h, w) = frames.first().map_or((0, 0), |f| (f.height, f.width));
        let mut data = Vec::with_capacity(frames.len() * h * w * 3);
        for f in frames {
            if f.height != h || f.width != w {
                return Err(Error::ShapeMismatch(format!(
                    "frame {}x{} in a {h}x{w} clip",
                    f.height, f.width
                )));
            }
            data.extend_from_slice(&f.pixels);
        }
        let dim = |x: usize| {
            u32::try_from(x).map_err(|_| Error::CorruptContainer(format!("dimension {x} too large")))
        };
        Ok(Self {
            dims: [dim(frames.len())?, dim(h)?, dim(w)?, 3],
            data,
        })
    }

    /// Payload size implied by `dims`, `None` on overflow.
    pub fn payload_len(dims: [u32; 4]) -> Option<usize> {
        dims.iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d as usize))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(CLIP_MAGIC);
        out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: String| Error::CorruptContainer(m);
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
        }
        if &bytes[..4] != CLIP_MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CLIP_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let dtype = word(8);
        if dtype != DTYPE_F32 {
            return Err(corrupt(format!("unsupported dtype {dtype}")));
        }
        let dims = [word(12), word(16), word(20), word(24)];
        if dims[3] != 3 {
            return Err(corrupt(format!("expected 3 channels, found {}", dims[3])));
        }
        let need = Self::payload_len(dims).ok_or_else(|| corrupt("dimension overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != need {
            return Err(corrupt(format!(
                "payload is {} bytes, dims require {need}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub spec: AvatarSpec,
    pub fs: f64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Per-frame skin mask, bit-packed LSB first, base64.
    pub skin_masks: Vec<String>,
}

fn pack_mask(mask: &[bool]) -> String {
    let mut bytes = vec![0u8; mask.len().div_ceil(8)];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    B64.encode(bytes)
}

fn unpack_mask(s: &str, n: usize) -> Result<Vec<bool>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Schema(format!("skin mask: {e}")))?;
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::Schema(format!(
            "skin mask has {} bytes, expected {}",
            bytes.len(),
            n.div_ceil(8)
        )));
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Paths written for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPaths {
    pub meta: PathBuf,
    pub frames: PathBuf,
    pub ppg: PathBuf,
    pub resp: PathBuf,
}

impl ClipPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            meta: dir.join(META_FILE),
            frames: dir.join(FRAMES_FILE),
            ppg: dir.join(PPG_FILE),
            resp: dir.join(RESP_FILE),
        }
    }
}

fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes frames, metadata and ground-truth waveforms into `dir`.
pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<ClipPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ClipPaths::in_dir(dir);
    let container = ClipContainer::from_frames(&clip.frames)?;
    fs::write(&paths.frames, container.to_bytes()).map_err(|e| Error::io(&paths.frames, e))?;
    let meta = ClipMeta {
        spec: clip.spec.clone(),
        fs: clip.fs,
        height: clip.height(),
        width: clip.width(),
        frames: clip.len(),
        skin_masks: clip.frames.iter().map(|f| pack_mask(&f.skin_mask)).collect(),
    };
    write_json(&paths.meta, &meta)?;
    write_waveform_csv(&paths.ppg, &clip.ppg_gt)?;
    write_waveform_csv(&paths.resp, &clip.resp_gt)?;
    Ok(paths)
}

pub fn read_clip_meta(dir: &Path) -> Result<ClipMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Reads a clip written by [`write_clip`].
pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let paths = ClipPaths::in_dir(dir);
    let meta = read_clip_meta(dir)?;
    let bytes = fs::read(&paths.frames).map_err(|e| Error::io(&paths.frames, e))?;
    let c = ClipContainer::from_bytes(&bytes)?;
    let [t, h, w, _] = c.dims.map(|d| d as usize);
    if (t, h, w) != (meta.frames, meta.height, meta.width) || meta.skin_masks.len() != t {
        return Err(Error::Schema(format!(
            "{}: metadata disagrees with container dims {:?}",
            paths.meta.display(),
            c.dims
        )));
    }
    let frame_len = h * w * 3;
    let frames = (0..t)
        .map(|i| {
            Ok(Frame {
                height: h,
                width: w,
                pixels: c.data[i * frame_len..(i + 1) * frame_len].to_vec(),
                skin_mask: unpack_mask(&meta.skin_masks[i], h * w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ppg = load_waveform_csv::<f64>(&paths.ppg, WaveformKind::Ppg)?;
    let mut resp = load_waveform_csv::<f64>(&paths.resp, WaveformKind::Respiration)?;
    // the CSV only carries timestamps; keep the exact rate from metadata
    ppg.fs = meta.fs;
    resp.fs = meta.fs;
    Ok(VideoClip {
        frames,
        fs: meta.fs,
        ppg_gt: ppg,
        resp_gt: resp,
        spec: meta.spec,
    })
}

/// One clip in a dataset. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub avatar_id: String,
    pub meta: String,
    pub frames: String,
    pub ppg: String,
    pub resp: String,
    pub melanin: f64,
    pub fitzpatrick_bin: SkinTypeBin,
    pub yaw_velocity_dps: f64,
    pub gt_pulse_bpm: f64,
    pub gt_breathing_bpm: f64,
}

impl ManifestEntry {
    /// Entry for a clip stored under `avatars/<id>/`.
    pub fn for_clip(clip: &VideoClip, bin: SkinTypeBin) -> Self {
        let id = &clip.spec.id;
        let rel = |f: &str| format!("{AVATARS_DIR}/{id}/{f}");
        Self {
            avatar_id: id.clone(),
            meta: rel(META_FILE),
            frames: rel(FRAMES_FILE),
            ppg: rel(PPG_FILE),
            resp: rel(RESP_FILE),
            melanin: clip.spec.melanin,
            fitzpatrick_bin: bin,
            yaw_velocity_dps: clip.spec.head_yaw_velocity_dps,
            gt_pulse_bpm: clip.spec.nominal_pulse_bpm().unwrap_or(f64::NAN),
            gt_breathing_bpm: clip.spec.nominal_breathing_bpm().unwrap_or(f64::NAN),
        }
    }

    /// Directory holding this entry's files.
    pub fn clip_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.meta)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| root.to_path_buf())
    }

    fn files(&self) -> [&str; 4] {
        [&self.meta, &self.frames, &self.ppg, &self.resp]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub creation_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, creation_seed: u64) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            creation_seed,
            entries: Vec::new(),
        }
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.avatar_id.as_str()) {
                return Err(Error::DuplicateId(e.avatar_id.clone()));
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    m.check_unique()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_json(path, m)
}

/// Parses a manifest without touching the files it references.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    m.check_unique()?;
    Ok(m)
}

/// Reads a manifest and checks that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest(&text)?;
    let root = path.parent().unwrap_or(Path::new("."));
    for e in &m.entries {
        for f in e.files() {
            if !root.join(f).is_file() {
                return Err(Error::Schema(format!(
                    "{}: missing file {f} for {}",
                    path.display(),
                    e.avatar_id
                )));
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_payload_size() {
        assert_eq!(ClipContainer::payload_len([180, 36, 36, 3]), Some(2_799_360));
        assert_eq!(ClipContainer::payload_len([u32::MAX, u32::MAX, u32::MAX, 3]), None);
    }

    #[test]
    fn container_rejects_corruption() {
        let c = ClipContainer {
            dims: [2, 2, 2, 3],
            data: (0..24).map(|i| i as f32 * 0.5).collect(),
        };
        let bytes = c.to_bytes();
        assert_eq!(ClipContainer::from_bytes(&bytes).unwrap(), c);
        assert!(matches!(
            ClipContainer::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::CorruptContainer(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ClipContainer::from_bytes(&bad), Err(Error::CorruptContainer(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(ClipContainer::from_bytes(&bad), Err(Error::CorruptContainer(_))));
        let mut bad = bytes;
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(ClipContainer::from_bytes(&bad), Err(Error::CorruptContainer(_))));
    }

    #[test]
    fn mask_packing_roundtrip() {
        for n in [1usize, 7, 8, 9, 1296] {
            let m: Vec<bool> = (0..n).map(|i| (i * 7 + i / 3) % 5 < 2).collect();
            assert_eq!(unpack_mask(&pack_mask(&m), n).unwrap(), m);
        }
    }

    #[test]
    fn manifest_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = ManifestEntry {
            avatar_id: "a".into(),
            meta: "x".into(),
            frames: "x".into(),
            ppg: "x".into(),
            resp: "x".into(),
            melanin: 0.1,
            fitzpatrick_bin: SkinTypeBin::II,
            yaw_velocity_dps: 0.0,
            gt_pulse_bpm: 60.0,
            gt_breathing_bpm: 12.0,
        };
        let mut m = DatasetManifest::new("d", 1);
        m.entries = vec![e.clone(), e];
        assert!(matches!(
            write_manifest(&dir.path().join("m.json"), &m),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn empty_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let m = DatasetManifest::new("empty", 0);
        write_manifest(&p, &m).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
    }

    #[test]
    fn missing_file_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let mut m = DatasetManifest::new("d", 0);
        m.entries.push(ManifestEntry {
            avatar_id: "a".into(),
            meta: "nope/meta.json".into(),
            frames: "nope/frames.bin".into(),
            ppg: "nope/ppg.csv".into(),
            resp: "nope/resp.csv".into(),
            melanin: 0.5,
            fitzpatrick_bin: SkinTypeBin::IV,
            yaw_velocity_dps: 10.0,
            gt_pulse_bpm: 70.0,
            gt_breathing_bpm: 15.0,
        });
        write_manifest(&p, &m).unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Schema(_))));
        assert!(matches!(parse_manifest("{\"dataset_id\": 3}"), Err(Error::Schema(_))));
    }
}
