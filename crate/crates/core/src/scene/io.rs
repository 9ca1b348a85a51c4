//! Dataset directory layout.
//!
//! ```text
//! meta.json                 dimension, image size, view count, source tag
//! views/{t:04}.png          8-bit RGB
//! views/{t:04}.pose.json    row-major world-to-camera + intrinsics + near
//! masks/{t:04}/{j:04}.png   1-bit grayscale
//! embeddings.bin            (view u32, local u32, D x f32) sorted by key
//! histograms.bin            (view u32, local u32, 512 x f32), optional
//! matches.bin               (view_a u32, view_b u32, xa, ya, xb, yb f32), optional
//! canonical.bin             D x f32 per canonical phrase, optional
//! gaussians.bin             14 x f32 per Gaussian, optional
//! ```
//!
//! All binary payloads are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    Bitmap, CanonicalPhrase, Camera, ColorHistogram, Dataset, DatasetMeta, KeypointMatchSet,
    MaskRecord, PointPair, PosedImage, HIST_BINS,
};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const HISTOGRAMS_FILE: &str = "histograms.bin";
pub const MATCHES_FILE: &str = "matches.bin";
pub const CANONICAL_FILE: &str = "canonical.bin";
pub const GAUSSIANS_FILE: &str = "gaussians.bin";

const MATCH_RECORD_BYTES: usize = 2 * 4 + 4 * 4;

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: DatasetMeta,
    /// Names of the canonical phrases stored in `canonical.bin`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    canonical: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    world_to_camera: Vec<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    near: f64,
}

impl From<&Camera> for PoseFile {
    fn from(c: &Camera) -> Self {
        Self {
            world_to_camera: c.world_to_camera.iter().flatten().copied().collect(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            near: c.near,
        }
    }
}

pub fn view_png_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("views").join(format!("{t:04}.png"))
}

pub fn pose_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("views").join(format!("{t:04}.pose.json"))
}

pub fn mask_path(dir: &Path, t: usize, j: usize) -> PathBuf {
    dir.join("masks").join(format!("{t:04}")).join(format!("{j:04}.png"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Writes a bitmap as a 1-bit grayscale PNG.
pub fn write_mask_png(path: &Path, bitmap: &Bitmap) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), bitmap.width() as u32, bitmap.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let stride = bitmap.width().div_ceil(8);
    let mut packed = vec![0u8; stride * bitmap.height()];
    for y in 0..bitmap.height() {
        for x in 0..bitmap.width() {
            if bitmap.get(x, y) {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let png_err = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&packed).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads any grayscale or color PNG as a mask; nonzero luma is set.
pub fn read_mask_png(path: &Path) -> Result<Bitmap> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Bitmap::from_bits(w, h, img.pixels().map(|p| p.0[0] > 0).collect())
}

fn read_rgb_png(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8())
}

fn read_pose(path: &Path) -> Result<Camera> {
    let pose: PoseFile =
        serde_json::from_slice(&read(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    if pose.world_to_camera.len() != 16 {
        return Err(Error::format(
            path,
            format!("world_to_camera has {} entries, expected 16", pose.world_to_camera.len()),
        ));
    }
    let mut m = [[0.0; 4]; 4];
    for (i, v) in pose.world_to_camera.iter().enumerate() {
        m[i / 4][i % 4] = *v;
    }
    Ok(Camera {
        fx: pose.fx,
        fy: pose.fy,
        cx: pose.cx,
        cy: pose.cy,
        world_to_camera: m,
        near: pose.near,
    })
}

type KeyedRecords = BTreeMap<(usize, usize), Vec<f32>>;

fn read_keyed_records(path: &Path, floats: usize) -> Result<KeyedRecords> {
    let bytes = read(path)?;
    let rec = 8 + floats * 4;
    if floats == 0 || bytes.len() % rec != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of record size {rec}", bytes.len()),
        ));
    }
    let mut out = BTreeMap::new();
    let mut last: Option<(usize, usize)> = None;
    for chunk in bytes.chunks_exact(rec) {
        let key = (le_u32(&chunk[0..4]) as usize, le_u32(&chunk[4..8]) as usize);
        if let Some(prev) = last {
            if key <= prev {
                return Err(Error::format(
                    path,
                    format!("records not strictly sorted at {key:?}"),
                ));
            }
        }
        last = Some(key);
        out.insert(key, chunk[8..].chunks_exact(4).map(le_f32).collect());
    }
    Ok(out)
}

fn keyed_record_bytes<'a>(records: impl Iterator<Item = ((usize, usize), &'a [f32])>) -> Vec<u8> {
    let mut out = Vec::new();
    for ((v, l), vals) in records {
        out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(&(l as u32).to_le_bytes());
        for x in vals {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn matches_to_bytes(matches: &KeypointMatchSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(matches.total() * MATCH_RECORD_BYTES);
    for (&(a, b), pairs) in matches.iter() {
        for p in pairs {
            out.extend_from_slice(&(a as u32).to_le_bytes());
            out.extend_from_slice(&(b as u32).to_le_bytes());
            for v in [p.a[0], p.a[1], p.b[0], p.b[1]] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn matches_from_bytes(bytes: &[u8], path: &Path) -> Result<KeypointMatchSet> {
    if !bytes.len().is_multiple_of(MATCH_RECORD_BYTES) {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of {MATCH_RECORD_BYTES}", bytes.len()),
        ));
    }
    let mut grouped: BTreeMap<(usize, usize), Vec<PointPair>> = BTreeMap::new();
    for c in bytes.chunks_exact(MATCH_RECORD_BYTES) {
        let (a, b) = (le_u32(&c[0..4]) as usize, le_u32(&c[4..8]) as usize);
        let p = PointPair {
            a: [le_f32(&c[8..12]), le_f32(&c[12..16])],
            b: [le_f32(&c[16..20]), le_f32(&c[20..24])],
        };
        grouped.entry((a, b)).or_default().push(p);
    }
    let mut set = KeypointMatchSet::new();
    for ((a, b), pairs) in grouped {
        set.insert(a, b, pairs);
    }
    Ok(set)
}

/// Reads a dataset directory. Structural problems (unparseable files,
/// missing records) are format errors; invariant violations in otherwise
/// readable data are left to [`super::validate_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_file: MetaFile = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let meta = meta_file.meta;

    let mut views = Vec::with_capacity(meta.view_count);
    for t in 0..meta.view_count {
        views.push(PosedImage {
            rgb: read_rgb_png(&view_png_path(dir, t))?,
            camera: read_pose(&pose_path(dir, t))?,
        });
    }

    let emb_path = dir.join(EMBEDDINGS_FILE);
    let mut embeddings = read_keyed_records(&emb_path, meta.embedding_dim.max(1))?;
    let hist_path = dir.join(HISTOGRAMS_FILE);
    let mut histograms = if hist_path.exists() {
        Some(read_keyed_records(&hist_path, HIST_BINS)?)
    } else {
        None
    };

    let mut masks = Vec::with_capacity(meta.view_count);
    for t in 0..meta.view_count {
        let mdir = dir.join("masks").join(format!("{t:04}"));
        let mut locals = Vec::new();
        if mdir.exists() {
            for entry in fs::read_dir(&mdir).map_err(|e| Error::io(&mdir, e))? {
                let entry = entry.map_err(|e| Error::io(&mdir, e))?;
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("png") {
                    continue;
                }
                let local = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::format(&path, "mask file name is not a local index"))?;
                locals.push(local);
            }
        }
        locals.sort_unstable();
        let mut list = Vec::with_capacity(locals.len());
        for j in locals {
            let path = mask_path(dir, t, j);
            let bitmap = read_mask_png(&path)?;
            let embedding = embeddings.remove(&(t, j)).ok_or_else(|| {
                Error::format(&emb_path, format!("no embedding record for view {t} mask {j}"))
            })?;
            let mut rec = MaskRecord::new(t, j, bitmap, embedding);
            if let Some(h) = histograms.as_mut() {
                let bins = h.remove(&(t, j)).ok_or_else(|| {
                    Error::format(&hist_path, format!("no histogram record for view {t} mask {j}"))
                })?;
                rec.histogram = Some(ColorHistogram::from_bins(bins)?);
            }
            list.push(rec);
        }
        masks.push(list);
    }
    if let Some((key, _)) = embeddings.iter().next() {
        return Err(Error::format(
            &emb_path,
            format!("embedding record {key:?} has no mask file"),
        ));
    }

    let match_path = dir.join(MATCHES_FILE);
    let matches = if match_path.exists() {
        matches_from_bytes(&read(&match_path)?, &match_path)?
    } else {
        KeypointMatchSet::new()
    };

    let canon_path = dir.join(CANONICAL_FILE);
    let canonical = if canon_path.exists() {
        let bytes = read(&canon_path)?;
        let rec = meta.embedding_dim.max(1) * 4;
        if bytes.len() % rec != 0 || bytes.len() / rec != meta_file.canonical.len() {
            return Err(Error::format(
                &canon_path,
                format!(
                    "{} bytes do not hold {} phrases of dimension {}",
                    bytes.len(),
                    meta_file.canonical.len(),
                    meta.embedding_dim
                ),
            ));
        }
        meta_file
            .canonical
            .iter()
            .zip(bytes.chunks_exact(rec))
            .map(|(name, chunk)| CanonicalPhrase {
                name: name.clone(),
                embedding: chunk.chunks_exact(4).map(le_f32).collect(),
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(Dataset {
        meta,
        views,
        masks,
        matches,
        canonical,
    })
}

/// Writes the dataset layout into `dir`, creating it if needed.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    mkdir(&dir.join("views"))?;
    mkdir(&dir.join("masks"))?;
    let meta = MetaFile {
        meta: ds.meta.clone(),
        canonical: ds.canonical.iter().map(|c| c.name.clone()).collect(),
    };
    let meta_json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write(&dir.join(META_FILE), &meta_json)?;

    for (t, view) in ds.views.iter().enumerate() {
        let p = view_png_path(dir, t);
        view.rgb
            .save_with_format(&p, image::ImageFormat::Png)
            .map_err(|e| Error::format(&p, e.to_string()))?;
        let pose = serde_json::to_vec_pretty(&PoseFile::from(&view.camera)).expect("pose serializes");
        write(&pose_path(dir, t), &pose)?;
    }

    for (t, masks) in ds.masks.iter().enumerate() {
        mkdir(&dir.join("masks").join(format!("{t:04}")))?;
        for m in masks {
            write_mask_png(&mask_path(dir, t, m.local), &m.bitmap)?;
        }
    }

    let mut sorted: Vec<&MaskRecord> = ds.all_masks().collect();
    sorted.sort_by_key(|m| (m.view, m.local));
    let emb = keyed_record_bytes(sorted.iter().map(|m| ((m.view, m.local), m.embedding.as_slice())));
    write(&dir.join(EMBEDDINGS_FILE), &emb)?;

    let hist_path = dir.join(HISTOGRAMS_FILE);
    if sorted.iter().all(|m| m.histogram.is_some()) && !sorted.is_empty() {
        let hist = keyed_record_bytes(
            sorted
                .iter()
                .map(|m| ((m.view, m.local), m.histogram.as_ref().unwrap().bins())),
        );
        write(&hist_path, &hist)?;
    } else if hist_path.exists() {
        fs::remove_file(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    }

    if !ds.matches.is_empty() {
        write(&dir.join(MATCHES_FILE), &matches_to_bytes(&ds.matches))?;
    }
    if !ds.canonical.is_empty() {
        let bytes: Vec<u8> = ds
            .canonical
            .iter()
            .flat_map(|c| c.embedding.iter().flat_map(|v| v.to_le_bytes()))
            .collect();
        write(&dir.join(CANONICAL_FILE), &bytes)?;
    }
    Ok(())
}

/// Reads a dataset directory and validates it in one step.
pub fn check_dataset_dir(dir: &Path) -> Result<Vec<super::Violation>> {
    let ds = read_dataset(dir)?;
    Ok(super::validate_dataset(&ds))
}

/// Reads a query embedding file: `D` little-endian `f32` values.
pub fn read_embedding_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = read(path)?;
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a float vector", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(le_f32).collect())
}

pub fn write_embedding_file(path: &Path, embedding: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = embedding.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_scene, SyntheticSceneSpec};

    fn scene() -> Dataset {
        let spec = SyntheticSceneSpec {
            objects: 3,
            views: 3,
            width: 40,
            height: 36,
            ..SyntheticSceneSpec::default()
        };
        let mut ds = generate_synthetic_scene(&spec).unwrap().dataset;
        ds.ensure_histograms().unwrap();
        ds
    }

    #[test]
    fn write_then_read_is_exact() {
        let ds = scene();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let floats = |d: &Dataset| -> Vec<u32> {
            d.all_masks()
                .flat_map(|m| m.embedding.iter().chain(m.histogram.as_ref().unwrap().bins()))
                .map(|f| f.to_bits())
                .collect()
        };
        assert_eq!(floats(&back), floats(&ds));
    }

    #[test]
    fn mask_png_is_one_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let bm = Bitmap::from_fn(13, 5, |x, y| (x + y) % 3 == 0);
        write_mask_png(&p, &bm).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&p).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!(reader.info().bit_depth, png::BitDepth::One);
        assert_eq!(read_mask_png(&p).unwrap(), bm);
    }

    #[test]
    fn unreadable_payload_is_a_format_error() {
        let ds = scene();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let emb = dir.path().join(EMBEDDINGS_FILE);
        let mut bytes = fs::read(&emb).unwrap();
        bytes.pop();
        fs::write(&emb, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn histograms_are_optional() {
        let ds = scene();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join(HISTOGRAMS_FILE)).unwrap();
        let mut back = read_dataset(dir.path()).unwrap();
        assert!(back.all_masks().all(|m| m.histogram.is_none()));
        back.ensure_histograms().unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn reversed_match_records_are_normalized() {
        let mut set = KeypointMatchSet::new();
        set.insert(2, 0, vec![PointPair { a: [1.0, 2.0], b: [3.0, 4.0] }]);
        let bytes = matches_to_bytes(&set);
        let back = matches_from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.get(0, 2).unwrap()[0].a, [3.0, 4.0]);
        assert_eq!(back.get(2, 0).unwrap()[0].a, [1.0, 2.0]);
    }
}
