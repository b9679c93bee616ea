//! Seeded synthetic head scenes, annotation CSV and dataset directories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::evaluation::{density_split, DatasetStats};
use crate::geometry::BBox;
use crate::losses::{iou, splitmix};
use crate::pgm;
use crate::tensor::Tensor3;

pub const PLACEMENT_ATTEMPTS: usize = 1000;
pub const SCENE_SIZE: usize = 10;
pub const ANNOTATION_HEADER: &str = "image_id,x1,y1,x2,y2";
pub const META_HEADER: &str = "image_id,scene,count";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of heads per image.
    pub heads: (usize, usize),
    /// Inclusive range of horizontal ellipse radii in pixels.
    pub radius: (usize, usize),
    pub max_iou: f64,
    pub texture_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{}", self.width, self.height));
        }
        if self.heads.0 > self.heads.1 {
            return bad(format!("head range {:?} has min > max", self.heads));
        }
        if self.radius.0 == 0 || self.radius.0 > self.radius.1 {
            return bad(format!("radius range {:?}", self.radius));
        }
        // vertical radius can be one larger than the horizontal one
        if 2 * self.radius.1 + 3 > self.width.min(self.height) {
            return bad(format!(
                "radius {} does not fit a {}x{} image",
                self.radius.1, self.width, self.height
            ));
        }
        if !(0.0..=1.0).contains(&self.max_iou) {
            return bad(format!("max_iou {} outside [0, 1]", self.max_iou));
        }
        Ok(())
    }

    pub fn mean_heads(&self) -> f64 {
        (self.heads.0 + self.heads.1) as f64 / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Low,
    High,
}

impl Profile {
    pub fn scene_config(self, texture_seed: u64) -> SceneConfig {
        let (heads, radius) = match self {
            Self::Low => ((20, 90), (4, 7)),
            Self::High => ((100, 290), (2, 3)),
        };
        SceneConfig {
            width: 160,
            height: 160,
            heads,
            radius,
            max_iou: 0.3,
            texture_seed,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Self::Low),
            "high" => Ok(Self::High),
            other => Err(Error::Config(format!("unknown profile {other:?} (low|high)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Low => "low",
            Self::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: u32,
    pub boxes: Vec<BBox>,
}

fn background(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut tex = ChaCha8Rng::seed_from_u64(cfg.texture_seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                tex.random_range(0.02..0.25),
                tex.random_range(-1.0..1.0),
                tex.random_range(0.0..std::f64::consts::TAU),
                tex.random_range(0.03..0.08),
            )
        })
        .collect();
    let base = tex.random_range(0.2..0.4);
    let grain = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut img = Vec::with_capacity(cfg.width * cfg.height);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = base;
            for &(freq, tilt, phase, amp) in &waves {
                v += amp * (freq * (fx + tilt * fy) + phase).sin();
            }
            v += grain.sample(rng);
            img.push(v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Renders filled ellipses over a textured background.
///
/// Centres sit on pixel centres and radii are whole pixels, so the returned
/// boxes are the exact extents of the painted ellipses. Each head is placed by
/// rejection sampling against the pairwise IoU allowance.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<(Tensor3, AnnotationRecord)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(cfg.heads.0..=cfg.heads.1);
    let mut boxes: Vec<BBox> = Vec::with_capacity(count);
    let mut shapes = Vec::with_capacity(count);
    for head in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let rx = rng.random_range(cfg.radius.0..=cfg.radius.1);
            let ry = rx + rng.random_range(0..=1usize);
            let ix = rng.random_range(rx..=cfg.width - rx - 1);
            let iy = rng.random_range(ry..=cfg.height - ry - 1);
            let (cx, cy) = (ix as f64 + 0.5, iy as f64 + 0.5);
            let b = BBox::new(cx - rx as f64, cy - ry as f64, cx + rx as f64, cy + ry as f64)?;
            if boxes.iter().all(|o| iou(o, &b) <= cfg.max_iou) {
                boxes.push(b);
                shapes.push((cx, cy, rx as f64, ry as f64));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                head,
                attempts: PLACEMENT_ATTEMPTS,
                max_iou: cfg.max_iou,
            });
        }
    }

    let mut img = background(cfg, &mut rng);
    for &(cx, cy, rx, ry) in &shapes {
        let level = rng.random_range(0.6..0.95);
        let x0 = (cx - rx).floor() as usize;
        let y0 = (cy - ry).floor() as usize;
        for y in y0..((cy + ry).ceil() as usize).min(cfg.height) {
            for x in x0..((cx + rx).ceil() as usize).min(cfg.width) {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let d2 = dx * dx + dy * dy;
                if d2 <= 1.0 {
                    img[y * cfg.width + x] = level * (1.0 - 0.15 * d2);
                }
            }
        }
    }
    Ok((
        Tensor3::from_vec(1, cfg.height, cfg.width, img)?,
        AnnotationRecord { image_id: 0, boxes },
    ))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for r in records {
        for b in &r.boxes {
            out.push_str(&format!("{},{},{},{},{}\n", r.image_id, b.x1(), b.y1(), b.x2(), b.y2()));
        }
    }
    out
}

pub fn write_annotations(records: &[AnnotationRecord], path: &Path) -> Result<()> {
    fs::write(path, format_annotations(records))?;
    Ok(())
}

/// Parses annotation CSV text. Lines of one image must be contiguous; an id
/// that reappears after another image is rejected. Blank lines and an
/// optional header are skipped.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut records: Vec<AnnotationRecord> = Vec::new();
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || (line == 1 && raw == ANNOTATION_HEADER) {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(parse_err(path, line, format!("expected 5 fields, found {}", fields.len())));
        }
        let image_id: u32 = fields[0]
            .parse()
            .map_err(|e| parse_err(path, line, format!("image_id {:?}: {e}", fields[0])))?;
        let mut c = [0.0; 4];
        for (dst, f) in c.iter_mut().zip(&fields[1..]) {
            *dst = f
                .parse()
                .map_err(|e| parse_err(path, line, format!("coordinate {f:?}: {e}")))?;
        }
        let b = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| parse_err(path, line, e.to_string()))?;
        match records.last_mut() {
            Some(r) if r.image_id == image_id => r.boxes.push(b),
            _ => {
                if seen.contains_key(&image_id) {
                    return Err(Error::DuplicateImage { image_id, line });
                }
                seen.insert(image_id, line);
                records.push(AnnotationRecord {
                    image_id,
                    boxes: vec![b],
                });
            }
        }
    }
    Ok(records)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path)?;
    parse_annotations(&text, path)
}

pub fn image_file_name(image_id: u32) -> String {
    format!("{image_id:04}.pgm")
}

/// Gray image replicated to three channels, values in `[0, 1]`.
pub fn gray_to_rgb(width: usize, height: usize, pixels: &[u8]) -> Tensor3 {
    let gray = pgm::to_tensor(width, height, pixels);
    let mut data = Vec::with_capacity(3 * width * height);
    for _ in 0..3 {
        data.extend_from_slice(gray.data());
    }
    Tensor3::from_vec(3, height, width, data).expect("consistent size")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub image_id: u32,
    pub scene: u32,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub boxes: Vec<BBox>,
}

impl ImageEntry {
    pub fn tensor(&self) -> Tensor3 {
        gray_to_rgb(self.width, self.height, &self.pixels)
    }
}

/// A dataset directory held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub images: Vec<ImageEntry>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let meta_path = root.join("meta.csv");
        let meta = fs::read_to_string(&meta_path)?;
        let mut annotations: BTreeMap<u32, Vec<BBox>> = read_annotations(&root.join("annotations.csv"))?
            .into_iter()
            .map(|r| (r.image_id, r.boxes))
            .collect();
        let mut images = Vec::new();
        for (i, raw) in meta.lines().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() || (i == 0 && raw == META_HEADER) {
                continue;
            }
            let f: Vec<&str> = raw.split(',').collect();
            let parse = |s: &str| s.trim().parse::<u64>().map_err(|e| parse_err(&meta_path, i + 1, format!("{s:?}: {e}")));
            if f.len() != 3 {
                return Err(parse_err(&meta_path, i + 1, "expected image_id,scene,count"));
            }
            let (image_id, scene, count) = (parse(f[0])? as u32, parse(f[1])? as u32, parse(f[2])? as usize);
            let (width, height, pixels) = pgm::read(&root.join("images").join(image_file_name(image_id)))?;
            let boxes = annotations.remove(&image_id).unwrap_or_default();
            if boxes.len() != count {
                return Err(parse_err(
                    &meta_path,
                    i + 1,
                    format!("image {image_id} lists {count} heads but has {} boxes", boxes.len()),
                ));
            }
            if let Some(b) = boxes.iter().find(|b| !b.inside(width as f64, height as f64)) {
                return Err(parse_err(&meta_path, i + 1, format!("image {image_id} box {b:?} outside the image")));
            }
            images.push(ImageEntry {
                image_id,
                scene,
                width,
                height,
                pixels,
                boxes,
            });
        }
        if let Some(id) = annotations.keys().next() {
            return Err(Error::UnknownImage(*id));
        }
        Ok(Self {
            root: root.to_path_buf(),
            images,
        })
    }

    pub fn get(&self, image_id: u32) -> Result<&ImageEntry> {
        self.images
            .iter()
            .find(|e| e.image_id == image_id)
            .ok_or(Error::UnknownImage(image_id))
    }

    pub fn scene_counts(&self) -> Vec<(u32, Vec<usize>)> {
        let mut by_scene: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for e in &self.images {
            by_scene.entry(e.scene).or_default().push(e.boxes.len());
        }
        by_scene.into_iter().collect()
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        density_split(&self.scene_counts())
    }
}

/// Seed of image `index` within a split.
pub fn image_seed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index)
}

/// Writes `n_images` scenes of the given profile under `out_dir`; images are
/// grouped in scenes of ten sharing a background texture.
pub fn make_split(profile: Profile, n_images: usize, seed: u64, out_dir: &Path) -> Result<Dataset> {
    if n_images == 0 {
        return Err(Error::Config("n_images must be at least 1".into()));
    }
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let mut records = Vec::with_capacity(n_images);
    let mut meta = String::from(META_HEADER);
    meta.push('\n');
    let mut images = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let scene = (i / SCENE_SIZE) as u32;
        let cfg = profile.scene_config(splitmix(seed.wrapping_add(0x5CE4E) ^ scene as u64));
        let (img, mut rec) = generate_scene(&cfg, image_seed(seed, i as u64))?;
        rec.image_id = i as u32;
        let pixels = pgm::quantize(img.data());
        pgm::write(&img_dir.join(image_file_name(rec.image_id)), cfg.width, cfg.height, &pixels)?;
        meta.push_str(&format!("{},{},{}\n", rec.image_id, scene, rec.boxes.len()));
        images.push(ImageEntry {
            image_id: rec.image_id,
            scene,
            width: cfg.width,
            height: cfg.height,
            pixels,
            boxes: rec.boxes.clone(),
        });
        records.push(rec);
    }
    write_annotations(&records, &out_dir.join("annotations.csv"))?;
    fs::write(out_dir.join("meta.csv"), meta)?;
    Ok(Dataset {
        root: out_dir.to_path_buf(),
        images,
    })
}
