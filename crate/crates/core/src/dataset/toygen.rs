//! Seeded synthetic multi-camera vehicle dataset.
//!
//! Vehicles are procedurally drawn side-view sprites whose colours, proportions
//! and markings depend only on `(vehicle_id, seed)`. Each camera then applies
//! its own style: background texture, hue rotation, resolution loss and a
//! brightness offset. All style steps except the brightness offset preserve
//! the image mean exactly:
//!
//! * sprites are drawn on a half-resolution grid, so background regions are
//!   unions of aligned 2x2 blocks and the period-2 textures cancel on them;
//! * hue rotation is a rotation about the grey axis, which keeps `R+G+B`;
//! * resolution loss is a block average followed by replication.
//!
//! Offsets are whole quantization levels, so after rounding the mean brightness
//! of one camera differs from another's by the offset difference up to the
//! mean rounding error.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, IoContext, Result};
use crate::fsutil::write_atomic;
use crate::rng::{stream, tag};

/// Amplitude of the background texture, in [0, 1] intensity units.
const TEXTURE_AMPLITUDE: f64 = 0.08;
const BACKGROUND_GREY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    HorizontalStripes,
    VerticalStripes,
    Checker,
}

impl Background {
    fn pattern(self, y: usize, x: usize) -> f64 {
        let s = |b: bool| if b { 1.0 } else { -1.0 };
        match self {
            Background::Flat => 0.0,
            Background::HorizontalStripes => s(y.is_multiple_of(2)),
            Background::VerticalStripes => s(x.is_multiple_of(2)),
            Background::Checker => s((x + y).is_multiple_of(2)),
        }
    }

    fn from_index(i: usize) -> Self {
        [
            Background::Flat,
            Background::HorizontalStripes,
            Background::VerticalStripes,
            Background::Checker,
        ][i % 4]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraStyle {
    /// Additive brightness in 8-bit quantization levels.
    pub brightness_offset: i32,
    /// Rotation about the grey axis, degrees.
    pub hue_degrees: f64,
    pub background: Background,
    /// Block size of the resolution loss (1 = none).
    pub downscale: usize,
}

impl CameraStyle {
    /// Default style of `camera_id`; a pure function of `(camera_id, seed)`.
    ///
    /// Offsets and hue angles alternate around camera 0: 0, +d, -d, +2d, ...
    pub fn derived(camera_id: usize, seed: u64) -> Self {
        let k = camera_id as i32;
        let ring = (k + 1) / 2;
        let sign = if k % 2 == 1 { 1 } else { -1 };
        let mut rng = stream(&[seed, tag::CAMERA, camera_id as u64]);
        let jitter_levels = rng.random_range(-2..=2);
        let jitter_hue = rng.random_range(-5.0..5.0);
        CameraStyle {
            brightness_offset: (sign * ring * 16 + if k == 0 { 0 } else { jitter_levels }).clamp(-40, 40),
            hue_degrees: if k == 0 {
                0.0
            } else {
                f64::from(sign * ring) * 35.0 + jitter_hue
            },
            background: Background::from_index(camera_id),
            downscale: if camera_id % 4 == 2 { 2 } else { 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyGenSpec {
    pub name: String,
    pub n_identities: usize,
    pub n_cameras: usize,
    pub images_per_id_per_camera: usize,
    /// Square image side in pixels; a multiple of 4.
    pub image_size: usize,
    pub camera_styles: Vec<CameraStyle>,
    /// Identities `0..train_identities` form the training split.
    pub train_identities: usize,
    pub seed: u64,
}

impl ToyGenSpec {
    /// Derived camera styles, half the identities for training.
    pub fn new(n_identities: usize, n_cameras: usize, images_per_id_per_camera: usize, image_size: usize, seed: u64) -> Self {
        ToyGenSpec {
            name: "toy".into(),
            n_identities,
            n_cameras,
            images_per_id_per_camera,
            image_size,
            camera_styles: (0..n_cameras).map(|c| CameraStyle::derived(c, seed)).collect(),
            train_identities: n_identities / 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.n_identities == 0 || self.n_cameras == 0 || self.images_per_id_per_camera == 0 {
            return bad("toy spec counts must be positive".into());
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return bad(format!("image_size {} must be a multiple of 4 and >= 8", self.image_size));
        }
        if self.camera_styles.len() != self.n_cameras {
            return bad(format!(
                "{} camera styles for {} cameras",
                self.camera_styles.len(),
                self.n_cameras
            ));
        }
        if self.train_identities > self.n_identities {
            return bad("train_identities exceeds n_identities".into());
        }
        for (c, s) in self.camera_styles.iter().enumerate() {
            if s.downscale == 0 || !self.image_size.is_multiple_of(s.downscale) {
                return bad(format!("camera {c}: downscale {} does not divide the image", s.downscale));
            }
            if s.brightness_offset.abs() > 48 {
                return bad(format!("camera {c}: brightness offset {} would clip", s.brightness_offset));
            }
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.n_identities * self.n_cameras * self.images_per_id_per_camera
    }

    /// Split of image `(vehicle_id, camera_id, index)`.
    pub fn split_of(&self, vehicle_id: usize, camera_id: usize, index: usize) -> Split {
        if vehicle_id < self.train_identities {
            Split::Train
        } else if self.images_per_id_per_camera >= 2 {
            if index == 0 {
                Split::Query
            } else {
                Split::Gallery
            }
        } else if camera_id == 0 {
            Split::Query
        } else {
            Split::Gallery
        }
    }
}

type Rgb = [f64; 3];

/// Camera-independent appearance of one identity.
#[derive(Clone, Debug)]
struct Identity {
    body: Rgb,
    marking: Rgb,
    window: Rgb,
    body_w: f64,
    body_h: f64,
    cabin_w: f64,
    cabin_h: f64,
    cabin_front: bool,
    marking_kind: u32,
    marking_pos: f64,
}

/// A colour `g + r (cos t u + sin t v)` with `u, v` orthonormal and orthogonal to grey.
fn chroma(grey: f64, radius: f64, angle: f64) -> Rgb {
    let u = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
    let v = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
    let (s, c) = angle.sin_cos();
    [0, 1, 2].map(|i| grey + radius * (c * u[i] + s * v[i]))
}

impl Identity {
    fn new(vehicle_id: usize, seed: u64) -> Self {
        let mut r = stream(&[seed, tag::IDENTITY, vehicle_id as u64]);
        let tau = std::f64::consts::TAU;
        let body_angle = r.random_range(0.0..tau);
        let body = chroma(r.random_range(0.40..0.60), r.random_range(0.12..0.20), body_angle);
        let marking_angle = body_angle + r.random_range(0.35..0.65) * tau;
        let marking = chroma(r.random_range(0.36..0.64), r.random_range(0.12..0.20), marking_angle);
        let window = chroma(0.3, 0.05, r.random_range(0.0..tau));
        Identity {
            body,
            marking,
            window,
            body_w: r.random_range(0.60..0.80),
            body_h: r.random_range(0.24..0.34),
            cabin_w: r.random_range(0.40..0.62),
            cabin_h: r.random_range(0.12..0.20),
            cabin_front: r.random_bool(0.5),
            marking_kind: r.random_range(0..4),
            marking_pos: r.random_range(0.2..0.8),
        }
    }
}

/// Half-resolution sprite layer: colour plus a foreground mask.
struct Layer {
    size: usize,
    rgb: Vec<Rgb>,
    fg: Vec<bool>,
}

impl Layer {
    fn new(size: usize) -> Self {
        Layer {
            size,
            rgb: vec![[BACKGROUND_GREY; 3]; size * size],
            fg: vec![false; size * size],
        }
    }

    fn fill(&mut self, y0: i64, x0: i64, h: i64, w: i64, c: Rgb) {
        let s = self.size as i64;
        for y in y0.max(0)..(y0 + h).min(s) {
            for x in x0.max(0)..(x0 + w).min(s) {
                let i = (y * s + x) as usize;
                self.rgb[i] = c;
                self.fg[i] = true;
            }
        }
    }

    fn mirror(&mut self) {
        let s = self.size;
        for y in 0..s {
            self.rgb[y * s..(y + 1) * s].reverse();
            self.fg[y * s..(y + 1) * s].reverse();
        }
    }
}

fn draw_sprite(id: &Identity, size: usize, dy: i64, dx: i64, mirror: bool) -> Layer {
    let mut l = Layer::new(size);
    let s = size as f64;
    let bw = (id.body_w * s).round().max(4.0) as i64;
    let bh = (id.body_h * s).round().max(2.0) as i64;
    let cw = (id.cabin_w * bw as f64).round().max(2.0) as i64;
    let ch = (id.cabin_h * s).round().max(2.0) as i64;
    let cy = size as i64 / 2 + dy;
    let cx = size as i64 / 2 + dx;
    let (bx, by) = (cx - bw / 2, cy - bh / 2 + ch / 2);
    l.fill(by, bx, bh, bw, id.body);
    let cab_x = if id.cabin_front { bx + bw - cw - bw / 8 } else { bx + bw / 8 };
    l.fill(by - ch, cab_x, ch, cw, id.body);
    if ch >= 3 && cw >= 3 {
        l.fill(by - ch + 1, cab_x + 1, ch - 1, cw - 2, id.window);
    }
    let mp = (id.marking_pos * bw as f64) as i64;
    match id.marking_kind {
        0 => l.fill(by + bh / 3, bx, (bh / 3).max(1), bw, id.marking),
        1 => l.fill(by, bx + mp.min(bw - 2), bh, (bw / 6).max(1), id.marking),
        2 => {
            l.fill(by + 1, bx + bw / 6, (bh / 2).max(1), (bw / 5).max(1), id.marking);
            l.fill(by + 1, bx + bw - bw / 6 - bw / 5, (bh / 2).max(1), (bw / 5).max(1), id.marking);
        }
        _ => l.fill(by + bh - (bh / 3).max(1), bx, (bh / 3).max(1), bw, id.marking),
    }
    let wheel = (bh / 2).max(1);
    let tyre = [0.22; 3];
    l.fill(by + bh - wheel / 2, bx + bw / 6, wheel, wheel, tyre);
    l.fill(by + bh - wheel / 2, bx + bw - bw / 6 - wheel, wheel, wheel, tyre);
    if mirror {
        l.mirror();
    }
    l
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = degrees.to_radians().sin_cos();
    let k = 1.0 / 3f64.sqrt();
    let t = 1.0 - c;
    // Rodrigues rotation about (1, 1, 1) / sqrt(3).
    let d = c + t / 3.0;
    let p = t / 3.0 + s * k;
    let m = t / 3.0 - s * k;
    [[d, m, p], [p, d, m], [m, p, d]]
}

/// Unquantized image `[H*W]` of RGB in [0, 1] before the brightness offset.
fn styled_pixels(spec: &ToyGenSpec, vehicle_id: usize, camera_id: usize, index: usize) -> Vec<Rgb> {
    let size = spec.image_size;
    let half = size / 2;
    let id = Identity::new(vehicle_id, spec.seed);
    let mut pose = stream(&[spec.seed, tag::POSE, vehicle_id as u64, index as u64]);
    let span = (half / 16).max(1) as i64;
    let dy = pose.random_range(-span..=span);
    let dx = pose.random_range(-span..=span);
    let mirror = pose.random_bool(0.5);
    let layer = draw_sprite(&id, half, dy, dx, mirror);
    let style = &spec.camera_styles[camera_id];
    let rot = hue_matrix(style.hue_degrees);
    let mut px = vec![[0.0; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let i = (y / 2) * half + x / 2;
            let mut c = layer.rgb[i];
            if !layer.fg[i] {
                let t = TEXTURE_AMPLITUDE * style.background.pattern(y, x);
                c = c.map(|v| v + t);
            }
            px[y * size + x] = [0, 1, 2].map(|r| rot[r][0] * c[0] + rot[r][1] * c[1] + rot[r][2] * c[2]);
        }
    }
    let f = style.downscale;
    if f > 1 {
        for by in (0..size).step_by(f) {
            for bx in (0..size).step_by(f) {
                let mut acc = [0.0; 3];
                for y in by..by + f {
                    for x in bx..bx + f {
                        for ch in 0..3 {
                            acc[ch] += px[y * size + x][ch];
                        }
                    }
                }
                let avg = acc.map(|v| v / (f * f) as f64);
                for y in by..by + f {
                    for x in bx..bx + f {
                        px[y * size + x] = avg;
                    }
                }
            }
        }
    }
    px
}

/// Render one image as 8-bit RGB.
pub fn render(spec: &ToyGenSpec, vehicle_id: usize, camera_id: usize, index: usize) -> RgbImage {
    let size = spec.image_size;
    let offset = spec.camera_styles[camera_id].brightness_offset as f64;
    let px = styled_pixels(spec, vehicle_id, camera_id, index);
    let mut raw = Vec::with_capacity(size * size * 3);
    for p in px {
        for v in p {
            raw.push((v * 255.0 + offset).round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::from_raw(size as u32, size as u32, raw).expect("buffer matches dimensions")
}

pub fn image_file_name(vehicle_id: usize, camera_id: usize, index: usize) -> PathBuf {
    PathBuf::from(format!("images/v{vehicle_id:04}_c{camera_id:02}_{index:02}.png"))
}

/// Write every image plus `manifest.jsonl` and a `toygen.json` spec echo into `out_dir`.
pub fn generate_toy_dataset(spec: &ToyGenSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("images")).io_ctx(|| format!("creating {}", out_dir.display()))?;
    let mut records = Vec::with_capacity(spec.total_images());
    for vid in 0..spec.n_identities {
        for cam in 0..spec.n_cameras {
            for idx in 0..spec.images_per_id_per_camera {
                let rel = image_file_name(vid, cam, idx);
                let path = out_dir.join(&rel);
                let img = render(spec, vid, cam, idx);
                let mut bytes = Vec::new();
                img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                    .map_err(|source| Error::Image {
                        path: path.clone(),
                        source,
                    })?;
                write_atomic(&path, &bytes)?;
                records.push(ImageRecord {
                    image_path: rel,
                    vehicle_id: vid as u32,
                    camera_id: cam as u32,
                    split: spec.split_of(vid, cam, idx),
                });
            }
        }
    }
    let manifest = DatasetManifest::new(spec.name.clone(), spec.n_cameras, records, out_dir.to_path_buf())?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    write_atomic(&out_dir.join("toygen.json"), serde_json::to_string_pretty(spec)?.as_bytes())?;
    Ok(manifest)
}

/// Mean over all pixels and channels of an 8-bit image, in levels.
pub fn mean_brightness(img: &RgbImage) -> f64 {
    let raw = img.as_raw();
    raw.iter().map(|&v| v as f64).sum::<f64>() / raw.len().max(1) as f64
}
