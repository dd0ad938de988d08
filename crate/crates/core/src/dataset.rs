//! On-disk dataset layout and file formats.
//!
//! A scene directory holds `images/` (8-bit PNG or PNM), `cams/` (one text
//! file per view), optional `depths/` (PFM ground truth), optional `hints/`
//! (sparse depth text files) and `pair.txt` listing the source views of
//! every reference view. View indices follow the lexicographic order of the
//! file names.
//!
//! Camera files carry a 4x4 row-major world-to-camera matrix under an
//! `extrinsic` line, a 3x3 intrinsic matrix under an `intrinsic` line, and a
//! final `z_min z_interval z_count z_max` line. Depth maps are grayscale
//! PFM (`Pf`, negative scale = little endian, rows bottom to top, NaN marks
//! invalid pixels). Hints files start with `width height count` followed by
//! one `x y depth` line per hint.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::camera::{Camera, Extrinsics, GeometryError, Intrinsics};
use crate::grid::ImageBuf;
use crate::guidance::SparseDepthMap;
use crate::inference::DepthMap;
use crate::synth::{Primitive, RigPattern, SceneConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported PFM variant {0:?} (only grayscale \"Pf\" is handled)")]
    UnsupportedPfmVariant(String),
    #[error("rotation in {path} deviates from orthonormal by {error:.3e}")]
    NonOrthonormalRotation { path: PathBuf, error: f64 },
    #[error("hint ({x}, {y}) outside {width}x{height}")]
    OutOfBoundsHint {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("dataset layout error: {0}")]
    Layout(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

// ---- camera files ---------------------------------------------------

/// Depth-sweep metadata stored with each camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRangeMeta {
    pub z_min: f64,
    pub z_interval: f64,
    pub z_count: usize,
    pub z_max: f64,
}

/// A parsed camera file; resolution comes from the paired image.
#[derive(Debug, Clone)]
pub struct CameraRecord {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub range: DepthRangeMeta,
}

impl CameraRecord {
    pub fn from_camera(camera: &Camera, range: DepthRangeMeta) -> Self {
        Self {
            rotation: *camera.extrinsics.rotation(),
            translation: *camera.extrinsics.translation(),
            fx: camera.intrinsics.fx,
            fy: camera.intrinsics.fy,
            cx: camera.intrinsics.cx,
            cy: camera.intrinsics.cy,
            range,
        }
    }

    /// Build the camera once the image resolution is known. Rotations off
    /// orthonormal by more than 1e-6 are rejected; smaller text-roundtrip
    /// drift is projected back onto the rotation group.
    pub fn into_camera(self, width: usize, height: usize) -> Result<Camera, DatasetError> {
        let intrinsics = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, width, height)?;
        let err = Extrinsics::orthonormality_error(&self.rotation);
        let rotation = if err <= crate::camera::ROTATION_TOLERANCE {
            self.rotation
        } else if err <= 1e-6 {
            polar_orthonormalize(&self.rotation)
        } else {
            return Err(DatasetError::NonOrthonormalRotation {
                path: PathBuf::new(),
                error: err,
            });
        };
        let extrinsics = Extrinsics::new(rotation, self.translation)?;
        Ok(Camera::new(intrinsics, extrinsics))
    }
}

fn polar_orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

pub fn write_camera(path: &Path, camera: &Camera, range: &DepthRangeMeta) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str("extrinsic\n");
    let r = camera.extrinsics.rotation();
    let t = camera.extrinsics.translation();
    for row in 0..3 {
        out.push_str(&format!(
            "{} {} {} {}\n",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)],
            t[row]
        ));
    }
    out.push_str("0 0 0 1\n\nintrinsic\n");
    let k = &camera.intrinsics;
    out.push_str(&format!("{} 0 {}\n0 {} {}\n0 0 1\n\n", k.fx, k.cx, k.fy, k.cy));
    out.push_str(&format!(
        "{} {} {} {}\n",
        range.z_min, range.z_interval, range.z_count, range.z_max
    ));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_camera(path: &Path) -> Result<CameraRecord, DatasetError> {
    let text = fs::read_to_string(path)?;
    // token stream with line numbers
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push((ln + 1, tok));
        }
    }
    let mut pos = 0usize;
    let mut expect_word = |word: &str| -> Result<(), DatasetError> {
        match tokens.get(pos) {
            Some((_, t)) if t.eq_ignore_ascii_case(word) => {
                pos += 1;
                Ok(())
            }
            Some((ln, t)) => Err(parse_err(path, *ln, format!("expected '{word}', found '{t}'"))),
            None => Err(parse_err(path, text.lines().count(), format!("expected '{word}', found end of file"))),
        }
    };
    expect_word("extrinsic")?;
    let numbers = |pos: &mut usize, n: usize| -> Result<Vec<f64>, DatasetError> {
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            match tokens.get(*pos) {
                Some((ln, t)) => {
                    let v: f64 = t
                        .parse()
                        .map_err(|_| parse_err(path, *ln, format!("expected a number, found '{t}'")))?;
                    vals.push(v);
                    *pos += 1;
                }
                None => {
                    return Err(parse_err(
                        path,
                        text.lines().count(),
                        "file truncated while reading numbers",
                    ))
                }
            }
        }
        Ok(vals)
    };
    let e = numbers(&mut pos, 16)?;
    // bottom row must be 0 0 0 1
    if e[12] != 0.0 || e[13] != 0.0 || e[14] != 0.0 || e[15] != 1.0 {
        return Err(parse_err(path, 1, "extrinsic bottom row must be 0 0 0 1"));
    }
    match tokens.get(pos) {
        Some((_, t)) if t.eq_ignore_ascii_case("intrinsic") => pos += 1,
        Some((ln, t)) => return Err(parse_err(path, *ln, format!("expected 'intrinsic', found '{t}'"))),
        None => return Err(parse_err(path, text.lines().count(), "missing intrinsic block")),
    }
    let k = numbers(&mut pos, 9)?;
    if k[1].abs() > 1e-9 || k[3].abs() > 1e-9 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
        return Err(parse_err(path, 1, "intrinsic matrix is not pinhole [fx 0 cx; 0 fy cy; 0 0 1]"));
    }
    let z = numbers(&mut pos, 4)?;
    if let Some((ln, t)) = tokens.get(pos) {
        return Err(parse_err(path, *ln, format!("unexpected trailing token '{t}'")));
    }
    let rotation = Matrix3::new(e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10]);
    let record = CameraRecord {
        rotation,
        translation: Vector3::new(e[3], e[7], e[11]),
        fx: k[0],
        fy: k[4],
        cx: k[2],
        cy: k[5],
        range: DepthRangeMeta {
            z_min: z[0],
            z_interval: z[1],
            z_count: z[2] as usize,
            z_max: z[3],
        },
    };
    let err = Extrinsics::orthonormality_error(&record.rotation);
    if err > 1e-6 {
        return Err(DatasetError::NonOrthonormalRotation {
            path: path.to_path_buf(),
            error: err,
        });
    }
    Ok(record)
}

// ---- PFM -------------------------------------------------------------

/// Write a grayscale PFM: `Pf`, negative scale (little endian), rows bottom
/// to top, 32-bit floats. Invalid pixels are stored as NaN.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<(), DatasetError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width(), depth.height())?;
    for y in (0..depth.height()).rev() {
        for x in 0..depth.width() {
            let v = if depth.valid_at(x, y) {
                depth.depth_at(x, y)
            } else {
                f32::NAN
            };
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a grayscale PFM into a depth map (NaN pixels become invalid).
/// Positive-scale (big endian) files are byte-swapped and accepted.
pub fn read_pfm(path: &Path) -> Result<DepthMap, DatasetError> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut line_no = 1usize;
    fn next_token(
        path: &Path,
        bytes: &[u8],
        pos: &mut usize,
        line_no: &mut usize,
    ) -> Result<String, DatasetError> {
        while *pos < bytes.len() && (bytes[*pos] as char).is_whitespace() {
            if bytes[*pos] == b'\n' {
                *line_no += 1;
            }
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !(bytes[*pos] as char).is_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse_err(path, *line_no, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }
    let magic = next_token(path, &bytes, &mut pos, &mut line_no)?;
    if magic == "PF" {
        return Err(DatasetError::UnsupportedPfmVariant(magic));
    }
    if magic != "Pf" {
        return Err(parse_err(path, 1, format!("bad PFM magic {magic:?}")));
    }
    let width: usize = next_token(path, &bytes, &mut pos, &mut line_no)?
        .parse()
        .map_err(|_| parse_err(path, line_no, "bad width"))?;
    let height: usize = next_token(path, &bytes, &mut pos, &mut line_no)?
        .parse()
        .map_err(|_| parse_err(path, line_no, "bad height"))?;
    let scale: f64 = next_token(path, &bytes, &mut pos, &mut line_no)?
        .parse()
        .map_err(|_| parse_err(path, line_no, "bad scale"))?;
    if scale == 0.0 {
        return Err(parse_err(path, line_no, "scale must be nonzero"));
    }
    let little_endian = scale < 0.0;
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !(bytes[pos] as char).is_whitespace() {
        return Err(parse_err(path, line_no, "missing header terminator"));
    }
    pos += 1;
    let need = width * height * 4;
    if bytes.len() - pos < need {
        return Err(parse_err(
            path,
            line_no,
            format!("payload truncated: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let mut depth = vec![0.0f32; width * height];
    let mut valid = vec![false; width * height];
    for row in 0..height {
        let y = height - 1 - row; // bottom-to-top storage
        for x in 0..width {
            let o = pos + (row * width + x) * 4;
            let raw: [u8; 4] = bytes[o..o + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            depth[y * width + x] = v;
            valid[y * width + x] = !v.is_nan();
        }
    }
    let confidence = valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    Ok(DepthMap::from_parts(width, height, depth, confidence, valid))
}

// ---- sparse hints ---------------------------------------------------

/// Write hints as `width height count` then one `x y depth` line per hint,
/// depth printed with 9 significant digits (exact for f32).
pub fn write_hints(path: &Path, hints: &SparseDepthMap) -> Result<(), DatasetError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{} {} {}", hints.width(), hints.height(), hints.count())?;
    for (x, y, d) in hints.iter_hints() {
        writeln!(w, "{x} {y} {:.8e}", d)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hints(path: &Path) -> Result<SparseDepthMap, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty hints file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 3 {
        return Err(parse_err(path, 1, "header must be 'width height count'"));
    }
    let width: usize = head[0]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad width"))?;
    let height: usize = head[1]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad height"))?;
    let count: usize = head[2]
        .parse()
        .map_err(|_| parse_err(path, 1, "bad count"))?;
    let mut hints = SparseDepthMap::new(width, height);
    let mut seen = 0usize;
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(path, ln, "expected 'x y depth'"));
        }
        let x: i64 = parts[0]
            .parse()
            .map_err(|_| parse_err(path, ln, "bad x"))?;
        let y: i64 = parts[1]
            .parse()
            .map_err(|_| parse_err(path, ln, "bad y"))?;
        let d: f32 = parts[2]
            .parse()
            .map_err(|_| parse_err(path, ln, "bad depth"))?;
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return Err(DatasetError::OutOfBoundsHint {
                x,
                y,
                width,
                height,
            });
        }
        if d <= 0.0 {
            return Err(parse_err(path, ln, format!("non-positive hint depth {d}")));
        }
        hints.set_hint(x as usize, y as usize, d);
        seen += 1;
    }
    if seen != count {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("header promised {count} hints, found {seen}"),
        ));
    }
    Ok(hints)
}

// ---- images -----------------------------------------------------------

/// Write an image as 8-bit PNG (grayscale or RGB according to its channel
/// count).
pub fn write_image(path: &Path, image: &ImageBuf) -> Result<(), DatasetError> {
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (image.width() as u32, image.height() as u32);
    match image.channels() {
        1 => {
            let buf: Vec<u8> = image.data().iter().map(|v| quantize(*v)).collect();
            let img: image::GrayImage = image::ImageBuffer::from_raw(w, h, buf)
                .expect("buffer sized from the image");
            img.save(path)?;
        }
        _ => {
            let buf: Vec<u8> = image.data().iter().map(|v| quantize(*v)).collect();
            let img: image::RgbImage = image::ImageBuffer::from_raw(w, h, buf)
                .expect("buffer sized from the image");
            img.save(path)?;
        }
    }
    Ok(())
}

/// Read an 8-bit PNG or PNM image into normalized floats. Grayscale inputs
/// stay single-channel, everything else becomes RGB.
pub fn read_image(path: &Path) -> Result<ImageBuf, DatasetError> {
    let img = image::open(path)?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data: Vec<f32> = g.into_raw().iter().map(|v| *v as f32 / 255.0).collect();
            ImageBuf::from_vec(w, h, 1, data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let data: Vec<f32> = rgb.into_raw().iter().map(|v| *v as f32 / 255.0).collect();
            ImageBuf::from_vec(w, h, 3, data)
        }
    })
}

// ---- scene layout -------------------------------------------------------

/// Source-view indices per reference view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairList {
    pub entries: Vec<(usize, Vec<usize>)>,
}

pub fn write_pair_list(path: &Path, pairs: &PairList) -> Result<(), DatasetError> {
    let mut out = format!("{}\n", pairs.entries.len());
    for (reference, sources) in &pairs.entries {
        out.push_str(&reference.to_string());
        for s in sources {
            out.push(' ');
            out.push_str(&s.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pair_list(path: &Path, view_count: usize) -> Result<PairList, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty pair list"))?;
    let n: usize = first
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, "first line must be the entry count"))?;
    let mut entries = Vec::with_capacity(n);
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut nums = line.split_whitespace().map(|t| {
            t.parse::<usize>()
                .map_err(|_| parse_err(path, ln, format!("bad view index '{t}'")))
        });
        let reference = nums
            .next()
            .ok_or_else(|| parse_err(path, ln, "missing reference index"))??;
        let sources: Vec<usize> = nums.collect::<Result<_, _>>()?;
        for v in std::iter::once(&reference).chain(sources.iter()) {
            if *v >= view_count {
                return Err(parse_err(
                    path,
                    ln,
                    format!("view index {v} out of range (have {view_count} views)"),
                ));
            }
        }
        if sources.is_empty() {
            return Err(parse_err(path, ln, "a reference needs at least one source"));
        }
        entries.push((reference, sources));
    }
    if entries.len() != n {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("pair list promised {n} entries, found {}", entries.len()),
        ));
    }
    Ok(PairList { entries })
}

/// A scene directory opened for reading.
#[derive(Debug)]
pub struct SceneDataset {
    root: PathBuf,
    image_files: Vec<PathBuf>,
    camera_files: Vec<PathBuf>,
    depth_files: Vec<PathBuf>,
    hint_files: Vec<PathBuf>,
    pub pairs: PairList,
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| extensions.iter().any(|x| e.eq_ignore_ascii_case(x)))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

impl SceneDataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let image_files = sorted_files(&root.join("images"), &["png", "ppm", "pgm", "pnm"])?;
        let camera_files = sorted_files(&root.join("cams"), &["txt"])?;
        let depth_files = sorted_files(&root.join("depths"), &["pfm"])?;
        let hint_files = sorted_files(&root.join("hints"), &["txt"])?;
        if image_files.is_empty() {
            return Err(DatasetError::Layout(format!(
                "no images under {}",
                root.display()
            )));
        }
        if image_files.len() != camera_files.len() {
            return Err(DatasetError::Layout(format!(
                "{} images but {} camera files",
                image_files.len(),
                camera_files.len()
            )));
        }
        if !depth_files.is_empty() && depth_files.len() != image_files.len() {
            return Err(DatasetError::Layout(format!(
                "{} depth maps for {} images",
                depth_files.len(),
                image_files.len()
            )));
        }
        if !hint_files.is_empty() && hint_files.len() != image_files.len() {
            return Err(DatasetError::Layout(format!(
                "{} hint files for {} images",
                hint_files.len(),
                image_files.len()
            )));
        }
        let pairs = read_pair_list(&root.join("pair.txt"), image_files.len())?;
        Ok(Self {
            root: root.to_path_buf(),
            image_files,
            camera_files,
            depth_files,
            hint_files,
            pairs,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.image_files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_files.is_empty()
    }

    pub fn has_gt_depths(&self) -> bool {
        !self.depth_files.is_empty()
    }

    pub fn has_hints(&self) -> bool {
        !self.hint_files.is_empty()
    }

    pub fn image(&self, view: usize) -> Result<ImageBuf, DatasetError> {
        read_image(&self.image_files[view])
    }

    /// Camera for a view; resolution comes from the image.
    pub fn camera(&self, view: usize) -> Result<(Camera, DepthRangeMeta), DatasetError> {
        let record = read_camera(&self.camera_files[view])?;
        let image = self.image(view)?;
        let range = record.range;
        Ok((record.into_camera(image.width(), image.height())?, range))
    }

    pub fn gt_depth(&self, view: usize) -> Result<Option<DepthMap>, DatasetError> {
        if self.depth_files.is_empty() {
            return Ok(None);
        }
        Ok(Some(read_pfm(&self.depth_files[view])?))
    }

    pub fn hints(&self, view: usize) -> Result<Option<SparseDepthMap>, DatasetError> {
        if self.hint_files.is_empty() {
            return Ok(None);
        }
        Ok(Some(read_hints(&self.hint_files[view])?))
    }
}

/// Write a full scene directory: images, cameras, optional ground-truth
/// depth, optional hints and the pair list.
pub struct SceneWriter<'a> {
    pub images: &'a [ImageBuf],
    pub cameras: &'a [Camera],
    pub range: DepthRangeMeta,
    pub gt_depths: Option<&'a [DepthMap]>,
    pub hints: Option<&'a [SparseDepthMap]>,
    pub pairs: &'a PairList,
}

pub fn write_scene(dir: &Path, scene: &SceneWriter) -> Result<(), DatasetError> {
    assert_eq!(scene.images.len(), scene.cameras.len());
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("cams"))?;
    if scene.gt_depths.is_some() {
        fs::create_dir_all(dir.join("depths"))?;
    }
    if scene.hints.is_some() {
        fs::create_dir_all(dir.join("hints"))?;
    }
    for (i, (img, cam)) in scene.images.iter().zip(scene.cameras).enumerate() {
        write_image(&dir.join(format!("images/{i:04}.png")), img)?;
        write_camera(&dir.join(format!("cams/{i:04}.txt")), cam, &scene.range)?;
        if let Some(depths) = scene.gt_depths {
            write_pfm(&dir.join(format!("depths/{i:04}.pfm")), &depths[i])?;
        }
        if let Some(hints) = scene.hints {
            write_hints(&dir.join(format!("hints/{i:04}.txt")), &hints[i])?;
        }
    }
    write_pair_list(&dir.join("pair.txt"), scene.pairs)?;
    Ok(())
}

/// Read the depth PFMs of a directory, sorted by file name. Directories
/// written by `reconstruct` also hold confidence maps, so files named
/// `depth_*` win over the rest when both are present.
pub fn read_pfm_dir(dir: &Path) -> Result<Vec<DepthMap>, DatasetError> {
    let mut files = sorted_files(dir, &["pfm"])?;
    let depth_named: Vec<PathBuf> = files
        .iter()
        .filter(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .map(|s| s.starts_with("depth"))
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    if !depth_named.is_empty() {
        files = depth_named;
    }
    if files.is_empty() {
        return Err(DatasetError::Layout(format!(
            "no .pfm files under {}",
            dir.display()
        )));
    }
    files.iter().map(|f| read_pfm(f)).collect()
}

/// All-to-all pair list: every view references every other, nearest first.
pub fn all_pairs(view_count: usize) -> PairList {
    let entries = (0..view_count)
        .map(|r| {
            let mut sources: Vec<usize> = (0..view_count).filter(|s| *s != r).collect();
            sources.sort_by_key(|s| (*s as i64 - r as i64).unsigned_abs());
            (r, sources)
        })
        .collect();
    PairList { entries }
}

// ---- scene config files ---------------------------------------------

/// Parse a plain-text scene description. Lines are `key value...` pairs:
///
/// ```text
/// width 160
/// height 128
/// views 5
/// focal 144
/// rig lateral 0.45      # or: rig arc <radius> <span_rad> | rig shell <r0> <r1>
/// target 0 0 12
/// standoff 12
/// texture_seed 7
/// texture_frequency 1.9
/// hint_noise 0
/// wall 0 0 20 30 20     # center, half extents (fronto-parallel)
/// plane 0 0 10 12 0 3 0 9 0   # center, half-axis u, half-axis v
/// sphere 1 0 9 1.4
/// ```
///
/// `#` starts a comment.
pub fn parse_scene_config(path: &Path) -> Result<SceneConfig, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut cfg = SceneConfig {
        width: 160,
        height: 128,
        views: 5,
        focal: 0.0, // resolved after parsing
        rig: RigPattern::Lateral { baseline: 0.45 },
        target: Vector3::new(0.0, 0.0, 12.0),
        standoff: 12.0,
        primitives: Vec::new(),
        texture_seed: 1,
        texture_frequency: 1.9,
        hint_noise: 0.0,
    };
    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        let floats = |n: usize| -> Result<Vec<f64>, DatasetError> {
            if rest.len() != n {
                return Err(parse_err(path, ln, format!("'{key}' needs {n} values")));
            }
            rest.iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| parse_err(path, ln, format!("bad number '{t}'")))
                })
                .collect()
        };
        match key {
            "width" => cfg.width = floats(1)?[0] as usize,
            "height" => cfg.height = floats(1)?[0] as usize,
            "views" => cfg.views = floats(1)?[0] as usize,
            "focal" => cfg.focal = floats(1)?[0],
            "standoff" => cfg.standoff = floats(1)?[0],
            "texture_seed" => cfg.texture_seed = floats(1)?[0] as u64,
            "texture_frequency" => cfg.texture_frequency = floats(1)?[0],
            "hint_noise" => cfg.hint_noise = floats(1)?[0],
            "target" => {
                let v = floats(3)?;
                cfg.target = Vector3::new(v[0], v[1], v[2]);
            }
            "rig" => match rest.as_slice() {
                ["lateral", b] => {
                    cfg.rig = RigPattern::Lateral {
                        baseline: b
                            .parse()
                            .map_err(|_| parse_err(path, ln, "bad baseline"))?,
                    }
                }
                ["arc", r, s] => {
                    cfg.rig = RigPattern::Arc {
                        radius: r.parse().map_err(|_| parse_err(path, ln, "bad radius"))?,
                        span_radians: s.parse().map_err(|_| parse_err(path, ln, "bad span"))?,
                    }
                }
                ["shell", a, b] => {
                    cfg.rig = RigPattern::Shell {
                        r_min: a.parse().map_err(|_| parse_err(path, ln, "bad r_min"))?,
                        r_max: b.parse().map_err(|_| parse_err(path, ln, "bad r_max"))?,
                    }
                }
                _ => {
                    return Err(parse_err(
                        path,
                        ln,
                        "rig must be 'lateral <baseline>', 'arc <radius> <span>' or 'shell <r0> <r1>'",
                    ))
                }
            },
            "wall" => {
                let v = floats(5)?;
                cfg.primitives.push(Primitive::wall(
                    Vector3::new(v[0], v[1], v[2]),
                    v[3],
                    v[4],
                ));
            }
            "plane" => {
                let v = floats(9)?;
                cfg.primitives.push(Primitive::Rect {
                    center: Vector3::new(v[0], v[1], v[2]),
                    half_u: Vector3::new(v[3], v[4], v[5]),
                    half_v: Vector3::new(v[6], v[7], v[8]),
                });
            }
            "sphere" => {
                let v = floats(4)?;
                cfg.primitives.push(Primitive::Sphere {
                    center: Vector3::new(v[0], v[1], v[2]),
                    radius: v[3],
                });
            }
            other => return Err(parse_err(path, ln, format!("unknown key '{other}'"))),
        }
    }
    if cfg.focal == 0.0 {
        cfg.focal = cfg.width as f64 * 0.9;
    }
    if cfg.primitives.is_empty() {
        return Err(parse_err(path, text.lines().count().max(1), "no primitives declared"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::synth::{flat_wall_scene, generate_scene};

    fn test_camera() -> Camera {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        Camera::new(k, Extrinsics::identity())
    }

    #[test]
    fn camera_file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.txt");
        // a rotated, translated camera with awkward decimals
        let angle: f64 = 0.1234567891234;
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        let cam = Camera::new(
            Intrinsics::new(123.456, 234.567, 61.7, 45.3, 128, 96).unwrap(),
            Extrinsics::new(r, Vector3::new(0.123456789, -4.2, 7.77)).unwrap(),
        );
        let range = DepthRangeMeta {
            z_min: 2.5,
            z_interval: 0.125,
            z_count: 64,
            z_max: 10.375,
        };
        write_camera(&path, &cam, &range).unwrap();
        let record = read_camera(&path).unwrap();
        assert_eq!(record.range, range);
        let back = record.into_camera(128, 96).unwrap();
        assert_eq!(back.intrinsics, cam.intrinsics);
        let dr = back.extrinsics.rotation() - cam.extrinsics.rotation();
        assert!(dr.iter().all(|v| v.abs() < 1e-9));
        let dt = back.extrinsics.translation() - cam.extrinsics.translation();
        assert!(dt.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn identity_camera_file_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.txt");
        let range = DepthRangeMeta {
            z_min: 1.0,
            z_interval: 0.1,
            z_count: 32,
            z_max: 4.1,
        };
        write_camera(&path, &test_camera(), &range).unwrap();
        let rec = read_camera(&path).unwrap();
        assert_eq!(rec.fx, 100.0);
        assert_eq!(rec.fy, 100.0);
        assert_eq!(rec.cx, 50.0);
        assert_eq!(rec.cy, 50.0);
        assert_eq!(rec.rotation, Matrix3::identity());
    }

    #[test]
    fn malformed_camera_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.txt");
        fs::write(
            &path,
            "extrinsic\n1 0 0 0\n0 1 0 0\n0 0 oops 0\n0 0 0 1\nintrinsic\n100 0 50\n0 100 50\n0 0 1\n1 0.1 32 4.1\n",
        )
        .unwrap();
        match read_camera(&path) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        // truncated file
        fs::write(&path, "extrinsic\n1 0 0 0\n0 1 0 0\n").unwrap();
        assert!(matches!(
            read_camera(&path),
            Err(DatasetError::Parse { .. })
        ));
    }

    #[test]
    fn sheared_rotation_in_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.txt");
        fs::write(
            &path,
            "extrinsic\n1 0.001 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\nintrinsic\n100 0 50\n0 100 50\n0 0 1\n1 0.1 32 4.1\n",
        )
        .unwrap();
        assert!(matches!(
            read_camera(&path),
            Err(DatasetError::NonOrthonormalRotation { .. })
        ));
    }

    #[test]
    fn pfm_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pfm");
        let mut rng = Rng::new(12);
        let (w, h) = (17, 9);
        let mut depth = vec![0.0f32; w * h];
        let mut valid = vec![true; w * h];
        for i in 0..w * h {
            if rng.next_f64() < 0.2 {
                valid[i] = false;
            } else {
                depth[i] = rng.uniform(0.1, 50.0) as f32;
            }
        }
        let map = DepthMap::from_parts(w, h, depth, vec![1.0; w * h], valid);
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.width(), w);
        assert_eq!(back.validity_slice(), map.validity_slice());
        for i in 0..w * h {
            if map.validity_slice()[i] {
                assert_eq!(back.depth_slice()[i], map.depth_slice()[i]);
            }
        }
        // byte-level: rewrite and compare files
        let path2 = dir.path().join("depth2.pfm");
        write_pfm(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn single_value_pfm_payload_is_the_le_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pfm");
        let map = DepthMap::from_parts(1, 1, vec![3.25], vec![1.0], vec![true]);
        write_pfm(&path, &map).unwrap();
        let bytes = fs::read(&path).unwrap();
        let payload = &bytes[bytes.len() - 4..];
        assert_eq!(payload, 3.25f32.to_le_bytes());
    }

    #[test]
    fn big_endian_pfm_is_byte_swapped_and_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        fs::write(&path, bytes).unwrap();
        let map = read_pfm(&path).unwrap();
        assert_eq!(map.depth_at(0, 0), 1.5);
        assert_eq!(map.depth_at(1, 0), 2.5);
    }

    #[test]
    fn color_pfm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("color.pfm");
        fs::write(&path, b"PF\n1 1\n-1.0\n aaaaaaaaaaaa").unwrap();
        assert!(matches!(
            read_pfm(&path),
            Err(DatasetError::UnsupportedPfmVariant(_))
        ));
    }

    #[test]
    fn truncated_pfm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pfm");
        let mut bytes = b"Pf\n4 4\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0u8; 16]); // need 64
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_pfm(&path), Err(DatasetError::Parse { .. })));
    }

    #[test]
    fn hints_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hints.txt");
        let mut rng = Rng::new(3);
        let mut hints = SparseDepthMap::new(40, 30);
        for _ in 0..60 {
            hints.set_hint(rng.index(40), rng.index(30), rng.uniform(0.01, 99.0) as f32);
        }
        write_hints(&path, &hints).unwrap();
        let back = read_hints(&path).unwrap();
        assert_eq!(hints, back);
    }

    #[test]
    fn empty_hints_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("none.txt");
        write_hints(&path, &SparseDepthMap::new(8, 8)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "8 8 0");
        assert_eq!(read_hints(&path).unwrap().count(), 0);
    }

    #[test]
    fn out_of_bounds_hint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oob.txt");
        fs::write(&path, "8 8 1\n8 0 1.0\n").unwrap();
        assert!(matches!(
            read_hints(&path),
            Err(DatasetError::OutOfBoundsHint { x: 8, y: 0, .. })
        ));
    }

    #[test]
    fn hint_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.txt");
        fs::write(&path, "8 8 3\n1 1 1.0\n").unwrap();
        assert!(matches!(read_hints(&path), Err(DatasetError::Parse { .. })));
    }

    #[test]
    fn scene_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = flat_wall_scene(32, 24, 3, 6.0);
        let (views, gt) = generate_scene(&cfg, 5).unwrap();
        let cameras: Vec<Camera> = std::iter::once(views.reference.camera.clone())
            .chain(views.sources.iter().map(|v| v.camera.clone()))
            .collect();
        let images: Vec<ImageBuf> = gt.views.iter().map(|v| v.image.clone()).collect();
        let depths: Vec<DepthMap> = gt.views.iter().map(|v| v.depth.clone()).collect();
        let range = DepthRangeMeta {
            z_min: 4.0,
            z_interval: 0.1,
            z_count: 41,
            z_max: 8.0,
        };
        let pairs = all_pairs(3);
        write_scene(
            dir.path(),
            &SceneWriter {
                images: &images,
                cameras: &cameras,
                range,
                gt_depths: Some(&depths),
                hints: None,
                pairs: &pairs,
            },
        )
        .unwrap();
        let ds = SceneDataset::open(dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.has_gt_depths());
        assert!(!ds.has_hints());
        let (cam0, r0) = ds.camera(0).unwrap();
        assert_eq!(r0, range);
        assert_eq!(cam0.intrinsics.width, 32);
        let gt0 = ds.gt_depth(0).unwrap().unwrap();
        assert_eq!(gt0.depth_slice(), depths[0].depth_slice());
        let img0 = ds.image(0).unwrap();
        assert_eq!(img0.width(), 32);
        // 8-bit quantization bounds the image roundtrip error
        for (a, b) in img0.data().iter().zip(images[0].data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert_eq!(ds.pairs, pairs);
    }

    #[test]
    fn pnm_images_are_readable() {
        let dir = tempfile::tempdir().unwrap();
        // binary P5 (grayscale) and P6 (RGB), written by hand
        let pgm = dir.path().join("gray.pgm");
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        fs::write(&pgm, bytes).unwrap();
        let img = read_image(&pgm).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (3, 2, 1));
        assert!((img.value(1, 0, 0) - 51.0 / 255.0).abs() < 1e-6);
        assert!((img.value(2, 1, 0) - 1.0).abs() < 1e-6);

        let ppm = dir.path().join("color.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        fs::write(&ppm, bytes).unwrap();
        let img = read_image(&ppm).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 3));
        assert_eq!(img.value(0, 0, 0), 1.0);
        assert_eq!(img.value(1, 0, 2), 1.0);
    }

    #[test]
    fn pair_list_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pair.txt");
        let pairs = all_pairs(4);
        write_pair_list(&path, &pairs).unwrap();
        let back = read_pair_list(&path, 4).unwrap();
        assert_eq!(pairs, back);
        // out-of-range index
        fs::write(&path, "1\n0 5\n").unwrap();
        assert!(read_pair_list(&path, 4).is_err());
    }

    #[test]
    fn scene_config_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.txt");
        fs::write(
            &path,
            "# comment\nwidth 64\nheight 48\nviews 3\nrig arc 5.0 0.4\ntarget 0 0 10\nstandoff 10\nwall 0 0 20 30 20\nsphere 1 0 9 1.4\n",
        )
        .unwrap();
        let cfg = parse_scene_config(&path).unwrap();
        assert_eq!(cfg.width, 64);
        assert_eq!(cfg.views, 3);
        assert!(matches!(cfg.rig, RigPattern::Arc { .. }));
        assert_eq!(cfg.primitives.len(), 2);
        assert_eq!(cfg.focal, 64.0 * 0.9);
        // unknown keys name their line
        fs::write(&path, "width 64\nbogus 1\n").unwrap();
        match parse_scene_config(&path) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        // a config without primitives is unusable
        fs::write(&path, "width 64\nheight 48\n").unwrap();
        assert!(parse_scene_config(&path).is_err());
    }
}
