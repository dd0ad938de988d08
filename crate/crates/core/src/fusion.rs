//! Depth-map fusion through multi-view geometric consistency, and the
//! depth/point-cloud evaluation metrics.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{transfer_point, Camera};
use crate::inference::DepthMap;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("resolution mismatch: {est_w}x{est_h} vs {gt_w}x{gt_h}")]
    ResolutionMismatch {
        est_w: usize,
        est_h: usize,
        gt_w: usize,
        gt_h: usize,
    },
    #[error("ground truth has no valid pixels")]
    EmptyGroundTruth,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("ply error: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Error thresholds and fusion consistency parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalThresholds {
    /// Depth-error thresholds (scene units).
    pub tau_list: Vec<f64>,
    /// Minimum number of source views that must confirm a pixel.
    pub min_views: usize,
    /// Maximum reprojection round-trip error in pixels.
    pub max_reprojection_px: f64,
    /// Maximum relative depth difference between the source estimate and the
    /// transferred depth.
    pub max_relative_depth: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            tau_list: vec![1.0, 2.0, 3.0, 4.0],
            min_views: 2,
            max_reprojection_px: 1.0,
            max_relative_depth: 0.01,
        }
    }
}

/// Fraction of ground-truth-valid pixels whose absolute depth error exceeds
/// each threshold.
pub fn error_rates(est: &DepthMap, gt: &DepthMap, taus: &[f64]) -> Result<Vec<f64>, EvalError> {
    if est.width() != gt.width() || est.height() != gt.height() {
        return Err(EvalError::ResolutionMismatch {
            est_w: est.width(),
            est_h: est.height(),
            gt_w: gt.width(),
            gt_h: gt.height(),
        });
    }
    let mut total = 0u64;
    let mut exceed = vec![0u64; taus.len()];
    for i in 0..gt.depth_slice().len() {
        if !gt.validity_slice()[i] {
            continue;
        }
        total += 1;
        let err = (est.depth_slice()[i] as f64 - gt.depth_slice()[i] as f64).abs();
        for (k, tau) in taus.iter().enumerate() {
            if err > *tau {
                exceed[k] += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    Ok(exceed.iter().map(|e| *e as f64 / total as f64).collect())
}

/// A 3-D point cloud with optional per-point color.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Backproject every valid pixel of a depth map into world space.
pub fn depth_map_to_cloud(depth: &DepthMap, camera: &Camera, stride: usize) -> PointCloud {
    let stride = stride.max(1);
    let mut points = Vec::new();
    for y in (0..depth.height()).step_by(stride) {
        for x in (0..depth.width()).step_by(stride) {
            if !depth.valid_at(x, y) {
                continue;
            }
            let d = depth.depth_at(x, y) as f64;
            if d <= 0.0 {
                continue;
            }
            if let Ok(p) = camera.backproject(&Vector2::new(x as f64, y as f64), d) {
                points.push(p);
            }
        }
    }
    PointCloud {
        points,
        colors: None,
    }
}

/// Fuse per-view depth maps into one point cloud. Every view acts as
/// reference in turn; a pixel is kept when at least `min_views` other views
/// confirm it (round-trip reprojection under `max_reprojection_px` pixels
/// and relative depth gap under `max_relative_depth`). The kept point lies
/// on the reference ray at the depth averaged over the reference estimate
/// and the confirming views' reprojected depths.
pub fn fuse(views: &[(&DepthMap, &Camera)], thresholds: &EvalThresholds) -> PointCloud {
    let mut all_points = Vec::new();
    for (ri, (ref_depth, ref_cam)) in views.iter().enumerate() {
        let rows: Vec<Vec<Vector3<f64>>> = (0..ref_depth.height())
            .into_par_iter()
            .map(|y| {
                let mut row_points = Vec::new();
                for x in 0..ref_depth.width() {
                    if !ref_depth.valid_at(x, y) {
                        continue;
                    }
                    let d = ref_depth.depth_at(x, y) as f64;
                    if d <= 0.0 {
                        continue;
                    }
                    let q = Vector2::new(x as f64, y as f64);
                    let mut confirmed_depths = Vec::new();
                    for (si, (src_depth, src_cam)) in views.iter().enumerate() {
                        if si == ri {
                            continue;
                        }
                        let Ok(fwd) = transfer_point(&q, d, ref_cam, src_cam) else {
                            continue;
                        };
                        let sx = fwd.pixel.x.round();
                        let sy = fwd.pixel.y.round();
                        if sx < 0.0
                            || sy < 0.0
                            || sx as usize >= src_depth.width()
                            || sy as usize >= src_depth.height()
                        {
                            continue;
                        }
                        let (sxu, syu) = (sx as usize, sy as usize);
                        if !src_depth.valid_at(sxu, syu) {
                            continue;
                        }
                        let d_src = src_depth.depth_at(sxu, syu) as f64;
                        if d_src <= 0.0 {
                            continue;
                        }
                        if (d_src - fwd.depth).abs() / fwd.depth > thresholds.max_relative_depth {
                            continue;
                        }
                        let src_px = Vector2::new(sxu as f64, syu as f64);
                        let Ok(back) = transfer_point(&src_px, d_src, src_cam, ref_cam) else {
                            continue;
                        };
                        if (back.pixel - q).norm() >= thresholds.max_reprojection_px {
                            continue;
                        }
                        confirmed_depths.push(back.depth);
                    }
                    if confirmed_depths.len() >= thresholds.min_views {
                        confirmed_depths.push(d);
                        // order-independent average: sum in sorted order
                        confirmed_depths.sort_unstable_by(f64::total_cmp);
                        let mean: f64 =
                            confirmed_depths.iter().sum::<f64>() / confirmed_depths.len() as f64;
                        if let Ok(p) = ref_cam.backproject(&q, mean) {
                            row_points.push(p);
                        }
                    }
                }
                row_points
            })
            .collect();
        for row in rows {
            all_points.extend(row);
        }
    }
    PointCloud {
        points: all_points,
        colors: None,
    }
}

/// Accuracy (est -> gt), completeness (gt -> est) and their average, with
/// per-point distances clipped at `dist_cap` before averaging. Lower is
/// better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub average: f64,
}

pub fn cloud_accuracy_completeness(
    est: &PointCloud,
    gt: &PointCloud,
    dist_cap: f64,
) -> Result<CloudMetrics, EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let gt_index = SpatialGrid::build(&gt.points);
    let accuracy = mean_clipped_nn(&est.points, &gt_index, dist_cap);
    let est_index = SpatialGrid::build(&est.points);
    let completeness = mean_clipped_nn(&gt.points, &est_index, dist_cap);
    Ok(CloudMetrics {
        accuracy,
        completeness,
        average: (accuracy + completeness) / 2.0,
    })
}

fn mean_clipped_nn(queries: &[Vector3<f64>], index: &SpatialGrid, cap: f64) -> f64 {
    // collect keeps query order, so the final sum is independent of the
    // thread partitioning
    let dists: Vec<f64> = queries
        .par_iter()
        .map(|q| index.nearest_distance(q).min(cap))
        .collect();
    dists.iter().sum::<f64>() / queries.len() as f64
}

/// Uniform spatial hash over the target cloud's bounding box, with ring
/// expansion until no closer point can exist.
struct SpatialGrid {
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl SpatialGrid {
    fn build(points: &[Vector3<f64>]) -> SpatialGrid {
        assert!(!points.is_empty());
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).amax().max(1e-9);
        // aim for a handful of points per occupied cell
        let target = (points.len() as f64).cbrt().ceil().max(1.0) as usize;
        let cells_per_axis = target.clamp(1, 128);
        let cell = extent / cells_per_axis as f64;
        let dims = [
            (((hi.x - lo.x) / cell).floor() as usize + 1).max(1),
            (((hi.y - lo.y) / cell).floor() as usize + 1).max(1),
            (((hi.z - lo.z) / cell).floor() as usize + 1).max(1),
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, &lo, cell, &dims);
            buckets[c].push(i as u32);
        }
        SpatialGrid {
            origin: lo,
            cell,
            dims,
            buckets,
            points: points.to_vec(),
        }
    }

    #[inline]
    fn coords_of(p: &Vector3<f64>, origin: &Vector3<f64>, cell: f64, dims: &[usize; 3]) -> [i64; 3] {
        [
            (((p.x - origin.x) / cell).floor() as i64).clamp(0, dims[0] as i64 - 1),
            (((p.y - origin.y) / cell).floor() as i64).clamp(0, dims[1] as i64 - 1),
            (((p.z - origin.z) / cell).floor() as i64).clamp(0, dims[2] as i64 - 1),
        ]
    }

    fn cell_of(p: &Vector3<f64>, origin: &Vector3<f64>, cell: f64, dims: &[usize; 3]) -> usize {
        let c = Self::coords_of(p, origin, cell, dims);
        (c[2] as usize * dims[1] + c[1] as usize) * dims[0] + c[0] as usize
    }

    /// Exact nearest-neighbor distance (unclipped) via expanding rings.
    fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        let qc = Self::coords_of(q, &self.origin, self.cell, &self.dims);
        let max_ring = self.dims.iter().map(|d| *d as i64).max().unwrap();
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // once every point in further rings must be farther than best,
            // stop: points in ring r are at least (r-1)*cell away
            if best.is_finite() && (ring - 1) as f64 * self.cell >= best {
                break;
            }
            let mut any_cell = false;
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        // shell only
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (cx, cy, cz) = (qc[0] + dx, qc[1] + dy, qc[2] + dz);
                        if cx < 0
                            || cy < 0
                            || cz < 0
                            || cx >= self.dims[0] as i64
                            || cy >= self.dims[1] as i64
                            || cz >= self.dims[2] as i64
                        {
                            continue;
                        }
                        any_cell = true;
                        let bucket = &self.buckets
                            [(cz as usize * self.dims[1] + cy as usize) * self.dims[0]
                                + cx as usize];
                        for &i in bucket {
                            let d = (self.points[i as usize] - q).norm();
                            if d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
            if !any_cell && best.is_finite() {
                break;
            }
        }
        best
    }
}

// ---- PLY ----------------------------------------------------------------

/// Write a point cloud as binary little-endian PLY (float32 positions,
/// optional uchar RGB).
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), EvalError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let with_color = cloud.colors.is_some();
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.points.len()
    )?;
    if with_color {
        write!(
            w,
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        )?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        w.write_all(&(p.x as f32).to_le_bytes())?;
        w.write_all(&(p.y as f32).to_le_bytes())?;
        w.write_all(&(p.z as f32).to_le_bytes())?;
        if let Some(colors) = &cloud.colors {
            w.write_all(&colors[i])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a PLY written by [`write_ply`] (binary little-endian, float32
/// x/y/z, optional uchar RGB).
pub fn read_ply(path: &Path) -> Result<PointCloud, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(EvalError::Ply("unexpected end of header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["ply"] | ["comment", ..] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(EvalError::Ply(format!("unsupported format {other}")));
            }
            ["element", "vertex", n] => {
                count = Some(
                    n.parse()
                        .map_err(|_| EvalError::Ply("bad vertex count".into()))?,
                );
            }
            ["element", ..] => {
                return Err(EvalError::Ply("only vertex elements supported".into()));
            }
            ["property", _, name] => props.push((*name).to_string()),
            ["end_header"] => break,
            [] => {}
            _ => return Err(EvalError::Ply(format!("unexpected header line: {line}"))),
        }
    }
    let count = count.ok_or_else(|| EvalError::Ply("missing vertex element".into()))?;
    let with_color = props.iter().any(|p| p == "red");
    if props.len() != 3 && !(props.len() == 6 && with_color) {
        return Err(EvalError::Ply(format!("unsupported property set {props:?}")));
    }
    let mut points = Vec::with_capacity(count);
    let mut colors = with_color.then(|| Vec::with_capacity(count));
    let mut buf = [0u8; 4];
    for _ in 0..count {
        let mut coords = [0f32; 3];
        for c in &mut coords {
            reader.read_exact(&mut buf)?;
            *c = f32::from_le_bytes(buf);
        }
        points.push(Vector3::new(coords[0] as f64, coords[1] as f64, coords[2] as f64));
        if let Some(colors) = &mut colors {
            let mut rgb = [0u8; 3];
            reader.read_exact(&mut rgb)?;
            colors.push(rgb);
        }
    }
    Ok(PointCloud { points, colors })
}
