//! Multi-view hint aggregation: reprojecting per-view sparse depth into the
//! reference view, merging collisions, and filtering occlusion outliers.
//!
//! Points reprojected from source viewpoints can come from surfaces that the
//! reference view does not see; fed to modulation they would carve minima at
//! the wrong depth. The filter removes a point when some neighbor within a
//! Chebyshev pixel radius either flips its angular order (the
//! pixel-vs-spherical-coordinate sign tests) or sits closer by more than
//! `epsilon` in depth.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::camera::{transfer_point, Camera};
use crate::guidance::SparseDepthMap;

#[derive(Debug, Error)]
pub enum FilterConfigError {
    #[error("filter parameters out of range: epsilon={epsilon}, radius={radius}")]
    InvalidParams { epsilon: f64, radius: usize },
}

/// Occlusion-filter parameters: depth-gap threshold (scene units) and
/// neighborhood half-width (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    epsilon: f64,
    radius: usize,
}

impl FilterParams {
    pub fn new(epsilon: f64, radius: usize) -> Result<Self, FilterConfigError> {
        if epsilon <= 0.0 || radius < 1 {
            return Err(FilterConfigError::InvalidParams { epsilon, radius });
        }
        Ok(Self { epsilon, radius })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn radius(&self) -> usize {
        self.radius
    }
}

impl Default for FilterParams {
    /// epsilon = 3 scene units, radius = 2 pixels.
    fn default() -> Self {
        Self {
            epsilon: 3.0,
            radius: 2,
        }
    }
}

/// A depth hint expressed in the reference view: continuous pixel position,
/// depth, and the spherical direction of the 3-D point in the reference
/// camera frame (azimuth from atan2(x, z), elevation from
/// atan2(y, sqrt(x^2 + z^2))).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HintPoint {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl HintPoint {
    /// The integer pixel this point rasterizes to.
    #[inline]
    pub fn raster(&self) -> (i64, i64) {
        (self.pixel.x.round() as i64, self.pixel.y.round() as i64)
    }
}

/// Hints accumulated in the reference frame, at most one per integer pixel
/// after merging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HintPointSet {
    points: Vec<HintPoint>,
}

impl HintPointSet {
    pub fn from_points(points: Vec<HintPoint>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[HintPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Occupied-pixel fraction at the given resolution.
    pub fn density(&self, width: usize, height: usize) -> f64 {
        self.points.len() as f64 / (width * height) as f64
    }
}

/// Outcome of reprojecting one view's hints into the reference.
#[derive(Debug, Clone)]
pub struct ProjectedHints {
    pub points: HintPointSet,
    pub dropped_behind: usize,
    pub dropped_out_of_bounds: usize,
    pub dropped_invalid: usize,
}

fn spherical_of_camera_point(x: f64, y: f64, z: f64) -> (f64, f64) {
    (x.atan2(z), y.atan2((x * x + z * z).sqrt()))
}

/// Reproject the hints of a source view into the reference view. Points
/// landing behind the reference camera or outside its image are dropped and
/// counted.
pub fn project_hints(
    hints: &SparseDepthMap,
    source: &Camera,
    reference: &Camera,
) -> ProjectedHints {
    let mut points = Vec::new();
    let mut dropped_behind = 0;
    let mut dropped_out_of_bounds = 0;
    let mut dropped_invalid = 0;
    let (w, h) = (
        reference.intrinsics.width as i64,
        reference.intrinsics.height as i64,
    );
    for (x, y, d) in hints.iter_hints() {
        if d <= 0.0 {
            dropped_invalid += 1;
            continue;
        }
        let q = Vector2::new(x as f64, y as f64);
        let t = match transfer_point(&q, d as f64, source, reference) {
            Ok(t) => t,
            Err(_) => {
                dropped_behind += 1;
                continue;
            }
        };
        let (px, py) = (t.pixel.x.round() as i64, t.pixel.y.round() as i64);
        if px < 0 || py < 0 || px >= w || py >= h {
            dropped_out_of_bounds += 1;
            continue;
        }
        // direction of the 3-D point in the reference camera frame
        let ray_x = (t.pixel.x - reference.intrinsics.cx) / reference.intrinsics.fx;
        let ray_y = (t.pixel.y - reference.intrinsics.cy) / reference.intrinsics.fy;
        let (azimuth, elevation) =
            spherical_of_camera_point(ray_x * t.depth, ray_y * t.depth, t.depth);
        points.push(HintPoint {
            pixel: t.pixel,
            depth: t.depth,
            azimuth,
            elevation,
        });
    }
    ProjectedHints {
        points: HintPointSet::from_points(points),
        dropped_behind,
        dropped_out_of_bounds,
        dropped_invalid,
    }
}

fn reference_own_points(hints: &SparseDepthMap, reference: &Camera) -> Vec<HintPoint> {
    hints
        .iter_hints()
        .map(|(x, y, d)| {
            let ray_x = (x as f64 - reference.intrinsics.cx) / reference.intrinsics.fx;
            let ray_y = (y as f64 - reference.intrinsics.cy) / reference.intrinsics.fy;
            let d = d as f64;
            let (azimuth, elevation) = spherical_of_camera_point(ray_x * d, ray_y * d, d);
            HintPoint {
                pixel: Vector2::new(x as f64, y as f64),
                depth: d,
                azimuth,
                elevation,
            }
        })
        .collect()
}

/// Total order used to pick a collision winner: nearest depth first, then
/// position, so merging is independent of the order of the input sets.
fn wins_over(a: &HintPoint, b: &HintPoint) -> bool {
    (a.depth, a.pixel.x, a.pixel.y, a.azimuth, a.elevation)
        < (b.depth, b.pixel.x, b.pixel.y, b.azimuth, b.elevation)
}

/// Merge reprojected hint sets with the reference view's own hints. When
/// several points rasterize to the same pixel the smallest depth wins (the
/// nearer surface is the one the reference sees). Output is ordered by
/// raster pixel.
pub fn merge_hints(
    sets: &[HintPointSet],
    reference_hints: &SparseDepthMap,
    reference: &Camera,
) -> HintPointSet {
    let mut by_pixel: BTreeMap<(i64, i64), HintPoint> = BTreeMap::new();
    let own = reference_own_points(reference_hints, reference);
    for p in own.into_iter().chain(
        sets.iter()
            .flat_map(|s| s.points().iter().copied()),
    ) {
        let key = {
            let (px, py) = p.raster();
            (py, px)
        };
        match by_pixel.get_mut(&key) {
            Some(existing) => {
                if wins_over(&p, existing) {
                    *existing = p;
                }
            }
            None => {
                by_pixel.insert(key, p);
            }
        }
    }
    HintPointSet::from_points(by_pixel.into_values().collect())
}

/// Remove occlusion outliers. A point goes when any neighbor within the
/// Chebyshev pixel radius satisfies one of:
/// (a) sign(x_q - x_s) != sign(azimuth_q - azimuth_s),
/// (b) sign(y_q - y_s) != sign(elevation_q - elevation_s),
/// (c) depth_q > depth_s + epsilon.
/// All decisions are taken against the unfiltered set; output order is
/// preserved.
pub fn filter_hints(points: &HintPointSet, params: &FilterParams) -> HintPointSet {
    use std::collections::HashMap;
    let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.points().iter().enumerate() {
        bins.entry(p.raster()).or_default().push(i);
    }
    let r = params.radius as i64;
    let eps = params.epsilon;
    let kept: Vec<HintPoint> = points
        .points()
        .iter()
        .enumerate()
        .filter(|(i, q)| {
            let (qx, qy) = q.raster();
            for dy in -r..=r {
                for dx in -r..=r {
                    let Some(cell) = bins.get(&(qx + dx, qy + dy)) else {
                        continue;
                    };
                    for &si in cell {
                        if si == *i {
                            continue;
                        }
                        let s = &points.points()[si];
                        if (q.pixel.x - s.pixel.x) * (q.azimuth - s.azimuth) < 0.0
                            || (q.pixel.y - s.pixel.y) * (q.elevation - s.elevation) < 0.0
                            || q.depth > s.depth + eps
                        {
                            return false;
                        }
                    }
                }
            }
            true
        })
        .map(|(_, p)| *p)
        .collect();
    HintPointSet::from_points(kept)
}

/// Rasterize points to a sparse depth map. Collisions keep the smallest
/// depth; points outside the raster are skipped.
pub fn to_sparse_map(points: &HintPointSet, width: usize, height: usize) -> SparseDepthMap {
    let mut map = SparseDepthMap::new(width, height);
    for p in points.points() {
        let (px, py) = p.raster();
        if px < 0 || py < 0 || px >= width as i64 || py >= height as i64 {
            continue;
        }
        let (x, y) = (px as usize, py as usize);
        match map.hint(x, y) {
            Some(existing) if (existing as f64) <= p.depth => {}
            _ => map.set_hint(x, y, p.depth as f32),
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Extrinsics, Intrinsics};
    use crate::rng::Rng;
    use nalgebra::{Matrix3, Vector3};

    fn camera_at(x: f64, w: usize, h: usize) -> Camera {
        let k = Intrinsics::new(
            w as f64 * 0.9,
            w as f64 * 0.9,
            (w - 1) as f64 / 2.0,
            (h - 1) as f64 / 2.0,
            w,
            h,
        )
        .unwrap();
        let e = Extrinsics::new(Matrix3::identity(), Vector3::new(-x, 0.0, 0.0)).unwrap();
        Camera::new(k, e)
    }

    #[test]
    fn identity_projection_keeps_pixels_and_depths() {
        let cam = camera_at(0.0, 32, 24);
        let mut hints = SparseDepthMap::new(32, 24);
        hints.set_hint(5, 7, 3.5);
        hints.set_hint(20, 10, 8.0);
        let out = project_hints(&hints, &cam, &cam);
        assert_eq!(out.points.len(), 2);
        assert_eq!(out.dropped_behind + out.dropped_out_of_bounds, 0);
        for p in out.points.points() {
            let (x, y) = p.raster();
            assert_eq!(
                hints.hint(x as usize, y as usize),
                Some(p.depth as f32)
            );
            assert_eq!(p.pixel.x, x as f64);
        }
    }

    #[test]
    fn axial_translation_shifts_depth_on_axis() {
        // reference moved back by 1.5 along z; principal-point hint gains
        // that much depth
        let w = 33; // odd size puts the principal point on an integer pixel
        let source = camera_at(0.0, w, w);
        let reference = Camera::new(
            source.intrinsics,
            Extrinsics::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.5)).unwrap(),
        );
        let mut hints = SparseDepthMap::new(w, w);
        hints.set_hint(16, 16, 4.0);
        let out = project_hints(&hints, &source, &reference);
        assert_eq!(out.points.len(), 1);
        let p = &out.points.points()[0];
        assert!((p.depth - 5.5).abs() < 1e-12);
        assert_eq!(p.raster(), (16, 16));
    }

    #[test]
    fn lateral_projection_matches_transfer_oracle() {
        let source = camera_at(0.4, 64, 48);
        let reference = camera_at(0.0, 64, 48);
        let mut rng = Rng::new(2);
        let mut hints = SparseDepthMap::new(64, 48);
        for _ in 0..20 {
            let x = rng.index(64);
            let y = rng.index(48);
            hints.set_hint(x, y, rng.uniform(3.0, 12.0) as f32);
        }
        let out = project_hints(&hints, &source, &reference);
        assert!(!out.points.is_empty());
        for p in out.points.points() {
            // recover the original observation by transferring back
            let back = transfer_point(&p.pixel, p.depth, &reference, &source).unwrap();
            let bx = back.pixel.x.round() as usize;
            let by = back.pixel.y.round() as usize;
            let original = hints.hint(bx, by).expect("round trip lands on a hint");
            assert!((back.pixel.x - bx as f64).abs() < 1e-6);
            assert!((back.pixel.y - by as f64).abs() < 1e-6);
            assert!((back.depth - original as f64).abs() / back.depth < 1e-6);
        }
    }

    #[test]
    fn points_behind_reference_are_dropped_and_counted() {
        let source = camera_at(0.0, 32, 32);
        // reference sits far in front of the hinted surface
        let reference = Camera::new(
            source.intrinsics,
            Extrinsics::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -10.0)).unwrap(),
        );
        let mut hints = SparseDepthMap::new(32, 32);
        hints.set_hint(10, 10, 4.0);
        let out = project_hints(&hints, &source, &reference);
        assert_eq!(out.points.len(), 0);
        assert_eq!(out.dropped_behind, 1);
    }

    #[test]
    fn merge_keeps_reference_hints_and_resolves_collisions_by_min_depth() {
        let cam = camera_at(0.0, 16, 16);
        let mut own = SparseDepthMap::new(16, 16);
        own.set_hint(4, 4, 6.0);
        let colliding = HintPointSet::from_points(vec![
            HintPoint {
                pixel: Vector2::new(4.2, 3.9),
                depth: 2.0,
                azimuth: 0.0,
                elevation: 0.0,
            },
            HintPoint {
                pixel: Vector2::new(3.8, 4.1),
                depth: 5.0,
                azimuth: 0.0,
                elevation: 0.0,
            },
            HintPoint {
                pixel: Vector2::new(9.0, 9.0),
                depth: 7.5,
                azimuth: 0.1,
                elevation: 0.1,
            },
        ]);
        let merged = merge_hints(&[colliding], &own, &cam);
        assert_eq!(merged.len(), 2);
        let at = |x: i64, y: i64| {
            merged
                .points()
                .iter()
                .find(|p| p.raster() == (x, y))
                .copied()
        };
        assert_eq!(at(4, 4).unwrap().depth, 2.0, "min depth wins the pixel");
        assert_eq!(at(9, 9).unwrap().depth, 7.5);
    }

    #[test]
    fn merge_is_order_invariant() {
        let cam = camera_at(0.0, 16, 16);
        let own = SparseDepthMap::new(16, 16);
        let mut rng = Rng::new(8);
        let mk_set = |rng: &mut Rng, n: usize| {
            HintPointSet::from_points(
                (0..n)
                    .map(|_| HintPoint {
                        pixel: Vector2::new(rng.uniform(0.0, 15.0), rng.uniform(0.0, 15.0)),
                        depth: rng.uniform(1.0, 9.0),
                        azimuth: rng.uniform(-0.5, 0.5),
                        elevation: rng.uniform(-0.5, 0.5),
                    })
                    .collect(),
            )
        };
        let a = mk_set(&mut rng, 30);
        let b = mk_set(&mut rng, 30);
        let c = mk_set(&mut rng, 30);
        let abc = merge_hints(&[a.clone(), b.clone(), c.clone()], &own, &cam);
        let cba = merge_hints(&[c, b, a], &own, &cam);
        assert_eq!(abc, cba);
    }

    #[test]
    fn isolated_point_survives_filtering() {
        let p = HintPointSet::from_points(vec![HintPoint {
            pixel: Vector2::new(8.0, 8.0),
            depth: 5.0,
            azimuth: 0.1,
            elevation: 0.0,
        }]);
        let out = filter_hints(&p, &FilterParams::default());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn depth_gap_removes_the_farther_point() {
        // background point 20 next to foreground 5 with epsilon 3
        let pts = HintPointSet::from_points(vec![
            HintPoint {
                pixel: Vector2::new(8.0, 8.0),
                depth: 5.0,
                azimuth: 0.10,
                elevation: 0.0,
            },
            HintPoint {
                pixel: Vector2::new(9.0, 8.0),
                depth: 20.0,
                azimuth: 0.11,
                elevation: 0.0,
            },
        ]);
        let out = filter_hints(&pts, &FilterParams::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out.points()[0].depth, 5.0);
    }

    #[test]
    fn angular_order_flip_removes_the_intruder() {
        // s at larger x but smaller azimuth: condition (a) fires for both
        // orderings; the test fixes depths so only (a) can fire
        let pts = HintPointSet::from_points(vec![
            HintPoint {
                pixel: Vector2::new(8.0, 8.0),
                depth: 5.0,
                azimuth: 0.20,
                elevation: 0.0,
            },
            HintPoint {
                pixel: Vector2::new(9.0, 8.0),
                depth: 5.5,
                azimuth: 0.15,
                elevation: 0.0,
            },
        ]);
        let out = filter_hints(&pts, &FilterParams::default());
        assert_eq!(out.len(), 0, "both points see an order inversion");
    }

    #[test]
    fn coplanar_points_pass_untouched() {
        // a fronto-parallel plane sampled on a grid: azimuth grows with x,
        // elevation with y, depths equal -> nothing fires
        let cam = camera_at(0.0, 32, 32);
        let mut own = SparseDepthMap::new(32, 32);
        for y in (2..30).step_by(2) {
            for x in (2..30).step_by(2) {
                own.set_hint(x, y, 7.0);
            }
        }
        let merged = merge_hints(&[], &own, &cam);
        let n = merged.len();
        let out = filter_hints(&merged, &FilterParams::default());
        assert_eq!(out.len(), n, "no occlusion exists on a single plane");
    }

    #[test]
    fn filtering_is_a_subset_against_the_prefilter_set() {
        let mut rng = Rng::new(77);
        let pts = HintPointSet::from_points(
            (0..200)
                .map(|_| {
                    let x = rng.uniform(0.0, 31.0);
                    let y = rng.uniform(0.0, 31.0);
                    let d = rng.uniform(2.0, 20.0);
                    HintPoint {
                        pixel: Vector2::new(x, y),
                        depth: d,
                        azimuth: rng.uniform(-0.4, 0.4),
                        elevation: rng.uniform(-0.4, 0.4),
                    }
                })
                .collect(),
        );
        let out = filter_hints(&pts, &FilterParams::default());
        assert!(out.len() <= pts.len());
        for p in out.points() {
            assert!(pts.points().iter().any(|q| q == p));
        }
    }

    #[test]
    fn rasterization_rounds_to_nearest_pixel() {
        let pts = HintPointSet::from_points(vec![HintPoint {
            pixel: Vector2::new(10.4, 20.6),
            depth: 3.0,
            azimuth: 0.0,
            elevation: 0.0,
        }]);
        let map = to_sparse_map(&pts, 32, 32);
        assert_eq!(map.count(), 1);
        assert_eq!(map.hint(10, 21), Some(3.0));
    }

    #[test]
    fn empty_set_gives_empty_map() {
        let map = to_sparse_map(&HintPointSet::default(), 8, 8);
        assert_eq!(map.count(), 0);
    }

    #[test]
    fn map_points_map_roundtrip_without_collisions() {
        let cam = camera_at(0.0, 16, 16);
        let mut own = SparseDepthMap::new(16, 16);
        own.set_hint(2, 3, 4.25);
        own.set_hint(10, 12, 9.5);
        own.set_hint(15, 0, 1.75);
        let merged = merge_hints(&[], &own, &cam);
        let back = to_sparse_map(&merged, 16, 16);
        assert_eq!(own, back);
    }

    #[test]
    fn filter_params_validate() {
        assert!(FilterParams::new(0.0, 2).is_err());
        assert!(FilterParams::new(3.0, 0).is_err());
        assert!(FilterParams::new(1.0, 1).is_ok());
    }
}
