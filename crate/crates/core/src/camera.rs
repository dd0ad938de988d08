//! Pinhole camera model: projection, backprojection, cross-view point
//! transfer and plane-sweep warping.
//!
//! Conventions used everywhere in this crate:
//! - pixels are continuous coordinates with (0, 0) at the center of the
//!   top-left pixel;
//! - extrinsics map world points into the camera frame, `p_cam = R p + t`;
//! - depth is the z coordinate in the camera frame, not ray length.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::grid::ImageBuf;

/// Tolerance for the rotation orthonormality check at construction.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation deviates from orthonormal by {0:.3e}")]
    NonOrthonormalRotation(f64),
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("swept point lies behind the source camera")]
    BehindCamera,
    #[error("scale {scale} maps {width}x{height} to a non-integral resolution")]
    NonIntegerResolution {
        scale: f64,
        width: usize,
        height: usize,
    },
    #[error("a view set needs a reference and at least one source view")]
    TooFewViews,
    #[error("all images in a view set must share one pixel format")]
    MixedPixelFormats,
    #[error("image size {got_w}x{got_h} does not match camera resolution {want_w}x{want_h}")]
    ImageSizeMismatch {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },
}

/// Focal lengths, principal point and image size of a pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics adjusted to resolution scale `s`: every linear quantity is
    /// multiplied by `s`. The scaled width and height must stay integral.
    pub fn scaled(&self, s: f64) -> Result<Self, GeometryError> {
        let w = self.width as f64 * s;
        let h = self.height as f64 * s;
        let integral = |v: f64| (v - v.round()).abs() < 1e-9 && v.round() >= 1.0;
        if !(s > 0.0 && s <= 1.0 && integral(w) && integral(h)) {
            return Err(GeometryError::NonIntegerResolution {
                scale: s,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: w.round() as usize,
            height: h.round() as usize,
        })
    }

    /// True when the continuous pixel lies inside the sampleable hull
    /// `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.x <= (self.width - 1) as f64 && p.y >= 0.0 && p.y <= (self.height - 1) as f64
    }

    #[inline]
    fn project_cam(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-frame point at depth 1 along the pixel's viewing ray.
    #[inline]
    fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self, GeometryError> {
        let err = Self::orthonormality_error(&rotation);
        if err > tolerance {
            return Err(GeometryError::NonOrthonormalRotation(err));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Max deviation of R Rᵀ from identity plus |det R - 1|.
    pub fn orthonormality_error(rotation: &Matrix3<f64>) -> f64 {
        let gram = rotation * rotation.transpose() - Matrix3::identity();
        let mut err: f64 = 0.0;
        for v in gram.iter() {
            err = err.max(v.abs());
        }
        err.max((rotation.determinant() - 1.0).abs())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// World point into the camera frame.
    #[inline]
    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    /// Camera-frame point back to world coordinates.
    #[inline]
    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// One pinhole view: intrinsics plus world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        Self {
            intrinsics,
            extrinsics,
        }
    }

    /// Perspective projection of a world point. Returns the pixel and the
    /// depth (camera-frame z). Fails when the point is at or behind the
    /// camera plane.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64), GeometryError> {
        let p_cam = self.extrinsics.to_camera(point);
        if p_cam.z <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(p_cam.z));
        }
        Ok((self.intrinsics.project_cam(&p_cam), p_cam.z))
    }

    /// World point seen at `pixel` with camera-frame depth `depth`.
    pub fn backproject(
        &self,
        pixel: &Vector2<f64>,
        depth: f64,
    ) -> Result<Vector3<f64>, GeometryError> {
        if depth <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        let p_cam = self.intrinsics.ray(pixel) * depth;
        Ok(self.extrinsics.to_world(&p_cam))
    }

    /// Same pose at resolution scale `s`.
    pub fn scaled(&self, s: f64) -> Result<Camera, GeometryError> {
        Ok(Camera {
            intrinsics: self.intrinsics.scaled(s)?,
            extrinsics: self.extrinsics.clone(),
        })
    }
}

/// Result of moving a (pixel, depth) observation into another view.
#[derive(Debug, Clone, Copy)]
pub struct PointTransfer {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    /// False when the destination pixel falls outside the destination image;
    /// not an error, callers decide.
    pub in_bounds: bool,
}

/// Express a (pixel, depth) observation of `from` in the frame of `to`.
/// Fails when the point lands at or behind the destination camera.
pub fn transfer_point(
    pixel: &Vector2<f64>,
    depth: f64,
    from: &Camera,
    to: &Camera,
) -> Result<PointTransfer, GeometryError> {
    if from == to {
        // bitwise identity for the degenerate case
        return Ok(PointTransfer {
            pixel: *pixel,
            depth,
            in_bounds: to.intrinsics.contains(pixel),
        });
    }
    let world = from.backproject(pixel, depth)?;
    let (dest, dest_depth) = to.project(&world)?;
    Ok(PointTransfer {
        pixel: dest,
        depth: dest_depth,
        in_bounds: to.intrinsics.contains(&dest),
    })
}

/// Plane-sweep warp: the source-view pixel observing the same 3-D point as
/// reference pixel `pixel` under the fronto-parallel depth hypothesis `z`.
/// Coordinates are continuous; `BehindCamera` marks samples that must be
/// treated as invalid.
pub fn sweep_warp_coords(
    pixel: &Vector2<f64>,
    z: f64,
    reference: &Camera,
    source: &Camera,
) -> Result<Vector2<f64>, GeometryError> {
    if reference == source {
        return Ok(*pixel);
    }
    let world = reference.backproject(pixel, z)?;
    let p_cam = source.extrinsics.to_camera(&world);
    if p_cam.z <= 0.0 {
        return Err(GeometryError::BehindCamera);
    }
    Ok(source.intrinsics.project_cam(&p_cam))
}

/// One image with its camera.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub image: ImageBuf,
}

impl View {
    pub fn new(camera: Camera, image: ImageBuf) -> Result<Self, GeometryError> {
        if image.width() != camera.intrinsics.width || image.height() != camera.intrinsics.height {
            return Err(GeometryError::ImageSizeMismatch {
                want_w: camera.intrinsics.width,
                want_h: camera.intrinsics.height,
                got_w: image.width(),
                got_h: image.height(),
            });
        }
        Ok(Self { camera, image })
    }
}

/// A reference view plus its ordered source views.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub reference: View,
    pub sources: Vec<View>,
}

impl ViewSet {
    pub fn new(reference: View, sources: Vec<View>) -> Result<Self, GeometryError> {
        if sources.is_empty() {
            return Err(GeometryError::TooFewViews);
        }
        if sources
            .iter()
            .any(|v| v.image.channels() != reference.image.channels())
        {
            return Err(GeometryError::MixedPixelFormats);
        }
        Ok(Self { reference, sources })
    }

    /// Total number of views, reference included.
    pub fn len(&self) -> usize {
        1 + self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
