//! Sphere-to-plane map projections and the pixel grid laid over them.
//!
//! A direction `e` from the object centre is described by longitude
//! `λ = atan2(e_x, e_y)` and latitude `φ = asin(e_z)`. Each
//! [`ProjectionKind`] maps `(λ, φ)` to plane coordinates `(u, v)` and back.
//! Rendering walks the pixel grid, so the inverse maps are what the renderer
//! actually uses.

use core::f64::consts::{FRAC_PI_2, PI, TAU};
use core::fmt;

use crate::geometry::Vec3;

/// Slack allowed when deciding whether a plane point lies on the map.
const REGION_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProjectionError {
    /// The direction handed to [`spherical_coords`] is not unit length.
    NotUnit { norm: f64 },
    /// The plane point lies outside the projection's image.
    OutOfRegion { u: f64, v: f64 },
}

impl fmt::Display for ProjectionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectionError::NotUnit { norm } => write!(f, "direction has norm {norm}, expected 1"),
            ProjectionError::OutOfRegion { u, v } => write!(f, "plane point ({u}, {v}) is outside the map"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ProjectionError {}

/// Longitude/latitude pair, radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereCoord {
    /// λ in `[-π, π]`.
    pub lon: f64,
    /// φ in `[-π/2, π/2]`.
    pub lat: f64,
}

impl SphereCoord {
    pub fn new(lon: f64, lat: f64) -> Self {
        SphereCoord { lon, lat }
    }

    /// Unit direction whose [`spherical_coords`] are `self`.
    pub fn to_direction(self) -> Vec3 {
        let (sl, cl) = libm::sincos(self.lon);
        let (sp, cp) = libm::sincos(self.lat);
        Vec3::new(cp * sl, cp * cl, sp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneCoord {
    pub u: f64,
    pub v: f64,
}

impl PlaneCoord {
    pub fn new(u: f64, v: f64) -> Self {
        PlaneCoord { u, v }
    }
}

/// Longitude and latitude of a unit direction. The longitude is measured from
/// +y towards +x.
pub fn spherical_coords(direction: Vec3) -> Result<SphereCoord, ProjectionError> {
    let norm = direction.norm();
    if !((norm - 1.0).abs() <= 1e-6) {
        return Err(ProjectionError::NotUnit { norm });
    }
    let z = (direction.z / norm).clamp(-1.0, 1.0);
    Ok(SphereCoord { lon: libm::atan2(direction.x, direction.y), lat: libm::asin(z) })
}

/// Inclusive analytic extent of a projection's image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneBounds {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl PlaneBounds {
    fn symmetric(u: f64, v: f64) -> Self {
        PlaneBounds { u_min: -u, u_max: u, v_min: -v, v_max: v }
    }

    pub fn contains(&self, p: PlaneCoord) -> bool {
        p.u >= self.u_min - REGION_EPS
            && p.u <= self.u_max + REGION_EPS
            && p.v >= self.v_min - REGION_EPS
            && p.v <= self.v_max + REGION_EPS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    /// Equirectangular map normalised to the unit square.
    Uv,
    KavrayskiyVii,
    EckertIv,
    Cassini,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 4] =
        [ProjectionKind::Uv, ProjectionKind::KavrayskiyVii, ProjectionKind::EckertIv, ProjectionKind::Cassini];

    pub fn name(self) -> &'static str {
        match self {
            ProjectionKind::Uv => "uv",
            ProjectionKind::KavrayskiyVii => "kavrayskiy7",
            ProjectionKind::EckertIv => "eckert4",
            ProjectionKind::Cassini => "cassini",
        }
    }

    pub fn bounds(self) -> PlaneBounds {
        match self {
            ProjectionKind::Uv => PlaneBounds { u_min: 0.0, u_max: 1.0, v_min: 0.0, v_max: 1.0 },
            // Widest at the equator, where sqrt(1/3 - (φ/π)²) peaks.
            ProjectionKind::KavrayskiyVii => {
                PlaneBounds::symmetric(1.5 * PI * libm::sqrt(1.0 / 3.0), FRAC_PI_2)
            }
            // u widest at φ = 0, |v| largest at the poles.
            ProjectionKind::EckertIv => {
                PlaneBounds::symmetric(TAU * libm::sqrt(4.0 / (6.0 * PI)), libm::sqrt(TAU / 3.0))
            }
            // u = 2·asin(..) spans [-π, π]; the two-argument arctangent spans [-π, π].
            ProjectionKind::Cassini => PlaneBounds::symmetric(PI, PI),
        }
    }

    pub fn project(self, c: SphereCoord) -> PlaneCoord {
        let SphereCoord { lon, lat } = c;
        match self {
            ProjectionKind::Uv => PlaneCoord::new(0.5 + lon / TAU, 0.5 - lat / PI),
            ProjectionKind::KavrayskiyVii => {
                let r = lat / PI;
                PlaneCoord::new(1.5 * lon * libm::sqrt((1.0 / 3.0 - r * r).max(0.0)), lat)
            }
            ProjectionKind::EckertIv => {
                let q = libm::sqrt(4.0 - 3.0 * libm::sin(lat.abs()));
                let u = 2.0 * lon * q / libm::sqrt(6.0 * PI);
                let v = libm::sqrt(TAU / 3.0) * (2.0 - q);
                PlaneCoord::new(u, libm::copysign(v, lat))
            }
            ProjectionKind::Cassini => {
                let u = 2.0 * libm::asin((libm::cos(lat) * libm::sin(lon)).clamp(-1.0, 1.0));
                let v = if lat.abs() >= FRAC_PI_2 {
                    libm::copysign(FRAC_PI_2, lat)
                } else {
                    libm::atan2(libm::tan(lat), libm::cos(lon))
                };
                PlaneCoord::new(u, v)
            }
        }
    }

    pub fn unproject(self, p: PlaneCoord) -> Result<SphereCoord, ProjectionError> {
        let out = ProjectionError::OutOfRegion { u: p.u, v: p.v };
        if !(p.u.is_finite() && p.v.is_finite()) || !self.bounds().contains(p) {
            return Err(out);
        }
        let c = match self {
            ProjectionKind::Uv => SphereCoord::new(TAU * (p.u - 0.5), PI * (0.5 - p.v)),
            ProjectionKind::KavrayskiyVii => {
                let lat = p.v.clamp(-FRAC_PI_2, FRAC_PI_2);
                let r = lat / PI;
                let lon = p.u / (1.5 * libm::sqrt(1.0 / 3.0 - r * r));
                SphereCoord::new(lon, lat)
            }
            ProjectionKind::EckertIv => {
                let q = 2.0 - p.v.abs() / libm::sqrt(TAU / 3.0);
                let s = ((4.0 - q * q) / 3.0).clamp(0.0, 1.0);
                let lat = libm::copysign(libm::asin(s), p.v);
                let lon = p.u * libm::sqrt(6.0 * PI) / (2.0 * q);
                SphereCoord::new(lon, lat)
            }
            ProjectionKind::Cassini => {
                let x = (0.5 * p.u).clamp(-FRAC_PI_2, FRAC_PI_2);
                let y = p.v;
                let lat = libm::asin((libm::sin(y) * libm::cos(x)).clamp(-1.0, 1.0));
                let lon = libm::atan2(libm::tan(x), libm::cos(y));
                SphereCoord::new(lon, lat)
            }
        };
        if c.lon.abs() > PI + REGION_EPS {
            return Err(out);
        }
        Ok(SphereCoord::new(c.lon.clamp(-PI, PI), c.lat))
    }
}

/// Affine map between a rectangle of plane coordinates and a `rows x cols`
/// pixel grid. Pixel `(r, c)` samples the plane at its centre, `(r + ½, c + ½)`
/// in grid units; row index grows with `v` and column index with `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelGrid {
    pub rows: usize,
    pub cols: usize,
    pub bounds: PlaneBounds,
}

impl PixelGrid {
    pub fn new(rows: usize, cols: usize, bounds: PlaneBounds) -> Self {
        PixelGrid { rows, cols, bounds }
    }

    pub fn for_projection(kind: ProjectionKind, size: usize) -> Self {
        PixelGrid::new(size, size, kind.bounds())
    }

    pub fn pixel_to_plane(&self, row: usize, col: usize) -> PlaneCoord {
        let b = &self.bounds;
        let fu = (col as f64 + 0.5) / self.cols as f64;
        let fv = (row as f64 + 0.5) / self.rows as f64;
        PlaneCoord::new(b.u_min + fu * (b.u_max - b.u_min), b.v_min + fv * (b.v_max - b.v_min))
    }

    /// Pixel containing `p`, or `None` when `p` is off the grid.
    pub fn plane_to_pixel(&self, p: PlaneCoord) -> Option<(usize, usize)> {
        let b = &self.bounds;
        let fc = (p.u - b.u_min) / (b.u_max - b.u_min) * self.cols as f64;
        let fr = (p.v - b.v_min) / (b.v_max - b.v_min) * self.rows as f64;
        if !(fc >= 0.0 && fr >= 0.0 && fc <= self.cols as f64 && fr <= self.rows as f64) {
            return None;
        }
        let col = (libm::floor(fc) as usize).min(self.cols - 1);
        let row = (libm::floor(fr) as usize).min(self.rows - 1);
        Some((row, col))
    }
}
