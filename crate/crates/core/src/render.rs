//! Depth images: one ray per pixel from the object centre (or, for the two
//! baseline layouts, from a plane or an axis), recording how far out the
//! surface lies.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::geometry::Vec3;
use crate::mesh::{MeshError, Rotation, TriangleMesh};
use crate::par;
use crate::projection::{PixelGrid, ProjectionKind};
use crate::raycast::{Bvh, HitMode, Ray, RayCaster};

pub const DEFAULT_IMAGE_SIZE: usize = 128;

/// Vertices may exceed the unit sphere by this much and still count as normalized.
const NORMALIZED_SLACK: f64 = 1e-6;

/// Layout of the values stored in a [`DepthImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ImageKind {
    Uv,
    KavrayskiyVii,
    EckertIv,
    Cassini,
    /// Orthographic depth seen from +x over the YZ plane.
    DepthMapYz,
    /// Cylindrical panorama around the z axis.
    PanoramaZ,
    /// Not a rendering: a pairwise distance matrix stored in the same container.
    SimilarityMatrix,
}

impl ImageKind {
    pub const RENDERABLE: [ImageKind; 6] = [
        ImageKind::Uv,
        ImageKind::KavrayskiyVii,
        ImageKind::EckertIv,
        ImageKind::Cassini,
        ImageKind::DepthMapYz,
        ImageKind::PanoramaZ,
    ];

    pub fn code(self) -> u8 {
        match self {
            ImageKind::Uv => 0,
            ImageKind::KavrayskiyVii => 1,
            ImageKind::EckertIv => 2,
            ImageKind::Cassini => 3,
            ImageKind::DepthMapYz => 4,
            ImageKind::PanoramaZ => 5,
            ImageKind::SimilarityMatrix => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<ImageKind> {
        Some(match code {
            0 => ImageKind::Uv,
            1 => ImageKind::KavrayskiyVii,
            2 => ImageKind::EckertIv,
            3 => ImageKind::Cassini,
            4 => ImageKind::DepthMapYz,
            5 => ImageKind::PanoramaZ,
            6 => ImageKind::SimilarityMatrix,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageKind::DepthMapYz => "depthmap_yz",
            ImageKind::PanoramaZ => "panorama_z",
            ImageKind::SimilarityMatrix => "similarity",
            other => other.as_projection().map(ProjectionKind::name).unwrap_or("?"),
        }
    }

    pub fn from_name(name: &str) -> Option<ImageKind> {
        let lower = name.to_ascii_lowercase();
        [ImageKind::SimilarityMatrix]
            .into_iter()
            .chain(ImageKind::RENDERABLE)
            .find(|k| k.name() == lower)
    }

    pub fn as_projection(self) -> Option<ProjectionKind> {
        match self {
            ImageKind::Uv => Some(ProjectionKind::Uv),
            ImageKind::KavrayskiyVii => Some(ProjectionKind::KavrayskiyVii),
            ImageKind::EckertIv => Some(ProjectionKind::EckertIv),
            ImageKind::Cassini => Some(ProjectionKind::Cassini),
            _ => None,
        }
    }
}

impl From<ProjectionKind> for ImageKind {
    fn from(k: ProjectionKind) -> Self {
        match k {
            ProjectionKind::Uv => ImageKind::Uv,
            ProjectionKind::KavrayskiyVii => ImageKind::KavrayskiyVii,
            ProjectionKind::EckertIv => ImageKind::EckertIv,
            ProjectionKind::Cassini => ImageKind::Cassini,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RenderError {
    Mesh(MeshError),
    /// A vertex lies outside the unit sphere.
    NotNormalized { max_norm: f64 },
    UnsupportedKind(ImageKind),
}

impl From<MeshError> for RenderError {
    fn from(e: MeshError) -> Self {
        RenderError::Mesh(e)
    }
}

impl fmt::Display for RenderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RenderError::Mesh(e) => e.fmt(f),
            RenderError::NotNormalized { max_norm } => {
                write!(f, "mesh is not normalized (max vertex norm {max_norm})")
            }
            RenderError::UnsupportedKind(k) => write!(f, "cannot render image kind {}", k.name()),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RenderError {}

/// Row-major grid of radial distances; 0 marks background.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
    pub kind: ImageKind,
    pub source_id: String,
    pub rotation: Rotation,
}

impl DepthImage {
    pub fn blank(rows: usize, cols: usize, kind: ImageKind) -> Self {
        DepthImage {
            rows,
            cols,
            pixels: vec![0.0; rows * cols],
            kind,
            source_id: String::new(),
            rotation: Rotation::IDENTITY,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.cols + col]
    }

    /// `out[r][c] = self[r][(c + shift) mod cols]`.
    pub fn shift_columns(&self, shift: isize) -> DepthImage {
        let mut out = self.clone();
        let cols = self.cols as isize;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let src = (c as isize + shift).rem_euclid(cols) as usize;
                out.pixels[r * self.cols + c] = self.get(r, src);
            }
        }
        out
    }

    pub fn flip_rows(&self) -> DepthImage {
        let mut out = self.clone();
        for r in 0..self.rows {
            let src = self.rows - 1 - r;
            out.pixels[r * self.cols..(r + 1) * self.cols]
                .copy_from_slice(&self.pixels[src * self.cols..(src + 1) * self.cols]);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DepthImage) -> f32 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub size: usize,
    pub hit_mode: HitMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { size: DEFAULT_IMAGE_SIZE, hit_mode: HitMode::Farthest }
    }
}

/// Precomputed per-pixel rays for one image layout.
///
/// Rays do not depend on the mesh, so a layout can be reused across objects
/// and rotations.
#[derive(Clone, Debug)]
pub struct RayLayout {
    kind: ImageKind,
    size: usize,
    /// `None` for pixels outside the projection's image.
    rays: Vec<Option<Ray>>,
    /// Multiplier turning a hit parameter into a pixel value.
    value_scale: f64,
}

impl RayLayout {
    pub fn new(kind: ImageKind, size: usize) -> Result<Self, RenderError> {
        let cell = |i: usize| -1.0 + 2.0 * (i as f64 + 0.5) / size as f64;
        let mut rays = Vec::with_capacity(size * size);
        let mut value_scale = 1.0;
        match kind {
            ImageKind::DepthMapYz => {
                // Rays enter at x = -1 and travel +x; the farthest hit is the
                // surface facing a viewer on +x, so t/2 lies in [0, 1].
                value_scale = 0.5;
                for r in 0..size {
                    for c in 0..size {
                        let origin = Vec3::new(-1.0, cell(c), cell(r));
                        rays.push(Some(Ray::new(origin, Vec3::new(1.0, 0.0, 0.0))));
                    }
                }
            }
            ImageKind::PanoramaZ => {
                for r in 0..size {
                    for c in 0..size {
                        let lon = -PI + 2.0 * PI * (c as f64 + 0.5) / size as f64;
                        let (s, co) = libm::sincos(lon);
                        rays.push(Some(Ray::new(Vec3::new(0.0, 0.0, cell(r)), Vec3::new(s, co, 0.0))));
                    }
                }
            }
            ImageKind::SimilarityMatrix => return Err(RenderError::UnsupportedKind(kind)),
            spherical => {
                let proj = spherical.as_projection().ok_or(RenderError::UnsupportedKind(kind))?;
                let grid = PixelGrid::for_projection(proj, size);
                for r in 0..size {
                    for c in 0..size {
                        let ray = proj
                            .unproject(grid.pixel_to_plane(r, c))
                            .ok()
                            .map(|sc| Ray::from_center(sc.to_direction()));
                        rays.push(ray);
                    }
                }
            }
        }
        Ok(RayLayout { kind, size, rays, value_scale })
    }

    pub fn kind(&self) -> ImageKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Casts every pixel ray against `caster`.
    pub fn trace<C: RayCaster + Sync>(&self, caster: &C) -> Vec<f32> {
        let n = self.size;
        let rows = par::map_range(n, |r| {
            self.rays[r * n..(r + 1) * n]
                .iter()
                .map(|ray| {
                    ray.and_then(|ray| caster.cast(&ray))
                        .map_or(0.0, |t| (t * self.value_scale).clamp(0.0, 1.0) as f32)
                })
                .collect::<Vec<f32>>()
        });
        rows.concat()
    }
}

fn check_normalized(mesh: &TriangleMesh) -> Result<(), RenderError> {
    let max_norm = mesh.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(MeshError::DegenerateMesh.into());
    }
    if max_norm > 1.0 + NORMALIZED_SLACK {
        return Err(RenderError::NotNormalized { max_norm });
    }
    Ok(())
}

/// Renders `mesh` (already normalized) after applying `rotation`.
pub fn render(
    mesh: &TriangleMesh,
    kind: ImageKind,
    rotation: Rotation,
    options: &RenderOptions,
) -> Result<DepthImage, RenderError> {
    let layout = RayLayout::new(kind, options.size)?;
    render_with_layout(mesh, &layout, rotation, options.hit_mode)
}

pub fn render_with_layout(
    mesh: &TriangleMesh,
    layout: &RayLayout,
    rotation: Rotation,
    hit_mode: HitMode,
) -> Result<DepthImage, RenderError> {
    check_normalized(mesh)?;
    let rotated = mesh.rotate(rotation);
    let bvh = Bvh::new(&rotated, hit_mode);
    Ok(DepthImage {
        rows: layout.size,
        cols: layout.size,
        pixels: layout.trace(&bvh),
        kind: layout.kind,
        source_id: String::from(mesh.id()),
        rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::cube;
    use crate::testutil::{icosphere, lumpy};
    use core::f64::consts::FRAC_PI_2;

    fn opts(size: usize) -> RenderOptions {
        RenderOptions { size, ..RenderOptions::default() }
    }

    #[test]
    fn icosphere_renders_near_one_everywhere() {
        let m = icosphere(3);
        let img = render(&m, ImageKind::Uv, Rotation::IDENTITY, &opts(64)).unwrap();
        for &p in &img.pixels {
            assert!((p - 1.0).abs() < 5e-3, "{p}");
        }
    }

    #[test]
    fn out_of_region_pixels_are_background() {
        let m = icosphere(2);
        let img = render(&m, ImageKind::KavrayskiyVii, Rotation::IDENTITY, &opts(32)).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert!(img.get(16, 16) > 0.98);
    }

    #[test]
    fn full_turn_matches_identity() {
        let m = lumpy(11);
        let a = render(&m, ImageKind::Uv, Rotation::IDENTITY, &opts(32)).unwrap();
        let b = render(&m, ImageKind::Uv, Rotation::new(2.0 * PI, 0.0), &opts(32)).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn quarter_turn_is_column_shift() {
        let m = lumpy(5);
        let a = render(&m, ImageKind::Uv, Rotation::IDENTITY, &opts(128)).unwrap();
        let b = render(&m, ImageKind::Uv, Rotation::new(FRAC_PI_2, 0.0), &opts(128)).unwrap();
        assert!(b.max_abs_diff(&a.shift_columns(32)) < 1e-6);
    }

    #[test]
    fn mirrored_mesh_flips_rows() {
        let m = lumpy(9);
        let mirrored = m.map_vertices(|v| Vec3::new(v.x, v.y, -v.z));
        let a = render(&m, ImageKind::Uv, Rotation::IDENTITY, &opts(64)).unwrap();
        let b = render(&mirrored, ImageKind::Uv, Rotation::IDENTITY, &opts(64)).unwrap();
        assert!(b.max_abs_diff(&a.flip_rows()) < 1e-6);
    }

    #[test]
    fn pixel_values_stay_in_unit_interval() {
        let m = lumpy(2);
        for kind in ImageKind::RENDERABLE {
            let img = render(&m, kind, Rotation::from_degrees(45.0, 90.0), &opts(32)).unwrap();
            assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)), "{kind:?}");
            assert!(img.pixels.iter().any(|&p| p > 0.0), "{kind:?}");
        }
    }

    #[test]
    fn baseline_layouts_on_cube() {
        let m = cube(1.0).normalize().unwrap();
        let k = 1.0 / libm::sqrt(3.0);
        let depth = render(&m, ImageKind::DepthMapYz, Rotation::IDENTITY, &opts(16)).unwrap();
        // Centre pixels see the +x face at x = k, i.e. t = 1 + k.
        assert!((depth.get(8, 8) as f64 - (1.0 + k) / 2.0).abs() < 1e-6);
        assert_eq!(depth.get(0, 0), 0.0);
        let pano = render(&m, ImageKind::PanoramaZ, Rotation::IDENTITY, &opts(16)).unwrap();
        // Column 8 looks along λ ≈ +π/16 towards the +y face.
        let lon = -PI + 2.0 * PI * 8.5 / 16.0;
        assert!((pano.get(8, 8) as f64 - k / libm::cos(lon)).abs() < 1e-6);
    }

    #[test]
    fn rejects_unnormalized_and_degenerate() {
        assert!(matches!(
            render(&cube(2.0), ImageKind::Uv, Rotation::IDENTITY, &opts(8)),
            Err(RenderError::NotNormalized { .. })
        ));
        let point = TriangleMesh::new("p", vec![Vec3::ZERO; 3], vec![[0, 1, 2]]).unwrap();
        assert_eq!(
            render(&point, ImageKind::Uv, Rotation::IDENTITY, &opts(8)),
            Err(RenderError::Mesh(MeshError::DegenerateMesh))
        );
        assert!(render(&cube(0.5), ImageKind::SimilarityMatrix, Rotation::IDENTITY, &opts(8)).is_err());
    }

    #[test]
    fn kind_codes_and_names_round_trip() {
        for code in 0..7u8 {
            let k = ImageKind::from_code(code).unwrap();
            assert_eq!(k.code(), code);
            assert_eq!(ImageKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ImageKind::from_code(7), None);
    }
}
