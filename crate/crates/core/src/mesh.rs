//! Triangle meshes: construction, OFF/OBJ parsing, normalization into the
//! unit sphere and rigid rotation.
//!
//! Every view the renderer produces starts from a [`TriangleMesh`] that has
//! been passed through [`TriangleMesh::normalize`], so that the whole object
//! fits inside the unit sphere centred on the origin.

mod parse;

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::fmt;

use crate::geometry::{Aabb, Mat3, Vec3};

pub use parse::{parse_obj, parse_off};

#[derive(Clone, Debug, PartialEq)]
pub enum MeshError {
    /// The OFF header line is missing or its counts cannot be read.
    MalformedHeader { line: usize },
    /// A vertex record does not hold three finite coordinates.
    MalformedVertex { line: usize },
    /// A face record has fewer than three indices or an unparsable index.
    MalformedFace { line: usize },
    IndexOutOfRange { line: usize, index: i64, vertex_count: usize },
    /// No vertices or no faces after parsing.
    EmptyMesh { line: usize },
    /// All vertices coincide, so no scale can be recovered.
    DegenerateMesh,
}

impl fmt::Display for MeshError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshError::MalformedHeader { line } => write!(f, "line {line}: malformed OFF header"),
            MeshError::MalformedVertex { line } => write!(f, "line {line}: malformed vertex"),
            MeshError::MalformedFace { line } => write!(f, "line {line}: malformed face"),
            MeshError::IndexOutOfRange { line, index, vertex_count } => write!(
                f,
                "line {line}: vertex index {index} out of range for {vertex_count} vertices"
            ),
            MeshError::EmptyMesh { line } => write!(f, "line {line}: mesh has no vertices or faces"),
            MeshError::DegenerateMesh => write!(f, "degenerate mesh: all vertices coincide"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MeshError {}

/// How the "center" of an object is located before scaling into the unit sphere.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CenterMode {
    /// Midpoint of the axis-aligned bounding box.
    #[default]
    BoundingBox,
    /// Arithmetic mean of the vertex positions.
    VertexMean,
}

/// Azimuth (about the gravity axis z) followed by elevation (about y).
///
/// Both angles are kept in `[0, 2π)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rotation {
    azimuth: f64,
    elevation: f64,
}

fn wrap_angle(a: f64) -> f64 {
    // f64::rem_euclid, which core lacks.
    let r = a % TAU;
    let w = if r < 0.0 { r + TAU } else { r };
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { azimuth: 0.0, elevation: 0.0 };

    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Rotation { azimuth: wrap_angle(azimuth), elevation: wrap_angle(elevation) }
    }

    pub fn from_degrees(azimuth: f64, elevation: f64) -> Self {
        Rotation::new(azimuth.to_radians(), elevation.to_radians())
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// `R_y(elevation) · R_z(azimuth)`.
    pub fn matrix(&self) -> Mat3 {
        Mat3::rotation_y(self.elevation).mul_mat(&Mat3::rotation_z(self.azimuth))
    }
}

/// An indexed triangle mesh. Immutable once built; all transforms return a new mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    id: String,
    label: Option<String>,
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, checking that every face index addresses a vertex.
    pub fn new(
        id: impl Into<String>,
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
    ) -> Result<Self, MeshError> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(MeshError::EmptyMesh { line: 0 });
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(MeshError::MalformedVertex { line: 0 });
        }
        let n = vertices.len();
        if let Some(&bad) = faces.iter().flatten().find(|&&i| i as usize >= n) {
            return Err(MeshError::IndexOutOfRange { line: 0, index: bad as i64, vertex_count: n });
        }
        Ok(TriangleMesh { id: id.into(), label: None, vertices, faces })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    pub fn center(&self, mode: CenterMode) -> Vec3 {
        match mode {
            CenterMode::BoundingBox => self.bounds().center(),
            CenterMode::VertexMean => {
                let sum = self.vertices.iter().fold(Vec3::ZERO, |acc, &v| acc + v);
                sum.scale(1.0 / self.vertices.len() as f64)
            }
        }
    }

    /// Applies `f` to every vertex, keeping topology and metadata.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            id: self.id.clone(),
            label: self.label.clone(),
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Translates the bounding-box centre to the origin and scales so the
    /// farthest vertex lies on the unit sphere.
    pub fn normalize(&self) -> Result<TriangleMesh, MeshError> {
        self.normalize_with(CenterMode::BoundingBox)
    }

    pub fn normalize_with(&self, mode: CenterMode) -> Result<TriangleMesh, MeshError> {
        let c = self.center(mode);
        let radius = self.vertices.iter().map(|&v| (v - c).norm()).fold(0.0, f64::max);
        if !(radius > f64::MIN_POSITIVE) {
            return Err(MeshError::DegenerateMesh);
        }
        let s = 1.0 / radius;
        Ok(self.map_vertices(|v| (v - c).scale(s)))
    }

    pub fn rotate(&self, rotation: Rotation) -> TriangleMesh {
        let m = rotation.matrix();
        self.map_vertices(|v| m.transform(v))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::{FRAC_PI_2, PI};
    use proptest::prelude::*;

    pub(crate) fn cube(half: f64) -> TriangleMesh {
        let mut v = Vec::new();
        for i in 0..8 {
            let s = |bit: usize| if i & bit != 0 { half } else { -half };
            v.push(Vec3::new(s(1), s(2), s(4)));
        }
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        TriangleMesh::new("cube", v, faces).unwrap()
    }

    #[test]
    fn normalize_cube_puts_corners_on_unit_sphere() {
        let m = cube(2.0).normalize().unwrap();
        let k = 1.0 / libm::sqrt(3.0);
        for v in m.vertices() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
            for a in 0..3 {
                assert!((v[a].abs() - k).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_single_point_is_degenerate() {
        let m = TriangleMesh::new("p", vec![Vec3::new(1.0, 2.0, 3.0)], vec![[0, 0, 0]]).unwrap();
        assert_eq!(m.normalize(), Err(MeshError::DegenerateMesh));
    }

    #[test]
    fn vertex_mean_center_is_available() {
        let m = TriangleMesh::new(
            "t",
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let c = m.center(CenterMode::VertexMean);
        assert!((c - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        let n = m.normalize_with(CenterMode::VertexMean).unwrap();
        assert!(n.center(CenterMode::VertexMean).norm() < 1e-12);
    }

    #[test]
    fn new_rejects_bad_index() {
        let err = TriangleMesh::new("x", vec![Vec3::ZERO; 3], vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 3, .. }));
    }

    #[test]
    fn rotate_identity_and_quarter_turn() {
        let m = TriangleMesh::new(
            "t",
            vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.rotate(Rotation::IDENTITY), m);
        let r = m.rotate(Rotation::new(FRAC_PI_2, 0.0));
        assert!((r.vertices()[0] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
        let full = m.rotate(Rotation::new(2.0 * PI, 0.0));
        for (a, b) in full.vertices().iter().zip(m.vertices()) {
            assert!((*a - *b).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_angles_wrap_into_range() {
        let r = Rotation::new(-FRAC_PI_2, 5.0 * PI);
        assert!((r.azimuth() - 1.5 * PI).abs() < 1e-12);
        assert!((r.elevation() - PI).abs() < 1e-12);
        assert_eq!(Rotation::new(TAU, 0.0).azimuth(), 0.0);
    }

    #[test]
    fn elevation_is_applied_after_azimuth() {
        // R_z(90°) sends x to y, which R_y leaves alone; the reverse order would not.
        let r = Rotation::new(FRAC_PI_2, FRAC_PI_2).matrix().transform(Vec3::new(1.0, 0.0, 0.0));
        assert!((r - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    fn arb_mesh() -> impl Strategy<Value = TriangleMesh> {
        prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 3..24).prop_map(|pts| {
            let n = pts.len() as u32;
            let verts: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let faces = (0..n - 2).map(|i| [0, i + 1, i + 2]).collect();
            TriangleMesh::new("p", verts, faces).unwrap()
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(m in arb_mesh()) {
            if let Ok(n1) = m.normalize() {
                let n2 = n1.normalize().unwrap();
                for (a, b) in n1.vertices().iter().zip(n2.vertices()) {
                    prop_assert!((*a - *b).norm() < 1e-6);
                }
                let r = n1.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max);
                prop_assert!((r - 1.0).abs() < 1e-6);
                prop_assert!(n1.center(CenterMode::BoundingBox).norm() < 1e-6);
            }
        }

        #[test]
        fn rotate_is_rigid(m in arb_mesh(), az in 0.0f64..7.0, el in 0.0f64..7.0) {
            let r = m.rotate(Rotation::new(az, el));
            let (v, w) = (m.vertices(), r.vertices());
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    prop_assert!(((v[i] - v[j]).norm() - (w[i] - w[j]).norm()).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn azimuth_rotations_compose(m in arb_mesh(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let twice = m.rotate(Rotation::new(a, 0.0)).rotate(Rotation::new(b, 0.0));
            let once = m.rotate(Rotation::new(a + b, 0.0));
            for (p, q) in twice.vertices().iter().zip(once.vertices()) {
                prop_assert!((*p - *q).norm() < 1e-9);
            }
        }

        #[test]
        fn center_is_translation_equivariant(
            m in arb_mesh(),
            t in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let t = Vec3::from(t);
            let moved = m.map_vertices(|v| v + t);
            for mode in [CenterMode::BoundingBox, CenterMode::VertexMean] {
                let d = moved.center(mode) - (m.center(mode) + t);
                prop_assert!(d.norm() < 1e-9);
            }
        }
    }
}
