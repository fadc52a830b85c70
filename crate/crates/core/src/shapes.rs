//! Procedural primitives used for synthetic corpora and tests.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::geometry::Vec3;
use crate::mesh::TriangleMesh;

fn mesh(name: &str, vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> TriangleMesh {
    TriangleMesh::new(name, vertices, faces).expect("primitive has valid indices")
}

/// Axis-aligned box with the given half extents, two triangles per side.
pub fn cuboid(half: Vec3) -> TriangleMesh {
    let vertices = (0..8)
        .map(|i| {
            let s = |bit: usize, h: f64| if i & bit != 0 { h } else { -h };
            Vec3::new(s(1, half.x), s(2, half.y), s(4, half.z))
        })
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    mesh("box", vertices, faces)
}

/// Regular tetrahedron inscribed in the unit sphere.
pub fn tetrahedron() -> TriangleMesh {
    let k = 1.0 / libm::sqrt(3.0);
    let vertices = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
        .iter()
        .map(|&[x, y, z]| Vec3::new(x * k, y * k, z * k))
        .collect();
    mesh("tetrahedron", vertices, [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]].to_vec())
}

/// Unit icosphere: an icosahedron with every triangle split into four
/// `subdivisions` times, vertices pushed onto the sphere.
pub fn icosphere(subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + libm::sqrt(5.0)) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| {
        let v = Vec3::from(p);
        v.scale(1.0 / v.norm())
    })
    .collect();
    let mut faces: Vec<[u32; 3]> = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ]
    .to_vec();

    for _ in 0..subdivisions {
        let mut midpoints: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).scale(0.5);
                vertices.push(m.scale(1.0 / m.norm()));
                vertices.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    mesh("icosphere", vertices, faces)
}

/// Closed cylinder along z with capped ends.
pub fn cylinder(radius: f64, half_height: f64, segments: u32) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(2 * segments as usize + 2);
    for i in 0..segments {
        let (s, c) = libm::sincos(TAU * i as f64 / segments as f64);
        vertices.push(Vec3::new(radius * c, radius * s, -half_height));
        vertices.push(Vec3::new(radius * c, radius * s, half_height));
    }
    let bottom = vertices.len() as u32;
    vertices.push(Vec3::new(0.0, 0.0, -half_height));
    vertices.push(Vec3::new(0.0, 0.0, half_height));
    let top = bottom + 1;
    let mut faces = Vec::with_capacity(4 * segments as usize);
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bottom, b1, b0]);
        faces.push([top, t0, t1]);
    }
    mesh("cylinder", vertices, faces)
}

/// Torus around z with tube centre radius `major` and tube radius `minor`.
pub fn torus(major: f64, minor: f64, major_segments: u32, minor_segments: u32) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((major_segments * minor_segments) as usize);
    for i in 0..major_segments {
        let (su, cu) = libm::sincos(TAU * i as f64 / major_segments as f64);
        for j in 0..minor_segments {
            let (sv, cv) = libm::sincos(TAU * j as f64 / minor_segments as f64);
            let r = major + minor * cv;
            vertices.push(Vec3::new(r * cu, r * su, minor * sv));
        }
    }
    let idx = |i: u32, j: u32| (i % major_segments) * minor_segments + (j % minor_segments);
    let mut faces = Vec::with_capacity(2 * vertices.len());
    for i in 0..major_segments {
        for j in 0..minor_segments {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    mesh("torus", vertices, faces)
}
