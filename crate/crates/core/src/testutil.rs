//! Meshes shared by unit tests.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::TriangleMesh;
pub(crate) use crate::shapes::icosphere;

/// Star-shaped blob with random radial bumps, normalized. No symmetries.
pub(crate) fn lumpy(seed: u64) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = icosphere(2);
    let vertices: Vec<_> = base.vertices().iter().map(|v| v.scale(rng.gen_range(0.55..1.0))).collect();
    TriangleMesh::new("lumpy", vertices, base.faces().to_vec()).unwrap().normalize().unwrap()
}
