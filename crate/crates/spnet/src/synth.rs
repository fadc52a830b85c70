//! Procedural labelled corpus: boxes, spheres, cylinders, tetrahedra and
//! tori with random per-axis scale and vertex jitter.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spnet_core::shapes;
use spnet_core::{TriangleMesh, Vec3};

use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::manifest::{Manifest, Record, Split};

pub const CLASSES: [&str; 5] = ["box", "sphere", "cylinder", "tetrahedron", "torus"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Total objects, spread evenly over the classes.
    pub count: usize,
    pub classes: usize,
    /// Fraction of each class assigned to the test split (the rest train).
    pub test_fraction: f64,
    /// Per-axis scale factors are drawn from `[1 - s, 1 + s]`.
    pub scale_spread: f64,
    /// Vertex offsets are drawn per coordinate from `[-j, j]`.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { count: 30, classes: 3, test_fraction: 0.25, scale_spread: 0.3, jitter: 0.01, seed: 0 }
    }
}

fn base_shape(class: usize) -> TriangleMesh {
    match class {
        0 => shapes::cuboid(Vec3::new(0.5, 0.5, 0.5)),
        1 => shapes::icosphere(2),
        2 => shapes::cylinder(0.5, 0.5, 24),
        3 => shapes::tetrahedron(),
        _ => shapes::torus(0.7, 0.25, 24, 12),
    }
}

/// One object of `class`, deterministic in `(seed, index)`.
pub fn synth_object(class: usize, index: u64, opts: &SynthOptions) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let mut scale = || 1.0 + rng.gen_range(-opts.scale_spread..=opts.scale_spread);
    let s = Vec3::new(scale(), scale(), scale());
    let base = base_shape(class);
    let jitter: Vec<Vec3> = (0..base.vertices().len())
        .map(|_| {
            let mut j = || if opts.jitter > 0.0 { rng.gen_range(-opts.jitter..=opts.jitter) } else { 0.0 };
            Vec3::new(j(), j(), j())
        })
        .collect();
    let vertices = base.vertices().iter().zip(&jitter).map(|(v, j)| Vec3::new(v.x * s.x, v.y * s.y, v.z * s.z) + *j);
    TriangleMesh::new(base.id(), vertices.collect(), base.faces().to_vec()).expect("faces unchanged")
}

/// ASCII OFF text; floats are printed so they parse back exactly.
pub fn to_off(mesh: &TriangleMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices().len(), mesh.faces().len());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// Writes `meshes/<id>.off` and `manifest.csv` under `dir`.
pub fn synth(dir: &Path, opts: &SynthOptions) -> Result<Manifest> {
    if opts.classes == 0 || opts.classes > CLASSES.len() {
        return Err(Error::Setting(format!("classes must be between 1 and {}", CLASSES.len())));
    }
    if opts.count < opts.classes || opts.count % opts.classes != 0 {
        return Err(Error::Setting("count must be a positive multiple of classes".into()));
    }
    if !(0.0..=1.0).contains(&opts.test_fraction) || !(0.0..1.0).contains(&opts.scale_spread) || opts.jitter < 0.0 {
        return Err(Error::Setting("test_fraction, scale_spread or jitter out of range".into()));
    }
    let per_class = opts.count / opts.classes;
    let train_per_class = per_class - (per_class as f64 * opts.test_fraction).round() as usize;
    let mut records = Vec::with_capacity(opts.count);
    for class in 0..opts.classes {
        for i in 0..per_class {
            let index = (class * per_class + i) as u64;
            let id = format!("{}_{i:04}", CLASSES[class]);
            let path: PathBuf = dir.join("meshes").join(format!("{id}.off"));
            write_atomic(&path, to_off(&synth_object(class, index, opts)).as_bytes())?;
            let split = if i < train_per_class { Split::Train } else { Split::Test };
            records.push(Record { object_id: id, mesh_path: path, class_label: CLASSES[class].into(), split });
        }
    }
    let manifest = Manifest::new(records);
    manifest.save(&dir.join("manifest.csv"), dir)?;
    Ok(manifest)
}
