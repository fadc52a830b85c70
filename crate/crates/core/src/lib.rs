//! Core algorithms for classifying and retrieving 3D shapes from spherical
//! depth images.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`mesh`] + [`render`]: a normalized triangle mesh is flattened into a
//!    depth image by casting one ray per pixel through a map projection
//!    ([`projection`]) and recording the distance to the outermost surface
//!    ([`raycast`]).
//! 2. [`nn`]: a shallow CNN scores each image.
//! 3. [`multiview`]: images of many rotations of the same object are scored,
//!    a per-view weight is learned, and the highest-weight views are kept.
//! 4. [`multiview`] again: the kept views are combined by max, mean or learned
//!    weighted mean; [`retrieval`] ranks objects by their softmaxed scores.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. `parallel` (on by default) spreads pixel rows, views and batch
//! samples across a rayon pool; results are identical with and without it.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod geometry;
pub mod mesh;
pub mod multiview;
pub mod nn;
mod par;
pub mod projection;
pub mod raycast;
pub mod render;
pub mod retrieval;
pub mod shapes;

#[cfg(test)]
mod testutil;

pub use geometry::Vec3;
pub use mesh::{parse_obj, parse_off, CenterMode, MeshError, Rotation, TriangleMesh};
pub use projection::{PlaneCoord, ProjectionKind, SphereCoord};
pub use render::{render, DepthImage, ImageKind, RenderOptions};
