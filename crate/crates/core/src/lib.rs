//! Differentiable volume rendering of 3D Gaussian ellipsoid kernels.
//!
//! Each kernel is traced along every viewing ray as a 1D Gaussian, and the
//! kernels on a ray are blended through a closed-form transmittance built
//! from the Gaussian CDF. Everything here is pure computation over `alloc`;
//! file formats, images codecs and the command line live in the `volsplat`
//! crate.
//!
//! Features:
//! - `std` (default): `std::error::Error` for [`Error`].
//! - `parallel` (default, implies `std`): pixel blocks run on rayon. Results
//!   are bit-identical with and without it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod blender;
pub mod convert;
mod error;
pub mod fit;
pub mod grad;
mod kdtree;
pub mod math;
mod par;
pub mod sampler;
pub mod scene;
pub mod synth;
pub mod tracer;

pub use blender::{
    blend, render, shade_lambert, transmittance_at, RayBlend, RenderBuffers, WeightStore,
};
pub use convert::{
    mesh_to_gaussians, pointcloud_to_gaussians, ConvertConfig, PointCloud, TriangleMesh,
    VertexAttributes,
};
pub use error::{Error, Result};
pub use grad::{backward, gradcheck, loss_and_gradient, GradientBundle, GradientPaths, Tape};
pub use math::{Mat3, Vec3};
pub use sampler::{resynthesize, sample_attributes, SampleWeighting, SampledAttributes};
pub use scene::{
    generate_rays, view_transform, Camera, ChannelKind, GaussianKernel, GaussianScene, Image, Ray,
};
pub use tracer::{
    coarse_select, fine_select, trace_kernel, PixelKernelMap, SelectionConfig, TracedKernel,
};
