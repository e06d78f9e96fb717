//! Numerics for object-level editing of lidar range views and camera
//! images with a denoising diffusion model.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO; file formats
//! and the command-line tool live in the `rangediff` crate.

#![no_std]

extern crate alloc;

pub mod boxes;
pub mod denoiser;
pub mod diffusion;
pub mod grid;
pub mod image_ops;
pub mod metrics;
pub mod norm;
pub mod optim;
pub mod range_view;
pub mod synth;
pub mod toy;

pub use grid::Grid;
