#![no_std]
extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod calibrate;
pub mod camera;
pub mod contrastive;
pub mod error;
pub mod enhance;
pub mod episode;
pub mod frame;
pub mod health;
pub mod roi;
pub mod synth;

pub use error::{Error, Result};
