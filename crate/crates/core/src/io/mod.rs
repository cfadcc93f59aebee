//! File formats for flow, real-valued grids and label maps.

pub mod color;
pub mod flo;
pub mod label_png;
pub mod pfm;

pub use color::{flow_to_color, write_rgb_png, RgbImage};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use label_png::{label_color, read_label_png, write_label_png, LABEL_PALETTE_SIZE};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
