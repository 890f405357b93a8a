//! Baseline JPEG codec with a per-macroblock quality-factor map.
//!
//! Baseline JPEG carries one quantization table per component, so spatial
//! adaptivity is achieved by quantizing each block with the tables of its
//! own QF, dequantizing, and requantizing with the file tables (those of
//! the largest QF in the map). The scan stays conformant and decodes the
//! same with or without the `JRDQ` APP11 segment that records the map.

mod dct;
mod decoder;
mod encoder;
mod huffman;
mod qfmap;
mod tables;

use alloc::vec::Vec;

pub use decoder::{decode, decode_frame, parse_info, StreamInfo};
pub use encoder::{encode, quantize, write_frame};
pub use qfmap::{grid_dims, rasterize_qfmap, touched_blocks, QfMap, MACROBLOCK};
pub use tables::{qf_to_tables, QuantTables, CHROMA_BASE, LUMA_BASE, ZIGZAG};

/// APP11 payload identifier of the QF-map segment.
pub const JRDQ_ID: &[u8; 5] = b"JRDQ\0";
pub const JRDQ_VERSION: u8 = 1;

/// Quantized DCT coefficients of one component, natural order per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentCoefs {
    pub id: u8,
    pub h: u8,
    pub v: u8,
    pub table: u8,
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub blocks: Vec<[i16; 64]>,
}

impl ComponentCoefs {
    pub fn block(&self, bx: usize, by: usize) -> &[i16; 64] {
        &self.blocks[by * self.blocks_w + bx]
    }
}

/// Everything the entropy coder consumes, and the decoder produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub components: Vec<ComponentCoefs>,
    /// Natural-order tables indexed by table id.
    pub tables: Vec<Option<[u16; 64]>>,
    pub qfmap: Option<QfMap>,
}

/// An encoded JPEG file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    bytes: Vec<u8>,
}

impl Bitstream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Bitstream { bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn info(&self) -> crate::Result<StreamInfo> {
        parse_info(&self.bytes)
    }
}

/// Bits per pixel of `byte_count` bytes over a `width x height` image.
pub fn measure_rate(byte_count: usize, width: usize, height: usize) -> f64 {
    8.0 * byte_count as f64 / (width * height) as f64
}

/// Encodes and decodes in one step.
pub fn round_trip(image: &crate::ImagePlane, map: &QfMap) -> crate::Result<(Bitstream, crate::ImagePlane)> {
    let stream = encode(image, map)?;
    let recon = decode(&stream)?;
    Ok((stream, recon))
}
