//! Canonical Huffman tables and the entropy-coded-segment bit I/O.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HuffmanSpec {
    pub bits: [u8; 16],
    pub vals: Vec<u8>,
}

impl HuffmanSpec {
    pub fn new(bits: &[u8; 16], vals: &[u8]) -> Self {
        HuffmanSpec { bits: *bits, vals: vals.to_vec() }
    }

    /// `(code, length)` per symbol, length 0 when the symbol is absent.
    pub fn encoder(&self) -> [(u16, u8); 256] {
        let mut table = [(0u16, 0u8); 256];
        let mut code = 0u16;
        let mut k = 0usize;
        for len in 1..=16u8 {
            for _ in 0..self.bits[len as usize - 1] {
                table[self.vals[k] as usize] = (code, len);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        table
    }
}

/// Decoding form: per code length, the first and last code and the index
/// of the first symbol of that length.
#[derive(Debug, Clone)]
pub struct HuffmanDecoder {
    mincode: [i32; 17],
    maxcode: [i32; 18],
    valptr: [usize; 17],
    vals: Vec<u8>,
}

impl HuffmanDecoder {
    pub fn new(spec: &HuffmanSpec) -> Result<Self> {
        let total: usize = spec.bits.iter().map(|&b| b as usize).sum();
        if total != spec.vals.len() || total > 256 {
            return Err(Error::invalid("huffman table counts do not match values"));
        }
        let mut mincode = [0i32; 17];
        let mut maxcode = [-1i32; 18];
        let mut valptr = [0usize; 17];
        let mut code = 0i32;
        let mut k = 0usize;
        for len in 1..=16 {
            let n = spec.bits[len - 1] as usize;
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n as i32;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(Error::invalid("huffman table overfull"));
            }
            code <<= 1;
        }
        maxcode[17] = i32::MAX;
        Ok(HuffmanDecoder { mincode, maxcode, valptr, vals: spec.vals.clone() })
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | r.bit()? as i32;
            if code <= self.maxcode[len] {
                let idx = self.valptr[len] + (code - self.mincode[len]) as usize;
                return Ok(self.vals[idx]);
            }
        }
        Err(Error::decode(r.position(), "invalid huffman code"))
    }
}

/// Writes bits MSB first, stuffing a zero byte after every 0xFF.
#[derive(Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, bits: u16, len: u8) {
        debug_assert!(len <= 16);
        if len == 0 {
            return;
        }
        let mask = (1u32 << len) - 1;
        self.acc = (self.acc << len) | (bits as u32 & mask);
        self.nbits += len as u32;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0);
            }
            self.nbits -= 8;
            self.acc &= (1 << self.nbits) - 1;
        }
    }

    /// Pads the last byte with ones.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits as u8;
            self.put((1u16 << pad) - 1, pad);
        }
        self.out
    }
}

/// Reads entropy-coded bits, un-stuffing 0xFF00. Stops at any marker.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u8,
    left: u8,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader { data, pos, acc: 0, left: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn bit(&mut self) -> Result<u8> {
        if self.left == 0 {
            let Some(&b) = self.data.get(self.pos) else {
                return Err(Error::decode(self.pos, "entropy-coded data truncated"));
            };
            if b == 0xFF {
                match self.data.get(self.pos + 1) {
                    Some(0) => self.pos += 2,
                    Some(_) => return Err(Error::decode(self.pos, "marker inside entropy-coded data")),
                    None => return Err(Error::decode(self.pos, "entropy-coded data truncated")),
                }
            } else {
                self.pos += 1;
            }
            self.acc = b;
            self.left = 8;
        }
        self.left -= 1;
        Ok((self.acc >> self.left) & 1)
    }

    pub fn bits(&mut self, n: u8) -> Result<u16> {
        let mut v = 0u16;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as u16;
        }
        Ok(v)
    }

    /// Drops the partial byte, e.g. before a restart marker.
    pub fn align(&mut self) {
        self.left = 0;
    }
}

/// Magnitude category of a coefficient value.
pub fn category(v: i32) -> u8 {
    (32 - v.unsigned_abs().leading_zeros()) as u8
}

/// Bits appended after a category symbol (one's complement for negatives).
pub fn magnitude_bits(v: i32, cat: u8) -> u16 {
    if v >= 0 {
        v as u16
    } else {
        ((v - 1) & ((1 << cat) - 1)) as u16
    }
}

pub fn extend(bits: u16, cat: u8) -> i32 {
    if cat == 0 {
        return 0;
    }
    let v = bits as i32;
    if v < (1 << (cat - 1)) {
        v - (1 << cat) + 1
    } else {
        v
    }
}
