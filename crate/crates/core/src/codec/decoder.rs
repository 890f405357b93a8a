//! Baseline (sequential, Huffman) JPEG decoder.
//!
//! Handles interleaved and per-component scans, any sampling factors up to
//! 4, 8- and 16-bit quantization tables and restart intervals. Chroma is
//! upsampled by replication.

use alloc::format;
use alloc::vec::Vec;

use super::dct::Dct;
use super::huffman::{extend, BitReader, HuffmanDecoder, HuffmanSpec};
use super::tables::ZIGZAG;
use super::{Bitstream, ComponentCoefs, Frame, QfMap, JRDQ_ID};
use crate::error::{Error, Result};
use crate::math;
use crate::types::ImagePlane;

/// Header-level facts about a stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamInfo {
    pub width: usize,
    pub height: usize,
    pub components: usize,
    /// `(h, v)` sampling factors per component.
    pub sampling: Vec<(u8, u8)>,
    pub qfmap: Option<QfMap>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::decode(self.pos, "unexpected end of stream"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    /// Reads a segment length and returns the segment body.
    fn segment(&mut self) -> Result<(usize, &'a [u8])> {
        let start = self.pos;
        let len = self.u16()? as usize;
        if len < 2 || start + len > self.data.len() {
            return Err(Error::decode(start, "segment length out of range"));
        }
        self.pos = start + len;
        Ok((start + 2, &self.data[start + 2..start + len]))
    }

    fn next_marker(&mut self) -> Result<u8> {
        let at = self.pos;
        if self.u8()? != 0xFF {
            return Err(Error::decode(at, "expected marker"));
        }
        let mut m = self.u8()?;
        while m == 0xFF {
            m = self.u8()?;
        }
        Ok(m)
    }
}

struct FrameHeader {
    width: usize,
    height: usize,
    comps: Vec<(u8, u8, u8, u8)>, // id, h, v, table
}

fn parse_sof(offset: usize, body: &[u8]) -> Result<FrameHeader> {
    if body.len() < 6 {
        return Err(Error::decode(offset, "short SOF segment"));
    }
    if body[0] != 8 {
        return Err(Error::decode(offset, format!("unsupported sample precision {}", body[0])));
    }
    let height = ((body[1] as usize) << 8) | body[2] as usize;
    let width = ((body[3] as usize) << 8) | body[4] as usize;
    let n = body[5] as usize;
    if body.len() != 6 + 3 * n || !(n == 1 || n == 3) {
        return Err(Error::decode(offset, format!("unsupported component count {n}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::decode(offset, "zero image dimension"));
    }
    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        let c = &body[6 + 3 * i..9 + 3 * i];
        let (h, v) = (c[1] >> 4, c[1] & 15);
        if !(1..=4).contains(&h) || !(1..=4).contains(&v) || c[2] > 3 {
            return Err(Error::decode(offset + 6 + 3 * i, "invalid component parameters"));
        }
        comps.push((c[0], h, v, c[2]));
    }
    Ok(FrameHeader { width, height, comps })
}

fn parse_jrdq(offset: usize, body: &[u8]) -> Result<Option<QfMap>> {
    if !body.starts_with(JRDQ_ID) {
        return Ok(None);
    }
    let rest = &body[JRDQ_ID.len()..];
    if rest.len() < 5 {
        return Err(Error::decode(offset, "short JRDQ segment"));
    }
    let bw = ((rest[1] as usize) << 8) | rest[2] as usize;
    let bh = ((rest[3] as usize) << 8) | rest[4] as usize;
    let qf = &rest[5..];
    QfMap::new(bw, bh, qf.to_vec())
        .map(Some)
        .map_err(|_| Error::decode(offset, "malformed JRDQ segment"))
}

/// Reads headers up to the first scan.
pub fn parse_info(data: &[u8]) -> Result<StreamInfo> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.next_marker()? != 0xD8 {
        return Err(Error::decode(0, "missing SOI"));
    }
    let mut qfmap = None;
    loop {
        let m = cur.next_marker()?;
        match m {
            0xC0 | 0xC1 => {
                let (off, body) = cur.segment()?;
                let fh = parse_sof(off, body)?;
                return Ok(StreamInfo {
                    width: fh.width,
                    height: fh.height,
                    components: fh.comps.len(),
                    sampling: fh.comps.iter().map(|c| (c.1, c.2)).collect(),
                    qfmap,
                });
            }
            0xEB => {
                let (off, body) = cur.segment()?;
                if let Some(m) = parse_jrdq(off, body)? {
                    qfmap = Some(m);
                }
            }
            0xC2..=0xCF if m != 0xC4 && m != 0xC8 && m != 0xCC => {
                return Err(Error::decode(cur.pos - 2, "only baseline sequential JPEG is supported"));
            }
            0xD9 | 0xDA => return Err(Error::decode(cur.pos - 2, "no frame header before scan")),
            _ => {
                cur.segment()?;
            }
        }
    }
}

struct DecoderState {
    qt: [Option<[u16; 64]>; 4],
    dc: [Option<HuffmanDecoder>; 4],
    ac: [Option<HuffmanDecoder>; 4],
    restart: usize,
}

fn decode_block(r: &mut BitReader<'_>, dc: &HuffmanDecoder, ac: &HuffmanDecoder, pred: &mut i32) -> Result<[i16; 64]> {
    let mut blk = [0i16; 64];
    let t = dc.decode(r)?;
    if t > 11 {
        return Err(Error::decode(r.position(), "DC category out of range"));
    }
    *pred += extend(r.bits(t)?, t);
    blk[0] = *pred as i16;
    let mut k = 1usize;
    while k < 64 {
        let rs = ac.decode(r)?;
        let (run, size) = ((rs >> 4) as usize, rs & 15);
        if size == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += run;
        if k > 63 {
            return Err(Error::decode(r.position(), "AC run past end of block"));
        }
        blk[ZIGZAG[k]] = extend(r.bits(size)?, size) as i16;
        k += 1;
    }
    Ok(blk)
}

/// Decodes to quantized coefficients without reconstructing pixels.
pub fn decode_frame(data: &[u8]) -> Result<Frame> {
    if data.is_empty() {
        return Err(Error::decode(0, "empty stream"));
    }
    let mut cur = Cursor { data, pos: 0 };
    if cur.next_marker()? != 0xD8 {
        return Err(Error::decode(0, "missing SOI"));
    }
    let mut st = DecoderState {
        qt: [None; 4],
        dc: [None, None, None, None],
        ac: [None, None, None, None],
        restart: 0,
    };
    let mut qfmap = None;
    let mut header: Option<FrameHeader> = None;
    let mut comps: Vec<ComponentCoefs> = Vec::new();
    let mut scanned = false;
    loop {
        let mpos = cur.pos;
        let m = cur.next_marker()?;
        match m {
            0xD9 => break,
            0xC0 | 0xC1 => {
                if header.is_some() {
                    return Err(Error::decode(mpos, "multiple frames"));
                }
                let (off, body) = cur.segment()?;
                let fh = parse_sof(off, body)?;
                let hmax = fh.comps.iter().map(|c| c.1 as usize).max().unwrap();
                let vmax = fh.comps.iter().map(|c| c.2 as usize).max().unwrap();
                let mcux = fh.width.div_ceil(8 * hmax);
                let mcuy = fh.height.div_ceil(8 * vmax);
                for &(id, h, v, table) in &fh.comps {
                    let (bw, bh) = if fh.comps.len() == 1 {
                        (fh.width.div_ceil(8), fh.height.div_ceil(8))
                    } else {
                        (mcux * h as usize, mcuy * v as usize)
                    };
                    comps.push(ComponentCoefs {
                        id,
                        h,
                        v,
                        table,
                        blocks_w: bw,
                        blocks_h: bh,
                        blocks: alloc::vec![[0i16; 64]; bw * bh],
                    });
                }
                header = Some(fh);
            }
            0xC2..=0xCF if m != 0xC4 && m != 0xC8 && m != 0xCC => {
                return Err(Error::decode(mpos, "only baseline sequential JPEG is supported"));
            }
            0xC4 => {
                let (off, body) = cur.segment()?;
                let mut i = 0;
                while i < body.len() {
                    if i + 17 > body.len() {
                        return Err(Error::decode(off + i, "short DHT segment"));
                    }
                    let (class, id) = (body[i] >> 4, (body[i] & 15) as usize);
                    let mut bits = [0u8; 16];
                    bits.copy_from_slice(&body[i + 1..i + 17]);
                    let n: usize = bits.iter().map(|&b| b as usize).sum();
                    if i + 17 + n > body.len() || class > 1 || id > 3 {
                        return Err(Error::decode(off + i, "malformed DHT segment"));
                    }
                    let spec = HuffmanSpec::new(&bits, &body[i + 17..i + 17 + n]);
                    let dec = HuffmanDecoder::new(&spec).map_err(|_| Error::decode(off + i, "invalid huffman table"))?;
                    if class == 0 {
                        st.dc[id] = Some(dec);
                    } else {
                        st.ac[id] = Some(dec);
                    }
                    i += 17 + n;
                }
            }
            0xDB => {
                let (off, body) = cur.segment()?;
                let mut i = 0;
                while i < body.len() {
                    let (pq, tq) = (body[i] >> 4, (body[i] & 15) as usize);
                    let size = if pq == 0 { 64 } else { 128 };
                    if tq > 3 || pq > 1 || i + 1 + size > body.len() {
                        return Err(Error::decode(off + i, "malformed DQT segment"));
                    }
                    let mut t = [0u16; 64];
                    for k in 0..64 {
                        let v = if pq == 0 {
                            body[i + 1 + k] as u16
                        } else {
                            ((body[i + 1 + 2 * k] as u16) << 8) | body[i + 2 + 2 * k] as u16
                        };
                        t[ZIGZAG[k]] = v;
                    }
                    st.qt[tq] = Some(t);
                    i += 1 + size;
                }
            }
            0xDD => {
                let (off, body) = cur.segment()?;
                if body.len() != 2 {
                    return Err(Error::decode(off, "malformed DRI segment"));
                }
                st.restart = ((body[0] as usize) << 8) | body[1] as usize;
            }
            0xEB => {
                let (off, body) = cur.segment()?;
                if let Some(map) = parse_jrdq(off, body)? {
                    qfmap = Some(map);
                }
            }
            0xDA => {
                let Some(fh) = header.as_ref() else {
                    return Err(Error::decode(mpos, "scan before frame header"));
                };
                let (off, body) = cur.segment()?;
                let end = decode_scan(data, cur.pos, off, body, fh, &mut comps, &st)?;
                cur.pos = end;
                scanned = true;
            }
            0xD0..=0xD7 => return Err(Error::decode(mpos, "unexpected restart marker")),
            _ => {
                cur.segment()?;
            }
        }
    }
    let Some(fh) = header else {
        return Err(Error::decode(cur.pos, "no frame header"));
    };
    if !scanned {
        return Err(Error::decode(cur.pos, "no scan data"));
    }
    Ok(Frame {
        width: fh.width,
        height: fh.height,
        components: comps,
        tables: st.qt.to_vec(),
        qfmap,
    })
}

fn decode_scan(
    data: &[u8],
    start: usize,
    off: usize,
    body: &[u8],
    fh: &FrameHeader,
    comps: &mut [ComponentCoefs],
    st: &DecoderState,
) -> Result<usize> {
    if body.is_empty() {
        return Err(Error::decode(off, "short SOS segment"));
    }
    let ns = body[0] as usize;
    if ns == 0 || ns > comps.len() || body.len() != 1 + 2 * ns + 3 {
        return Err(Error::decode(off, "malformed SOS segment"));
    }
    let mut sel = Vec::with_capacity(ns);
    for i in 0..ns {
        let id = body[1 + 2 * i];
        let t = body[2 + 2 * i];
        let ci = comps
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::decode(off + 1 + 2 * i, "scan references unknown component"))?;
        let dc = st.dc[(t >> 4) as usize & 3]
            .as_ref()
            .ok_or_else(|| Error::decode(off, "missing DC huffman table"))?;
        let ac = st.ac[(t & 15) as usize & 3]
            .as_ref()
            .ok_or_else(|| Error::decode(off, "missing AC huffman table"))?;
        sel.push((ci, dc, ac));
    }
    let tail = &body[1 + 2 * ns..];
    if tail != [0, 63, 0] {
        return Err(Error::decode(off, "not a baseline scan"));
    }

    let hmax = fh.comps.iter().map(|c| c.1 as usize).max().unwrap();
    let vmax = fh.comps.iter().map(|c| c.2 as usize).max().unwrap();
    // Units: MCUs for interleaved scans, single blocks otherwise.
    let units: Vec<Vec<(usize, usize, usize)>> = if ns == 1 {
        let c = &comps[sel[0].0];
        let cw = (fh.width * c.h as usize).div_ceil(hmax).div_ceil(8);
        let ch = (fh.height * c.v as usize).div_ceil(vmax).div_ceil(8);
        let mut u = Vec::with_capacity(cw * ch);
        for by in 0..ch {
            for bx in 0..cw {
                u.push(alloc::vec![(0, bx, by)]);
            }
        }
        u
    } else {
        let mcux = fh.width.div_ceil(8 * hmax);
        let mcuy = fh.height.div_ceil(8 * vmax);
        let mut u = Vec::with_capacity(mcux * mcuy);
        for my in 0..mcuy {
            for mx in 0..mcux {
                let mut blocks = Vec::new();
                for (si, &(ci, _, _)) in sel.iter().enumerate() {
                    let c = &comps[ci];
                    for v in 0..c.v as usize {
                        for h in 0..c.h as usize {
                            blocks.push((si, mx * c.h as usize + h, my * c.v as usize + v));
                        }
                    }
                }
                u.push(blocks);
            }
        }
        u
    };

    let mut r = BitReader::new(data, start);
    let mut pred = alloc::vec![0i32; ns];
    let mut expected_rst = 0u8;
    for (n, unit) in units.iter().enumerate() {
        if st.restart > 0 && n > 0 && n % st.restart == 0 {
            r.align();
            let p = r.position();
            if data.get(p) != Some(&0xFF) || data.get(p + 1) != Some(&(0xD0 + expected_rst)) {
                return Err(Error::decode(p, "missing restart marker"));
            }
            r = BitReader::new(data, p + 2);
            expected_rst = (expected_rst + 1) & 7;
            pred.iter_mut().for_each(|p| *p = 0);
        }
        for &(si, bx, by) in unit {
            let (ci, dc, ac) = sel[si];
            let blk = decode_block(&mut r, dc, ac, &mut pred[si])?;
            let c = &mut comps[ci];
            if bx < c.blocks_w && by < c.blocks_h {
                c.blocks[by * c.blocks_w + bx] = blk;
            }
        }
    }
    r.align();
    Ok(r.position())
}

/// Pixel reconstruction of a decoded frame.
pub fn reconstruct(frame: &Frame) -> Result<ImagePlane> {
    let dct = Dct::default();
    let hmax = frame.components.iter().map(|c| c.h as usize).max().unwrap_or(1);
    let vmax = frame.components.iter().map(|c| c.v as usize).max().unwrap_or(1);
    let mut planes = Vec::with_capacity(frame.components.len());
    for c in &frame.components {
        let q = frame
            .tables
            .get(c.table as usize)
            .copied()
            .flatten()
            .ok_or_else(|| Error::decode(0, format!("missing quantization table {}", c.table)))?;
        let pw = c.blocks_w * 8;
        let mut plane = alloc::vec![0u8; pw * c.blocks_h * 8];
        for by in 0..c.blocks_h {
            for bx in 0..c.blocks_w {
                let blk = c.block(bx, by);
                let mut coefs = [0.0f64; 64];
                for i in 0..64 {
                    coefs[i] = blk[i] as f64 * q[i] as f64;
                }
                let px = dct.inverse(&coefs);
                for y in 0..8 {
                    for x in 0..8 {
                        let v = math::round(px[y * 8 + x] + 128.0).clamp(0.0, 255.0) as u8;
                        plane[(by * 8 + y) * pw + bx * 8 + x] = v;
                    }
                }
            }
        }
        planes.push((plane, pw, hmax / c.h as usize, vmax / c.v as usize));
    }
    let (w, h) = (frame.width, frame.height);
    let sample = |ci: usize, x: usize, y: usize| -> f64 {
        let (p, pw, sx, sy) = &planes[ci];
        p[(y / sy) * pw + x / sx] as f64
    };
    let channels = if planes.len() == 3 { 3 } else { 1 };
    let mut out = Vec::with_capacity(w * h * channels);
    for y in 0..h {
        for x in 0..w {
            if channels == 1 {
                out.push(sample(0, x, y) as u8);
            } else {
                let yy = sample(0, x, y);
                let cb = sample(1, x, y) - 128.0;
                let cr = sample(2, x, y) - 128.0;
                let to8 = |v: f64| math::round(v).clamp(0.0, 255.0) as u8;
                out.push(to8(yy + 1.402 * cr));
                out.push(to8(yy - 0.344136 * cb - 0.714136 * cr));
                out.push(to8(yy + 1.772 * cb));
            }
        }
    }
    ImagePlane::new(w, h, channels, out)
}

pub fn decode(stream: &Bitstream) -> Result<ImagePlane> {
    reconstruct(&decode_frame(stream.bytes())?)
}
