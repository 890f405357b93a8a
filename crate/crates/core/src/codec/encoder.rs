use alloc::format;
use alloc::vec::Vec;

use super::dct::Dct;
use super::huffman::{category, magnitude_bits, BitWriter, HuffmanSpec};
use super::tables::*;
use super::{Bitstream, ComponentCoefs, Frame, QfMap, JRDQ_ID, JRDQ_VERSION, MACROBLOCK};
use crate::error::{Error, Result};
use crate::math;
use crate::types::ImagePlane;

const DC_LIMIT: i32 = 1023;
const AC_LIMIT: i32 = 1023;

/// Edge-replicating padded copy of a sample function.
fn padded_plane(pw: usize, ph: usize, w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            p.push(f(x.min(w - 1), sy));
        }
    }
    p
}

fn downsample_2x2(src: &[f64], pw: usize, ph: usize) -> Vec<f64> {
    let (cw, ch) = (pw / 2, ph / 2);
    let mut out = Vec::with_capacity(cw * ch);
    for y in 0..ch {
        for x in 0..cw {
            let i = 2 * y * pw + 2 * x;
            out.push((src[i] + src[i + 1] + src[i + pw] + src[i + pw + 1]) / 4.0);
        }
    }
    out
}

fn quantize_block(coefs: &[f64; 64], block_q: &[u16; 64], file_q: &[u16; 64]) -> [i16; 64] {
    let mut out = [0i16; 64];
    for i in 0..64 {
        let bq = block_q[i] as f64;
        let fq = file_q[i] as f64;
        let mut v = math::round(coefs[i] / bq);
        if block_q[i] != file_q[i] {
            v = math::round(v * bq / fq);
        }
        let lim = if i == 0 { DC_LIMIT } else { AC_LIMIT };
        out[i] = (v as i32).clamp(-lim - (i == 0) as i32, lim) as i16;
    }
    out
}

/// Transforms and quantizes `image` under `map`; no entropy coding.
pub fn quantize(image: &ImagePlane, map: &QfMap) -> Result<Frame> {
    let (w, h) = (image.width(), image.height());
    if !map.matches_image(w, h) {
        return Err(Error::invalid(format!(
            "qf map {}x{} does not match image {w}x{h}",
            map.blocks_w(),
            map.blocks_h()
        )));
    }
    let mut cache: [Option<QuantTables>; 101] = [None; 101];
    for &q in map.values() {
        if cache[q as usize].is_none() {
            cache[q as usize] = Some(qf_to_tables(q)?);
        }
    }
    let file = qf_to_tables(map.file_qf())?;
    let dct = Dct::default();

    // (plane, plane width, blocks_w, blocks_h, luma?, macroblock shift)
    let mut planes: Vec<(Vec<f64>, usize, usize, usize, bool, usize)> = Vec::new();
    let color = image.channels() == 3;
    if color {
        let (pw, ph) = (w.div_ceil(MACROBLOCK) * MACROBLOCK, h.div_ceil(MACROBLOCK) * MACROBLOCK);
        let px = |x: usize, y: usize| {
            let r = image.get(x, y, 0) as f64;
            let g = image.get(x, y, 1) as f64;
            let b = image.get(x, y, 2) as f64;
            (r, g, b)
        };
        let yp = padded_plane(pw, ph, w, h, |x, y| {
            let (r, g, b) = px(x, y);
            0.299 * r + 0.587 * g + 0.114 * b
        });
        let cb = padded_plane(pw, ph, w, h, |x, y| {
            let (r, g, b) = px(x, y);
            -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
        });
        let cr = padded_plane(pw, ph, w, h, |x, y| {
            let (r, g, b) = px(x, y);
            0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
        });
        planes.push((yp, pw, pw / 8, ph / 8, true, 1));
        planes.push((downsample_2x2(&cb, pw, ph), pw / 2, pw / 16, ph / 16, false, 0));
        planes.push((downsample_2x2(&cr, pw, ph), pw / 2, pw / 16, ph / 16, false, 0));
    } else {
        let (pw, ph) = (w.div_ceil(8) * 8, h.div_ceil(8) * 8);
        let yp = padded_plane(pw, ph, w, h, |x, y| image.get(x, y, 0) as f64);
        planes.push((yp, pw, pw / 8, ph / 8, true, 1));
    }

    let mut components = Vec::with_capacity(planes.len());
    for (ci, (plane, pw, bw, bh, luma, shift)) in planes.into_iter().enumerate() {
        let mut blocks = Vec::with_capacity(bw * bh);
        for by in 0..bh {
            for bx in 0..bw {
                let mut blk = [0.0f64; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        blk[y * 8 + x] = plane[(by * 8 + y) * pw + bx * 8 + x] - 128.0;
                    }
                }
                let coefs = dct.forward(&blk);
                let mbx = (bx >> shift).min(map.blocks_w() - 1);
                let mby = (by >> shift).min(map.blocks_h() - 1);
                let t = cache[map.get(mbx, mby) as usize].as_ref().unwrap();
                let (bq, fq) = if luma { (&t.luma, &file.luma) } else { (&t.chroma, &file.chroma) };
                blocks.push(quantize_block(&coefs, bq, fq));
            }
        }
        let (hs, vs) = if color && luma { (2, 2) } else { (1, 1) };
        components.push(ComponentCoefs {
            id: ci as u8 + 1,
            h: hs,
            v: vs,
            table: (!luma) as u8,
            blocks_w: bw,
            blocks_h: bh,
            blocks,
        });
    }
    let mut tables = alloc::vec![Some(file.luma)];
    if color {
        tables.push(Some(file.chroma));
    }
    Ok(Frame {
        width: w,
        height: h,
        components,
        tables,
        qfmap: Some(map.clone()),
    })
}

fn marker(out: &mut Vec<u8>, m: u8) {
    out.push(0xFF);
    out.push(m);
}

fn u16be(out: &mut Vec<u8>, v: usize) {
    out.push((v >> 8) as u8);
    out.push(v as u8);
}

fn write_dht(out: &mut Vec<u8>, class: u8, id: u8, bits: &[u8; 16], vals: &[u8]) {
    marker(out, 0xC4);
    u16be(out, 2 + 1 + 16 + vals.len());
    out.push((class << 4) | id);
    out.extend_from_slice(bits);
    out.extend_from_slice(vals);
}

struct BlockCoder {
    dc: [(u16, u8); 256],
    ac: [(u16, u8); 256],
}

impl BlockCoder {
    fn new(dc_bits: &[u8; 16], dc_vals: &[u8], ac_bits: &[u8; 16], ac_vals: &[u8]) -> Self {
        BlockCoder {
            dc: HuffmanSpec::new(dc_bits, dc_vals).encoder(),
            ac: HuffmanSpec::new(ac_bits, ac_vals).encoder(),
        }
    }

    fn put(&self, w: &mut BitWriter, blk: &[i16; 64], prev_dc: &mut i32) {
        let diff = blk[0] as i32 - *prev_dc;
        *prev_dc = blk[0] as i32;
        let cat = category(diff);
        let (c, l) = self.dc[cat as usize];
        w.put(c, l);
        w.put(magnitude_bits(diff, cat), cat);
        let mut run = 0u8;
        for &zz in &ZIGZAG[1..] {
            let v = blk[zz] as i32;
            if v == 0 {
                run += 1;
                continue;
            }
            while run > 15 {
                let (c, l) = self.ac[0xF0];
                w.put(c, l);
                run -= 16;
            }
            let cat = category(v);
            let (c, l) = self.ac[((run << 4) | cat) as usize];
            w.put(c, l);
            w.put(magnitude_bits(v, cat), cat);
            run = 0;
        }
        if run > 0 {
            let (c, l) = self.ac[0x00];
            w.put(c, l);
        }
    }
}

/// Serializes a frame produced by [`quantize`] as a JFIF file.
pub fn write_frame(frame: &Frame) -> Result<Bitstream> {
    let mut out = Vec::new();
    marker(&mut out, 0xD8);

    marker(&mut out, 0xE0);
    u16be(&mut out, 16);
    out.extend_from_slice(b"JFIF\0");
    out.extend_from_slice(&[1, 1, 0, 0, 1, 0, 1, 0, 0]);

    if let Some(map) = &frame.qfmap {
        let n = map.values().len();
        let len = 2 + JRDQ_ID.len() + 1 + 4 + n;
        if len > 0xFFFF || map.blocks_w() > 0xFFFF || map.blocks_h() > 0xFFFF {
            return Err(Error::invalid("qf map too large for one APP11 segment"));
        }
        marker(&mut out, 0xEB);
        u16be(&mut out, len);
        out.extend_from_slice(JRDQ_ID);
        out.push(JRDQ_VERSION);
        u16be(&mut out, map.blocks_w());
        u16be(&mut out, map.blocks_h());
        out.extend_from_slice(map.values());
    }

    for (id, t) in frame.tables.iter().enumerate() {
        let Some(t) = t else { continue };
        marker(&mut out, 0xDB);
        u16be(&mut out, 67);
        out.push(id as u8);
        for &zz in &ZIGZAG {
            out.push(t[zz] as u8);
        }
    }

    if frame.width > 0xFFFF || frame.height > 0xFFFF {
        return Err(Error::invalid("image too large for a JPEG frame"));
    }
    let nc = frame.components.len();
    marker(&mut out, 0xC0);
    u16be(&mut out, 8 + 3 * nc);
    out.push(8);
    u16be(&mut out, frame.height);
    u16be(&mut out, frame.width);
    out.push(nc as u8);
    for c in &frame.components {
        out.extend_from_slice(&[c.id, (c.h << 4) | c.v, c.table]);
    }

    write_dht(&mut out, 0, 0, &LUMA_DC_BITS, &LUMA_DC_VALS);
    write_dht(&mut out, 1, 0, &LUMA_AC_BITS, &LUMA_AC_VALS);
    if nc > 1 {
        write_dht(&mut out, 0, 1, &CHROMA_DC_BITS, &CHROMA_DC_VALS);
        write_dht(&mut out, 1, 1, &CHROMA_AC_BITS, &CHROMA_AC_VALS);
    }

    marker(&mut out, 0xDA);
    u16be(&mut out, 6 + 2 * nc);
    out.push(nc as u8);
    for c in &frame.components {
        let t = c.table.min(1);
        out.extend_from_slice(&[c.id, (t << 4) | t]);
    }
    out.extend_from_slice(&[0, 63, 0]);

    let coders = [
        BlockCoder::new(&LUMA_DC_BITS, &LUMA_DC_VALS, &LUMA_AC_BITS, &LUMA_AC_VALS),
        BlockCoder::new(&CHROMA_DC_BITS, &CHROMA_DC_VALS, &CHROMA_AC_BITS, &CHROMA_AC_VALS),
    ];
    let mut w = BitWriter::new();
    let mut pred = alloc::vec![0i32; nc];
    if nc == 1 {
        let c = &frame.components[0];
        for blk in &c.blocks {
            coders[0].put(&mut w, blk, &mut pred[0]);
        }
    } else {
        let hmax = frame.components.iter().map(|c| c.h as usize).max().unwrap_or(1);
        let vmax = frame.components.iter().map(|c| c.v as usize).max().unwrap_or(1);
        let mcux = frame.components[0].blocks_w / frame.components[0].h as usize;
        let mcuy = frame.components[0].blocks_h / frame.components[0].v as usize;
        debug_assert!(hmax * 8 * mcux >= frame.width && vmax * 8 * mcuy >= frame.height);
        for my in 0..mcuy {
            for mx in 0..mcux {
                for (ci, c) in frame.components.iter().enumerate() {
                    for v in 0..c.v as usize {
                        for h in 0..c.h as usize {
                            let blk = c.block(mx * c.h as usize + h, my * c.v as usize + v);
                            coders[c.table.min(1) as usize].put(&mut w, blk, &mut pred[ci]);
                        }
                    }
                }
            }
        }
    }
    out.extend_from_slice(&w.finish());
    marker(&mut out, 0xD9);
    Ok(Bitstream::from_bytes(out))
}

/// Encodes `image` with per-macroblock quality given by `map`.
pub fn encode(image: &ImagePlane, map: &QfMap) -> Result<Bitstream> {
    write_frame(&quantize(image, map)?)
}
