use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::BoundingBox;

/// Side of a QF-map cell; one 4:2:0 MCU.
pub const MACROBLOCK: usize = 16;

/// Quality factor per 16x16 macroblock, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QfMap {
    blocks_w: usize,
    blocks_h: usize,
    qf: Vec<u8>,
}

pub fn grid_dims(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(MACROBLOCK), height.div_ceil(MACROBLOCK))
}

impl QfMap {
    pub fn new(blocks_w: usize, blocks_h: usize, qf: Vec<u8>) -> Result<Self> {
        if blocks_w == 0 || blocks_h == 0 || qf.len() != blocks_w * blocks_h {
            return Err(Error::invalid(format!(
                "qf map has {} entries for a {blocks_w}x{blocks_h} grid",
                qf.len()
            )));
        }
        if let Some(q) = qf.iter().find(|q| !(1..=100).contains(*q)) {
            return Err(Error::invalid(format!("quality factor {q} not in 1..=100")));
        }
        Ok(QfMap { blocks_w, blocks_h, qf })
    }

    pub fn uniform(image_w: usize, image_h: usize, qf: u8) -> Result<Self> {
        let (bw, bh) = grid_dims(image_w, image_h);
        Self::new(bw, bh, alloc::vec![qf; bw * bh])
    }

    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    pub fn values(&self) -> &[u8] {
        &self.qf
    }

    pub fn get(&self, bx: usize, by: usize) -> u8 {
        self.qf[by * self.blocks_w + bx]
    }

    pub fn set(&mut self, bx: usize, by: usize, qf: u8) -> Result<()> {
        if !(1..=100).contains(&qf) {
            return Err(Error::invalid(format!("quality factor {qf} not in 1..=100")));
        }
        self.qf[by * self.blocks_w + bx] = qf;
        Ok(())
    }

    /// Quality of the tables written to the file: the finest in the map.
    pub fn file_qf(&self) -> u8 {
        self.qf.iter().copied().max().unwrap_or(100)
    }

    pub fn is_uniform(&self) -> bool {
        self.qf.windows(2).all(|w| w[0] == w[1])
    }

    pub fn matches_image(&self, width: usize, height: usize) -> bool {
        grid_dims(width, height) == (self.blocks_w, self.blocks_h)
    }
}

/// Macroblock range `[bx0, bx1) x [by0, by1)` touched by a box.
pub fn touched_blocks(b: &BoundingBox, blocks_w: usize, blocks_h: usize) -> Option<(usize, usize, usize, usize)> {
    let mb = MACROBLOCK as f64;
    let bx0 = (crate::math::floor(b.x.max(0.0) / mb)) as usize;
    let by0 = (crate::math::floor(b.y.max(0.0) / mb)) as usize;
    let bx1 = (crate::math::ceil(b.right() / mb) as usize).min(blocks_w);
    let by1 = (crate::math::ceil(b.bottom() / mb) as usize).min(blocks_h);
    (bx0 < bx1 && by0 < by1).then_some((bx0, by0, bx1, by1))
}

/// Every macroblock a region touches takes the region's QF (largest wins
/// on overlap); all others take `background_qf`.
pub fn rasterize_qfmap(regions: &[(BoundingBox, u8)], background_qf: u8, image_w: usize, image_h: usize) -> Result<QfMap> {
    let mut map = QfMap::uniform(image_w, image_h, background_qf)?;
    let mut fg: Vec<Option<u8>> = alloc::vec![None; map.qf.len()];
    for (b, qf) in regions {
        b.validate()?;
        if !(1..=100).contains(qf) {
            return Err(Error::invalid(format!("quality factor {qf} not in 1..=100")));
        }
        if !b.fits_within(image_w, image_h) {
            return Err(Error::invalid(format!("region {:?} outside {image_w}x{image_h}", b)));
        }
        let Some((bx0, by0, bx1, by1)) = touched_blocks(b, map.blocks_w, map.blocks_h) else {
            continue;
        };
        for by in by0..by1 {
            for bx in bx0..bx1 {
                let cell = &mut fg[by * map.blocks_w + bx];
                *cell = Some(cell.map_or(*qf, |c| c.max(*qf)));
            }
        }
    }
    for (q, f) in map.qf.iter_mut().zip(fg) {
        if let Some(f) = f {
            *q = f;
        }
    }
    Ok(map)
}
