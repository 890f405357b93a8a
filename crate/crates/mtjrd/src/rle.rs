//! COCO run-length encoded masks: column-major runs starting with
//! background, either as a count list or the compact ASCII string.

use mtjrd_core::Mask;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Counts {
    Compressed(String),
    Raw(Vec<u64>),
}

/// `{"size": [height, width], "counts": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [usize; 2],
    pub counts: Counts,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::validation("rle", msg)
}

pub fn mask_runs(mask: &Mask) -> Vec<u64> {
    let (w, h) = (mask.width(), mask.height());
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for x in 0..w {
        for y in 0..h {
            let b = mask.get(x, y);
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
    }
    runs.push(len);
    runs
}

pub fn encode_counts(runs: &[u64]) -> String {
    let mut s = String::new();
    for (i, &r) in runs.iter().enumerate() {
        let mut x = r as i64;
        if i > 2 {
            x -= runs[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            s.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    s
}

pub fn decode_counts(s: &str) -> Result<Vec<u64>> {
    let bytes = s.as_bytes();
    let mut runs: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x = 0i64;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(invalid("truncated counts string"));
            };
            if !(48..48 + 64).contains(&b) || k > 12 {
                return Err(invalid(format!("bad counts character at {p}")));
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        let m = runs.len();
        if m > 2 {
            x += runs[m - 2];
        }
        if x < 0 {
            return Err(invalid("negative run length"));
        }
        runs.push(x);
    }
    Ok(runs.into_iter().map(|v| v as u64).collect())
}

impl Rle {
    pub fn from_mask(mask: &Mask) -> Self {
        Rle {
            size: [mask.height(), mask.width()],
            counts: Counts::Compressed(encode_counts(&mask_runs(mask))),
        }
    }

    pub fn to_mask(&self) -> Result<Mask> {
        let [h, w] = self.size;
        let runs = match &self.counts {
            Counts::Raw(r) => r.clone(),
            Counts::Compressed(s) => decode_counts(s)?,
        };
        let total: u64 = runs.iter().sum();
        if total != (w * h) as u64 {
            return Err(invalid(format!("runs cover {total} pixels, mask has {}", w * h)));
        }
        let mut mask = Mask::empty(w, h);
        let mut idx = 0usize;
        for (i, &r) in runs.iter().enumerate() {
            if i % 2 == 1 {
                for j in idx..idx + r as usize {
                    mask.set(j / h, j % h, true);
                }
            }
            idx += r as usize;
        }
        Ok(mask)
    }
}
