//! Orthonormal 8x8 DCT-II and its inverse, separable, double precision.

use crate::math;

fn basis() -> [[f64; 8]; 8] {
    // basis[u][x] = C(u)/2 * cos((2x+1) u pi / 16)
    let mut b = [[0.0; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let cu = if u == 0 { core::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = cu / 2.0 * math::cos((2 * x + 1) as f64 * u as f64 * core::f64::consts::PI / 16.0);
        }
    }
    b
}

pub struct Dct {
    basis: [[f64; 8]; 8],
}

impl Default for Dct {
    fn default() -> Self {
        Dct { basis: basis() }
    }
}

impl Dct {
    /// Spatial samples (already level-shifted) to coefficients, natural order.
    pub fn forward(&self, block: &[f64; 64]) -> [f64; 64] {
        let mut tmp = [0.0; 64];
        for y in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for x in 0..8 {
                    s += self.basis[u][x] * block[y * 8 + x];
                }
                tmp[y * 8 + u] = s;
            }
        }
        let mut out = [0.0; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    s += self.basis[v][y] * tmp[y * 8 + u];
                }
                out[v * 8 + u] = s;
            }
        }
        out
    }

    pub fn inverse(&self, coefs: &[f64; 64]) -> [f64; 64] {
        let mut tmp = [0.0; 64];
        for v in 0..8 {
            for x in 0..8 {
                let mut s = 0.0;
                for u in 0..8 {
                    s += self.basis[u][x] * coefs[v * 8 + u];
                }
                tmp[v * 8 + x] = s;
            }
        }
        let mut out = [0.0; 64];
        for x in 0..8 {
            for y in 0..8 {
                let mut s = 0.0;
                for v in 0..8 {
                    s += self.basis[v][y] * tmp[v * 8 + x];
                }
                out[y * 8 + x] = s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_dc() {
        let d = Dct::default();
        let mut b = [0.0; 64];
        for (i, v) in b.iter_mut().enumerate() {
            *v = ((i * 37) % 255) as f64 - 128.0;
        }
        let back = d.inverse(&d.forward(&b));
        for i in 0..64 {
            assert!((back[i] - b[i]).abs() < 1e-9);
        }
        let flat = [10.0; 64];
        let c = d.forward(&flat);
        assert!((c[0] - 80.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn matches_direct_formula() {
        let d = Dct::default();
        let mut b = [0.0; 64];
        for (i, v) in b.iter_mut().enumerate() {
            *v = ((i * 91 + 7) % 200) as f64 - 100.0;
        }
        let c = d.forward(&b);
        let pi = std::f64::consts::PI;
        for v in 0..8 {
            for u in 0..8 {
                let cu = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                let cv = if v == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += b[y * 8 + x]
                            * ((2 * x + 1) as f64 * u as f64 * pi / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * pi / 16.0).cos();
                    }
                }
                let expect = 0.25 * cu * cv * s;
                assert!((c[v * 8 + u] - expect).abs() < 1e-9);
            }
        }
    }
}
