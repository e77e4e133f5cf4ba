//! Counter-based random streams.
//!
//! Every Gaussian draw is a pure function of `(master seed, tag, path, draw index)`
//! through Philox4x32-10, so an estimator gives the same bits no matter how paths
//! are distributed over worker threads. The tag separates independent uses of
//! the same seed (time step of a chain level, benchmark, oracle, ...).

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Maps two 32-bit words to a double in the open interval (0, 1).
#[inline]
fn open_unit(a: u32, b: u32) -> f64 {
    let bits = ((a as u64) << 21) | ((b as u64) >> 11);
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// A family of substreams sharing one master seed and tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    tag: u32,
}

impl RngStream {
    pub fn new(seed: u64, tag: u32) -> Self {
        Self { seed, tag }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    /// Same seed, different tag.
    pub fn with_tag(&self, tag: u32) -> Self {
        Self { seed: self.seed, tag }
    }

    /// The substream of one path (or one sample index).
    pub fn path(&self, path: u64) -> PathRng {
        PathRng {
            key: [self.seed as u32, (self.seed >> 32) as u32],
            tag: self.tag,
            path,
            block: 0,
            spare: None,
        }
    }
}

/// Sequential reader over one `(seed, tag, path)` substream.
#[derive(Debug, Clone)]
pub struct PathRng {
    key: [u32; 2],
    tag: u32,
    path: u64,
    block: u32,
    spare: Option<f64>,
}

impl PathRng {
    #[inline]
    fn block_uniforms(&self, block: u32) -> (f64, f64) {
        let out = philox4x32_10(
            [block, self.tag, self.path as u32, (self.path >> 32) as u32],
            self.key,
        );
        (open_unit(out[0], out[1]), open_unit(out[2], out[3]))
    }

    /// The `index`-th standard normal of this substream, independent of the cursor.
    pub fn normal_at(&self, index: u32) -> f64 {
        let (u0, u1) = self.block_uniforms(index / 2);
        inverse_normal_cdf(if index % 2 == 0 { u0 } else { u1 })
    }

    /// Next standard normal; draw `i` equals `normal_at(i)`.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (u0, u1) = self.block_uniforms(self.block);
        self.block += 1;
        self.spare = Some(inverse_normal_cdf(u1));
        inverse_normal_cdf(u0)
    }

    pub fn next_uniform(&mut self) -> f64 {
        // uniforms consume a whole block so normals stay aligned to even indices
        self.spare = None;
        let (u0, _) = self.block_uniforms(self.block);
        self.block += 1;
        u0
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.next_normal();
        }
    }
}

/// Inverse of the standard normal CDF (Wichura, AS241 / PPND16), relative
/// accuracy about 1e-16 over (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_700)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545_5 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_595)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_100_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn inverse_cdf_round_trips() {
        for &p in &[1e-300, 1e-12, 1e-5, 0.01, 0.2, 0.5, 0.7, 0.975, 1.0 - 1e-9] {
            let x = inverse_normal_cdf(p);
            let back = normal_cdf(x);
            // d(ln p)/dx = |x| in the tail, so the round trip amplifies by about x²
            let tol = 1e-13 * (1.0 + x * x);
            assert!(((back - p) / p).abs() < tol, "p={p} x={x} back={back}");
        }
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
    }

    #[test]
    fn cursor_matches_indexed_draws() {
        let s = RngStream::new(7, 3);
        let mut cur = s.path(11);
        for i in 0..9 {
            assert_eq!(cur.next_normal().to_bits(), s.path(11).normal_at(i).to_bits());
        }
    }

    #[test]
    fn substreams_differ() {
        let s = RngStream::new(1, 0);
        assert_ne!(s.path(0).normal_at(0), s.path(1).normal_at(0));
        assert_ne!(s.path(0).normal_at(0), s.with_tag(1).path(0).normal_at(0));
        assert_ne!(
            RngStream::new(2, 0).path(0).normal_at(0),
            s.path(0).normal_at(0)
        );
    }

    #[test]
    fn normal_moments() {
        let mut r = RngStream::new(42, 0).path(0);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.next_normal();
            m1 += z;
            m2 += z * z;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 4.0 / (n as f64).sqrt());
        assert!((m2 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
