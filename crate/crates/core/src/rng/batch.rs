//! Batched Box–Muller.
//!
//! Straight-line copies of the `libm` logarithm and the `libm` sine/cosine
//! path for arguments in `[0, 2pi)`, written without branches so a block of
//! pairs vectorizes. Every operation matches the scalar routine in kind and
//! order, so results are bit-identical to [`super::box_muller`]. Lanes that
//! `libm` sends down a different path are flagged and recomputed with the
//! scalar code.
#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

pub(super) const BLOCK: usize = 64;

const LN2_HI: f64 = 6.93147180369123816490e-01;
const LN2_LO: f64 = 1.90821492927058770002e-10;
const LG1: f64 = 6.666666666666735130e-01;
const LG2: f64 = 3.999999999940941908e-01;
const LG3: f64 = 2.857142874366239149e-01;
const LG4: f64 = 2.222219843214978396e-01;
const LG5: f64 = 1.818357216161805012e-01;
const LG6: f64 = 1.531383769920937332e-01;
const LG7: f64 = 1.479819860511658591e-01;

const PIO2_1: f64 = 1.57079632673412561417e+00;
const PIO2_1T: f64 = 6.07710050650619224932e-11;

const S1: f64 = -1.66666666666666324348e-01;
const S2: f64 = 8.33333333332248946124e-03;
const S3: f64 = -1.98412698298579493134e-04;
const S4: f64 = 2.75573137070700676789e-06;
const S5: f64 = -2.50507602534068634195e-08;
const S6: f64 = 1.58969099521155010221e-10;

const C1: f64 = 4.16666666666666019037e-02;
const C2: f64 = -1.38888888888741095749e-03;
const C3: f64 = 2.48015872894767294178e-05;
const C4: f64 = -2.75573143513906633035e-07;
const C5: f64 = 2.08757232129817482790e-09;
const C6: f64 = -1.13596475577881948265e-11;

/// `log(x)` for normal, finite, positive `x`.
#[inline(always)]
fn log_normal(x: f64) -> f64 {
    let ui = x.to_bits();
    let hx = ((ui >> 32) as u32).wrapping_add(0x3ff0_0000 - 0x3fe6_a09e);
    let k = (hx >> 20) as i32 - 0x3ff;
    let hx = (hx & 0x000f_ffff) + 0x3fe6_a09e;
    let x = f64::from_bits(((hx as u64) << 32) | (ui & 0xffff_ffff));

    let f = x - 1.0;
    let hfsq = 0.5 * f * f;
    let s = f / (2.0 + f);
    let z = s * s;
    let w = z * z;
    let t1 = w * (LG2 + w * (LG4 + w * LG6));
    let t2 = z * (LG1 + w * (LG3 + w * (LG5 + w * LG7)));
    let r = t2 + t1;
    let dk = k as f64;
    s * (hfsq + r) + dk * LN2_LO - hfsq + f + dk * LN2_HI
}

#[inline(always)]
fn pick(c: bool, a: f64, b: f64) -> f64 {
    if c {
        a
    } else {
        b
    }
}

/// `(sin x, cos x, exact)` for `x` in `[0, 2pi)`; `exact` is false for lanes
/// `libm` evaluates differently.
#[inline(always)]
fn sincos_reduced(x: f64) -> (f64, f64, bool) {
    let ix = ((x.to_bits() >> 32) as u32) & 0x7fff_ffff;
    let direct = ix <= 0x3fe9_21fb;
    let special = ix < 0x3e46_a09e
        || (!direct
            && ((ix <= 0x400f_6a7a && (ix & 0xfffff) == 0x921fb)
                || ix == 0x4012_d97c
                || ix == 0x4019_21fb
                || ix > 0x401c_463b));

    let q1 = ix <= 0x4002_d97c;
    let q2 = ix <= 0x400f_6a7a;
    let q3 = ix <= 0x4015_fdbc;
    let hi = pick(q1, PIO2_1, pick(q2, 2.0 * PIO2_1, pick(q3, 3.0 * PIO2_1, 4.0 * PIO2_1)));
    let lo = pick(q1, PIO2_1T, pick(q2, 2.0 * PIO2_1T, pick(q3, 3.0 * PIO2_1T, 4.0 * PIO2_1T)));
    let zr = x - hi;
    let r0 = zr - lo;
    let r1 = (zr - r0) - lo;
    let y0 = pick(direct, x, r0);
    let y1 = pick(direct, 0.0, r1);

    let z = y0 * y0;
    let w = z * z;
    let r = S2 + z * (S3 + z * S4) + z * w * (S5 + z * S6);
    let v = z * y0;
    let sin_direct = y0 + v * (S1 + z * r);
    let sin_tail = y0 - ((z * (0.5 * y1 - v * r) - y1) - v * S1);
    let s = pick(direct, sin_direct, sin_tail);

    let rc = z * (C1 + z * (C2 + z * C3)) + w * w * (C4 + z * (C5 + z * C6));
    let hz = 0.5 * z;
    let wc = 1.0 - hz;
    let c = wc + (((1.0 - wc) - hz) + (z * rc - y0 * y1));

    // quadrant n & 3, with n = 0 on the direct path and 1..=4 otherwise
    let odd = !direct && (q1 || (!q2 && q3));
    let neg_s = !direct && !q1 && q3;
    let neg_c = !direct && q2;
    let sin = pick(odd, c, s);
    let cos = pick(odd, s, c);
    let sin = pick(neg_s, -sin, sin);
    let cos = pick(neg_c, -cos, cos);
    (sin, cos, !special)
}

#[inline(always)]
fn block_generic(u1: &[f64], u2: &[f64], out: &mut [f64], exact: &mut [bool]) {
    for i in 0..u1.len() {
        let r = (-2.0 * log_normal(u1[i])).sqrt();
        let (s, c, ok) = sincos_reduced(2.0 * PI * u2[i]);
        out[2 * i] = r * c;
        out[2 * i + 1] = r * s;
        exact[i] = ok;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,avx512vl")]
unsafe fn block_avx512(u1: &[f64], u2: &[f64], out: &mut [f64], exact: &mut [bool]) {
    block_generic(u1, u2, out, exact)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn block_avx2(u1: &[f64], u2: &[f64], out: &mut [f64], exact: &mut [bool]) {
    block_generic(u1, u2, out, exact)
}

/// Writes the Box–Muller pair of `(u1[i], u2[i])` to `out[2i..2i + 2]`.
pub(super) fn box_muller_block(u1: &[f64], u2: &[f64], out: &mut [f64]) {
    assert!(u1.len() <= BLOCK && u1.len() == u2.len() && out.len() == 2 * u1.len());
    let mut exact = [true; BLOCK];
    let exact = &mut exact[..u1.len()];
    run_block(u1, u2, out, exact);
    for i in 0..u1.len() {
        if !exact[i] {
            let (a, b) = super::box_muller(u1[i], u2[i]);
            out[2 * i] = a;
            out[2 * i + 1] = b;
        }
    }
}

fn run_block(u1: &[f64], u2: &[f64], out: &mut [f64], exact: &mut [bool]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f")
            && std::arch::is_x86_feature_detected!("avx512dq")
            && std::arch::is_x86_feature_detected!("avx512vl")
        {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { block_avx512(u1, u2, out, exact) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { block_avx2(u1, u2, out, exact) };
        }
    }
    block_generic(u1, u2, out, exact)
}
