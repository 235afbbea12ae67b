//! Real spherical harmonics up to degree 2 and view-dependent color.
//!
//! Basis order is `(l, m)` = (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1),
//! (2,0), (2,1), (2,2), using the positive-constant Cartesian closed forms
//! common in graphics (no Condon–Shortley phase).

use crate::scalar::{sigmoid, Real};

/// Basis functions per color channel.
pub const SH_BASIS: usize = 9;
/// Coefficients per voxel: 9 basis functions × 3 channels.
pub const SH_COEFFS: usize = 3 * SH_BASIS;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: f64 = 1.092_548_430_592_079_2;
const SH_C2_0: f64 = 0.315_391_565_252_520_05;
const SH_C2_2: f64 = 0.546_274_215_296_039_6;

/// Normalizes `d`; a zero vector is returned unchanged.
#[inline]
pub fn normalize<T: Real>(d: [T; 3]) -> [T; 3] {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n > T::zero() {
        d.map(|x| x / n)
    } else {
        d
    }
}

/// Real SH basis at direction `d` (normalized first if needed).
pub fn sh_basis<T: Real>(d: [T; 3]) -> [T; SH_BASIS] {
    let [x, y, z] = normalize(d);
    let c1 = T::lit(SH_C1);
    let c2 = T::lit(SH_C2);
    [
        T::lit(SH_C0),
        c1 * y,
        c1 * z,
        c1 * x,
        c2 * x * y,
        c2 * y * z,
        T::lit(SH_C2_0) * (T::lit(3.0) * z * z - T::one()),
        c2 * x * z,
        T::lit(SH_C2_2) * (x * x - y * y),
    ]
}

/// Pre-activation color: per channel, the SH expansion before the sigmoid.
#[inline]
pub fn sh_logits<T: Real>(sh: &[T; SH_COEFFS], basis: &[T; SH_BASIS]) -> [T; 3] {
    std::array::from_fn(|c| {
        let coeffs = &sh[c * SH_BASIS..(c + 1) * SH_BASIS];
        let mut acc = T::zero();
        for (k, b) in coeffs.iter().zip(basis.iter()) {
            acc += *k * *b;
        }
        acc
    })
}

#[inline]
pub fn eval_color_with_basis<T: Real>(sh: &[T; SH_COEFFS], basis: &[T; SH_BASIS]) -> [T; 3] {
    sh_logits(sh, basis).map(sigmoid)
}

/// Color seen from direction `d`: `sigmoid(Σ k·Y(d))` per channel.
pub fn eval_color<T: Real>(sh: &[T; SH_COEFFS], d: [T; 3]) -> [T; 3] {
    eval_color_with_basis(sh, &sh_basis(d))
}

/// Vector-Jacobian product of [`eval_color_with_basis`]: given `∂L/∂rgb`,
/// returns `∂L/∂sh`.
pub fn eval_color_vjp<T: Real>(sh: &[T; SH_COEFFS], basis: &[T; SH_BASIS], upstream: [T; 3]) -> [T; SH_COEFFS] {
    let rgb = eval_color_with_basis(sh, basis);
    color_vjp_from_rgb(rgb, basis, upstream)
}

#[inline]
pub(crate) fn color_vjp_from_rgb<T: Real>(rgb: [T; 3], basis: &[T; SH_BASIS], upstream: [T; 3]) -> [T; SH_COEFFS] {
    let mut out = [T::zero(); SH_COEFFS];
    for c in 0..3 {
        let dz = upstream[c] * rgb[c] * (T::one() - rgb[c]);
        for k in 0..SH_BASIS {
            out[c * SH_BASIS + k] = dz * basis[k];
        }
    }
    out
}

/// DC coefficients that make a view-independent color `rgb` (each in (0,1)).
pub fn sh_from_rgb<T: Real>(rgb: [f64; 3]) -> [T; SH_COEFFS] {
    let mut sh = [T::zero(); SH_COEFFS];
    for c in 0..3 {
        let p = rgb[c].clamp(1e-6, 1.0 - 1e-6);
        sh[c * SH_BASIS] = T::lit((p / (1.0 - p)).ln() / SH_C0);
    }
    sh
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dc_component_is_constant() {
        for d in [[1.0, 0.0, 0.0], [0.3, -0.4, 0.866], [0.0, 0.0, -1.0]] {
            assert!((sh_basis::<f64>(d)[0] - 0.2820948).abs() < 1e-7);
        }
    }

    #[test]
    fn pole_values() {
        let b = sh_basis::<f64>([0.0, 0.0, 1.0]);
        assert!((b[2] - 0.4886025).abs() < 1e-7);
        assert_eq!(b[1], 0.0);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn non_unit_direction_is_normalized() {
        let a = sh_basis::<f64>([0.0, 0.0, 5.0]);
        let b = sh_basis::<f64>([0.0, 0.0, 1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        assert_eq!(eval_color::<f64>(&[0.0; SH_COEFFS], [0.0, 1.0, 0.0]), [0.5; 3]);
    }

    #[test]
    fn dc_for_ln3_gives_three_quarters() {
        let mut sh = [0.0f64; SH_COEFFS];
        for c in 0..3 {
            sh[c * SH_BASIS] = 3f64.ln() / SH_C0;
        }
        for v in eval_color(&sh, [0.2, 0.5, -0.1]) {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn large_dc_saturates_monotonically() {
        let mut last = 0.5;
        for k in 1..40 {
            let mut sh = [0.0f64; SH_COEFFS];
            sh[0] = k as f64;
            let r = eval_color(&sh, [1.0, 0.0, 0.0])[0];
            assert!(r > last);
            last = r;
        }
        assert!(last > 0.9999);
    }

    #[test]
    fn sh_from_rgb_roundtrips() {
        let sh = sh_from_rgb::<f64>([0.8, 0.3, 0.55]);
        let c = eval_color(&sh, [0.1, 0.2, 0.3]);
        for (a, b) in c.iter().zip([0.8, 0.3, 0.55]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn unit() -> impl Strategy<Value = [f64; 3]> {
        proptest::array::uniform3(-1.0f64..1.0)
            .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(normalize)
    }

    fn rotate(axis: [f64; 3], angle: f64, v: [f64; 3]) -> [f64; 3] {
        // Rodrigues
        let (s, c) = angle.sin_cos();
        let k = normalize(axis);
        let dot = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
        let cross = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
        std::array::from_fn(|i| v[i] * c + cross[i] * s + k[i] * dot * (1.0 - c))
    }

    proptest! {
        #[test]
        fn parity_under_inversion(d in unit()) {
            let a = sh_basis(d);
            let b = sh_basis(d.map(|x| -x));
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
            for i in 1..4 { prop_assert!((a[i] + b[i]).abs() < 1e-12); }
            for i in 4..9 { prop_assert!((a[i] - b[i]).abs() < 1e-12); }
        }

        #[test]
        fn dc_only_color_is_rotation_invariant(
            d in unit(), axis in unit(), angle in 0.0f64..std::f64::consts::TAU,
            dc in proptest::array::uniform3(-4.0f64..4.0),
        ) {
            let mut sh = [0.0; SH_COEFFS];
            for c in 0..3 { sh[c * SH_BASIS] = dc[c]; }
            let a = eval_color(&sh, d);
            let b = eval_color(&sh, rotate(axis, angle, d));
            for c in 0..3 { prop_assert!((a[c] - b[c]).abs() < 1e-12); }
        }

        #[test]
        fn vjp_matches_central_differences(
            d in unit(),
            sh in proptest::collection::vec(-2.0f64..2.0, SH_COEFFS),
            up in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            let sh: [f64; SH_COEFFS] = sh.try_into().unwrap();
            let basis = sh_basis(d);
            let g = eval_color_vjp(&sh, &basis, up);
            let f = |s: &[f64; SH_COEFFS]| {
                let c = eval_color_with_basis(s, &basis);
                c[0] * up[0] + c[1] * up[1] + c[2] * up[2]
            };
            let h = 1e-4;
            for i in 0..SH_COEFFS {
                let mut p = sh; p[i] += h;
                let mut m = sh; m[i] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                let scale = fd.abs().max(g[i].abs());
                prop_assert!(scale < 1e-9 || (fd - g[i]).abs() / scale < 1e-3, "coeff {}: fd {} analytic {}", i, fd, g[i]);
            }
        }
    }
}
