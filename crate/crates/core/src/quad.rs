//! Adaptive Gauss–Kronrod quadrature and scalar root finding.

use crate::error::{Error, Result};

// 15-point Kronrod nodes (non-negative half) and weights, with the embedded
// 7-point Gauss weights on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One G7/K15 panel: (Kronrod estimate, |Kronrod − Gauss|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by global adaptive
/// bisection of the panel with the largest error estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_PANELS: usize = 4000;
    if a == b {
        return Ok(0.0);
    }
    let mut panels = vec![(a, b, gk15(&f, a, b))];
    loop {
        let (total, err) = panels
            .iter()
            .fold((0.0, 0.0), |(s, e), p| (s + p.2 .0, e + p.2 .1));
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        if err <= tol {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::Numerical(format!(
                "quadrature did not converge: error estimate {err:e} > {tol:e}"
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .unwrap();
        let (lo, hi, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine precision; accept what we have
            let rest: f64 = panels.iter().map(|p| p.2 .0).sum();
            return Ok(rest + gk15(&f, lo, hi).0);
        }
        panels.push((lo, mid, gk15(&f, lo, mid)));
        panels.push((mid, hi, gk15(&f, mid, hi)));
    }
}

/// Brent's method for a root of `f` in `[a, b]`; `f(a)` and `f(b)` must differ in sign.
pub fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Numerical(format!("root not bracketed in [{a}, {b}]")));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::Numerical("root finder did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫₀¹ x^{-1/2} dx = 2
        let v = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-9).unwrap();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn oscillatory() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!(v.abs() < 1e-11);
    }

    #[test]
    fn brent_finds_cube_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }
}
