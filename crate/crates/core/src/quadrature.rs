//! Adaptive Gauss–Kronrod (7/15) quadrature.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 50;

/// Kronrod estimate and `|Kronrod - Gauss|` on `[a, b]`.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// `int_a^b f` to absolute tolerance `tol` by recursive bisection.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if b < a {
        return -integrate(f, b, a, tol);
    }
    let (v, e) = gk15(&f, a, b);
    refine(&f, a, b, v, e, tol, 0)
}

fn refine(f: &impl Fn(f64) -> f64, a: f64, b: f64, v: f64, e: f64, tol: f64, depth: u32) -> f64 {
    if e <= tol || depth >= MAX_DEPTH || (b - a) <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
        return v;
    }
    let m = 0.5 * (a + b);
    let (vl, el) = gk15(f, a, m);
    let (vr, er) = gk15(f, m, b);
    refine(f, a, m, vl, el, 0.5 * tol, depth + 1) + refine(f, m, b, vr, er, 0.5 * tol, depth + 1)
}
