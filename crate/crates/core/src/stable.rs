//! Cancellation-free exponential helpers.

/// `e^x - 1` with full relative precision near zero.
pub fn expm1_stable(x: f64) -> f64 {
    x.exp_m1()
}

/// `(e^x - 1) / x`, continuous at zero with value 1.
pub fn exprel_stable(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() < 1e-5 {
        // second-order series; the truncation error is below one ulp here
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

/// `int_a^b exp(f(y)) dy` for affine `f` with `f(a) = fa`, `f(b) = fb`.
///
/// The larger endpoint exponent is factored out so the remaining factor is
/// bounded by the interval length, and equal slopes need no special case.
pub fn exp_affine_integral(fa: f64, fb: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let top = fa.max(fb);
    let drop = (fa - fb).abs();
    top.exp() * len * exprel_stable(-drop)
}
