//! Adaptive Gauss-Kronrod quadrature, used as an independent route to `I H`.

use crate::inner::PiecewiseH;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
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

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (val, err) = whole;
        if err <= tol || depth == 0 || b - a < 1e-14 * (1.0 + a.abs()) {
            return val;
        }
        let m = 0.5 * (a + b);
        let left = gk15(f, a, m);
        let right = gk15(f, m, b);
        rec(f, a, m, 0.5 * tol, left, depth - 1) + rec(f, m, b, 0.5 * tol, right, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    rec(f, a, b, tol, gk15(f, a, b), 40)
}

/// `int_{-inf}^0 H(x + y) mu e^{mu y} dy` with `t = e^{mu y}`, split at every breakpoint of `H`.
pub fn integral_ih_quadrature(h: &PiecewiseH, x: f64, tol: f64) -> f64 {
    let mu = h.mu;
    let mut cuts: Vec<f64> = vec![0.0];
    let mut knots = vec![h.x_low];
    knots.extend(h.pieces.iter().map(|p| p.system.hi));
    knots.push(h.x_high);
    for k in knots {
        if k < x {
            cuts.push((mu * (k - x)).exp());
        }
    }
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let g = |t: f64| {
        if t <= 0.0 {
            -h.c_u
        } else {
            h.value(x + t.ln() / mu)
        }
    };
    let n = (cuts.len() - 1) as f64;
    cuts.windows(2).map(|w| integrate(&g, w[0], w[1], tol / n)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(&|x: f64| x.powi(5) - 2.0 * x, -1.0, 2.0, 1e-13);
        let exact = (64.0 - 1.0) / 6.0 - (4.0 - 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn smooth_transcendental() {
        let v = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kinked_integrand() {
        let v = integrate(&|x: f64| x.abs().sqrt(), -1.0, 1.0, 1e-10);
        assert!((v - 4.0 / 3.0).abs() < 1e-8);
    }
}
