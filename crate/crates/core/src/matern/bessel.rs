//! Modified Bessel function of the second kind, order one.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Crossover between the power series and Steed's continued fraction.
pub const SERIES_CROSSOVER: f64 = 2.0;

/// `K_1(x)` for `x > 0`: power series for `x <= 2`, Steed's continued
/// fraction (Temme's CF2 form) above.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "K1 is singular at x <= 0");
    if x <= SERIES_CROSSOVER {
        k1_series(x)
    } else {
        k0_k1_continued_fraction(x).1
    }
}

/// `K_0(x)` for `x > 0`.
pub fn bessel_k0(x: f64) -> f64 {
    assert!(x > 0.0, "K0 is singular at x <= 0");
    if x <= SERIES_CROSSOVER {
        k0_series(x)
    } else {
        k0_k1_continued_fraction(x).0
    }
}

/// `K_1(x) = 1/x + ln(x/2) I_1(x) - (x/4) Σ (ψ(k+1) + ψ(k+2)) (x²/4)^k / (k! (k+1)!)`
fn k1_series(x: f64) -> f64 {
    let y = 0.25 * x * x;
    let ln_half = (0.5 * x).ln();
    // term_k = (x²/4)^k / (k! (k+1)!)
    let mut term = 1.0;
    let mut psi_k1 = -EULER_GAMMA; // ψ(k+1)
    let mut psi_k2 = 1.0 - EULER_GAMMA; // ψ(k+2)
    let mut i1_sum = 0.0;
    let mut psi_sum = 0.0;
    for k in 0..60 {
        i1_sum += term;
        psi_sum += (psi_k1 + psi_k2) * term;
        let kf = k as f64;
        term *= y / ((kf + 1.0) * (kf + 2.0));
        psi_k1 += 1.0 / (kf + 1.0);
        psi_k2 += 1.0 / (kf + 2.0);
        if term < 1e-18 * i1_sum {
            break;
        }
    }
    let i1 = 0.5 * x * i1_sum;
    1.0 / x + ln_half * i1 - 0.25 * x * psi_sum
}

/// `K_0(x) = -(ln(x/2) + γ) I_0(x) + Σ H_k (x²/4)^k / (k!)²`
fn k0_series(x: f64) -> f64 {
    let y = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut i0 = 0.0;
    let mut tail = 0.0;
    for k in 0..60 {
        i0 += term;
        tail += harmonic * term;
        let kf = (k + 1) as f64;
        term *= y / (kf * kf);
        harmonic += 1.0 / kf;
        if term < 1e-18 * i0 {
            break;
        }
    }
    -((0.5 * x).ln() + EULER_GAMMA) * i0 + tail
}

/// Steed's algorithm for `(K_0, K_1)` at `x >= 2`.
fn k0_k1_continued_fraction(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    h *= a1;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: `K_ν(x) = ∫_0^∞ exp(-x cosh t) cosh(ν t) dt`
    /// by the trapezoid rule, which converges geometrically here.
    fn k_quadrature(nu: f64, x: f64) -> f64 {
        let h = 1e-3;
        let mut sum = 0.5 * (-x).exp();
        let mut t: f64 = h;
        loop {
            let v = (-x * t.cosh()).exp() * (nu * t).cosh();
            sum += v;
            if v < 1e-300 || t > 40.0 {
                break;
            }
            t += h;
        }
        sum * h
    }

    #[test]
    fn k1_agrees_with_integral_representation() {
        for &x in &[0.01, 0.1, 0.5, 1.0, 1.9, 2.0, 2.0001, 2.5, 2.828_427_124_746_19, 4.0, 8.0, 20.0, 50.0] {
            let got = bessel_k1(x);
            let want = k_quadrature(1.0, x);
            assert!(((got - want) / want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn k0_agrees_with_integral_representation() {
        for &x in &[0.05, 1.0, 2.0, 3.0, 10.0] {
            let got = bessel_k0(x);
            let want = k_quadrature(0.0, x);
            assert!(((got - want) / want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn crossover_is_continuous() {
        let lo = k1_series(SERIES_CROSSOVER);
        let hi = k0_k1_continued_fraction(SERIES_CROSSOVER).1;
        assert!(((lo - hi) / lo).abs() < 1e-13);
    }
}
