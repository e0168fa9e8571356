//! Gauss–Legendre quadrature.
//!
//! The cross-section integrals behind the geometric profiles are all smooth
//! (polynomial for the parametric family), so a fixed Gauss–Legendre rule in
//! the section coordinate makes the analytic test families exact.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Newton iteration on the Legendre polynomial from the Chebyshev initial
/// guess; accurate to machine precision for the modest `n` used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_with_deriv(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

/// Adaptive Gauss–Kronrod-free integrator: bisect a 16-point rule until the
/// two-panel estimate stabilizes. Used for the closed-form conjugate-map
/// profiles whose integrands lack elementary antiderivatives.
pub fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        rule.0
            .iter()
            .zip(&rule.1)
            .map(|(x, w)| w * half * f(mid + half * x))
            .sum()
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
        rule: &(Vec<f64>, Vec<f64>),
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = panel(f, a, mid, rule);
        let right = panel(f, mid, b, rule);
        if depth == 0 || (left + right - whole).abs() <= tol {
            return left + right;
        }
        recurse(f, a, mid, left, tol / 2.0, depth - 1, rule)
            + recurse(f, mid, b, right, tol / 2.0, depth - 1, rule)
    }
    let rule = gauss_legendre(16);
    let whole = panel(f, a, b, &rule);
    recurse(f, a, b, whole, tol, 24, &rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [2, 5, 16, 33] {
            let (_, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn exact_for_polynomials_of_degree_2n_minus_1() {
        let (x, w) = gauss_legendre(4);
        // ∫_{-1}^{1} t^6 dt = 2/7, degree 6 < 2·4 - 1.
        let got: f64 = x.iter().zip(&w).map(|(t, wi)| wi * t.powi(6)).sum();
        assert_relative_eq!(got, 2.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn mapped_rule_integrates_exp() {
        let (x, w) = gauss_legendre_on(20, 0.0, 1.0);
        let got: f64 = x.iter().zip(&w).map(|(t, wi)| wi * t.exp()).sum();
        assert_relative_eq!(got, std::f64::consts::E - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_handles_mild_singular_behaviour() {
        // ∫_a^1 x^{-1/4} dx = (4/3)(1 - a^{3/4})
        let a: f64 = 1e-12;
        let got = integrate_adaptive(&|x: f64| x.powf(-0.25), a, 1.0, 1e-12);
        let exact = 4.0 / 3.0 * (1.0 - a.powf(0.75));
        assert_relative_eq!(got, exact, max_relative = 1e-7);
    }
}
