use std::f64::consts::PI;

/// Neumaier-compensated sum. Mass totals over ~10⁵ nearly equal cell
/// values lose ~1e-12 relative with naive summation, which would swamp the
/// balance check.
pub fn accurate_sum(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Midpoint-rule integral of a compact fluid-cell field: `Σ field · h^d`.
pub fn integrate_field(field: &[f64], cell_volume: f64) -> f64 {
    accurate_sum(field) * cell_volume
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
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
    (nodes, weights)
}

/// Quadrature over the sphere `|y| = radius` in `Y` coordinates: a trapezoid
/// rule with `n_q` points on the circle (d = 2), or `n_q/2` Gauss–Legendre
/// latitudes times `n_q` azimuths (d = 3).
pub fn circle_quadrature(f: impl Fn([f64; 3]) -> f64, dim: usize, radius: f64, n_q: usize) -> f64 {
    assert!(n_q >= 16, "at least 16 quadrature points required");
    if radius == 0.0 {
        return 0.0;
    }
    let dphi = 2.0 * PI / n_q as f64;
    if dim == 2 {
        let s: f64 = (0..n_q)
            .map(|j| {
                let phi = j as f64 * dphi;
                f([radius * phi.cos(), radius * phi.sin(), 0.0])
            })
            .sum();
        return s * radius * dphi;
    }
    let (mu, w) = gauss_legendre(n_q / 2);
    let mut total = 0.0;
    for (m, wm) in mu.iter().zip(&w) {
        let s = (1.0 - m * m).sqrt();
        let ring: f64 = (0..n_q)
            .map(|j| {
                let phi = j as f64 * dphi;
                f([radius * s * phi.cos(), radius * s * phi.sin(), radius * m])
            })
            .sum();
        total += wm * ring * dphi;
    }
    total * radius * radius
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        assert_eq!(accurate_sum(&[1.0, 1e100, 1.0, -1e100]), 2.0);
        let v = vec![0.1; 100_000];
        assert!((accurate_sum(&v) - 10_000.0).abs() <= 1e-12);
        assert_eq!(accurate_sum(&[]), 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i6: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((i6 - 2.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn circumference_and_zero() {
        let c = circle_quadrature(|_| 1.0, 2, 0.25, 64);
        assert!((c - 2.0 * PI * 0.25).abs() < 1e-14);
        assert_eq!(circle_quadrature(|_| 0.0, 2, 0.25, 64), 0.0);
    }

    /// ∫_{|y|=Θ} (1 + cos 2πy₁) = 2πΘ(1 + J₀(2πΘ)); J₀(π/2) = 0.4720012157682347
    /// from an independent Bessel evaluation.
    #[test]
    fn bessel_oracle() {
        let theta = 0.25;
        let j0 = 0.472_001_215_768_234_7;
        let expected = 2.0 * PI * theta * (1.0 + j0);
        assert!((expected - 2.312_214_102_766_365).abs() < 1e-12);
        let got = circle_quadrature(|y| 1.0 + (2.0 * PI * y[0]).cos(), 2, theta, 64);
        assert!((got - expected).abs() < 1e-12, "{got}");
    }

    #[test]
    fn sphere_area_and_moment() {
        let r = 0.2;
        let a = circle_quadrature(|_| 1.0, 3, r, 32);
        assert!((a - 4.0 * PI * r * r).abs() < 1e-13);
        // ∫ y₃² dS = 4πr⁴/3
        let m = circle_quadrature(|y| y[2] * y[2], 3, r, 32);
        assert!((m - 4.0 * PI * r.powi(4) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn midpoint_rule() {
        let n = 50;
        let h = 1.0 / n as f64;
        let ones = vec![1.0; n * n];
        assert!((integrate_field(&ones, h * h) - 1.0).abs() < 1e-13);
        let x: Vec<f64> = (0..n * n).map(|i| ((i % n) as f64 + 0.5) * h).collect();
        assert!((integrate_field(&x, h * h) - 0.5).abs() <= h * h);
    }
}
