//! Special functions and summation helpers.

/// Bernoulli numbers B_2, B_4, ..., B_16.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Hurwitz zeta function `sum_{k>=0} (k + a)^(-s)` for `s > 1`, `a > 0`.
///
/// Evaluated by Euler-Maclaurin summation after shifting `a` past 16, which
/// gives close to full double precision.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(s > 1.0 && a > 0.0, "hurwitz_zeta needs s > 1, a > 0");
    const SHIFT: f64 = 16.0;
    let mut head = 0.0;
    let mut x = a;
    while x < SHIFT {
        head += x.powf(-s);
        x += 1.0;
    }
    // Euler-Maclaurin tail starting at x.
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    let mut rising = s; // s (s+1) ... (s+2j-2)
    let mut fact = 2.0; // (2j)!
    let mut xpow = x.powf(-s - 1.0);
    for (j, b) in BERNOULLI.iter().enumerate() {
        let term = b / fact * rising * xpow;
        tail += term;
        if term.abs() < 1e-18 * tail.abs() {
            break;
        }
        let j = j as f64 + 1.0;
        rising *= (s + 2.0 * j - 1.0) * (s + 2.0 * j);
        fact *= (2.0 * j + 1.0) * (2.0 * j + 2.0);
        xpow /= x * x;
    }
    head + tail
}

/// Riemann zeta function for `s > 1`.
pub fn zeta(s: f64) -> f64 {
    hurwitz_zeta(s, 1.0)
}

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(a < Z < b)` for a standard normal `Z`, accurate in both tails.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a / r) - libm::erfc(b / r))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / r) - libm::erfc(-a / r))
    } else {
        1.0 - 0.5 * libm::erfc(b / r) - 0.5 * libm::erfc(-a / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0) - PI * PI / 6.0).abs() < 1e-14);
        assert!((zeta(4.0) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((zeta(1.5) - 2.612_375_348_685_488).abs() < 1e-13);
    }

    #[test]
    fn hurwitz_matches_direct_sum_with_integral_remainder() {
        for &(s, a) in &[(2.0, 3.0), (3.5, 0.5), (1.2, 7.0), (4.0, 1000.0), (2.5, 1.0)] {
            let n = 200_000;
            let mut direct: f64 = (0..n).map(|k| (k as f64 + a).powf(-s)).sum();
            let x = n as f64 + a;
            direct += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
            let h = hurwitz_zeta(s, a);
            assert!(((h - direct) / h).abs() < 1e-10, "s={s} a={a}: {h} vs {direct}");
        }
    }

    #[test]
    fn hurwitz_shift_identity() {
        let (s, a) = (2.7, 0.3);
        let lhs = hurwitz_zeta(s, a) - hurwitz_zeta(s, a + 1.0);
        assert!((lhs - a.powf(-s)).abs() < 1e-12 * a.powf(-s));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = KahanSum::new();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 1000.0);
    }

    #[test]
    fn normal_interval_tails() {
        assert!((normal_interval(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-12);
        let far = normal_interval(10.0, 11.0);
        assert!(far > 0.0 && far < 1e-22);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
    }
}
