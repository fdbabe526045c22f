//! Iterative radix-2 Cooley-Tukey FFT.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// In-place forward transform `X[k] = Σ x[n] e^{−2πikn/N}`. `buf.len()` must
/// be a power of two.
pub fn fft_in_place(buf: &mut [Complex]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (ang * k as f64).sin_cos();
                let a = buf[start + k];
                let b = buf[start + k + half];
                let t = Complex::new(b.re * c - b.im * s, b.re * s + b.im * c);
                buf[start + k] = Complex::new(a.re + t.re, a.im + t.im);
                buf[start + k + half] = Complex::new(a.re - t.re, a.im - t.im);
            }
        }
        len <<= 1;
    }
}

/// Zero-pads `signal` to `n` and transforms it.
pub fn fft_real(signal: &[f64], n: usize) -> Vec<Complex> {
    let mut buf = vec![Complex::default(); n];
    for (b, &x) in buf.iter_mut().zip(signal) {
        b.re = x;
    }
    fft_in_place(&mut buf);
    buf
}

/// `|X[k]|` for `k = 0..=n/2`.
pub fn magnitude_spectrum(signal: &[f64], n: usize) -> Vec<f64> {
    fft_real(signal, n)[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_dft(x: &[f64]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::default();
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    acc.re += v * ang.cos();
                    acc.im += v * ang.sin();
                }
                acc
            })
            .collect()
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        for c in fft_real(&x, 64) {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let fast = fft_real(&x, 32);
        for (a, b) in fast.iter().zip(naive_dft(&x)) {
            assert!((a.re - b.re).abs() < 1e-10 && (a.im - b.im).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn parseval(x in proptest::collection::vec(-1.0f64..1.0, 1..=256), log_n in 8u32..10) {
            let n = 1usize << log_n;
            let spec = fft_real(&x, n);
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!((time - freq).abs() <= 1e-9);
        }
    }
}
