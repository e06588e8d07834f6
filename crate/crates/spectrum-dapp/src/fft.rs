//! Iterative radix-2 FFT.
//!
//! Twiddles come from `libm` rather than the platform math library so the
//! native and bytecode builds see bit-identical factors.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Sub};

use crate::SenseError;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Precomputed plan for one transform size.
#[derive(Debug, Clone)]
pub struct Fft {
    size: usize,
    log2: u32,
    twiddles: Vec<Complex>,
}

impl Fft {
    pub fn new(size: usize) -> Result<Self, SenseError> {
        if size == 0 || !size.is_power_of_two() {
            return Err(SenseError::NonPowerOfTwo(size));
        }
        let twiddles = (0..size / 2)
            .map(|k| {
                let angle = -2.0 * PI * k as f64 / size as f64;
                Complex::new(libm::cos(angle), libm::sin(angle))
            })
            .collect();
        Ok(Self {
            size,
            log2: size.trailing_zeros(),
            twiddles,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Unnormalized forward DFT, in place: `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn process(&self, data: &mut [Complex]) -> Result<(), SenseError> {
        if data.len() != self.size {
            return Err(SenseError::LengthMismatch {
                expected: self.size,
                got: data.len(),
            });
        }
        let n = self.size;
        if n == 1 {
            return Ok(());
        }
        let shift = usize::BITS - self.log2;
        for i in 0..n {
            let j = i.reverse_bits() >> shift;
            if j > i {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for block in data.chunks_exact_mut(len) {
                let (lo, hi) = block.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = self.twiddles[k * stride] * *b;
                    *b = *a - t;
                    *a = *a + t;
                }
            }
            len <<= 1;
        }
        Ok(())
    }
}

/// One-shot transform of `x`.
pub fn fft(x: &[Complex]) -> Result<Vec<Complex>, SenseError> {
    let plan = Fft::new(x.len())?;
    let mut out = x.to_vec();
    plan.process(&mut out)?;
    Ok(out)
}
