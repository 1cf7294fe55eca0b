//! Small dense complex matrices, row-major. Sized for bond dimensions up to a
//! few dozen; everything here is allocation-free once buffers exist.

use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [C64],
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn view(&self) -> MatRef<'_> {
        MatRef { rows: self.rows, cols: self.cols, data: &self.data }
    }

    /// Reshape in place, reusing the allocation.
    pub fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, ZERO);
    }

    pub fn set_identity(&mut self, n: usize) {
        self.resize(n, n);
        self.data.fill(ZERO);
        for i in 0..n {
            self.data[i * n + i] = ONE;
        }
    }

    pub fn copy_from(&mut self, other: MatRef<'_>) {
        self.rows = other.rows;
        self.cols = other.cols;
        self.data.clear();
        self.data.extend_from_slice(other.data);
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }
}

impl MatRef<'_> {
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn to_owned(&self) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.to_vec() }
    }
}

/// `out = a * b`.
pub fn matmul_into(a: MatRef<'_>, b: MatRef<'_>, out: &mut Mat) {
    debug_assert_eq!(a.cols, b.rows);
    let n = b.cols;
    out.rows = a.rows;
    out.cols = n;
    out.data.clear();
    out.data.resize(a.rows * n, ZERO);
    if n == 1 {
        // Matrix-vector: one dot product per row.
        for (o, arow) in out.data.iter_mut().zip(a.data.chunks_exact(a.cols)) {
            *o = arow.iter().zip(b.data).fold(ZERO, |acc, (&x, &y)| acc + x * y);
        }
        return;
    }
    for (row, arow) in out.data.chunks_exact_mut(n).zip(a.data.chunks_exact(a.cols)) {
        for (&aik, brow) in arow.iter().zip(b.data.chunks_exact(n)) {
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

pub fn matmul(a: MatRef<'_>, b: MatRef<'_>) -> Mat {
    let mut out = Mat::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out);
    out
}

/// `tr(a * b)` without forming the product.
pub fn trace_of_product(a: MatRef<'_>, b: MatRef<'_>) -> C64 {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(a.rows, b.cols);
    let mut acc = ZERO;
    for i in 0..a.rows {
        for k in 0..a.cols {
            acc += a.data[i * a.cols + k] * b.data[k * b.cols + i];
        }
    }
    acc
}

pub fn trace(a: MatRef<'_>) -> C64 {
    debug_assert_eq!(a.rows, a.cols);
    (0..a.rows).map(|i| a.data[i * a.cols + i]).sum()
}

/// Complex value split into log-magnitude and phase. Exact zero is
/// `log_abs == -inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogValue {
    pub log_abs: f64,
    pub phase: f64,
}

impl LogValue {
    pub const ONE: LogValue = LogValue { log_abs: 0.0, phase: 0.0 };

    pub fn from_complex(z: C64) -> Self {
        if z == ZERO {
            LogValue { log_abs: f64::NEG_INFINITY, phase: 0.0 }
        } else {
            LogValue { log_abs: z.norm().ln(), phase: z.arg() }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.log_abs == f64::NEG_INFINITY
    }

    pub fn mul(self, other: LogValue) -> LogValue {
        if self.is_zero() || other.is_zero() {
            return LogValue { log_abs: f64::NEG_INFINITY, phase: 0.0 };
        }
        LogValue { log_abs: self.log_abs + other.log_abs, phase: wrap_phase(self.phase + other.phase) }
    }

    pub fn to_complex(self) -> C64 {
        if self.is_zero() {
            ZERO
        } else {
            C64::from_polar(self.log_abs.exp(), self.phase)
        }
    }
}

pub fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::PI;
    let mut q = p % (2.0 * PI);
    if q > PI {
        q -= 2.0 * PI;
    } else if q <= -PI {
        q += 2.0 * PI;
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_of_product_matches_explicit_product() {
        let a = Mat { rows: 2, cols: 3, data: (0..6).map(|k| C64::new(k as f64, 1.0 - k as f64)).collect() };
        let b = Mat { rows: 3, cols: 2, data: (0..6).map(|k| C64::new(0.5 * k as f64, 2.0)).collect() };
        let p = matmul(a.view(), b.view());
        let t1 = trace(p.view());
        let t2 = trace_of_product(a.view(), b.view());
        assert!((t1 - t2).norm() < 1e-12);
    }

    #[test]
    fn log_value_zero_propagates() {
        let z = LogValue::from_complex(ZERO);
        assert!(z.is_zero());
        assert!(z.mul(LogValue::ONE).is_zero());
        assert_eq!(z.to_complex(), ZERO);
        let v = LogValue::from_complex(C64::new(-2.0, 0.0));
        assert!((v.to_complex() - C64::new(-2.0, 0.0)).norm() < 1e-14);
    }
}
