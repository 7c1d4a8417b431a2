#![allow(dead_code)]

use maf::{Rng, Tensor};

pub fn randn(shape: &[usize], rng: &mut Rng, std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal(0.0, std)).collect()).unwrap()
}

pub fn uniform(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()).unwrap()
}

/// Triple-loop product of row-major `m×k` and `k×p` matrices.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[1];
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a.data()[i * k + t] * b.data()[t * p + j];
            }
            out[i * p + j] = s;
        }
    }
    Tensor::new(&[m, p], out).unwrap()
}

pub fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "max abs diff {d:e} > {tol:e}");
}
