//! Layer-level compositions of tape primitives.

use crate::error::{MafError, Result};
use crate::tape::{Tape, Var};

/// Per-pixel linear map `out[o,h,w] = Σ_c w[o,c]·x[c,h,w] + b[o]`, computed
/// as a matrix product on the `C×HW` unfolding.
pub fn conv1x1(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (c_in, h, wd) = chw(tape, x, "conv1x1")?;
    let (c_out, wc) = tape.value(w).dims2("conv1x1")?;
    if wc != c_in {
        return Err(MafError::dim("conv1x1", tape.shape(x), tape.shape(w)));
    }
    let flat = tape.reshape(x, &[c_in, h * wd])?;
    let y = tape.matmul(w, flat)?;
    let y = tape.add_col_bias(y, b)?;
    tape.reshape(y, &[c_out, h, wd])
}

/// Square-kernel convolution with stride and zero padding. `w` has shape
/// `C_out×C_in×k×k`.
pub fn conv2d(tape: &mut Tape, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
    let (c_in, _, _) = chw(tape, x, "conv2d")?;
    let (c_out, k) = match tape.shape(w) {
        &[o, i, k1, k2] if i == c_in && k1 == k2 => (o, k1),
        s => return Err(MafError::dim("conv2d", tape.shape(x), s)),
    };
    let cols = tape.im2col(x, k, stride, pad)?;
    let (_, hw) = tape.value(cols).dims2("conv2d")?;
    let (h, wd) = {
        let (_, h_in, w_in) = chw(tape, x, "conv2d")?;
        ((h_in + 2 * pad - k) / stride + 1, (w_in + 2 * pad - k) / stride + 1)
    };
    debug_assert_eq!(h * wd, hw);
    let w2 = tape.reshape(w, &[c_out, c_in * k * k])?;
    let y = tape.matmul(w2, cols)?;
    let y = tape.add_col_bias(y, b)?;
    tape.reshape(y, &[c_out, h, wd])
}

/// Row-wise affine map `x·w + b` for `x: M×K`, `w: K×P`, `b: P`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row_bias(y, b)
}

pub(crate) fn chw(tape: &Tape, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(MafError::dim(op, s, &[0, 0, 0])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn conv1x1_identity_weights_pass_through() {
        let mut t = Tape::new();
        let xv = Tensor::new(&[3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        let x = t.constant(xv.clone());
        let w = t.constant(Tensor::eye(3));
        let b = t.constant(Tensor::zeros(&[3]));
        let y = conv1x1(&mut t, x, w, b).unwrap();
        assert!(t.value(y).bit_eq(&xv));
    }

    #[test]
    fn conv1x1_sums_channels() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[3, 2, 4]));
        let w = t.constant(Tensor::ones(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2]));
        let y = conv1x1(&mut t, x, w, b).unwrap();
        assert_eq!(t.shape(y), &[2, 2, 4]);
        assert!(t.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn conv1x1_channel_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[3, 2, 2]));
        let w = t.constant(Tensor::ones(&[2, 4]));
        let b = t.constant(Tensor::zeros(&[2]));
        assert!(matches!(conv1x1(&mut t, x, w, b), Err(MafError::Dimension { .. })));
    }

    #[test]
    fn conv2d_matches_direct_loop() {
        let mut t = Tape::new();
        let xv = Tensor::new(&[2, 5, 4], (0..40).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let wv = Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let bv = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = t.constant(xv.clone());
        let w = t.constant(wv.clone());
        let b = t.constant(bv.clone());
        let y = conv2d(&mut t, x, w, b, 2, 1).unwrap();
        let y = t.value(y);
        assert_eq!(y.shape(), &[3, 3, 2]);
        for o in 0..3 {
            for oh in 0..3 {
                for ow in 0..2 {
                    let mut acc = bv.at(&[o]);
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let h = (oh * 2 + ki) as isize - 1;
                                let w = (ow * 2 + kj) as isize - 1;
                                if (0..5).contains(&h) && (0..4).contains(&w) {
                                    acc += wv.at(&[o, c, ki, kj]) * xv.at(&[c, h as usize, w as usize]);
                                }
                            }
                        }
                    }
                    assert!((y.at(&[o, oh, ow]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}
