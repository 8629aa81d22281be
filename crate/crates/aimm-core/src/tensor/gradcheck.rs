//! Central-finite-difference verification of reverse-mode gradients.
//!
//! 64-bit only: the checks need the headroom. Step size follows
//! h = h_base * (1 + |x_i|) per coordinate.

use super::tape::{NodeId, Tape};
use super::Tensor;
use crate::error::{Error, Result};

/// Relative error between an analytic and a finite-difference value.
/// Magnitudes below 1e-8 are treated as exact zeros (FD noise floor).
pub fn rel_err(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m < 1e-8 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Compare the reverse-mode gradient of a scalar-valued graph against
/// central finite differences at every coordinate of `x`.
///
/// `build` receives a fresh tape and the leaf id of `x` and must return the
/// scalar output node. Returns the maximum per-coordinate relative error.
pub fn grad_check<B>(build: B, x: &Tensor<f64>, h_base: f64) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(build, x, h_base, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates (for large tensors).
pub fn grad_check_coords<B>(build: B, x: &Tensor<f64>, h_base: f64, coords: &[usize]) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    // analytic gradient
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = build(&mut tape, leaf)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Dimension("grad_check requires a scalar output".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = match grads.get(leaf) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.numel()],
    };

    let eval = |xt: &Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = t.leaf(xt.clone(), false);
        let o = build(&mut t, l)?;
        Ok(t.value(o).data()[0])
    };

    let mut max_err = 0.0f64;
    let mut xp = x.clone();
    for &i in coords {
        let orig = xp.data()[i];
        let h = h_base * (1.0 + orig.abs());
        xp.data_mut()[i] = orig + h;
        let fp = eval(&xp)?;
        xp.data_mut()[i] = orig - h;
        let fm = eval(&xp)?;
        xp.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let e = rel_err(analytic[i], fd);
        if e > max_err {
            max_err = e;
        }
    }
    Ok(max_err)
}
