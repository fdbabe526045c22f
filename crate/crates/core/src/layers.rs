//! Forward and backward passes for dense, TDNN, ReLU and gradient-reversal
//! layers. All functions are pure: weights come in by reference and
//! gradients come back as fresh matrices or are accumulated into caller
//! buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Matrix};

/// Gradients of a dense or TDNN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
}

fn check_bias(op: &'static str, w: &Matrix, b: &Matrix) -> Result<()> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::Shape {
            op,
            left: w.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Weight matrix drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches by construction")
}

/// `y = xW + b` row by row.
pub fn dense_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::Shape {
            op: "dense_forward",
            left: x.shape(),
            right: w.shape(),
        });
    }
    check_bias("dense_forward", w, b)?;
    let mut y = Matrix::zeros(x.rows(), w.cols());
    for r in 0..x.rows() {
        y.row_mut(r).copy_from_slice(b.data());
    }
    gemm_acc(y.data_mut(), x.data(), w.data(), x.rows(), x.cols(), w.cols());
    Ok(y)
}

/// Accumulates `dW += xᵀ dy`, `db += Σ_t dy_t` and returns `dx = dy Wᵀ` when
/// `want_dx` is set.
pub fn dense_backward_acc(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut Matrix,
    want_dx: bool,
) -> Result<Option<Matrix>> {
    if dy.rows() != x.rows() || dy.cols() != w.cols() || x.cols() != w.rows() {
        return Err(Error::Shape {
            op: "dense_backward",
            left: x.shape(),
            right: dy.shape(),
        });
    }
    if dw.shape() != w.shape() || db.shape() != (1, w.cols()) {
        return Err(Error::Shape {
            op: "dense_backward",
            left: w.shape(),
            right: dw.shape(),
        });
    }
    let (t, din, dout) = (x.rows(), x.cols(), w.cols());
    gemm_tn_acc(dw.data_mut(), x.data(), dy.data(), t, din, dout);
    for r in 0..t {
        for (acc, v) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *acc += v;
        }
    }
    if !want_dx {
        return Ok(None);
    }
    let mut dx = Matrix::zeros(t, din);
    gemm_nt_acc(dx.data_mut(), dy.data(), w.data(), t, dout, din);
    Ok(Some(dx))
}

pub fn dense_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<LayerGrads> {
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let mut db = Matrix::zeros(1, w.cols());
    let dx = dense_backward_acc(x, w, dy, &mut dw, &mut db, true)?.expect("dx requested");
    Ok(LayerGrads { dx, dw, db })
}

/// Temporal offsets and dimensions of one time-delay layer.
///
/// The weight matrix is the per-delay blocks stacked vertically, in delay
/// order: shape `(delays.len() * in_dim) × out_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdnnSpec {
    delays: Vec<i32>,
    in_dim: usize,
    out_dim: usize,
}

impl TdnnSpec {
    pub fn new(delays: Vec<i32>, in_dim: usize, out_dim: usize) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::config("delays", "must not be empty"));
        }
        if delays.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("delays", "must be strictly increasing"));
        }
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("tdnn dims", "must be positive"));
        }
        Ok(TdnnSpec {
            delays,
            in_dim,
            out_dim,
        })
    }

    pub fn delays(&self) -> &[i32] {
        &self.delays
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Frames consumed on the left and right of each output frame.
    pub fn context(&self) -> (usize, usize) {
        let first = self.delays[0];
        let last = *self.delays.last().unwrap();
        ((-first).max(0) as usize, last.max(0) as usize)
    }

    /// Frames lost between input and output.
    pub fn span(&self) -> usize {
        (self.delays.last().unwrap() - self.delays[0]) as usize
    }

    pub fn min_frames(&self) -> usize {
        self.span() + 1
    }

    pub fn weight_rows(&self) -> usize {
        self.delays.len() * self.in_dim
    }

    pub fn output_frames(&self, input_frames: usize) -> Result<usize> {
        if input_frames < self.min_frames() {
            return Err(Error::TooShort {
                required: self.min_frames(),
                got: input_frames,
            });
        }
        Ok(input_frames - self.span())
    }

    fn check(&self, op: &'static str, x: &Matrix, w: &Matrix, b: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape {
                op,
                left: x.shape(),
                right: (self.weight_rows(), self.out_dim),
            });
        }
        if w.shape() != (self.weight_rows(), self.out_dim) {
            return Err(Error::Shape {
                op,
                left: w.shape(),
                right: (self.weight_rows(), self.out_dim),
            });
        }
        check_bias(op, w, b)
    }
}

/// Total (left, right) context of a stack of TDNN layers.
pub fn receptive_field(stack: &[TdnnSpec]) -> (usize, usize) {
    stack.iter().fold((0, 0), |(l, r), s| {
        let (sl, sr) = s.context();
        (l + sl, r + sr)
    })
}

/// Output frame `t` is `b + Σ_j x[t + d_j − d_0] · W_j`. Only frames whose
/// every tap exists are produced.
pub fn tdnn_forward(x: &Matrix, spec: &TdnnSpec, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    spec.check("tdnn_forward", x, w, b)?;
    let out_t = spec.output_frames(x.rows())?;
    let (din, dout) = (spec.in_dim, spec.out_dim);
    let mut y = Matrix::zeros(out_t, dout);
    for r in 0..out_t {
        y.row_mut(r).copy_from_slice(b.data());
    }
    let first = spec.delays[0];
    for (j, &d) in spec.delays.iter().enumerate() {
        let start = (d - first) as usize;
        let xs = &x.data()[start * din..(start + out_t) * din];
        let wj = &w.data()[j * din * dout..(j + 1) * din * dout];
        gemm_acc(y.data_mut(), xs, wj, out_t, din, dout);
    }
    Ok(y)
}

pub fn tdnn_backward_acc(
    x: &Matrix,
    spec: &TdnnSpec,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut Matrix,
    want_dx: bool,
) -> Result<Option<Matrix>> {
    let zero_b = Matrix::zeros(1, spec.out_dim);
    spec.check("tdnn_backward", x, w, &zero_b)?;
    let out_t = spec.output_frames(x.rows())?;
    if dy.shape() != (out_t, spec.out_dim) {
        return Err(Error::Shape {
            op: "tdnn_backward",
            left: (out_t, spec.out_dim),
            right: dy.shape(),
        });
    }
    if dw.shape() != w.shape() || db.shape() != zero_b.shape() {
        return Err(Error::Shape {
            op: "tdnn_backward",
            left: w.shape(),
            right: dw.shape(),
        });
    }
    let (din, dout) = (spec.in_dim, spec.out_dim);
    for r in 0..out_t {
        for (acc, v) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *acc += v;
        }
    }
    let mut dx = want_dx.then(|| Matrix::zeros(x.rows(), din));
    let first = spec.delays[0];
    for (j, &d) in spec.delays.iter().enumerate() {
        let start = (d - first) as usize;
        let xs = &x.data()[start * din..(start + out_t) * din];
        let block = j * din * dout..(j + 1) * din * dout;
        gemm_tn_acc(&mut dw.data_mut()[block.clone()], xs, dy.data(), out_t, din, dout);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[start * din..(start + out_t) * din];
            gemm_nt_acc(dxs, dy.data(), &w.data()[block], out_t, dout, din);
        }
    }
    Ok(dx)
}

pub fn tdnn_backward(x: &Matrix, spec: &TdnnSpec, w: &Matrix, dy: &Matrix) -> Result<LayerGrads> {
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let mut db = Matrix::zeros(1, w.cols());
    let dx = tdnn_backward_acc(x, spec, w, dy, &mut dw, &mut db, true)?.expect("dx requested");
    Ok(LayerGrads { dx, dw, db })
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if !(*v > 0.0) {
            *v = 0.0
        }
    });
    y
}

/// `dx = dy` where the forward input was positive, else 0.
pub fn relu_backward(dy: &Matrix, x: &Matrix) -> Result<Matrix> {
    if dy.shape() != x.shape() {
        return Err(Error::Shape {
            op: "relu_backward",
            left: x.shape(),
            right: dy.shape(),
        });
    }
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if !(v > 0.0) {
            *g = 0.0;
        }
    }
    Ok(dx)
}

/// Scale of a gradient reversal layer. Set between repeats by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GrlSpec {
    pub alpha: f64,
}

impl GrlSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite and non-negative"));
        }
        Ok(GrlSpec { alpha })
    }
}

/// Identity.
pub fn grl_forward(x: &Matrix, _spec: &GrlSpec) -> Matrix {
    x.clone()
}

/// `dx = −α · dy`.
pub fn grl_backward(dy: &Matrix, spec: &GrlSpec) -> Matrix {
    let mut dx = dy.clone();
    dx.scale(-spec.alpha);
    dx
}
