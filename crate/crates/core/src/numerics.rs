//! Dense row-major matrices, parameter storage, plain SGD and a
//! central-difference gradient verifier.
//!
//! Everything trains in `f64`. Backward passes are written by hand per layer,
//! so the finite-difference checker here is the main safety net for them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Elementwise `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "add_scaled",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Sum over rows, returned as a `1 × cols` matrix.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Index of the largest entry in row `r`; ties go to the lowest index.
    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Rounds every entry to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        self.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}

/// `out[rows × n] += a[rows × k] · b[k × n]`, all row-major slices.
#[inline(always)]
fn gemm_acc_impl(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), rows * n);
    debug_assert_eq!(a.len(), rows * k);
    debug_assert_eq!(b.len(), k * n);
    // Rows are taken in blocks of four so each row of `b` is loaded once per
    // block; every output element still accumulates in ascending `p`.
    const BLOCK: usize = 4;
    if n == 0 {
        return;
    }
    for i0 in (0..rows).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(rows);
        let out_block = &mut out[i0 * n..i1 * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            for (bi, out_row) in out_block.chunks_exact_mut(n).enumerate() {
                let av = a[(i0 + bi) * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// `out[k × n] += aᵀ · b` with `a[rows × k]`, `b[rows × n]`.
#[inline(always)]
fn gemm_tn_acc_impl(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    const BLOCK: usize = 4;
    for i0 in (0..rows).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(rows);
        for p in 0..k {
            let out_row = &mut out[p * n..(p + 1) * n];
            for i in i0..i1 {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in out_row.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// `out[rows × m] += a · bᵀ` with `a[rows × k]`, `b[m × k]`. `b` is small
/// (a weight block), so it is transposed once and the row-blocked kernel
/// does the work, skipping the zeros that ReLU leaves in `a`.
#[inline(always)]
fn gemm_nt_acc_impl(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, k: usize, m: usize) {
    debug_assert_eq!(out.len(), rows * m);
    let mut bt = vec![0.0; k * m];
    for j in 0..m {
        for p in 0..k {
            bt[p * m + j] = b[j * k + p];
        }
    }
    gemm_acc_impl(out, a, &bt, rows, k, m);
}

/// Defines a public kernel that runs a 256-bit build of `$imp` when the CPU
/// has AVX2. FMA stays disabled, so both builds round identically.
macro_rules! dispatch {
    ($name:ident, $imp:ident) => {
        pub(crate) fn $name(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, k: usize, n: usize) {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx2") {
                    #[target_feature(enable = "avx2")]
                    unsafe fn wide(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, k: usize, n: usize) {
                        $imp(out, a, b, rows, k, n)
                    }
                    // SAFETY: AVX2 support was just detected.
                    return unsafe { wide(out, a, b, rows, k, n) };
                }
            }
            $imp(out, a, b, rows, k, n)
        }
    };
}

dispatch!(gemm_acc, gemm_acc_impl);
dispatch!(gemm_tn_acc, gemm_tn_acc_impl);
dispatch!(gemm_nt_acc, gemm_nt_acc_impl);

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm_acc(&mut out.data, &a.data, &b.data, a.rows, a.cols, b.cols);
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row's max.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for t in 0..out.rows {
        let row = out.row_mut(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Summed softmax cross-entropy over the rows of `logits`.
///
/// Returns `(−Σ_t log softmax(logits_t)[label_t], softmax − onehot)`.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows {
        return Err(Error::Shape {
            op: "softmax_xent",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    let k = logits.cols;
    let mut grad = Matrix::zeros(logits.rows, k);
    let mut loss = 0.0;
    for (t, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                kind: "class",
                label,
                classes: k,
                location: format!("frame {t}"),
            });
        }
        let row = logits.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(t);
        let mut sum = 0.0;
        for (gi, &z) in g.iter_mut().zip(row) {
            let e = (z - max).exp();
            *gi = e;
            sum += e;
        }
        let log_sum = sum.ln();
        loss += log_sum - (row[label] - max);
        for gi in g.iter_mut() {
            *gi /= sum;
        }
        g[label] -= 1.0;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_xent loss".into()));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub frozen: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            frozen: false,
        }
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Parameter) -> Result<()> {
        if self.params.iter().any(|p| p.name == param.name) {
            return Err(Error::config(param.name, "duplicate parameter name"));
        }
        self.params.push(param);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn at(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub(crate) fn at_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    /// FNV-1a over the bit patterns of every value, in order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in &p.value.data {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.round_to_f32());
    }
}

/// `value ← value − lr·grad` for every unfrozen parameter, then zero all grads.
pub fn apply_sgd_step(params: &mut ParameterSet, lr: f64) {
    for p in params.iter_mut() {
        if !p.frozen {
            for (v, g) in p.value.data.iter_mut().zip(&p.grad.data) {
                *v -= lr * g;
            }
        }
        p.grad.fill(0.0);
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares the gradients already stored in `params` against central
/// differences of `loss_fn`, for every scalar.
///
/// The step for scalar θ is `epsilon · max(1, |θ|)`. Returns the largest
/// relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(loss_fn: F, params: &mut ParameterSet, epsilon: f64) -> Result<f64>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    let n = params.scalar_count();
    finite_diff_check_sampled(loss_fn, params, epsilon, n, 0)
}

/// Like [`finite_diff_check`] but checks at most `max_scalars` scalars drawn
/// without replacement (seeded).
pub fn finite_diff_check_sampled<F>(
    mut loss_fn: F,
    params: &mut ParameterSet,
    epsilon: f64,
    max_scalars: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::config("epsilon", "must be positive"));
    }
    let mut index: Vec<(usize, usize)> = Vec::with_capacity(params.scalar_count());
    for (pi, p) in params.iter().enumerate() {
        index.extend((0..p.value.data.len()).map(|j| (pi, j)));
    }
    let chosen: Vec<(usize, usize)> = if max_scalars >= index.len() {
        index
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<usize> = sample(&mut rng, index.len(), max_scalars).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| index[i]).collect()
    };

    let mut worst: f64 = 0.0;
    for (pi, j) in chosen {
        let original = params.at(pi).value.data[j];
        let analytic = params.at(pi).grad.data[j];
        let step = epsilon * original.abs().max(1.0);

        params.at_mut(pi).value.data[j] = original + step;
        let plus = loss_fn(params)?;
        params.at_mut(pi).value.data[j] = original - step;
        let minus = loss_fn(params)?;
        params.at_mut(pi).value.data[j] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss while perturbing {}[{j}]",
                params.at(pi).name
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(rel_error(analytic, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]);
        let b = Matrix::from_rows(&[[3.0], [4.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::from_rows(&[[11.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 5, 7);
        let b = random_matrix(&mut rng, 7, 3);
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Shape { left: (2, 3), right: (2, 3), .. }));
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 6, 5);
        let mut tn = vec![0.0; 4 * 5];
        gemm_tn_acc(&mut tn, a.data(), b.data(), 6, 4, 5);
        let want = naive_matmul(&a.transpose(), &b);
        for (x, y) in tn.iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = random_matrix(&mut rng, 3, 4);
        let mut nt = vec![0.0; 6 * 3];
        gemm_nt_acc(&mut nt, a.data(), c.data(), 6, 4, 3);
        let want = naive_matmul(&a, &c.transpose());
        for (x, y) in nt.iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn xent_uniform_logits() {
        let (loss, _) = softmax_xent(&Matrix::zeros(1, 4), &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((loss - 1.3862944).abs() < 1e-7);
    }

    #[test]
    fn xent_saturated() {
        let logits = Matrix::from_rows(&[[0.0, 40.0, 5.0]]);
        let (loss, _) = softmax_xent(&logits, &[1]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn xent_label_out_of_range_names_frame() {
        let err = softmax_xent(&Matrix::zeros(3, 2), &[0, 1, 2]).unwrap_err();
        assert!(err.to_string().contains("frame 2"));
    }

    #[test]
    fn xent_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = random_matrix(&mut rng, 3, 5);
        let labels = [4, 0, 2];
        let (loss, grad) = softmax_xent(&logits, &labels).unwrap();
        // No max-subtraction: logits are small so the direct form is exact enough.
        let mut want = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            let z: Vec<f64> = logits.row(t).to_vec();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            want -= (z[y].exp() / denom).ln();
            for k in 0..5 {
                let p = z[k].exp() / denom;
                let g = p - if k == y { 1.0 } else { 0.0 };
                assert!((grad.get(t, k) - g).abs() < 1e-10);
            }
        }
        assert!((loss - want).abs() < 1e-10);
    }

    #[test]
    fn sgd_step_hand_arithmetic() {
        let mut ps = ParameterSet::new();
        let mut p = Parameter::new("w", Matrix::from_rows(&[[1.0]]));
        p.grad = Matrix::from_rows(&[[2.0]]);
        ps.push(p).unwrap();
        apply_sgd_step(&mut ps, 0.5);
        assert_eq!(ps.get("w").unwrap().value, Matrix::from_rows(&[[0.0]]));
        assert_eq!(ps.get("w").unwrap().grad, Matrix::from_rows(&[[0.0]]));
    }

    #[test]
    fn sgd_step_respects_freeze_and_zero_grad() {
        let mut ps = ParameterSet::new();
        let mut frozen = Parameter::new("f", Matrix::from_rows(&[[0.1, -0.3]]));
        frozen.grad = Matrix::from_rows(&[[5.0, 7.0]]);
        frozen.frozen = true;
        ps.push(frozen).unwrap();
        ps.push(Parameter::new("z", Matrix::from_rows(&[[0.7]]))).unwrap();
        let before = ps.checksum();
        apply_sgd_step(&mut ps, 0.3);
        assert_eq!(ps.checksum(), before);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParameterSet::new();
        ps.push(Parameter::new("w", Matrix::zeros(1, 1))).unwrap();
        assert!(ps.push(Parameter::new("w", Matrix::zeros(1, 1))).is_err());
    }

    #[test]
    fn fd_check_quadratic() {
        let mut ps = ParameterSet::new();
        let mut p = Parameter::new("theta", Matrix::from_rows(&[[3.0]]));
        p.grad = Matrix::from_rows(&[[3.0]]);
        ps.push(p).unwrap();
        let err = finite_diff_check(
            |ps| {
                let v = ps.get("theta").unwrap().value.get(0, 0);
                Ok(0.5 * v * v)
            },
            &mut ps,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn fd_check_catches_wrong_gradient() {
        let mut ps = ParameterSet::new();
        let mut p = Parameter::new("theta", Matrix::from_rows(&[[3.0]]));
        p.grad = Matrix::from_rows(&[[2.0]]);
        ps.push(p).unwrap();
        let err = finite_diff_check(
            |ps| Ok(0.5 * ps.get("theta").unwrap().value.get(0, 0).powi(2)),
            &mut ps,
            1e-6,
        )
        .unwrap();
        assert!(err > 0.3);
    }

    #[test]
    fn fd_check_rejects_non_finite_loss() {
        let mut ps = ParameterSet::new();
        ps.push(Parameter::new("theta", Matrix::zeros(1, 1))).unwrap();
        assert!(finite_diff_check(|_| Ok(f64::NAN), &mut ps, 1e-6).is_err());
    }

    proptest! {
        #[test]
        fn matmul_matches_oracle_up_to_32(r in 1usize..33, k in 1usize..33, c in 1usize..33, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, r, k);
            let b = random_matrix(&mut rng, k, c);
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(&a, &b);
            for (x, y) in got.data().iter().zip(want.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_rows_normalized(t in 1usize..6, k in 2usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut logits = random_matrix(&mut rng, t, k);
            logits.scale(20.0);
            let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..k)).collect();
            let (_, grad) = softmax_xent(&logits, &labels).unwrap();
            for row in 0..t {
                let g = grad.row(row);
                let s: f64 = g.iter().sum();
                prop_assert!(s.abs() < 1e-12);
            }
            let probs = softmax(&logits);
            for row in 0..t {
                let s: f64 = probs.row(row).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sgd_zero_lr_is_identity(vals in proptest::collection::vec(-10.0f64..10.0, 1..20), g in -5.0f64..5.0) {
            let n = vals.len();
            let mut ps = ParameterSet::new();
            let mut p = Parameter::new("w", Matrix::from_vec(1, n, vals).unwrap());
            p.grad.fill(g);
            ps.push(p).unwrap();
            let before = ps.checksum();
            apply_sgd_step(&mut ps, 0.0);
            prop_assert_eq!(ps.checksum(), before);
        }
    }
}
