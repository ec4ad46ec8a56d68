//! Minimal dense network building blocks with hand-written backward passes.
//!
//! All parameters live in one flat `f64` buffer addressed through
//! [`TensorId`]s; gradients use a buffer of the same layout. Activations are
//! row-major [`Mat`]s with one sample per row.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `start..start + n` as a new matrix.
    pub fn rows_slice(&self, start: usize, n: usize) -> Mat {
        Mat::from_vec(n, self.cols, self.data[start * self.cols..(start + n) * self.cols].to_vec())
    }

    pub fn vstack(parts: &[&Mat]) -> Mat {
        let cols = parts[0].cols;
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        for m in parts {
            assert_eq!(m.cols, cols);
            data.extend_from_slice(&m.data);
        }
        Mat::from_vec(data.len() / cols.max(1), cols, data)
    }

    pub fn hstack(parts: &[&Mat]) -> Mat {
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for m in parts {
                assert_eq!(m.rows, rows);
                out.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row(r));
                c0 += m.cols;
            }
        }
        out
    }

    /// Columns `start..start + n` as a new matrix.
    pub fn cols_slice(&self, start: usize, n: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, n);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + n]);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`), where `a` is `m×k` and `b`
/// is `k×n` after applying the optional transposes to their row-major storage.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides describe in-bounds views of the asserted lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorId {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.offset..self.offset + self.len()]
    }

    pub fn slice_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.offset..self.offset + self.len()]
    }

    /// Rows `start..start + n` of a matrix tensor.
    pub fn row_block<'a>(&self, buf: &'a [f64], start: usize, n: usize) -> &'a [f64] {
        let o = self.offset + start * self.cols;
        &buf[o..o + n * self.cols]
    }

    pub fn row_block_mut<'a>(&self, buf: &'a mut [f64], start: usize, n: usize) -> &'a mut [f64] {
        let o = self.offset + start * self.cols;
        &mut buf[o..o + n * self.cols]
    }
}

/// Round to the nearest `f32`, so stored weights survive 32-bit serialisation.
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub specs: Vec<TensorSpec>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> TensorId {
        let offset = self.values.len();
        for _ in 0..rows * cols {
            let v = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            self.values.push(round_f32(v));
        }
        let shape = if rows == 1 { vec![cols] } else { vec![rows, cols] };
        self.specs.push(TensorSpec {
            name: name.to_string(),
            shape,
            offset,
        });
        TensorId { offset, rows, cols }
    }

    pub fn add_constant(&mut self, name: &str, len: usize, value: f64) -> TensorId {
        let offset = self.values.len();
        self.values.extend(std::iter::repeat_n(round_f32(value), len));
        self.specs.push(TensorSpec {
            name: name.to_string(),
            shape: vec![len],
            offset,
        });
        TensorId {
            offset,
            rows: 1,
            cols: len,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: TensorId,
    pub b: TensorId,
}

impl Linear {
    /// PyTorch-style uniform initialisation with bound `1/√fan_in`.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add_matrix(&format!("{name}.weight"), fan_in, fan_out, bound, rng);
        let b = store.add_matrix(&format!("{name}.bias"), 1, fan_out, bound, rng);
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        assert_eq!(x.cols, self.fan_in(), "linear input width");
        let n = self.fan_out();
        let mut y = Mat::zeros(x.rows, n);
        let bias = self.b.slice(p);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(bias);
        }
        gemm(x.rows, x.cols, n, &x.data, false, self.w.slice(p), false, &mut y.data, true);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, dy: &Mat, want_dx: bool) -> Option<Mat> {
        let (k, n) = (self.fan_in(), self.fan_out());
        gemm(k, x.rows, n, &x.data, true, &dy.data, false, self.w.slice_mut(g), true);
        let gb = self.b.slice_mut(g);
        for r in 0..dy.rows {
            gb.iter_mut().zip(dy.row(r)).for_each(|(a, b)| *a += b);
        }
        want_dx.then(|| {
            let mut dx = Mat::zeros(dy.rows, k);
            gemm(dy.rows, n, k, &dy.data, false, self.w.slice(p), true, &mut dx.data, false);
            dx
        })
    }
}

/// Two-layer perceptron: linear → ReLU → linear.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

pub struct MlpCache {
    pub h: Mat,
    pub y: Mat,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn forward_cached(&self, p: &[f64], x: &Mat) -> MlpCache {
        let mut h = self.hidden.forward(p, x);
        h.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let y = self.out.forward(p, &h);
        MlpCache { h, y }
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        self.forward_cached(p, x).y
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, cache: &MlpCache, dy: &Mat, want_dx: bool) -> Option<Mat> {
        let mut dh = self.out.backward(p, g, &cache.h, dy, true).expect("requested");
        dh.data
            .iter_mut()
            .zip(&cache.h.data)
            .for_each(|(d, h)| if *h <= 0.0 { *d = 0.0 });
        self.hidden.backward(p, g, x, &dh, want_dx)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gated recurrent unit with gate order (reset, update, candidate).
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub wi: TensorId,
    pub bi: TensorId,
    pub wh: TensorId,
    pub bh: TensorId,
    pub hidden: usize,
}

pub struct GruCache {
    pub h: Mat,
    pub r: Mat,
    pub z: Mat,
    pub n: Mat,
    pub hn: Mat,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            wi: store.add_matrix(&format!("{name}.weight_ih"), input, 3 * hidden, bound, rng),
            bi: store.add_matrix(&format!("{name}.bias_ih"), 1, 3 * hidden, bound, rng),
            wh: store.add_matrix(&format!("{name}.weight_hh"), hidden, 3 * hidden, bound, rng),
            bh: store.add_matrix(&format!("{name}.bias_hh"), 1, 3 * hidden, bound, rng),
            hidden,
        }
    }

    pub fn input_width(&self) -> usize {
        self.wi.rows
    }

    /// `x · W_i[rows] (+ b_i)` for a contiguous block of input features.
    pub fn input_gates_block(&self, p: &[f64], x: &Mat, start_row: usize, with_bias: bool) -> Mat {
        let g3 = 3 * self.hidden;
        let mut out = Mat::zeros(x.rows, g3);
        if with_bias {
            let b = self.bi.slice(p);
            for r in 0..x.rows {
                out.row_mut(r).copy_from_slice(b);
            }
        }
        let w = self.wi.row_block(p, start_row, x.cols);
        gemm(x.rows, x.cols, g3, &x.data, false, w, false, &mut out.data, true);
        out
    }

    /// Accumulates `W_i[rows]` gradients for an input block; returns the block's input gradient.
    pub fn input_gates_block_backward(&self, p: &[f64], g: &mut [f64], x: &Mat, start_row: usize, dgi: &Mat) -> Mat {
        let g3 = 3 * self.hidden;
        gemm(x.cols, x.rows, g3, &x.data, true, &dgi.data, false, self.wi.row_block_mut(g, start_row, x.cols), true);
        let mut dx = Mat::zeros(x.rows, x.cols);
        gemm(dgi.rows, g3, x.cols, &dgi.data, false, self.wi.row_block(p, start_row, x.cols), true, &mut dx.data, false);
        dx
    }

    pub fn input_bias_backward(&self, g: &mut [f64], dgi: &Mat) {
        let gb = self.bi.slice_mut(g);
        for r in 0..dgi.rows {
            gb.iter_mut().zip(dgi.row(r)).for_each(|(a, b)| *a += b);
        }
    }

    /// One recurrence step given precomputed input gates `gi` (rows × 3H).
    pub fn step(&self, p: &[f64], gi: &[f64], h: &Mat) -> GruCache {
        let hd = self.hidden;
        let rows = h.rows;
        let mut gh = Mat::zeros(rows, 3 * hd);
        let bh = self.bh.slice(p);
        for r in 0..rows {
            gh.row_mut(r).copy_from_slice(bh);
        }
        gemm(rows, hd, 3 * hd, &h.data, false, self.wh.slice(p), false, &mut gh.data, true);
        let mut rg = Mat::zeros(rows, hd);
        let mut zg = Mat::zeros(rows, hd);
        let mut ng = Mat::zeros(rows, hd);
        let mut hn = Mat::zeros(rows, hd);
        for b in 0..rows {
            let gir = &gi[b * 3 * hd..(b + 1) * 3 * hd];
            let ghr = gh.row(b);
            for j in 0..hd {
                let r = sigmoid(gir[j] + ghr[j]);
                let z = sigmoid(gir[hd + j] + ghr[hd + j]);
                let hnj = ghr[2 * hd + j];
                let n = (gir[2 * hd + j] + r * hnj).tanh();
                rg.data[b * hd + j] = r;
                zg.data[b * hd + j] = z;
                ng.data[b * hd + j] = n;
                hn.data[b * hd + j] = hnj;
            }
        }
        GruCache {
            h: h.clone(),
            r: rg,
            z: zg,
            n: ng,
            hn,
        }
    }

    /// New hidden state from a step cache.
    pub fn output(cache: &GruCache) -> Mat {
        let mut out = Mat::zeros(cache.h.rows, cache.h.cols);
        for i in 0..out.data.len() {
            let z = cache.z.data[i];
            out.data[i] = (1.0 - z) * cache.n.data[i] + z * cache.h.data[i];
        }
        out
    }

    /// Backward through one step: returns `(d gi, d h_prev)` and accumulates
    /// recurrent weight gradients.
    pub fn step_backward(&self, p: &[f64], g: &mut [f64], cache: &GruCache, dh_new: &Mat) -> (Mat, Mat) {
        let hd = self.hidden;
        let rows = dh_new.rows;
        let mut dgi = Mat::zeros(rows, 3 * hd);
        let mut dgh = Mat::zeros(rows, 3 * hd);
        let mut dh = Mat::zeros(rows, hd);
        for b in 0..rows {
            for j in 0..hd {
                let i = b * hd + j;
                let (r, z, n, hn, h) = (cache.r.data[i], cache.z.data[i], cache.n.data[i], cache.hn.data[i], cache.h.data[i]);
                let d = dh_new.data[i];
                let dn = d * (1.0 - z);
                let dz = d * (h - n);
                dh.data[i] = d * z;
                let dpre_n = dn * (1.0 - n * n);
                let dr = dpre_n * hn;
                let dpre_r = dr * r * (1.0 - r);
                let dpre_z = dz * z * (1.0 - z);
                let o = b * 3 * hd;
                dgi.data[o + j] = dpre_r;
                dgi.data[o + hd + j] = dpre_z;
                dgi.data[o + 2 * hd + j] = dpre_n;
                dgh.data[o + j] = dpre_r;
                dgh.data[o + hd + j] = dpre_z;
                dgh.data[o + 2 * hd + j] = dpre_n * r;
            }
        }
        gemm(hd, rows, 3 * hd, &cache.h.data, true, &dgh.data, false, self.wh.slice_mut(g), true);
        let gb = self.bh.slice_mut(g);
        for r in 0..rows {
            gb.iter_mut().zip(dgh.row(r)).for_each(|(a, b)| *a += b);
        }
        gemm(rows, 3 * hd, hd, &dgh.data, false, self.wh.slice(p), true, &mut dh.data, true);
        (dgi, dh)
    }
}

/// Adaptive-moment gradient descent. Updated weights are rounded to `f32`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = round_f32(params[i] - self.lr * mh / (vh.sqrt() + self.eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                c.data[i * b.cols + j] = (0..a.cols).map(|k| a.data[i * a.cols + k] * b.data[k * b.cols + j]).sum();
            }
        }
        c
    }

    fn transpose(a: &Mat) -> Mat {
        let mut t = Mat::zeros(a.cols, a.rows);
        for i in 0..a.rows {
            for j in 0..a.cols {
                t.data[j * a.rows + i] = a.data[i * a.cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Mat::from_vec(3, 4, (0..12).map(|_| rng.random::<f64>()).collect());
        let b = Mat::from_vec(4, 5, (0..20).map(|_| rng.random::<f64>()).collect());
        let want = naive(&a, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { transpose(&a) } else { a.clone() };
            let bb = if tb { transpose(&b) } else { b.clone() };
            let mut c = vec![0.0; 15];
            gemm(3, 4, 5, &aa.data, ta, &bb.data, tb, &mut c, false);
            for (x, y) in c.iter().zip(&want.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn adam_rounds_to_f32() {
        let mut p = vec![0.1, 0.2];
        let mut opt = Adam::new(2, 1e-3);
        opt.step(&mut p, &[1.0, -1.0]);
        assert!(p.iter().all(|&v| v == round_f32(v)));
        assert!(p[0] < 0.1 && p[1] > 0.2);
    }
}
