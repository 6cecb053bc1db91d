//! Raw NCHW convolution kernels on slices.
//!
//! Every kernel accumulates in a fixed loop order so results are
//! bit-reproducible for identical inputs.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub(crate) fn out_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Output positions `o` in `[lo, hi)` for which `o * stride + offset - pad`
/// lands inside `[0, in_size)`.
#[inline]
fn valid_range(
    offset: usize,
    pad: usize,
    stride: usize,
    in_size: usize,
    out_size: usize,
) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    if in_size + pad <= offset {
        return (0, 0);
    }
    let hi = ((in_size - 1 + pad - offset) / stride + 1).min(out_size);
    (lo.min(hi), hi)
}

/// Scratch for one input channel unrolled into `k * k` rows of length
/// `batch * out_h * out_w`.
struct Columns {
    data: Vec<f64>,
    n: usize,
}

impl Columns {
    fn new(g: &ConvGeom) -> Self {
        let n = g.batch * g.out_h * g.out_w;
        Columns {
            data: vec![0.0; g.kernel * g.kernel * n],
            n,
        }
    }

    fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..][..self.n]
    }

    fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.n..][..self.n]
    }

    /// Unrolls channel `c` of `x`; taps falling in the padding read as zero.
    fn gather(&mut self, g: &ConvGeom, x: &[f64], c: usize) {
        let (k, s, p) = (g.kernel, g.stride, g.pad);
        let in_plane = g.in_h * g.in_w;
        let out_plane = g.out_h * g.out_w;
        for kh in 0..k {
            let (r_lo, r_hi) = valid_range(kh, p, s, g.in_h, g.out_h);
            for kw in 0..k {
                let (c_lo, c_hi) = valid_range(kw, p, s, g.in_w, g.out_w);
                let n = self.n;
                let row = &mut self.data[(kh * k + kw) * n..][..n];
                if c_lo >= c_hi {
                    row.fill(0.0);
                    continue;
                }
                for b in 0..g.batch {
                    let src = &x[(b * g.in_ch + c) * in_plane..][..in_plane];
                    let dst = &mut row[b * out_plane..][..out_plane];
                    dst[..r_lo * g.out_w].fill(0.0);
                    dst[r_hi * g.out_w..].fill(0.0);
                    for r in r_lo..r_hi {
                        dst[r * g.out_w..r * g.out_w + c_lo].fill(0.0);
                        dst[r * g.out_w + c_hi..(r + 1) * g.out_w].fill(0.0);
                        let src_row = &src[(r * s + kh - p) * g.in_w..][..g.in_w];
                        let dst_row = &mut dst[r * g.out_w + c_lo..r * g.out_w + c_hi];
                        let first = c_lo * s + kw - p;
                        if s == 1 {
                            dst_row.copy_from_slice(&src_row[first..first + dst_row.len()]);
                        } else {
                            for (d, x) in dst_row.iter_mut().zip(src_row[first..].iter().step_by(s)) {
                                *d = *x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds the unrolled gradient back into channel `c` of `dx`.
    fn scatter(&self, g: &ConvGeom, dx: &mut [f64], c: usize) {
        let (k, s, p) = (g.kernel, g.stride, g.pad);
        let in_plane = g.in_h * g.in_w;
        let out_plane = g.out_h * g.out_w;
        for kh in 0..k {
            let (r_lo, r_hi) = valid_range(kh, p, s, g.in_h, g.out_h);
            for kw in 0..k {
                let (c_lo, c_hi) = valid_range(kw, p, s, g.in_w, g.out_w);
                if c_lo >= c_hi {
                    continue;
                }
                let row = self.row(kh * k + kw);
                for b in 0..g.batch {
                    let dst = &mut dx[(b * g.in_ch + c) * in_plane..][..in_plane];
                    let src = &row[b * out_plane..][..out_plane];
                    for r in r_lo..r_hi {
                        let dst_row = &mut dst[(r * s + kh - p) * g.in_w..][..g.in_w];
                        let src_row = &src[r * g.out_w + c_lo..r * g.out_w + c_hi];
                        let first = c_lo * s + kw - p;
                        if s == 1 {
                            let n = src_row.len();
                            axpy(&mut dst_row[first..first + n], 1.0, src_row);
                        } else {
                            for (d, v) in dst_row[first..].iter_mut().step_by(s).zip(src_row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Channel-major copy: `rows[ch][b * plane + i] = data[b][ch][i]`.
fn to_rows(data: &[f64], batch: usize, ch: usize, plane: usize) -> Vec<f64> {
    let n = batch * plane;
    let mut rows = vec![0.0; ch * n];
    for b in 0..batch {
        for c in 0..ch {
            rows[c * n + b * plane..][..plane].copy_from_slice(&data[(b * ch + c) * plane..][..plane]);
        }
    }
    rows
}

/// Inverse of [`to_rows`], adding into `data`.
fn add_rows(rows: &[f64], data: &mut [f64], batch: usize, ch: usize, plane: usize) {
    let n = batch * plane;
    for b in 0..batch {
        for c in 0..ch {
            axpy(
                &mut data[(b * ch + c) * plane..][..plane],
                1.0,
                &rows[c * n + b * plane..][..plane],
            );
        }
    }
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed tree.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// `out += conv(x, w)` for a dense kernel `(out_ch, in_ch, k, k)`.
pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let kk = g.kernel * g.kernel;
    let mut cols = Columns::new(g);
    let n = cols.n;
    let mut acc = vec![0.0; g.out_ch * n];
    for c in 0..g.in_ch {
        cols.gather(g, x, c);
        for o in 0..g.out_ch {
            let dst = &mut acc[o * n..][..n];
            let wk = &w[(o * g.in_ch + c) * kk..][..kk];
            for (t, &wv) in wk.iter().enumerate() {
                axpy(dst, wv, cols.row(t));
            }
        }
    }
    add_rows(&acc, out, g.batch, g.out_ch, g.out_h * g.out_w);
}

/// Depthwise variant: kernel `(ch, 1, k, k)`, `in_ch == out_ch`.
pub(crate) fn depthwise_forward(g: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let kk = g.kernel * g.kernel;
    let mut cols = Columns::new(g);
    let n = cols.n;
    let mut acc = vec![0.0; g.in_ch * n];
    for c in 0..g.in_ch {
        cols.gather(g, x, c);
        let dst = &mut acc[c * n..][..n];
        for (t, &wv) in w[c * kk..][..kk].iter().enumerate() {
            axpy(dst, wv, cols.row(t));
        }
    }
    add_rows(&acc, out, g.batch, g.in_ch, g.out_h * g.out_w);
}

/// `dx += conv_transpose(grad_out, w)`.
pub(crate) fn conv_backward_input(g: &ConvGeom, grad_out: &[f64], w: &[f64], dx: &mut [f64]) {
    let kk = g.kernel * g.kernel;
    let go = to_rows(grad_out, g.batch, g.out_ch, g.out_h * g.out_w);
    let mut cols = Columns::new(g);
    let n = cols.n;
    for c in 0..g.in_ch {
        for t in 0..kk {
            let dst = cols.row_mut(t);
            let w0 = w[c * kk + t];
            for (d, v) in dst.iter_mut().zip(&go[..n]) {
                *d = w0 * v;
            }
            for o in 1..g.out_ch {
                axpy(dst, w[(o * g.in_ch + c) * kk + t], &go[o * n..][..n]);
            }
        }
        cols.scatter(g, dx, c);
    }
}

pub(crate) fn depthwise_backward_input(
    g: &ConvGeom,
    grad_out: &[f64],
    w: &[f64],
    dx: &mut [f64],
) {
    let kk = g.kernel * g.kernel;
    let go = to_rows(grad_out, g.batch, g.in_ch, g.out_h * g.out_w);
    let mut cols = Columns::new(g);
    let n = cols.n;
    for c in 0..g.in_ch {
        let src = &go[c * n..][..n];
        for t in 0..kk {
            let wv = w[c * kk + t];
            for (d, v) in cols.row_mut(t).iter_mut().zip(src) {
                *d = wv * v;
            }
        }
        cols.scatter(g, dx, c);
    }
}

/// `dw += correlate(x, grad_out)` for a dense kernel.
pub(crate) fn conv_backward_weight(g: &ConvGeom, grad_out: &[f64], x: &[f64], dw: &mut [f64]) {
    let kk = g.kernel * g.kernel;
    let go = to_rows(grad_out, g.batch, g.out_ch, g.out_h * g.out_w);
    let mut cols = Columns::new(g);
    let n = cols.n;
    for c in 0..g.in_ch {
        cols.gather(g, x, c);
        for o in 0..g.out_ch {
            let go_row = &go[o * n..][..n];
            let dwk = &mut dw[(o * g.in_ch + c) * kk..][..kk];
            for (t, d) in dwk.iter_mut().enumerate() {
                *d += dot(go_row, cols.row(t));
            }
        }
    }
}

pub(crate) fn depthwise_backward_weight(
    g: &ConvGeom,
    grad_out: &[f64],
    x: &[f64],
    dw: &mut [f64],
) {
    let kk = g.kernel * g.kernel;
    let go = to_rows(grad_out, g.batch, g.in_ch, g.out_h * g.out_w);
    let mut cols = Columns::new(g);
    let n = cols.n;
    for c in 0..g.in_ch {
        cols.gather(g, x, c);
        let go_row = &go[c * n..][..n];
        for (t, d) in dw[c * kk..][..kk].iter_mut().enumerate() {
            *d += dot(go_row, cols.row(t));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for in_size in 1..9 {
            for k in [1usize, 3, 5, 7] {
                let pad = (k - 1) / 2;
                for stride in 1..3 {
                    let Some(out) = out_dim(in_size, k, stride, pad) else {
                        continue;
                    };
                    for off in 0..k {
                        let (lo, hi) = valid_range(off, pad, stride, in_size, out);
                        let brute: Vec<usize> = (0..out)
                            .filter(|&o| {
                                let pos = (o * stride + off) as isize - pad as isize;
                                pos >= 0 && (pos as usize) < in_size
                            })
                            .collect();
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, brute, "in {in_size} k {k} s {stride} off {off}");
                    }
                }
            }
        }
    }
}
