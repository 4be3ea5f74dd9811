//! Raw numeric kernels: GEMM, convolution and pooling over flat NCHW buffers.

/// Strided matrix view description: row stride and column stride.
#[derive(Debug, Clone, Copy)]
pub struct Strides(pub usize, pub usize);

/// `c[m×n] = a[m×k] · b[k×n] (+ c if accumulate)`; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1, "gemm lhs too small");
    assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1, "gemm rhs too small");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-d convolution over NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.col_cols()
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let p = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - p;
                    let out_row = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (xo, v) in out_row.iter_mut().enumerate() {
                        let ix = (xo * g.stride + kj) as isize - p;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let p = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for xo in 0..ow {
                        let ix = (xo * g.stride + kj) as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[y * ow + xo];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. `x` is `[batch, C, H, W]`, `w` is `[O, C, k, k]`,
/// `bias` is `[O]` or absent. Returns `[batch, O, H', W']`.
pub fn conv2d_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * cols_n];
    let mut out = vec![0.0; batch * g.out_len()];
    for b in 0..batch {
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
        let y = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        gemm(
            g.out_channels,
            rows,
            cols_n,
            w,
            Strides(rows, 1),
            &cols,
            Strides(cols_n, 1),
            y,
            false,
        );
        if let Some(bias) = bias {
            for (o, chunk) in y.chunks_mut(cols_n).enumerate() {
                let bo = bias[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    out
}

/// Convolution backward. Accumulates into `dw` and `dbias`; returns `dx`
/// when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * cols_n];
    let mut dcols = if want_dx {
        vec![0.0; rows * cols_n]
    } else {
        Vec::new()
    };
    let mut dx = if want_dx {
        vec![0.0; batch * g.in_len()]
    } else {
        Vec::new()
    };
    let mut dw = dw;
    if let Some(db) = dbias {
        for b in 0..batch {
            let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
            for (o, chunk) in dyb.chunks(cols_n).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
            }
        }
    }
    for b in 0..batch {
        let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
            // dw[O × rows] += dy[O × cols_n] · colsᵀ[cols_n × rows]
            gemm(
                g.out_channels,
                cols_n,
                rows,
                dyb,
                Strides(cols_n, 1),
                &cols,
                Strides(1, cols_n),
                dw,
                true,
            );
        }
        if want_dx {
            // dcols[rows × cols_n] = wᵀ[rows × O] · dy[O × cols_n]
            gemm(
                rows,
                g.out_channels,
                cols_n,
                w,
                Strides(1, rows),
                dyb,
                Strides(cols_n, 1),
                &mut dcols,
                false,
            );
            col2im_add(g, &dcols, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
        }
    }
    want_dx.then_some(dx)
}

/// Non-overlapping max pooling with window = stride = `size`. Returns the
/// output and, per output element, the flat input index of the maximum.
pub fn maxpool_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = vec![f64::NEG_INFINITY; planes * oh * ow];
    let mut arg = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let o = (p * oh + y) * ow + xo;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + y * size * w + xo * size;
                for dy in 0..size {
                    let row = base + (y * size + dy) * w + xo * size;
                    for dx in 0..size {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_i = row + dx;
                        }
                    }
                }
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; g.out_channels * oh * ow];
        for o in 0..g.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..g.in_channels {
                        for ki in 0..g.kernel {
                            for kj in 0..g.kernel {
                                let iy = (y * g.stride + ki) as isize - g.padding as isize;
                                let ix = (xo * g.stride + kj) as isize - g.padding as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.height as isize
                                    || ix >= g.width as isize
                                {
                                    continue;
                                }
                                acc += x[(c * g.height + iy as usize) * g.width + ix as usize]
                                    * w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + xo] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let g = ConvGeom {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
            height: 7,
            width: 6,
        };
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
        let fast = conv2d_forward(&g, 1, &x, &w, None);
        let slow = naive_conv(&g, &x, &w);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ones_kernel_sums_channels() {
        let g = ConvGeom {
            in_channels: 2,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
            height: 4,
            width: 4,
        };
        let mut x = vec![3.0; 16];
        x.extend(vec![5.0; 16]);
        let out = conv2d_forward(&g, 1, &x, &[1.0, 1.0], None);
        assert!(out.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = vec![1.0, 2.0, 5.0, 0.0, 3.0, 4.0, 1.0, 1.0];
        let (out, arg) = maxpool_forward(&x, 1, 2, 4, 2);
        assert_eq!(out, vec![4.0, 5.0]);
        assert_eq!(arg, vec![5, 2]);
    }
}
