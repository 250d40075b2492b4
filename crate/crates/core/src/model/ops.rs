//! Dense kernels for 3x3 same convolutions, 2x2 max pooling and
//! fully-connected layers. All tensors are row-major, channels first.

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n`.
/// `a_t` / `b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe buffers of at least m*k, k*n and
    // m*n elements, checked by the debug assertion and by construction at
    // every call site.
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

/// Unfolds a `c x h x w` tensor into a `(c * 9) x (h * w)` patch matrix
/// with zero padding of one pixel.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input.
pub(crate) fn col2im(col: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    dx[..c * hw].fill(0.0);
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pool; odd trailing rows/columns are dropped. Returns the
/// flat input index of each selected maximum.
pub(crate) fn maxpool_forward(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], arg: &mut [u32]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                let o = ci * oh * ow + oy * ow + ox;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward(dout: &[f64], arg: &[u32], dx: &mut [f64]) {
    dx.fill(0.0);
    for (g, &i) in dout.iter().zip(arg) {
        dx[i as usize] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], out_c: usize) -> Vec<f64> {
        let mut out = vec![0.0; out_c * h * w];
        for o in 0..out_c {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    s += k[((o * c + ci) * 9) + (ky * 3 + kx) as usize]
                                        * x[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[o * h * w + y as usize * w + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let (c, h, w, oc) = (3, 5, 7, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..oc * c * 9).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut col = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut col);
        let mut out = vec![0.0; oc * h * w];
        gemm(oc, c * 9, h * w, &k, false, &col, false, 0.0, &mut out);
        assert_eq!(out, naive_conv(&x, c, h, w, &k, oc));
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 4, 6);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut col);
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_maxima_and_routes_gradients() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0];
        let mut out = [0.0; 2];
        let mut arg = [0u32; 2];
        maxpool_forward(&x, 1, 2, 4, &mut out, &mut arg);
        assert_eq!(out, [5.0, 9.0]);
        let mut dx = [0.0; 8];
        maxpool_backward(&[1.0, 2.0], &arg, &mut dx);
        assert_eq!(dx, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
