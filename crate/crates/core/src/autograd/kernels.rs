//! Numeric kernels behind the graph ops: GEMM, im2col convolution and the
//! bilinear grid sampler. All buffers are contiguous row-major.

/// `C = alpha * A·B + beta * C` with explicit strides, so transposes are free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents match (m, k, n) under the given strides;
    // the debug assertions above and in callers check the output extent.
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

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one image `[C, H, W]` into `[C*kh*kw, oh*ow]`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ncol = g.col_cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
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

/// Adjoint of [`im2col`]: scatter-add columns back into `[C, H, W]`.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let ncol = g.col_cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, output `[N,O,oh,ow]`.
pub(crate) fn conv2d_forward(x: &[f64], n: usize, w: &[f64], bias: Option<&[f64]>, o: usize, g: &ConvGeom) -> Vec<f64> {
    let in_sz = g.c * g.h * g.w;
    let out_sz = o * g.oh * g.ow;
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let mut out = vec![0.0; n * out_sz];
    let mut cols = vec![0.0; rows * ncol];
    for b in 0..n {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        if let Some(bias) = bias {
            for (oc, chunk) in ob.chunks_mut(ncol).enumerate() {
                chunk.fill(bias[oc]);
            }
        }
        im2col(xb, g, &mut cols);
        gemm(
            o,
            rows,
            ncol,
            w,
            (rows as isize, 1),
            &cols,
            (ncol as isize, 1),
            if bias.is_some() { 1.0 } else { 0.0 },
            ob,
        );
    }
    out
}

/// Gradients of a convolution; any of the outputs may be skipped.
pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    n: usize,
    w: &[f64],
    o: usize,
    g: &ConvGeom,
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let in_sz = g.c * g.h * g.w;
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let out_sz = o * ncol;
    let mut dx = need_dx.then(|| vec![0.0; n * in_sz]);
    let mut dw = need_dw.then(|| vec![0.0; o * rows]);
    let mut db = need_db.then(|| vec![0.0; o]);
    let mut cols = vec![0.0; rows * ncol];
    let mut dcols = if need_dx { vec![0.0; rows * ncol] } else { Vec::new() };
    for b in 0..n {
        let dyb = &dy[b * out_sz..(b + 1) * out_sz];
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in dyb.chunks(ncol).enumerate() {
                db[oc] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[b * in_sz..(b + 1) * in_sz], g, &mut cols);
            // dW[o, r] += dY[o, p] * cols[r, p]
            gemm(o, ncol, rows, dyb, (ncol as isize, 1), &cols, (1, ncol as isize), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[r, p] = W[o, r] * dY[o, p]
            gemm(rows, o, ncol, w, (1, rows as isize), dyb, (ncol as isize, 1), 0.0, &mut dcols);
            col2im(&dcols, g, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Normalized output-pixel-centre coordinate (align_corners = false).
#[inline]
pub(crate) fn base_coord(i: usize, size: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / size as f64 - 1.0
}

/// Sampling grid `[N, oh, ow, 2]` (x then y, normalized to [-1, 1]) from
/// row-major 2x3 affine matrices `theta: [N, 6]`.
pub(crate) fn affine_grid(theta: &[f64], n: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut grid = vec![0.0; n * oh * ow * 2];
    for b in 0..n {
        let t = &theta[b * 6..b * 6 + 6];
        for i in 0..oh {
            let ys = base_coord(i, oh);
            for j in 0..ow {
                let xs = base_coord(j, ow);
                let k = ((b * oh + i) * ow + j) * 2;
                grid[k] = t[0] * xs + t[1] * ys + t[2];
                grid[k + 1] = t[3] * xs + t[4] * ys + t[5];
            }
        }
    }
    grid
}

pub(crate) fn affine_grid_backward(dgrid: &[f64], n: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut dtheta = vec![0.0; n * 6];
    for b in 0..n {
        let dt = &mut dtheta[b * 6..b * 6 + 6];
        for i in 0..oh {
            let ys = base_coord(i, oh);
            for j in 0..ow {
                let xs = base_coord(j, ow);
                let k = ((b * oh + i) * ow + j) * 2;
                let (gx, gy) = (dgrid[k], dgrid[k + 1]);
                dt[0] += gx * xs;
                dt[1] += gx * ys;
                dt[2] += gx;
                dt[3] += gy * xs;
                dt[4] += gy * ys;
                dt[5] += gy;
            }
        }
    }
    dtheta
}

/// Corner indices and weights of one bilinear tap.
struct Tap {
    x0: isize,
    y0: isize,
    fx: f64,
    fy: f64,
    /// d(ix)/d(gx) and d(iy)/d(gy)
    sx: f64,
    sy: f64,
}

#[inline]
fn tap(gx: f64, gy: f64, h: usize, w: usize) -> Tap {
    let ix = ((gx + 1.0) * w as f64 - 1.0) * 0.5;
    let iy = ((gy + 1.0) * h as f64 - 1.0) * 0.5;
    let x0 = ix.floor();
    let y0 = iy.floor();
    Tap {
        x0: x0 as isize,
        y0: y0 as isize,
        fx: ix - x0,
        fy: iy - y0,
        sx: w as f64 * 0.5,
        sy: h as f64 * 0.5,
    }
}

#[inline]
fn inside(y: isize, x: isize, h: usize, w: usize) -> bool {
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w
}

/// Bilinear sampling with zero padding. `x: [N,C,H,W]`, `grid: [N,oh,ow,2]`.
pub(crate) fn grid_sample(x: &[f64], (n, c, h, w): (usize, usize, usize, usize), grid: &[f64], oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c * oh * ow];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let k = ((b * oh + i) * ow + j) * 2;
                let t = tap(grid[k], grid[k + 1], h, w);
                let corners = [
                    (t.y0, t.x0, (1.0 - t.fy) * (1.0 - t.fx)),
                    (t.y0, t.x0 + 1, (1.0 - t.fy) * t.fx),
                    (t.y0 + 1, t.x0, t.fy * (1.0 - t.fx)),
                    (t.y0 + 1, t.x0 + 1, t.fy * t.fx),
                ];
                for ch in 0..c {
                    let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    let mut v = 0.0;
                    for &(yy, xx, wt) in &corners {
                        if wt != 0.0 && inside(yy, xx, h, w) {
                            v += wt * plane[yy as usize * w + xx as usize];
                        }
                    }
                    out[((b * c + ch) * oh + i) * ow + j] = v;
                }
            }
        }
    }
    out
}

/// Gradients of [`grid_sample`] with respect to the input map and the grid.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grid_sample_backward(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    grid: &[f64],
    oh: usize,
    ow: usize,
    dy: &[f64],
    need_dx: bool,
    need_dgrid: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dgrid = need_dgrid.then(|| vec![0.0; grid.len()]);
    let at = |plane: &[f64], y: isize, xx: isize| -> f64 {
        if inside(y, xx, h, w) {
            plane[y as usize * w + xx as usize]
        } else {
            0.0
        }
    };
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let k = ((b * oh + i) * ow + j) * 2;
                let t = tap(grid[k], grid[k + 1], h, w);
                let (mut dix, mut diy) = (0.0, 0.0);
                for ch in 0..c {
                    let g = dy[((b * c + ch) * oh + i) * ow + j];
                    if g == 0.0 {
                        continue;
                    }
                    let off = (b * c + ch) * h * w;
                    let plane = &x[off..off + h * w];
                    let v00 = at(plane, t.y0, t.x0);
                    let v01 = at(plane, t.y0, t.x0 + 1);
                    let v10 = at(plane, t.y0 + 1, t.x0);
                    let v11 = at(plane, t.y0 + 1, t.x0 + 1);
                    dix += g * ((v01 - v00) * (1.0 - t.fy) + (v11 - v10) * t.fy);
                    diy += g * ((v10 - v00) * (1.0 - t.fx) + (v11 - v01) * t.fx);
                    if let Some(dx) = dx.as_mut() {
                        let corners = [
                            (t.y0, t.x0, (1.0 - t.fy) * (1.0 - t.fx)),
                            (t.y0, t.x0 + 1, (1.0 - t.fy) * t.fx),
                            (t.y0 + 1, t.x0, t.fy * (1.0 - t.fx)),
                            (t.y0 + 1, t.x0 + 1, t.fy * t.fx),
                        ];
                        for &(yy, xx, wt) in &corners {
                            if inside(yy, xx, h, w) {
                                dx[off + yy as usize * w + xx as usize] += wt * g;
                            }
                        }
                    }
                }
                if let Some(dg) = dgrid.as_mut() {
                    dg[k] = dix * t.sx;
                    dg[k + 1] = diy * t.sy;
                }
            }
        }
    }
    (dx, dgrid)
}
