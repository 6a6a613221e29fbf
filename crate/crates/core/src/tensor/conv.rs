//! im2col convolution kernels. Layout is NCHW, weights `[cout, cin, kh, kw]`.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

/// C = A·B + beta·C for an `m×k` by `k×n` product, all operands strided.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    let span = |rs: usize, cs: usize, r: usize, c: usize| (r - 1) * rs + (c - 1) * cs + 1;
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= span(rsc, csc, m, n));
    if k > 0 {
        assert!(a.len() >= span(rsa, csa, m, k) && b.len() >= span(rsb, csb, k, n));
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// C[m×n] = A·B + beta·C with C row-major contiguous.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided((m, k, n), a, sa, b, sb, beta, c, (n, 1));
}

/// Output columns `ow` whose input column `ow·stride + kj − pad` is inside `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let (s, pad) = (g.stride as isize, g.pad as isize);
    let off = kj as isize - pad;
    // ow·s + off >= 0  and  ow·s + off <= w − 1
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = (g.w as isize - 1 - off).div_euclid(s) + 1;
    let lo = lo.clamp(0, g.wo as isize) as usize;
    let hi = hi.clamp(0, g.wo as isize) as usize;
    (lo, hi.max(lo))
}

/// Writes image `x` into columns `[off, off + P)` of a row-major `[K, ld]` matrix.
fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64], ld: usize, off: usize) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * ld + off..row * ld + off + p];
                let (lo, hi) = valid_cols(g, kj);
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize || lo == hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (o, i) in out_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *o = *i;
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f64], ld: usize, off: usize, dx: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * ld + off..row * ld + off + p];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let first = lo * g.stride + kj - g.pad;
                    let s_row = &src[oh * g.wo + lo..oh * g.wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + (hi - lo)].iter_mut().zip(s_row) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(s_row) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Column matrices for the whole batch: `N` contiguous `[K, P]` blocks.
fn im2col_batch(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let (k, p) = (g.k(), g.p());
    let mut col = vec![0.0; g.n * k * p];
    let img = g.cin * g.h * g.w;
    for (b, block) in col.chunks_mut(k * p).enumerate() {
        im2col(g, &x[b * img..(b + 1) * img], block, p, 0);
    }
    col
}

fn forward_cols(g: &ConvGeom, col: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![0.0; g.n * g.cout * p];
    if let Some(bias) = bias {
        for (row, bv) in out.chunks_mut(p).zip(bias.iter().cycle()) {
            row.fill(*bv);
        }
    }
    for b in 0..g.n {
        let ob = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        gemm(g.cout, k, p, weight, (k, 1), &col[b * k * p..], (p, 1), 1.0, ob);
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

fn backward_cols(
    g: &ConvGeom,
    col: &[f64],
    weight: &[f64],
    dout: &[f64],
    (want_dx, want_dw, want_db): (bool, bool, bool),
) -> ConvGrads {
    let (k, p) = (g.k(), g.p());
    let db = want_db.then(|| bias_grad(g, dout));
    let mut dw = want_dw.then(|| vec![0.0; weight.len()]);
    let img = g.cin * g.h * g.w;
    let mut dx = want_dx.then(|| vec![0.0; g.n * img]);
    let mut dcol = if want_dx { vec![0.0; k * p] } else { Vec::new() };
    for b in 0..g.n {
        let dob = &dout[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(dw) = dw.as_mut() {
            // dW[cout×k] += dout_b[cout×p] · col_bᵀ[p×k]
            gemm(g.cout, p, k, dob, (p, 1), &col[b * k * p..], (1, p), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[k×p] = Wᵀ[k×cout] · dout_b[cout×p]
            gemm(k, g.cout, p, weight, (1, k), dob, (p, 1), 0.0, &mut dcol);
            col2im(g, &dcol, p, 0, &mut dx[b * img..(b + 1) * img]);
        }
    }
    ConvGrads { dx, dw, db }
}

fn bias_grad(g: &ConvGeom, dout: &[f64]) -> Vec<f64> {
    let p = g.p();
    let mut db = vec![0.0; g.cout];
    for (row, d) in dout.chunks(p).zip((0..g.cout).cycle()) {
        db[d] += row.iter().sum::<f64>();
    }
    db
}

// Stride-1 convolutions skip im2col: with the input zero-padded to
// `hp × wp`, each kernel tap is one GEMM whose right operand is the padded
// image shifted by the tap offset. Outputs are computed on rows of width
// `wp`; the trailing `kw − 1` columns of each row are scratch.

fn padded_dims(g: &ConvGeom) -> (usize, usize) {
    (g.h + 2 * g.pad, g.w + 2 * g.pad)
}

fn pad_batch(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let (hp, wp) = padded_dims(g);
    let mut xp = vec![0.0; g.n * g.cin * hp * wp + g.kw];
    for (plane, dst) in x.chunks(g.h * g.w).zip(xp.chunks_mut(hp * wp)) {
        for (y, row) in plane.chunks(g.w).enumerate() {
            let start = (y + g.pad) * wp + g.pad;
            dst[start..start + g.w].copy_from_slice(row);
        }
    }
    xp
}

fn forward_shift(g: &ConvGeom, xp: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (hp, wp) = padded_dims(g);
    let taps = g.kh * g.kw;
    let len = g.ho * wp;
    let mut acc = vec![0.0; g.cout * len];
    let mut out = vec![0.0; g.n * g.cout * g.p()];
    for (b, ob) in out.chunks_mut(g.cout * g.p()).enumerate() {
        let base = b * g.cin * hp * wp;
        for t in 0..taps {
            let off = base + (t / g.kw) * wp + t % g.kw;
            let beta = if t == 0 { 0.0 } else { 1.0 };
            gemm(g.cout, g.cin, len, &weight[t..], (g.cin * taps, taps), &xp[off..], (hp * wp, 1), beta, &mut acc);
        }
        for (co, plane) in ob.chunks_mut(g.p()).enumerate() {
            let bv = bias.map_or(0.0, |bs| bs[co]);
            for (y, row) in plane.chunks_mut(g.wo).enumerate() {
                let src = &acc[co * len + y * wp..co * len + y * wp + g.wo];
                for (o, v) in row.iter_mut().zip(src) {
                    *o = v + bv;
                }
            }
        }
    }
    out
}

fn backward_shift(
    g: &ConvGeom,
    xp: &[f64],
    weight: &[f64],
    dout: &[f64],
    (want_dx, want_dw, want_db): (bool, bool, bool),
) -> ConvGrads {
    let (hp, wp) = padded_dims(g);
    let taps = g.kh * g.kw;
    let len = g.ho * wp;
    let img = g.cin * g.h * g.w;
    let db = want_db.then(|| bias_grad(g, dout));
    let mut dw = want_dw.then(|| vec![0.0; weight.len()]);
    let mut dx = want_dx.then(|| vec![0.0; g.n * img]);
    let mut dacc = vec![0.0; g.cout * len];
    let mut dxp = if want_dx { vec![0.0; g.cin * hp * wp + g.kw] } else { Vec::new() };
    for b in 0..g.n {
        let dob = &dout[b * g.cout * g.p()..(b + 1) * g.cout * g.p()];
        for (co, plane) in dob.chunks(g.p()).enumerate() {
            for (y, row) in plane.chunks(g.wo).enumerate() {
                dacc[co * len + y * wp..co * len + y * wp + g.wo].copy_from_slice(row);
            }
        }
        let base = b * g.cin * hp * wp;
        for t in 0..taps {
            let off = (t / g.kw) * wp + t % g.kw;
            if let Some(dw) = dw.as_mut() {
                // dW_t[cout×cin] += dacc[cout×len] · shifted_xᵀ[len×cin]
                gemm_strided(
                    (g.cout, len, g.cin),
                    &dacc,
                    (len, 1),
                    &xp[base + off..],
                    (1, hp * wp),
                    1.0,
                    &mut dw[t..],
                    (g.cin * taps, taps),
                );
            }
            if want_dx {
                // shifted_dx[cin×len] += W_tᵀ[cin×cout] · dacc[cout×len]
                gemm_strided(
                    (g.cin, g.cout, len),
                    &weight[t..],
                    (taps, g.cin * taps),
                    &dacc,
                    (len, 1),
                    1.0,
                    &mut dxp[off..],
                    (hp * wp, 1),
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            for (ci, plane) in dx[b * img..(b + 1) * img].chunks_mut(g.h * g.w).enumerate() {
                for (y, row) in plane.chunks_mut(g.w).enumerate() {
                    let start = ci * hp * wp + (y + g.pad) * wp + g.pad;
                    row.copy_from_slice(&dxp[start..start + g.w]);
                }
            }
            dxp.fill(0.0);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Forward-pass workspace kept for the backward pass: the padded input for
/// stride 1, the column matrices otherwise.
pub(crate) fn lower(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    if g.stride == 1 {
        pad_batch(g, x)
    } else {
        im2col_batch(g, x)
    }
}

pub(crate) fn forward(g: &ConvGeom, lowered: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    if g.stride == 1 {
        forward_shift(g, lowered, weight, bias)
    } else {
        forward_cols(g, lowered, weight, bias)
    }
}

pub(crate) fn backward(
    g: &ConvGeom,
    lowered: &[f64],
    weight: &[f64],
    dout: &[f64],
    wants: (bool, bool, bool),
) -> ConvGrads {
    if g.stride == 1 {
        backward_shift(g, lowered, weight, dout, wants)
    } else {
        backward_cols(g, lowered, weight, dout, wants)
    }
}
