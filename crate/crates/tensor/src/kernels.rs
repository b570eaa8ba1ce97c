//! Raw numeric kernels shared by the forward and backward passes.

/// `c (+)= op(a) · op(b)` for row-major operands.
///
/// `op(a)` is `m × k`; when `a_trans` is set, `a` is stored as `k × m`.
/// `op(b)` is `k × n`; when `b_trans` is set, `b` is stored as `n × k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
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

/// Additive value standing in for −∞ before the softmax.
pub(crate) const MASK_SENTINEL: f64 = -1e9;

/// Softmax of one row restricted to `allowed`; disallowed entries are exactly 0.
/// Returns `false` if no entry is allowed.
pub(crate) fn masked_softmax_row(x: &[f64], allowed: &[bool], out: &mut [f64]) -> bool {
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for (j, &v) in x.iter().enumerate() {
        let s = if allowed[j] { v } else { v + MASK_SENTINEL };
        max = max.max(s);
        any |= allowed[j];
    }
    if !any {
        return false;
    }
    let mut sum = 0.0;
    for (j, &v) in x.iter().enumerate() {
        let s = if allowed[j] { v } else { v + MASK_SENTINEL };
        let e = (s - max).exp();
        out[j] = e;
        sum += e;
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = if allowed[j] { *o / sum } else { 0.0 };
    }
    true
}

/// Log-sum-exp of a row, stabilised by the row maximum.
pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Geometry of a batched 1-D convolution over `[batch, len, c_in]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// `(len + 2·pad − kernel) / stride + 1`, floored.
    pub fn out_len(&self) -> usize {
        (self.len + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let lo = g.out_len();
    let width = g.kernel * g.c_in;
    let mut cols = vec![0.0; g.batch * lo * width];
    for b in 0..g.batch {
        for t in 0..lo {
            let row = &mut cols[(b * lo + t) * width..(b * lo + t + 1) * width];
            for j in 0..g.kernel {
                let src = (t * g.stride + j) as isize - g.pad as isize;
                if src < 0 || src as usize >= g.len {
                    continue;
                }
                let off = (b * g.len + src as usize) * g.c_in;
                row[j * g.c_in..(j + 1) * g.c_in].copy_from_slice(&x[off..off + g.c_in]);
            }
        }
    }
    cols
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let lo = g.out_len();
    let width = g.kernel * g.c_in;
    for b in 0..g.batch {
        for t in 0..lo {
            let row = &cols[(b * lo + t) * width..(b * lo + t + 1) * width];
            for j in 0..g.kernel {
                let src = (t * g.stride + j) as isize - g.pad as isize;
                if src < 0 || src as usize >= g.len {
                    continue;
                }
                let off = (b * g.len + src as usize) * g.c_in;
                for (d, s) in dx[off..off + g.c_in]
                    .iter_mut()
                    .zip(&row[j * g.c_in..(j + 1) * g.c_in])
                {
                    *d += s;
                }
            }
        }
    }
}
