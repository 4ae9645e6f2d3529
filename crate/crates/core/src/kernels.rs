//! Slice-level inner loops shared by the convolution layers.
//!
//! Everything here is valid cross-correlation: `out[j] = Σ_i w[i]·x[j·stride + i]`,
//! no kernel flip and no padding. Stride-1 paths are register-blocked over
//! output positions; every reduction uses a fixed accumulation order, so
//! results are deterministic for a given input.

/// Output positions kept in registers by the blocked forward kernels.
const JB: usize = 16;
/// Vector lanes used by the blocked reductions.
const LANES: usize = 8;

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Output length of a valid correlation, or `None` if the kernel does not fit.
pub(crate) fn output_len(input_len: usize, kernel_len: usize, stride: usize) -> Option<usize> {
    if kernel_len == 0 || stride == 0 || input_len < kernel_len {
        None
    } else {
        Some((input_len - kernel_len) / stride + 1)
    }
}

/// Per-tap input views for a strided correlation: entry `c·k + i` is a slice
/// whose element `j` equals `x[c][j·stride + i]`, so every tap becomes a
/// contiguous stream. Stride > 1 deinterleaves `x` into phases in `buf`.
fn tap_sources<'a>(x: &'a [f64], in_len: usize, k: usize, stride: usize, buf: &'a mut Vec<f64>) -> Vec<&'a [f64]> {
    let c_count = x.len() / in_len;
    if stride == 1 {
        let mut srcs = Vec::with_capacity(c_count * k);
        for c in 0..c_count {
            let xc = &x[c * in_len..(c + 1) * in_len];
            srcs.extend((0..k).map(|i| &xc[i..]));
        }
        return srcs;
    }
    let phase_len = in_len.div_ceil(stride);
    buf.clear();
    buf.resize(c_count * stride * phase_len, 0.0);
    for c in 0..c_count {
        for (p, &v) in x[c * in_len..(c + 1) * in_len].iter().enumerate() {
            buf[(c * stride + p % stride) * phase_len + p / stride] = v;
        }
    }
    let buf: &'a [f64] = buf;
    let mut srcs = Vec::with_capacity(c_count * k);
    for c in 0..c_count {
        for i in 0..k {
            let base = (c * stride + i % stride) * phase_len + i / stride;
            srcs.push(&buf[base..(c * stride + i % stride + 1) * phase_len]);
        }
    }
    srcs
}

/// `outs[b][j] += Σ_t weights[b][t]·srcs[t][j]` for `j < outs[b].len()`,
/// accumulated in `t` order on top of the existing value. Targets are
/// processed `OB` at a time so every source load feeds `OB` accumulators.
fn accumulate(srcs: &[&[f64]], weights: &[&[f64]], outs: &mut [&mut [f64]]) {
    let mut b = 0;
    while b < outs.len() {
        b += match outs.len() - b {
            1 => accumulate_block::<1>(srcs, &weights[b..], &mut outs[b..]),
            2 => accumulate_block::<2>(srcs, &weights[b..], &mut outs[b..]),
            3 => accumulate_block::<3>(srcs, &weights[b..], &mut outs[b..]),
            _ => accumulate_block::<4>(srcs, &weights[b..], &mut outs[b..]),
        };
    }
}

#[inline]
fn accumulate_block<const OB: usize>(srcs: &[&[f64]], weights: &[&[f64]], outs: &mut [&mut [f64]]) -> usize {
    let n = outs[0].len();
    let w: [&[f64]; OB] = std::array::from_fn(|b| weights[b]);
    let mut j0 = 0;
    while j0 + JB <= n {
        let mut acc = [[0.0f64; JB]; OB];
        for (a, o) in acc.iter_mut().zip(outs.iter()) {
            a.copy_from_slice(&o[j0..j0 + JB]);
        }
        for (t, src) in srcs.iter().enumerate() {
            let xs: &[f64; JB] = src[j0..j0 + JB].try_into().unwrap();
            for b in 0..OB {
                let wt = w[b][t];
                for jj in 0..JB {
                    acc[b][jj] += wt * xs[jj];
                }
            }
        }
        for (a, o) in acc.iter().zip(outs.iter_mut()) {
            o[j0..j0 + JB].copy_from_slice(a);
        }
        j0 += JB;
    }
    if j0 < n {
        for (b, o) in outs[..OB].iter_mut().enumerate() {
            let tail = &mut o[j0..n];
            for (t, src) in srcs.iter().enumerate() {
                axpy(tail, w[b][t], &src[j0..n]);
            }
        }
    }
    OB
}

/// Multi-channel forward correlation for one sample.
///
/// `x` is `[C][in_len]`, `w` is `[O][C][K]`, `out` is `[O][n]` and is
/// overwritten with `bias[o] + Σ_c Σ_i w[o][c][i]·x[c][j·stride + i]`,
/// accumulated in `(c, i)` order for every element.
pub(crate) fn correlate_multi(
    x: &[f64],
    in_len: usize,
    w: &[f64],
    k: usize,
    bias: Option<&[f64]>,
    stride: usize,
    out: &mut [f64],
) {
    let c_count = x.len() / in_len;
    let o_count = w.len() / (c_count * k);
    let n = out.len() / o_count;
    let mut buf = Vec::new();
    let srcs = tap_sources(x, in_len, k, stride, &mut buf);
    let weights: Vec<&[f64]> = w.chunks_exact(c_count * k).collect();
    let mut outs: Vec<&mut [f64]> = out.chunks_exact_mut(n).collect();
    for (o, y) in outs.iter_mut().enumerate() {
        y.fill(bias.map_or(0.0, |b| b[o]));
    }
    accumulate(&srcs, &weights, &mut outs);
}

/// `gw[o][c][i] += Σ_j g[o][j]·x[c][j·stride + i]` for a whole layer.
pub(crate) fn kernel_grad_multi(g: &[f64], x: &[f64], in_len: usize, k: usize, stride: usize, gw: &mut [f64]) {
    let c_count = x.len() / in_len;
    let o_count = gw.len() / (c_count * k);
    let n = g.len() / o_count;
    let mut buf = Vec::new();
    let srcs = tap_sources(x, in_len, k, stride, &mut buf);
    for (go, gwo) in g.chunks_exact(n).zip(gw.chunks_exact_mut(c_count * k)) {
        let mut t = 0;
        while t < srcs.len() {
            let rest = &srcs[t..];
            let out = &mut gwo[t..];
            t += match rest.len() {
                1 => dots::<1>(go, rest, out),
                2 => dots::<2>(go, rest, out),
                3 => dots::<3>(go, rest, out),
                4 => dots::<4>(go, rest, out),
                5 => dots::<5>(go, rest, out),
                6 => dots::<6>(go, rest, out),
                7 => dots::<7>(go, rest, out),
                _ => dots::<8>(go, rest, out),
            };
        }
    }
}

/// `out[o] += ⟨w[o], x⟩` for a row-major `w` with `x.len()` columns, four
/// rows per pass so each `x` load feeds independent accumulators.
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(w.len(), n * out.len());
    let row = |o: usize| &w[o * n..(o + 1) * n];
    let mut o = 0;
    while o + 4 <= out.len() {
        o += dots::<4>(x, &[row(o), row(o + 1), row(o + 2), row(o + 3)], &mut out[o..o + 4]);
    }
    while o < out.len() {
        o += dots::<1>(x, &[row(o)], &mut out[o..o + 1]);
    }
}

/// `outs[b][o] += ⟨w[o], xs[b]⟩` for every sample `b`. Each weight row is
/// read once per four samples. Per element the arithmetic matches
/// [`matvec_acc`], so batched and single-sample results are bit-identical.
pub(crate) fn matvec_batch_acc(w: &[f64], xs: &[&[f64]], outs: &mut [Vec<f64>]) {
    let Some(n) = xs.first().map(|x| x.len()) else {
        return;
    };
    let rows = w.len() / n.max(1);
    for o in 0..rows {
        let row = &w[o * n..(o + 1) * n];
        let mut b = 0;
        while b < xs.len() {
            let mut tmp = [0.0; 4];
            let done = match xs.len() - b {
                1 => dots::<1>(row, &xs[b..], &mut tmp),
                2 => dots::<2>(row, &xs[b..], &mut tmp),
                3 => dots::<3>(row, &xs[b..], &mut tmp),
                _ => dots::<4>(row, &xs[b..], &mut tmp),
            };
            for (i, v) in tmp[..done].iter().enumerate() {
                outs[b + i][o] += v;
            }
            b += done;
        }
    }
}

/// `out[t] += ⟨g, srcs[t][..g.len()]⟩` for `T` sources at once; returns `T`.
#[inline]
fn dots<const T: usize>(g: &[f64], srcs: &[&[f64]], out: &mut [f64]) -> usize {
    let n = g.len();
    let s: [&[f64]; T] = std::array::from_fn(|t| &srcs[t][..n]);
    let mut acc = [[0.0f64; LANES]; T];
    let mut j = 0;
    while j + LANES <= n {
        let gv: &[f64; LANES] = g[j..j + LANES].try_into().unwrap();
        for t in 0..T {
            let xv: &[f64; LANES] = s[t][j..j + LANES].try_into().unwrap();
            for l in 0..LANES {
                acc[t][l] += gv[l] * xv[l];
            }
        }
        j += LANES;
    }
    for t in 0..T {
        let mut tail = 0.0;
        for jj in j..n {
            tail += g[jj] * s[t][jj];
        }
        out[t] += reduce_lanes(&acc[t]) + tail;
    }
    T
}

#[inline]
fn reduce_lanes(a: &[f64; LANES]) -> f64 {
    let mut half = [0.0; LANES / 2];
    for l in 0..LANES / 2 {
        half[l] = a[l] + a[l + LANES / 2];
    }
    half.iter().fold(0.0, |s, v| s + v)
}

/// Multi-channel input gradient for one sample:
/// `gx[c][j·stride + i] += Σ_o w[o][c][i]·g[o][j]`.
///
/// Each input phase `r` (positions `≡ r mod stride`) is a stride-1 full
/// correlation of the zero-padded output gradients, so it reuses the blocked
/// forward kernel.
pub(crate) fn input_grad_multi(g: &[f64], w: &[f64], k: usize, stride: usize, gx: &mut [f64], in_len: usize) {
    let c_count = gx.len() / in_len;
    let o_count = w.len() / (c_count * k);
    let n = g.len() / o_count;
    let phase_len = in_len.div_ceil(stride);
    let dmax = (k - 1) / stride;
    // gpad[o][dmax + j] = g[o][j], zero elsewhere
    let pad_len = dmax + phase_len.max(n);
    let mut gpad = vec![0.0; o_count * pad_len];
    for o in 0..o_count {
        gpad[o * pad_len + dmax..o * pad_len + dmax + n].copy_from_slice(&g[o * n..(o + 1) * n]);
    }
    let mut phase = vec![0.0; c_count * phase_len];
    for r in 0..stride.min(k) {
        let taps: Vec<usize> = (r..k).step_by(stride).collect();
        let mut srcs: Vec<&[f64]> = Vec::with_capacity(o_count * taps.len());
        for o in 0..o_count {
            for &i in &taps {
                srcs.push(&gpad[o * pad_len + dmax - i / stride..(o + 1) * pad_len]);
            }
        }
        let mut wts = Vec::with_capacity(c_count * srcs.len());
        for c in 0..c_count {
            for o in 0..o_count {
                wts.extend(taps.iter().map(|&i| w[(o * c_count + c) * k + i]));
            }
        }
        let weights: Vec<&[f64]> = wts.chunks_exact(srcs.len()).collect();
        let len_r = (in_len - r).div_ceil(stride);
        phase.fill(0.0);
        let mut outs: Vec<&mut [f64]> = phase.chunks_exact_mut(phase_len).map(|p| &mut p[..len_r]).collect();
        accumulate(&srcs, &weights, &mut outs);
        for c in 0..c_count {
            let gxc = &mut gx[c * in_len..(c + 1) * in_len];
            for (m, &v) in phase[c * phase_len..c * phase_len + len_r].iter().enumerate() {
                gxc[m * stride + r] += v;
            }
        }
    }
}
