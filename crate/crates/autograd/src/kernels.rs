//! Forward and backward kernels for every [`Op`].

use rayon::prelude::*;

use crate::op::{Aux, Op, ZERO_ROW};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

const PAR_CHUNK: usize = 1 << 14;
const GEMM_ROWS: usize = 256;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn unary<R: Real>(a: &[R], f: impl Fn(R) -> R + Sync) -> Vec<R> {
    let mut out = vec![R::zero(); a.len()];
    out.par_chunks_mut(PAR_CHUNK)
        .zip(a.par_chunks(PAR_CHUNK))
        .for_each(|(o, i)| o.iter_mut().zip(i).for_each(|(o, &i)| *o = f(i)));
    out
}

fn binary<R: Real>(a: &[R], b: &[R], f: impl Fn(R, R) -> R + Sync) -> Vec<R> {
    assert_eq!(a.len(), b.len(), "elementwise length mismatch");
    let mut out = vec![R::zero(); a.len()];
    out.par_chunks_mut(PAR_CHUNK)
        .zip(a.par_chunks(PAR_CHUNK).zip(b.par_chunks(PAR_CHUNK)))
        .for_each(|(o, (x, y))| {
            for ((o, &x), &y) in o.iter_mut().zip(x).zip(y) {
                *o = f(x, y);
            }
        });
    out
}

fn row_broadcast<R: Real>(a: &[R], row: &[R], f: impl Fn(R, R) -> R + Sync) -> Vec<R> {
    let c = row.len();
    assert!(c > 0 && a.len() % c == 0, "row broadcast: {} not a multiple of {c}", a.len());
    let mut out = vec![R::zero(); a.len()];
    let chunk = c * (PAR_CHUNK / c).max(1);
    out.par_chunks_mut(chunk).zip(a.par_chunks(chunk)).for_each(|(o, x)| {
        for (orow, xrow) in o.chunks_mut(c).zip(x.chunks(c)) {
            for ((o, &x), &r) in orow.iter_mut().zip(xrow).zip(row) {
                *o = f(x, r);
            }
        }
    });
    out
}

fn col_sums<R: Real>(a: &[R], cols: usize, weight: Option<&[R]>) -> Vec<f64> {
    let mut acc = vec![0.0f64; cols];
    match weight {
        None => {
            for row in a.chunks(cols) {
                for (s, &v) in acc.iter_mut().zip(row) {
                    *s += v.f64();
                }
            }
        }
        Some(w) => {
            for (row, wrow) in a.chunks(cols).zip(w.chunks(cols)) {
                for ((s, &v), &u) in acc.iter_mut().zip(row).zip(wrow) {
                    *s += v.f64() * u.f64();
                }
            }
        }
    }
    acc
}

/// Row-chunked `c = a·b` into a fresh row-major `[am.rows, bm.cols]` buffer.
fn par_gemm<R: Real>(a: &[R], am: MatRef, b: &[R], bm: MatRef) -> Vec<R> {
    let (m, n) = (am.rows, bm.cols);
    let mut c = vec![R::zero(); m * n];
    if n == 0 {
        return c;
    }
    c.par_chunks_mut(GEMM_ROWS * n).enumerate().for_each(|(i, chunk)| {
        let r0 = i * GEMM_ROWS;
        let rows = chunk.len() / n;
        let sub = MatRef {
            offset: am.offset + r0 * am.rs,
            rows,
            ..am
        };
        gemm(R::one(), a, sub, b, bm, R::zero(), chunk, MatRef::row_major(0, rows, n));
    });
    c
}

fn sum_f64<R: Real>(a: &[R]) -> f64 {
    a.iter().map(|v| v.f64()).sum()
}

fn softmax_rows<R: Real>(x: &mut [R], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().fold(R::neg_infinity(), |m, &v| m.max(v));
        let mut total = R::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        let inv = R::one() / total;
        row.iter_mut().for_each(|v| *v = *v * inv);
    }
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` per row.
fn softmax_backward_rows<R: Real>(y: &[R], dy: &mut [R], cols: usize) {
    for (yr, dr) in y.chunks(cols).zip(dy.chunks_mut(cols)) {
        let dot = yr.iter().zip(dr.iter()).fold(R::zero(), |s, (&a, &b)| s + a * b);
        for (d, &p) in dr.iter_mut().zip(yr) {
            *d = p * (*d - dot);
        }
    }
}

fn gelu<R: Real>(x: R) -> R {
    let x3 = x * x * x;
    let t = (R::of(GELU_C) * (x + R::of(GELU_A) * x3)).tanh();
    R::of(0.5) * x * (R::one() + t)
}

fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::of(GELU_C);
    let a = R::of(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = R::of(0.5);
    half * (R::one() + t) + half * x * (R::one() - t * t) * c * (R::one() + R::of(3.0) * a * x * x)
}

/// Source coordinate and blend weight for half-pixel 2× upsampling.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn attention_dims(op_cols: usize, heads: usize, rows: usize, group_len: usize) -> (usize, usize, usize) {
    assert!(op_cols % 3 == 0, "attention input must pack q|k|v");
    let c = op_cols / 3;
    assert!(heads > 0 && c % heads == 0, "channels {c} not divisible by {heads} heads");
    assert!(group_len > 0 && rows % group_len == 0, "rows {rows} not divisible by group {group_len}");
    (c, c / heads, rows / group_len)
}

fn head_view(group: usize, len: usize, stride: usize, col: usize, d: usize) -> MatRef {
    MatRef {
        offset: group * len * stride + col,
        rows: len,
        cols: d,
        rs: stride,
        cs: 1,
    }
}

/// Evaluates `op` on its inputs.
pub fn forward<R: Real>(op: &Op, inputs: &[&Tensor<R>]) -> (Tensor<R>, Aux<R>) {
    assert_eq!(inputs.len(), op.arity(), "{:?} expects {} inputs", op.kind(), op.arity());
    let plain = |t: Tensor<R>| (t, Aux::None);
    match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Add | Op::Sub | Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            assert_eq!(a.shape(), b.shape(), "{:?} shape mismatch", op.kind());
            let data = match op {
                Op::Add => binary(a.data(), b.data(), |x, y| x + y),
                Op::Sub => binary(a.data(), b.data(), |x, y| x - y),
                _ => binary(a.data(), b.data(), |x, y| x * y),
            };
            plain(Tensor::new(a.shape().to_vec(), data))
        }
        Op::Scale(c) => {
            let c = R::of(*c);
            plain(Tensor::new(inputs[0].shape().to_vec(), unary(inputs[0].data(), |x| x * c)))
        }
        Op::AddScalar(c) => {
            let c = R::of(*c);
            plain(Tensor::new(inputs[0].shape().to_vec(), unary(inputs[0].data(), |x| x + c)))
        }
        Op::AddRow | Op::MulRow => {
            let (a, row) = (inputs[0], inputs[1]);
            assert_eq!(row.len(), a.cols(), "row operand length");
            let data = if matches!(op, Op::AddRow) {
                row_broadcast(a.data(), row.data(), |x, r| x + r)
            } else {
                row_broadcast(a.data(), row.data(), |x, r| x * r)
            };
            plain(Tensor::new(a.shape().to_vec(), data))
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D");
            let (k, m) = (b.shape()[0], b.shape()[1]);
            assert_eq!(a.cols(), k, "matmul inner dimension");
            let n = a.rows();
            let data = par_gemm(a.data(), MatRef::row_major(0, n, k), b.data(), MatRef::row_major(0, k, m));
            let mut shape = a.shape().to_vec();
            *shape.last_mut().expect("matmul lhs rank") = m;
            plain(Tensor::new(shape, data))
        }
        Op::Attention { heads, group_len } => {
            let x = inputs[0];
            let (rows, cols) = (x.rows(), x.cols());
            let (c, d, groups) = attention_dims(cols, *heads, rows, *group_len);
            let l = *group_len;
            let scale = R::of(1.0 / (d as f64).sqrt());
            let q = x.data();
            let mut out = vec![R::zero(); rows * c];
            let mut probs = vec![R::zero(); groups * heads * l * l];
            out.par_chunks_mut(l * c)
                .zip(probs.par_chunks_mut(heads * l * l))
                .enumerate()
                .for_each(|(g, (o, p))| {
                    for h in 0..*heads {
                        let ph = &mut p[h * l * l..(h + 1) * l * l];
                        let qv = head_view(g, l, cols, h * d, d);
                        let kv = head_view(g, l, cols, c + h * d, d);
                        let vv = head_view(g, l, cols, 2 * c + h * d, d);
                        gemm(scale, q, qv, q, kv.t(), R::zero(), ph, MatRef::row_major(0, l, l));
                        softmax_rows(ph, l);
                        let ov = head_view(0, l, c, h * d, d);
                        gemm(R::one(), ph, MatRef::row_major(0, l, l), q, vv, R::zero(), o, ov);
                    }
                });
            let mut shape = x.shape().to_vec();
            *shape.last_mut().expect("attention rank") = c;
            (Tensor::new(shape, out), Aux::Probs(probs))
        }
        Op::Softmax => {
            let x = inputs[0];
            let cols = x.cols();
            let mut data = x.data().to_vec();
            let chunk = cols * (PAR_CHUNK / cols.max(1)).max(1);
            data.par_chunks_mut(chunk).for_each(|c| softmax_rows(c, cols));
            plain(Tensor::new(x.shape().to_vec(), data))
        }
        Op::Gelu => plain(Tensor::new(inputs[0].shape().to_vec(), unary(inputs[0].data(), gelu))),
        Op::Square => plain(Tensor::new(inputs[0].shape().to_vec(), unary(inputs[0].data(), |x| x * x))),
        Op::Sqrt => plain(Tensor::new(inputs[0].shape().to_vec(), unary(inputs[0].data(), |x| x.sqrt()))),
        Op::Magnitude => {
            let x = inputs[0];
            assert_eq!(x.cols(), 2, "magnitude expects trailing dimension 2");
            let data: Vec<R> = x.data().chunks(2).map(|p| p[0].hypot(p[1])).collect();
            let shape = x.shape()[..x.shape().len() - 1].to_vec();
            plain(Tensor::new(shape, data))
        }
        Op::SumLast => {
            let x = inputs[0];
            let cols = x.cols();
            let data: Vec<R> = x.data().chunks(cols.max(1)).map(|r| R::of(sum_f64(r))).collect();
            let shape = x.shape()[..x.shape().len().saturating_sub(1)].to_vec();
            plain(Tensor::new(shape, data))
        }
        Op::Sum => plain(Tensor::scalar(R::of(sum_f64(inputs[0].data())))),
        Op::Mean => {
            let x = inputs[0];
            assert!(!x.is_empty(), "mean of empty tensor");
            plain(Tensor::scalar(R::of(sum_f64(x.data()) / x.len() as f64)))
        }
        Op::Gather { index } => {
            let x = inputs[0];
            let (rows, cols) = (x.rows(), x.cols());
            let mut out = vec![R::zero(); index.len() * cols];
            let src = x.data();
            let chunk_rows = (PAR_CHUNK / cols.max(1)).max(1);
            out.par_chunks_mut(chunk_rows * cols)
                .zip(index.par_chunks(chunk_rows))
                .for_each(|(o, idx)| {
                    for (orow, &i) in o.chunks_mut(cols).zip(idx) {
                        if i != ZERO_ROW {
                            let i = i as usize;
                            assert!(i < rows, "gather index {i} out of {rows} rows");
                            orow.copy_from_slice(&src[i * cols..(i + 1) * cols]);
                        }
                    }
                });
            plain(Tensor::new(vec![index.len(), cols], out))
        }
        Op::Reshape { shape } => plain(inputs[0].clone().reshaped(shape.clone())),
        Op::Upsample2x { images, height, width } => {
            let x = inputs[0];
            let (h, w, cols) = (*height, *width, x.cols());
            assert_eq!(x.rows(), images * h * w, "upsample input rows");
            let (ty, tx) = (upsample_taps(h), upsample_taps(w));
            let mut out = vec![R::zero(); images * 4 * h * w * cols];
            let src = x.data();
            out.par_chunks_mut(4 * h * w * cols).enumerate().for_each(|(img, o)| {
                let base = img * h * w;
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let taps = [
                            (y0 * w + x0, (1.0 - wy) * (1.0 - wx)),
                            (y0 * w + x1, (1.0 - wy) * wx),
                            (y1 * w + x0, wy * (1.0 - wx)),
                            (y1 * w + x1, wy * wx),
                        ];
                        let orow = &mut o[(oy * 2 * w + ox) * cols..(oy * 2 * w + ox + 1) * cols];
                        for (p, wt) in taps {
                            if wt == 0.0 {
                                continue;
                            }
                            let wt = R::of(wt);
                            let srow = &src[(base + p) * cols..(base + p + 1) * cols];
                            for (a, &s) in orow.iter_mut().zip(srow) {
                                *a = *a + wt * s;
                            }
                        }
                    }
                }
            });
            plain(Tensor::new(vec![images * 4 * h * w, cols], out))
        }
        Op::BatchNorm { eps } => {
            let x = inputs[0];
            let (rows, cols) = (x.rows(), x.cols());
            assert!(rows > 0, "batch norm over empty batch");
            let sums = col_sums(x.data(), cols, None);
            let mean: Vec<f64> = sums.iter().map(|s| s / rows as f64).collect();
            let mut var = vec![0.0f64; cols];
            for row in x.data().chunks(cols) {
                for ((v, &x), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = x.f64() - m;
                    *v += d * d;
                }
            }
            let inv: Vec<R> = var.iter().map(|v| R::of(1.0 / (v / rows as f64 + eps).sqrt())).collect();
            let mean: Vec<R> = mean.into_iter().map(R::of).collect();
            let shift: Vec<R> = mean.iter().zip(&inv).map(|(&m, &i)| -m * i).collect();
            let mut data = vec![R::zero(); x.len()];
            let chunk = cols * (PAR_CHUNK / cols).max(1);
            data.par_chunks_mut(chunk).zip(x.data().par_chunks(chunk)).for_each(|(o, xs)| {
                for (orow, xrow) in o.chunks_mut(cols).zip(xs.chunks(cols)) {
                    for j in 0..cols {
                        orow[j] = xrow[j] * inv[j] + shift[j];
                    }
                }
            });
            (Tensor::new(x.shape().to_vec(), data), Aux::Norm { mean, inv_std: inv })
        }
    }
}

/// Gradients of `op`'s inputs given the output gradient `g`. Entries are
/// `None` where `needs` is false.
pub fn backward<R: Real>(
    op: &Op,
    inputs: &[&Tensor<R>],
    out: &Tensor<R>,
    aux: &Aux<R>,
    g: &Tensor<R>,
    needs: &[bool],
) -> Vec<Option<Tensor<R>>> {
    let like = |t: &Tensor<R>, data: Vec<R>| Some(Tensor::new(t.shape().to_vec(), data));
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    match op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![
            need(0).then(|| g.clone().reshaped(inputs[0].shape().to_vec())),
            need(1).then(|| g.clone().reshaped(inputs[1].shape().to_vec())),
        ],
        Op::Sub => vec![
            need(0).then(|| g.clone().reshaped(inputs[0].shape().to_vec())),
            if need(1) { like(inputs[1], unary(g.data(), |v| -v)) } else { None },
        ],
        Op::Mul => vec![
            if need(0) { like(inputs[0], binary(g.data(), inputs[1].data(), |a, b| a * b)) } else { None },
            if need(1) { like(inputs[1], binary(g.data(), inputs[0].data(), |a, b| a * b)) } else { None },
        ],
        Op::Scale(c) => {
            let c = R::of(*c);
            vec![like(inputs[0], unary(g.data(), |v| v * c))]
        }
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::AddRow => {
            let cols = inputs[1].len();
            vec![
                need(0).then(|| g.clone()),
                if need(1) {
                    like(inputs[1], col_sums(g.data(), cols, None).into_iter().map(R::of).collect())
                } else {
                    None
                },
            ]
        }
        Op::MulRow => {
            let row = inputs[1];
            let cols = row.len();
            vec![
                if need(0) { like(inputs[0], row_broadcast(g.data(), row.data(), |a, r| a * r)) } else { None },
                if need(1) {
                    like(row, col_sums(g.data(), cols, Some(inputs[0].data())).into_iter().map(R::of).collect())
                } else {
                    None
                },
            ]
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (k, m) = (b.shape()[0], b.shape()[1]);
            let n = a.rows();
            let gm = MatRef::row_major(0, n, m);
            vec![
                if need(0) { like(a, par_gemm(g.data(), gm, b.data(), MatRef::row_major(0, k, m).t())) } else { None },
                if need(1) {
                    like(b, par_gemm(a.data(), MatRef::row_major(0, n, k).t(), g.data(), gm))
                } else {
                    None
                },
            ]
        }
        Op::Attention { heads, group_len } => {
            let x = inputs[0];
            let Aux::Probs(probs) = aux else {
                panic!("attention backward without probabilities")
            };
            let (rows, cols) = (x.rows(), x.cols());
            let (c, d, _) = attention_dims(cols, *heads, rows, *group_len);
            let l = *group_len;
            let scale = R::of(1.0 / (d as f64).sqrt());
            let (q, gd) = (x.data(), g.data());
            let mut dx = vec![R::zero(); x.len()];
            dx.par_chunks_mut(l * cols)
                .zip(probs.par_chunks(heads * l * l))
                .enumerate()
                .for_each(|(gi, (dq, p))| {
                    let mut dp = vec![R::zero(); l * l];
                    let sq = MatRef::row_major(0, l, l);
                    for h in 0..*heads {
                        let ph = &p[h * l * l..(h + 1) * l * l];
                        let go = head_view(gi, l, c, h * d, d);
                        let qv = head_view(gi, l, cols, h * d, d);
                        let kv = head_view(gi, l, cols, c + h * d, d);
                        let vv = head_view(gi, l, cols, 2 * c + h * d, d);
                        // dV = Pᵀ·dO
                        gemm(R::one(), ph, sq.t(), gd, go, R::zero(), dq, head_view(0, l, cols, 2 * c + h * d, d));
                        // dP = dO·Vᵀ, then dS through the softmax
                        gemm(R::one(), gd, go, q, vv.t(), R::zero(), &mut dp, sq);
                        softmax_backward_rows(ph, &mut dp, l);
                        // dQ = scale·dS·K, dK = scale·dSᵀ·Q
                        gemm(scale, &dp, sq, q, kv, R::zero(), dq, head_view(0, l, cols, h * d, d));
                        gemm(scale, &dp, sq.t(), q, qv, R::zero(), dq, head_view(0, l, cols, c + h * d, d));
                    }
                });
            vec![like(x, dx)]
        }
        Op::Softmax => {
            let cols = out.cols();
            let mut dx = g.data().to_vec();
            softmax_backward_rows(out.data(), &mut dx, cols);
            vec![like(inputs[0], dx)]
        }
        Op::Gelu => vec![like(inputs[0], binary(g.data(), inputs[0].data(), |gv, x| gv * gelu_grad(x)))],
        Op::Square => vec![like(inputs[0], binary(g.data(), inputs[0].data(), |gv, x| gv * (x + x)))],
        Op::Sqrt => vec![like(
            inputs[0],
            binary(g.data(), out.data(), |gv, y| {
                if y > R::zero() {
                    gv * R::of(0.5) / y
                } else {
                    R::zero()
                }
            }),
        )],
        Op::Magnitude => {
            let x = inputs[0];
            let mut dx = vec![R::zero(); x.len()];
            for ((d, p), (&gv, &m)) in dx.chunks_mut(2).zip(x.data().chunks(2)).zip(g.data().iter().zip(out.data())) {
                if m > R::zero() {
                    d[0] = gv * p[0] / m;
                    d[1] = gv * p[1] / m;
                }
            }
            vec![like(x, dx)]
        }
        Op::SumLast => {
            let x = inputs[0];
            let cols = x.cols();
            let mut dx = vec![R::zero(); x.len()];
            for (row, &gv) in dx.chunks_mut(cols.max(1)).zip(g.data()) {
                row.iter_mut().for_each(|v| *v = gv);
            }
            vec![like(x, dx)]
        }
        Op::Sum => vec![Some(Tensor::full(inputs[0].shape().to_vec(), g.item()))],
        Op::Mean => {
            let x = inputs[0];
            vec![Some(Tensor::full(x.shape().to_vec(), g.item() / R::of(x.len() as f64)))]
        }
        Op::Gather { index } => {
            let x = inputs[0];
            let cols = x.cols();
            let mut dx = vec![R::zero(); x.len()];
            for (grow, &i) in g.data().chunks(cols).zip(index.iter()) {
                if i != ZERO_ROW {
                    let i = i as usize;
                    for (d, &v) in dx[i * cols..(i + 1) * cols].iter_mut().zip(grow) {
                        *d = *d + v;
                    }
                }
            }
            vec![like(x, dx)]
        }
        Op::Reshape { .. } => vec![Some(g.clone().reshaped(inputs[0].shape().to_vec()))],
        Op::Upsample2x { height, width, .. } => {
            let x = inputs[0];
            let (h, w, cols) = (*height, *width, x.cols());
            let (ty, tx) = (upsample_taps(h), upsample_taps(w));
            let mut dx = vec![R::zero(); x.len()];
            dx.par_chunks_mut(h * w * cols)
                .zip(g.data().par_chunks(4 * h * w * cols))
                .for_each(|(d, gi)| {
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let taps = [
                                (y0 * w + x0, (1.0 - wy) * (1.0 - wx)),
                                (y0 * w + x1, (1.0 - wy) * wx),
                                (y1 * w + x0, wy * (1.0 - wx)),
                                (y1 * w + x1, wy * wx),
                            ];
                            let grow = &gi[(oy * 2 * w + ox) * cols..(oy * 2 * w + ox + 1) * cols];
                            for (p, wt) in taps {
                                if wt == 0.0 {
                                    continue;
                                }
                                let wt = R::of(wt);
                                for (a, &v) in d[p * cols..(p + 1) * cols].iter_mut().zip(grow) {
                                    *a = *a + wt * v;
                                }
                            }
                        }
                    }
                });
            vec![like(x, dx)]
        }
        Op::BatchNorm { .. } => {
            let x = inputs[0];
            let Aux::Norm { inv_std, .. } = aux else {
                panic!("batch norm backward without statistics")
            };
            let (rows, cols) = (x.rows(), x.cols());
            let sum_g = col_sums(g.data(), cols, None);
            let sum_gx = col_sums(g.data(), cols, Some(out.data()));
            let n = rows as f64;
            let a: Vec<R> = sum_g.iter().map(|s| R::of(s / n)).collect();
            let b: Vec<R> = sum_gx.iter().map(|s| R::of(s / n)).collect();
            let mut dx = vec![R::zero(); x.len()];
            for ((drow, grow), yrow) in dx.chunks_mut(cols).zip(g.data().chunks(cols)).zip(out.data().chunks(cols)) {
                for j in 0..cols {
                    drow[j] = inv_std[j] * (grow[j] - a[j] - yrow[j] * b[j]);
                }
            }
            vec![like(x, dx)]
        }
    }
}
