//! Raw layer arithmetic: forward and backward passes as free functions over
//! flat buffers. Stride is fixed at 1 and convolutions are "valid" (no
//! padding); pooling windows must tile the input exactly.

/// out[n][oc][oh][ow] = bias[oc] + sum_{ic,kh,kw} in[n][ic][oh+kh][ow+kw] * k[oc][ic][kh][kw]
pub fn conv_forward(
    input: &[f64],
    (n, ic, ih, iw): (usize, usize, usize, usize),
    kernels: &[f64],
    (oc, kh, kw): (usize, usize, usize),
    bias: &[f64],
) -> Vec<f64> {
    let oh = ih - kh + 1;
    let ow = iw - kw + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    for b in 0..n {
        let in_base = b * ic * ih * iw;
        let out_base = b * oc * oh * ow;
        for o in 0..oc {
            let map_base = out_base + o * oh * ow;
            out[map_base..map_base + oh * ow].fill(bias[o]);
            for i in 0..ic {
                let plane = in_base + i * ih * iw;
                for dh in 0..kh {
                    for dw in 0..kw {
                        let kval = kernels[((o * ic + i) * kh + dh) * kw + dw];
                        for y in 0..oh {
                            let src = plane + (y + dh) * iw + dw;
                            let dst = map_base + y * ow;
                            let (src_row, dst_row) =
                                (&input[src..src + ow], &mut out[dst..dst + ow]);
                            for x in 0..ow {
                                dst_row[x] += kval * src_row[x];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv_forward` w.r.t. kernels, bias, and input.
pub fn conv_backward(
    input: &[f64],
    (n, ic, ih, iw): (usize, usize, usize, usize),
    kernels: &[f64],
    (oc, kh, kw): (usize, usize, usize),
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let oh = ih - kh + 1;
    let ow = iw - kw + 1;
    let mut dkernels = vec![0.0; oc * ic * kh * kw];
    let mut dbias = vec![0.0; oc];
    let mut dinput = vec![0.0; n * ic * ih * iw];
    for b in 0..n {
        let in_base = b * ic * ih * iw;
        let out_base = b * oc * oh * ow;
        for o in 0..oc {
            let map_base = out_base + o * oh * ow;
            for v in &dout[map_base..map_base + oh * ow] {
                dbias[o] += v;
            }
            for i in 0..ic {
                let plane = in_base + i * ih * iw;
                for dh in 0..kh {
                    for dw in 0..kw {
                        let kidx = ((o * ic + i) * kh + dh) * kw + dw;
                        let kval = kernels[kidx];
                        let mut kgrad = 0.0;
                        for y in 0..oh {
                            let src = plane + (y + dh) * iw + dw;
                            let dst = map_base + y * ow;
                            let dout_row = &dout[dst..dst + ow];
                            let in_row = &input[src..src + ow];
                            for x in 0..ow {
                                kgrad += dout_row[x] * in_row[x];
                            }
                            let din_row = &mut dinput[src..src + ow];
                            for x in 0..ow {
                                din_row[x] += kval * dout_row[x];
                            }
                        }
                        dkernels[kidx] += kgrad;
                    }
                }
            }
        }
    }
    (dkernels, dbias, dinput)
}

pub fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient is zero at and below the kink.
pub fn relu_backward(input: &[f64], dout: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(dout)
        .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
        .collect()
}

/// 2-D max pooling with a square window that tiles the plane exactly.
/// Returns the pooled values and the flat input index of each maximum
/// (first occurrence wins, so ties break deterministically).
pub fn maxpool_forward(
    input: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    debug_assert!(h % size == 0 && w % size == 0);
    let oh = h / size;
    let ow = w / size;
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            let plane = (b * c + ch) * h * w;
            let out_plane = (b * c + ch) * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = plane + (y * size + dy) * w + (x * size + dx);
                            if input[idx] > best {
                                best = input[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[out_plane + y * ow + x] = best;
                    argmax[out_plane + y * ow + x] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward(input_len: usize, argmax: &[usize], dout: &[f64]) -> Vec<f64> {
    let mut dinput = vec![0.0; input_len];
    for (&idx, &d) in argmax.iter().zip(dout) {
        dinput[idx] += d;
    }
    dinput
}

/// y[i][q] = sum_v x[i][v] * w[q][v] + b[q], weights stored row-major [q][v].
pub fn fc_forward(input: &[f64], (n, v): (usize, usize), weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let q = bias.len();
    let mut out = vec![0.0; n * q];
    for i in 0..n {
        let x = &input[i * v..(i + 1) * v];
        let y = &mut out[i * q..(i + 1) * q];
        for (j, yj) in y.iter_mut().enumerate() {
            let row = &weights[j * v..(j + 1) * v];
            let mut acc = bias[j];
            for k in 0..v {
                acc += row[k] * x[k];
            }
            *yj = acc;
        }
    }
    out
}

pub fn fc_backward(
    input: &[f64],
    (n, v): (usize, usize),
    weights: &[f64],
    q: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dweights = vec![0.0; q * v];
    let mut dbias = vec![0.0; q];
    let mut dinput = vec![0.0; n * v];
    for i in 0..n {
        let x = &input[i * v..(i + 1) * v];
        let dy = &dout[i * q..(i + 1) * q];
        let dx = &mut dinput[i * v..(i + 1) * v];
        for j in 0..q {
            let d = dy[j];
            dbias[j] += d;
            let wrow = &weights[j * v..(j + 1) * v];
            let dwrow = &mut dweights[j * v..(j + 1) * v];
            for k in 0..v {
                dwrow[k] += d * x[k];
                dx[k] += d * wrow[k];
            }
        }
    }
    (dweights, dbias, dinput)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
/// dlogits[i][j] = (softmax(logits_i)[j] - [j == label_i]) / n.
pub fn softmax_cross_entropy(
    logits: &[f64],
    (n, classes): (usize, usize),
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; n * classes];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for (j, &l) in row.iter().enumerate() {
            let e = (l - max).exp();
            drow[j] = e;
            sum += e;
        }
        let log_sum = sum.ln();
        loss += (log_sum - (row[labels[i]] - max)) * inv_n;
        for (j, d) in drow.iter_mut().enumerate() {
            *d = (*d / sum - if j == labels[i] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    (loss, dlogits)
}
