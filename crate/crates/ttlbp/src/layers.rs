//! Synaptic-input kernels for the three layer kinds, with their adjoints.
//!
//! All kernels operate on one sample (no batch dimension); batching is the
//! caller's parallel loop. Convolutions are valid (no padding), matching the
//! shape rule `out = floor((in - kernel) / stride) + 1`.

use crate::tensor::Tensor;

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected [C,H,W], got {s:?}");
    (s[0], s[1], s[2])
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input < kernel {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

/// Valid cross-correlation: input `[Cin,H,W]`, weights `[Cout,Cin,k,k]`.
pub fn conv_forward(input: &Tensor, weights: &Tensor, stride: usize) -> Tensor {
    let (cin, h, w) = dims3(input);
    let ws = weights.shape();
    assert_eq!(ws.len(), 4, "conv weights must be [Cout,Cin,k,k]");
    let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
    assert_eq!(wcin, cin, "conv weight channel mismatch");
    assert_eq!(ws[3], k, "conv kernels are square");
    let oh = conv_out_dim(h, k, stride).expect("conv output height underflow");
    let ow = conv_out_dim(w, k, stride).expect("conv output width underflow");

    let mut out = Tensor::zeros(&[cout, oh, ow]);
    let x = input.data();
    let wt = weights.data();
    let o = out.data_mut();
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            acc += wt[((co * cin + ci) * k + ky) * k + kx]
                                * x[(ci * h + iy) * w + ix];
                        }
                    }
                }
                o[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`conv_forward`] in the input: scatters `grad_out` back through
/// the weights onto the input shape.
pub fn conv_backprop_input(
    grad_out: &Tensor,
    weights: &Tensor,
    input_shape: &[usize],
    stride: usize,
) -> Tensor {
    let (cout, oh, ow) = dims3(grad_out);
    let ws = weights.shape();
    let (cin, k) = (ws[1], ws[2]);
    assert_eq!(ws[0], cout);
    let (h, w) = (input_shape[1], input_shape[2]);

    let mut grad_in = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let wt = weights.data();
    let gi = grad_in.data_mut();
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = g[(co * oh + oy) * ow + ox];
                if go == 0.0 {
                    continue;
                }
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            gi[(ci * h + iy) * w + ix] +=
                                go * wt[((co * cin + ci) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Adjoint of [`conv_forward`] in the weights.
pub fn conv_weight_grad(grad_out: &Tensor, input: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (cout, oh, ow) = dims3(grad_out);
    let (cin, h, w) = dims3(input);
    let mut grad_w = Tensor::zeros(&[cout, cin, kernel, kernel]);
    let g = grad_out.data();
    let x = input.data();
    let gw = grad_w.data_mut();
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = g[(co * oh + oy) * ow + ox];
                if go == 0.0 {
                    continue;
                }
                for ci in 0..cin {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            gw[((co * cin + ci) * kernel + ky) * kernel + kx] +=
                                go * x[(ci * h + iy) * w + ix];
                        }
                    }
                }
            }
        }
    }
    grad_w
}

/// Fully-connected synaptic input: weights `[out,in]`, input flattened.
pub fn fc_forward(input: &Tensor, weights: &Tensor) -> Tensor {
    let ws = weights.shape();
    let (out_n, in_n) = (ws[0], ws[1]);
    assert_eq!(input.len(), in_n, "fc input length mismatch");
    let x = input.data();
    let wt = weights.data();
    let mut out = Tensor::zeros(&[out_n]);
    let o = out.data_mut();
    for i in 0..out_n {
        let row = &wt[i * in_n..(i + 1) * in_n];
        let mut acc = 0.0;
        for j in 0..in_n {
            acc += row[j] * x[j];
        }
        o[i] = acc;
    }
    out
}

/// Adjoint of [`fc_forward`] in the input, returned in `input_shape`.
pub fn fc_backprop_input(grad_out: &Tensor, weights: &Tensor, input_shape: &[usize]) -> Tensor {
    let ws = weights.shape();
    let (out_n, in_n) = (ws[0], ws[1]);
    assert_eq!(grad_out.len(), out_n);
    let g = grad_out.data();
    let wt = weights.data();
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    assert_eq!(gi.len(), in_n);
    for i in 0..out_n {
        let go = g[i];
        if go == 0.0 {
            continue;
        }
        let row = &wt[i * in_n..(i + 1) * in_n];
        for j in 0..in_n {
            gi[j] += go * row[j];
        }
    }
    grad_in
}

/// Adjoint of [`fc_forward`] in the weights (outer product).
pub fn fc_weight_grad(grad_out: &Tensor, input: &Tensor) -> Tensor {
    let out_n = grad_out.len();
    let in_n = input.len();
    let mut grad_w = Tensor::zeros(&[out_n, in_n]);
    let g = grad_out.data();
    let x = input.data();
    let gw = grad_w.data_mut();
    for i in 0..out_n {
        let go = g[i];
        if go == 0.0 {
            continue;
        }
        for j in 0..in_n {
            gw[i * in_n + j] += go * x[j];
        }
    }
    grad_w
}

/// Average pooling over `k x k` windows with the given stride.
pub fn avgpool_forward(input: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (c, h, w) = dims3(input);
    let oh = conv_out_dim(h, kernel, stride).expect("pool output height underflow");
    let ow = conv_out_dim(w, kernel, stride).expect("pool output width underflow");
    let norm = 1.0 / (kernel * kernel) as f64;
    let x = input.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let o = out.data_mut();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        acc += x[(ci * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                o[(ci * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

/// Adjoint of [`avgpool_forward`]: each input in a window receives
/// `grad_out / k^2`.
pub fn avgpool_backprop_input(
    grad_out: &Tensor,
    input_shape: &[usize],
    kernel: usize,
    stride: usize,
) -> Tensor {
    let (c, oh, ow) = dims3(grad_out);
    let (h, w) = (input_shape[1], input_shape[2]);
    let norm = 1.0 / (kernel * kernel) as f64;
    let g = grad_out.data();
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = g[(ci * oh + oy) * ow + ox] * norm;
                if go == 0.0 {
                    continue;
                }
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        gi[(ci * h + oy * stride + ky) * w + ox * stride + kx] += go;
                    }
                }
            }
        }
    }
    grad_in
}
