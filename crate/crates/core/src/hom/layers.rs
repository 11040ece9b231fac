//! Dense CHW feature maps and the handful of layers the head needs, each
//! with a hand-written backward pass.

/// Channel-major feature map: `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    /// Stacks maps of equal spatial size along the channel axis.
    pub fn concat(parts: &[&Map]) -> Map {
        let (h, w) = (parts[0].h, parts[0].w);
        let c = parts.iter().map(|m| m.c).sum();
        let mut data = Vec::with_capacity(c * h * w);
        for m in parts {
            debug_assert_eq!((m.h, m.w), (h, w));
            data.extend_from_slice(&m.data);
        }
        Map { c, h, w, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
    }
}

/// Zeroes gradient entries where the forward ReLU output was not positive.
pub fn relu_backward(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Unrolls 3×3 neighbourhoods: row `i * 9 + ky * 3 + kx` holds input channel
/// `i` shifted by `(ky - 1, kx - 1)`, zero outside the map.
fn im2col(input: &Map) -> Vec<f64> {
    let (h, w) = (input.h, input.w);
    let mut cols = Vec::with_capacity(input.c * 9 * h * w);
    for i in 0..input.c {
        let src = input.plane(i);
        for ky in 0..3 {
            for kx in 0..3 {
                for y in 0..h {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        cols.extend(std::iter::repeat_n(0.0, w));
                        continue;
                    }
                    let row = &src[(sy - 1) * w..sy * w];
                    match kx {
                        0 => {
                            cols.push(0.0);
                            cols.extend_from_slice(&row[..w - 1]);
                        }
                        1 => cols.extend_from_slice(row),
                        _ => {
                            cols.extend_from_slice(&row[1..]);
                            cols.push(0.0);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// 3×3 convolution with zero "same" padding.
/// Weights are `[out][in][3][3]`.
pub fn conv3x3(input: &Map, weight: &[f64], bias: &[f64], out_c: usize) -> Map {
    let (h, w) = (input.h, input.w);
    let k = input.c * 9;
    debug_assert_eq!(weight.len(), out_c * k);
    let cols = im2col(input);
    let n = h * w;
    let mut out = Map::zeros(out_c, h, w);
    const LANES: usize = 8;
    for o in 0..out_c {
        let wrow = &weight[o * k..(o + 1) * k];
        let dst = &mut out.data[o * n..(o + 1) * n];
        let mut p = 0;
        // accumulate a strip of pixels in registers across all taps
        while p + LANES <= n {
            let mut acc = [bias[o]; LANES];
            for (j, &wv) in wrow.iter().enumerate() {
                let c: &[f64; LANES] = cols[j * n + p..j * n + p + LANES].try_into().expect("strip");
                for t in 0..LANES {
                    acc[t] += wv * c[t];
                }
            }
            dst[p..p + LANES].copy_from_slice(&acc);
            p += LANES;
        }
        for (q, d) in dst.iter_mut().enumerate().skip(p) {
            *d = bias[o] + wrow.iter().enumerate().map(|(j, &wv)| wv * cols[j * n + q]).sum::<f64>();
        }
    }
    out
}

/// Gradients of [`conv3x3`]. `grad_out` is w.r.t. the pre-activation output.
/// Accumulates into `grad_w`/`grad_b`; returns the input gradient when asked.
pub fn conv3x3_backward(
    input: &Map,
    weight: &[f64],
    grad_out: &Map,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Map> {
    let (h, w) = (input.h, input.w);
    let k = input.c * 9;
    let n = h * w;
    let cols = im2col(input);
    for o in 0..grad_out.c {
        let g = grad_out.plane(o);
        grad_b[o] += g.iter().sum::<f64>();
        for j in 0..k {
            let col = &cols[j * n..(j + 1) * n];
            grad_w[o * k + j] += g.iter().zip(col).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    if !want_input_grad {
        return None;
    }
    // the input gradient is a same-padded convolution of grad_out with the
    // spatially flipped, channel-transposed kernel
    let (in_c, out_c) = (input.c, grad_out.c);
    let mut flipped = vec![0.0; in_c * out_c * 9];
    for o in 0..out_c {
        for i in 0..in_c {
            for t in 0..9 {
                flipped[(i * out_c + o) * 9 + 8 - t] = weight[(o * in_c + i) * 9 + t];
            }
        }
    }
    Some(conv3x3(grad_out, &flipped, &vec![0.0; in_c], in_c))
}

/// Geometry of a transposed convolution: output pixel
/// `(iy * stride + ky - pad, ix * stride + kx - pad)` receives input `(iy, ix)`
/// times kernel tap `(ky, kx)`; taps landing outside `out_h × out_w` are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deconv {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Deconv {
    #[inline]
    fn target(&self, i: usize, k: usize, limit: usize) -> Option<usize> {
        let t = (i * self.stride + k).checked_sub(self.pad)?;
        (t < limit).then_some(t)
    }
}

/// Transposed convolution; weights are `[in][out][k][k]`.
pub fn deconv(input: &Map, weight: &[f64], bias: &[f64], out_c: usize, g: Deconv) -> Map {
    let k = g.kernel;
    debug_assert_eq!(weight.len(), input.c * out_c * k * k);
    let mut out = Map::zeros(out_c, g.out_h, g.out_w);
    let n = g.out_h * g.out_w;
    for o in 0..out_c {
        out.data[o * n..(o + 1) * n].fill(bias[o]);
    }
    for i in 0..input.c {
        for iy in 0..input.h {
            for ix in 0..input.w {
                let v = input.at(i, iy, ix);
                if v == 0.0 {
                    continue;
                }
                for ky in 0..k {
                    let Some(oy) = g.target(iy, ky, g.out_h) else { continue };
                    for kx in 0..k {
                        let Some(ox) = g.target(ix, kx, g.out_w) else { continue };
                        for o in 0..out_c {
                            out.data[(o * g.out_h + oy) * g.out_w + ox] += v * weight[((i * out_c + o) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn deconv_backward(
    input: &Map,
    weight: &[f64],
    grad_out: &Map,
    g: Deconv,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Map> {
    let k = g.kernel;
    let out_c = grad_out.c;
    for o in 0..out_c {
        grad_b[o] += grad_out.plane(o).iter().sum::<f64>();
    }
    let mut grad_in = want_input_grad.then(|| Map::zeros(input.c, input.h, input.w));
    for i in 0..input.c {
        for iy in 0..input.h {
            for ix in 0..input.w {
                let v = input.at(i, iy, ix);
                let mut gin = 0.0;
                for ky in 0..k {
                    let Some(oy) = g.target(iy, ky, g.out_h) else { continue };
                    for kx in 0..k {
                        let Some(ox) = g.target(ix, kx, g.out_w) else { continue };
                        for o in 0..out_c {
                            let widx = ((i * out_c + o) * k + ky) * k + kx;
                            let go = grad_out.data[(o * g.out_h + oy) * g.out_w + ox];
                            grad_w[widx] += v * go;
                            gin += weight[widx] * go;
                        }
                    }
                }
                if let Some(gi) = grad_in.as_mut() {
                    gi.data[(i * input.h + iy) * input.w + ix] = gin;
                }
            }
        }
    }
    grad_in
}

/// `y = W x + b` with `W` stored `[out][in]`.
pub fn linear(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weight[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

pub fn linear_backward(x: &[f64], weight: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut grad_in = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = o * n_in..(o + 1) * n_in;
        for ((gw, w), (gi, v)) in grad_w[row.clone()].iter_mut().zip(&weight[row]).zip(grad_in.iter_mut().zip(x)) {
            *gw += g * v;
            *gi += g * w;
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let mut input = Map::zeros(1, 3, 4);
        for (i, v) in input.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let out = conv3x3(&input, &w, &[0.5], 1);
        for (a, b) in out.data.iter().zip(&input.data) {
            assert_eq!(*a, b + 0.5);
        }
    }

    #[test]
    fn deconv_output_sizes() {
        let input = Map {
            c: 1,
            h: 7,
            w: 7,
            data: vec![1.0; 49],
        };
        let g = Deconv {
            kernel: 3,
            stride: 2,
            pad: 1,
            out_h: 14,
            out_w: 14,
        };
        let out = deconv(&input, &[1.0; 9], &[0.0], 1, g);
        assert_eq!((out.h, out.w), (14, 14));
        // interior even pixel gets one tap; odd-odd pixel gets four
        assert_eq!(out.at(0, 2, 2), 1.0);
        assert_eq!(out.at(0, 3, 3), 4.0);

        let g2 = Deconv {
            kernel: 2,
            stride: 2,
            pad: 0,
            out_h: 14,
            out_w: 14,
        };
        let out = deconv(&input, &[1.0, 2.0, 3.0, 4.0], &[0.0], 1, g2);
        assert_eq!(out.at(0, 0, 0), 1.0);
        assert_eq!(out.at(0, 1, 1), 4.0);
    }

    #[test]
    fn linear_backward_matches_definition() {
        let x = [1.0, 2.0];
        let w = [1.0, -1.0, 0.5, 2.0];
        let y = linear(&x, &w, &[0.0, 1.0]);
        assert_eq!(y, vec![-1.0, 5.5]);
        let mut gw = [0.0; 4];
        let mut gb = [0.0; 2];
        let gi = linear_backward(&x, &w, &[1.0, 1.0], &mut gw, &mut gb);
        assert_eq!(gi, vec![1.5, 1.0]);
        assert_eq!(gw, [1.0, 2.0, 1.0, 2.0]);
        assert_eq!(gb, [1.0, 1.0]);
    }
}
