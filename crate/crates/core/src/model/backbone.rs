//! Feature extractors with hand-written backward passes.
//!
//! Parameters of each backbone live in one flat vector whose layout is fixed by
//! the architecture, which is what parameter snapshots record.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

/// Intermediate activations kept by a training forward pass.
#[derive(Debug, Clone, Default)]
pub struct Activations(pub Vec<Array2<f64>>);

pub trait Backbone: Send + Sync + std::fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Canonical description of the architecture; equal strings mean equal
    /// parameter layouts.
    fn architecture(&self) -> String;
    fn forward(&self, input: ArrayView2<f64>) -> (Array2<f64>, Activations);
    /// Accumulate parameter gradients for `grad_output` into `grad_params`.
    fn backward(&self, cache: &Activations, grad_output: ArrayView2<f64>, grad_params: &mut [f64]);
    fn box_clone(&self) -> Box<dyn Backbone>;

    fn infer(&self, input: ArrayView2<f64>) -> Array2<f64> {
        self.forward(input).0
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

impl Clone for Box<dyn Backbone> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

fn he_uniform(r: &mut Rng, fan_in: usize, out: &mut [f64]) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in out {
        *v = r.random_range(-bound..bound);
    }
}

/// `x · Wᵀ + b` for a row-major `(out × in)` weight block followed by `out`
/// biases in `params`.
fn dense_forward(params: &[f64], n_in: usize, n_out: usize, x: ArrayView2<f64>) -> Array2<f64> {
    let w = ArrayView2::from_shape((n_out, n_in), &params[..n_in * n_out]).expect("dense layout");
    let b = &params[n_in * n_out..n_in * n_out + n_out];
    let mut y = x.dot(&w.t());
    for mut row in y.rows_mut() {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

/// Returns the gradient with respect to `x`.
fn dense_backward(
    params: &[f64],
    n_in: usize,
    n_out: usize,
    x: ArrayView2<f64>,
    g: ArrayView2<f64>,
    grad: &mut [f64],
) -> Array2<f64> {
    let w = ArrayView2::from_shape((n_out, n_in), &params[..n_in * n_out]).expect("dense layout");
    let (gw, gb) = grad.split_at_mut(n_in * n_out);
    let mut gw = ArrayViewMut2::from_shape((n_out, n_in), gw).expect("dense layout");
    gw += &g.t().dot(&x);
    for (acc, col) in gb[..n_out].iter_mut().zip(g.axis_iter(Axis(1))) {
        *acc += col.sum();
    }
    g.dot(&w)
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Zero the gradient where the post-activation value is not positive.
fn relu_mask(g: &mut Array2<f64>, post: &Array2<f64>) {
    g.zip_mut_with(post, |gv, &a| {
        if a <= 0.0 {
            *gv = 0.0;
        }
    });
}

/// Fully connected network; ReLU between layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let mut mlp = Mlp::zeros(dims);
        let mut offset = 0;
        for pair in dims.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            he_uniform(rng, n_in, &mut mlp.params[offset..offset + n_in * n_out]);
            offset += n_in * n_out + n_out;
        }
        mlp
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let count = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        Mlp {
            dims: dims.to_vec(),
            params: vec![0.0; count],
        }
    }

    /// Build from explicit parameters in canonical order: for each layer the
    /// row-major weight matrix, then its bias.
    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Option<Self> {
        let mlp = Mlp::zeros(dims);
        (mlp.params.len() == params.len()).then_some(Mlp {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.dims.len() - 1);
        let mut offset = 0;
        for pair in self.dims.windows(2) {
            offsets.push(offset);
            offset += pair[0] * pair[1] + pair[1];
        }
        offsets
    }
}

impl Backbone for Mlp {
    fn input_dim(&self) -> usize {
        self.dims[0]
    }

    fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn architecture(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        format!("mlp[{}]", dims.join("-"))
    }

    fn forward(&self, input: ArrayView2<f64>) -> (Array2<f64>, Activations) {
        let layers = self.dims.len() - 1;
        let mut cache = Vec::with_capacity(layers);
        let mut x = input.to_owned();
        for (l, offset) in self.layer_offsets().into_iter().enumerate() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut y = dense_forward(&self.params[offset..], n_in, n_out, x.view());
            if l + 1 < layers {
                relu_inplace(&mut y);
            }
            cache.push(x);
            x = y;
        }
        (x, Activations(cache))
    }

    fn backward(&self, cache: &Activations, grad_output: ArrayView2<f64>, grad_params: &mut [f64]) {
        let offsets = self.layer_offsets();
        let mut g = grad_output.to_owned();
        for l in (0..offsets.len()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = &cache.0[l];
            let mut gx = dense_backward(
                &self.params[offsets[l]..],
                n_in,
                n_out,
                x.view(),
                g.view(),
                &mut grad_params[offsets[l]..],
            );
            if l > 0 {
                relu_mask(&mut gx, x);
            }
            g = gx;
        }
    }

    fn box_clone(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

/// Two 3×3 convolution blocks (ReLU, 2×2 average pooling) followed by two
/// dense layers.
#[derive(Debug, Clone)]
pub struct SmallCnn {
    channels: usize,
    height: usize,
    width: usize,
    conv1: usize,
    conv2: usize,
    hidden: usize,
    out: usize,
    params: Vec<f64>,
}

struct CnnLayout {
    conv1: usize,
    conv2: usize,
    fc1: usize,
    fc2: usize,
    total: usize,
}

impl SmallCnn {
    /// `height` and `width` must be multiples of 4.
    pub fn new(
        input: (usize, usize, usize),
        conv1: usize,
        conv2: usize,
        hidden: usize,
        out: usize,
        rng: &mut Rng,
    ) -> Self {
        let (channels, height, width) = input;
        assert!(
            height % 4 == 0 && width % 4 == 0,
            "CNN input must be a multiple of 4"
        );
        let mut cnn = SmallCnn {
            channels,
            height,
            width,
            conv1,
            conv2,
            hidden,
            out,
            params: Vec::new(),
        };
        let layout = cnn.layout();
        cnn.params = vec![0.0; layout.total];
        he_uniform(
            rng,
            channels * 9,
            &mut cnn.params[layout.conv1..layout.conv1 + conv1 * channels * 9],
        );
        he_uniform(
            rng,
            conv1 * 9,
            &mut cnn.params[layout.conv2..layout.conv2 + conv2 * conv1 * 9],
        );
        let flat = cnn.flat_dim();
        he_uniform(
            rng,
            flat,
            &mut cnn.params[layout.fc1..layout.fc1 + hidden * flat],
        );
        he_uniform(
            rng,
            hidden,
            &mut cnn.params[layout.fc2..layout.fc2 + out * hidden],
        );
        cnn
    }

    fn flat_dim(&self) -> usize {
        self.conv2 * (self.height / 4) * (self.width / 4)
    }

    fn layout(&self) -> CnnLayout {
        let conv1 = 0;
        let conv2 = conv1 + self.conv1 * self.channels * 9 + self.conv1;
        let fc1 = conv2 + self.conv2 * self.conv1 * 9 + self.conv2;
        let fc2 = fc1 + self.hidden * self.flat_dim() + self.hidden;
        let total = fc2 + self.out * self.hidden + self.out;
        CnnLayout {
            conv1,
            conv2,
            fc1,
            fc2,
            total,
        }
    }
}

/// 3×3 same-padding convolution over a batch of `cin × h × w` planes.
fn conv3x3_forward(
    params: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: ArrayView2<f64>,
) -> Array2<f64> {
    let n = x.nrows();
    let wts = &params[..cout * cin * 9];
    let bias = &params[cout * cin * 9..cout * cin * 9 + cout];
    let mut y = Array2::zeros((n, cout * h * w));
    for s in 0..n {
        let xin = x.row(s);
        let xin = xin.as_slice().expect("contiguous rows");
        let mut yrow = y.row_mut(s);
        let yout = yrow.as_slice_mut().expect("contiguous rows");
        for co in 0..cout {
            let plane = &mut yout[co * h * w..(co + 1) * h * w];
            plane.fill(bias[co]);
            for ci in 0..cin {
                let src = &xin[ci * h * w..(ci + 1) * h * w];
                let k = &wts[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            let sy = yy as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += k[ky * 3 + kx] * src[sy as usize * w + sx as usize];
                            }
                        }
                        plane[yy * w + xx] += acc;
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    params: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: ArrayView2<f64>,
    g: ArrayView2<f64>,
    grad: &mut [f64],
) -> Array2<f64> {
    let n = x.nrows();
    let wts = &params[..cout * cin * 9];
    let (gw, gb) = grad.split_at_mut(cout * cin * 9);
    let mut gx = Array2::zeros((n, cin * h * w));
    for s in 0..n {
        let xin = x.row(s);
        let xin = xin.as_slice().expect("contiguous rows");
        let grow = g.row(s);
        let gout = grow.as_slice().expect("contiguous rows");
        let mut gxrow = gx.row_mut(s);
        let gxs = gxrow.as_slice_mut().expect("contiguous rows");
        for co in 0..cout {
            let gplane = &gout[co * h * w..(co + 1) * h * w];
            gb[co] += gplane.iter().sum::<f64>();
            for ci in 0..cin {
                let src = &xin[ci * h * w..(ci + 1) * h * w];
                let base = (co * cin + ci) * 9;
                for yy in 0..h {
                    for xx in 0..w {
                        let gv = gplane[yy * w + xx];
                        if gv == 0.0 {
                            continue;
                        }
                        for ky in 0..3 {
                            let sy = yy as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let si = ci * h * w + sy as usize * w + sx as usize;
                                gw[base + ky * 3 + kx] += gv * src[si - ci * h * w];
                                gxs[si] += gv * wts[base + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn avgpool2_forward(c: usize, h: usize, w: usize, x: ArrayView2<f64>) -> Array2<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array2::zeros((x.nrows(), c * oh * ow));
    for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
        for ch in 0..c {
            for yy in 0..oh {
                for xx in 0..ow {
                    let i = |dy: usize, dx: usize| ch * h * w + (2 * yy + dy) * w + 2 * xx + dx;
                    yr[ch * oh * ow + yy * ow + xx] =
                        0.25 * (xr[i(0, 0)] + xr[i(0, 1)] + xr[i(1, 0)] + xr[i(1, 1)]);
                }
            }
        }
    }
    y
}

fn avgpool2_backward(c: usize, h: usize, w: usize, g: ArrayView2<f64>) -> Array2<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut gx = Array2::zeros((g.nrows(), c * h * w));
    for (gr, mut gxr) in g.rows().into_iter().zip(gx.rows_mut()) {
        for ch in 0..c {
            for yy in 0..oh {
                for xx in 0..ow {
                    let v = 0.25 * gr[ch * oh * ow + yy * ow + xx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            gxr[ch * h * w + (2 * yy + dy) * w + 2 * xx + dx] = v;
                        }
                    }
                }
            }
        }
    }
    gx
}

impl Backbone for SmallCnn {
    fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn output_dim(&self) -> usize {
        self.out
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn architecture(&self) -> String {
        format!(
            "cnn[{}x{}x{}-c{}-c{}-h{}-o{}]",
            self.channels, self.height, self.width, self.conv1, self.conv2, self.hidden, self.out
        )
    }

    fn forward(&self, input: ArrayView2<f64>) -> (Array2<f64>, Activations) {
        let l = self.layout();
        let (h, w) = (self.height, self.width);
        let mut r1 = conv3x3_forward(
            &self.params[l.conv1..],
            self.channels,
            self.conv1,
            h,
            w,
            input,
        );
        relu_inplace(&mut r1);
        let p1 = avgpool2_forward(self.conv1, h, w, r1.view());
        let mut r2 = conv3x3_forward(
            &self.params[l.conv2..],
            self.conv1,
            self.conv2,
            h / 2,
            w / 2,
            p1.view(),
        );
        relu_inplace(&mut r2);
        let p2 = avgpool2_forward(self.conv2, h / 2, w / 2, r2.view());
        let mut hid = dense_forward(
            &self.params[l.fc1..],
            self.flat_dim(),
            self.hidden,
            p2.view(),
        );
        relu_inplace(&mut hid);
        let out = dense_forward(&self.params[l.fc2..], self.hidden, self.out, hid.view());
        (
            out,
            Activations(vec![input.to_owned(), r1, p1, r2, p2, hid]),
        )
    }

    fn backward(&self, cache: &Activations, grad_output: ArrayView2<f64>, grad_params: &mut [f64]) {
        let l = self.layout();
        let (h, w) = (self.height, self.width);
        let [x0, r1, p1, r2, p2, hid] = &cache.0[..] else {
            panic!("CNN cache has six activations");
        };
        let mut g_hid = dense_backward(
            &self.params[l.fc2..],
            self.hidden,
            self.out,
            hid.view(),
            grad_output,
            &mut grad_params[l.fc2..],
        );
        relu_mask(&mut g_hid, hid);
        let g_p2 = dense_backward(
            &self.params[l.fc1..],
            self.flat_dim(),
            self.hidden,
            p2.view(),
            g_hid.view(),
            &mut grad_params[l.fc1..],
        );
        let mut g_r2 = avgpool2_backward(self.conv2, h / 2, w / 2, g_p2.view());
        relu_mask(&mut g_r2, r2);
        let g_p1 = conv3x3_backward(
            &self.params[l.conv2..],
            self.conv1,
            self.conv2,
            h / 2,
            w / 2,
            p1.view(),
            g_r2.view(),
            &mut grad_params[l.conv2..],
        );
        let mut g_r1 = avgpool2_backward(self.conv1, h, w, g_p1.view());
        relu_mask(&mut g_r1, r1);
        conv3x3_backward(
            &self.params[l.conv1..],
            self.channels,
            self.conv1,
            h,
            w,
            x0.view(),
            g_r1.view(),
            &mut grad_params[l.conv1..],
        );
    }

    fn box_clone(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

/// Central-difference gradient of `sum(forward(x) ⊙ weights)` with respect to
/// the parameters; test support for backward passes.
#[cfg(test)]
pub(crate) fn numeric_param_grad(
    model: &mut dyn Backbone,
    x: ArrayView2<f64>,
    weights: ArrayView2<f64>,
) -> Vec<f64> {
    let h = 1e-6;
    let n = model.param_count();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let plus = (&model.infer(x) * &weights).sum();
        model.params_mut()[i] = orig - h;
        let minus = (&model.infer(x) * &weights).sum();
        model.params_mut()[i] = orig;
        out[i] = (plus - minus) / (2.0 * h);
    }
    out
}
