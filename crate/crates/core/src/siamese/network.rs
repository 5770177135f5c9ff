//! Multi-head attention encoder with exact reverse-mode gradients.
//!
//! For a batch of query rows `X` (S×M) and fixed context `K` (N×M,
//! training fingerprints) and `V` (N×R, one-hot labels):
//!
//! ```text
//! head_i = softmax((X Wq_i)(K Wk_i)ᵀ / sqrt(d_k)) (V Wv_i)
//! O      = [head_1 .. head_h] Wo
//! Z_l    = relu(Z_{l-1} W_l + b_l)          hidden dense layers
//! E      = Z_L We + be                       embedding layer
//! out    = E / ‖E‖                           row-wise
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::attention::softmax_rows;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Trainable parameters. The last entry of `dense` is the linear embedding
/// layer; the others are ReLU layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub w_q: Vec<Array2<f64>>,
    pub w_k: Vec<Array2<f64>>,
    pub w_v: Vec<Array2<f64>>,
    pub w_o: Array2<f64>,
    pub dense: Vec<Dense>,
}

/// Layer sizes of an encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    pub num_aps: usize,
    pub num_classes: usize,
    pub num_heads: usize,
    pub head_size: usize,
    pub dense_widths: Vec<usize>,
    pub embedding_dim: usize,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || limit * (2.0 * rng.random::<f64>() - 1.0))
}

impl Params {
    pub fn init(shape: &Shape, rng: &mut impl Rng) -> Self {
        let (h, dk) = (shape.num_heads, shape.head_size);
        let w_q = (0..h).map(|_| glorot(shape.num_aps, dk, rng)).collect();
        let w_k = (0..h).map(|_| glorot(shape.num_aps, dk, rng)).collect();
        let w_v = (0..h).map(|_| glorot(shape.num_classes, dk, rng)).collect();
        let w_o = glorot(h * dk, h * dk, rng);
        let mut dense = Vec::new();
        let mut width = h * dk;
        for &out in shape.dense_widths.iter().chain(std::iter::once(&shape.embedding_dim)) {
            dense.push(Dense { w: glorot(width, out, rng), b: Array1::zeros(out) });
            width = out;
        }
        Self { w_q, w_k, w_v, w_o, dense }
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(shape: &Shape) -> Self {
        let (h, dk) = (shape.num_heads, shape.head_size);
        let mut dense = Vec::new();
        let mut width = h * dk;
        for &out in shape.dense_widths.iter().chain(std::iter::once(&shape.embedding_dim)) {
            dense.push(Dense { w: Array2::zeros((width, out)), b: Array1::zeros(out) });
            width = out;
        }
        Self {
            w_q: vec![Array2::zeros((shape.num_aps, dk)); h],
            w_k: vec![Array2::zeros((shape.num_aps, dk)); h],
            w_v: vec![Array2::zeros((shape.num_classes, dk)); h],
            w_o: Array2::zeros((h * dk, h * dk)),
            dense,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Array2<f64>| Array2::zeros(m.raw_dim());
        Self {
            w_q: self.w_q.iter().map(z).collect(),
            w_k: self.w_k.iter().map(z).collect(),
            w_v: self.w_v.iter().map(z).collect(),
            w_o: z(&self.w_o),
            dense: self
                .dense
                .iter()
                .map(|d| Dense { w: z(&d.w), b: Array1::zeros(d.b.len()) })
                .collect(),
        }
    }

    pub fn num_heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn head_size(&self) -> usize {
        self.w_q[0].ncols()
    }

    /// Named tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        fn mat(name: String, m: &Array2<f64>) -> (String, &[f64], Vec<usize>) {
            (name, m.as_slice().expect("standard layout"), m.shape().to_vec())
        }
        let mut out = Vec::new();
        for (i, m) in self.w_q.iter().enumerate() {
            out.push(mat(format!("w_q.{i}"), m));
        }
        for (i, m) in self.w_k.iter().enumerate() {
            out.push(mat(format!("w_k.{i}"), m));
        }
        for (i, m) in self.w_v.iter().enumerate() {
            out.push(mat(format!("w_v.{i}"), m));
        }
        out.push(mat("w_o".into(), &self.w_o));
        for (i, d) in self.dense.iter().enumerate() {
            out.push(mat(format!("dense.{i}.w"), &d.w));
            out.push((format!("dense.{i}.b"), d.b.as_slice().unwrap(), vec![d.b.len()]));
        }
        out
    }

    /// Mutable flat views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for m in self
            .w_q
            .iter_mut()
            .chain(self.w_k.iter_mut())
            .chain(self.w_v.iter_mut())
            .chain(std::iter::once(&mut self.w_o))
        {
            out.push(m.as_slice_mut().expect("standard layout"));
        }
        for d in &mut self.dense {
            out.push(d.w.as_slice_mut().unwrap());
            out.push(d.b.as_slice_mut().unwrap());
        }
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t, _)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t, _)| t.iter().all(|v| v.is_finite()))
    }
}

/// Keys and values shared by every query.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

/// Per-head projections of the context.
pub(crate) struct Projected {
    kh: Vec<Array2<f64>>,
    vh: Vec<Array2<f64>>,
}

pub(crate) fn project(params: &Params, ctx: &Context) -> Projected {
    Projected {
        kh: params.w_k.iter().map(|w| ctx.keys.dot(w)).collect(),
        vh: params.w_v.iter().map(|w| ctx.values.dot(w)).collect(),
    }
}

/// Intermediate activations of a batched forward pass.
pub(crate) struct Trace {
    x: Array2<f64>,
    q: Vec<Array2<f64>>,
    weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
    /// Input to each dense layer; `inputs[0]` is the output projection.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    norms: Array1<f64>,
    pub(crate) embeddings: Array2<f64>,
}

fn check(m: &Array2<f64>, layer: impl Into<String>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer: layer.into() })
    }
}

pub(crate) fn forward(params: &Params, proj: &Projected, x: ArrayView2<f64>) -> Result<Trace> {
    let h = params.num_heads();
    let dk = params.head_size();
    let scale = 1.0 / (dk as f64).sqrt();
    if x.ncols() != params.w_q[0].nrows() {
        return Err(Error::Shape(format!(
            "query width {} but encoder expects {} APs",
            x.ncols(),
            params.w_q[0].nrows()
        )));
    }
    let s = x.nrows();
    let mut q = Vec::with_capacity(h);
    let mut weights = Vec::with_capacity(h);
    let mut concat = Array2::zeros((s, h * dk));
    for i in 0..h {
        let qi = x.dot(&params.w_q[i]);
        let wi = softmax_rows(qi.dot(&proj.kh[i].t()) * scale);
        concat.slice_mut(s![.., i * dk..(i + 1) * dk]).assign(&wi.dot(&proj.vh[i]));
        q.push(qi);
        weights.push(wi);
    }
    check(&concat, "attention")?;
    let o = concat.dot(&params.w_o);
    check(&o, "output_projection")?;
    let last = params.dense.len() - 1;
    let mut inputs = vec![o];
    let mut pre = Vec::with_capacity(last);
    for (l, d) in params.dense.iter().enumerate() {
        let a = inputs[l].dot(&d.w) + &d.b;
        if l == last {
            check(&a, "embedding")?;
            inputs.push(a);
        } else {
            check(&a, format!("dense_{l}"))?;
            inputs.push(a.mapv(|v| v.max(0.0)));
            pre.push(a);
        }
    }
    let e = inputs.pop().expect("embedding layer");
    let norms = e.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::NonFiniteActivation { layer: "l2_normalize".into() });
    }
    let embeddings = &e / &norms.view().insert_axis(Axis(1));
    Ok(Trace { x: x.to_owned(), q, weights, concat, inputs, pre, norms, embeddings })
}

/// Accumulates into `grads` the gradient of a scalar loss whose derivative
/// with respect to the output embeddings is `d_emb`.
pub(crate) fn backward(
    params: &Params,
    ctx: &Context,
    proj: &Projected,
    trace: &Trace,
    d_emb: &Array2<f64>,
    grads: &mut Params,
) {
    let h = params.num_heads();
    let dk = params.head_size();
    let scale = 1.0 / (dk as f64).sqrt();

    // through the row-wise L2 normalization
    let emb = &trace.embeddings;
    let dots = (emb * d_emb).sum_axis(Axis(1));
    let mut delta = (d_emb - (emb * &dots.view().insert_axis(Axis(1))))
        / &trace.norms.view().insert_axis(Axis(1));

    for l in (0..params.dense.len()).rev() {
        if l < params.dense.len() - 1 {
            delta.zip_mut_with(&trace.pre[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        let input = &trace.inputs[l];
        grads.dense[l].w += &input.t().dot(&delta);
        grads.dense[l].b += &delta.sum_axis(Axis(0));
        delta = delta.dot(&params.dense[l].w.t());
    }

    // delta is now dL/dO
    grads.w_o += &trace.concat.t().dot(&delta);
    let d_concat = delta.dot(&params.w_o.t());

    for i in 0..h {
        let dy = d_concat.slice(s![.., i * dk..(i + 1) * dk]);
        let w = &trace.weights[i];
        let dw = dy.dot(&proj.vh[i].t());
        let d_vh = w.t().dot(&dy);
        let rowdot = (w * &dw).sum_axis(Axis(1));
        let ds = (w * &(&dw - &rowdot.view().insert_axis(Axis(1)))) * scale;
        let dq = ds.dot(&proj.kh[i]);
        let d_kh = ds.t().dot(&trace.q[i]);
        grads.w_q[i] += &trace.x.t().dot(&dq);
        grads.w_k[i] += &ctx.keys.t().dot(&d_kh);
        grads.w_v[i] += &ctx.values.t().dot(&d_vh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn toy() -> (Params, Context) {
        let shape = Shape {
            num_aps: 4,
            num_classes: 3,
            num_heads: 2,
            head_size: 2,
            dense_widths: vec![8, 4],
            embedding_dim: 4,
        };
        let mut r = rng::stream(1, &[]);
        let params = Params::init(&shape, &mut r);
        let keys = Array2::from_shape_simple_fn((6, 4), || r.random::<f64>());
        let mut values = Array2::zeros((6, 3));
        for n in 0..6 {
            values[[n, n % 3]] = 1.0;
        }
        (params, Context { keys, values })
    }

    #[test]
    fn parameter_layout() {
        let (p, _) = toy();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.0).collect();
        assert_eq!(names[0], "w_q.0");
        assert_eq!(names[6], "w_o");
        assert_eq!(names.last().unwrap(), "dense.2.b");
        // 2*(4*2) Wq + 2*(4*2) Wk + 2*(3*2) Wv + 4*4 Wo + (4*8+8) + (8*4+4) + (4*4+4)
        assert_eq!(p.count(), 16 + 16 + 12 + 16 + 40 + 36 + 20);
    }

    #[test]
    fn batch_rows_are_independent() {
        let (p, ctx) = toy();
        let proj = project(&p, &ctx);
        let both = forward(&p, &proj, ctx.keys.slice(s![0..2, ..])).unwrap();
        let one = forward(&p, &proj, ctx.keys.slice(s![1..2, ..])).unwrap();
        for j in 0..4 {
            assert!((both.embeddings[[1, j]] - one.embeddings[[0, j]]).abs() < 1e-15);
        }
        for r in both.embeddings.rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (p, ctx) = toy();
        let proj = project(&p, &ctx);
        assert!(forward(&p, &proj, Array2::zeros((1, 5)).view()).is_err());
    }

    #[test]
    fn zero_embedding_is_reported() {
        let (mut p, ctx) = toy();
        let last = p.dense.len() - 1;
        p.dense[last].w.fill(0.0);
        let proj = project(&p, &ctx);
        match forward(&p, &proj, ctx.keys.view()) {
            Err(Error::NonFiniteActivation { layer }) => assert_eq!(layer, "l2_normalize"),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
