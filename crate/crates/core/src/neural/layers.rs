//! Differentiable building blocks: linear layers, SELU MLPs, GATv2
//! attention layers and the two-level graph readout. Every forward returns
//! a cache; the matching backward consumes it and accumulates parameter
//! gradients into a mirror structure.

use super::tensor::{add_into, matmul_nn, matmul_nt, matmul_tn, Mat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;
const LEAKY_SLOPE: f64 = 0.2;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn lecun_normal(rng: &mut ChaCha8Rng, fan_in: usize) -> f64 {
    // Box-Muller; LeCun scaling keeps SELU self-normalizing
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    z / (fan_in as f64).sqrt()
}

/// y = x . W^T + b, with W stored as [out, in].
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Mat::zeros(out_dim, in_dim);
        for v in w.data.iter_mut() {
            *v = lecun_normal(rng, in_dim);
        }
        Linear {
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Mat::zeros(self.w.rows, self.w.cols),
            b: vec![0.0; self.b.len()],
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = matmul_nt(x, &self.w);
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates dW/db into `grads` and returns dX.
    pub fn backward(&self, x: &Mat, dy: &Mat, grads: &mut Linear) -> Mat {
        add_into(&mut grads.w, &matmul_tn(dy, x));
        for r in 0..dy.rows {
            for (g, d) in grads.b.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        matmul_nn(dy, &self.w)
    }
}

/// A stack of linear layers with SELU between them (and optionally after
/// the last one).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activate_last: bool,
}

pub struct MlpCache {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
}

impl Mlp {
    pub fn new(widths: &[usize], activate_last: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[1], w[0], rng))
            .collect();
        Mlp {
            layers,
            activate_last,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            activate_last: self.activate_last,
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(cur.clone());
            let pre = layer.forward(&cur);
            let activate = li + 1 < self.layers.len() || self.activate_last;
            cur = if activate {
                let mut a = pre.clone();
                for v in a.data.iter_mut() {
                    *v = selu(*v);
                }
                a
            } else {
                pre.clone()
            };
            cache.pre.push(pre);
        }
        (cur, cache)
    }

    pub fn backward(&self, cache: &MlpCache, dout: &Mat, grads: &mut Mlp) -> Mat {
        let mut d = dout.clone();
        for li in (0..self.layers.len()).rev() {
            let activate = li + 1 < self.layers.len() || self.activate_last;
            if activate {
                for (g, p) in d.data.iter_mut().zip(&cache.pre[li].data) {
                    *g *= selu_grad(*p);
                }
            }
            d = self.layers[li].backward(&cache.inputs[li], &d, &mut grads.layers[li]);
        }
        d
    }
}

/// Neighborhoods with self-loops, flattened per target node.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub neigh: Vec<usize>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut lists: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neigh = Vec::new();
        offsets.push(0);
        for l in lists {
            neigh.extend(l);
            offsets.push(neigh.len());
        }
        Adjacency { offsets, neigh }
    }

    pub fn block(&self, i: usize) -> &[usize] {
        &self.neigh[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn nodes(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// One GATv2 attention head: score(i,j) = a . leaky_relu(Ws x_i + Wt x_j),
/// output_i = sum_j softmax_j(score) * (Wt x_j).
#[derive(Debug, Clone, PartialEq)]
pub struct GatHead {
    pub ws: Mat,
    pub wt: Mat,
    pub a: Vec<f64>,
}

pub struct GatHeadCache {
    t: Mat,
    z: Vec<Vec<f64>>,     // per edge, pre-activation
    alpha: Vec<Vec<f64>>, // per target, attention over its block
    out: Mat,
}

impl GatHead {
    pub fn new(hidden: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut a = vec![0.0; hidden];
        for v in a.iter_mut() {
            *v = lecun_normal(rng, hidden);
        }
        GatHead {
            ws: {
                let mut m = Mat::zeros(hidden, in_dim);
                for v in m.data.iter_mut() {
                    *v = lecun_normal(rng, in_dim);
                }
                m
            },
            wt: {
                let mut m = Mat::zeros(hidden, in_dim);
                for v in m.data.iter_mut() {
                    *v = lecun_normal(rng, in_dim);
                }
                m
            },
            a,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GatHead {
            ws: Mat::zeros(self.ws.rows, self.ws.cols),
            wt: Mat::zeros(self.wt.rows, self.wt.cols),
            a: vec![0.0; self.a.len()],
        }
    }

    pub fn forward(&self, x: &Mat, adj: &Adjacency) -> GatHeadCache {
        let n = adj.nodes();
        let h = self.ws.rows;
        let s = matmul_nt(x, &self.ws);
        let t = matmul_nt(x, &self.wt);
        let mut z = Vec::with_capacity(adj.neigh.len());
        let mut alpha = Vec::with_capacity(n);
        let mut out = Mat::zeros(n, h);
        for i in 0..n {
            let block = adj.block(i);
            let mut scores = Vec::with_capacity(block.len());
            for &j in block {
                let mut pre = vec![0.0; h];
                for k in 0..h {
                    pre[k] = s.row(i)[k] + t.row(j)[k];
                }
                let score: f64 = pre.iter().zip(&self.a).map(|(p, a)| leaky(*p) * a).sum();
                scores.push(score);
                z.push(pre);
            }
            // stable softmax over the neighborhood
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let al: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            for (idx, &j) in block.iter().enumerate() {
                let w = al[idx];
                for k in 0..h {
                    out.row_mut(i)[k] += w * t.row(j)[k];
                }
            }
            alpha.push(al);
        }
        let _ = s;
        GatHeadCache { t, z, alpha, out }
    }

    pub fn backward(
        &self,
        x: &Mat,
        adj: &Adjacency,
        cache: &GatHeadCache,
        dout: &Mat,
        grads: &mut GatHead,
    ) -> Mat {
        let n = adj.nodes();
        let h = self.ws.rows;
        let mut ds = Mat::zeros(n, h);
        let mut dt = Mat::zeros(n, h);
        let mut edge_base = 0usize;
        for i in 0..n {
            let block = adj.block(i);
            let al = &cache.alpha[i];
            // d out_i / d alpha and d out_i / d t_j
            let mut dalpha = vec![0.0; block.len()];
            for (idx, &j) in block.iter().enumerate() {
                let mut dot = 0.0;
                for k in 0..h {
                    dot += dout.row(i)[k] * cache.t.row(j)[k];
                    dt.row_mut(j)[k] += al[idx] * dout.row(i)[k];
                }
                dalpha[idx] = dot;
            }
            // softmax backward
            let inner: f64 = al.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            for (idx, &j) in block.iter().enumerate() {
                let de = al[idx] * (dalpha[idx] - inner);
                let pre = &cache.z[edge_base + idx];
                for k in 0..h {
                    let lk = leaky(pre[k]);
                    grads.a[k] += de * lk;
                    let dz = de * self.a[k] * leaky_grad(pre[k]);
                    ds.row_mut(i)[k] += dz;
                    dt.row_mut(j)[k] += dz;
                }
            }
            edge_base += block.len();
        }
        add_into(&mut grads.ws, &matmul_tn(&ds, x));
        add_into(&mut grads.wt, &matmul_tn(&dt, x));
        let mut dx = matmul_nn(&ds, &self.ws);
        add_into(&mut dx, &matmul_nn(&dt, &self.wt));
        dx
    }
}

/// Multi-head GATv2 layer: heads are concatenated and projected back to the
/// hidden size, then passed through SELU.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub proj: Linear,
}

pub struct GatLayerCache {
    heads: Vec<GatHeadCache>,
    concat: Mat,
    pre: Mat,
    pub out: Mat,
}

impl GatLayer {
    pub fn new(heads: usize, hidden: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        GatLayer {
            heads: (0..heads).map(|_| GatHead::new(hidden, in_dim, rng)).collect(),
            proj: Linear::new(hidden, heads * hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GatLayer {
            heads: self.heads.iter().map(GatHead::zeros_like).collect(),
            proj: self.proj.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Mat, adj: &Adjacency) -> GatLayerCache {
        let n = adj.nodes();
        let h = self.heads[0].ws.rows;
        let caches: Vec<GatHeadCache> = self.heads.iter().map(|hd| hd.forward(x, adj)).collect();
        let mut concat = Mat::zeros(n, self.heads.len() * h);
        for (hi, c) in caches.iter().enumerate() {
            for i in 0..n {
                concat.row_mut(i)[hi * h..(hi + 1) * h].copy_from_slice(c.out.row(i));
            }
        }
        let pre = self.proj.forward(&concat);
        let mut out = pre.clone();
        for v in out.data.iter_mut() {
            *v = selu(*v);
        }
        GatLayerCache {
            heads: caches,
            concat,
            pre,
            out,
        }
    }

    pub fn backward(
        &self,
        x: &Mat,
        adj: &Adjacency,
        cache: &GatLayerCache,
        dout: &Mat,
        grads: &mut GatLayer,
    ) -> Mat {
        let mut dpre = dout.clone();
        for (g, p) in dpre.data.iter_mut().zip(&cache.pre.data) {
            *g *= selu_grad(*p);
        }
        let dconcat = self.proj.backward(&cache.concat, &dpre, &mut grads.proj);
        let n = adj.nodes();
        let h = self.heads[0].ws.rows;
        let mut dx = Mat::zeros(n, x.cols);
        for (hi, head) in self.heads.iter().enumerate() {
            let mut dhead = Mat::zeros(n, h);
            for i in 0..n {
                dhead
                    .row_mut(i)
                    .copy_from_slice(&dconcat.row(i)[hi * h..(hi + 1) * h]);
            }
            let dxh = head.backward(x, adj, &cache.heads[hi], &dhead, &mut grads.heads[hi]);
            add_into(&mut dx, &dxh);
        }
        dx
    }
}

/// How node representations are pooled into a graph vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutKind {
    /// Average pooling concatenated with elementwise max (the default).
    MeanMax,
    /// Sum pooling concatenated with elementwise max.
    SumMax,
}

pub struct ReadoutCache {
    n: usize,
    argmax: Vec<Vec<usize>>, // per layer, argmax row per column
}

/// Pools two layers of node representations into one graph vector of width
/// 4 x hidden: per layer mean (or sum) and elementwise max, concatenated.
pub fn readout(kind: ReadoutKind, h1: &Mat, h2: &Mat) -> (Vec<f64>, ReadoutCache) {
    assert!(h1.rows > 0, "readout of an empty graph");
    let mut out = Vec::with_capacity(2 * (h1.cols + h2.cols));
    let mut cache = ReadoutCache {
        n: h1.rows,
        argmax: Vec::with_capacity(2),
    };
    for h in [h1, h2] {
        let n = h.rows as f64;
        for c in 0..h.cols {
            let sum: f64 = (0..h.rows).map(|r| h.row(r)[c]).sum();
            out.push(match kind {
                ReadoutKind::MeanMax => sum / n,
                ReadoutKind::SumMax => sum,
            });
        }
        let mut arg = vec![0usize; h.cols];
        for c in 0..h.cols {
            let mut best = f64::NEG_INFINITY;
            for r in 0..h.rows {
                if h.row(r)[c] > best {
                    best = h.row(r)[c];
                    arg[c] = r;
                }
            }
            out.push(best);
        }
        cache.argmax.push(arg);
    }
    (out, cache)
}

/// Backward of [`readout`]: splits the graph-vector gradient back onto the
/// two node-representation matrices.
pub fn readout_backward(
    kind: ReadoutKind,
    cache: &ReadoutCache,
    h1_cols: usize,
    h2_cols: usize,
    dout: &[f64],
) -> (Mat, Mat) {
    let n = cache.n;
    let mut d1 = Mat::zeros(n, h1_cols);
    let mut d2 = Mat::zeros(n, h2_cols);
    let mut off = 0;
    for (li, (d, cols)) in [(&mut d1, h1_cols), (&mut d2, h2_cols)].into_iter().enumerate() {
        for c in 0..cols {
            let g = dout[off + c];
            let spread = match kind {
                ReadoutKind::MeanMax => g / n as f64,
                ReadoutKind::SumMax => g,
            };
            for r in 0..n {
                d.row_mut(r)[c] += spread;
            }
        }
        for c in 0..cols {
            let g = dout[off + cols + c];
            d.row_mut(cache.argmax[li][c])[c] += g;
        }
        off += 2 * cols;
    }
    (d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn selu_is_zero_at_origin() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - SELU_LAMBDA).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let lin = Linear {
            w: Mat::zeros(3, 4),
            b: vec![0.0; 3],
        };
        let x = Mat::from_rows(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        assert!(lin.forward(&x).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_attention_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = GatHead::new(4, 3, &mut rng);
        let adj = Adjacency::from_edges(1, &[]);
        let x = Mat::from_rows(vec![vec![0.5, -0.2, 1.0]]);
        let cache = head.forward(&x, &adj);
        assert_eq!(cache.alpha, vec![vec![1.0]]);
        // output equals Wt x for a single self-loop
        assert_eq!(cache.out.row(0), cache.t.row(0));
    }

    #[test]
    fn isolated_identical_nodes_share_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = GatLayer::new(2, 4, 3, &mut rng);
        let adj = Adjacency::from_edges(2, &[]);
        let x = Mat::from_rows(vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]);
        let cache = layer.forward(&x, &adj);
        assert_eq!(cache.out.row(0), cache.out.row(1));
    }

    #[test]
    fn readout_single_node_mean_equals_max() {
        let h = Mat::from_rows(vec![vec![1.0, -2.0, 3.0]]);
        let (v, _) = readout(ReadoutKind::MeanMax, &h, &h);
        assert_eq!(v.len(), 12);
        assert_eq!(&v[0..3], &[1.0, -2.0, 3.0]);
        assert_eq!(&v[3..6], &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn readout_is_invariant_under_duplication() {
        let h1 = Mat::from_rows(vec![vec![1.0, 4.0], vec![3.0, 2.0]]);
        let h1d = Mat::from_rows(vec![
            vec![1.0, 4.0],
            vec![3.0, 2.0],
            vec![1.0, 4.0],
            vec![3.0, 2.0],
        ]);
        let (a, _) = readout(ReadoutKind::MeanMax, &h1, &h1);
        let (b, _) = readout(ReadoutKind::MeanMax, &h1d, &h1d);
        assert_eq!(a, b);
    }
}
