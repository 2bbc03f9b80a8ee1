use rand_chacha::ChaCha12Rng;

use super::graph::{Graph, NodeId};
use super::params::{xavier, ParamSet};
use super::tensor::Tensor;

/// Gated recurrent cell with fused gate weights.
/// Gate layout along the fused axis: input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: usize,
    pub b: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let w = ps.add(&format!("{name}.w"), xavier(input + hidden, 4 * hidden, rng));
        let mut bias = Tensor::zeros(1, 4 * hidden);
        // Forget gate bias starts open.
        for j in hidden..2 * hidden {
            bias.data[j] = 1.0;
        }
        let b = ps.add(&format!("{name}.b"), bias);
        LstmCell { w, b, hidden }
    }

    pub fn zero_state(&self, g: &mut Graph) -> (NodeId, NodeId) {
        let h = g.constant(Tensor::zeros(1, self.hidden));
        let c = g.constant(Tensor::zeros(1, self.hidden));
        (h, c)
    }

    pub fn step(&self, g: &mut Graph, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
        let hd = self.hidden;
        let xc = g.concat_cols(x, h);
        let w = g.param(self.w);
        let b = g.param(self.b);
        let z = g.matmul(xc, w);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, hd);
        let f = g.slice_cols(z, hd, hd);
        let cand = g.slice_cols(z, 2 * hd, hd);
        let o = g.slice_cols(z, 3 * hd, hd);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ig = g.mul(i, cand);
        let c_next = g.add(fc, ig);
        let ct = g.tanh(c_next);
        let h_next = g.mul(o, ct);
        (h_next, c_next)
    }
}

/// Stacked bidirectional recurrent encoder over a T x d frame matrix.
#[derive(Clone, Debug)]
pub struct BiLstmEncoder {
    layers: Vec<(LstmCell, LstmCell)>,
    units: usize,
}

impl BiLstmEncoder {
    pub fn register(
        ps: &mut ParamSet,
        name: &str,
        input_dim: usize,
        units: usize,
        n_layers: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let in_dim = if l == 0 { input_dim } else { 2 * units };
            let fwd = LstmCell::register(ps, &format!("{name}.l{l}.fwd"), in_dim, units, rng);
            let bwd = LstmCell::register(ps, &format!("{name}.l{l}.bwd"), in_dim, units, rng);
            layers.push((fwd, bwd));
        }
        BiLstmEncoder { layers, units }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.units
    }

    /// Encode frames (T x d) into T x 2*units. `dropout` applies an inverted
    /// Bernoulli mask to each layer's input during training.
    pub fn forward(
        &self,
        g: &mut Graph,
        frames: NodeId,
        mut dropout: Option<(f64, &mut ChaCha12Rng)>,
    ) -> NodeId {
        let t_len = g.value(frames).rows;
        let mut input = frames;
        for (fwd, bwd) in &self.layers {
            if let Some((rate, rng)) = dropout.as_mut() {
                if *rate > 0.0 {
                    input = apply_dropout(g, input, *rate, rng);
                }
            }
            let rows: Vec<NodeId> = (0..t_len).map(|t| g.row_slice(input, t)).collect();

            let (mut h, mut c) = fwd.zero_state(g);
            let mut fwd_states = Vec::with_capacity(t_len);
            for row in rows.iter() {
                let (h2, c2) = fwd.step(g, *row, h, c);
                h = h2;
                c = c2;
                fwd_states.push(h);
            }

            let (mut h, mut c) = bwd.zero_state(g);
            let mut bwd_states = Vec::with_capacity(t_len);
            for t in (0..t_len).rev() {
                let (h2, c2) = bwd.step(g, rows[t], h, c);
                h = h2;
                c = c2;
                bwd_states.push(h);
            }
            bwd_states.reverse();

            let fwd_mat = g.stack_rows(fwd_states);
            let bwd_mat = g.stack_rows(bwd_states);
            input = g.concat_cols(fwd_mat, bwd_mat);
        }
        input
    }
}

fn apply_dropout(g: &mut Graph, x: NodeId, rate: f64, rng: &mut ChaCha12Rng) -> NodeId {
    use rand::Rng;
    let v = g.value(x);
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..v.len())
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let m = g.constant(Tensor::from_vec(v.rows, v.cols, mask));
    g.mul(x, m)
}
