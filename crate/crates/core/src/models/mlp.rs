//! Feed-forward network: ReLU hidden layers, sigmoid output, cross-entropy
//! loss, per-row ADADELTA updates and inverted dropout.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{log_loss, sigmoid, Layer, Network};

#[derive(Debug, Clone)]
pub(crate) struct MlpParams {
    pub hidden: Vec<usize>,
    pub input_dropout: f64,
    pub hidden_dropout: Vec<f64>,
    pub rho: f64,
    pub epsilon: f64,
    pub epochs: usize,
}

/// Xavier-uniform weights, zero biases.
pub(crate) fn init(n_in: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Network {
    let mut sizes = vec![n_in];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let limit = (6.0 / (a + b) as f64).sqrt();
            Layer {
                n_in: a,
                n_out: b,
                weights: (0..a * b).map(|_| rng.random_range(-limit..limit)).collect(),
                biases: vec![0.0; b],
            }
        })
        .collect();
    Network { layers }
}

impl Network {
    /// Mean cross-entropy over the rows and its gradient, laid out as a
    /// network of the same shape. Dropout is off.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> (f64, Network) {
        let (loss, grads) = loss_and_gradient(self, xs, ys);
        let layers = self
            .layers
            .iter()
            .zip(grads)
            .map(|(l, (weights, biases))| Layer {
                n_in: l.n_in,
                n_out: l.n_out,
                weights,
                biases,
            })
            .collect();
        (loss, Network { layers })
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            a = if l == last {
                z.into_iter().map(sigmoid).collect()
            } else {
                z.into_iter().map(|v| v.max(0.0)).collect()
            };
        }
        a[0]
    }
}

impl Layer {
    fn apply(&self, a: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
                self.biases[o] + w.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
            })
            .collect()
    }
}

/// Gradients with the same shapes as the network's layers.
pub(crate) type Grads = Vec<(Vec<f64>, Vec<f64>)>;

fn zero_grads(net: &Network) -> Grads {
    net.layers
        .iter()
        .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
        .collect()
}

/// Backpropagate one row. `masks[l]` scales layer `l`'s input activations
/// (layer 0: the features); `None` disables dropout. Returns the row loss.
fn backprop(net: &Network, x: &[f64], y: f64, masks: Option<&[Vec<f64>]>, grads: &mut Grads) -> f64 {
    let last = net.layers.len() - 1;
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(net.layers.len());
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(net.layers.len());
    let mut a = x.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        if let Some(m) = masks {
            a.iter_mut().zip(&m[l]).for_each(|(v, s)| *v *= s);
        }
        let z = layer.apply(&a);
        inputs.push(a);
        a = if l == last {
            z.iter().map(|&v| sigmoid(v)).collect()
        } else {
            z.iter().map(|&v| v.max(0.0)).collect()
        };
        pre.push(z);
    }
    let p = a[0];
    let mut delta = vec![p - y];
    for l in (0..=last).rev() {
        let layer = &net.layers[l];
        let (gw, gb) = &mut grads[l];
        for o in 0..layer.n_out {
            gb[o] += delta[o];
            let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
            for (g, ai) in row.iter_mut().zip(&inputs[l]) {
                *g += delta[o] * ai;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; layer.n_in];
            for (i, pv) in prev.iter_mut().enumerate() {
                if pre[l - 1][i] <= 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for o in 0..layer.n_out {
                    s += layer.weights[o * layer.n_in + i] * delta[o];
                }
                if let Some(m) = masks {
                    s *= m[l][i];
                }
                *pv = s;
            }
            delta = prev;
        }
    }
    log_loss(y, p)
}

/// Mean loss and gradient over `rows`, without dropout.
pub(crate) fn loss_and_gradient(net: &Network, xs: &[Vec<f64>], ys: &[f64]) -> (f64, Grads) {
    let mut grads = zero_grads(net);
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        loss += backprop(net, x, y, None, &mut grads);
    }
    let n = xs.len() as f64;
    for (gw, gb) in &mut grads {
        gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= n);
    }
    (loss / n, grads)
}

struct Adadelta {
    eg2: Grads,
    edx2: Grads,
    rho: f64,
    eps: f64,
}

impl Adadelta {
    fn step(&mut self, net: &mut Network, grads: &Grads) {
        let (rho, eps) = (self.rho, self.eps);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let g = grads[l].0.iter().chain(&grads[l].1);
            let (egw, egb) = &mut self.eg2[l];
            let eg2 = egw.iter_mut().chain(egb.iter_mut());
            let (edw, edb) = &mut self.edx2[l];
            let edx2 = edw.iter_mut().chain(edb.iter_mut());
            for (((w, &g), eg), ed) in params.zip(g).zip(eg2).zip(edx2) {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let dx = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ed = rho * *ed + (1.0 - rho) * dx * dx;
                *w += dx;
            }
        }
    }
}

fn mask(len: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if ratio == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - ratio;
    (0..len)
        .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
        .collect()
}

pub(crate) struct MlpFit {
    pub network: Network,
    /// Mean training loss before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

pub(crate) fn train(xs: &[Vec<f64>], ys: &[f64], p: &MlpParams, rng: &mut ChaCha8Rng) -> MlpFit {
    let n_in = xs.first().map_or(0, Vec::len);
    let mut net = init(n_in, &p.hidden, rng);
    let mut opt = Adadelta {
        eg2: zero_grads(&net),
        edx2: zero_grads(&net),
        rho: p.rho,
        eps: p.epsilon,
    };
    let dropout = p.input_dropout > 0.0 || p.hidden_dropout.iter().any(|&r| r > 0.0);
    let mut loss_curve = vec![loss_and_gradient(&net, xs, ys).0];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grads = zero_grads(&net);
    for _ in 0..p.epochs {
        order.shuffle(rng);
        for &i in &order {
            for (gw, gb) in &mut grads {
                gw.fill(0.0);
                gb.fill(0.0);
            }
            let masks: Option<Vec<Vec<f64>>> = dropout.then(|| {
                let mut m = vec![mask(n_in, p.input_dropout, rng)];
                for (h, &size) in p.hidden.iter().enumerate() {
                    m.push(mask(size, p.hidden_dropout.get(h).copied().unwrap_or(0.0), rng));
                }
                m
            });
            backprop(&net, &xs[i], ys[i], masks.as_deref(), &mut grads);
            opt.step(&mut net, &grads);
        }
        loss_curve.push(loss_and_gradient(&net, xs, ys).0);
    }
    MlpFit {
        network: net,
        loss_curve,
    }
}

/// Gedeon input contributions through the first two weight layers.
///
/// `P(i -> j) = |w_ji| / sum_i' |w_ji'|` is the share of hidden unit `j`'s
/// incoming weight magnitude that comes from input `i`, and likewise
/// `P(j -> k)` one layer up. Input `i` scores
/// `sum_j P(i -> j) * sum_k P(j -> k)`. With one hidden layer the second
/// factor is dropped. Units whose incoming weights are all zero contribute
/// nothing.
pub(crate) fn gedeon(net: &Network) -> Vec<f64> {
    let share = |layer: &Layer| -> Vec<f64> {
        // share[o * n_in + i] = |w_oi| / sum_i' |w_oi'|
        let mut s = vec![0.0; layer.weights.len()];
        for o in 0..layer.n_out {
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            let total: f64 = row.iter().map(|w| w.abs()).sum();
            if total > 0.0 {
                for (i, w) in row.iter().enumerate() {
                    s[o * layer.n_in + i] = w.abs() / total;
                }
            }
        }
        s
    };
    let first = &net.layers[0];
    let p1 = share(first);
    // with a single hidden layer only the input-to-hidden shares count
    let hidden_weight: Vec<f64> = if net.layers.len() > 2 {
        let second = &net.layers[1];
        let p2 = share(second);
        (0..second.n_in)
            .map(|j| (0..second.n_out).map(|k| p2[k * second.n_in + j]).sum())
            .collect()
    } else {
        vec![1.0; first.n_out]
    };
    (0..first.n_in)
        .map(|i| {
            (0..first.n_out)
                .map(|j| p1[j * first.n_in + i] * hidden_weight[j])
                .sum()
        })
        .collect()
}
