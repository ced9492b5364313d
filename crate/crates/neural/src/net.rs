//! Convolutional action-value network with hand-rolled forward and backward
//! passes.
//!
//! Architecture: `hidden_layers` convolutions (`channels` filters, kernel 3,
//! stride 1, circular padding 1, ReLU) followed by a single-channel
//! convolutional head. Input is the ±1 spin field, one channel; output is
//! one scalar per site, Q(s, Flip(site)). Shapes are preserved throughout,
//! so Q commutes exactly with lattice translations on periodic lattices.
//!
//! Activations are pixel-major `[site][channel]`, weights are
//! `[kernel_offset][in_channel][out_channel]`: the innermost loops run
//! contiguously over output channels, which the compiler vectorizes.

use crate::error::{NeuralError, Result};
use stoqrl_core::lattice::{Lattice, SpinConfig};
use stoqrl_core::rng::Rng;

/// One convolution layer.
#[derive(Debug, Clone)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Flattened [k][in_ch][out_ch].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    fn new(in_ch: usize, out_ch: usize, n_offsets: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; n_offsets * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    fn init_uniform(&mut self, n_offsets: usize, rng: &mut Rng) {
        let fan_in = (n_offsets * self.in_ch) as f64;
        let a = (1.0 / fan_in).sqrt();
        for w in &mut self.weights {
            *w = a * (2.0 * rng.uniform() - 1.0);
        }
    }
}

/// Parameter gradients, same shapes as the network parameters.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl NetGrads {
    pub fn zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|x| *x = 0.0);
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn add(&mut self, other: &NetGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(ob).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|x| *x *= factor);
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Forward-pass record for one sample: input field plus post-ReLU hidden
/// activations, kept for the backward pass.
pub struct Trace {
    /// activations[0] = input, then one entry per hidden layer (post-ReLU).
    activations: Vec<Vec<f64>>,
    /// Raw head output, one value per site.
    pub output: Vec<f64>,
}

/// The Q network.
#[derive(Debug, Clone)]
pub struct QNetwork {
    lx: usize,
    ly: usize,
    n_sites: usize,
    /// Source-pixel table: gather[p * n_offsets + k] is the input pixel
    /// feeding kernel offset k at output pixel p (circular wrap).
    gather: Vec<u32>,
    n_offsets: usize,
    pub layers: Vec<Conv>,
}

impl QNetwork {
    /// Build for a fully periodic lattice. The head layer starts at zero so
    /// the initial network is Q ≡ 0 (uniform wavefunction); hidden layers
    /// are fan-in-scaled uniform.
    pub fn new(
        lattice: &Lattice,
        hidden_layers: usize,
        channels: usize,
        seed: u64,
    ) -> Result<Self> {
        if !lattice.is_fully_periodic() {
            return Err(NeuralError::Unsupported(
                "the convolutional network uses circular padding and requires a periodic lattice"
                    .into(),
            ));
        }
        if hidden_layers == 0 || channels == 0 {
            return Err(NeuralError::Shape(
                "need at least one hidden layer and one channel".into(),
            ));
        }
        let (lx, ly) = match *lattice.dims() {
            [lx] => (lx, 1),
            [lx, ly] => (lx, ly),
            _ => unreachable!("lattices are rank 1 or 2"),
        };
        let n_sites = lx * ly;

        // Kernel offsets: 3 along each non-trivial dimension.
        let xs: Vec<i64> = vec![-1, 0, 1];
        let ys: Vec<i64> = if ly > 1 { vec![-1, 0, 1] } else { vec![0] };
        let mut offsets = Vec::new();
        for &dy in &ys {
            for &dx in &xs {
                offsets.push((dx, dy));
            }
        }
        let n_offsets = offsets.len();
        let mut gather = Vec::with_capacity(n_sites * n_offsets);
        for p in 0..n_sites {
            let (x, y) = ((p % lx) as i64, (p / lx) as i64);
            for &(dx, dy) in &offsets {
                let sx = (x + dx).rem_euclid(lx as i64) as usize;
                let sy = (y + dy).rem_euclid(ly as i64) as usize;
                gather.push((sy * lx + sx) as u32);
            }
        }

        let mut rng = Rng::for_substream(seed, "net-init");
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut in_ch = 1;
        for _ in 0..hidden_layers {
            let mut conv = Conv::new(in_ch, channels, n_offsets);
            conv.init_uniform(n_offsets, &mut rng);
            layers.push(conv);
            in_ch = channels;
        }
        layers.push(Conv::new(in_ch, 1, n_offsets)); // zero-initialized head

        Ok(Self {
            lx,
            ly,
            n_sites,
            gather,
            n_offsets,
            layers,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.lx, self.ly)
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.out_ch, l.in_ch, self.n_offsets, 1))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn spin_field(&self, s: SpinConfig) -> Vec<f64> {
        debug_assert_eq!(s.n_sites(), self.n_sites, "state does not fit the lattice");
        (0..self.n_sites).map(|site| s.spin(site)).collect()
    }

    fn conv_forward(&self, layer: &Conv, input: &[f64], output: &mut [f64]) {
        // Fixed-width specialization keeps the output row in vector
        // registers across the accumulation; 64 is the production width.
        match layer.out_ch {
            64 => self.conv_forward_sized::<64>(layer, input, output),
            16 => self.conv_forward_sized::<16>(layer, input, output),
            _ => self.conv_forward_generic(layer, input, output),
        }
    }

    fn conv_forward_sized<const N: usize>(&self, layer: &Conv, input: &[f64], output: &mut [f64]) {
        debug_assert_eq!(layer.out_ch, N);
        let cin = layer.in_ch;
        let bias: &[f64; N] = layer.bias.as_slice().try_into().unwrap();
        for p in 0..self.n_sites {
            let y_row: &mut [f64; N] = (&mut output[p * N..(p + 1) * N]).try_into().unwrap();
            let mut acc = *bias;
            for k in 0..self.n_offsets {
                let q = self.gather[p * self.n_offsets + k] as usize;
                let x_row = &input[q * cin..(q + 1) * cin];
                let w_k = &layer.weights[k * cin * N..(k + 1) * cin * N];
                for (c, &xv) in x_row.iter().enumerate() {
                    let w_row: &[f64; N] = w_k[c * N..(c + 1) * N].try_into().unwrap();
                    for o in 0..N {
                        acc[o] += xv * w_row[o];
                    }
                }
            }
            *y_row = acc;
        }
    }

    /// Two samples through one layer, sharing every weight load: the batch
    /// paths are bandwidth-bound on weight streaming, and pairing halves it.
    fn conv_forward_pair_sized<const N: usize>(
        &self,
        layer: &Conv,
        input0: &[f64],
        input1: &[f64],
        output0: &mut [f64],
        output1: &mut [f64],
    ) {
        debug_assert_eq!(layer.out_ch, N);
        let cin = layer.in_ch;
        let bias: &[f64; N] = layer.bias.as_slice().try_into().unwrap();
        for p in 0..self.n_sites {
            let mut acc0 = *bias;
            let mut acc1 = *bias;
            for k in 0..self.n_offsets {
                let q = self.gather[p * self.n_offsets + k] as usize;
                let x0 = &input0[q * cin..(q + 1) * cin];
                let x1 = &input1[q * cin..(q + 1) * cin];
                let w_k = &layer.weights[k * cin * N..(k + 1) * cin * N];
                for c in 0..cin {
                    let w_row: &[f64; N] = w_k[c * N..(c + 1) * N].try_into().unwrap();
                    let xv0 = x0[c];
                    let xv1 = x1[c];
                    for o in 0..N {
                        acc0[o] += xv0 * w_row[o];
                        acc1[o] += xv1 * w_row[o];
                    }
                }
            }
            let y0: &mut [f64; N] = (&mut output0[p * N..(p + 1) * N]).try_into().unwrap();
            let y1: &mut [f64; N] = (&mut output1[p * N..(p + 1) * N]).try_into().unwrap();
            *y0 = acc0;
            *y1 = acc1;
        }
    }

    fn conv_forward_pair(
        &self,
        layer: &Conv,
        input0: &[f64],
        input1: &[f64],
        output0: &mut [f64],
        output1: &mut [f64],
    ) {
        match layer.out_ch {
            64 => self.conv_forward_pair_sized::<64>(layer, input0, input1, output0, output1),
            16 => self.conv_forward_pair_sized::<16>(layer, input0, input1, output0, output1),
            _ => {
                self.conv_forward(layer, input0, output0);
                self.conv_forward(layer, input1, output1);
            }
        }
    }

    /// Joint forward of two configurations (no trace).
    fn forward_pair(&self, s0: SpinConfig, s1: SpinConfig) -> (Vec<f64>, Vec<f64>) {
        let n_hidden = self.layers.len() - 1;
        let mut a0 = self.spin_field(s0);
        let mut a1 = self.spin_field(s1);
        for layer in &self.layers[..n_hidden] {
            let mut o0 = vec![0.0; self.n_sites * layer.out_ch];
            let mut o1 = vec![0.0; self.n_sites * layer.out_ch];
            self.conv_forward_pair(layer, &a0, &a1, &mut o0, &mut o1);
            for x in o0.iter_mut().chain(o1.iter_mut()) {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
            a0 = o0;
            a1 = o1;
        }
        let head = &self.layers[n_hidden];
        let mut q0 = vec![0.0; self.n_sites];
        let mut q1 = vec![0.0; self.n_sites];
        self.conv_forward_pair(head, &a0, &a1, &mut q0, &mut q1);
        (q0, q1)
    }

    fn conv_forward_generic(&self, layer: &Conv, input: &[f64], output: &mut [f64]) {
        let (cin, cout) = (layer.in_ch, layer.out_ch);
        for p in 0..self.n_sites {
            output[p * cout..(p + 1) * cout].copy_from_slice(&layer.bias);
        }
        // Kernel-offset outer loop: the active weight slab (cin·cout values)
        // stays cache-resident across all pixels.
        for k in 0..self.n_offsets {
            let w_k = &layer.weights[k * cin * cout..(k + 1) * cin * cout];
            for p in 0..self.n_sites {
                let q = self.gather[p * self.n_offsets + k] as usize;
                let x_row = &input[q * cin..(q + 1) * cin];
                let y_row = &mut output[p * cout..(p + 1) * cout];
                for (c, &xv) in x_row.iter().enumerate() {
                    let w_row = &w_k[c * cout..(c + 1) * cout];
                    for (y, &wv) in y_row.iter_mut().zip(w_row) {
                        *y += xv * wv;
                    }
                }
            }
        }
    }

    /// Accumulate parameter and input gradients for one layer.
    fn conv_backward(
        &self,
        layer: &Conv,
        input: &[f64],
        d_out: &[f64],
        d_w: &mut [f64],
        d_b: &mut [f64],
        d_in: &mut [f64],
    ) {
        let (cin, cout) = (layer.in_ch, layer.out_ch);
        for p in 0..self.n_sites {
            let dy = &d_out[p * cout..(p + 1) * cout];
            for (b, g) in d_b.iter_mut().zip(dy) {
                *b += g;
            }
        }
        // Same kernel-offset-outer ordering as the forward pass, keeping the
        // active weight and weight-gradient slabs cache-resident.
        for k in 0..self.n_offsets {
            let w_k = &layer.weights[k * cin * cout..(k + 1) * cin * cout];
            let dw_k = &mut d_w[k * cin * cout..(k + 1) * cin * cout];
            for p in 0..self.n_sites {
                let q = self.gather[p * self.n_offsets + k] as usize;
                let dy = &d_out[p * cout..(p + 1) * cout];
                let x_row = &input[q * cin..(q + 1) * cin];
                let dx_row = &mut d_in[q * cin..(q + 1) * cin];
                for c in 0..cin {
                    let xv = x_row[c];
                    let w_row = &w_k[c * cout..(c + 1) * cout];
                    let dw_row = &mut dw_k[c * cout..(c + 1) * cout];
                    let mut dot = 0.0;
                    for o in 0..cout {
                        dw_row[o] += xv * dy[o];
                        dot += w_row[o] * dy[o];
                    }
                    dx_row[c] += dot;
                }
            }
        }
    }

    /// Per-site Q values for one configuration.
    pub fn forward(&self, s: SpinConfig) -> Vec<f64> {
        self.forward_traced(s).output
    }

    /// Forward pass retaining activations for [`backward`](Self::backward).
    pub fn forward_traced(&self, s: SpinConfig) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(self.spin_field(s));
        let n_hidden = self.layers.len() - 1;
        for layer in &self.layers[..n_hidden] {
            let mut out = vec![0.0; self.n_sites * layer.out_ch];
            self.conv_forward(layer, activations.last().unwrap(), &mut out);
            for x in &mut out {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
            activations.push(out);
        }
        let head = &self.layers[n_hidden];
        let mut output = vec![0.0; self.n_sites];
        self.conv_forward(head, activations.last().unwrap(), &mut output);
        Trace {
            activations,
            output,
        }
    }

    /// Backpropagate d(loss)/d(output) through the trace, accumulating
    /// parameter gradients into `grads`.
    pub fn backward(&self, trace: &Trace, d_output: &[f64], grads: &mut NetGrads) {
        debug_assert_eq!(d_output.len(), self.n_sites);
        let n_hidden = self.layers.len() - 1;
        let mut d_cur = d_output.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.activations[li];
            let (d_w, d_b) = &mut grads.layers[li];
            let mut d_in = vec![0.0; input.len()];
            self.conv_backward(layer, input, &d_cur, d_w, d_b, &mut d_in);
            if li > 0 {
                // ReLU mask: activations[li] stores the post-ReLU values of
                // hidden layer li-1; zero activation means a clamped unit.
                debug_assert!(li <= n_hidden);
                for (g, &a) in d_in.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d_cur = d_in;
        }
    }

    /// Batched forward pass, parallel over sample pairs, order-preserving.
    pub fn forward_batch(&self, states: &[SpinConfig]) -> Vec<Vec<f64>> {
        use rayon::prelude::*;
        let mut rows: Vec<Vec<f64>> = states
            .par_chunks(2)
            .flat_map_iter(|pair| match *pair {
                [s0, s1] => {
                    let (q0, q1) = self.forward_pair(s0, s1);
                    vec![q0, q1]
                }
                [s0] => vec![self.forward(s0)],
                _ => unreachable!(),
            })
            .collect();
        debug_assert_eq!(rows.len(), states.len());
        rows.shrink_to_fit();
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stoqrl_core::lattice::translate_config;

    #[test]
    fn zero_head_means_zero_output() {
        let lat = Lattice::torus(3).unwrap();
        let net = QNetwork::new(&lat, 3, 8, 1).unwrap();
        let q = net.forward(SpinConfig::from_bits(0b101_010_110, 9));
        assert_eq!(q.len(), 9);
        assert!(q.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let lat = Lattice::ring(6).unwrap();
        let mut net = QNetwork::new(&lat, 2, 5, 3).unwrap();
        randomize_head(&mut net, 7);
        let s = SpinConfig::from_bits(0b011010, 6);
        let a = net.forward(s);
        let b = net.forward(s);
        assert_eq!(a, b);
    }

    pub(crate) fn randomize_head(net: &mut QNetwork, seed: u64) {
        let mut rng = Rng::new(seed);
        let head = net.layers.last_mut().unwrap();
        for w in &mut head.weights {
            *w = rng.uniform() - 0.5;
        }
        for b in &mut head.bias {
            *b = rng.uniform() - 0.5;
        }
    }

    #[test]
    fn translation_equivariance_is_bit_exact() {
        for lat in [Lattice::ring(8).unwrap(), Lattice::torus(3).unwrap()] {
            let mut net = QNetwork::new(&lat, 3, 6, 11).unwrap();
            randomize_head(&mut net, 13);
            let n = lat.n_sites();
            let mut rng = Rng::new(5);
            for _ in 0..10 {
                let s = SpinConfig::from_bits(rng.next_u64(), n);
                let q = net.forward(s);
                let shifts: Vec<Vec<i64>> = if lat.dims().len() == 1 {
                    (1..lat.dims()[0] as i64).map(|k| vec![k]).collect()
                } else {
                    let l = lat.dims()[0] as i64;
                    (0..l)
                        .flat_map(|a| (0..l).map(move |b| vec![a, b]))
                        .collect()
                };
                for shift in shifts {
                    let ts = translate_config(s, &lat, &shift).unwrap();
                    let tq = net.forward(ts);
                    // Q(translate(s)) at the translated site equals Q(s).
                    for site in 0..n {
                        let coords = lat.coords(site);
                        let moved: Vec<usize> = coords
                            .iter()
                            .zip(&shift)
                            .zip(lat.dims())
                            .map(|((&c, &sh), &ext)| {
                                (c as i64 + sh).rem_euclid(ext as i64) as usize
                            })
                            .collect();
                        assert_eq!(q[site], tq[lat.site(&moved)]);
                    }
                }
            }
        }
    }

    #[test]
    fn open_lattice_rejected() {
        let lat = Lattice::open_chain(6).unwrap();
        assert!(matches!(
            QNetwork::new(&lat, 3, 8, 0),
            Err(NeuralError::Unsupported(_))
        ));
    }
}
