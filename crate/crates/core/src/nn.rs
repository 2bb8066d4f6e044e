//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Hidden layers use ReLU, the output layer is affine. Parameters live in one
//! flat vector, layer by layer, each layer as a row-major `out × in` weight
//! block followed by its bias; gradients and optimizer moments share that
//! layout.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

const MAGIC: &[u8; 4] = b"SBNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Gradient with the same layout as [`DenseNet`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients(pub Vec<f64>);

impl ParamGradients {
    pub fn zeros(len: usize) -> Self {
        ParamGradients(vec![0.0; len])
    }

    pub fn add_scaled(&mut self, other: &ParamGradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

struct Trace {
    /// Input to each layer; the last entry is the network output.
    acts: Vec<Vec<f64>>,
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    for w in sizes.windows(2) {
        let last = *out.last().expect("non-empty");
        out.push(last + w[0] * w[1] + w[1]);
    }
    out
}

impl DenseNet {
    /// Weights and biases drawn from `U(±1/√fan_in)` using `seed`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = stream(seed, &[0x6e6e]);
        for l in 0..net.layers() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            let (a, b) = (net.offsets[l], net.offsets[l + 1]);
            for p in &mut net.params[a..b] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let offsets = offsets(sizes);
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            params: vec![0.0; *offsets.last().expect("non-empty")],
            offsets,
        })
    }

    /// `input`, `hidden × depth`, `output`.
    pub fn mlp(input: usize, hidden: usize, depth: usize, output: usize, seed: u64) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(output);
        Self::new(&sizes, seed)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn weights(&self, l: usize) -> &[f64] {
        let a = self.offsets[l];
        &self.params[a..a + self.sizes[l] * self.sizes[l + 1]]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let a = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[a..self.offsets[l + 1]]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                x.len()
            )));
        }
        Ok(())
    }

    fn affine(&self, l: usize, x: &[f64], relu: bool) -> Vec<f64> {
        let w = self.weights(l);
        let n_in = self.sizes[l];
        self.bias(l)
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                if relu {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect()
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.layers() {
            let relu = l + 1 < self.layers();
            let next = self.affine(l, acts.last().expect("non-empty"), relu);
            acts.push(next);
        }
        Trace { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in 0..self.layers() {
            a = self.affine(l, &a, l + 1 < self.layers());
        }
        Ok(a)
    }

    /// Reverse pass from `upstream = ∂L/∂output`; fills parameter gradients
    /// when `grads` is given and returns `∂L/∂input`.
    fn backward(&self, t: &Trace, upstream: &[f64], mut grads: Option<&mut [f64]>) -> Vec<f64> {
        let mut delta = upstream.to_vec();
        for l in (0..self.layers()).rev() {
            let n_in = self.sizes[l];
            let input = &t.acts[l];
            if let Some(g) = grads.as_deref_mut() {
                let a = self.offsets[l];
                let (gw, gb) = g[a..self.offsets[l + 1]].split_at_mut(n_in * delta.len());
                for (o, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                            *gwi += d * xi;
                        }
                    }
                    gb[o] += d;
                }
            }
            let w = self.weights(l);
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            if l > 0 {
                // ReLU derivative: the layer output `input` is max(z, 0)
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    fn check_upstream(&self, upstream: &[f64]) -> Result<()> {
        if upstream.len() != self.output_size() {
            return Err(Error::Shape(format!(
                "upstream has {} entries for {} outputs",
                upstream.len(),
                self.output_size()
            )));
        }
        Ok(())
    }

    /// Gradient of `⟨upstream, forward(x)⟩` with respect to the parameters.
    pub fn grad_params(&self, x: &[f64], upstream: &[f64]) -> Result<ParamGradients> {
        let mut g = ParamGradients::zeros(self.num_params());
        self.accumulate_grad_params(x, upstream, &mut g)?;
        Ok(g)
    }

    /// Adds the gradient of `⟨upstream, forward(x)⟩` into `grads`.
    pub fn accumulate_grad_params(
        &self,
        x: &[f64],
        upstream: &[f64],
        grads: &mut ParamGradients,
    ) -> Result<()> {
        self.check_input(x)?;
        self.check_upstream(upstream)?;
        if grads.0.len() != self.num_params() {
            return Err(Error::Shape("gradient buffer does not match the network".into()));
        }
        let t = self.trace(x);
        self.backward(&t, upstream, Some(&mut grads.0));
        Ok(())
    }

    /// `∂ output / ∂ x` for a scalar-output network.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.output_size() != 1 {
            return Err(Error::Logic(format!(
                "grad_input needs a scalar output, network has {}",
                self.output_size()
            )));
        }
        self.check_input(x)?;
        let t = self.trace(x);
        Ok(self.backward(&t, &[1.0], None))
    }

    /// Output together with its input gradient, for a scalar-output network.
    pub fn value_and_grad_input(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = self.grad_input(x)?;
        Ok((self.forward(x)?[0], g))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u64).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&(*s as u64).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let mut long = [0u8; 8];
        r.read_exact(&mut long)?;
        let count = u64::from_le_bytes(long) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut long)?;
            sizes.push(u64::from_le_bytes(long) as usize);
        }
        let mut net = Self::zeros(&sizes).map_err(|e| Error::Format(e.to_string()))?;
        for p in &mut net.params {
            r.read_exact(&mut long)?;
            *p = f64::from_le_bytes(long);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter in checkpoint".into()));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config("Adam needs beta1, beta2 in [0,1) and eps > 0".into()));
            }
        }
        Ok(Optimizer {
            kind,
            lr,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// One optimizer step on `net`. Non-finite gradients are rejected and leave
/// both the network and the optimizer untouched.
pub fn apply_update(
    net: &mut DenseNet,
    grads: &ParamGradients,
    opt: &mut Optimizer,
    direction: Direction,
) -> Result<()> {
    if grads.0.len() != net.num_params() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            grads.0.len(),
            net.num_params()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
    }
    let sign = match direction {
        Direction::Ascent => 1.0,
        Direction::Descent => -1.0,
    };
    let mut next = net.params.clone();
    match opt.kind {
        OptimizerKind::Sgd => {
            for (p, g) in next.iter_mut().zip(&grads.0) {
                *p += sign * opt.lr * g;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            if opt.m.len() != next.len() {
                opt.m = vec![0.0; next.len()];
                opt.v = vec![0.0; next.len()];
            }
            let t = (opt.steps + 1) as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..next.len() {
                let g = grads.0[i];
                opt.m[i] = beta1 * opt.m[i] + (1.0 - beta1) * g;
                opt.v[i] = beta2 * opt.v[i] + (1.0 - beta2) * g * g;
                let step = opt.lr * (opt.m[i] / c1) / ((opt.v[i] / c2).sqrt() + eps);
                next[i] += sign * step;
            }
        }
    }
    if next.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("update produced a non-finite parameter".into()));
    }
    net.params = next;
    opt.steps += 1;
    Ok(())
}

/// Worst relative disagreement between backpropagation and central
/// differences at one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    pub params: f64,
    pub input: f64,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.params.max(self.input)
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares [`DenseNet::grad_params`] (against `⟨upstream, f⟩`) and
/// [`DenseNet::grad_input`] (scalar nets only) with central differences of
/// step `h`.
pub fn finite_difference_check(net: &DenseNet, x: &[f64], upstream: &[f64], h: f64) -> Result<GradCheck> {
    let dot = |n: &DenseNet, x: &[f64]| -> Result<f64> {
        Ok(n.forward(x)?.iter().zip(upstream).map(|(a, b)| a * b).sum())
    };
    let analytic = net.grad_params(x, upstream)?;
    let mut probe = net.clone();
    let mut worst_p = 0.0f64;
    for i in 0..net.num_params() {
        let p0 = net.params[i];
        probe.params[i] = p0 + h;
        let up = dot(&probe, x)?;
        probe.params[i] = p0 - h;
        let down = dot(&probe, x)?;
        probe.params[i] = p0;
        worst_p = worst_p.max(relative_error(analytic.0[i], (up - down) / (2.0 * h)));
    }
    let mut worst_x = 0.0f64;
    if net.output_size() == 1 {
        let g = net.grad_input(x)?;
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = net.forward(&xp)?[0];
            xp[i] = x[i] - h;
            let down = net.forward(&xp)?[0];
            xp[i] = x[i];
            worst_x = worst_x.max(relative_error(g[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(GradCheck {
        params: worst_p,
        input: worst_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut net = DenseNet::zeros(&[2, 2]).unwrap();
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
        let g = net.grad_params(&[0.3, -0.7], &[1.0, 0.0]).unwrap();
        assert_eq!(g.0, vec![0.3, -0.7, 0.0, 0.0, 1.0, 0.0]);
        let mut scalar = DenseNet::zeros(&[3, 1]).unwrap();
        scalar.set_params(&[0.2, -1.0, 4.0, 9.0]).unwrap();
        assert_eq!(scalar.grad_input(&[5.0, 5.0, 5.0]).unwrap(), vec![0.2, -1.0, 4.0]);
        assert!(matches!(net.grad_input(&[0.0, 0.0]), Err(Error::Logic(_))));
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        // hidden unit = relu(x0 - 10); output = hidden + x1 * 0
        let mut net = DenseNet::zeros(&[2, 1, 1]).unwrap();
        net.set_params(&[1.0, 0.0, -10.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.5, 3.0]).unwrap(), vec![0.0]);
        assert_eq!(net.grad_input(&[0.5, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = DenseNet::new(&[4, 8, 8, 3], 1).unwrap();
        let g = net.grad_params(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = DenseNet::new(&[4, 80, 80, 1], 9).unwrap();
        assert_eq!(a, DenseNet::new(&[4, 80, 80, 1], 9).unwrap());
        assert_ne!(a, DenseNet::new(&[4, 80, 80, 1], 10).unwrap());
        assert!(a.weights(0).iter().all(|w| w.abs() <= 0.5));
        assert!(a.weights(1).iter().all(|w| w.abs() <= 1.0 / 80f64.sqrt()));
    }

    #[test]
    fn sgd_steps_exactly() {
        let mut net = DenseNet::zeros(&[1, 1]).unwrap();
        net.set_params(&[1.0, 2.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        let g = ParamGradients(vec![0.5, -1.0]);
        apply_update(&mut net, &g, &mut opt, Direction::Ascent).unwrap();
        assert_eq!(net.params(), &[1.05, 1.9]);
        apply_update(&mut net, &g, &mut opt, Direction::Descent).unwrap();
        assert!((net.params()[0] - 1.0).abs() < 1e-15 && (net.params()[1] - 2.0).abs() < 1e-15);
        let before = net.clone();
        apply_update(&mut net, &ParamGradients::zeros(2), &mut opt, Direction::Ascent).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut net = DenseNet::new(&[2, 3, 1], 2).unwrap();
        let before = net.clone();
        let mut opt = Optimizer::new(OptimizerKind::adam(), 1e-3).unwrap();
        let mut g = ParamGradients::zeros(net.num_params());
        g.0[3] = f64::NAN;
        assert!(matches!(
            apply_update(&mut net, &g, &mut opt, Direction::Descent),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 0);
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0).is_err());
    }

    #[test]
    fn adam_step_on_constant_gradient_is_lr() {
        let mut net = DenseNet::zeros(&[1, 1]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.01).unwrap();
        let g = ParamGradients(vec![3.0, -0.2]);
        for _ in 0..50 {
            let before = net.params().to_vec();
            apply_update(&mut net, &g, &mut opt, Direction::Descent).unwrap();
            let step = [net.params()[0] - before[0], net.params()[1] - before[1]];
            assert!((step[0] + 0.01).abs() < 1e-8);
            assert!((step[1] - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = DenseNet::new(&[5, 7, 3], 4).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = DenseNet::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(
            net.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(net.sizes(), back.sizes());
        buf[0] = b'X';
        assert!(matches!(DenseNet::read_checkpoint(buf.as_slice()), Err(Error::Format(_))));
    }
}
