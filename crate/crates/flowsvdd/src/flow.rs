//! Invertible map with constant Jacobian determinant: a stack of additive
//! coupling layers followed by a diagonal scaling layer.
//!
//! Additive couplings have unit Jacobian determinant, so the scaling layer is
//! the only volume contribution: log|det J| = sum of the log-scales,
//! independent of the input point.

use rand::Rng;

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Architecture knobs for the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub coupling_layers: usize,
    /// Hidden layers per conditioner MLP.
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    /// When false the log-scales stay frozen at zero (w = 1).
    pub scaling_enabled: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            coupling_layers: 4,
            hidden_layers: 4,
            // 128 keeps a full default run under a minute on one core while
            // matching wider nets on every task we ship
            hidden_dim: 128,
            scaling_enabled: true,
        }
    }
}

/// Conditioner network: relu hidden layers, linear output, zero-initialized
/// final layer so a fresh flow is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Mlp {
    fn init<R: Rng>(
        in_dim: usize,
        hidden_dim: usize,
        hidden_layers: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat(hidden_dim).take(hidden_layers));
        dims.push(out_dim);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let last = l == dims.len() - 2;
            let bound = (1.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| if last { 0.0 } else { rng.random_range(-bound..bound) })
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data).expect("finite init"));
            biases.push(Tensor::zeros(vec![fan_out]));
        }
        Mlp { weights, biases }
    }

    fn forward_tape(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        debug_assert_eq!(params.len(), 2 * self.weights.len());
        let mut h = x;
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let z = tape.matmul(h, params[2 * l])?;
            h = tape.add(z, params[2 * l + 1])?;
            if l != last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Plain evaluation without gradient tracking; used by the inverse pass.
    fn forward_plain(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let params = self.register_params(&mut tape);
        let out = self.forward_tape(&mut tape, xv, &params)?;
        Ok(tape.value(out).clone())
    }

    fn register_params(&self, tape: &mut Tape) -> Vec<Var> {
        let mut vars = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            vars.push(tape.leaf(w.clone()));
            vars.push(tape.leaf(b.clone()));
        }
        vars
    }

    fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

/// Additive coupling: passive coordinates pass through untouched, active
/// coordinates are shifted by the conditioner applied to the passive block.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub passive: Vec<usize>,
    pub active: Vec<usize>,
    pub mlp: Mlp,
}

impl CouplingLayer {
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let xa = tape.select_cols(x, &self.passive)?;
        let xb = tape.select_cols(x, &self.active)?;
        let shift = self.mlp.forward_tape(tape, xa, params)?;
        let yb = tape.add(xb, shift)?;
        let width = self.passive.len() + self.active.len();
        tape.combine_cols(xa, &self.passive, yb, &self.active, width)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let params = self.mlp.register_params(&mut tape);
        let out = self.forward_tape(&mut tape, xv, &params)?;
        Ok(tape.value(out).clone())
    }

    /// Exact algebraic inverse: x_B = y_B - m(y_A).
    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let width = self.passive.len() + self.active.len();
        check_width("coupling_inverse", y, width)?;
        let n = y.rows();
        let ya = select(y, &self.passive);
        let shift = self.mlp.forward_plain(&ya)?;
        let mut out = y.clone();
        let data = out.data_mut();
        for i in 0..n {
            for (j, &c) in self.active.iter().enumerate() {
                data[i * width + c] -= shift.data()[i * self.active.len() + j];
            }
        }
        Ok(out)
    }
}

/// Diagonal scaling: z_d = exp(s_d) * x_d. The only layer with a nonunit
/// Jacobian; log|det| = sum(s).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingLayer {
    pub log_scales: Tensor,
}

impl ScalingLayer {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let sv = tape.leaf(self.log_scales.clone());
        let out = self.forward_tape(&mut tape, xv, sv)?;
        Ok((tape.value(out).clone(), self.log_det()))
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var, s: Var) -> Result<Var> {
        let es = tape.exp(s)?;
        tape.mul(x, es)
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        let d = self.log_scales.len();
        check_width("scaling_inverse", z, d)?;
        let s = self.log_scales.data();
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v * (-s[k % d]).exp())
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }

    pub fn log_det(&self) -> f64 {
        self.log_scales.data().iter().sum()
    }
}

/// The full invertible map: coupling layers with alternating masks, then the
/// scaling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub input_dim: usize,
    pub couplings: Vec<CouplingLayer>,
    pub scaling: ScalingLayer,
    pub scaling_enabled: bool,
}

/// Tape variables for all flow parameters, in the canonical order used by
/// [`FlowModel::params`].
pub struct ParamVars {
    pub coupling: Vec<Vec<Var>>,
    pub log_scales: Var,
}

impl FlowModel {
    /// Fresh model; zero-initialized conditioner outputs and zero log-scales
    /// make it the identity map.
    pub fn new<R: Rng>(input_dim: usize, cfg: &FlowConfig, rng: &mut R) -> Result<Self> {
        if input_dim < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "flow_new",
                detail: format!("coupling layers need D >= 2, got {}", input_dim),
            });
        }
        let half = input_dim.div_ceil(2);
        let low: Vec<usize> = (0..half).collect();
        let high: Vec<usize> = (half..input_dim).collect();
        let mut couplings = Vec::with_capacity(cfg.coupling_layers);
        for i in 0..cfg.coupling_layers {
            // layers 0,2,... keep the low half passive; 1,3,... the high half
            let (passive, active) = if i % 2 == 0 {
                (low.clone(), high.clone())
            } else {
                (high.clone(), low.clone())
            };
            let mlp = Mlp::init(passive.len(), cfg.hidden_dim, cfg.hidden_layers, active.len(), rng);
            couplings.push(CouplingLayer { passive, active, mlp });
        }
        Ok(FlowModel {
            input_dim,
            couplings,
            scaling: ScalingLayer { log_scales: Tensor::zeros(vec![input_dim]) },
            scaling_enabled: cfg.scaling_enabled,
        })
    }

    pub fn register_params(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            coupling: self.couplings.iter().map(|c| c.mlp.register_params(tape)).collect(),
            log_scales: tape.leaf(self.scaling.log_scales.clone()),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var, pv: &ParamVars) -> Result<Var> {
        check_width("flow_forward", tape.value(x), self.input_dim)?;
        let mut h = x;
        for (layer, params) in self.couplings.iter().zip(&pv.coupling) {
            h = layer.forward_tape(tape, h, params)?;
        }
        self.scaling.forward_tape(tape, h, pv.log_scales)
    }

    /// f(x) for a batch, without gradient tracking.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let pv = self.register_params(&mut tape);
        let out = self.forward_tape(&mut tape, xv, &pv)?;
        Ok(tape.value(out).clone())
    }

    /// Exact inverse: layers applied in reverse order.
    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        check_width("flow_inverse", z, self.input_dim)?;
        let mut h = self.scaling.inverse(z)?;
        for layer in self.couplings.iter().rev() {
            h = layer.inverse(&h)?;
        }
        Ok(h)
    }

    /// log w, the log Jacobian determinant. Structurally constant: it takes
    /// no data point.
    pub fn log_jacobian(&self) -> f64 {
        self.scaling.log_det()
    }

    /// f(x) / w^(1/D): the volume-normalized embedding, on the tape so the
    /// gradient flows through both the couplings and the log-scales.
    pub fn normalized_embed_tape(&self, tape: &mut Tape, x: Var, pv: &ParamVars) -> Result<Var> {
        let y = self.forward_tape(tape, x, pv)?;
        let s_sum = tape.sum(pv.log_scales)?;
        let t = tape.scale(s_sum, -1.0 / self.input_dim as f64)?;
        let g = tape.exp(t)?;
        tape.scale_by_var(y, g)
    }

    pub fn normalized_embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let pv = self.register_params(&mut tape);
        let out = self.normalized_embed_tape(&mut tape, xv, &pv)?;
        Ok(tape.value(out).clone())
    }

    /// All trainable tensors in canonical order: per-coupling MLP weights and
    /// biases interleaved, then the log-scales.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.couplings.iter().flat_map(|c| c.mlp.params()).collect();
        out.push(&self.scaling.log_scales);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .couplings
            .iter_mut()
            .flat_map(|c| c.mlp.params_mut())
            .collect();
        out.push(&mut self.scaling.log_scales);
        out
    }

    /// Flat list of the tape vars matching [`FlowModel::params`] order.
    pub fn param_vars(pv: &ParamVars) -> Vec<Var> {
        let mut out: Vec<Var> = pv.coupling.iter().flatten().copied().collect();
        out.push(pv.log_scales);
        out
    }
}

fn check_width(op: &'static str, t: &Tensor, want: usize) -> Result<()> {
    if t.cols() != want {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected {} columns, got {:?}", want, t.shape()),
        });
    }
    Ok(())
}

fn select(t: &Tensor, cols: &[usize]) -> Tensor {
    let (n, d) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        let row = &t.data()[i * d..(i + 1) * d];
        data.extend(cols.iter().map(|&c| row[c]));
    }
    Tensor::matrix(n, cols.len(), data).expect("selection of finite data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> FlowConfig {
        FlowConfig { coupling_layers: 4, hidden_layers: 2, hidden_dim: 16, scaling_enabled: true }
    }

    fn random_model(dim: usize, seed: u64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FlowModel::new(dim, &small_cfg(), &mut rng).unwrap();
        // zero-init final layers make a fresh model the identity; perturb all
        // params so tests see a generic flow
        for p in m.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        m
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn fresh_model_is_identity_with_zero_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FlowModel::new(3, &small_cfg(), &mut rng).unwrap();
        let x = random_batch(5, 3, 1);
        let y = m.forward(&x).unwrap();
        assert_eq!(x.data(), y.data());
        assert_eq!(m.log_jacobian(), 0.0);
    }

    #[test]
    fn coupling_identity_conditioner_hand_example() {
        // D=2, passive {0}, active {1}, m(x0) = x0
        let mlp = Mlp {
            weights: vec![Tensor::matrix(1, 1, vec![1.0]).unwrap()],
            biases: vec![Tensor::zeros(vec![1])],
        };
        let layer = CouplingLayer { passive: vec![0], active: vec![1], mlp };
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0]);
        let back = layer.inverse(&y).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0]);
    }

    #[test]
    fn coupling_roundtrip_many_points() {
        let m = random_model(4, 7);
        let layer = &m.couplings[1];
        let x = random_batch(1000, 4, 8);
        let y = layer.forward(&x).unwrap();
        // passive coordinates pass through bit-identically
        for i in 0..x.rows() {
            for &c in &layer.passive {
                assert_eq!(x.row(i)[c].to_bits(), y.row(i)[c].to_bits());
            }
        }
        let back = layer.inverse(&y).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn coupling_rejects_d_below_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FlowModel::new(1, &small_cfg(), &mut rng).is_err());
    }

    #[test]
    fn scaling_hand_example() {
        let s = ScalingLayer {
            log_scales: Tensor::vector(vec![2f64.ln(), 3f64.ln()]).unwrap(),
        };
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let (z, logdet) = s.forward(&x).unwrap();
        assert!((z.data()[0] - 2.0).abs() < 1e-12);
        assert!((z.data()[1] - 3.0).abs() < 1e-12);
        assert!((logdet - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn scaling_zero_is_identity() {
        let s = ScalingLayer { log_scales: Tensor::zeros(vec![3]) };
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
        let (z, logdet) = s.forward(&x).unwrap();
        assert_eq!(z.data(), x.data());
        assert_eq!(logdet, 0.0);
    }

    #[test]
    fn flow_roundtrip() {
        for (dim, seed) in [(2, 1u64), (5, 2), (7, 3)] {
            let m = random_model(dim, seed);
            let x = random_batch(200, dim, seed + 100);
            let z = m.forward(&x).unwrap();
            let back = m.inverse(&z).unwrap();
            let max_err = x
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-7, "roundtrip error {}", max_err);
        }
    }

    #[test]
    fn batch_equals_pointwise_bitwise() {
        let m = random_model(3, 11);
        let x = random_batch(17, 3, 12);
        let z = m.forward(&x).unwrap();
        for i in 0..x.rows() {
            let one = Tensor::matrix(1, 3, x.row(i).to_vec()).unwrap();
            let zi = m.forward(&one).unwrap();
            for (a, b) in z.row(i).iter().zip(zi.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = random_model(3, 4);
        let x = random_batch(2, 4, 5);
        assert!(m.forward(&x).is_err());
        assert!(m.inverse(&x).is_err());
    }

    #[test]
    fn log_jacobian_hand_values() {
        let mut m = random_model(2, 21);
        m.scaling.log_scales = Tensor::zeros(vec![2]);
        assert_eq!(m.log_jacobian(), 0.0);
        m.scaling.log_scales = Tensor::vector(vec![2f64.ln(), 3f64.ln()]).unwrap();
        assert!((m.log_jacobian() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn normalized_embed_uniform_scaling_cancels() {
        // identity couplings + uniform log-scales: f(x)/w^(1/D) = x
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = FlowModel::new(3, &small_cfg(), &mut rng).unwrap();
        m.scaling.log_scales = Tensor::vector(vec![2f64.ln(); 3]).unwrap();
        let x = random_batch(10, 3, 9);
        let z = m.normalized_embed(&x).unwrap();
        for (a, b) in x.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_alternation_covers_every_coordinate_twice() {
        let m = random_model(5, 30);
        let mut touched = vec![0usize; 5];
        for c in &m.couplings {
            for &i in &c.active {
                touched[i] += 1;
            }
            let mut all: Vec<usize> = c.active.iter().chain(&c.passive).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..5).collect::<Vec<_>>());
            assert!(c.passive.len() == 2 || c.passive.len() == 3);
        }
        assert!(touched.iter().all(|&t| t == 2));
    }
}
