//! Backpropagation on a small MLP where every matrix-vector product (forward
//! activations and the transposed-weight delta propagation) runs through the
//! simulated scalar-product datapath, demonstrating train-in-memory.
//!
//! Master weights stay in full precision; the datapath reads their
//! truncation-quantized shadows, which are refreshed after every update.
//! Gradient outer products and the weight update itself are digital
//! peripheral work. Training is plain per-sample SGD with mean-squared-error
//! loss, sequential by epoch and sample so a seed fixes the whole run.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyMeter;
use crate::fp8::{Fp8, Rounding};
use crate::pipeline::{mac, Variability};
use crate::{Error, Result, SimConfig};

/// Layer nonlinearity. `Linear` exists for identity-propagation tests and
/// exact cross-engine comparisons.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            _ => Err(Error::UnknownName { what: "activation", value: s.into() }),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        })
    }
}

/// Which arithmetic executes the network's dot products.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Every row dot product is one pass through the simulated datapath on
    /// truncation-encoded operands.
    #[default]
    TimeFloats,
    /// Full-precision f64 reference on the master weights.
    FloatRef,
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timefloats" => Ok(Engine::TimeFloats),
            "float_ref" => Ok(Engine::FloatRef),
            _ => Err(Error::UnknownName { what: "engine", value: s.into() }),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::TimeFloats => "timefloats",
            Engine::FloatRef => "float_ref",
        })
    }
}

/// Fully-connected network with full-precision master weights and their
/// quantized shadows.
#[derive(Clone, Debug)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    learning_rate: f64,
    /// Row-major `dims[l+1] x dims[l]` per layer.
    master_weights: Vec<Vec<f64>>,
    quantized_weights: Vec<Vec<Fp8>>,
}

#[derive(Serialize)]
struct WeightsDump<'a> {
    layer_dims: &'a [usize],
    layers: &'a [Vec<Fp8>],
}

impl Mlp {
    /// Seeded uniform init scaled by the layer fan-in.
    pub fn new(layer_dims: &[usize], activation: Activation, learning_rate: f64, seed: u64) -> Self {
        assert!(layer_dims.len() >= 2, "need at least one weight layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let master_weights: Vec<Vec<f64>> = layer_dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (fan_in as f64).sqrt().recip();
                (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect()
            })
            .collect();
        let mut net = Mlp {
            layer_dims: layer_dims.to_vec(),
            activation,
            learning_rate,
            master_weights,
            quantized_weights: Vec::new(),
        };
        net.requantize();
        net
    }

    /// Build from explicit row-major weight matrices.
    pub fn from_weights(
        layer_dims: &[usize],
        activation: Activation,
        learning_rate: f64,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if weights.len() + 1 != layer_dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight matrices for {} layer dims",
                weights.len(),
                layer_dims.len()
            )));
        }
        for (l, matrix) in weights.iter().enumerate() {
            let expect = layer_dims[l] * layer_dims[l + 1];
            if matrix.len() != expect {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} has {} weights, expected {expect}",
                    matrix.len()
                )));
            }
        }
        let mut net = Mlp {
            layer_dims: layer_dims.to_vec(),
            activation,
            learning_rate,
            master_weights: weights,
            quantized_weights: Vec::new(),
        };
        net.requantize();
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn master_weights(&self) -> &[Vec<f64>] {
        &self.master_weights
    }

    pub fn quantized_weights(&self) -> &[Vec<Fp8>] {
        &self.quantized_weights
    }

    /// Nudge one master weight (finite-difference probes in tests).
    pub fn adjust_weight(&mut self, layer: usize, index: usize, delta: f64) {
        self.master_weights[layer][index] += delta;
        self.requantize();
    }

    fn requantize(&mut self) {
        self.quantized_weights = self
            .master_weights
            .iter()
            .map(|m| {
                m.iter()
                    .map(|&w| Fp8::encode(w, Rounding::Truncate).expect("finite weight"))
                    .collect()
            })
            .collect();
    }

    fn apply_update(&mut self, grads: &Gradients) {
        for (matrix, grad) in self.master_weights.iter_mut().zip(&grads.weight_grads) {
            for (w, g) in matrix.iter_mut().zip(grad) {
                *w -= self.learning_rate * g;
            }
        }
        self.requantize();
    }

    /// Quantized weights as a JSON code dump.
    pub fn weights_json(&self) -> String {
        let dump = WeightsDump { layer_dims: &self.layer_dims, layers: &self.quantized_weights };
        serde_json::to_string_pretty(&dump).expect("weights serialize")
    }
}

/// Executes the network's dot products on the selected arithmetic, metering
/// datapath energy as it goes.
pub struct MacEngine<'a> {
    kind: Engine,
    sim: &'a SimConfig,
    sigma_exponent: f64,
    sigma_mantissa: f64,
    rng: ChaCha8Rng,
    pub meter: EnergyMeter,
}

impl<'a> MacEngine<'a> {
    pub fn new(kind: Engine, sim: &'a SimConfig) -> Self {
        Self::with_variability(kind, sim, 0.0, 0.0, 0)
    }

    /// Engine whose datapath calls draw perturbations from a stream seeded
    /// here; the run is deterministic per seed.
    pub fn with_variability(
        kind: Engine,
        sim: &'a SimConfig,
        sigma_exponent: f64,
        sigma_mantissa: f64,
        seed: u64,
    ) -> Self {
        MacEngine {
            kind,
            sim,
            sigma_exponent,
            sigma_mantissa,
            rng: ChaCha8Rng::seed_from_u64(seed),
            meter: EnergyMeter::default(),
        }
    }

    pub fn kind(&self) -> Engine {
        self.kind
    }

    fn datapath_dot(&mut self, x: &[Fp8], w_row: &[Fp8]) -> Result<f64> {
        let sim = self.sim;
        let var = (self.sigma_exponent > 0.0 || self.sigma_mantissa > 0.0).then(|| Variability {
            sigma_exponent: self.sigma_exponent,
            sigma_mantissa: self.sigma_mantissa,
            rng: &mut self.rng,
        });
        let trace = mac(x, w_row, sim, var)?;
        self.meter.record_mac(x.len(), &sim.energy);
        Ok(trace.output_value())
    }

    /// `matrix · vector` where `matrix` is row-major `rows x vector.len()`.
    /// The f64 columns are the master weights; the Fp8 ones their shadows.
    fn matvec(
        &mut self,
        master: &[f64],
        quantized: &[Fp8],
        rows: usize,
        vector: &[f64],
    ) -> Result<Vec<f64>> {
        let dim = vector.len();
        match self.kind {
            Engine::FloatRef => Ok((0..rows)
                .map(|j| {
                    master[j * dim..(j + 1) * dim]
                        .iter()
                        .zip(vector)
                        .map(|(w, x)| w * x)
                        .sum()
                })
                .collect()),
            Engine::TimeFloats => {
                let x_fp: Vec<Fp8> = vector
                    .iter()
                    .map(|&v| Fp8::encode(v, Rounding::Truncate))
                    .collect::<Result<_>>()?;
                (0..rows)
                    .map(|j| self.datapath_dot(&x_fp, &quantized[j * dim..(j + 1) * dim]))
                    .collect()
            }
        }
    }

    /// `matrix^T · vector`, reading the stored matrix column-wise.
    fn matvec_transposed(
        &mut self,
        master: &[f64],
        quantized: &[Fp8],
        rows: usize,
        vector: &[f64],
    ) -> Result<Vec<f64>> {
        debug_assert_eq!(vector.len(), rows);
        let cols = master.len() / rows;
        match self.kind {
            Engine::FloatRef => Ok((0..cols)
                .map(|k| (0..rows).map(|j| master[j * cols + k] * vector[j]).sum())
                .collect()),
            Engine::TimeFloats => {
                let v_fp: Vec<Fp8> = vector
                    .iter()
                    .map(|&v| Fp8::encode(v, Rounding::Truncate))
                    .collect::<Result<_>>()?;
                (0..cols)
                    .map(|k| {
                        let column: Vec<Fp8> =
                            (0..rows).map(|j| quantized[j * cols + k]).collect();
                        self.datapath_dot(&v_fp, &column)
                    })
                    .collect()
            }
        }
    }
}

/// Activations and pre-activations of one forward pass.
/// `activations[0]` is the input; `activations[l+1]` the output of layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

/// Forward pass: `x_l = f(W_l x_{l-1})` layer by layer. On the datapath
/// engine the activations are re-encoded to the 8-bit format between layers.
pub fn forward(net: &Mlp, x0: &[f64], engine: &mut MacEngine) -> Result<ForwardPass> {
    if x0.len() != net.layer_dims[0] {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, expected {}",
            x0.len(),
            net.layer_dims[0]
        )));
    }
    let mut activations = vec![x0.to_vec()];
    let mut pre_activations = Vec::with_capacity(net.layer_count());
    for l in 0..net.layer_count() {
        let z = engine.matvec(
            &net.master_weights[l],
            &net.quantized_weights[l],
            net.layer_dims[l + 1],
            activations.last().expect("seeded with input"),
        )?;
        let a: Vec<f64> = z.iter().map(|&v| net.activation.apply(v)).collect();
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ForwardPass { activations, pre_activations })
}

/// Per-layer error signals and weight gradients of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// Row-major, same shapes as the weight matrices.
    pub weight_grads: Vec<Vec<f64>>,
    /// `deltas[l]` is the error at the output of layer `l`.
    pub deltas: Vec<Vec<f64>>,
    /// Mean-squared-error loss `0.5 * |x_L - t|^2` of the sample.
    pub loss: f64,
}

/// Backward pass: the output delta is `(x_L - t) .* f'(z_L)`; hidden deltas
/// propagate through the transposed weights (on the datapath engine, through
/// the transposed quantized matrix); weight gradients are the digital outer
/// products `delta_l x_{l-1}^T`.
pub fn backward(
    net: &Mlp,
    fwd: &ForwardPass,
    target: &[f64],
    engine: &mut MacEngine,
) -> Result<Gradients> {
    let layers = net.layer_count();
    let out_dim = net.layer_dims[layers];
    if target.len() != out_dim {
        return Err(Error::DimensionMismatch(format!(
            "target has {} entries, expected {out_dim}",
            target.len()
        )));
    }
    let output = fwd.output();
    let loss = 0.5 * output.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();

    let mut deltas = vec![Vec::new(); layers];
    deltas[layers - 1] = output
        .iter()
        .zip(target)
        .zip(&fwd.pre_activations[layers - 1])
        .map(|((o, t), &z)| (o - t) * net.activation.derivative(z))
        .collect();
    for l in (0..layers - 1).rev() {
        let propagated = engine.matvec_transposed(
            &net.master_weights[l + 1],
            &net.quantized_weights[l + 1],
            net.layer_dims[l + 2],
            &deltas[l + 1],
        )?;
        deltas[l] = propagated
            .iter()
            .zip(&fwd.pre_activations[l])
            .map(|(&s, &z)| s * net.activation.derivative(z))
            .collect();
    }

    let weight_grads = (0..layers)
        .map(|l| {
            let input = &fwd.activations[l];
            deltas[l].iter().flat_map(|&d| input.iter().map(move |&x| d * x)).collect()
        })
        .collect();
    Ok(Gradients { weight_grads, deltas, loss })
}

/// One epoch row of the training log; energy and MAC counts are cumulative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub total_energy: f64,
    pub mac_count: u64,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,accuracy,energy_j,mac_count";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.loss, self.accuracy, self.total_energy, self.mac_count
        )
    }
}

/// Labeled training set: per-sample input features, regression targets
/// (one-hot for classification), and the class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }
}

/// Built-in synthetic set: two interleaved half-moon arcs centered at the
/// origin with seeded Gaussian jitter, classes alternating sample by sample.
/// Each 2-D point is lifted with a constant 1.0 feature so the bias-free
/// network still gets an offset term. Deterministic per seed.
pub fn two_moons(points: usize, noise: f64, seed: u64) -> Dataset {
    assert!(points >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = points.div_ceil(2);
    let mut inputs = Vec::with_capacity(points);
    let mut targets = Vec::with_capacity(points);
    let mut labels = Vec::with_capacity(points);
    for i in 0..points {
        let label = i % 2;
        let t = PI * (i / 2) as f64 / (per_class - 1).max(1) as f64;
        let (cx, cy) = (t.cos() - 0.5, t.sin() - 0.25);
        let (mut px, mut py) = if label == 0 { (cx, cy) } else { (-cx, -cy) };
        let jx: f64 = StandardNormal.sample(&mut rng);
        let jy: f64 = StandardNormal.sample(&mut rng);
        px += noise * jx;
        py += noise * jy;
        inputs.push(vec![px, py, 1.0]);
        targets.push(if label == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        labels.push(label);
    }
    Dataset { inputs, targets, labels }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epoch loop of per-sample forward/backward/update with requantization
/// after every update. Loss and accuracy are measured on the pass each
/// sample sees before its own update.
pub fn train(
    net: &mut Mlp,
    data: &Dataset,
    epochs: usize,
    engine: &mut MacEngine,
) -> Result<Vec<TrainRecord>> {
    if data.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    assert!(epochs >= 1, "epochs must be at least 1");
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for ((input, target), &label) in data.inputs.iter().zip(&data.targets).zip(&data.labels) {
            let fwd = forward(net, input, engine)?;
            if argmax(fwd.output()) == label {
                correct += 1;
            }
            let grads = backward(net, &fwd, target, engine)?;
            loss_sum += grads.loss;
            net.apply_update(&grads);
        }
        records.push(TrainRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            total_energy: engine.meter.total_energy,
            mac_count: engine.meter.mac_count,
        });
    }
    Ok(records)
}

/// Knobs of the built-in train-in-memory demonstration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub engine: Engine,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub points: usize,
    pub noise: f64,
    pub sigma_exponent: f64,
    pub sigma_mantissa: f64,
    /// Drives the dataset, the weight init, and the variability stream
    /// (through fixed sub-seed offsets), so one number pins the whole run.
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            engine: Engine::TimeFloats,
            epochs: 300,
            learning_rate: 0.5,
            hidden: 8,
            points: 200,
            noise: 0.12,
            sigma_exponent: 0.0,
            sigma_mantissa: 0.0,
            seed: 7,
        }
    }
}

/// The built-in demonstration: train a `[3, hidden, 2]` sigmoid classifier
/// on the synthetic moons set. Returns the epoch records and the trained
/// network. Deterministic per [`DemoConfig`].
pub fn demo_train(demo: &DemoConfig, sim: &SimConfig) -> Result<(Vec<TrainRecord>, Mlp)> {
    let data = two_moons(demo.points, demo.noise, demo.seed);
    let mut net = Mlp::new(
        &[data.input_dim(), demo.hidden, 2],
        Activation::Sigmoid,
        demo.learning_rate,
        demo.seed.wrapping_add(1),
    );
    let mut engine = MacEngine::with_variability(
        demo.engine,
        sim,
        demo.sigma_exponent,
        demo.sigma_mantissa,
        demo.seed.wrapping_add(2),
    );
    let records = train(&mut net, &data, demo.epochs, &mut engine)?;
    Ok((records, net))
}
