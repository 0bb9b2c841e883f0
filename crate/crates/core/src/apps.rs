//! Sample applications: shopping-cart checkout and fixed-point neural-network
//! inference, emitted as source text for the compiler.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Fixed, SCALE_FACTOR};

/// Tiered discount rule for the checkout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartRule {
    pub low_threshold: Fixed,
    pub high_threshold: Fixed,
    /// Factor applied above the low threshold.
    pub low_factor: Fixed,
    /// Factor applied above the high threshold.
    pub high_factor: Fixed,
}

impl Default for CartRule {
    fn default() -> CartRule {
        CartRule {
            low_threshold: Fixed::from_int(250),
            high_threshold: Fixed::from_int(500),
            low_factor: Fixed::parse("0.95").expect("literal"),
            high_factor: Fixed::parse("0.90").expect("literal"),
        }
    }
}

pub const MIN_PRICE_CENTS: i64 = 1;
pub const MAX_PRICE_CENTS: i64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppError {
    #[error("price {0} is outside [0.01, 1000.00]")]
    PriceOutOfRange(Fixed),
    #[error("layer sizes need an input and an output layer, each non-empty")]
    Topology,
    #[error("expected {expected} weights, found {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("expected {expected} features, found {found}")]
    FeatureCount { expected: usize, found: usize },
    #[error("arithmetic overflow in forward pass")]
    Overflow,
}

/// Item prices of one cart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartSpec {
    pub prices: Vec<Fixed>,
}

impl CartSpec {
    pub fn new(prices: Vec<Fixed>) -> Result<CartSpec, AppError> {
        let (lo, hi) = (cents(MIN_PRICE_CENTS), cents(MAX_PRICE_CENTS));
        for p in &prices {
            let n = p.normalized().ok_or(AppError::PriceOutOfRange(*p))?;
            if n < lo || n > hi {
                return Err(AppError::PriceOutOfRange(*p));
            }
        }
        Ok(CartSpec { prices })
    }

    /// Prices drawn uniformly in whole cents from [0.01, 1000.00].
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CartSpec {
        CartSpec { prices: (0..n).map(|_| cents(rng.gen_range(MIN_PRICE_CENTS..=MAX_PRICE_CENTS))).collect() }
    }

    pub fn inputs(&self) -> BTreeMap<String, Fixed> {
        self.prices.iter().enumerate().map(|(i, p)| (format!("p{i}"), *p)).collect()
    }
}

fn cents(c: i64) -> Fixed {
    Fixed::new(c as i128 * (SCALE_FACTOR / 100), 1)
}

/// Checkout over `n` prices named `p0..`: sum, then apply the tiered
/// discount. Compiles to two comparison sites and one to-mul site.
pub fn cart_program(n: usize, rule: &CartRule) -> String {
    let mut s = String::new();
    if n > 0 {
        let names: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let _ = writeln!(s, "input {};", names.join(", "));
        let _ = writeln!(s, "sum = {};", names.join(" + "));
    } else {
        s.push_str("sum = 0;\n");
    }
    let _ = writeln!(
        s,
        "if (sum > {hi}) {{\n    total = sum * {hf};\n}} else {{\n    if (sum > {lo}) {{\n        total = sum * {lf};\n    }} else {{\n        total = sum;\n    }}\n}}\noutput total;",
        hi = rule.high_threshold,
        hf = rule.high_factor,
        lo = rule.low_threshold,
        lf = rule.low_factor,
    );
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// max(z, 0)
    Relu,
    /// 1 if z > 0, else 0
    Step,
}

/// Fully connected feed-forward network. Weights are stored per layer
/// transition, row-major by target neuron, each row followed by its bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Fixed>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<usize>, activation: Activation, weights: Vec<Fixed>) -> Result<NetworkSpec, AppError> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(AppError::Topology);
        }
        let expected = param_count(&layers);
        if weights.len() != expected {
            return Err(AppError::WeightCount { expected, found: weights.len() });
        }
        Ok(NetworkSpec { layers, activation, weights })
    }

    /// Weights and biases drawn uniformly from [-1, 1] with six decimals.
    pub fn random<R: Rng + ?Sized>(layers: Vec<usize>, activation: Activation, rng: &mut R) -> Result<NetworkSpec, AppError> {
        let n = if layers.len() < 2 { 0 } else { param_count(&layers) };
        let weights = (0..n).map(|_| Fixed::new(rng.gen_range(-SCALE_FACTOR..=SCALE_FACTOR), 1)).collect();
        NetworkSpec::new(layers, activation, weights)
    }

    /// Connections between neurons, excluding biases.
    pub fn edges(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Neurons that compute, i.e. all but the input layer.
    pub fn neurons(&self) -> usize {
        self.layers[1..].iter().sum()
    }

    pub fn inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layers.last().expect("validated")
    }

    /// (weights, bias) of neuron `j` in transition `l`.
    fn neuron(&self, l: usize, j: usize) -> (&[Fixed], Fixed) {
        let offset: usize = self.layers.windows(2).take(l).map(|w| (w[0] + 1) * w[1]).sum();
        let fan_in = self.layers[l];
        let start = offset + j * (fan_in + 1);
        (&self.weights[start..start + fan_in], self.weights[start + fan_in])
    }

    /// Plaintext forward pass with the same rounding as the encrypted one:
    /// each product is rounded to scale one before it is summed.
    pub fn forward(&self, x: &[Fixed]) -> Result<Vec<Fixed>, AppError> {
        if x.len() != self.inputs() {
            return Err(AppError::FeatureCount { expected: self.inputs(), found: x.len() });
        }
        let mut act: Vec<Fixed> = x.to_vec();
        for l in 0..self.layers.len() - 1 {
            let mut next = Vec::with_capacity(self.layers[l + 1]);
            for j in 0..self.layers[l + 1] {
                let (w, b) = self.neuron(l, j);
                let mut z = b.normalized().ok_or(AppError::Overflow)?.mantissa;
                for (wi, xi) in w.iter().zip(&act) {
                    let p = wi.checked_mul(xi).and_then(|p| p.normalized()).ok_or(AppError::Overflow)?;
                    z = z.checked_add(p.mantissa).ok_or(AppError::Overflow)?;
                }
                next.push(match self.activation {
                    Activation::Relu => Fixed::new(z.max(0), 1),
                    Activation::Step => Fixed::from_int((z > 0) as i64),
                });
            }
            act = next;
        }
        Ok(act)
    }

    /// Index of the largest output, ties to the lowest index.
    pub fn predict(&self, x: &[Fixed]) -> Result<usize, AppError> {
        Ok(argmax(&self.forward(x)?))
    }
}

pub fn argmax(v: &[Fixed]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x > &v[best] {
            best = i;
        }
    }
    best
}

fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Topology of the shipped network: nine features, one hidden layer of six,
/// two class scores. Small enough that an encrypted pass takes well under a
/// second on one core.
pub const DEFAULT_TOPOLOGY: [usize; 3] = [9, 6, 2];

/// Larger topology used for operation-count reports.
pub const WIDE_TOPOLOGY: [usize; 4] = [9, 9, 14, 2];

/// Unrolled forward pass. Inputs are `x0..`, outputs `y0..`.
///
/// Each neuron sums weight-input products and its bias, then applies the
/// activation with one comparison against zero. Outputs are kept
/// multiplicative so that every computing neuron ends in one to-mul.
pub fn nn_program(spec: &NetworkSpec) -> String {
    let mut s = String::new();
    let xs: Vec<String> = (0..spec.inputs()).map(|i| format!("x{i}")).collect();
    let _ = writeln!(s, "input {};", xs.join(", "));
    let mut prev = xs;
    let last = spec.layers.len() - 2;
    for l in 0..=last {
        let mut cur = Vec::new();
        for j in 0..spec.layers[l + 1] {
            let (w, b) = spec.neuron(l, j);
            let z = format!("z{}_{j}", l + 1);
            let a = if l == last { format!("y{j}") } else { format!("h{}_{j}", l + 1) };
            let terms: Vec<String> = w.iter().zip(&prev).map(|(wi, xi)| format!("{} * {xi}", literal(wi))).collect();
            let _ = writeln!(s, "{z} = {} + {};", terms.join(" + "), literal(&b));
            let (on, off) = match spec.activation {
                Activation::Relu => (z.clone(), "0".to_string()),
                Activation::Step => ("1".to_string(), "0".to_string()),
            };
            let _ = writeln!(s, "if ({z} > 0) {{ {a} = {on}; }} else {{ {a} = {off}; }}");
            cur.push(a);
        }
        prev = cur;
    }
    let outs: Vec<String> = prev.iter().map(|y| format!("{y} : mul")).collect();
    let _ = writeln!(s, "output {};", outs.join(", "));
    s
}

fn literal(v: &Fixed) -> String {
    if v.mantissa < 0 {
        format!("({v})")
    } else {
        v.to_string()
    }
}

/// Synthetic tumour-like records: nine integer features in 1..=10 with a
/// label, so the encrypted network has realistic input ranges.
pub fn synthetic_dataset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(Vec<Fixed>, usize)> {
    (0..n)
        .map(|_| {
            let malignant = rng.gen_bool(0.35);
            let features = (0..9)
                .map(|_| {
                    let v = if malignant { rng.gen_range(4..=10) } else { rng.gen_range(1..=5) };
                    Fixed::from_int(v)
                })
                .collect();
            (features, malignant as usize)
        })
        .collect()
}

pub fn feature_inputs(x: &[Fixed]) -> BTreeMap<String, Fixed> {
    x.iter().enumerate().map(|(i, v)| (format!("x{i}"), *v)).collect()
}
