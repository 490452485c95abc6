//! Fully connected tanh network `t -> (u, v)` with the trainable equation parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Graph};
use crate::error::{Error, Result};

/// Layer widths, initialization seed and output scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    pub seed: u64,
    /// Both heads are multiplied by this constant after the linear output layer,
    /// so the trainable weights stay O(1) when the solution is large.
    pub output_scale: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![1, 40, 40, 2],
            seed: 0,
            output_scale: 1.0,
        }
    }
}

impl MlpConfig {
    pub fn new(widths: Vec<usize>, seed: u64) -> Result<Self> {
        let cfg = Self {
            widths,
            seed,
            output_scale: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 || w[0] != 1 || w[w.len() - 1] != 2 || w.contains(&0) {
            return Err(Error::invalid(format!(
                "network widths must be [1, hidden.., 2] with positive hidden widths, got {w:?}"
            )));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::invalid(format!(
                "output scale must be positive and finite, got {}",
                self.output_scale
            )));
        }
        Ok(())
    }

    /// Length of the flattened parameter vector, theta included.
    pub fn parameter_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum::<usize>()
            + 1
    }
}

/// Weights (row-major, `out x in`), biases and `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub config: MlpConfig,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub theta: f64,
}

/// The two network heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkOutput<T> {
    /// Approximates the solution `X(t)`.
    pub u: T,
    /// Approximates the drift integral.
    pub v: T,
}

impl ParameterSet {
    /// Glorot-uniform weights, zero biases, `theta = 0`.
    pub fn init(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in config.widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("valid bounds");
            weights.push((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            config: config.clone(),
            weights,
            biases,
            theta: 0.0,
        })
    }

    /// Layer-major: each layer's weights (row-major) then its biases; theta last.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.push(self.theta);
        out
    }

    pub fn unflatten(flat: &[f64], config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_count();
        if flat.len() != expected {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, expected {expected}",
                flat.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut rest = flat;
        for pair in config.widths.windows(2) {
            let (w, tail) = rest.split_at(pair[0] * pair[1]);
            let (b, tail) = tail.split_at(pair[1]);
            weights.push(w.to_vec());
            biases.push(b.to_vec());
            rest = tail;
        }
        Ok(Self {
            config: config.clone(),
            weights,
            biases,
            theta: rest[0],
        })
    }

    fn check_finite(&self) -> Result<()> {
        let bad = self
            .weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .chain(std::iter::once(&self.theta))
            .position(|x| !x.is_finite());
        match bad {
            Some(i) => Err(Error::NonFinite {
                node: i,
                kind: "parameter",
            }),
            None => Ok(()),
        }
    }

    /// Plain numeric forward pass.
    pub fn predict(&self, t: f64) -> NetworkOutput<f64> {
        let mut act = vec![t];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_in = act.len();
            act = b
                .iter()
                .enumerate()
                .map(|(o, bias)| {
                    let z: f64 = w[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(&act)
                        .map(|(wi, a)| wi * a)
                        .sum::<f64>()
                        + bias;
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
        }
        let sc = self.config.output_scale;
        NetworkOutput {
            u: sc * act[0],
            v: sc * act[1],
        }
    }

    /// Register every parameter as a graph variable, in flattening order.
    pub fn register(&self, graph: &mut Graph) -> Result<NetworkVars> {
        self.check_finite()?;
        let mut layers = Vec::with_capacity(self.weights.len());
        let mut flat = Vec::with_capacity(self.config.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let wv: Vec<Expr> = w.iter().map(|&x| graph.variable(x)).collect();
            let bv: Vec<Expr> = b.iter().map(|&x| graph.variable(x)).collect();
            flat.extend_from_slice(&wv);
            flat.extend_from_slice(&bv);
            layers.push((wv, bv));
        }
        let theta = graph.variable(self.theta);
        flat.push(theta);
        Ok(NetworkVars {
            layers,
            output_scale: self.config.output_scale,
            theta,
            flat,
        })
    }

    pub fn to_snapshot(&self) -> ParameterSnapshot {
        ParameterSnapshot {
            config: self.config.clone(),
            seed: self.config.seed,
            parameters: self.flatten(),
        }
    }

    pub fn from_snapshot(s: &ParameterSnapshot) -> Result<Self> {
        Self::unflatten(&s.parameters, &s.config)
    }
}

/// JSON form of a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSnapshot {
    pub config: MlpConfig,
    pub seed: u64,
    pub parameters: Vec<f64>,
}

/// Graph variables for one [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct NetworkVars {
    layers: Vec<(Vec<Expr>, Vec<Expr>)>,
    output_scale: f64,
    pub theta: Expr,
    flat: Vec<Expr>,
}

impl NetworkVars {
    /// Variables in flattening order, for [`Graph::gradient`].
    pub fn flat(&self) -> &[Expr] {
        &self.flat
    }

    /// Differentiable forward pass at input `t`.
    pub fn forward(&self, graph: &mut Graph, t: Expr) -> NetworkOutput<Expr> {
        let mut act = vec![t];
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let n_in = act.len();
            act = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let mut z = bias;
                    for (&wi, &a) in w[o * n_in..(o + 1) * n_in].iter().zip(&act) {
                        let p = graph.mul(wi, a);
                        z = graph.add(z, p);
                    }
                    if l == last {
                        z
                    } else {
                        graph.tanh(z)
                    }
                })
                .collect();
        }
        NetworkOutput {
            u: graph.scale(self.output_scale, act[0]),
            v: graph.scale(self.output_scale, act[1]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_rule() {
        let cfg = MlpConfig::default();
        let p = ParameterSet::init(&cfg).unwrap();
        assert!(p.biases.iter().flatten().all(|&b| b == 0.0));
        assert_eq!(p.theta, 0.0);
        assert_eq!(p.weights[0].len(), 40);
        assert!(p.weights[0].iter().all(|w| w.abs() < 0.3824));
        let lim2 = (6.0f64 / 80.0).sqrt();
        assert!(p.weights[1].iter().all(|w| w.abs() < lim2));
        assert_eq!(p, ParameterSet::init(&cfg).unwrap());
        let other = ParameterSet::init(&MlpConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(p.weights, other.weights);
    }

    #[test]
    fn flatten_layout() {
        let cfg = MlpConfig::default();
        assert_eq!(cfg.parameter_count(), 1803);
        let mut p = ParameterSet::init(&cfg).unwrap();
        p.theta = 0.25;
        let flat = p.flatten();
        assert_eq!(flat.len(), 1803);
        assert_eq!(flat[1802], 0.25);
        assert_eq!(flat[0..40], p.weights[0][..]);
        assert_eq!(ParameterSet::unflatten(&flat, &cfg).unwrap(), p);
        assert!(matches!(
            ParameterSet::unflatten(&flat[1..], &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bad_configs() {
        assert!(MlpConfig::new(vec![1, 2], 0).is_err());
        assert!(MlpConfig::new(vec![2, 5, 2], 0).is_err());
        assert!(MlpConfig::new(vec![1, 0, 2], 0).is_err());
        assert!(MlpConfig::new(vec![1, 3, 3, 2], 0).is_ok());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = MlpConfig::default();
        let flat = vec![0.0; cfg.parameter_count()];
        let p = ParameterSet::unflatten(&flat, &cfg).unwrap();
        for &t in &[-1.0, 0.0, 2.5] {
            let out = p.predict(t);
            assert_eq!((out.u, out.v), (0.0, 0.0));
        }
    }

    #[test]
    fn graph_forward_matches_numeric() {
        let p = ParameterSet::init(&MlpConfig::new(vec![1, 7, 5, 2], 3).unwrap()).unwrap();
        let mut g = Graph::new();
        let vars = p.register(&mut g).unwrap();
        for &t in &[-0.9, 0.1, 1.7] {
            let tv = g.variable(t);
            let out = vars.forward(&mut g, tv);
            let num = p.predict(t);
            assert!((g.value(out.u) - num.u).abs() < 1e-14);
            assert!((g.value(out.v) - num.v).abs() < 1e-14);
        }
    }

    #[test]
    fn bounded_output() {
        let p = ParameterSet::init(&MlpConfig::default()).unwrap();
        let m = p.weights[2].iter().fold(0.0f64, |a, w| a.max(w.abs()));
        for &t in &[-50.0, 0.0, 3.0, 1e3] {
            let out = p.predict(t);
            assert!(out.u.abs() <= 40.0 * m + 1e-12);
            assert!(out.v.abs() <= 40.0 * m + 1e-12);
        }
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let mut p = ParameterSet::init(&MlpConfig::default()).unwrap();
        p.theta = f64::NAN;
        let mut g = Graph::new();
        assert!(matches!(p.register(&mut g), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn snapshot_json() {
        let p = ParameterSet::init(&MlpConfig::new(vec![1, 3, 2], 11).unwrap()).unwrap();
        let json = serde_json::to_string(&p.to_snapshot()).unwrap();
        let back: ParameterSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(ParameterSet::from_snapshot(&back).unwrap(), p);
    }
}
