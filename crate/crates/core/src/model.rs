//! MLP encoder and projector.
//!
//! Layers compute `x·W + b` with `W` stored as `[fan_in × fan_out]`. The
//! encoder is a stack of affine+ReLU layers; the projector adds one more
//! affine+ReLU hidden layer followed by a final affine map to `d`. No
//! normalization happens inside the network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub hidden_dim: usize,
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub projector: ProjectorConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder;
        if enc.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if enc.hidden_dims.is_empty() {
            return Err(Error::Config("encoder needs at least one hidden layer".into()));
        }
        if enc.hidden_dims.contains(&0) || self.projector.hidden_dim == 0 {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        if self.projector.output_dim < 2 {
            return Err(Error::Config("embedding dimension must be at least 2".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer, encoder first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.encoder.input_dim];
        widths.extend(&self.encoder.hidden_dims);
        widths.push(self.projector.hidden_dim);
        widths.push(self.projector.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder.hidden_dims.len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder.hidden_dims.last().expect("validated")
    }
}

/// Weight matrices and bias vectors for encoder then projector, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    encoder_layers: usize,
}

impl ModelParams {
    /// Glorot-uniform weights `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in cfg.layer_dims() {
            let s = glorot_bound(fan_in, fan_out);
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-s..=s))
                .collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], data)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(ModelParams {
            weights,
            biases,
            encoder_layers: cfg.encoder_layers(),
        })
    }

    /// Rebuilds parameters from a flat `[w0, b0, w1, b1, ...]` list.
    pub fn from_tensors(tensors: Vec<Tensor>, encoder_layers: usize) -> Result<Self> {
        if !tensors.len().is_multiple_of(2) || tensors.is_empty() {
            return Err(Error::Format(format!(
                "expected weight/bias pairs, got {} tensors",
                tensors.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut it = tensors.into_iter();
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            let (_, fan_out) = w.expect_matrix("from_tensors")?;
            if b.shape() != [fan_out] {
                return Err(Error::Format(format!(
                    "bias {:?} does not match weight {:?}",
                    b.shape(),
                    w.shape()
                )));
            }
            if let Some(prev) = weights.last() {
                let prev: &Tensor = prev;
                if prev.shape()[1] != w.shape()[0] {
                    return Err(Error::Format("layer shapes do not chain".into()));
                }
            }
            weights.push(w);
            biases.push(b);
        }
        if encoder_layers == 0 || encoder_layers + 2 != weights.len() {
            return Err(Error::Format(format!(
                "{} layers cannot hold {encoder_layers} encoder layers plus a 2-layer projector",
                weights.len()
            )));
        }
        Ok(ModelParams {
            weights,
            biases,
            encoder_layers,
        })
    }

    /// Flat `[w0, b0, w1, b1, ...]` view, the order used by optimizers and checkpoints.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder_layers
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("non-empty").shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.weights[self.encoder_layers - 1].shape()[1]
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// Architecture implied by the stored shapes.
    pub fn config(&self) -> ModelConfig {
        let hidden_dims = self.weights[..self.encoder_layers]
            .iter()
            .map(|w| w.shape()[1])
            .collect();
        ModelConfig {
            encoder: EncoderConfig {
                input_dim: self.input_dim(),
                hidden_dims,
            },
            projector: ProjectorConfig {
                hidden_dim: self.weights[self.encoder_layers].shape()[1],
                output_dim: self.output_dim(),
            },
        }
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Registers parameters as constants (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                if trainable {
                    (tape.leaf(w.clone()), tape.leaf(b.clone()))
                } else {
                    (tape.constant(w.clone()), tape.constant(b.clone()))
                }
            })
            .collect();
        BoundParams {
            layers,
            encoder_layers: self.encoder_layers,
        }
    }

    /// Projector output for a plain batch, without gradient tracking.
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        self.infer(batch, false)
    }

    /// Encoder output for a plain batch, without gradient tracking.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        self.infer(batch, true)
    }

    fn infer(&self, batch: &Tensor, encoder_only: bool) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let x = tape.constant(batch.clone());
        let out = if encoder_only {
            encoder_features(&mut tape, &bound, x)?
        } else {
            forward(&mut tape, &bound, x)?
        };
        Ok(tape.value(out).clone())
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Parameter handles on one tape, in the same order as [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<(Var, Var)>,
    encoder_layers: usize,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients of every parameter after `tape.backward`, flat order.
    pub fn grads(&self, tape: &Tape) -> Result<Vec<Tensor>> {
        self.vars()
            .into_iter()
            .map(|v| {
                tape.grad(v)
                    .cloned()
                    .ok_or_else(|| Error::Contract("parameter has no gradient; run backward first".into()))
            })
            .collect()
    }
}

fn affine(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

fn check_width(tape: &Tape, bound: &BoundParams, x: Var) -> Result<()> {
    let (_, width) = tape.value(x).expect_matrix("forward")?;
    let input_dim = tape.value(bound.layers[0].0).shape()[0];
    if width != input_dim {
        return Err(Error::dim(
            "forward",
            format!("batch width {width} but model expects {input_dim}"),
        ));
    }
    Ok(())
}

/// Encoder output `[N × h_last]`.
pub fn encoder_features(tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
    check_width(tape, bound, x)?;
    let mut h = x;
    for &layer in &bound.layers[..bound.encoder_layers] {
        let a = affine(tape, h, layer)?;
        h = tape.relu(a)?;
    }
    Ok(h)
}

/// Raw (unnormalized) embeddings `[N × d]`.
pub fn forward(tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
    let h = encoder_features(tape, bound, x)?;
    let proj = &bound.layers[bound.encoder_layers..];
    let a = affine(tape, h, proj[0])?;
    let p = tape.relu(a)?;
    affine(tape, p, proj[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(input: usize, hidden: &[usize], ph: usize, d: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_dim: input,
                hidden_dims: hidden.to_vec(),
            },
            projector: ProjectorConfig {
                hidden_dim: ph,
                output_dim: d,
            },
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let c = cfg(4, &[8], 6, 3);
        assert_eq!(ModelParams::init(&c, 1).unwrap(), ModelParams::init(&c, 1).unwrap());
        assert_ne!(ModelParams::init(&c, 1).unwrap(), ModelParams::init(&c, 2).unwrap());
    }

    #[test]
    fn init_respects_glorot_bound() {
        let c = cfg(4, &[8], 6, 3);
        let p = ModelParams::init(&c, 9).unwrap();
        let s = glorot_bound(4, 8);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(p.weights()[0].data().iter().all(|w| w.abs() <= s));
        assert!(p.tensors()[1].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(cfg(4, &[], 6, 3).validate().is_err());
        assert!(cfg(4, &[0], 6, 3).validate().is_err());
        assert!(cfg(4, &[2], 6, 1).validate().is_err());
    }

    #[test]
    fn zero_params_give_zero_embeddings() {
        let c = cfg(3, &[4], 4, 2);
        let mut p = ModelParams::init(&c, 0).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_rows(&[[0.3, 0.2, 0.9], [1.0, 0.0, 0.5]]);
        let z = p.embed(&x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_encoder_layer_is_relu() {
        let c = cfg(2, &[2], 2, 2);
        let init = ModelParams::init(&c, 0).unwrap();
        let mut t = init.to_tensors();
        t[0] = Tensor::identity(2);
        let p = ModelParams::from_tensors(t, 1).unwrap();
        let x = Tensor::from_rows(&[[-1.0, 2.0], [3.0, -4.0]]);
        let f = p.features(&x).unwrap();
        assert_eq!(f.data(), &[0.0, 2.0, 3.0, 0.0]);
        assert_eq!(f.shape(), &[2, 2]);
    }

    #[test]
    fn output_shape_contract() {
        let c = cfg(5, &[8, 6], 10, 16);
        let p = ModelParams::init(&c, 3).unwrap();
        let x = Tensor::full(&[7, 5], 0.5);
        assert_eq!(p.embed(&x).unwrap().shape(), &[7, 16]);
        assert_eq!(p.features(&x).unwrap().shape(), &[7, 6]);
        assert_eq!(p.features(&x).unwrap(), p.features(&x).unwrap());
        assert!(p.embed(&Tensor::zeros(&[2, 4])).is_err());
        assert_eq!(p.config(), c);
    }

    #[test]
    fn two_layer_features_match_hand_trace() {
        let c = cfg(2, &[2, 1], 2, 2);
        let mut t = ModelParams::init(&c, 0).unwrap().to_tensors();
        t[0] = Tensor::from_rows(&[[1.0, -1.0], [2.0, 0.5]]);
        t[1] = Tensor::vector(vec![0.5, -0.25]);
        t[2] = Tensor::from_rows(&[[2.0], [-3.0]]);
        t[3] = Tensor::vector(vec![0.1]);
        let p = ModelParams::from_tensors(t, 2).unwrap();
        let x = Tensor::from_rows(&[[1.0, 1.0], [0.0, -1.0]]);
        // row 0: h1 = relu([1+2+0.5, -1+0.5-0.25]) = [3.5, 0]; h2 = relu(7 + 0.1) = 7.1
        // row 1: h1 = relu([-2+0.5, -0.5-0.25]) = [0, 0]; h2 = relu(0.1) = 0.1
        let f = p.features(&x).unwrap();
        assert!((f.data()[0] - 7.1).abs() < 1e-12);
        assert!((f.data()[1] - 0.1).abs() < 1e-12);
    }
}
