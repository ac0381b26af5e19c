use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{infer_layer, ArchitectureSpec, LayerSpec, Shape};
use super::layers::{run_backward, Act, Cache, Conv, Ctx, Dense, Lstm, Node, Op};
use super::tensor::Tensor;
use super::NnError;
use crate::labeling::Label;

/// Network parameters plus the runtime graph derived from the spec.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ArchitectureSpec,
    seed: u64,
    params: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.seed == other.seed && self.params == other.params
    }
}

fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
}

fn build_nodes(
    layers: &[LayerSpec],
    top: Option<usize>,
    mut shape: Shape,
    params: &mut Vec<Tensor>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Node>, NnError> {
    let mut nodes = Vec::new();
    for (i, spec) in layers.iter().enumerate() {
        let layer = top.unwrap_or(i);
        let next = infer_layer(spec, shape, layer)?;
        let mut push = |op| nodes.push(Node { layer, op });
        match spec {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let Shape::Map { c, .. } = shape else {
                    unreachable!()
                };
                let fan_in = c * kernel.0 * kernel.1;
                params.push(he_uniform(vec![*filters, fan_in], fan_in, rng));
                params.push(Tensor::zeros(vec![*filters]));
                push(Op::Conv(Conv {
                    cin: c,
                    cout: *filters,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    weight: params.len() - 2,
                    bias: params.len() - 1,
                }));
                push(Op::Leaky);
            }
            LayerSpec::MaxPool { kernel } => push(Op::MaxPool(*kernel)),
            LayerSpec::Inception { branches } => {
                let built = branches
                    .iter()
                    .map(|b| build_nodes(b, Some(layer), shape, params, rng))
                    .collect::<Result<_, _>>()?;
                push(Op::Inception(built));
            }
            LayerSpec::Dropout { rate } => push(Op::Dropout(*rate)),
            LayerSpec::Lstm { units } => {
                let input = match shape {
                    Shape::Map { c, w, .. } => {
                        push(Op::ToSequence);
                        c * w
                    }
                    Shape::Seq { f, .. } => f,
                    Shape::Flat { .. } => unreachable!(),
                };
                let h = *units;
                params.push(he_uniform(vec![input, 4 * h], input, rng));
                params.push(he_uniform(vec![h, 4 * h], h, rng));
                let mut bias = Tensor::zeros(vec![4 * h]);
                bias.data_mut()[h..2 * h].fill(1.0);
                params.push(bias);
                let n = params.len();
                push(Op::Lstm(Lstm {
                    input,
                    units: h,
                    wx: n - 3,
                    wh: n - 2,
                    bias: n - 1,
                }));
            }
            LayerSpec::Dense { units } => {
                let Shape::Flat { f } = shape else { unreachable!() };
                params.push(he_uniform(vec![f, *units], f, rng));
                params.push(Tensor::zeros(vec![*units]));
                let n = params.len();
                push(Op::Dense(Dense {
                    units: *units,
                    weight: n - 2,
                    bias: n - 1,
                }));
            }
        }
        shape = next;
    }
    Ok(nodes)
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy of softmax(logits) against `labels`, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[Label]) -> (f64, Vec<f64>) {
    let b = labels.len();
    assert_eq!(logits.len(), 3 * b);
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), label) in logits.chunks(3).zip(grad.chunks_mut(3)).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label.index()];
        for (k, gv) in g.iter_mut().enumerate() {
            *gv = (row[k] - lse).exp() / b as f64;
        }
        g[label.index()] -= 1.0 / b as f64;
    }
    (loss / b as f64, grad)
}

/// Index of the largest probability; ties go to the earliest class, so the
/// order is UP < DOWN < STABLE.
pub fn argmax(probs: &[f64; 3]) -> Label {
    let mut best = 0;
    for k in 1..3 {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    Label::from_index(best).expect("three classes")
}

/// Largest number of windows pushed through the network at once in inference.
const INFERENCE_BATCH: usize = 256;

impl Model {
    /// Shape-checks `spec` and draws every parameter from `seed`.
    pub fn build(spec: ArchitectureSpec, seed: u64) -> Result<Model, NnError> {
        spec.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let nodes = build_nodes(&spec.layers, None, spec.input_shape(), &mut params, &mut rng)?;
        Ok(Model {
            spec,
            seed,
            params,
            nodes,
        })
    }

    /// Rebuilds a model around stored parameters, checking their shapes.
    pub fn from_parts(spec: ArchitectureSpec, seed: u64, params: Vec<Tensor>) -> Result<Model, NnError> {
        let mut model = Model::build(spec, seed)?;
        if model.params.len() != params.len()
            || model
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NnError::Checkpoint(
                "parameter shapes do not match the architecture".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn input_act(&self, batch: &Tensor) -> Result<Act, NnError> {
        let shape = batch.shape();
        let (t, w) = (self.spec.input_time, self.spec.input_width);
        if shape.len() != 3 || shape[1] != t || shape[2] != w || shape[0] == 0 {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                reason: format!("expected a [B, {t}, {w}] batch, got {shape:?}"),
            });
        }
        // [B, T, W] is [1, B, T, W] in channel-major order.
        Ok(Act::Map {
            c: 1,
            b: shape[0],
            t,
            w,
            data: batch.data().to_vec(),
        })
    }

    fn forward_cached(&self, x: Act, dropout_seed: Option<u64>) -> Result<(Act, Vec<Cache>), NnError> {
        let mut ctx = Ctx {
            rng: dropout_seed.map(ChaCha8Rng::seed_from_u64),
        };
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut a = x;
        for node in &self.nodes {
            let (y, cache) = node.forward(&self.params, a, &mut ctx);
            if !y.data().iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFiniteActivation { layer: node.layer });
            }
            caches.push(cache);
            a = y;
        }
        Ok((a, caches))
    }

    /// Raw scores `[B, 3]` in evaluation mode.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let (y, _) = self.forward_cached(self.input_act(batch)?, None)?;
        let b = batch.shape()[0];
        Ok(Tensor::new(vec![b, 3], y.into_data()))
    }

    /// Class probabilities `[B, 3]` in evaluation mode (dropout off).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let logits = self.logits(batch)?;
        let b = logits.shape()[0];
        Ok(Tensor::new(vec![b, 3], softmax_rows(logits.data(), 3)))
    }

    /// Mean cross-entropy and its gradient for every parameter, in parameter
    /// order. `dropout_seed` switches on training mode with reproducible
    /// masks; `None` evaluates deterministically without dropout.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        labels: &[Label],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<Tensor>), NnError> {
        let x = self.input_act(batch)?;
        if labels.len() != batch.shape()[0] {
            return Err(NnError::ShapeMismatch {
                layer: self.spec.layers.len() - 1,
                reason: format!("{} labels for a batch of {}", labels.len(), batch.shape()[0]),
            });
        }
        let (y, caches) = self.forward_cached(x, dropout_seed)?;
        let (loss, dlogits) = softmax_cross_entropy(y.data(), labels);
        let mut grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        let dy = Act::Flat {
            b: labels.len(),
            f: 3,
            data: dlogits,
        };
        run_backward(&self.nodes, &self.params, &caches, dy, &mut grads, false);
        if let Some(param) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { param });
        }
        Ok((loss, grads))
    }

    /// Probabilities for many `time × width` windows, batched internally.
    pub fn predict_proba(&self, windows: &[&[f64]]) -> Result<Vec<[f64; 3]>, NnError> {
        let (t, w) = (self.spec.input_time, self.spec.input_width);
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFERENCE_BATCH) {
            let mut data = Vec::with_capacity(chunk.len() * t * w);
            for win in chunk {
                if win.len() != t * w {
                    return Err(NnError::ShapeMismatch {
                        layer: 0,
                        reason: format!("window of {} values, expected {}", win.len(), t * w),
                    });
                }
                data.extend_from_slice(win);
            }
            let probs = self.forward(&Tensor::new(vec![chunk.len(), t, w], data))?;
            out.extend(probs.data().chunks(3).map(|r| [r[0], r[1], r[2]]));
        }
        Ok(out)
    }

    /// Argmax class and probabilities of one window.
    pub fn predict(&self, window: &[f64]) -> Result<(Label, [f64; 3]), NnError> {
        let p = self.predict_proba(&[window])?[0];
        Ok((argmax(&p), p))
    }

    pub fn predict_batch(&self, windows: &[&[f64]]) -> Result<Vec<Label>, NnError> {
        Ok(self.predict_proba(windows)?.iter().map(argmax).collect())
    }
}
