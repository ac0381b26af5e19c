#![allow(dead_code)]

pub mod market;
pub mod runs;

use lobpredict_core::labeling::Label;
use lobpredict_core::nn::{ArchitectureSpec, LayerSpec, Model, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
pub const FD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Outcome of a finite-difference sweep over every parameter element.
#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    /// Worst relative error against the central difference, over elements
    /// whose central stencil does not straddle a kink.
    pub worst: f64,
    pub checked: usize,
    /// Elements whose `[θ-h, θ+h]` stencil crosses a LeakyReLU/max-pool kink;
    /// these are validated against a narrower central stencil (down to `h/1000`).
    pub kinks: usize,
    /// Elements matching neither oracle.
    pub failures: usize,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: FdReport) {
        self.worst = self.worst.max(other.worst);
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.failures += other.failures;
    }
}

/// Central differences (step `FD_STEP`) for every parameter element.
///
/// Piecewise-linear activations make the loss non-differentiable on a
/// measure-zero set. When the stencil straddles such a point the central
/// difference is not an oracle; that case is recognised by the step-`h` and a
/// narrower (down to `h/1000`) difference disagreeing — for a smooth loss they
/// agree to O(h²) — and the analytic value must then match the narrower one.
pub fn fd_report(model: &Model, x: &Tensor, labels: &[Label], dropout_seed: Option<u64>) -> FdReport {
    let (_, grads) = model.loss_and_gradients(x, labels, dropout_seed).unwrap();
    let mut probe = model.clone();
    let mut report = FdReport::default();
    for (p, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let orig = probe.parameters()[p].data()[j];
            let mut central = |h: f64| {
                probe.parameters_mut()[p].data_mut()[j] = orig + h;
                let (up, _) = probe.loss_and_gradients(x, labels, dropout_seed).unwrap();
                probe.parameters_mut()[p].data_mut()[j] = orig - h;
                let (down, _) = probe.loss_and_gradients(x, labels, dropout_seed).unwrap();
                probe.parameters_mut()[p].data_mut()[j] = orig;
                (up - down) / (2.0 * h)
            };
            let a = g.data()[j];
            let wide = central(FD_STEP);
            report.checked += 1;
            let err = relative_error(a, wide);
            if err < FD_TOL {
                report.worst = report.worst.max(err);
                continue;
            }
            let kink = [10.0, 100.0, 1000.0].iter().any(|shrink| {
                let narrow = central(FD_STEP / shrink);
                relative_error(wide, narrow) > FD_TOL && relative_error(a, narrow) < FD_TOL
            });
            if kink {
                report.kinks += 1;
            } else {
                report.failures += 1;
                report.worst = report.worst.max(err);
            }
        }
    }
    report
}

/// Worst plain central-difference error, without kink handling.
pub fn max_fd_error(model: &Model, x: &Tensor, labels: &[Label], dropout_seed: Option<u64>) -> f64 {
    let (_, grads) = model.loss_and_gradients(x, labels, dropout_seed).unwrap();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let orig = probe.parameters()[p].data()[j];
            probe.parameters_mut()[p].data_mut()[j] = orig + FD_STEP;
            let (up, _) = probe.loss_and_gradients(x, labels, dropout_seed).unwrap();
            probe.parameters_mut()[p].data_mut()[j] = orig - FD_STEP;
            let (down, _) = probe.loss_and_gradients(x, labels, dropout_seed).unwrap();
            probe.parameters_mut()[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g.data()[j], numeric));
        }
    }
    worst
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, t: usize, w: usize) -> (Tensor, Vec<Label>) {
    let data = (0..b * t * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..b)
        .map(|_| Label::from_index(rng.gen_range(0..3)).unwrap())
        .collect();
    (Tensor::new(vec![b, t, w], data), labels)
}

/// Small network exercising every layer kind, with shapes drawn from `rng`.
pub fn tiny_spec(rng: &mut ChaCha8Rng) -> ArchitectureSpec {
    let t = rng.gen_range(6..=12);
    let f = rng.gen_range(1..=2);
    let kh = rng.gen_range(2..=5);
    let layers = vec![
        LayerSpec::conv_strided(2, (1, 2), (1, 2)),
        LayerSpec::Conv {
            filters: 2,
            kernel: (kh, 1),
            stride: (1, 1),
            padding: Padding::Zero,
        },
        LayerSpec::Conv {
            filters: 2,
            kernel: (2, 2),
            stride: (rng.gen_range(1..=2), 1),
            padding: Padding::Zero,
        },
        LayerSpec::Inception {
            branches: vec![
                vec![LayerSpec::conv_zero(f, (1, 1)), LayerSpec::conv_zero(f, (3, 1))],
                vec![LayerSpec::conv_zero(f, (1, 1)), LayerSpec::conv_zero(f, (5, 1))],
                vec![
                    LayerSpec::MaxPool { kernel: (3, 1) },
                    LayerSpec::conv_zero(f, (1, 1)),
                ],
            ],
        },
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::Lstm { units: 3 },
        LayerSpec::Dense { units: 3 },
    ];
    ArchitectureSpec {
        name: "tiny".into(),
        input_time: t,
        input_width: 4,
        layers,
    }
}

/// Layer kinds covered by the isolated gradient probes.
pub const PROBES: [&str; 8] = [
    "conv_valid_strided",
    "conv_zero_padded",
    "conv_zero_strided",
    "max_pool",
    "inception",
    "dropout",
    "lstm",
    "dense",
];

/// Minimal network around one layer kind, shapes drawn from `rng`. Every
/// network ends in LSTM → Dense(3), so those and the fused loss are always
/// exercised too.
pub fn probe_spec(kind: &str, rng: &mut ChaCha8Rng) -> ArchitectureSpec {
    let t = rng.gen_range(4..=10);
    let w = rng.gen_range(2..=6);
    let filters = rng.gen_range(1..=3);
    let kh = rng.gen_range(1..=4).min(t);
    let kw = rng.gen_range(1..=3).min(w);
    let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let units = rng.gen_range(1..=3);
    let mut layers = match kind {
        "conv_valid_strided" => vec![LayerSpec::conv_strided(filters, (kh, kw), stride)],
        "conv_zero_padded" => vec![LayerSpec::conv_zero(filters, (kh, kw))],
        "conv_zero_strided" => vec![LayerSpec::Conv {
            filters,
            kernel: (kh, kw),
            stride,
            padding: Padding::Zero,
        }],
        "max_pool" => vec![
            LayerSpec::conv(filters, (1, 1)),
            LayerSpec::MaxPool {
                kernel: (kh.max(2), kw),
            },
        ],
        "inception" => vec![LayerSpec::Inception {
            branches: vec![
                vec![
                    LayerSpec::conv_zero(filters, (1, 1)),
                    LayerSpec::conv_zero(filters, (3, 1)),
                ],
                vec![
                    LayerSpec::conv_zero(filters, (1, 1)),
                    LayerSpec::conv_zero(filters, (5, 1)),
                ],
                vec![
                    LayerSpec::MaxPool { kernel: (3, 1) },
                    LayerSpec::conv_zero(filters, (1, 1)),
                ],
            ],
        }],
        "dropout" => vec![LayerSpec::Dropout { rate: 0.3 }],
        "lstm" => vec![],
        "dense" => vec![LayerSpec::Lstm { units }, LayerSpec::Dense { units: 4 }],
        other => panic!("unknown probe {other}"),
    };
    if kind == "dense" {
        layers.push(LayerSpec::Dense { units: 3 });
    } else {
        layers.push(LayerSpec::Lstm { units });
        layers.push(LayerSpec::Dense { units: 3 });
    }
    ArchitectureSpec {
        name: kind.to_string(),
        input_time: t,
        input_width: w,
        layers,
    }
}

/// Worst finite-difference error of one probe network.
pub fn probe_report(kind: &str, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = probe_spec(kind, &mut rng);
    let (t, w) = (spec.input_time, spec.input_width);
    let model = Model::build(spec, seed).unwrap();
    let b = rng.gen_range(1..=3);
    let (x, labels) = random_batch(&mut rng, b, t, w);
    fd_report(&model, &x, &labels, Some(seed ^ 0x5eed))
}

/// Worst finite-difference error of the tiny network for one seed.
pub fn tiny_report(seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = tiny_spec(&mut rng);
    let (t, w) = (spec.input_time, spec.input_width);
    let model = Model::build(spec, seed).unwrap();
    let (x, labels) = random_batch(&mut rng, 3, t, w);
    fd_report(&model, &x, &labels, Some(seed ^ 0x5eed))
}
