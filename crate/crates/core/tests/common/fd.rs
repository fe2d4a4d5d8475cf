//! Analytic gradients against central finite differences.
//!
//! Errors are normwise: `max_i |a_i - n_i| / max_i |a_i|`, so entries that
//! are structurally zero do not divide rounding noise by zero.

use invariance_lab::contrastive::{contrastive_loss, NegativeQueue};
use invariance_lab::encoder::{backward, forward_matrix, Activation, EmbeddingMatrix, EncoderConfig, EncoderParams};
use invariance_lab::image::ImageDims;
use invariance_lab::rng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const H: f64 = 1e-5;

pub fn normwise_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale.max(1e-300)
}

pub fn random_unit_rows(rows: usize, dim: usize, r: &mut impl Rng) -> Array2<f64> {
    let m = Array2::from_shape_fn((rows, dim), |_| r.random_range(-1.0..1.0));
    EmbeddingMatrix::normalize(m).into_values()
}

/// Distance of the instance from a ReLU kink or the zero-norm fallback,
/// computed with a plain forward pass.
fn margin(params: &EncoderParams, x: &Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut closest = f64::INFINITY;
    for layer in params.layers() {
        let z = h.dot(&layer.weight) + &layer.bias;
        if layer.activation == Activation::Relu {
            closest = closest.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
            h = z.mapv(|v| v.max(0.0));
        } else {
            h = z;
        }
    }
    for row in h.rows() {
        closest = closest.min(row.dot(&row).sqrt());
    }
    closest
}

/// Normwise error of the encoder gradient of `sum(G * embedding)`.
pub fn encoder_instance(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "fd-encoder", 0);
    let normal = Normal::new(0.0, 0.7).unwrap();
    let (params, x) = loop {
        let cfg = EncoderConfig {
            input: ImageDims::new(r.random_range(2..5), r.random_range(2..4), 1),
            hidden: (0..r.random_range(1..3)).map(|_| r.random_range(3..7)).collect(),
            embedding_dim: r.random_range(2..5),
            hidden_bias: 0.0,
        };
        let mut params = EncoderParams::init(&cfg, &mut r).unwrap();
        let values: Vec<f64> = (0..params.num_params()).map(|_| normal.sample(&mut r)).collect();
        params.set_flat(&values).unwrap();
        let n = r.random_range(1..5);
        let x = Array2::from_shape_fn((n, cfg.input.len()), |_| r.random_range(0.0..1.0));
        if margin(&params, &x) > 1e-3 {
            break (params, x);
        }
    };
    let g = Array2::from_shape_fn((x.nrows(), params.embedding_dim()), |_| r.random_range(-1.0..1.0));
    let objective = |p: &EncoderParams| -> f64 {
        let (e, _) = forward_matrix(p, x.clone()).unwrap();
        (e.values() * &g).sum()
    };
    let (_, cache) = forward_matrix(&params, x.clone()).unwrap();
    let analytic = backward(&params, &cache, &g).unwrap().to_flat();

    let flat = params.to_flat();
    let mut probe = params.clone();
    let numeric: Vec<f64> = (0..flat.len())
        .map(|i| {
            let mut v = flat.clone();
            v[i] = flat[i] + H;
            probe.set_flat(&v).unwrap();
            let up = objective(&probe);
            v[i] = flat[i] - H;
            probe.set_flat(&v).unwrap();
            let down = objective(&probe);
            (up - down) / (2.0 * H)
        })
        .collect();
    normwise_error(&analytic, &numeric)
}

/// Direct transcription of the loss: mean of `-log softmax_0` over rows.
pub fn oracle_loss(q: &Array2<f64>, k: &Array2<f64>, negatives: &Array2<f64>, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..q.nrows() {
        let pos = q.row(i).dot(&k.row(i)) / tau;
        let negs: Vec<f64> = negatives.rows().into_iter().map(|n| q.row(i).dot(&n) / tau).collect();
        let m = negs.iter().fold(pos, |a, &b| a.max(b));
        let denom = (pos - m).exp() + negs.iter().map(|l| (l - m).exp()).sum::<f64>();
        total += -(pos - m) + denom.ln();
    }
    total / q.nrows() as f64
}

/// Normwise error of the loss gradient with respect to the queries.
pub fn loss_instance(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "fd-loss", 0);
    let (n, d, k) = (r.random_range(1..5), r.random_range(2..9), r.random_range(1..12));
    let tau = r.random_range(0.05..1.0);
    let q = random_unit_rows(n, d, &mut r);
    let kp = random_unit_rows(n, d, &mut r);
    let negatives = random_unit_rows(k, d, &mut r);
    let mut queue = NegativeQueue::new(k, d).unwrap();
    queue.push(&EmbeddingMatrix::from_normalized(negatives.clone()).unwrap()).unwrap();

    let out = contrastive_loss(
        &EmbeddingMatrix::from_normalized(q.clone()).unwrap(),
        &EmbeddingMatrix::from_normalized(kp.clone()).unwrap(),
        &queue,
        tau,
    )
    .unwrap();
    let reference = oracle_loss(&q, &kp, &negatives, tau);
    assert!((out.loss - reference).abs() <= 1e-12 * reference.abs().max(1.0));

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..n {
        for j in 0..d {
            let mut up = q.clone();
            up[[i, j]] += H;
            let mut down = q.clone();
            down[[i, j]] -= H;
            let slope = (oracle_loss(&up, &kp, &negatives, tau) - oracle_loss(&down, &kp, &negatives, tau)) / (2.0 * H);
            numeric.push(slope);
            analytic.push(out.grad_q[[i, j]]);
        }
    }
    normwise_error(&analytic, &numeric)
}
