//! Models, losses and local training.
//!
//! Two small classifiers share one flat parameter layout (see below), a
//! cross-entropy loss and exact hand-derived gradients. Local training is
//! plain mini-batch SGD with a seeded shuffle, so a client's update is a
//! pure function of its data, the incoming model and its seed.
//!
//! Parameter layout (row-major, biases after weights):
//!
//! * `LinearSoftmax`: `W[c][j]` at `c*d + j` for class `c < C`, then
//!   `b[c]` at `d*C + c`. Total `d*C + C`.
//! * `Mlp1` (one tanh hidden layer of width `h`): `W1[i][j]` at `i*d + j`,
//!   `b1[i]` at `d*h + i`, `W2[c][i]` at `d*h + h + c*h + i`, `b2[c]` at
//!   `d*h + h + h*C + c`. Total `d*h + h + h*C + C`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Probability floor inside `ln` so the loss stays finite.
const LOG_CLAMP: f64 = 1e-12;

/// A labeled input. Features live in `[0, 1]` for image-like data but the
/// math does not depend on that.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

impl Example {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Example { x, y }
    }
}

/// Which architecture a spec describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LinearSoftmax,
    Mlp1,
}

/// Architecture plus dimensions plus the init seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Input dimension.
    pub d: usize,
    /// Number of classes.
    pub classes: usize,
    /// Hidden width, used only by `Mlp1`.
    pub hidden: usize,
    /// Seed for `init_model`.
    pub seed: u64,
}

impl ModelSpec {
    pub fn linear(d: usize, classes: usize, seed: u64) -> Self {
        ModelSpec { kind: ModelKind::LinearSoftmax, d, classes, hidden: 0, seed }
    }

    pub fn mlp1(d: usize, classes: usize, hidden: usize, seed: u64) -> Self {
        ModelSpec { kind: ModelKind::Mlp1, d, classes, hidden, seed }
    }

    /// Total number of parameters `P` for this spec.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearSoftmax => self.d * self.classes + self.classes,
            ModelKind::Mlp1 => {
                self.d * self.hidden + self.hidden + self.hidden * self.classes + self.classes
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "model needs d >= 1 and classes >= 2, got d={}, classes={}",
                self.d, self.classes
            )));
        }
        if self.kind == ModelKind::Mlp1 && self.hidden == 0 {
            return Err(Error::InvalidConfig("mlp1 needs hidden >= 1".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: w.len(),
            });
        }
        Ok(())
    }
}

/// Mini-batch SGD settings for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// Fresh parameters drawn uniformly from `(-a, a)` with `a = 1/sqrt(d)`,
/// in layout order from a ChaCha stream seeded by `spec.seed`.
pub fn init_model(spec: &ModelSpec) -> Result<ParamVector> {
    spec.validate()?;
    let a = 1.0 / (spec.d as f64).sqrt();
    let mut rng = crate::seeds::stream(spec.seed, &[crate::seeds::tag::MODEL_INIT]);
    let p = spec.param_count();
    let mut w = Vec::with_capacity(p);
    for _ in 0..p {
        w.push(rng.gen_range(-a..a));
    }
    Ok(ParamVector(w))
}

/// Raw class scores for one input.
pub fn logits(w: &ParamVector, x: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    spec.check_input(x)?;
    spec.check_params(w)?;
    let v = w.as_slice();
    let (d, c) = (spec.d, spec.classes);
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let mut out = Vec::with_capacity(c);
            for cls in 0..c {
                let row = &v[cls * d..(cls + 1) * d];
                let mut z = v[d * c + cls];
                for (wi, xi) in row.iter().zip(x) {
                    z += wi * xi;
                }
                out.push(z);
            }
            Ok(out)
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden;
            let (w1, rest) = v.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * c);
            let mut a1 = Vec::with_capacity(h);
            for i in 0..h {
                let row = &w1[i * d..(i + 1) * d];
                let mut z = b1[i];
                for (wi, xi) in row.iter().zip(x) {
                    z += wi * xi;
                }
                a1.push(z.tanh());
            }
            let mut out = Vec::with_capacity(c);
            for cls in 0..c {
                let row = &w2[cls * h..(cls + 1) * h];
                let mut z = b2[cls];
                for (wi, ai) in row.iter().zip(&a1) {
                    z += wi * ai;
                }
                out.push(z);
            }
            Ok(out)
        }
    }
}

/// Numerically safe softmax: subtracts the max logit before exponentiating.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Predicted class: argmax of the logits, smallest index on ties.
pub fn predict(w: &ParamVector, x: &[f64], spec: &ModelSpec) -> Result<usize> {
    let z = logits(w, x, spec)?;
    let mut best = 0;
    for (i, zi) in z.iter().enumerate() {
        if *zi > z[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Cross-entropy loss `-ln p_y` with the probability clamped at `1e-12`.
pub fn ce_loss(w: &ParamVector, example: &Example, spec: &ModelSpec) -> Result<f64> {
    if example.y >= spec.classes {
        return Err(Error::InvalidConfig(format!(
            "label {} out of range for {} classes",
            example.y, spec.classes
        )));
    }
    let z = logits(w, &example.x, spec)?;
    let p = softmax(&z);
    Ok(-p[example.y].max(LOG_CLAMP).ln())
}

/// Exact gradient of `ce_loss` with respect to every parameter.
///
/// For `LinearSoftmax` the closed form is `(p - onehot(y))` outer `x` for
/// the weights and `p - onehot(y)` for the biases. For `Mlp1` the same
/// logit error is backpropagated through the tanh layer.
pub fn ce_grad(w: &ParamVector, example: &Example, spec: &ModelSpec) -> Result<ParamVector> {
    if example.y >= spec.classes {
        return Err(Error::InvalidConfig(format!(
            "label {} out of range for {} classes",
            example.y, spec.classes
        )));
    }
    let z = logits(w, &example.x, spec)?;
    let p = softmax(&z);
    let (d, c) = (spec.d, spec.classes);
    let x = &example.x;
    // dL/dz_c = p_c - 1{c == y}
    let mut dz: Vec<f64> = p;
    dz[example.y] -= 1.0;

    let mut g = vec![0.0; spec.param_count()];
    match spec.kind {
        ModelKind::LinearSoftmax => {
            for cls in 0..c {
                let e = dz[cls];
                let row = &mut g[cls * d..(cls + 1) * d];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi = e * xi;
                }
                g[d * c + cls] = e;
            }
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden;
            let v = w.as_slice();
            let (w1, rest) = v.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, _b2) = rest.split_at(h * c);
            // Recompute the hidden activations.
            let mut a1 = Vec::with_capacity(h);
            for i in 0..h {
                let row = &w1[i * d..(i + 1) * d];
                let mut zi = b1[i];
                for (wi, xi) in row.iter().zip(x) {
                    zi += wi * xi;
                }
                a1.push(zi.tanh());
            }
            let off_b1 = d * h;
            let off_w2 = d * h + h;
            let off_b2 = d * h + h + h * c;
            // Output layer.
            for cls in 0..c {
                let e = dz[cls];
                for i in 0..h {
                    g[off_w2 + cls * h + i] = e * a1[i];
                }
                g[off_b2 + cls] = e;
            }
            // Hidden layer: da1_i = sum_c dz_c * W2[c][i], dz1_i = da1_i * (1 - a1_i^2).
            for i in 0..h {
                let mut da = 0.0;
                for cls in 0..c {
                    da += dz[cls] * w2[cls * h + i];
                }
                let dzi = da * (1.0 - a1[i] * a1[i]);
                for j in 0..d {
                    g[i * d + j] = dzi * x[j];
                }
                g[off_b1 + i] = dzi;
            }
        }
    }
    Ok(ParamVector(g))
}

/// Mini-batch SGD over `data` starting from `w0`.
///
/// Each epoch shuffles the example order with the seeded stream, then steps
/// `w -= lr * mean_batch_grad` per batch. A short final batch is still a
/// mean over its own size. `epochs == 0` returns `w0` unchanged.
pub fn local_train(
    data: &[Example],
    w0: &ParamVector,
    spec: &ModelSpec,
    params: &TrainParams,
    seed: u64,
) -> Result<ParamVector> {
    spec.check_params(w0)?;
    if params.epochs == 0 {
        return Ok(w0.clone());
    }
    if data.is_empty() {
        return Err(Error::Empty("local_train data"));
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut rng = crate::seeds::stream(seed, &[crate::seeds::tag::LOCAL_TRAIN]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut w = w0.clone();
    let mut grad_sum = ParamVector::zeros(w.len());
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            for slot in grad_sum.0.iter_mut() {
                *slot = 0.0;
            }
            for &idx in batch {
                let g = ce_grad(&w, &data[idx], spec)?;
                grad_sum.add_scaled(&g, 1.0)?;
            }
            let step = -params.lr / batch.len() as f64;
            w.add_scaled(&grad_sum, step)?;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_spec(d: usize, classes: usize) -> ModelSpec {
        ModelSpec::linear(d, classes, 7)
    }

    #[test]
    fn uniform_softmax_loss_is_ln_c() {
        // Zero weights give a uniform softmax, so the loss is ln C.
        let spec = uniform_spec(4, 10);
        let w = ParamVector::zeros(spec.param_count());
        let ex = Example::new(vec![0.3; 4], 3);
        let loss = ce_loss(&w, &ex, &spec).unwrap();
        assert!((loss - 2.302585).abs() < 1e-6, "got {loss}");

        let spec2 = uniform_spec(4, 2);
        let w2 = ParamVector::zeros(spec2.param_count());
        let loss2 = ce_loss(&w2, &Example::new(vec![0.3; 4], 1), &spec2).unwrap();
        assert!((loss2 - 0.693147).abs() < 1e-6, "got {loss2}");
    }

    #[test]
    fn linear_gradient_closed_form_hand_case() {
        // d=2, C=2, w=0, x=(1,0), y=0: p=(0.5,0.5), dz=(-0.5,0.5).
        let spec = uniform_spec(2, 2);
        let w = ParamVector::zeros(spec.param_count());
        let g = ce_grad(&w, &Example::new(vec![1.0, 0.0], 0), &spec).unwrap();
        let expect = vec![-0.5, 0.0, 0.5, 0.0, -0.5, 0.5];
        for (a, b) in g.0.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15, "{:?} vs {:?}", g.0, expect);
        }
    }

    /// Central finite difference of the loss in every coordinate.
    fn fd_grad(w: &ParamVector, ex: &Example, spec: &ModelSpec) -> Vec<f64> {
        let h = 1e-5;
        let mut out = Vec::with_capacity(w.len());
        let mut wp = w.clone();
        for i in 0..w.len() {
            let orig = wp.0[i];
            wp.0[i] = orig + h;
            let lp = ce_loss(&wp, ex, spec).unwrap();
            wp.0[i] = orig - h;
            let lm = ce_loss(&wp, ex, spec).unwrap();
            wp.0[i] = orig;
            out.push((lp - lm) / (2.0 * h));
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seeds::stream(11, &[99]);
        for case in 0..10 {
            let spec = if case % 2 == 0 {
                ModelSpec::linear(5, 3, case)
            } else {
                ModelSpec::mlp1(5, 3, 4, case)
            };
            let w = ParamVector((0..spec.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let y = rng.gen_range(0..3usize);
            let ex = Example::new(x, y);
            let g = ce_grad(&w, &ex, &spec).unwrap();
            let fd = fd_grad(&w, &ex, &spec);
            let e = rel_err(&fd, g.as_slice());
            assert!(e < 1e-6, "case {case}: relative error {e}");
        }
    }

    #[test]
    fn taylor_residual_shrinks_quadratically() {
        let mut rng = crate::seeds::stream(5, &[98]);
        for case in 0..8 {
            let spec = if case % 2 == 0 {
                ModelSpec::linear(4, 3, case)
            } else {
                ModelSpec::mlp1(4, 3, 3, case)
            };
            let w = ParamVector((0..spec.param_count()).map(|_| rng.gen_range(-0.5..0.5)).collect());
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ex = Example::new(x, rng.gen_range(0..3usize));
            let delta =
                ParamVector((0..spec.param_count()).map(|_| rng.gen_range(-1e-3..1e-3)).collect());
            let g = ce_grad(&w, &ex, &spec).unwrap();
            let base = ce_loss(&w, &ex, &spec).unwrap();
            let resid = |dv: &ParamVector| {
                let l = ce_loss(&w.add(dv).unwrap(), &ex, &spec).unwrap();
                (l - base - g.dot(dv).unwrap()).abs()
            };
            let r1 = resid(&delta);
            let r2 = resid(&delta.scale(0.5));
            if r1 > 1e-13 {
                assert!(r2 <= r1 / 3.0, "case {case}: r1={r1}, r2={r2}");
            }
        }
    }

    #[test]
    fn one_example_one_step_is_explicit_sgd() {
        let spec = uniform_spec(3, 2);
        let w0 = init_model(&spec).unwrap();
        let ex = Example::new(vec![0.2, 0.4, 0.9], 1);
        let params = TrainParams { epochs: 1, batch_size: 1, lr: 0.3 };
        let trained = local_train(std::slice::from_ref(&ex), &w0, &spec, &params, 1).unwrap();
        let g = ce_grad(&w0, &ex, &spec).unwrap();
        let mut expect = w0.clone();
        expect.add_scaled(&g, -0.3).unwrap();
        assert_eq!(trained.0, expect.0);
    }

    #[test]
    fn zero_epochs_returns_start_point() {
        let spec = uniform_spec(3, 2);
        let w0 = init_model(&spec).unwrap();
        let params = TrainParams { epochs: 0, batch_size: 4, lr: 0.1 };
        let out = local_train(&[], &w0, &spec, &params, 1).unwrap();
        assert_eq!(out.0, w0.0);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ModelSpec::mlp1(16, 4, 8, 123);
        let a = init_model(&spec).unwrap();
        let b = init_model(&spec).unwrap();
        assert_eq!(a.0, b.0);
        let bound = 1.0 / 4.0;
        assert!(a.0.iter().all(|v| v.abs() < bound));
        let other = init_model(&ModelSpec::mlp1(16, 4, 8, 124)).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn local_train_is_deterministic() {
        let spec = uniform_spec(4, 3);
        let w0 = init_model(&spec).unwrap();
        let mut rng = crate::seeds::stream(3, &[97]);
        let data: Vec<Example> = (0..20)
            .map(|_| {
                Example::new((0..4).map(|_| rng.gen_range(0.0..1.0)).collect(), rng.gen_range(0..3))
            })
            .collect();
        let params = TrainParams { epochs: 2, batch_size: 6, lr: 0.05 };
        let a = local_train(&data, &w0, &spec, &params, 42).unwrap();
        let b = local_train(&data, &w0, &spec, &params, 42).unwrap();
        assert_eq!(a.0, b.0);
        let c = local_train(&data, &w0, &spec, &params, 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn predict_breaks_ties_toward_smaller_index() {
        let spec = uniform_spec(2, 3);
        let w = ParamVector::zeros(spec.param_count());
        assert_eq!(predict(&w, &[0.5, 0.5], &spec).unwrap(), 0);
    }
}
