//! White-box adversarial example generation: FGSM, PGD and DeepFool
//! (binary and one-vs-all multiclass), driven by input gradients.

use crate::error::{Error, Result};
use crate::network::{backward, forward, softmax_cross_entropy, Mode, NetworkSpec, Parameters};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    Deepfool,
}

impl AttackFamily {
    pub fn name(&self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::Deepfool => "deepfool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    LInf,
    L2,
}

/// Attack family plus its scale settings.
///
/// Defaults are the reference settings: epsilon = eta = 0.05, PGD step 0.01
/// with 5 iterations, DeepFool overshoot zeta = 0.02 capped at 5 iterations.
/// The norm field is descriptive, used for reporting perturbation sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// FGSM perturbation scale.
    pub epsilon: f64,
    /// PGD cumulative perturbation bound.
    pub eta: f64,
    /// PGD per-iteration step.
    pub step: f64,
    pub max_iter: usize,
    /// DeepFool overshoot.
    pub zeta: f64,
    pub norm: NormKind,
}

impl AttackConfig {
    pub fn new(family: AttackFamily) -> Self {
        AttackConfig {
            family,
            epsilon: 0.05,
            eta: 0.05,
            step: 0.01,
            max_iter: 5,
            zeta: 0.02,
            norm: match family {
                AttackFamily::Deepfool => NormKind::L2,
                _ => NormKind::LInf,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || self.eta <= 0.0 || self.step <= 0.0 || self.zeta <= 0.0 {
            return Err(Error::InvalidArgument(
                "attack scales epsilon, eta, step and zeta must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Victim surface an attack needs: logits and input gradients for a single
/// sample. Implemented for networks directly and for padded embeddings.
pub trait InputGradModel {
    fn num_classes(&self) -> usize;
    /// Logits for one sample.
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>>;
    /// Cross-entropy loss and its gradient with respect to the input.
    fn loss_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)>;
    /// Gradient of one logit with respect to the input.
    fn logit_input_grad(&self, x: &Tensor, class: usize) -> Result<Tensor>;

    fn prediction(&self, x: &Tensor) -> Result<usize> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// A network evaluated in eval mode (running batchnorm statistics), so the
/// attack surface matches the deployed model.
pub struct NetModel<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a Parameters,
}

impl<'a> NetModel<'a> {
    fn unsqueeze(&self, x: &Tensor) -> Result<Tensor> {
        Tensor::stack(std::slice::from_ref(x))
    }
}

impl<'a> InputGradModel for NetModel<'a> {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        let batch = self.unsqueeze(x)?;
        let (logits, _) = forward(self.spec, self.params, &batch, Mode::Eval)?;
        Ok(logits.data().to_vec())
    }

    fn loss_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        let batch = self.unsqueeze(x)?;
        let (logits, cache) = forward(self.spec, self.params, &batch, Mode::Eval)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &[label])?;
        let grads = backward(self.spec, self.params, &cache, &dlogits)?;
        Ok((loss, grads.input.sample(0)?))
    }

    fn logit_input_grad(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        if class >= self.spec.num_classes {
            return Err(Error::LabelOutOfRange { label: class, num_classes: self.spec.num_classes });
        }
        let batch = self.unsqueeze(x)?;
        let (_, cache) = forward(self.spec, self.params, &batch, Mode::Eval)?;
        let mut dlogits = Tensor::zeros(vec![1, self.spec.num_classes]);
        dlogits.data_mut()[class] = 1.0;
        let grads = backward(self.spec, self.params, &cache, &dlogits)?;
        grads.input.sample(0)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single-step signed-gradient attack:
/// x_adv = x + epsilon * sign(d loss / d x), with sign(0) = 0.
pub fn fgsm(model: &dyn InputGradModel, x: &Tensor, label: usize, epsilon: f64) -> Result<Tensor> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let (_, grad) = model.loss_input_grad(x, label)?;
    grad.check_finite("fgsm gradient")?;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xv, &gv)| xv + epsilon * sign(gv))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Iterative signed-gradient attack. Each iteration takes a signed step and
/// projects the cumulative perturbation into the eta-ball (l-infinity).
pub fn pgd(model: &dyn InputGradModel, x: &Tensor, label: usize, config: &AttackConfig) -> Result<Tensor> {
    config.validate()?;
    let mut cur = x.clone();
    for _ in 0..config.max_iter {
        let (_, grad) = model.loss_input_grad(&cur, label)?;
        grad.check_finite("pgd gradient")?;
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(cur.data())
            .zip(grad.data())
            .map(|((&x0, &xc), &gv)| {
                let stepped = xc + config.step * sign(gv);
                x0 + (stepped - x0).clamp(-config.eta, config.eta)
            })
            .collect();
        cur = Tensor::new(x.shape().to_vec(), data)?;
    }
    Ok(cur)
}

/// A scalar decision function f(x) with its input gradient; the decision
/// boundary is f(x) = 0.
pub trait ScalarDecision {
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)>;
}

/// Affine decision w . x + b; test and oracle surface for binary DeepFool.
pub struct AffineDecision {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ScalarDecision for AffineDecision {
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "affine decision over {} inputs got {}",
                self.weights.len(),
                x.len()
            )));
        }
        let v = self.bias + x.data().iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        Ok((v, Tensor::new(x.shape().to_vec(), self.weights.clone())?))
    }
}

/// Logit difference f = logit[positive] - logit[other] of a 2-class model.
pub struct LogitDiffDecision<'a> {
    pub model: &'a dyn InputGradModel,
    pub positive: usize,
    pub other: usize,
}

impl<'a> ScalarDecision for LogitDiffDecision<'a> {
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let logits = self.model.logits(x)?;
        let gp = self.model.logit_input_grad(x, self.positive)?;
        let go = self.model.logit_input_grad(x, self.other)?;
        let grad: Vec<f64> = gp.data().iter().zip(go.data()).map(|(a, b)| a - b).collect();
        Ok((
            logits[self.positive] - logits[self.other],
            Tensor::new(x.shape().to_vec(), grad)?,
        ))
    }
}

/// Minimal-perturbation attack on a binary decision function. Accumulates
/// affine-approximation steps r_i = -(f / |grad|^2) grad; stops once the
/// overshot candidate x + (1 + zeta) r flips the decision sign (the
/// accumulated step alone can land exactly on the boundary) or at
/// `max_iter`. The (1 + zeta) overshoot is applied once, to the accumulated
/// perturbation. Returns the adversarial sample and the number of gradient
/// steps taken.
pub fn deepfool_binary(
    f: &dyn ScalarDecision,
    x: &Tensor,
    zeta: f64,
    max_iter: usize,
) -> Result<(Tensor, usize)> {
    if zeta <= 0.0 || max_iter == 0 {
        return Err(Error::InvalidArgument("zeta must be positive and max_iter >= 1".into()));
    }
    let (v0, _) = f.value_and_grad(x)?;
    let mut cur = x.clone();
    let mut r_total = vec![0.0; x.len()];
    let mut iters = 0;
    for _ in 0..max_iter {
        let candidate: Vec<f64> = x
            .data()
            .iter()
            .zip(&r_total)
            .map(|(a, b)| a + b * (1.0 + zeta))
            .collect();
        let (vc, _) = f.value_and_grad(&Tensor::new(x.shape().to_vec(), candidate)?)?;
        if vc == 0.0 || sign(vc) != sign(v0) {
            break;
        }
        let (v, grad) = f.value_and_grad(&cur)?;
        grad.check_finite("deepfool gradient")?;
        if v == 0.0 || sign(v) != sign(v0) {
            break;
        }
        let norm_sq: f64 = grad.data().iter().map(|g| g * g).sum();
        if norm_sq == 0.0 {
            return Err(Error::Attack(
                "zero gradient with nonzero decision value: boundary unreachable".into(),
            ));
        }
        let scale = -v / norm_sq;
        for (r, g) in r_total.iter_mut().zip(grad.data()) {
            *r += scale * g;
        }
        iters += 1;
        let data: Vec<f64> = x.data().iter().zip(&r_total).map(|(a, b)| a + b).collect();
        cur = Tensor::new(x.shape().to_vec(), data)?;
    }
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(&r_total)
        .map(|(a, b)| a + b * (1.0 + zeta))
        .collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, iters))
}

/// One-vs-all multiclass DeepFool. Per iteration, relative to the current
/// class, steps toward the class whose linearised boundary is closest in l2;
/// stops once the overshot candidate x + (1 + zeta) r changes the argmax
/// logit (the accumulated step alone can land exactly on the boundary) or at
/// `max_iter`. The overshoot is applied once, to the accumulated r.
pub fn deepfool_multiclass(
    model: &dyn InputGradModel,
    x: &Tensor,
    zeta: f64,
    max_iter: usize,
) -> Result<(Tensor, usize)> {
    if zeta <= 0.0 || max_iter == 0 {
        return Err(Error::InvalidArgument("zeta must be positive and max_iter >= 1".into()));
    }
    let k = model.num_classes();
    if k < 2 {
        return Err(Error::InvalidArgument("deepfool needs >= 2 classes".into()));
    }
    let original_class = model.prediction(x)?;
    let mut cur = x.clone();
    let mut r_total = vec![0.0; x.len()];
    let mut iters = 0;
    for _ in 0..max_iter {
        let candidate: Vec<f64> = x
            .data()
            .iter()
            .zip(&r_total)
            .map(|(a, b)| a + b * (1.0 + zeta))
            .collect();
        if model.prediction(&Tensor::new(x.shape().to_vec(), candidate)?)? != original_class {
            break;
        }
        let logits = model.logits(&cur)?;
        let current = {
            let mut best = 0;
            for i in 1..k {
                if logits[i] > logits[best] {
                    best = i;
                }
            }
            best
        };
        let g_cur = model.logit_input_grad(&cur, current)?;
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (distance, w', f')
        for class in 0..k {
            if class == current {
                continue;
            }
            let g_k = model.logit_input_grad(&cur, class)?;
            let w: Vec<f64> = g_k.data().iter().zip(g_cur.data()).map(|(a, b)| a - b).collect();
            let f = logits[class] - logits[current];
            let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let dist = f.abs() / norm;
            if best.as_ref().map_or(true, |(d, _, _)| dist < *d) {
                best = Some((dist, w, f));
            }
        }
        let (_, w, f) = best.ok_or_else(|| {
            Error::Attack("all class boundary directions have zero gradient".into())
        })?;
        let norm_sq: f64 = w.iter().map(|v| v * v).sum();
        let scale = f.abs() / norm_sq;
        for (r, wv) in r_total.iter_mut().zip(&w) {
            *r += scale * wv;
        }
        iters += 1;
        let data: Vec<f64> = x.data().iter().zip(&r_total).map(|(a, b)| a + b).collect();
        cur = Tensor::new(x.shape().to_vec(), data)?;
    }
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(&r_total)
        .map(|(a, b)| a + b * (1.0 + zeta))
        .collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, iters))
}

/// Originals, perturbed samples and per-sample attack statistics.
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    pub originals: Vec<Tensor>,
    pub perturbed: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// Prediction changed between original and perturbed sample.
    pub success: Vec<bool>,
    /// Perturbation size in the configured norm.
    pub norms: Vec<f64>,
    /// Gradient steps taken (DeepFool; 1 for FGSM, max_iter for PGD).
    pub iterations: Vec<usize>,
}

impl AdversarialBatch {
    pub fn len(&self) -> usize {
        self.perturbed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perturbed.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            0.0
        } else {
            self.success.iter().filter(|s| **s).count() as f64 / self.success.len() as f64
        }
    }

    pub fn mean_norm(&self) -> f64 {
        if self.norms.is_empty() {
            0.0
        } else {
            self.norms.iter().sum::<f64>() / self.norms.len() as f64
        }
    }
}

/// Attack every sample of a batch with the configured family.
pub fn attack_batch(
    model: &dyn InputGradModel,
    samples: &[Tensor],
    labels: &[usize],
    config: &AttackConfig,
) -> Result<AdversarialBatch> {
    config.validate()?;
    if samples.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let mut out = AdversarialBatch {
        originals: samples.to_vec(),
        perturbed: Vec::with_capacity(samples.len()),
        labels: labels.to_vec(),
        success: Vec::with_capacity(samples.len()),
        norms: Vec::with_capacity(samples.len()),
        iterations: Vec::with_capacity(samples.len()),
    };
    for (x, &y) in samples.iter().zip(labels) {
        let (adv, iters) = match config.family {
            AttackFamily::Fgsm => (fgsm(model, x, y, config.epsilon)?, 1),
            AttackFamily::Pgd => (pgd(model, x, y, config)?, config.max_iter),
            AttackFamily::Deepfool => deepfool_multiclass(model, x, config.zeta, config.max_iter)?,
        };
        let norm = match config.norm {
            NormKind::LInf => x.linf_distance(&adv),
            NormKind::L2 => x.l2_distance(&adv),
        };
        let changed = model.prediction(x)? != model.prediction(&adv)?;
        out.perturbed.push(adv);
        out.success.push(changed);
        out.norms.push(norm);
        out.iterations.push(iters);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Linear loss L = w . x over a fixed number of classes; logits are
    /// class-indexed copies of w . x scaled so class 0 wins at w . x > 0.
    struct LinearLoss {
        w: Vec<f64>,
    }

    impl InputGradModel for LinearLoss {
        fn num_classes(&self) -> usize {
            2
        }
        fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
            let v: f64 = x.data().iter().zip(&self.w).map(|(a, b)| a * b).sum();
            Ok(vec![v, -v])
        }
        fn loss_input_grad(&self, x: &Tensor, _label: usize) -> Result<(f64, Tensor)> {
            let v: f64 = x.data().iter().zip(&self.w).map(|(a, b)| a * b).sum();
            Ok((v, Tensor::new(x.shape().to_vec(), self.w.clone())?))
        }
        fn logit_input_grad(&self, x: &Tensor, class: usize) -> Result<Tensor> {
            let s = if class == 0 { 1.0 } else { -1.0 };
            Ok(Tensor::new(x.shape().to_vec(), self.w.iter().map(|v| v * s).collect())?)
        }
    }

    #[test]
    fn fgsm_linear_loss_example() {
        // L = w . x, w = (2, -3), x = (1, 1), eps = 0.05 -> (1.05, 0.95).
        let model = LinearLoss { w: vec![2.0, -3.0] };
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let adv = fgsm(&model, &x, 0, 0.05).unwrap();
        assert!((adv.data()[0] - 1.05).abs() < 1e-12);
        assert!((adv.data()[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn fgsm_zero_gradient_is_identity() {
        let model = LinearLoss { w: vec![0.0, 0.0] };
        let x = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let adv = fgsm(&model, &x, 0, 0.05).unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn pgd_accumulates_within_ball() {
        // 5 steps of 0.01 stay inside eta = 0.05: perturbation exactly
        // 0.05 * sign(w) per component.
        let model = LinearLoss { w: vec![2.0, -3.0] };
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let cfg = AttackConfig::new(AttackFamily::Pgd);
        let adv = pgd(&model, &x, 0, &cfg).unwrap();
        assert!((adv.data()[0] - 1.05).abs() < 1e-12);
        assert!((adv.data()[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn pgd_projects_to_ball() {
        // 5 steps of 0.02 would reach 0.10; projection clips at 0.05.
        let model = LinearLoss { w: vec![1.0, -1.0] };
        let x = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let cfg = AttackConfig { step: 0.02, ..AttackConfig::new(AttackFamily::Pgd) };
        let adv = pgd(&model, &x, 0, &cfg).unwrap();
        assert!((adv.data()[0] - 0.05).abs() < 1e-12);
        assert!((adv.data()[1] + 0.05).abs() < 1e-12);
    }

    #[test]
    fn pgd_zero_gradient_is_identity() {
        let model = LinearLoss { w: vec![0.0, 0.0] };
        let x = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let cfg = AttackConfig { max_iter: 7, ..AttackConfig::new(AttackFamily::Pgd) };
        assert_eq!(pgd(&model, &x, 0, &cfg).unwrap(), x);
    }

    #[test]
    fn pgd_one_step_equals_fgsm() {
        let model = LinearLoss { w: vec![2.0, -3.0] };
        let x = Tensor::new(vec![2], vec![0.3, 0.7]).unwrap();
        let cfg = AttackConfig {
            step: 0.05,
            eta: 0.05,
            max_iter: 1,
            ..AttackConfig::new(AttackFamily::Pgd)
        };
        let a = pgd(&model, &x, 0, &cfg).unwrap();
        let b = fgsm(&model, &x, 0, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deepfool_binary_affine_closed_form() {
        // f(x) = 3 x0 + 4 x1 - 10, x = 0: r = (1.2, 1.6),
        // delta = 1.02 r = (1.224, 1.632), f(x_adv) = 0.2.
        let f = AffineDecision { weights: vec![3.0, 4.0], bias: -10.0 };
        let x = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let (adv, iters) = deepfool_binary(&f, &x, 0.02, 5).unwrap();
        assert_eq!(iters, 1);
        assert!((adv.data()[0] - 1.224).abs() < 1e-12);
        assert!((adv.data()[1] - 1.632).abs() < 1e-12);
        let (v, _) = f.value_and_grad(&adv).unwrap();
        assert!((v - 0.2).abs() < 1e-9);
    }

    #[test]
    fn deepfool_binary_already_crossed() {
        // Start exactly on the boundary: no steps, only the overshoot of a
        // zero accumulated perturbation.
        let f = AffineDecision { weights: vec![1.0, 0.0], bias: 0.0 };
        let x = Tensor::new(vec![2], vec![0.0, 5.0]).unwrap();
        let (adv, iters) = deepfool_binary(&f, &x, 0.02, 5).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(adv, x);
    }

    #[test]
    fn deepfool_binary_zero_grad_errors() {
        let f = AffineDecision { weights: vec![0.0], bias: 1.0 };
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(deepfool_binary(&f, &x, 0.02, 5).is_err());
    }

    /// Linear multiclass model: logits = W x + b.
    struct LinearMulti {
        w: Vec<Vec<f64>>,
        b: Vec<f64>,
    }

    impl InputGradModel for LinearMulti {
        fn num_classes(&self) -> usize {
            self.w.len()
        }
        fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
            Ok(self
                .w
                .iter()
                .zip(&self.b)
                .map(|(row, b)| b + row.iter().zip(x.data()).map(|(a, v)| a * v).sum::<f64>())
                .collect())
        }
        fn loss_input_grad(&self, _x: &Tensor, _label: usize) -> Result<(f64, Tensor)> {
            unimplemented!("not used by deepfool")
        }
        fn logit_input_grad(&self, x: &Tensor, class: usize) -> Result<Tensor> {
            Ok(Tensor::new(x.shape().to_vec(), self.w[class].clone())?)
        }
    }

    #[test]
    fn deepfool_multiclass_picks_nearest_boundary() {
        let model = LinearMulti {
            w: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]],
            b: vec![2.0, 0.0, -1.0],
        };
        let x = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        assert_eq!(model.prediction(&x).unwrap(), 0);
        // Brute-force the nearest linearised boundary over candidate classes.
        let logits = model.logits(&x).unwrap();
        let mut best_class = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for k in 1..3 {
            let w: Vec<f64> = model.w[k].iter().zip(&model.w[0]).map(|(a, b)| a - b).collect();
            let f = logits[k] - logits[0];
            let dist = f.abs() / w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dist < best_dist {
                best_dist = dist;
                best_class = k;
            }
        }
        let (adv, iters) = deepfool_multiclass(&model, &x, 0.02, 5).unwrap();
        assert_eq!(iters, 1);
        assert_eq!(model.prediction(&adv).unwrap(), best_class);
    }

    #[test]
    fn deepfool_multiclass_matches_binary_on_two_classes() {
        let model = LinearMulti { w: vec![vec![2.0, -1.0], vec![-0.5, 1.5]], b: vec![1.0, -0.3] };
        let x = Tensor::new(vec![2], vec![0.2, -0.1]).unwrap();
        let (adv_multi, _) = deepfool_multiclass(&model, &x, 0.02, 5).unwrap();
        let pred = model.prediction(&x).unwrap();
        let other = 1 - pred;
        let diff = LogitDiffDecision { model: &model, positive: pred, other };
        let (adv_bin, _) = deepfool_binary(&diff, &x, 0.02, 5).unwrap();
        for (a, b) in adv_multi.data().iter().zip(adv_bin.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    proptest::proptest! {
        // l-infinity contracts over random linear models and inputs: FGSM
        // moves exactly epsilon where the gradient is nonzero, PGD never
        // leaves the eta-ball.
        #[test]
        fn linf_bounds_hold(
            w in proptest::collection::vec(-5.0f64..5.0, 3),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let model = LinearLoss { w: w.clone() };
            let x = Tensor::new(vec![3], x).unwrap();
            let adv = fgsm(&model, &x, 0, 0.05).unwrap();
            for (i, (a, b)) in adv.data().iter().zip(x.data()).enumerate() {
                if w[i] != 0.0 {
                    proptest::prop_assert!(((a - b).abs() - 0.05).abs() < 1e-12);
                } else {
                    proptest::prop_assert_eq!(a, b);
                }
            }
            let cfg = AttackConfig { step: 0.03, ..AttackConfig::new(AttackFamily::Pgd) };
            let adv = pgd(&model, &x, 0, &cfg).unwrap();
            proptest::prop_assert!(x.linf_distance(&adv) <= cfg.eta + 1e-12);
        }
    }

    #[test]
    fn attack_batch_empty_is_empty() {
        let model = LinearLoss { w: vec![1.0] };
        let cfg = AttackConfig::new(AttackFamily::Fgsm);
        let batch = attack_batch(&model, &[], &[], &cfg).unwrap();
        assert!(batch.is_empty());
        assert_eq!(batch.success_rate(), 0.0);
    }

    #[test]
    fn attack_batch_fgsm_norms_bounded() {
        let model = LinearLoss { w: vec![2.0, -3.0] };
        let cfg = AttackConfig::new(AttackFamily::Fgsm);
        let samples: Vec<Tensor> = (0..5)
            .map(|i| Tensor::new(vec![2], vec![i as f64 * 0.1, -0.2 * i as f64]).unwrap())
            .collect();
        let labels = vec![0; 5];
        let originals = samples.clone();
        let batch = attack_batch(&model, &samples, &labels, &cfg).unwrap();
        for n in &batch.norms {
            assert!(*n <= cfg.epsilon + 1e-12);
        }
        // Inputs never mutated.
        for (a, b) in originals.iter().zip(&batch.originals) {
            assert_eq!(a, b);
        }
        for (a, b) in originals.iter().zip(&samples) {
            assert_eq!(a, b);
        }
    }
}
