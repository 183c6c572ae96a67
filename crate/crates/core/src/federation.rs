//! Simulated federated learning: per-round local (adversarial) training on
//! private client datasets, sample-count-weighted aggregation, broadcast,
//! and periodic four-condition evaluation of the global model.

use crate::attacks::{attack_batch, AttackConfig, InputGradModel};
use crate::defences::{center_pad, mixed_adversarial_loss, randomise, split_round_data, RandomisationConfig};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, uar, Condition, ConfusionMatrix, MetricsRecord, RUN_LOG_HEADER};
use crate::network::{
    adam_step_flat, backward, forward, infer, predict, save_checkpoint, softmax_cross_entropy,
    AdamState, Mode, NetworkSpec, Parameters,
};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenceMode {
    /// Plain training on the original samples.
    Nature,
    /// Per-round split-and-attack adversarial training with the mixed loss.
    AdvTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    /// Evaluate and checkpoint every this many rounds.
    pub eval_every: usize,
    pub defence: DefenceMode,
    pub attack: AttackConfig,
    pub mix_alpha: f64,
    pub learning_rate: f64,
    pub master_seed: u64,
    pub randomisation: RandomisationConfig,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.eval_every == 0 || self.local_epochs == 0 {
            return Err(Error::Federation(
                "rounds, eval_every and local_epochs must be >= 1".into(),
            ));
        }
        if self.train_batch == 0 || self.eval_batch == 0 {
            return Err(Error::Federation("batch sizes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_alpha) {
            return Err(Error::Federation(format!("mix_alpha {} outside [0, 1]", self.mix_alpha)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Federation("learning_rate must be positive".into()));
        }
        self.attack.validate()?;
        self.randomisation.validate()
    }
}

/// One client: private labelled features (base dims), the local parameters
/// and a persistent optimiser state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: Vec<(Tensor, usize)>,
    pub params: Parameters,
    pub opt: AdamState,
}

impl ClientState {
    pub fn new(id: usize, data: Vec<(Tensor, usize)>, params: Parameters) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Federation(format!("client {id} has no data")));
        }
        let opt = AdamState::new(params.num_scalars());
        Ok(ClientState { id, data, params, opt })
    }
}

/// Independent rng stream per (master seed, stream id, round), so client
/// scheduling order cannot influence any draw. Stream ids are client ids;
/// evaluation uses a reserved stream.
pub fn client_rng(master_seed: u64, stream: u64, round: u64) -> ChaCha20Rng {
    let mut s = master_seed
        ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ round.wrapping_add(1).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    s ^= s >> 30;
    s = s.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    s ^= s >> 27;
    s = s.wrapping_mul(0x94d0_49bb_1331_11eb);
    s ^= s >> 31;
    ChaCha20Rng::seed_from_u64(s)
}

const EVAL_STREAM: u64 = u64::MAX;

/// A network whose deployed input is the centre-padded canvas, exposed to
/// attacks over base-dims inputs: gradients flow through the pad embedding
/// and are cropped back to the interior window.
pub struct PaddedNetModel<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a Parameters,
    pub rand: &'a RandomisationConfig,
}

impl<'a> PaddedNetModel<'a> {
    fn offsets(&self) -> (usize, usize) {
        let (w, h) = self.rand.base_dims();
        let (fw, fh) = self.rand.final_dims();
        ((fw - w) / 2, (fh - h) / 2)
    }

    fn crop(&self, padded_grad: &Tensor) -> Result<Tensor> {
        let (w, h) = self.rand.base_dims();
        let (_, fh) = self.rand.final_dims();
        let (ox, oy) = self.offsets();
        let g = padded_grad.data();
        let mut out = vec![0.0; w * h];
        for i in 0..w {
            for j in 0..h {
                out[i * h + j] = g[(ox + i) * fh + oy + j];
            }
        }
        Tensor::new(vec![w, h, 1], out)
    }

    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let padded = center_pad(x, self.rand)?;
        Tensor::stack(std::slice::from_ref(&padded))
    }
}

impl<'a> InputGradModel for PaddedNetModel<'a> {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        let batch = self.embed(x)?;
        Ok(infer(self.spec, self.params, &batch)?.data().to_vec())
    }

    fn loss_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        let batch = self.embed(x)?;
        let (logits, cache) = forward(self.spec, self.params, &batch, Mode::Eval)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &[label])?;
        let grads = backward(self.spec, self.params, &cache, &dlogits)?;
        Ok((loss, self.crop(&grads.input.sample(0)?)?))
    }

    fn logit_input_grad(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        if class >= self.spec.num_classes {
            return Err(Error::LabelOutOfRange { label: class, num_classes: self.spec.num_classes });
        }
        let batch = self.embed(x)?;
        let (_, cache) = forward(self.spec, self.params, &batch, Mode::Eval)?;
        let mut dlogits = Tensor::zeros(vec![1, self.spec.num_classes]);
        dlogits.data_mut()[class] = 1.0;
        let grads = backward(self.spec, self.params, &cache, &dlogits)?;
        self.crop(&grads.input.sample(0)?)
    }
}

/// One mixed-loss Adam step over the given kept/adversarial half-batches.
/// Samples arrive in base dims and are centre-padded here.
fn train_step(
    spec: &NetworkSpec,
    client: &mut ClientState,
    kept: &[(Tensor, usize)],
    adv: &[(Tensor, usize)],
    mix_alpha: f64,
    config: &FederationConfig,
) -> Result<()> {
    let pad = |pairs: &[(Tensor, usize)]| -> Result<(Vec<Tensor>, Vec<usize>)> {
        let mut xs = Vec::with_capacity(pairs.len());
        let mut ys = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            xs.push(center_pad(x, &config.randomisation)?);
            ys.push(*y);
        }
        Ok((xs, ys))
    };
    let (kx, ky) = pad(kept)?;
    let (ax, ay) = pad(adv)?;
    let (_, grads) = mixed_adversarial_loss(
        spec,
        &mut client.params,
        &kx,
        &ax,
        &ky,
        &ay,
        mix_alpha,
        Mode::Train,
    )?;
    let mut flat = client.params.flatten();
    adam_step_flat(&mut flat, &grads.flatten(), &mut client.opt, config.learning_rate)?;
    client.params = client.params.unflatten(&flat)?;
    Ok(())
}

/// One round of local training. Loads the broadcast global parameters, then
/// either trains plainly (nature mode, or the first round) or splits the
/// data, attacks one half with the previous round's local model, and trains
/// on the pooled set with the mixed loss. Returns the new local parameters
/// and the sample count used.
pub fn local_train_round(
    spec: &NetworkSpec,
    client: &mut ClientState,
    global: &Parameters,
    round: usize,
    config: &FederationConfig,
) -> Result<(Parameters, usize)> {
    config.validate()?;
    let n = client.data.len();
    let mut rng = client_rng(config.master_seed, client.id as u64, round as u64);
    let adversarial = config.defence == DefenceMode::AdvTrain && round > 1;
    if adversarial && n < 2 {
        return Err(Error::Federation(format!(
            "client {} has {n} samples, adversarial training needs >= 2",
            client.id
        )));
    }
    // theta_{i, t-1} before the broadcast overwrites it.
    let prev_local = client.params.clone();
    client.params = global.clone();

    let (kept, adv): (Vec<(Tensor, usize)>, Vec<(Tensor, usize)>) = if adversarial {
        let split = split_round_data(n, &mut rng)?;
        let kept: Vec<_> = split.kept.iter().map(|&i| client.data[i].clone()).collect();
        let targets: Vec<Tensor> = split.to_attack.iter().map(|&i| client.data[i].0.clone()).collect();
        let labels: Vec<usize> = split.to_attack.iter().map(|&i| client.data[i].1).collect();
        let victim = PaddedNetModel { spec, params: &prev_local, rand: &config.randomisation };
        let batch = attack_batch(&victim, &targets, &labels, &config.attack).map_err(|e| {
            Error::Federation(format!("client {} round {round}: attack failed: {e}", client.id))
        })?;
        let adv: Vec<_> = batch.perturbed.into_iter().zip(labels).collect();
        (kept, adv)
    } else {
        (client.data.clone(), Vec::new())
    };

    let hb = (config.train_batch / 2).max(1);
    for _ in 0..config.local_epochs {
        if adv.is_empty() {
            let mut order: Vec<usize> = (0..kept.len()).collect();
            order.shuffle(&mut rng);
            let shuffled: Vec<_> = order.iter().map(|&i| kept[i].clone()).collect();
            for chunk in shuffled.chunks(config.train_batch) {
                train_step(spec, client, chunk, &[], 1.0, config)?;
            }
        } else {
            let mut ko: Vec<usize> = (0..kept.len()).collect();
            let mut ao: Vec<usize> = (0..adv.len()).collect();
            ko.shuffle(&mut rng);
            ao.shuffle(&mut rng);
            let ks: Vec<_> = ko.iter().map(|&i| kept[i].clone()).collect();
            let asv: Vec<_> = ao.iter().map(|&i| adv[i].clone()).collect();
            let kc: Vec<&[(Tensor, usize)]> = ks.chunks(hb).collect();
            let ac: Vec<&[(Tensor, usize)]> = asv.chunks(hb).collect();
            for i in 0..kc.len().max(ac.len()) {
                match (kc.get(i), ac.get(i)) {
                    (Some(k), Some(a)) => train_step(spec, client, k, a, config.mix_alpha, config)?,
                    (Some(k), None) => train_step(spec, client, k, &[], 1.0, config)?,
                    (None, Some(a)) => train_step(spec, client, &[], a, 0.0, config)?,
                    (None, None) => unreachable!(),
                }
            }
        }
    }
    Ok((client.params.clone(), n))
}

/// Sample-count-weighted element-wise mean over the reported parameter sets,
/// batchnorm running statistics included.
pub fn aggregate_weights(reports: &[(Parameters, usize)]) -> Result<Parameters> {
    let (first, _) = reports.first().ok_or_else(|| Error::Federation("no reports to aggregate".into()))?;
    let total: usize = reports.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(Error::Federation("aggregate sample count is zero".into()));
    }
    let mut acc = vec![0.0; first.num_scalars()];
    for (params, count) in reports {
        if !first.same_layout(params) {
            return Err(Error::Federation("parameter layouts differ across reports".into()));
        }
        let w = *count as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(params.flatten()) {
            *a += w * v;
        }
    }
    first.unflatten(&acc)
}

fn confusion_from(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[Tensor],
    labels: &[usize],
    eval_batch: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(spec.num_classes);
    for (chunk_x, chunk_y) in inputs.chunks(eval_batch).zip(labels.chunks(eval_batch)) {
        let batch = Tensor::stack(chunk_x)?;
        let logits = infer(spec, params, &batch)?;
        for (pred, &truth) in predict(&logits).iter().zip(chunk_y) {
            cm.record(truth, *pred)?;
        }
    }
    Ok(cm)
}

/// Evaluate the global model on the pooled test set under the four
/// conditions. Adversarial test samples are generated once against the
/// current global model and shared by both adversarial conditions.
pub fn evaluate_global(
    spec: &NetworkSpec,
    params: &Parameters,
    test: &[(Tensor, usize)],
    round: usize,
    config: &FederationConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<MetricsRecord>> {
    if test.is_empty() {
        return Err(Error::Federation("empty test set".into()));
    }
    let originals: Vec<Tensor> = test.iter().map(|(x, _)| x.clone()).collect();
    let labels: Vec<usize> = test.iter().map(|(_, y)| y).cloned().collect();
    let victim = PaddedNetModel { spec, params, rand: &config.randomisation };
    let adv_batch = attack_batch(&victim, &originals, &labels, &config.attack)?;

    let mut records = Vec::with_capacity(Condition::ALL.len());
    for condition in Condition::ALL {
        let sources = if condition.is_adversarial() { &adv_batch.perturbed } else { &originals };
        let prepared: Vec<Tensor> = match condition {
            Condition::Original | Condition::Adversarial => sources
                .iter()
                .map(|x| center_pad(x, &config.randomisation))
                .collect::<Result<_>>()?,
            Condition::Randomised | Condition::RandomisedAdversarial => sources
                .iter()
                .map(|x| randomise(x, rng, &config.randomisation))
                .collect::<Result<_>>()?,
        };
        let cm = confusion_from(spec, params, &prepared, &labels, config.eval_batch)?;
        let (norm, success, attack) = if condition.is_adversarial() {
            (
                Some(adv_batch.mean_norm()),
                Some(adv_batch.success_rate()),
                config.attack.family.name().to_string(),
            )
        } else {
            (None, None, "none".to_string())
        };
        records.push(MetricsRecord {
            round,
            condition,
            attack,
            uar: uar(&cm)?,
            accuracy: accuracy(&cm)?,
            mean_perturbation_norm: norm,
            attack_success_rate: success,
            confusion: cm,
        });
    }
    Ok(records)
}

/// Final global parameters plus every checkpoint's metrics records.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub global: Parameters,
    pub records: Vec<MetricsRecord>,
}

/// The full federated loop. Clients run independently within a round (rng
/// streams keyed by client id, not schedule position); reports are
/// aggregated in client-id order so any scheduling yields bit-identical
/// globals. With an output directory, writes run_log.csv, per-checkpoint
/// confusion CSVs and round_<t>.ckpt parameter files.
pub fn run_federated(
    spec: &NetworkSpec,
    clients: &mut [ClientState],
    test: &[(Tensor, usize)],
    config: &FederationConfig,
    output_dir: Option<&Path>,
) -> Result<RunOutput> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::Federation("no clients".into()));
    }
    let mut global = Parameters::init(spec, config.master_seed)?;
    for client in clients.iter_mut() {
        if !client.params.same_layout(&global) {
            return Err(Error::Federation(format!("client {} parameter layout mismatch", client.id)));
        }
        client.params = global.clone();
    }
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut records = Vec::new();
    let mut log_rows = vec![RUN_LOG_HEADER.to_string()];
    for round in 1..=config.rounds {
        let mut reports: Vec<(usize, Parameters, usize)> = clients
            .par_iter_mut()
            .map(|client| {
                local_train_round(spec, client, &global, round, config)
                    .map(|(p, n)| (client.id, p, n))
                    .map_err(|e| Error::Federation(format!("round {round}: {e}")))
            })
            .collect::<Result<_>>()?;
        reports.sort_by_key(|(id, _, _)| *id);
        let weighted: Vec<(Parameters, usize)> =
            reports.into_iter().map(|(_, p, n)| (p, n)).collect();
        global = aggregate_weights(&weighted)?;
        if round % config.eval_every == 0 {
            let mut rng = client_rng(config.master_seed, EVAL_STREAM, round as u64);
            let round_records = evaluate_global(spec, &global, test, round, config, &mut rng)?;
            if let Some(dir) = output_dir {
                save_checkpoint(&dir.join(format!("round_{round}.ckpt")), spec, &global)?;
                for rec in &round_records {
                    log_rows.push(rec.to_csv_row());
                    let name = format!("confusion_round_{round}_{}.csv", rec.condition.name());
                    std::fs::write(dir.join(name), rec.confusion.to_csv())?;
                }
            }
            records.extend(round_records);
        }
    }
    if let Some(dir) = output_dir {
        std::fs::write(dir.join("run_log.csv"), log_rows.join("\n") + "\n")?;
    }
    Ok(RunOutput { global, records })
}

/// Per-client 80/20 (by `train_fraction`) split with the test portions
/// pooled globally. Every client keeps at least one sample on each side.
pub fn speaker_dependent_split<T: Clone, R: Rng>(
    corpus: &[Vec<(T, usize)>],
    train_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<(T, usize)>>, Vec<(T, usize)>)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Federation(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    let mut train_sets = Vec::with_capacity(corpus.len());
    let mut test_set = Vec::new();
    for (i, client) in corpus.iter().enumerate() {
        let n = client.len();
        if n < 2 {
            return Err(Error::Federation(format!("client {i} has {n} samples, split needs >= 2")));
        }
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let train: Vec<(T, usize)> = order[..n_train].iter().map(|&j| client[j].clone()).collect();
        test_set.extend(order[n_train..].iter().map(|&j| client[j].clone()));
        train_sets.push(train);
    }
    Ok((train_sets, test_set))
}
