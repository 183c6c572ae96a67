//! Attack visualisation: dump one test sample as original, perturbation
//! (scaled by 100) and adversarial spectrograms, as CSV grids and SVG
//! heatmaps, against a trained checkpoint.

use crate::config::ExperimentConfig;
use crate::corpus::prepare;
use crate::runner::build_network;
use crate::svg::heatmap;
use anyhow::{bail, Context, Result};
use fedser_core::attacks::{attack_batch, AttackConfig, AttackFamily};
use fedser_core::federation::PaddedNetModel;
use fedser_core::network::load_checkpoint;
use fedser_core::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

fn grid_csv(t: &Tensor) -> String {
    let (w, h) = (t.shape()[0], t.shape()[1]);
    let mut out = String::new();
    for i in 0..w {
        let row: Vec<String> = (0..h).map(|j| format!("{:.6}", t.data()[i * h + j])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn write_pair(out_dir: &Path, name: &str, t: &Tensor, title: &str) -> Result<()> {
    std::fs::write(out_dir.join(format!("{name}.csv")), grid_csv(t))?;
    std::fs::write(out_dir.join(format!("{name}.svg")), heatmap(t, title)?)?;
    Ok(())
}

/// Run the configured attack on the first test sample against the given
/// checkpoint. Returns a short report of per-family perturbation sizes.
pub fn attack_demo(
    config: &ExperimentConfig,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<String> {
    config.validate()?;
    if !checkpoint.exists() {
        bail!("checkpoint {} does not exist; run an experiment first", checkpoint.display());
    }
    let data = prepare(config)?;
    let spec = build_network(config, data.num_classes)?;
    let params = load_checkpoint(checkpoint, &spec)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let model = PaddedNetModel { spec: &spec, params: &params, rand: &config.randomisation };
    let (sample, label) = data.test.first().context("test set is empty")?;

    let run = |family: AttackFamily| -> Result<(Tensor, f64)> {
        let cfg = AttackConfig { family, ..config.attack.clone() };
        let batch =
            attack_batch(&model, std::slice::from_ref(sample), &[*label], &cfg)?;
        let adv = batch.perturbed.into_iter().next().expect("one sample");
        let l2 = sample.l2_distance(&adv);
        Ok((adv, l2))
    };

    let (adv, _) = run(config.attack.family)?;
    let perturbation = Tensor::new(
        sample.shape().to_vec(),
        sample.data().iter().zip(adv.data()).map(|(a, b)| (b - a) * 100.0).collect(),
    )?;
    std::fs::create_dir_all(out_dir)?;
    write_pair(out_dir, "original", sample, "original log-Mel")?;
    write_pair(
        out_dir,
        "perturbation_x100",
        &perturbation,
        &format!("{} perturbation x100", config.attack.family.name()),
    )?;
    write_pair(out_dir, "adversarial", &adv, &format!("{} adversarial", config.attack.family.name()))?;

    let mut report = String::new();
    for family in [AttackFamily::Fgsm, AttackFamily::Pgd, AttackFamily::Deepfool] {
        let (_, l2) = run(family)?;
        let _ = writeln!(report, "{}: perturbation l2 = {l2:.6}", family.name());
    }
    Ok(report)
}
