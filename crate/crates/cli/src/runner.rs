//! End-to-end experiment driver: corpus, network, federated loop, charts.

use crate::config::{Arch, ExperimentConfig};
use crate::corpus::{prepare, PreparedData};
use crate::svg;
use anyhow::{Context, Result};
use fedser_core::network::{build_tiny, build_vgg15, NetworkSpec, Parameters};
use fedser_core::federation::{run_federated, ClientState, RunOutput};
use std::path::Path;

pub fn build_network(config: &ExperimentConfig, num_classes: usize) -> Result<NetworkSpec> {
    let (w, h) = config.randomisation.final_dims();
    let spec = match config.network.arch {
        Arch::Tiny => build_tiny((w, h, 1), num_classes)?,
        Arch::Vgg15 => build_vgg15((w, h, 1), num_classes)?,
    };
    Ok(spec)
}

pub fn make_clients(
    spec: &NetworkSpec,
    data: &PreparedData,
    seed: u64,
) -> Result<Vec<ClientState>> {
    let init = Parameters::init(spec, seed)?;
    data.clients
        .iter()
        .enumerate()
        .map(|(id, set)| Ok(ClientState::new(id, set.clone(), init.clone())?))
        .collect()
}

/// Run the configured experiment into `output_dir`: resolved-config
/// snapshot, run log, confusion CSVs, checkpoints and the UAR chart.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml()?)?;

    let data = prepare(config)?;
    let spec = build_network(config, data.num_classes)?;
    let mut clients = make_clients(&spec, &data, config.seed)?;
    let fed = config.federation_config();
    let output = run_federated(&spec, &mut clients, &data.test, &fed, Some(out_dir))?;

    let log = std::fs::read_to_string(out_dir.join("run_log.csv"))?;
    let series = svg::parse_run_log(&log)?;
    std::fs::write(out_dir.join("uar_vs_round.svg"), svg::line_chart(&series)?)?;
    Ok(output)
}

/// Chart an existing run log into an SVG file.
pub fn chart(log_path: &Path, out_svg: &Path) -> Result<()> {
    let log = std::fs::read_to_string(log_path)
        .with_context(|| format!("reading run log {}", log_path.display()))?;
    let series = svg::parse_run_log(&log)?;
    std::fs::write(out_svg, svg::line_chart(&series)?)
        .with_context(|| format!("writing {}", out_svg.display()))?;
    Ok(())
}
