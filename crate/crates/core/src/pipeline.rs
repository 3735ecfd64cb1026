//! End-to-end orchestration: scene synthesis, dereverberation in any mode,
//! and evaluation against the early-reverberant reference.

use std::sync::Arc;

use rayon::prelude::*;

use crate::danse::{run_distributed, DanseParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ConvergenceTrace, MetricReport};
use crate::netsim::{centralized_exchange, shift_signal, synchronize, Mode, TransmissionLedger};
use crate::room::{
    estimate_t60, render_observation, split_early_late, ImpulseResponse, RoomScenario,
};
use crate::stft::{istft_padded, stft_padded, Spectrogram, WindowSpec};
use crate::wpe::run_wpe;

/// Length of the early part of an impulse response after the direct path.
pub const EARLY_WINDOW_S: f64 = 0.05;

/// Observations and targets of a simulated recording.
#[derive(Debug, Clone)]
pub struct Scene {
    pub scenario: RoomScenario,
    pub rirs: Vec<ImpulseResponse>,
    /// Reverberant signal at every node.
    pub observations: Vec<Vec<f64>>,
    /// Clean source convolved with the early part of each response.
    pub references: Vec<Vec<f64>>,
    pub t60_estimates: Vec<Option<f64>>,
}

/// Sample index separating early from late reverberation for a microphone.
pub fn early_boundary(scenario: &RoomScenario, mic: usize) -> Result<usize> {
    let window = (EARLY_WINDOW_S * scenario.sample_rate as f64).round() as usize;
    Ok(scenario.direct_delay(mic)? + window)
}

/// Renders `clean` through every impulse response of `scenario`.
pub fn simulate(scenario: &RoomScenario, clean: &[f64], clean_rate: u32) -> Result<Scene> {
    scenario.validate()?;
    let rirs = scenario.all_rirs()?;
    let rendered: Vec<(Vec<f64>, Vec<f64>)> = rirs
        .par_iter()
        .enumerate()
        .map(|(m, rir)| {
            let observation = render_observation(clean, clean_rate, rir)?;
            let boundary = early_boundary(scenario, m)?.min(rir.taps.len() - 1);
            let (early, _) = split_early_late(rir, boundary)?;
            let reference = render_observation(clean, clean_rate, &early)?;
            Ok((observation, reference))
        })
        .collect::<Result<_>>()?;
    let (observations, references) = rendered.into_iter().unzip();
    Ok(Scene {
        scenario: scenario.clone(),
        t60_estimates: rirs.iter().map(estimate_t60).collect(),
        rirs,
        observations,
        references,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DereverbConfig {
    pub mode: Mode,
    /// Prediction parameters and, for distributed runs, the collaboration period.
    pub params: DanseParams,
    /// Nodes whose estimates are produced in single and centralized mode.
    /// Distributed mode always estimates every node.
    pub report_nodes: Vec<usize>,
    pub window: WindowSpec,
    /// Largest synchronization lag in samples; `None` skips synchronization.
    pub max_sync_lag: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct NodeEstimate {
    pub node: usize,
    pub signal: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DereverbOutput {
    pub mode: Mode,
    pub estimates: Vec<NodeEstimate>,
    /// Per-round convergence errors of a distributed run.
    pub trace: Option<ConvergenceTrace>,
    pub ledger: TransmissionLedger,
    /// Synchronization lag applied to each node before processing.
    pub lags: Vec<i64>,
}

impl DereverbOutput {
    pub fn estimate(&self, node: usize) -> Option<&NodeEstimate> {
        self.estimates.iter().find(|e| e.node == node)
    }
}

fn check_nodes(nodes: &[usize], n_nodes: usize) -> Result<()> {
    if let Some(&bad) = nodes.iter().find(|&&n| n >= n_nodes) {
        return Err(Error::InvalidInput(format!(
            "report node {bad} out of range for {n_nodes} nodes"
        )));
    }
    Ok(())
}

/// Dereverberates time-domain node signals in the configured mode.
///
/// Distributed and centralized runs first align all nodes to the first
/// report node; each estimate is shifted back onto its own node's timeline.
pub fn dereverberate(
    observations: &[Vec<f64>],
    sample_rate: u32,
    config: &DereverbConfig,
) -> Result<DereverbOutput> {
    config.params.validate()?;
    let m = observations.len();
    if m == 0 {
        return Err(Error::InvalidInput("no observations".into()));
    }
    let len = observations[0].len();
    if let Some(i) = observations.iter().position(|o| o.len() != len) {
        return Err(Error::InvalidInput(format!(
            "node {i} has {} samples, node 0 has {len}",
            observations[i].len()
        )));
    }
    check_nodes(&config.report_nodes, m)?;
    let sync_ref = config.report_nodes.first().copied().unwrap_or(0);
    let (aligned, lags) = match (config.mode, config.max_sync_lag) {
        (Mode::Single, _) | (_, None) => (observations.to_vec(), vec![0; m]),
        (_, Some(max_lag)) => {
            let s = synchronize(observations, sync_ref, max_lag)?;
            (s.signals, s.lags)
        }
    };
    let specs: Vec<Arc<Spectrogram>> = aligned
        .par_iter()
        .map(|x| stft_padded(x, &config.window, sample_rate).map(Arc::new))
        .collect::<Result<_>>()?;
    let cells = (specs[0].n_frames() * specs[0].n_bins()) as u64;
    let restore = |node: usize, spec: &Spectrogram| -> Result<Vec<f64>> {
        let x = istft_padded(spec, len)?;
        Ok(shift_signal(&x, -lags[node]))
    };
    let wpe = config.params.wpe;

    match config.mode {
        Mode::Single => {
            let estimates = config
                .report_nodes
                .iter()
                .map(|&node| {
                    let out = run_wpe(std::slice::from_ref(&*specs[node]), 0, &wpe)
                        .map_err(|e| e.context(format!("node {node}")))?;
                    Ok(NodeEstimate {
                        node,
                        signal: restore(node, &out.desired)?,
                        iterations: out.trace.len(),
                        converged: out.converged,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(DereverbOutput {
                mode: Mode::Single,
                estimates,
                trace: None,
                ledger: TransmissionLedger::new(Mode::Single, cells),
                lags,
            })
        }
        Mode::Centralized => {
            let mut ledger = TransmissionLedger::new(Mode::Centralized, cells);
            let mut estimates = Vec::with_capacity(config.report_nodes.len());
            for &node in &config.report_nodes {
                let (channels, exchange) = centralized_exchange(&specs, node, wpe.filter_order)?;
                ledger.merge(&exchange);
                let channels: Vec<Spectrogram> = channels.iter().map(|c| (**c).clone()).collect();
                let out = run_wpe(&channels, node, &wpe).map_err(|e| e.context(format!("node {node}")))?;
                estimates.push(NodeEstimate {
                    node,
                    signal: restore(node, &out.desired)?,
                    iterations: out.trace.len(),
                    converged: out.converged,
                });
            }
            Ok(DereverbOutput {
                mode: Mode::Centralized,
                estimates,
                trace: None,
                ledger,
                lags,
            })
        }
        Mode::Distributed => {
            let specs: Vec<Spectrogram> = specs.iter().map(|c| (**c).clone()).collect();
            let out = run_distributed(&specs, &config.params)?;
            let estimates = out
                .desired
                .iter()
                .enumerate()
                .map(|(node, d)| {
                    Ok(NodeEstimate {
                        node,
                        signal: restore(node, d)?,
                        iterations: out.rounds,
                        converged: out.converged,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(DereverbOutput {
                mode: Mode::Distributed,
                estimates,
                trace: Some(out.trace),
                ledger: out.ledger,
                lags,
            })
        }
    }
}

/// One evaluated signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub node: usize,
    /// `unprocessed` or a processing mode.
    pub label: String,
    pub report: MetricReport,
}

/// Scores the unprocessed observation and every estimate of the listed
/// nodes against the scene references.
pub fn evaluate_nodes(
    scene: &Scene,
    outputs: &[&DereverbOutput],
    nodes: &[usize],
) -> Result<Vec<EvaluationRow>> {
    check_nodes(nodes, scene.observations.len())?;
    let rate = scene.scenario.sample_rate;
    let mut rows = Vec::new();
    for &node in nodes {
        let reference = &scene.references[node];
        let context = |label: &str| format!("node {node}, {label}");
        rows.push(EvaluationRow {
            node,
            label: "unprocessed".into(),
            report: evaluate(reference, &scene.observations[node], rate)
                .map_err(|e| e.context(context("unprocessed")))?,
        });
        for out in outputs {
            if let Some(est) = out.estimate(node) {
                let label = out.mode.as_str();
                rows.push(EvaluationRow {
                    node,
                    label: label.into(),
                    report: evaluate(reference, &est.signal, rate).map_err(|e| e.context(context(label)))?,
                });
            }
        }
    }
    Ok(rows)
}
