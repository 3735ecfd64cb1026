use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dwpe::complexity::{beta_report, filter_dimension};
use dwpe::metrics::evaluate;
use dwpe::netsim::{count_transmissions, transmission_reduction, Mode};
use dwpe::pipeline::{dereverberate, simulate, DereverbConfig};
use dwpe::signal::speech_like;
use dwpe::stft::WindowSpec;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::wav;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const TRANSMISSIONS_FILE: &str = "transmissions.csv";
pub const REDUCTION_FILE: &str = "reduction.csv";
pub const BETAS_FILE: &str = "betas.csv";

/// Index of a simulated recording. Paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scenario_id: String,
    pub n_nodes: usize,
    pub sample_rate: u32,
    pub t60_target: f64,
    /// Schroeder estimate per node; `null` when the decay was too short.
    pub t60_estimates: Vec<Option<f64>>,
    pub absorption: f64,
    pub fingerprint: String,
    pub observations: Vec<PathBuf>,
    pub references: Vec<PathBuf>,
    #[serde(default)]
    pub rirs: Vec<PathBuf>,
}

/// Outcome of one `dereverb` invocation, read back by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_id: String,
    pub mode: String,
    pub fingerprint: String,
    pub nodes: Vec<usize>,
    pub estimates: Vec<PathBuf>,
    pub iterations: usize,
    pub converged: bool,
    /// Units received per frame and bin by the first report node in the
    /// first round with traffic.
    pub transmissions_per_frame_bin: u64,
    pub broadcast_rounds: Vec<usize>,
    pub sync_lags: Vec<i64>,
}

fn run_file(mode: Mode) -> String {
    format!("run_{mode}.json")
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// Prefixes every data row of `csv` with the provenance columns.
fn with_provenance(csv: &str, scenario: &str, mode: &str, fingerprint: &str) -> String {
    let mut lines = csv.lines();
    let mut out = format!("scenario,mode,fingerprint,{}\n", lines.next().unwrap_or(""));
    for line in lines {
        let _ = writeln!(out, "{scenario},{mode},{fingerprint},{line}");
    }
    out
}

pub fn load_manifest(path: &Path) -> CliResult<(Manifest, PathBuf)> {
    let manifest: Manifest = read_json(path)?;
    if manifest.observations.len() != manifest.n_nodes {
        return Err(CliError::io(
            path,
            format!(
                "manifest lists {} observations for {} nodes",
                manifest.observations.len(),
                manifest.n_nodes
            ),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    Ok((manifest, base))
}

fn read_signals(base: &Path, files: &[PathBuf], rate: u32) -> CliResult<Vec<Vec<f64>>> {
    files
        .iter()
        .map(|f| {
            let path = base.join(f);
            let (x, fs) = wav::read_mono(&path)?;
            if fs != rate {
                return Err(CliError::io(
                    &path,
                    format!("sample rate {fs} Hz, expected {rate} Hz"),
                ));
            }
            Ok(x)
        })
        .collect()
}

/// Renders the scenario into per-node observation, reference and impulse
/// response files plus a manifest.
pub fn cmd_simulate(config: &RunConfig) -> CliResult<Manifest> {
    let scenario = config.load_scenario()?.resolved()?;
    let rate = scenario.sample_rate;
    let (clean, clean_rate) = match &config.clean {
        Some(path) => wav::read_mono(path)?,
        None => (speech_like(config.duration, rate, config.seed), rate),
    };
    let scene = simulate(&scenario, &clean, clean_rate)?;
    let out = &config.output_dir;
    create_dir(out)?;

    let mut manifest = Manifest {
        scenario_id: scenario.id.clone(),
        n_nodes: scenario.n_mics(),
        sample_rate: rate,
        t60_target: scenario.t60_target,
        t60_estimates: scene.t60_estimates.clone(),
        absorption: scenario.absorption()?,
        fingerprint: config.fingerprint(&scenario.id),
        observations: Vec::new(),
        references: Vec::new(),
        rirs: Vec::new(),
    };
    for m in 0..scene.observations.len() {
        let obs = PathBuf::from(format!("obs_node{m:02}.wav"));
        let reference = PathBuf::from(format!("ref_node{m:02}.wav"));
        let rir = PathBuf::from(format!("rir_node{m:02}.wav"));
        wav::write_mono(&out.join(&obs), &scene.observations[m], rate)?;
        wav::write_mono(&out.join(&reference), &scene.references[m], rate)?;
        wav::write_mono(&out.join(&rir), &scene.rirs[m].taps, rate)?;
        manifest.observations.push(obs);
        manifest.references.push(reference);
        manifest.rirs.push(rir);
    }
    write_text(&out.join("scenario.toml"), &scenario.to_toml_string())?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Runs the configured mode on the observations listed in `manifest_path`.
pub fn cmd_dereverb(config: &RunConfig, manifest_path: &Path) -> CliResult<RunSummary> {
    let mode = config.mode()?;
    let (manifest, base) = load_manifest(manifest_path)?;
    let observations = read_signals(&base, &manifest.observations, manifest.sample_rate)?;
    let dconfig = DereverbConfig {
        mode,
        params: config.danse_params()?,
        report_nodes: config.nodes.clone(),
        window: WindowSpec::speech_default(manifest.sample_rate)?,
        max_sync_lag: (config.max_sync_lag > 0).then_some(config.max_sync_lag),
    };
    let out = dereverberate(&observations, manifest.sample_rate, &dconfig)?;
    let dir = &config.output_dir;
    create_dir(dir)?;
    let scenario = &manifest.scenario_id;
    let fingerprint = config.fingerprint(scenario);

    let mut estimates = Vec::with_capacity(out.estimates.len());
    for est in &out.estimates {
        let file = PathBuf::from(format!("est_{mode}_node{:02}.wav", est.node));
        wav::write_mono(&dir.join(&file), &est.signal, manifest.sample_rate)?;
        estimates.push(file);
    }
    let ledger_csv = with_provenance(&out.ledger.to_csv(), scenario, mode.as_str(), &fingerprint);
    write_text(&dir.join(format!("ledger_{mode}.csv")), &ledger_csv)?;
    if let Some(trace) = &out.trace {
        let csv = with_provenance(&trace.to_csv(), scenario, mode.as_str(), &fingerprint);
        write_text(&dir.join(CONVERGENCE_FILE), &csv)?;
    }

    let rounds = out.ledger.active_rounds();
    let first_node = config.nodes[0];
    let summary = RunSummary {
        scenario_id: scenario.clone(),
        mode: mode.as_str().into(),
        fingerprint,
        nodes: out.estimates.iter().map(|e| e.node).collect(),
        estimates,
        iterations: out.estimates.iter().map(|e| e.iterations).max().unwrap_or(0),
        converged: out.estimates.iter().all(|e| e.converged),
        transmissions_per_frame_bin: rounds
            .first()
            .map(|&r| out.ledger.per_frame_bin(first_node, r))
            .unwrap_or(0),
        broadcast_rounds: rounds,
        sync_lags: out.lags.clone(),
    };
    if !summary.converged {
        eprintln!(
            "warning: {mode} run stopped at {} iterations without reaching tolerance {}",
            summary.iterations, config.tol
        );
    }
    write_json(&dir.join(run_file(mode)), &summary)?;
    Ok(summary)
}

/// Scores the unprocessed observations and every available estimate.
pub fn cmd_evaluate(config: &RunConfig, manifest_path: &Path) -> CliResult<String> {
    let (manifest, base) = load_manifest(manifest_path)?;
    if manifest.references.len() != manifest.n_nodes {
        return Err(CliError::io(manifest_path, "manifest lacks one reference per node"));
    }
    let rate = manifest.sample_rate;
    let scenario = &manifest.scenario_id;
    let dir = &config.output_dir;
    let nodes: Vec<usize> = config.nodes.clone();
    if let Some(&bad) = nodes.iter().find(|&&n| n >= manifest.n_nodes) {
        return Err(dwpe::Error::InvalidInput(format!(
            "report node {bad} out of range for {} nodes",
            manifest.n_nodes
        ))
        .into());
    }

    // (label, fingerprint, node -> signal)
    let mut sources: Vec<(String, String, Vec<Option<Vec<f64>>>)> = Vec::new();
    let observations = read_signals(&base, &manifest.observations, rate)?;
    sources.push((
        "unprocessed".into(),
        manifest.fingerprint.clone(),
        observations.into_iter().map(Some).collect(),
    ));
    for mode in [Mode::Single, Mode::Centralized, Mode::Distributed] {
        let path = dir.join(run_file(mode));
        if !path.exists() {
            continue;
        }
        let run: RunSummary = read_json(&path)?;
        let mut signals = vec![None; manifest.n_nodes];
        for (&node, file) in run.nodes.iter().zip(run.estimates.iter()) {
            if node < manifest.n_nodes && nodes.contains(&node) {
                signals[node] = Some(read_signals(dir, std::slice::from_ref(file), rate)?.remove(0));
            }
        }
        sources.push((mode.as_str().into(), run.fingerprint, signals));
    }

    let references = read_signals(&base, &manifest.references, rate)?;
    let mut csv = String::from("scenario,mode,fingerprint,node,cd,fsnr\n");
    for (label, fingerprint, signals) in &sources {
        let mut sums = (0.0, 0.0, 0usize);
        for &node in &nodes {
            let Some(signal) = &signals[node] else { continue };
            let reference = &references[node];
            if signal.len() != reference.len() {
                return Err(dwpe::Error::InvalidInput(format!(
                    "node {node}, {label}: {} samples against a {}-sample reference",
                    signal.len(),
                    reference.len()
                ))
                .into());
            }
            let report = evaluate(reference, signal, rate)
                .map_err(|e| e.context(format!("node {node}, {label}")))?;
            let _ = writeln!(
                csv,
                "{scenario},{label},{fingerprint},{node},{:.4},{:.4}",
                report.cd, report.fsnr
            );
            sums = (sums.0 + report.cd, sums.1 + report.fsnr, sums.2 + 1);
        }
        if sums.2 > 0 {
            let n = sums.2 as f64;
            let _ = writeln!(
                csv,
                "{scenario},{label},{fingerprint},mean,{:.4},{:.4}",
                sums.0 / n,
                sums.1 / n
            );
        }
    }
    create_dir(dir)?;
    write_text(&dir.join(EVALUATION_FILE), &csv)?;
    Ok(csv)
}

/// Closed-form transmission and operation-count tables.
pub fn cmd_report(config: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let scenario = config.load_scenario()?;
    let scenario_id = &scenario.id;
    let fingerprint = config.fingerprint(scenario_id);
    let l = config.filter_order;
    let mut transmissions = String::from("scenario,mode,fingerprint,M,L,dimension,T\n");
    let mut reduction = String::from("scenario,mode,fingerprint,M,L,reduction_percent\n");
    let mut betas =
        String::from("scenario,mode,fingerprint,M,L,normalization,beta_mul,beta_div,beta_solve\n");
    for &m in &config.network_sizes {
        for mode in [Mode::Centralized, Mode::Distributed] {
            let _ = writeln!(
                transmissions,
                "{scenario_id},{mode},{fingerprint},{m},{l},{},{}",
                filter_dimension(mode, m, l)?,
                count_transmissions(mode, m, l)?
            );
        }
        let _ = writeln!(
            reduction,
            "{scenario_id},distributed,{fingerprint},{m},{l},{:.2}",
            100.0 * transmission_reduction(m, l)?
        );
        let report = beta_report(m, l, 1)?;
        for (label, b) in [("per-node", report.per_node), ("per-network", report.per_network)] {
            let _ = writeln!(
                betas,
                "{scenario_id},distributed,{fingerprint},{m},{l},{label},{:.6},{:.6},{:.6}",
                b.mul, b.div, b.solve
            );
        }
    }
    let dir = &config.output_dir;
    create_dir(dir)?;
    let mut written = Vec::new();
    for (name, text) in [
        (TRANSMISSIONS_FILE, &transmissions),
        (REDUCTION_FILE, &reduction),
        (BETAS_FILE, &betas),
    ] {
        let path = dir.join(name);
        write_text(&path, text)?;
        written.push(path);
    }
    let convergence = dir.join(CONVERGENCE_FILE);
    if convergence.exists() {
        written.push(convergence);
    }
    Ok(written)
}
