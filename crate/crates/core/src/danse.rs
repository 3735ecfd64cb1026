//! Distributed WPE with DANSE₁ compression.
//!
//! Every node predicts the late reverberation of its own channel from its
//! delayed local frames and from one compressed scalar per neighbor. The
//! compressor a node broadcasts is a copy of its local prediction weights,
//! applied to its delayed local vector.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::ConvergenceTrace;
use crate::netsim::{Message, Mode, Network, Payload, Recipient, TransmissionLedger};
use crate::stft::Spectrogram;
use crate::wpe::{
    fill_delayed, predict_bin, relative_change, solve_bin, update_psd, PsdEstimate, Regressors,
    WpeParams,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Parameters of a distributed run. Rounds are capped by
/// `wpe.max_iters` and the stopping threshold is `wpe.convergence_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DanseParams {
    pub wpe: WpeParams,
    /// Rounds between compressor broadcasts.
    pub collab_period: usize,
}

impl DanseParams {
    pub fn new(wpe: WpeParams, collab_period: usize) -> Self {
        Self { wpe, collab_period }
    }

    pub fn validate(&self) -> Result<()> {
        self.wpe.validate()?;
        if self.collab_period == 0 {
            return Err(Error::InvalidInput("collaboration period must be at least 1".into()));
        }
        Ok(())
    }
}

/// `g^H s` for one delayed vector.
pub fn compress_frame(delayed: &[Complex64], compressor: &[Complex64]) -> Result<Complex64> {
    if delayed.len() != compressor.len() {
        return Err(Error::InvalidInput(format!(
            "compressor of length {} for a delayed vector of length {}",
            compressor.len(),
            delayed.len()
        )));
    }
    Ok(compressor
        .iter()
        .zip(delayed.iter())
        .fold(ZERO, |acc, (g, s)| acc + g.conj() * s))
}

/// Stacks the local delayed vector over the compressed neighbor scalars.
/// `inbox_row[j]` belongs to `neighbors[j]`, ascending by node id.
pub fn assemble_extended(
    local: &[Complex64],
    inbox_row: &[Option<Complex64>],
    neighbors: &[usize],
) -> Result<Vec<Complex64>> {
    if inbox_row.len() != neighbors.len() {
        return Err(Error::InvalidInput(format!(
            "{} inbox slots for {} neighbors",
            inbox_row.len(),
            neighbors.len()
        )));
    }
    let mut out = Vec::with_capacity(local.len() + inbox_row.len());
    out.extend_from_slice(local);
    for (value, &neighbor) in inbox_row.iter().zip(neighbors.iter()) {
        out.push(value.ok_or(Error::MissingData { neighbor })?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct InboxEntry {
    round: usize,
    data: Arc<Vec<Complex64>>,
}

/// State of one node.
#[derive(Debug, Clone)]
pub struct NodeState {
    id: usize,
    neighbors: Vec<usize>,
    spec: Arc<Spectrogram>,
    params: WpeParams,
    floor: f64,
    local_weights: Vec<Vec<Complex64>>,
    cross_weights: Vec<Vec<Complex64>>,
    compressor: Vec<Vec<Complex64>>,
    psd: PsdEstimate,
    inbox: Vec<Option<InboxEntry>>,
    desired: Spectrogram,
    last_change: f64,
}

impl NodeState {
    pub fn new(id: usize, n_nodes: usize, spec: Arc<Spectrogram>, params: WpeParams) -> Result<Self> {
        params.validate()?;
        if id >= n_nodes {
            return Err(Error::InvalidInput(format!("node {id} outside a {n_nodes}-node network")));
        }
        let k = spec.n_bins();
        let l = params.filter_order;
        let floor = params.psd_floor.resolve(&spec);
        let desired = (*spec).clone();
        Ok(Self {
            id,
            neighbors: (0..n_nodes).filter(|&j| j != id).collect(),
            floor,
            local_weights: vec![vec![ZERO; l]; k],
            cross_weights: vec![vec![ZERO; n_nodes - 1]; k],
            compressor: vec![vec![ZERO; l]; k],
            psd: update_psd(&desired, floor),
            inbox: vec![None; n_nodes - 1],
            desired,
            spec,
            params,
            last_change: f64::INFINITY,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Neighbor ids in the order of the cross weights.
    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn local_spec(&self) -> &Spectrogram {
        &self.spec
    }

    pub fn local_weights(&self) -> &[Vec<Complex64>] {
        &self.local_weights
    }

    pub fn cross_weights(&self) -> &[Vec<Complex64>] {
        &self.cross_weights
    }

    pub fn compressor(&self) -> &[Vec<Complex64>] {
        &self.compressor
    }

    pub fn psd(&self) -> &PsdEstimate {
        &self.psd
    }

    pub fn desired(&self) -> &Spectrogram {
        &self.desired
    }

    pub fn into_desired(self) -> Spectrogram {
        self.desired
    }

    /// Relative change of the desired signal in the latest round.
    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    /// Round of the compressed data held from each neighbor.
    pub fn inbox_rounds(&self) -> Vec<Option<usize>> {
        self.inbox.iter().map(|e| e.as_ref().map(|e| e.round)).collect()
    }

    fn has_cross_data(&self) -> bool {
        self.inbox.iter().any(Option::is_some)
    }

    fn check_inbox(&self) -> Result<()> {
        for (slot, entry) in self.inbox.iter().enumerate() {
            if entry.is_none() {
                return Err(Error::MissingData {
                    neighbor: self.neighbors[slot],
                });
            }
        }
        Ok(())
    }

    /// Stores a neighbor's compressed broadcast.
    pub fn receive(&mut self, msg: &Message) -> Result<()> {
        let slot = self.neighbors.binary_search(&msg.from).map_err(|_| {
            Error::Protocol(format!("node {} received a message from {}", self.id, msg.from))
        })?;
        let data = match &msg.payload {
            Payload::Compressed(data) => data,
            Payload::DelayedFrames { .. } => {
                return Err(Error::Protocol(format!(
                    "node {} expects compressed data, got raw frames from {}",
                    self.id, msg.from
                )))
            }
        };
        let cells = self.spec.n_frames() * self.spec.n_bins();
        if data.len() != cells {
            return Err(Error::InvalidInput(format!(
                "compressed data from node {} has {} values, expected {cells}",
                msg.from,
                data.len()
            )));
        }
        self.inbox[slot] = Some(InboxEntry {
            round: msg.round,
            data: Arc::clone(data),
        });
        Ok(())
    }

    /// The extended observation `[s_i(n - tau, k) | b_i(n, k)]`.
    pub fn extended_observation(&self, n: usize, k: usize) -> Result<Vec<Complex64>> {
        if n >= self.spec.n_frames() || k >= self.spec.n_bins() {
            return Err(Error::InvalidInput(format!("frame {n}, bin {k} out of range")));
        }
        let frames = self.spec.n_frames();
        let mut local = vec![ZERO; self.params.filter_order];
        fill_delayed(self.spec.bin(k), n, self.params.delay, &mut local);
        let row: Vec<Option<Complex64>> = self
            .inbox
            .iter()
            .map(|e| e.as_ref().map(|e| e.data[k * frames + n]))
            .collect();
        assemble_extended(&local, &row, &self.neighbors)
    }

    /// `S_i(n, k) - [w_i; w~_i]^H s~_i(n - tau, k)`.
    pub fn local_predict(&self, n: usize, k: usize) -> Result<Complex64> {
        let x = self.extended_observation(n, k)?;
        let l = self.params.filter_order;
        let w = &self.local_weights[k];
        let c = &self.cross_weights[k];
        let mut acc = ZERO;
        for (wi, xi) in w.iter().chain(c.iter()).zip(x.iter()) {
            acc += wi.conj() * xi;
        }
        debug_assert_eq!(x.len(), l + c.len());
        Ok(self.spec.get(n, k) - acc)
    }

    /// Regression rows of one bin. Before any compressed data has arrived
    /// only the local block is used.
    fn regressors(&self, k: usize) -> Result<Regressors> {
        let local = self.spec.bin(k);
        let l = self.params.filter_order;
        if !self.has_cross_data() {
            return Ok(Regressors::stacked(&[local], self.params.delay, l));
        }
        self.check_inbox()?;
        let frames = self.spec.n_frames();
        let mut reg = Regressors::zeros(frames, l + self.neighbors.len());
        for n in 0..frames {
            let row = reg.row_mut(n);
            fill_delayed(local, n, self.params.delay, &mut row[..l]);
            for (slot, entry) in self.inbox.iter().enumerate() {
                row[l + slot] = entry.as_ref().map_or(ZERO, |e| e.data[k * frames + n]);
            }
        }
        Ok(reg)
    }

    fn store_weights(&mut self, k: usize, w: Vec<Complex64>) {
        let l = self.params.filter_order;
        self.local_weights[k].copy_from_slice(&w[..l]);
        if w.len() > l {
            self.cross_weights[k].copy_from_slice(&w[l..]);
        } else {
            self.cross_weights[k].iter_mut().for_each(|c| *c = ZERO);
        }
    }

    fn solve_one(&self, k: usize, with_prediction: bool) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let reg = self.regressors(k)?;
        let target = self.spec.bin(k);
        let w = solve_bin(&reg, target, self.psd.bin(k), self.params.ridge)
            .map_err(|e| e.context(format!("node {}, bin {k}", self.id)))?;
        let mut out = Vec::new();
        if with_prediction {
            out = vec![ZERO; target.len()];
            predict_bin(&reg, target, &w, &mut out);
        }
        Ok((w, out))
    }

    /// `sigma_i = max(|D_i|^2, eps)` from the current desired estimate.
    pub fn update_psd(&mut self) {
        self.psd = update_psd(&self.desired, self.floor);
    }

    /// Solves every bin for the local and cross weights under the current PSD.
    pub fn local_solve(&mut self) -> Result<()> {
        let solved: Vec<Vec<Complex64>> = (0..self.spec.n_bins())
            .into_par_iter()
            .map(|k| self.solve_one(k, false).map(|(w, _)| w))
            .collect::<Result<_>>()?;
        for (k, w) in solved.into_iter().enumerate() {
            self.store_weights(k, w);
        }
        Ok(())
    }

    /// Recomputes the desired signal from the current weights.
    pub fn refresh_desired(&mut self) -> Result<()> {
        let mut next = Spectrogram::zeros(self.spec.n_frames(), *self.spec.window(), self.spec.sample_rate());
        for k in 0..self.spec.n_bins() {
            let reg = self.regressors(k)?;
            let mut w = self.local_weights[k].clone();
            if reg.dim() > w.len() {
                w.extend_from_slice(&self.cross_weights[k]);
            }
            predict_bin(&reg, self.spec.bin(k), &w, next.bin_mut(k));
        }
        self.last_change = relative_change(next.as_bin_major(), self.desired.as_bin_major());
        self.desired = next;
        Ok(())
    }

    /// `g_i := w_i` in every bin.
    pub fn update_compressor(&mut self) {
        for (g, w) in self.compressor.iter_mut().zip(self.local_weights.iter()) {
            g.copy_from_slice(w);
        }
    }

    /// Compresses the delayed local vectors with the current compressor,
    /// bin-major like the spectrogram.
    pub fn compress_local(&self) -> Vec<Complex64> {
        let frames = self.spec.n_frames();
        let l = self.params.filter_order;
        let mut out = vec![ZERO; frames * self.spec.n_bins()];
        let mut delayed = vec![ZERO; l];
        for (k, chunk) in out.chunks_exact_mut(frames).enumerate() {
            let g = &self.compressor[k];
            for (n, slot) in chunk.iter_mut().enumerate() {
                fill_delayed(self.spec.bin(k), n, self.params.delay, &mut delayed);
                *slot = g.iter().zip(delayed.iter()).fold(ZERO, |acc, (g, s)| acc + g.conj() * s);
            }
        }
        out
    }

    /// One round: PSD update, weight solve and desired update; on rounds
    /// divisible by `collab_period` the compressor is refreshed and the
    /// compressed local data returned as a broadcast.
    pub fn node_round(&mut self, round: usize, collab_period: usize) -> Result<Option<Message>> {
        if collab_period == 0 {
            return Err(Error::InvalidInput("collaboration period must be at least 1".into()));
        }
        self.update_psd();
        let solved: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..self.spec.n_bins())
            .into_par_iter()
            .map(|k| self.solve_one(k, true))
            .collect::<Result<_>>()
            .map_err(|e| e.context(format!("round {round}")))?;
        let mut next = Spectrogram::zeros(self.spec.n_frames(), *self.spec.window(), self.spec.sample_rate());
        for (k, (w, d)) in solved.into_iter().enumerate() {
            self.store_weights(k, w);
            next.bin_mut(k).copy_from_slice(&d);
        }
        self.last_change = relative_change(next.as_bin_major(), self.desired.as_bin_major());
        self.desired = next;

        if round % collab_period != 0 || self.neighbors.is_empty() {
            return Ok(None);
        }
        self.update_compressor();
        Ok(Some(Message {
            from: self.id,
            to: Recipient::Broadcast,
            round,
            payload: Payload::Compressed(Arc::new(self.compress_local())),
        }))
    }
}

#[derive(Debug, Clone)]
pub struct DistributedOutput {
    /// Desired-signal estimate of every node.
    pub desired: Vec<Spectrogram>,
    pub trace: ConvergenceTrace,
    pub ledger: TransmissionLedger,
    pub rounds: usize,
    pub converged: bool,
}

/// Runs distributed WPE over all nodes until every node's change stayed
/// below the tolerance for a full collaboration period, or the round cap.
/// A single node stops on its latest change alone, exactly like
/// [`crate::wpe::run_wpe`].
pub fn run_distributed(observations: &[Spectrogram], params: &DanseParams) -> Result<DistributedOutput> {
    params.validate()?;
    let first = observations
        .first()
        .ok_or_else(|| Error::InvalidInput("a network needs at least one node".into()))?;
    if observations.iter().any(|o| !o.same_shape(first)) {
        return Err(Error::InvalidInput("all nodes must share frame and bin counts".into()));
    }
    let m = observations.len();
    let mut nodes: Vec<NodeState> = observations
        .iter()
        .enumerate()
        .map(|(i, o)| NodeState::new(i, m, Arc::new(o.clone()), params.wpe))
        .collect::<Result<_>>()?;
    let cells = (first.n_frames() * first.n_bins()) as u64;
    let mut network = Network::new(m, Mode::Distributed, cells);
    let mut trace = ConvergenceTrace::default();
    let window = if m == 1 { 1 } else { params.collab_period };
    let mut converged = false;
    let mut rounds = 0;

    for round in 1..=params.wpe.max_iters {
        rounds = round;
        let outgoing: Vec<Option<Message>> = nodes
            .par_iter_mut()
            .map(|node| node.node_round(round, params.collab_period))
            .collect::<Result<_>>()?;
        for msg in outgoing.into_iter().flatten() {
            network.submit(msg)?;
        }
        for (node, inbox) in nodes.iter_mut().zip(network.deliver_round()) {
            for msg in &inbox {
                node.receive(msg)?;
            }
        }
        trace.push(round, nodes.iter().map(NodeState::last_change).collect());

        if trace.len() >= window {
            let recent = &trace.errors[trace.len() - window..];
            if recent.iter().flatten().all(|&e| e < params.wpe.convergence_tol) {
                converged = true;
                break;
            }
        }
    }

    Ok(DistributedOutput {
        desired: nodes.into_iter().map(NodeState::into_desired).collect(),
        trace,
        ledger: network.into_ledger(),
        rounds,
        converged,
    })
}
