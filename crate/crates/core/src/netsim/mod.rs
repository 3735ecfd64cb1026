//! Round-based simulation of a fully connected node network.
//!
//! Nodes submit at most one message per round; delivery happens at the round
//! barrier, after which every recipient holds the messages addressed to it
//! ordered by sender id. Each delivered complex scalar is one transmission
//! unit in the ledger.

mod sync;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

pub use sync::{gcc_phat_lag, shift_signal, synchronize, Synchronized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Single,
    Centralized,
    Distributed,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Mode::Single),
            "centralized" | "centralised" => Ok(Mode::Centralized),
            "distributed" => Ok(Mode::Distributed),
            other => Err(Error::InvalidInput(format!("unknown processing mode '{other}'"))),
        }
    }
}

/// Complex scalars each receiving node needs per frame and frequency bin.
///
/// Centralized processing ships every other node's length-`filter_order`
/// delayed vector to the reference; distributed processing receives one
/// compressed scalar per neighbor; single-node processing receives nothing.
pub fn count_transmissions(mode: Mode, n_nodes: usize, filter_order: usize) -> Result<u64> {
    if n_nodes < 1 {
        return Err(Error::InvalidInput("a network needs at least one node".into()));
    }
    let others = (n_nodes - 1) as u64;
    Ok(match mode {
        Mode::Single => 0,
        Mode::Centralized => others * filter_order as u64,
        Mode::Distributed => others,
    })
}

/// Relative saving of distributed over centralized transmission.
pub fn transmission_reduction(n_nodes: usize, filter_order: usize) -> Result<f64> {
    let cent = count_transmissions(Mode::Centralized, n_nodes, filter_order)?;
    let dist = count_transmissions(Mode::Distributed, n_nodes, filter_order)?;
    if cent == 0 {
        return Err(Error::InvalidInput(
            "no centralized transmission to compare against".into(),
        ));
    }
    Ok(1.0 - dist as f64 / cent as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Node(usize),
    Broadcast,
}

#[derive(Debug, Clone)]
pub enum Payload {
    /// One compressed scalar per frame and bin, bin-major.
    Compressed(Arc<Vec<Complex64>>),
    /// Raw STFT frames from which the receiver forms length-`filter_order`
    /// delayed vectors; accounted as `filter_order` scalars per frame and bin.
    DelayedFrames {
        frames: Arc<Spectrogram>,
        filter_order: usize,
    },
}

impl Payload {
    /// Transmission units carried by the payload.
    pub fn size(&self) -> u64 {
        match self {
            Payload::Compressed(v) => v.len() as u64,
            Payload::DelayedFrames {
                frames,
                filter_order,
            } => (frames.n_frames() * frames.n_bins() * filter_order) as u64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub from: usize,
    pub to: Recipient,
    pub round: usize,
    pub payload: Payload,
}

impl Message {
    pub fn payload_size(&self) -> u64 {
        self.payload.size()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub round: usize,
    pub mode: Mode,
    pub from: usize,
    pub to: usize,
    pub units: u64,
}

/// Record of every delivered unit of data.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionLedger {
    mode: Mode,
    frames_per_bin: u64,
    entries: Vec<LedgerEntry>,
}

impl TransmissionLedger {
    /// `cells` is the number of frame-bin pairs one full pass covers.
    pub fn new(mode: Mode, cells: u64) -> Self {
        Self {
            mode,
            frames_per_bin: cells,
            entries: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total_units(&self) -> u64 {
        self.entries.iter().map(|e| e.units).sum()
    }

    pub fn received(&self, node: usize, round: usize) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.to == node && e.round == round)
            .map(|e| e.units)
            .sum()
    }

    /// Rounds in which anything was delivered.
    pub fn active_rounds(&self) -> Vec<usize> {
        let mut rounds: Vec<usize> = self.entries.iter().map(|e| e.round).collect();
        rounds.dedup();
        rounds
    }

    /// Units a node received in a round per frame and bin. Exact when the
    /// round carried whole passes.
    pub fn per_frame_bin(&self, node: usize, round: usize) -> u64 {
        if self.frames_per_bin == 0 {
            return 0;
        }
        self.received(node, round) / self.frames_per_bin
    }

    /// Appends the entries of another ledger.
    pub fn merge(&mut self, other: &TransmissionLedger) {
        self.entries.extend_from_slice(&other.entries);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,mode,from,to,units\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{},{}\n", e.round, e.mode, e.from, e.to, e.units));
        }
        out
    }
}

/// Synchronous message exchange between `n_nodes` fully connected nodes.
#[derive(Debug)]
pub struct Network {
    n_nodes: usize,
    round: usize,
    pending: BTreeMap<usize, Message>,
    last_round: Vec<Option<usize>>,
    ledger: TransmissionLedger,
}

impl Network {
    pub fn new(n_nodes: usize, mode: Mode, cells: u64) -> Self {
        Self {
            n_nodes,
            round: 0,
            pending: BTreeMap::new(),
            last_round: vec![None; n_nodes],
            ledger: TransmissionLedger::new(mode, cells),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn ledger(&self) -> &TransmissionLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> TransmissionLedger {
        self.ledger
    }

    /// Queues a message for the current round.
    pub fn submit(&mut self, msg: Message) -> Result<()> {
        if msg.from >= self.n_nodes {
            return Err(Error::Protocol(format!("unknown sender {}", msg.from)));
        }
        if let Recipient::Node(to) = msg.to {
            if to >= self.n_nodes || to == msg.from {
                return Err(Error::Protocol(format!(
                    "node {} cannot address node {to}",
                    msg.from
                )));
            }
        }
        if self.pending.contains_key(&msg.from) {
            return Err(Error::Protocol(format!(
                "node {} submitted twice in round {}",
                msg.from, msg.round
            )));
        }
        if let Some(last) = self.last_round[msg.from] {
            if msg.round <= last {
                return Err(Error::Protocol(format!(
                    "node {} sent round {} after round {last}",
                    msg.from, msg.round
                )));
            }
        }
        self.pending.insert(msg.from, msg);
        Ok(())
    }

    /// Delivers everything queued this round. Returns one inbox per node,
    /// ordered by sender id.
    pub fn deliver_round(&mut self) -> Vec<Vec<Message>> {
        let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); self.n_nodes];
        let pending = std::mem::take(&mut self.pending);
        for (from, msg) in pending {
            self.last_round[from] = Some(msg.round);
            let units = msg.payload_size();
            let targets: Vec<usize> = match msg.to {
                Recipient::Node(to) => vec![to],
                Recipient::Broadcast => (0..self.n_nodes).filter(|&j| j != from).collect(),
            };
            for to in targets {
                self.ledger.entries.push(LedgerEntry {
                    round: msg.round,
                    mode: self.ledger.mode,
                    from,
                    to,
                    units,
                });
                inboxes[to].push(msg.clone());
            }
        }
        self.round += 1;
        inboxes
    }
}

/// Gathers every node's frames at `reference` through one network round.
///
/// Returns the channels in node order as the reference holds them after
/// delivery, together with the ledger of the exchange.
pub fn centralized_exchange(
    observations: &[Arc<Spectrogram>],
    reference: usize,
    filter_order: usize,
) -> Result<(Vec<Arc<Spectrogram>>, TransmissionLedger)> {
    let n = observations.len();
    let own = observations.get(reference).ok_or_else(|| {
        Error::InvalidInput(format!("reference {reference} out of range for {n} nodes"))
    })?;
    let cells = (own.n_frames() * own.n_bins()) as u64;
    let mut net = Network::new(n, Mode::Centralized, cells);
    for (from, frames) in observations.iter().enumerate() {
        if from != reference {
            net.submit(Message {
                from,
                to: Recipient::Node(reference),
                round: 1,
                payload: Payload::DelayedFrames {
                    frames: Arc::clone(frames),
                    filter_order,
                },
            })?;
        }
    }
    let mut inbox = net.deliver_round().swap_remove(reference).into_iter();
    let mut channels = Vec::with_capacity(n);
    for node in 0..n {
        if node == reference {
            channels.push(Arc::clone(own));
            continue;
        }
        match inbox.next().map(|m| m.payload) {
            Some(Payload::DelayedFrames { frames, .. }) => channels.push(frames),
            _ => return Err(Error::MissingData { neighbor: node }),
        }
    }
    Ok((channels, net.into_ledger()))
}
