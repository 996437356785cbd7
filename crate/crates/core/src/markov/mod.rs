//! Multimodal Markov chains over joint (PL bin, direction) states.
//!
//! States are indexed downstream bins first: state `b` is
//! `(bin b, downstream)` and state `k + b` is `(bin b, upstream)`.
//! Transitions are counted only inside a biflow, from zero-PL-free
//! packet sequences; reported probabilities are raw row-normalized counts.

mod kmeans;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Biflow, Direction};
use crate::series::extract_flow_vector;

pub use kmeans::{fit_binning, PlBinning, DEFAULT_BINS, MAX_LLOYD_ITERATIONS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MarkovError {
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("only {distinct} distinct payload lengths for k = {k}; use k <= {distinct}")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("centroids must be finite and strictly increasing")]
    InvalidBinning,
    #[error("no nonzero-payload packets to fit")]
    NoPackets,
    #[error("model has no valid initial distribution")]
    InvalidInitial,
    #[error("matrix must be square with 2k rows, each summing to 1 or 0")]
    InvalidMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub bin: usize,
    pub dir: Direction,
}

impl State {
    pub fn index(self, k: usize) -> usize {
        match self.dir {
            Direction::Downstream => self.bin,
            Direction::Upstream => k + self.bin,
        }
    }

    pub fn from_index(i: usize, k: usize) -> Self {
        if i < k {
            State { bin: i, dir: Direction::Downstream }
        } else {
            State { bin: i - k, dir: Direction::Upstream }
        }
    }
}

/// Hex SHA-256 of an input that contributed to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub binning: PlBinning,
    pub counts: Vec<Vec<u64>>,
    pub transition: Vec<Vec<f64>>,
    pub initial_counts: Vec<u64>,
    pub initial: Vec<f64>,
    /// Rows without observed outgoing transitions; all-zero in `transition`.
    pub zero_rows: Vec<usize>,
    pub flows: u64,
    pub transitions: u64,
    pub seed: Option<u64>,
    #[serde(default)]
    pub provenance: Vec<InputDigest>,
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

impl MarkovModel {
    pub fn k(&self) -> usize {
        self.binning.k
    }

    pub fn state_count(&self) -> usize {
        2 * self.binning.k
    }

    /// Builds a model from explicit probabilities, e.g. a known chain to
    /// sample from. Counts are left empty.
    pub fn from_probabilities(
        binning: PlBinning,
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self, MarkovError> {
        let n = 2 * binning.k;
        let row_ok = |r: &Vec<f64>| {
            let s: f64 = r.iter().sum();
            r.len() == n && r.iter().all(|&p| p >= 0.0) && (s == 0.0 || (s - 1.0).abs() < 1e-9)
        };
        if transition.len() != n || !transition.iter().all(row_ok) {
            return Err(MarkovError::InvalidMatrix);
        }
        if initial.len() != n || initial.iter().any(|&p| p < 0.0) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MarkovError::InvalidInitial);
        }
        let zero_rows = (0..n).filter(|&i| transition[i].iter().all(|&p| p == 0.0)).collect();
        Ok(MarkovModel {
            binning,
            counts: vec![vec![0; n]; n],
            transition,
            initial_counts: vec![0; n],
            initial,
            zero_rows,
            flows: 0,
            transitions: 0,
            seed: None,
            provenance: Vec::new(),
        })
    }

    pub fn state_of(&self, pl: u32, dir: Direction) -> usize {
        State { bin: self.binning.assign(pl), dir }.index(self.k())
    }

    /// Outgoing transition count per state.
    pub fn visits(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Fits transition counts from per-flow (PL, direction) sequences; zero-PL
/// packets must already be removed.
pub fn fit_sequences(
    sequences: &[Vec<(u32, Direction)>],
    binning: &PlBinning,
) -> Result<MarkovModel, MarkovError> {
    let k = binning.k;
    let n = 2 * k;
    let mut counts = vec![vec![0u64; n]; n];
    let mut initial_counts = vec![0u64; n];
    let mut flows = 0;
    let mut transitions = 0;
    for seq in sequences {
        let states: Vec<usize> = seq
            .iter()
            .map(|&(pl, dir)| State { bin: binning.assign(pl), dir }.index(k))
            .collect();
        let Some(&first) = states.first() else { continue };
        flows += 1;
        initial_counts[first] += 1;
        for w in states.windows(2) {
            counts[w[0]][w[1]] += 1;
            transitions += 1;
        }
    }
    if flows == 0 {
        return Err(MarkovError::NoPackets);
    }
    let transition: Vec<Vec<f64>> = counts.iter().map(|r| normalize(r)).collect();
    let zero_rows = (0..n).filter(|&i| counts[i].iter().all(|&c| c == 0)).collect();
    Ok(MarkovModel {
        binning: binning.clone(),
        initial: normalize(&initial_counts),
        counts,
        transition,
        initial_counts,
        zero_rows,
        flows,
        transitions,
        seed: None,
        provenance: Vec::new(),
    })
}

/// Zero-PL-free (PL, direction) sequence of a biflow, optionally capped.
pub fn flow_sequence(flow: &Biflow, max_packets: Option<usize>) -> Vec<(u32, Direction)> {
    let v = extract_flow_vector(flow, max_packets.unwrap_or(usize::MAX));
    v.pl.iter().copied().zip(v.directions()).collect()
}

pub fn fit_model(biflows: &[Biflow], binning: &PlBinning) -> Result<MarkovModel, MarkovError> {
    let seqs: Vec<_> = biflows.iter().map(|f| flow_sequence(f, None)).collect();
    fit_sequences(&seqs, binning)
}

/// Nonzero payload lengths of all biflows, the input to [`fit_binning`].
pub fn payload_lengths(biflows: &[Biflow]) -> Vec<u32> {
    biflows
        .iter()
        .flat_map(|f| f.payload_stream().map(|p| p.packet.payload_len))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedSequence {
    pub packets: Vec<(u32, Direction)>,
    /// Times a dead-end state forced a restart from the initial distribution.
    pub fallbacks: u64,
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> Option<usize> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// Samples `length` packets; each emits the centroid PL of its bin.
pub fn generate(model: &MarkovModel, length: usize, seed: u64) -> Result<GeneratedSequence, MarkovError> {
    let mut out = GeneratedSequence {
        packets: Vec::with_capacity(length),
        fallbacks: 0,
    };
    if length == 0 {
        return Ok(out);
    }
    let k = model.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample(&mut rng, &model.initial).ok_or(MarkovError::InvalidInitial)?;
    loop {
        let s = State::from_index(state, k);
        out.packets.push((model.binning.centroid_pl(s.bin), s.dir));
        if out.packets.len() == length {
            return Ok(out);
        }
        state = match sample(&mut rng, &model.transition[state]) {
            Some(next) => next,
            None => {
                out.fallbacks += 1;
                sample(&mut rng, &model.initial).ok_or(MarkovError::InvalidInitial)?
            }
        };
    }
}

/// Transition matrix laid out as the figure heatmap: row 0 is the top.
///
/// Rows are "from" states, downstream block on top, bins descending
/// downward; columns are "to" states, upstream block left, bins ascending
/// rightward. Quadrants count counterclockwise from the top-right:
/// 1 = down→down, 2 = down→up, 3 = up→up, 4 = up→down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedMatrix {
    pub k: usize,
    pub cells: Vec<Vec<f64>>,
    pub row_states: Vec<String>,
    pub col_states: Vec<String>,
}

fn state_label(s: State) -> String {
    let d = match s.dir {
        Direction::Downstream => "down",
        Direction::Upstream => "up",
    };
    format!("{d}:{}", s.bin)
}

impl RenderedMatrix {
    pub fn row_state(&self, r: usize) -> State {
        let k = self.k;
        if r < k {
            State { bin: k - 1 - r, dir: Direction::Downstream }
        } else {
            State { bin: 2 * k - 1 - r, dir: Direction::Upstream }
        }
    }

    pub fn col_state(&self, c: usize) -> State {
        let k = self.k;
        if c < k {
            State { bin: c, dir: Direction::Upstream }
        } else {
            State { bin: c - k, dir: Direction::Downstream }
        }
    }

    fn quadrant_origin(&self, q: u8) -> (usize, usize) {
        let k = self.k;
        match q {
            1 => (0, k),
            2 => (0, 0),
            3 => (k, 0),
            4 => (k, k),
            _ => panic!("quadrants are numbered 1 to 4"),
        }
    }

    pub fn quadrant_mass(&self, q: u8) -> f64 {
        let (r0, c0) = self.quadrant_origin(q);
        self.cells[r0..r0 + self.k]
            .iter()
            .map(|row| row[c0..c0 + self.k].iter().sum::<f64>())
            .sum()
    }

    /// Swaps diagonal quadrant pairs (1↔3, 2↔4), i.e. exchanges the roles
    /// of downstream and upstream.
    pub fn quadrant_mirrored(&self) -> RenderedMatrix {
        let n = 2 * self.k;
        let mut out = self.clone();
        for r in 0..n {
            for c in 0..n {
                out.cells[(r + self.k) % n][(c + self.k) % n] = self.cells[r][c];
            }
        }
        out
    }
}

pub fn render_matrix(model: &MarkovModel) -> RenderedMatrix {
    let k = model.k();
    let n = 2 * k;
    let mut m = RenderedMatrix {
        k,
        cells: vec![vec![0.0; n]; n],
        row_states: Vec::with_capacity(n),
        col_states: Vec::with_capacity(n),
    };
    for r in 0..n {
        let from = m.row_state(r);
        m.row_states.push(state_label(from));
        for c in 0..n {
            let to = m.col_state(c);
            m.cells[r][c] = model.transition[from.index(k)][to.index(k)];
        }
    }
    m.col_states = (0..n).map(|c| state_label(m.col_state(c))).collect();
    m
}
