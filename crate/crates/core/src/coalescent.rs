//! Direct simulation of the Lambda-coalescent: the block-counting chain, the
//! partition-valued chain restricted to `[n]`, and first passage times.
//!
//! Mergers out of `b` blocks are drawn by thinning. Density-driven events
//! with mark `x` occur at rate `x^{-2} Lambda_0(dx)` and are visible to `b`
//! blocks when at least two of the `b` independent Bernoulli(x) trials
//! succeed. [`MergerSampler`] proposes `x` from the dominating intensity
//! `min(x^{-2}, C(b,2)) M x^{-a}` (sampled exactly by inversion), keeps it
//! with the ratio of the true to the proposal intensity, and then draws the
//! number of participants from Binomial(b, x) conditioned on being at least
//! two. The accepted events are exactly the visible events of the Poisson
//! construction, at any `b`, without per-`b` tables.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{choose2, prob_at_least_two, LambdaMeasure};
use crate::rng::{self, Purpose, Rng};

/// Largest block count the samplers accept.
pub const MAX_BLOCKS: u64 = 1 << 40;

/// The merger drawn for the next event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Merger {
    /// Binary merger from the atom at zero.
    Pair,
    /// Multiple merger with mark `x` involving `k >= 2` blocks.
    Multi { x: f64, k: u64 },
}

impl Merger {
    pub fn size(&self) -> u64 {
        match self {
            Merger::Pair => 2,
            Merger::Multi { k, .. } => *k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergerSampler<'a> {
    measure: &'a LambdaMeasure,
    envelope: Option<(f64, f64)>,
}

impl<'a> MergerSampler<'a> {
    pub fn new(measure: &'a LambdaMeasure) -> Self {
        MergerSampler {
            measure,
            envelope: measure.density_envelope(),
        }
    }

    /// Waiting time until the next merger among `b` blocks and the merger
    /// itself; `None` when no merger can ever happen.
    pub fn next(&self, b: u64, rng: &mut Rng) -> Option<(f64, Merger)> {
        if b < 2 {
            return None;
        }
        let c = choose2(b);
        let pair_rate = self.measure.kingman_mass() * c;
        let (m, a, x0, mass_low, mass_high) = match self.envelope {
            Some((m, a)) => {
                let x0 = c.sqrt().recip().min(1.0);
                let low = c * m * x0.powf(1.0 - a) / (1.0 - a);
                let high = m * (x0.powf(-1.0 - a) - 1.0) / (1.0 + a);
                (m, a, x0, low, high)
            }
            None => (0.0, 0.0, 1.0, 0.0, 0.0),
        };
        let total = pair_rate + mass_low + mass_high;
        if !(total > 0.0) {
            return None;
        }
        let mut waited = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            waited += e / total;
            let pick = rng.random::<f64>() * total;
            if pick < pair_rate {
                return Some((waited, Merger::Pair));
            }
            let u: f64 = rng.random();
            let x = if pick < pair_rate + mass_low {
                x0 * u.powf(1.0 / (1.0 - a))
            } else {
                let top = x0.powf(-1.0 - a);
                (top - u * (top - 1.0)).powf(-1.0 / (1.0 + a))
            };
            if !(x > 0.0 && x <= 1.0) {
                continue;
            }
            let proposal = m * x.powf(-a) * (c * x * x).min(1.0);
            let target = self.measure.density_at(x) * prob_at_least_two(b, x);
            if rng.random::<f64>() * proposal < target {
                let k = conditional_binomial(b, x, rng);
                return Some((waited, Merger::Multi { x, k }));
            }
        }
    }

    /// Sorted 0-based indices of the blocks taking part in `merger`.
    pub fn participants(&self, b: u64, merger: Merger, rng: &mut Rng) -> Vec<usize> {
        let mut idx = index::sample(rng, b as usize, merger.size() as usize).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Binomial(b, x) conditioned on being at least 2.
fn conditional_binomial(b: u64, x: f64, rng: &mut Rng) -> u64 {
    let bf = b as f64;
    if x >= 1.0 {
        return b;
    }
    if bf * x < 2.0 {
        // invert the conditional pmf starting from k = 2
        let odds = x / (1.0 - x);
        let mut terms = Vec::with_capacity(16);
        let mut term = (choose2(b).ln() + 2.0 * x.ln() + (bf - 2.0) * (-x).ln_1p()).exp();
        let mut sum = 0.0;
        let mut k = 2u64;
        while k <= b && term > 1e-18 * sum {
            terms.push(term);
            sum += term;
            term *= (bf - k as f64) / (k as f64 + 1.0) * odds;
            k += 1;
        }
        let mut target = rng.random::<f64>() * sum;
        for (i, t) in terms.iter().enumerate() {
            if target < *t {
                return 2 + i as u64;
            }
            target -= t;
        }
        1 + terms.len() as u64
    } else {
        let dist = Binomial::new(b, x).expect("valid binomial parameters");
        loop {
            let k = dist.sample(rng);
            if k >= 2 {
                return k;
            }
        }
    }
}

/// Partition of `[n]` (1-based) with blocks sorted internally and ordered by
/// their least elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrderedPartition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl OrderedPartition {
    pub fn singletons(n: usize) -> Self {
        OrderedPartition {
            n,
            blocks: (1..=n).map(|i| vec![i]).collect(),
        }
    }

    pub fn new(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n + 1];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidArgument("partition has an empty block".into()));
            }
            block.sort_unstable();
            for &e in block.iter() {
                if e == 0 || e > n || seen[e] {
                    return Err(Error::InvalidArgument(format!(
                        "element {e} is out of range or repeated in a partition of [{n}]"
                    )));
                }
                seen[e] = true;
            }
        }
        if seen[1..].iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!("blocks do not cover [{n}]")));
        }
        blocks.sort_by_key(|b| b[0]);
        Ok(OrderedPartition { n, blocks })
    }

    /// Group `1..=labels.len()` by equal label.
    pub fn from_labels<T: Ord + Copy>(labels: &[T]) -> Self {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        // stable: ties stay in increasing element order
        order.sort_by_key(|&i| labels[i]);
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut last = None;
        for i in order {
            if last != Some(labels[i]) {
                blocks.push(Vec::new());
                last = Some(labels[i]);
            }
            blocks.last_mut().unwrap().push(i + 1);
        }
        blocks.sort_by_key(|b| b[0]);
        OrderedPartition {
            n: labels.len(),
            blocks,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Restriction to `[m]`.
    pub fn restrict(&self, m: usize) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.iter().copied().filter(|&e| e <= m).collect::<Vec<_>>())
            .filter(|b| !b.is_empty())
            .collect();
        OrderedPartition { n: m.min(self.n), blocks }
    }

    /// Merge the blocks at the given sorted 0-based positions.
    fn merge(&mut self, positions: &[usize]) {
        let first = positions[0];
        let mut merged = std::mem::take(&mut self.blocks[first]);
        for &p in &positions[1..] {
            merged.extend_from_slice(&self.blocks[p]);
        }
        merged.sort_unstable();
        self.blocks[first] = merged;
        for &p in positions[1..].iter().rev() {
            self.blocks.remove(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCountPath {
    /// `counts[0]` is the initial count; `counts[i + 1]` holds after `jump_times[i]`.
    pub counts: Vec<u64>,
    pub jump_times: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
}

impl BlockCountPath {
    /// Number of blocks at time `s`.
    pub fn count_at(&self, s: f64) -> u64 {
        let jumps = self.jump_times.partition_point(|&t| t <= s);
        self.counts[jumps]
    }
}

/// Block-counting chain from `n0` blocks, run until one block remains or
/// the horizon is reached.
pub fn sample_block_counting(measure: &LambdaMeasure, n0: u64, horizon: f64, seed: u64) -> Result<BlockCountPath> {
    if n0 < 2 {
        return Err(Error::InvalidArgument(format!("block counting needs n0 >= 2, got {n0}")));
    }
    if n0 > MAX_BLOCKS {
        return Err(Error::InvalidArgument(format!("n0 = {n0} exceeds the supported maximum {MAX_BLOCKS}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let sampler = MergerSampler::new(measure);
    let mut rng = rng::stream(seed, Purpose::Coalescent);
    let mut counts = vec![n0];
    let mut jump_times = Vec::new();
    let mut b = n0;
    let mut time = 0.0;
    while b > 1 {
        let Some((dt, merger)) = sampler.next(b, &mut rng) else { break };
        let next = time + dt;
        if next > horizon {
            break;
        }
        if next <= time {
            // exact floating-point tie with the previous jump; redraw
            continue;
        }
        time = next;
        b -= merger.size() - 1;
        counts.push(b);
        jump_times.push(time);
    }
    Ok(BlockCountPath {
        counts,
        jump_times,
        horizon,
        seed,
    })
}

/// `T_m`, the first time the count is at most `m`; infinity when the path
/// stops (at its horizon) above `m`.
pub fn hitting_time(path: &BlockCountPath, m: u64) -> f64 {
    if path.counts[0] <= m {
        return 0.0;
    }
    path.counts[1..]
        .iter()
        .position(|&c| c <= m)
        .map_or(f64::INFINITY, |i| path.jump_times[i])
}

/// Partition-valued chain started from `initial`, recorded after every
/// event (the first entry is the initial state at time 0).
pub fn sample_partition_chain(
    measure: &LambdaMeasure,
    initial: &OrderedPartition,
    horizon: f64,
    seed: u64,
) -> Vec<(f64, OrderedPartition)> {
    let sampler = MergerSampler::new(measure);
    let mut rng = rng::stream(seed, Purpose::Partition);
    let mut state = initial.clone();
    let mut out = vec![(0.0, state.clone())];
    let mut time = 0.0;
    loop {
        let b = state.block_count() as u64;
        let Some((dt, merger)) = sampler.next(b, &mut rng) else { break };
        if time + dt > horizon {
            break;
        }
        if time + dt <= time {
            continue;
        }
        time += dt;
        let positions = sampler.participants(b, merger, &mut rng);
        state.merge(&positions);
        out.push((time, state.clone()));
    }
    out
}
