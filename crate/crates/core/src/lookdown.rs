//! The n-level lookdown particle system with Brownian motion in `R^d`.
//!
//! Birth events are generated first, as an [`EventLog`], from the same
//! merger sampler as the coalescent with `b = n`. Positions are then pushed
//! through the log. Each particle carries its own clock and is advanced only
//! when it is copied or when a checkpoint is recorded, so an event costs
//! O(n) memory moves and O(d) Gaussian draws instead of O(n d) draws.

use std::collections::BTreeMap;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::coalescent::{Merger, MergerSampler};
use crate::error::{Error, Result};
use crate::measure::LambdaMeasure;
use crate::rng::{self, Purpose, Rng};

/// Levels are 1-based.
pub type Level = u32;

/// Default cap on stored checkpoint positions, in bytes.
pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BirthKind {
    /// Level `j` looks down at level `i < j`.
    Pair { i: Level, j: Level },
    /// All levels in `participants` (sorted) adopt the type of the lowest one.
    Multi { x: f64, participants: Vec<Level> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirthEvent {
    pub time: f64,
    pub kind: BirthKind,
}

/// Borrowed view of one logged event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventRef<'a> {
    Pair { i: Level, j: Level },
    Multi { x: f64, participants: &'a [Level] },
}

impl EventRef<'_> {
    /// Level whose pre-event type lands on level `k` after the event. Read
    /// backwards this is the ancestor map.
    #[inline]
    pub fn source_level(&self, k: Level) -> Level {
        match *self {
            EventRef::Pair { i, j } => {
                if k < j {
                    k
                } else if k == j {
                    i
                } else {
                    k - 1
                }
            }
            EventRef::Multi { participants, .. } => {
                let j = participants[0];
                if k <= j {
                    return k;
                }
                // participants below k; k itself is in J iff the next one equals k
                let below = participants.partition_point(|&m| m < k);
                if participants.get(below) == Some(&k) {
                    j
                } else {
                    k - (below as Level - 1)
                }
            }
        }
    }

    pub fn to_kind(&self) -> BirthKind {
        match *self {
            EventRef::Pair { i, j } => BirthKind::Pair { i, j },
            EventRef::Multi { x, participants } => BirthKind::Multi {
                x,
                participants: participants.to_vec(),
            },
        }
    }
}

impl BirthKind {
    pub fn as_ref(&self) -> EventRef<'_> {
        match self {
            BirthKind::Pair { i, j } => EventRef::Pair { i: *i, j: *j },
            BirthKind::Multi { x, participants } => EventRef::Multi {
                x: *x,
                participants,
            },
        }
    }

    /// Check the event against `n` levels.
    pub fn validate(&self, n: Level) -> Result<()> {
        match self {
            BirthKind::Pair { i, j } => {
                if !(1 <= *i && i < j && *j <= n) {
                    return Err(Error::MalformedEvent(format!("pair({i},{j}) with n = {n}")));
                }
            }
            BirthKind::Multi { x, participants } => {
                if !(*x > 0.0 && *x <= 1.0) {
                    return Err(Error::MalformedEvent(format!("multi mark x = {x} outside (0,1]")));
                }
                if participants.len() < 2
                    || participants[0] < 1
                    || participants.windows(2).any(|w| w[0] >= w[1])
                    || *participants.last().unwrap() > n
                {
                    return Err(Error::MalformedEvent(format!("multi participants {participants:?} with n = {n}")));
                }
            }
        }
        Ok(())
    }
}

/// Forward relabeling: `new[k] = old[source_level(k)]`.
pub fn apply_event<T: Clone>(state: &[T], event: &BirthKind) -> Result<Vec<T>> {
    event.validate(state.len() as Level)?;
    let e = event.as_ref();
    Ok((1..=state.len() as Level)
        .map(|k| state[e.source_level(k) as usize - 1].clone())
        .collect())
}

/// Compact, strictly time-ordered birth-event log for `n` levels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    n: Level,
    times: Vec<f64>,
    // (i, j) for a pair; (0, index into multi_x) for a multiple birth
    heads: Vec<(u32, u32)>,
    multi_x: Vec<f64>,
    multi_start: Vec<u32>,
    members: Vec<Level>,
}

impl EventLog {
    pub fn new(n: Level) -> Self {
        EventLog {
            n,
            multi_start: vec![0],
            ..Default::default()
        }
    }

    pub fn n(&self) -> Level {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, idx: usize) -> f64 {
        self.times[idx]
    }

    pub fn get(&self, idx: usize) -> EventRef<'_> {
        let (a, b) = self.heads[idx];
        if a > 0 {
            EventRef::Pair { i: a, j: b }
        } else {
            let m = b as usize;
            let (lo, hi) = (self.multi_start[m] as usize, self.multi_start[m + 1] as usize);
            EventRef::Multi {
                x: self.multi_x[m],
                participants: &self.members[lo..hi],
            }
        }
    }

    pub fn event(&self, idx: usize) -> BirthEvent {
        BirthEvent {
            time: self.times[idx],
            kind: self.get(idx).to_kind(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, EventRef<'_>)> + '_ {
        (0..self.len()).map(move |i| (self.times[i], self.get(i)))
    }

    /// Append an event; times must increase strictly.
    pub fn push(&mut self, event: &BirthEvent) -> Result<()> {
        event.kind.validate(self.n)?;
        if !(event.time > 0.0) || self.times.last().is_some_and(|&t| event.time <= t) {
            return Err(Error::MalformedEvent(format!(
                "event time {} is not after the previous event",
                event.time
            )));
        }
        self.push_unchecked(event.time, event.kind.as_ref());
        Ok(())
    }

    fn push_unchecked(&mut self, time: f64, e: EventRef<'_>) {
        self.times.push(time);
        match e {
            EventRef::Pair { i, j } => self.heads.push((i, j)),
            EventRef::Multi { x, participants } => {
                self.heads.push((0, self.multi_x.len() as u32));
                self.multi_x.push(x);
                self.members.extend_from_slice(participants);
                self.multi_start.push(self.members.len() as u32);
            }
        }
    }

    /// Index range of events with `lo < time <= hi`.
    pub fn range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.times.partition_point(|&t| t <= lo);
        let b = self.times.partition_point(|&t| t <= hi);
        a..b.max(a)
    }

    /// The log seen by the first `n` levels: pair births above `n` vanish,
    /// multiple births keep their participants in `[n]` and vanish when fewer
    /// than two remain.
    pub fn restrict(&self, n: Level) -> EventLog {
        let mut out = EventLog::new(n.min(self.n));
        let mut buf = Vec::new();
        for (t, e) in self.iter() {
            match e {
                EventRef::Pair { i, j } => {
                    if j <= n {
                        out.push_unchecked(t, EventRef::Pair { i, j });
                    }
                }
                EventRef::Multi { x, participants } => {
                    buf.clear();
                    buf.extend(participants.iter().copied().filter(|&l| l <= n));
                    if buf.len() >= 2 {
                        out.push_unchecked(t, EventRef::Multi { x, participants: &buf });
                    }
                }
            }
        }
        out
    }
}

/// Birth events for `n` levels on `(0, horizon]`. An event landing exactly
/// on one of the (sorted) `avoid` times is redrawn.
pub fn generate_events(measure: &LambdaMeasure, n: Level, horizon: f64, avoid: &[f64], seed: u64) -> Result<EventLog> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("lookdown needs n >= 2, got {n}")));
    }
    let sampler = MergerSampler::new(measure);
    let mut rng = rng::stream(seed, Purpose::Events);
    let mut log = EventLog::new(n);
    let mut time = 0.0;
    let mut buf: Vec<Level> = Vec::new();
    while let Some((dt, merger)) = sampler.next(n as u64, &mut rng) {
        let next = time + dt;
        if next > horizon {
            break;
        }
        if next <= time || avoid.binary_search_by(|c| c.total_cmp(&next)).is_ok() {
            continue;
        }
        time = next;
        buf.clear();
        buf.extend(
            index::sample(&mut rng, n as usize, merger.size() as usize)
                .into_iter()
                .map(|l| l as Level + 1),
        );
        buf.sort_unstable();
        let e = match merger {
            Merger::Pair => EventRef::Pair { i: buf[0], j: buf[1] },
            Merger::Multi { x, .. } => EventRef::Multi { x, participants: &buf },
        };
        log.push_unchecked(time, e);
    }
    Ok(log)
}

/// Initial positions.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Every level at this point; its length fixes `d`.
    Point(Vec<f64>),
    /// I.i.d. standard normal coordinates.
    Gaussian,
    /// `n * d` coordinates, level-major.
    Explicit(Vec<f64>),
}

impl Init {
    /// `point:<x1,..,xd>` (a single coordinate is repeated `d` times) or
    /// `gaussian`.
    pub fn parse(spec: &str, d: usize) -> Result<Init> {
        if spec.trim() == "gaussian" {
            return Ok(Init::Gaussian);
        }
        let Some(coords) = spec.strip_prefix("point:") else {
            return Err(Error::Config(format!("unknown init {spec:?}; use point:<x,..> or gaussian")));
        };
        let mut p = coords
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad coordinate {s:?} in {spec:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if p.len() == 1 && d > 1 {
            p = vec![p[0]; d];
        }
        if p.len() != d {
            return Err(Error::Config(format!("{spec:?} has {} coordinates, expected {d}", p.len())));
        }
        Ok(Init::Point(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub n: Level,
    pub d: usize,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    pub init: Init,
    pub memory_budget: u64,
}

impl Setup {
    pub fn new(n: Level, d: usize, horizon: f64, checkpoints: Vec<f64>) -> Self {
        Setup {
            n,
            d,
            horizon,
            checkpoints,
            init: Init::Point(vec![0.0; d]),
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// Sorted, deduplicated checkpoints with 0 prepended when absent.
    fn normalized_checkpoints(&self) -> Result<Vec<f64>> {
        let mut cps = self.checkpoints.clone();
        if cps.iter().any(|&c| !(c >= 0.0 && c <= self.horizon)) {
            return Err(Error::InvalidArgument(format!(
                "checkpoints must lie in [0, {}]",
                self.horizon
            )));
        }
        cps.push(0.0);
        cps.sort_by(f64::total_cmp);
        cps.dedup();
        Ok(cps)
    }

    fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("lookdown needs n >= 2, got {}", self.n)));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("spatial dimension must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        match &self.init {
            Init::Point(p) if p.len() != self.d => Err(Error::InvalidArgument(format!(
                "initial point has {} coordinates, expected {}",
                p.len(),
                self.d
            ))),
            Init::Explicit(v) if v.len() != self.n as usize * self.d => Err(Error::InvalidArgument(format!(
                "{} initial coordinates given, expected n * d = {}",
                v.len(),
                self.n as usize * self.d
            ))),
            _ => Ok(()),
        }
    }
}

/// One simulated lookdown path.
#[derive(Debug, Clone, PartialEq)]
pub struct LookdownPath {
    pub n: Level,
    pub d: usize,
    pub horizon: f64,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
    pub events: EventLog,
    /// Checkpoint-major, then level, then coordinate.
    positions: Vec<f64>,
    /// Pre-event states for checkpoints that coincide with an event time.
    pre_event: BTreeMap<usize, Vec<f64>>,
}

/// Events and motion from one seed.
pub fn simulate(measure: &LambdaMeasure, setup: &Setup, seed: u64) -> Result<LookdownPath> {
    setup.check()?;
    let cps = setup.normalized_checkpoints()?;
    check_budget(setup, cps.len())?;
    let events = generate_events(measure, setup.n, setup.horizon, &cps, seed)?;
    simulate_with_events(setup, events, seed)
}

fn check_budget(setup: &Setup, checkpoints: usize) -> Result<()> {
    let needed = 8 * setup.n as u64 * setup.d as u64 * checkpoints as u64;
    if needed > setup.memory_budget {
        return Err(Error::Budget {
            what: format!("{} levels x {} checkpoints x {} dims", setup.n, checkpoints, setup.d),
            needed,
            budget: setup.memory_budget,
        });
    }
    Ok(())
}

/// Push Brownian positions through a given event log.
pub fn simulate_with_events(setup: &Setup, events: EventLog, seed: u64) -> Result<LookdownPath> {
    setup.check()?;
    if events.n() != setup.n {
        return Err(Error::InvalidArgument(format!(
            "event log is for {} levels, setup has {}",
            events.n(),
            setup.n
        )));
    }
    if events.times().last().is_some_and(|&t| t > setup.horizon) {
        return Err(Error::InvalidArgument("event log extends past the horizon".into()));
    }
    let cps = setup.normalized_checkpoints()?;
    check_budget(setup, cps.len())?;
    let (n, d) = (setup.n as usize, setup.d);

    let mut init_rng = rng::stream(seed, Purpose::Init);
    let mut motion = Motion {
        d,
        pos: match &setup.init {
            Init::Point(p) => p.repeat(n),
            Init::Explicit(v) => v.clone(),
            Init::Gaussian => (0..n * d).map(|_| StandardNormal.sample(&mut init_rng)).collect(),
        },
        clock: vec![0.0; n],
        rng: rng::stream(seed, Purpose::Motion),
    };
    // level k (0-based) is occupied by particle slot[k]
    let mut slot: Vec<u32> = (0..n as u32).collect();
    let mut scratch: Vec<u32> = Vec::with_capacity(n);

    let mut positions = Vec::with_capacity(cps.len() * n * d);
    let mut pre_event = BTreeMap::new();
    let mut next_cp = 0;

    for (time, e) in events.iter() {
        while next_cp < cps.len() && cps[next_cp] < time {
            motion.record(&slot, cps[next_cp], &mut positions);
            next_cp += 1;
        }
        let coincident = next_cp < cps.len() && cps[next_cp] == time;
        if coincident {
            let mut pre = Vec::with_capacity(n * d);
            motion.record(&slot, time, &mut pre);
            pre_event.insert(next_cp, pre);
        }
        match e {
            EventRef::Pair { i, j } => {
                let parent = slot[i as usize - 1];
                motion.advance(parent, time);
                let child = slot.pop().unwrap();
                slot.insert(j as usize - 1, child);
                motion.copy(parent, child, time);
            }
            EventRef::Multi { participants, .. } => {
                let j = participants[0] as usize;
                let parent = slot[j - 1];
                motion.advance(parent, time);
                let born = participants.len() - 1;
                scratch.clear();
                scratch.extend_from_slice(&slot[..j]);
                let mut keep = j;
                let mut dead = n - born;
                let mut next_member = 1;
                for k in j + 1..=n {
                    if next_member < participants.len() && participants[next_member] as usize == k {
                        let child = slot[dead];
                        dead += 1;
                        next_member += 1;
                        motion.copy(parent, child, time);
                        scratch.push(child);
                    } else {
                        scratch.push(slot[keep]);
                        keep += 1;
                    }
                }
                std::mem::swap(&mut slot, &mut scratch);
            }
        }
        if coincident {
            motion.record(&slot, time, &mut positions);
            next_cp += 1;
        }
    }
    while next_cp < cps.len() {
        motion.record(&slot, cps[next_cp], &mut positions);
        next_cp += 1;
    }

    Ok(LookdownPath {
        n: setup.n,
        d,
        horizon: setup.horizon,
        seed,
        checkpoints: cps,
        events,
        positions,
        pre_event,
    })
}

struct Motion {
    d: usize,
    pos: Vec<f64>,
    clock: Vec<f64>,
    rng: Rng,
}

impl Motion {
    fn advance(&mut self, p: u32, t: f64) {
        let p = p as usize;
        let dt = t - self.clock[p];
        if dt > 0.0 {
            let sd = dt.sqrt();
            for c in &mut self.pos[p * self.d..(p + 1) * self.d] {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *c += sd * z;
            }
            self.clock[p] = t;
        }
    }

    fn copy(&mut self, from: u32, to: u32, t: f64) {
        let (from, to, d) = (from as usize, to as usize, self.d);
        self.pos.copy_within(from * d..(from + 1) * d, to * d);
        self.clock[to] = t;
    }

    fn record(&mut self, slot: &[u32], t: f64, out: &mut Vec<f64>) {
        for &p in slot {
            self.advance(p, t);
            let p = p as usize;
            out.extend_from_slice(&self.pos[p * self.d..(p + 1) * self.d]);
        }
    }
}

impl LookdownPath {
    /// Reassemble a path from stored parts. `positions` is checkpoint-major.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        n: Level,
        d: usize,
        horizon: f64,
        seed: u64,
        checkpoints: Vec<f64>,
        events: EventLog,
        positions: Vec<f64>,
        pre_event: BTreeMap<usize, Vec<f64>>,
    ) -> Result<Self> {
        let stride = n as usize * d;
        if positions.len() != checkpoints.len() * stride
            || pre_event.iter().any(|(&k, v)| k >= checkpoints.len() || v.len() != stride)
        {
            return Err(Error::InvalidArgument("stored positions do not match n, d and the checkpoints".into()));
        }
        if checkpoints.first() != Some(&0.0) || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("stored checkpoints must start at 0 and increase".into()));
        }
        if events.n() != n {
            return Err(Error::InvalidArgument("stored events are for a different n".into()));
        }
        Ok(LookdownPath {
            n,
            d,
            horizon,
            seed,
            checkpoints,
            events,
            positions,
            pre_event,
        })
    }

    /// Checkpoint indices whose pre-event state differs from the stored one.
    pub fn coincident_checkpoints(&self) -> impl Iterator<Item = usize> + '_ {
        self.pre_event.keys().copied()
    }

    /// Index of a registered checkpoint. Matching allows a relative slack of
    /// 1e-12 so that times read back from text still resolve.
    pub fn checkpoint_index(&self, t: f64) -> Result<usize> {
        let i = self.checkpoints.partition_point(|&c| c < t);
        for k in [i.wrapping_sub(1), i] {
            if let Some(&c) = self.checkpoints.get(k) {
                if c == t || (c - t).abs() <= 1e-12 * t.abs().max(c.abs()) {
                    return Ok(k);
                }
            }
        }
        Err(Error::UnregisteredCheckpoint(t))
    }

    /// All `n` positions at checkpoint index `ci`, level-major.
    pub fn positions_at(&self, ci: usize) -> &[f64] {
        let stride = self.n as usize * self.d;
        &self.positions[ci * stride..(ci + 1) * stride]
    }

    /// Left-limit positions `X(s-)` at checkpoint index `ci`.
    pub fn left_positions_at(&self, ci: usize) -> &[f64] {
        match self.pre_event.get(&ci) {
            Some(pre) => pre,
            None => self.positions_at(ci),
        }
    }

    pub fn position(&self, ci: usize, level: Level) -> &[f64] {
        let k = level as usize - 1;
        &self.positions_at(ci)[k * self.d..(k + 1) * self.d]
    }

    pub fn initial_positions(&self) -> &[f64] {
        self.positions_at(0)
    }

    /// `X^{(m)}(t)`: weight `1/m` on each of the first `m` positions.
    pub fn empirical_measure(&self, t: f64, m: Level) -> Result<(f64, &[f64])> {
        if m < 1 || m > self.n {
            return Err(Error::InvalidArgument(format!("m = {m} must lie in [1, {}]", self.n)));
        }
        let ci = self.checkpoint_index(t)?;
        Ok((1.0 / m as f64, &self.positions_at(ci)[..m as usize * self.d]))
    }
}

/// Parse `dyadic:<k>` (multiples of `2^-k` up to the horizon) or
/// `list:<t1,t2,...>`.
pub fn parse_checkpoints(spec: &str, horizon: f64) -> Result<Vec<f64>> {
    if let Some(k) = spec.strip_prefix("dyadic:") {
        let k: u32 = k
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad dyadic level in {spec:?}")))?;
        if k > 30 {
            return Err(Error::Config(format!("dyadic level {k} is too fine")));
        }
        Ok(dyadic_grid(k, horizon))
    } else if let Some(list) = spec.strip_prefix("list:") {
        list.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad checkpoint {s:?}")))
            })
            .collect()
    } else {
        Err(Error::Config(format!("unknown checkpoint spec {spec:?}; use dyadic:<k> or list:<t,...>")))
    }
}

/// `j 2^-k` for all `j` with `j 2^-k <= horizon`.
pub fn dyadic_grid(k: u32, horizon: f64) -> Vec<f64> {
    let step = (-(k as f64)).exp2();
    (0u64..)
        .map(|j| j as f64 * step)
        .take_while(|&t| t <= horizon)
        .collect()
}
