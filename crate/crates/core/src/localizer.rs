//! Single-image and route-based localization over a georeferenced
//! embedding database with location connectivity.
//!
//! Route localization keeps a ranked set of candidate walks. Each step
//! extends every candidate to all neighbors of its last location, adds the
//! squared embedding distance of the new query, merges candidates that share
//! the same window suffix (keeping the lower score) and culls the ranking.
//!
//! Graph file: one JSON record per line,
//! `{"id":…,"x":…,"y":…,"yaw":…,"nbrs":[…]}`.

use std::cmp::Ordering;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

pub use crate::embedindex::single_image_localize;
use crate::embedindex::EmbeddingIndex;
use crate::error::{invalid, Error, Result};

/// Longest supported success window.
pub const MAX_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    #[serde(rename = "nbrs")]
    pub neighbors: Vec<u64>,
}

/// Validated location graph. Records are stored by ascending id and
/// addressed internally by their dense position.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityGraph {
    records: Vec<LocationRecord>,
    slots: FxHashMap<u64, usize>,
    adjacency: Vec<Vec<u32>>,
}

impl ConnectivityGraph {
    /// Checks that ids are unique, every neighbor resolves, there are no
    /// self-loops and adjacency is symmetric.
    pub fn new(mut records: Vec<LocationRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        let mut slots = FxHashMap::default();
        for (i, r) in records.iter().enumerate() {
            if slots.insert(r.id, i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate id {}", r.id)));
            }
        }
        let mut adjacency = Vec::with_capacity(records.len());
        for r in &records {
            let mut nbrs = Vec::with_capacity(r.neighbors.len());
            for n in &r.neighbors {
                if *n == r.id {
                    return Err(Error::InvalidGraph(format!("self-loop at {}", r.id)));
                }
                let slot = *slots.get(n).ok_or_else(|| {
                    Error::InvalidGraph(format!("location {} lists unknown neighbor {n}", r.id))
                })?;
                nbrs.push(slot as u32);
            }
            nbrs.sort_unstable();
            nbrs.dedup();
            adjacency.push(nbrs);
        }
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                if adjacency[j as usize].binary_search(&(i as u32)).is_err() {
                    return Err(Error::InvalidGraph(format!(
                        "edge {} -> {} is not symmetric",
                        records[i].id, records[j as usize].id
                    )));
                }
            }
        }
        Ok(Self {
            records,
            slots,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LocationRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&LocationRecord> {
        self.slots.get(&id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn are_adjacent(&self, a: u64, b: u64) -> bool {
        match (self.slots.get(&a), self.slots.get(&b)) {
            (Some(&i), Some(&j)) => self.adjacency[i].binary_search(&(j as u32)).is_ok(),
            _ => false,
        }
    }

    /// Neighbor ids of `id`, ascending.
    pub fn neighbors(&self, id: u64) -> Vec<u64> {
        self.slots
            .get(&id)
            .map(|&i| {
                self.adjacency[i]
                    .iter()
                    .map(|&j| self.records[j as usize].id)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn is_connected(&self) -> bool {
        if self.records.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.adjacency[i] {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    count += 1;
                    stack.push(j as usize);
                }
            }
        }
        count == self.len()
    }
}

/// Parses the line-oriented JSON graph format.
pub fn parse_graph(text: &str) -> Result<ConnectivityGraph> {
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LocationRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            what: "graph file",
            offset: start + e.column().saturating_sub(1) as u64,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    ConnectivityGraph::new(records)
}

pub fn format_graph(graph: &ConnectivityGraph) -> String {
    let mut s = String::new();
    for r in graph.records() {
        s.push_str(&serde_json::to_string(r).expect("location record serializes"));
        s.push('\n');
    }
    s
}

/// How candidate scores accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Sum over the whole walk.
    FullHistory,
    /// Sum over the last `window` steps only.
    WindowOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteConfig {
    pub cull_fraction: f64,
    /// Minimum number of candidates kept by culling; `None` disables culling.
    pub floor: Option<usize>,
    pub window: usize,
    pub score: ScoreMode,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            cull_fraction: 0.5,
            floor: Some(100),
            window: 5,
            score: ScoreMode::FullHistory,
        }
    }
}

impl RouteConfig {
    pub fn without_culling() -> Self {
        Self {
            floor: None,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > MAX_WINDOW {
            return Err(invalid(format!("window must lie in [1, {MAX_WINDOW}]")));
        }
        if !(0.0..1.0).contains(&self.cull_fraction) {
            return Err(invalid("cull fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Candidates kept when a ranking of `n` is culled against a population
    /// of `reference` candidates.
    fn keep_count(&self, n: usize, reference: usize) -> usize {
        match self.floor {
            None => n,
            Some(floor) => {
                if n <= floor {
                    return n;
                }
                let target = ((1.0 - self.cull_fraction) * reference as f64).ceil() as usize;
                target.max(floor).min(n)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    /// Dense graph slots, oldest first; `len` entries are valid.
    suffix: [u32; MAX_WINDOW],
    len: u8,
    score: f64,
}

impl Candidate {
    fn single(slot: u32, score: f64) -> Self {
        let mut suffix = [0; MAX_WINDOW];
        suffix[0] = slot;
        Self { suffix, len: 1, score }
    }

    fn path(&self) -> &[u32] {
        &self.suffix[..self.len as usize]
    }

    fn last(&self) -> u32 {
        self.suffix[self.len as usize - 1]
    }

    /// The part of the suffix that survives the next extension.
    fn tail(&self, window: usize) -> &[u32] {
        let p = self.path();
        if p.len() == window {
            &p[1..]
        } else {
            p
        }
    }

    fn pushed(&self, slot: u32, window: usize) -> Self {
        let mut next = *self;
        let len = self.len as usize;
        if len == window {
            next.suffix.copy_within(1..len, 0);
            next.suffix[len - 1] = slot;
        } else {
            next.suffix[len] = slot;
            next.len += 1;
        }
        next
    }
}

fn padded(s: &[u32]) -> [u32; MAX_WINDOW] {
    let mut k = [u32::MAX; MAX_WINDOW];
    k[..s.len()].copy_from_slice(s);
    k
}

fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| a.path().cmp(b.path()))
}

/// A candidate route as seen from outside: ids oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRoute {
    pub suffix: Vec<u64>,
    pub score: f64,
}

/// Database embeddings aligned with graph slots.
pub struct RouteDatabase<'a> {
    graph: &'a ConnectivityGraph,
    index: &'a EmbeddingIndex,
    /// Index row of each graph slot, if the location is in the database.
    rows: Vec<Option<usize>>,
}

impl<'a> RouteDatabase<'a> {
    pub fn new(graph: &'a ConnectivityGraph, index: &'a EmbeddingIndex) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut rows = vec![None; graph.len()];
        for (row, &id) in index.ids().iter().enumerate() {
            let slot = *graph.slots.get(&id).ok_or(Error::UnknownLocation(id))?;
            rows[slot] = Some(row);
        }
        Ok(Self { graph, index, rows })
    }

    fn distances(&self, q: ArrayView1<f64>) -> Result<Vec<f64>> {
        let d2 = self.index.squared_distances(q)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.map_or(f64::NAN, |i| d2[i]))
            .collect())
    }
}

/// Candidate set after some step. Candidates are unique by window suffix.
/// The set is kept ranked whenever it is culled; otherwise ranking happens
/// on access.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteState {
    pub step: usize,
    candidates: Vec<Candidate>,
    ranked: bool,
    /// Per-slot distances of the most recent steps, newest last; only kept
    /// for window-only scoring.
    history: Vec<Arc<Vec<f64>>>,
    ids: Arc<Vec<u64>>,
    pub config: RouteConfig,
}

impl RouteState {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn route(&self, c: &Candidate) -> CandidateRoute {
        CandidateRoute {
            suffix: c.path().iter().map(|&s| self.ids[s as usize]).collect(),
            score: c.score,
        }
    }

    fn ranked_candidates(&self) -> std::borrow::Cow<'_, [Candidate]> {
        if self.ranked {
            std::borrow::Cow::Borrowed(&self.candidates)
        } else {
            let mut v = self.candidates.clone();
            v.sort_unstable_by(rank_order);
            std::borrow::Cow::Owned(v)
        }
    }

    fn best_candidate(&self) -> Option<&Candidate> {
        if self.ranked {
            self.candidates.first()
        } else {
            self.candidates.iter().min_by(|a, b| rank_order(a, b))
        }
    }

    /// Ranked candidates, best first.
    pub fn candidates(&self) -> Vec<CandidateRoute> {
        self.ranked_candidates().iter().map(|c| self.route(c)).collect()
    }

    pub fn best(&self) -> Option<CandidateRoute> {
        self.best_candidate().map(|c| self.route(c))
    }

    /// Builds a state from explicit candidates (ids oldest first). The state
    /// carries no distance history, so window-only scoring treats steps
    /// before it as zero.
    pub fn from_candidates(
        graph: &ConnectivityGraph,
        step: usize,
        candidates: Vec<CandidateRoute>,
        config: RouteConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut out = Vec::with_capacity(candidates.len());
        for c in candidates {
            if c.suffix.is_empty() || c.suffix.len() > config.window {
                return Err(invalid("candidate suffix length outside [1, window]"));
            }
            let mut cand = Candidate {
                suffix: [0; MAX_WINDOW],
                len: c.suffix.len() as u8,
                score: c.score,
            };
            for (slot, id) in cand.suffix.iter_mut().zip(&c.suffix) {
                *slot = *graph.slots.get(id).ok_or(Error::UnknownLocation(*id))? as u32;
            }
            out.push(cand);
        }
        out.sort_by(rank_order);
        if out.windows(2).any(|w| w[0].path() == w[1].path()) {
            return Err(invalid("duplicate candidate suffix"));
        }
        Ok(Self {
            step,
            candidates: out,
            ranked: true,
            history: Vec::new(),
            ids: Arc::new(graph.records.iter().map(|r| r.id).collect()),
            config,
        })
    }
}

fn window_score(history: &[Arc<Vec<f64>>], path: &[u32]) -> f64 {
    let offset = history.len() as isize - path.len() as isize;
    path.iter()
        .enumerate()
        .filter_map(|(k, &s)| {
            let h = offset + k as isize;
            (h >= 0).then(|| history[h as usize][s as usize])
        })
        .sum()
}

/// One candidate per database location scored against the first query.
pub fn route_init(
    graph: &ConnectivityGraph,
    db: &EmbeddingIndex,
    q1: ArrayView1<f64>,
    config: RouteConfig,
) -> Result<RouteState> {
    route_init_with(&RouteDatabase::new(graph, db)?, q1, config)
}

pub fn route_init_with(db: &RouteDatabase, q1: ArrayView1<f64>, config: RouteConfig) -> Result<RouteState> {
    config.validate()?;
    let dist = db.distances(q1)?;
    let mut candidates: Vec<Candidate> = dist
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.is_nan())
        .map(|(slot, &d)| Candidate::single(slot as u32, d))
        .collect();
    candidates.sort_by(rank_order);
    let history = match config.score {
        ScoreMode::WindowOnly => vec![Arc::new(dist)],
        ScoreMode::FullHistory => Vec::new(),
    };
    Ok(RouteState {
        step: 1,
        candidates,
        ranked: true,
        history,
        ids: Arc::new(db.graph.records.iter().map(|r| r.id).collect()),
        config,
    })
}

/// Expands, rescores, deduplicates by window suffix and culls.
pub fn route_step(
    state: &RouteState,
    graph: &ConnectivityGraph,
    db: &EmbeddingIndex,
    q: ArrayView1<f64>,
) -> Result<RouteState> {
    route_step_with(state, &RouteDatabase::new(graph, db)?, q)
}

/// Candidates whose extensions survive deduplication. Extensions of two
/// candidates collide exactly when their tails agree, and within such a
/// group every extension of the best candidate beats the others.
fn group_representatives(cands: &[Candidate], window: usize) -> Vec<usize> {
    if cands.iter().all(|c| (c.len as usize) < window) {
        return (0..cands.len()).collect();
    }
    let mut best: FxHashMap<[u32; MAX_WINDOW], usize> = FxHashMap::default();
    best.reserve(cands.len());
    for (i, c) in cands.iter().enumerate() {
        best.entry(padded(c.tail(window)))
            .and_modify(|b| {
                if rank_order(c, &cands[*b]) == Ordering::Less {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    let mut reps: Vec<usize> = best.into_values().collect();
    reps.sort_unstable();
    reps
}

pub fn route_step_with(state: &RouteState, db: &RouteDatabase, q: ArrayView1<f64>) -> Result<RouteState> {
    let cfg = state.config;
    let w = cfg.window;
    let dist = Arc::new(db.distances(q)?);
    let history = match cfg.score {
        ScoreMode::WindowOnly => {
            let mut h = state.history.clone();
            h.push(Arc::clone(&dist));
            if h.len() > w {
                h.remove(0);
            }
            h
        }
        ScoreMode::FullHistory => Vec::new(),
    };
    let cands = &state.candidates;
    // with a window of one the tail is empty, so grouping cannot tell
    // sources apart and collisions are resolved after expansion instead
    let reps = if w >= 2 {
        group_representatives(cands, w)
    } else {
        (0..cands.len()).collect()
    };
    let mut next: Vec<Candidate> = Vec::with_capacity(reps.len() * 4);
    for &i in &reps {
        let c = &cands[i];
        for &n in &db.graph.adjacency[c.last() as usize] {
            let d = dist[n as usize];
            if d.is_nan() {
                continue;
            }
            let mut e = c.pushed(n, w);
            e.score = match cfg.score {
                ScoreMode::FullHistory => c.score + d,
                ScoreMode::WindowOnly => window_score(&history, e.path()),
            };
            next.push(e);
        }
    }
    if w == 1 {
        next.sort_unstable_by(|a, b| a.path().cmp(b.path()).then_with(|| rank_order(a, b)));
        next.dedup_by(|later, earlier| later.path() == earlier.path());
    }
    if next.is_empty() {
        return Err(Error::GraphDisconnected);
    }
    let keep = cfg.keep_count(next.len(), cands.len());
    let ranked = keep < next.len();
    if ranked {
        next.select_nth_unstable_by(keep - 1, rank_order);
        next.truncate(keep);
        next.sort_unstable_by(rank_order);
    }
    Ok(RouteState {
        step: state.step + 1,
        candidates: next,
        ranked,
        history,
        ids: Arc::clone(&state.ids),
        config: cfg,
    })
}

/// Keeps the best `ceil((1 - cull_fraction) * n)` candidates, never fewer
/// than the floor.
pub fn cull(state: &RouteState) -> RouteState {
    let n = state.candidates.len();
    let keep = state.config.keep_count(n, n);
    let mut candidates = state.ranked_candidates().into_owned();
    candidates.truncate(keep);
    RouteState {
        candidates,
        ranked: true,
        ..state.clone()
    }
}

/// True iff the rank-1 candidate's window suffix equals the ground truth at
/// steps `t - window + 1 ..= t` (`truth` is indexed from step 1).
pub fn route_success_at(state: &RouteState, truth: &[u64], t: usize) -> bool {
    let w = state.config.window;
    if t < w || t != state.step || truth.len() < t {
        return false;
    }
    match state.best_candidate() {
        Some(best) if best.len as usize == w => best
            .path()
            .iter()
            .zip(&truth[t - w..t])
            .all(|(&s, &id)| state.ids[s as usize] == id),
        _ => false,
    }
}

/// Query embeddings along a walk with the true location of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySequence {
    /// `L x d`, one row per step.
    pub queries: Array2<f64>,
    pub truth: Vec<u64>,
}

impl QuerySequence {
    pub fn new(queries: Array2<f64>, truth: Vec<u64>) -> Result<Self> {
        if queries.nrows() != truth.len() {
            return Err(Error::DimensionMismatch {
                context: "route queries",
                expected: truth.len(),
                actual: queries.nrows(),
            });
        }
        Ok(Self { queries, truth })
    }

    /// Takes each step's query from the row of `queries` whose id matches.
    pub fn from_walk(walk: &[u64], queries: &EmbeddingIndex) -> Result<Self> {
        let rows: FxHashMap<u64, usize> = queries
            .ids()
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let mut m = Array2::zeros((walk.len(), queries.dim()));
        for (mut out, id) in m.rows_mut().into_iter().zip(walk) {
            let r = *rows.get(id).ok_or(Error::UnknownLocation(*id))?;
            out.assign(&queries.row(r));
        }
        Self::new(m, walk.to_vec())
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn is_walk(&self, graph: &ConnectivityGraph) -> bool {
        self.truth.windows(2).all(|w| graph.are_adjacent(w[0], w[1]))
    }
}

/// Per-step success of one route, `result[t - 1]` for step `t`.
pub fn route_trace(db: &RouteDatabase, route: &QuerySequence, cfg: RouteConfig) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(route.len());
    if route.is_empty() {
        return Ok(out);
    }
    let mut state = route_init_with(db, route.queries.row(0), cfg)?;
    out.push(route_success_at(&state, &route.truth, 1));
    for t in 2..=route.len() {
        state = route_step_with(&state, db, route.queries.row(t - 1))?;
        out.push(route_success_at(&state, &route.truth, t));
    }
    Ok(out)
}

/// Fraction of routes localized at each step `t = 1..=L`. Success is
/// evaluated independently per step, so the curve need not be monotone.
pub fn evaluate_routes(
    graph: &ConnectivityGraph,
    db: &EmbeddingIndex,
    routes: &[QuerySequence],
    cfg: RouteConfig,
) -> Result<Vec<f64>> {
    Ok(success_curve(&evaluate_route_traces(graph, db, routes, cfg)?))
}

pub fn evaluate_route_traces(
    graph: &ConnectivityGraph,
    db: &EmbeddingIndex,
    routes: &[QuerySequence],
    cfg: RouteConfig,
) -> Result<Vec<Vec<bool>>> {
    cfg.validate()?;
    let rdb = RouteDatabase::new(graph, db)?;
    for r in routes {
        if !r.is_walk(graph) {
            return Err(invalid("route truth is not a walk on the graph"));
        }
    }
    routes
        .par_iter()
        .map(|r| route_trace(&rdb, r, cfg))
        .collect()
}

pub fn success_curve(traces: &[Vec<bool>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    let n = traces.len().max(1) as f64;
    (0..len)
        .map(|t| traces.iter().filter(|tr| tr.get(t) == Some(&true)).count() as f64 / n)
        .collect()
}

/// `step,success_rate` with a header row.
pub fn success_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("step,success_rate\n");
    for (i, r) in curve.iter().enumerate() {
        s.push_str(&format!("{},{r:.6}\n", i + 1));
    }
    s
}
