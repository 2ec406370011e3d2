//! Per-document label assignment.
//!
//! `infer_local` is the independent per-edge argmax. `infer_global`
//! maximizes the summed per-edge scores subject to uniqueness, transitivity
//! (via the composition table) and clamped edges, using depth-first branch
//! and bound with triangle-consistency propagation at every node.
//! `brute_force` is the exhaustive oracle the solver is verified against.

use crate::algebra::{CompositionTable, LabelSet, RelLabel, ALL_LABELS, LABEL_COUNT};
use crate::corpus::{self, candidate_edges, DomainMap, Document, EdgeKey};
use crate::learner::{score, ScoreVector, WeightMatrix};
use crate::{Result, TempRelError};
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

/// Default cap on branch-and-bound node expansions.
pub const DEFAULT_NODE_CAP: u64 = 10_000_000;

#[derive(Debug, Clone)]
pub struct InferenceProblem<'a> {
    /// Candidate edges in canonical (sorted) order.
    pub edges: Vec<EdgeKey>,
    pub scores: BTreeMap<EdgeKey, ScoreVector>,
    /// Annotated edges fixed during inference.
    pub clamps: BTreeMap<EdgeKey, RelLabel>,
    pub table: &'a CompositionTable,
    pub node_cap: u64,
}

impl<'a> InferenceProblem<'a> {
    pub fn new(
        mut edges: Vec<EdgeKey>,
        scores: BTreeMap<EdgeKey, ScoreVector>,
        clamps: BTreeMap<EdgeKey, RelLabel>,
        table: &'a CompositionTable,
    ) -> InferenceProblem<'a> {
        edges.sort_unstable();
        edges.dedup();
        InferenceProblem {
            edges,
            scores,
            clamps,
            table,
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    /// Clamped singletons, full domains elsewhere.
    pub fn initial_domains(&self) -> DomainMap {
        self.edges
            .iter()
            .map(|k| {
                let d = match self.clamps.get(k) {
                    Some(&l) => LabelSet::singleton(l),
                    None => LabelSet::FULL,
                };
                (*k, d)
            })
            .collect()
    }

    fn objective_of(&self, labels: &BTreeMap<EdgeKey, RelLabel>) -> f64 {
        // Summation order is fixed by edge order so equal assignments give
        // bit-equal objectives across solvers.
        self.edges
            .iter()
            .map(|k| self.scores[k].get(labels[k]))
            .sum()
    }
}

/// Builds an inference problem from a document and a finalized model.
///
/// With `use_clamps`, annotated edges are fixed to their gold labels.
pub fn problem_for_document<'a>(
    doc: &Document,
    model: &WeightMatrix,
    table: &'a CompositionTable,
    use_clamps: bool,
) -> InferenceProblem<'a> {
    let edges = candidate_edges(doc);
    let mut scores = BTreeMap::new();
    let mut clamps = BTreeMap::new();
    for k in &edges {
        let rec = doc.edges.get(k);
        let fv = crate::learner::FeatureVector::indicators(
            rec.map(|r| r.features.clone()).unwrap_or_default(),
        );
        scores.insert(*k, score(model, &fv));
        if use_clamps {
            if let Some(r) = rec {
                if r.annotated {
                    clamps.insert(*k, r.label.expect("annotated edge has label"));
                }
            }
        }
    }
    InferenceProblem::new(edges, scores, clamps, table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: BTreeMap<EdgeKey, RelLabel>,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SolverStats {
    pub nodes: u64,
    pub propagation_rounds: u64,
    pub proven_optimal: bool,
    pub wall_secs: f64,
}

/// Every triangle of the assignment is jointly consistent under the table.
pub fn assignment_consistent(
    labels: &BTreeMap<EdgeKey, RelLabel>,
    edges: &[EdgeKey],
    table: &CompositionTable,
) -> bool {
    corpus::triangles(edges).into_iter().all(|(i, j, k)| {
        table.triangle_consistent(
            labels[&EdgeKey { src: i, dst: j }],
            labels[&EdgeKey { src: j, dst: k }],
            labels[&EdgeKey { src: i, dst: k }],
        )
    })
}

/// Independent per-edge argmax. Clamped edges keep their clamps; no
/// transitivity enforcement.
pub fn infer_local(p: &InferenceProblem) -> Assignment {
    let mut labels = BTreeMap::new();
    for k in &p.edges {
        let l = match p.clamps.get(k) {
            Some(&c) => c,
            None => p.scores[k].argmax(),
        };
        labels.insert(*k, l);
    }
    let objective = p.objective_of(&labels);
    Assignment { labels, objective }
}

/// Exhaustive oracle: enumerates all 6^k free-edge assignments in tie-rank
/// label order over lexicographic edge order and returns the feasible
/// maximizer (first found among ties, i.e. the tie-rank-smallest).
pub fn brute_force(p: &InferenceProblem) -> Result<Assignment> {
    let free: Vec<EdgeKey> = p
        .edges
        .iter()
        .copied()
        .filter(|k| !p.clamps.contains_key(k))
        .collect();
    if free.len() > 7 {
        return Err(TempRelError::TooManyFreeEdges(free.len()));
    }
    let tris = corpus::triangles(&p.edges);
    let mut labels: BTreeMap<EdgeKey, RelLabel> = p.clamps.clone();
    let mut best: Option<Assignment> = None;
    let mut idx = vec![0usize; free.len()];
    loop {
        for (n, k) in free.iter().enumerate() {
            labels.insert(*k, ALL_LABELS[LABEL_COUNT - 1 - idx[n]]);
        }
        let feasible = tris.iter().all(|&(i, j, k)| {
            p.table.triangle_consistent(
                labels[&EdgeKey { src: i, dst: j }],
                labels[&EdgeKey { src: j, dst: k }],
                labels[&EdgeKey { src: i, dst: k }],
            )
        });
        if feasible {
            let objective = p.objective_of(&labels);
            if best.as_ref().map_or(true, |b| objective > b.objective) {
                best = Some(Assignment {
                    labels: labels.clone(),
                    objective,
                });
            }
        }
        // Odometer: last free edge varies fastest.
        let mut pos = free.len();
        loop {
            if pos == 0 {
                return best.ok_or_else(|| {
                    TempRelError::Inconsistent(
                        p.clamps.keys().map(|k| (k.src, k.dst)).collect(),
                    )
                });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < ALL_LABELS.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

struct SearchState<'a, 'b> {
    p: &'b InferenceProblem<'a>,
    tris: Vec<(u32, u32, u32)>,
    tri_edges: Vec<[EdgeKey; 3]>,
    tris_of_edge: BTreeMap<EdgeKey, Vec<usize>>,
    best: Option<Assignment>,
    stats: SolverStats,
}

impl SearchState<'_, '_> {
    /// Sum of per-edge maxima over the current domains: a cheap upper bound
    /// for every feasible completion.
    fn naive_bound(&self, domains: &DomainMap) -> f64 {
        self.p
            .edges
            .iter()
            .map(|k| {
                let s = &self.p.scores[k];
                domains[k]
                    .iter()
                    .map(|l| s.get(l))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }

    /// Per-edge maxima tightened by the score each triangle provably has to
    /// give up for joint consistency, summed over an edge-disjoint set of
    /// triangles. Still an upper bound for every feasible completion.
    fn bound(&self, domains: &DomainMap) -> f64 {
        let mut edge_max: BTreeMap<EdgeKey, f64> = BTreeMap::new();
        let mut naive = 0.0;
        for k in &self.p.edges {
            let s = &self.p.scores[k];
            let m = domains[k]
                .iter()
                .map(|l| s.get(l))
                .fold(f64::NEG_INFINITY, f64::max);
            edge_max.insert(*k, m);
            naive += m;
        }

        let mut deltas: Vec<(f64, usize)> = Vec::new();
        for (t, keys) in self.tri_edges.iter().enumerate() {
            let (d1, d2, d3) = (&domains[&keys[0]], &domains[&keys[1]], &domains[&keys[2]]);
            if d1.len() == 1 && d2.len() == 1 && d3.len() == 1 {
                continue;
            }
            let (s1, s2, s3) = (
                &self.p.scores[&keys[0]],
                &self.p.scores[&keys[1]],
                &self.p.scores[&keys[2]],
            );
            let separate = edge_max[&keys[0]] + edge_max[&keys[1]] + edge_max[&keys[2]];
            let mut joint = f64::NEG_INFINITY;
            for l1 in d1.iter() {
                for l2 in d2.iter() {
                    let partial = s1.get(l1) + s2.get(l2);
                    for l3 in d3.iter() {
                        if partial + s3.get(l3) > joint
                            && self.p.table.triangle_consistent(l1, l2, l3)
                        {
                            joint = partial + s3.get(l3);
                        }
                    }
                }
            }
            if joint < separate {
                deltas.push((separate - joint, t));
            }
        }
        deltas.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut used: BTreeMap<EdgeKey, ()> = BTreeMap::new();
        let mut tightening = 0.0;
        for (delta, t) in deltas {
            let keys = &self.tri_edges[t];
            if keys.iter().any(|k| used.contains_key(k)) {
                continue;
            }
            for k in keys {
                used.insert(*k, ());
            }
            tightening += delta;
        }
        naive - tightening
    }

    fn lex_smaller(&self, a: &BTreeMap<EdgeKey, RelLabel>, b: &BTreeMap<EdgeKey, RelLabel>) -> bool {
        for k in &self.p.edges {
            let (ra, rb) = (a[k].tie_rank(), b[k].tie_rank());
            if ra != rb {
                return ra < rb;
            }
        }
        false
    }

    /// Worklist propagation to the same fixpoint as `refine_domains`, but
    /// seeded only with the triangles touching the just-assigned edge;
    /// domains shrink monotonically, so the fixpoint is order-independent.
    fn propagate_from(&self, domains: &mut DomainMap, seed: EdgeKey) {
        let mut queue: std::collections::VecDeque<usize> = self
            .tris_of_edge
            .get(&seed)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default();
        let mut queued = vec![false; self.tris.len()];
        for &t in &queue {
            queued[t] = true;
        }
        while let Some(t) = queue.pop_front() {
            queued[t] = false;
            let changed = corpus::refine_triangle(domains, self.tris[t], self.p.table);
            for (key, c) in self.tri_edges[t].iter().zip(changed) {
                if !c {
                    continue;
                }
                for &t2 in &self.tris_of_edge[key] {
                    if t2 != t && !queued[t2] {
                        queued[t2] = true;
                        queue.push_back(t2);
                    }
                }
            }
        }
    }

    fn dfs(&mut self, mut domains: DomainMap, assigned: Option<EdgeKey>) -> Result<()> {
        self.stats.nodes += 1;
        if self.stats.nodes > self.p.node_cap {
            return Err(TempRelError::SolverCap(self.p.node_cap));
        }
        match assigned {
            Some(k) => self.propagate_from(&mut domains, k),
            None => corpus::refine_domains(&mut domains, &self.tris, self.p.table),
        }
        self.stats.propagation_rounds += 1;
        if domains.values().any(|d| d.is_empty()) {
            return Ok(());
        }
        // Equal-bound branches may hold a lexicographically smaller
        // optimum, so they are pruned only once their decided prefix is
        // already lexicographically behind the incumbent.
        if let Some(b) = &self.best {
            // Two tiers: the cheap per-edge bound first, the triangle
            // tightening only when it fails to prune.
            let mut bound = self.naive_bound(&domains);
            if bound >= b.objective {
                bound = self.bound(&domains);
            }
            if bound < b.objective {
                return Ok(());
            }
            if bound == b.objective
                && self.prefix_cmp(&domains, &b.labels) == std::cmp::Ordering::Greater
            {
                return Ok(());
            }
        }
        let undecided: Vec<EdgeKey> = self
            .p
            .edges
            .iter()
            .copied()
            .filter(|k| domains[k].len() > 1)
            .collect();
        if undecided.is_empty() {
            let labels: BTreeMap<EdgeKey, RelLabel> = domains
                .iter()
                .map(|(k, d)| (*k, d.iter().next().unwrap()))
                .collect();
            let objective = self.p.objective_of(&labels);
            let better = match &self.best {
                None => true,
                Some(b) => {
                    objective > b.objective
                        || (objective == b.objective && self.lex_smaller(&labels, &b.labels))
                }
            };
            if better {
                self.best = Some(Assignment { labels, objective });
            }
            return Ok(());
        }
        // Branch on the first undecided edge in canonical order, so the
        // decided region is always a prefix and ties collapse into a
        // single lexicographic descent; decide high-score labels first.
        let branch = undecided[0];
        let mut options: Vec<RelLabel> = domains[&branch].iter().collect();
        let s = &self.p.scores[&branch];
        options.sort_by(|a, b| {
            s.get(*b)
                .partial_cmp(&s.get(*a))
                .unwrap()
                .then(a.tie_rank().cmp(&b.tie_rank()))
        });
        for l in options {
            let mut child = domains.clone();
            child.insert(branch, LabelSet::singleton(l));
            self.dfs(child, Some(branch))?;
        }
        Ok(())
    }

    /// Compares the decided prefix (singleton domains up to the first
    /// undecided edge, in canonical edge order) against the incumbent.
    fn prefix_cmp(
        &self,
        domains: &DomainMap,
        best: &BTreeMap<EdgeKey, RelLabel>,
    ) -> std::cmp::Ordering {
        for k in &self.p.edges {
            let d = &domains[k];
            if d.len() > 1 {
                break;
            }
            let decided = d.iter().next().unwrap().tie_rank();
            let incumbent = best[k].tie_rank();
            if decided != incumbent {
                return decided.cmp(&incumbent);
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// Provably optimal assignment under uniqueness + transitivity + clamps.
///
/// Errors if the clamps are infeasible (the conflicting edges are reported)
/// or if the node cap is exceeded; never silently returns a suboptimal
/// assignment.
pub fn infer_global(p: &InferenceProblem) -> Result<(Assignment, SolverStats)> {
    let start = Instant::now();
    let mut root = p.initial_domains();
    let tris = corpus::triangles(&p.edges);
    corpus::refine_domains(&mut root, &tris, p.table);
    let conflicts: Vec<(u32, u32)> = root
        .iter()
        .filter(|(_, d)| d.is_empty())
        .map(|(k, _)| (k.src, k.dst))
        .collect();
    if !conflicts.is_empty() {
        return Err(TempRelError::Inconsistent(conflicts));
    }
    let tri_edges: Vec<[EdgeKey; 3]> = tris
        .iter()
        .map(|&(i, j, k)| {
            [
                EdgeKey { src: i, dst: j },
                EdgeKey { src: j, dst: k },
                EdgeKey { src: i, dst: k },
            ]
        })
        .collect();
    let mut tris_of_edge: BTreeMap<EdgeKey, Vec<usize>> = BTreeMap::new();
    for (t, keys) in tri_edges.iter().enumerate() {
        for k in keys {
            tris_of_edge.entry(*k).or_default().push(t);
        }
    }
    let mut state = SearchState {
        p,
        tris,
        tri_edges,
        tris_of_edge,
        best: None,
        stats: SolverStats::default(),
    };
    state.dfs(root, None)?;
    let mut stats = state.stats;
    stats.proven_optimal = true;
    stats.wall_secs = duration_secs(start.elapsed());
    let best = state.best.expect("feasible problem has a solution");
    Ok((best, stats))
}

fn duration_secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
