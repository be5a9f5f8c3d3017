//! Comparison strategies: neighborhood expansion without a cube, a
//! simplified connected-growth search, random and greedy cell selection,
//! and an exhaustive oracle for small cubes.

use std::collections::BTreeSet;
use std::time::Instant;

use itertools::Itertools;
use rand::Rng;

use crate::cube::{union_members, CellId, DataCube, ObjectIdx, ObjectSet, QuerySet};
use crate::error::{Error, Result};
use crate::relevance::{relevance, EvalCounter};

/// Largest number of subsets [`exhaustive_oracle`] will evaluate.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Selected cells in ascending order; empty for strategies without a cube.
    pub selected: Vec<CellId>,
    /// Nodes of the constructed network, sorted.
    pub nodes: Vec<ObjectIdx>,
    /// Relevance of the objects the strategy retrieved.
    pub quality: f64,
    /// Quality-function evaluations spent choosing the selection.
    pub quality_evaluations: u64,
    pub wall_time_secs: f64,
}

impl SelectionResult {
    fn from_cells(
        cube: &DataCube,
        query: &QuerySet,
        mut selected: Vec<CellId>,
        evaluations: u64,
        start: Instant,
    ) -> Result<Self> {
        selected.sort();
        let members = union_members(cube, selected.iter().copied())?;
        let quality = relevance(&members, query);
        let mut nodes = members;
        nodes.extend(query.ids().iter().copied());
        Ok(Self {
            selected,
            nodes: nodes.into_iter().collect(),
            quality,
            quality_evaluations: evaluations,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }

    fn from_objects(query: &QuerySet, reached: &ObjectSet, start: Instant) -> Self {
        let mut nodes = reached.clone();
        nodes.extend(query.ids().iter().copied());
        Self {
            selected: Vec::new(),
            nodes: nodes.into_iter().collect(),
            quality: relevance(reached, query),
            quality_evaluations: 0,
            wall_time_secs: start.elapsed().as_secs_f64(),
        }
    }
}

/// The query plus everything within `hops` link steps of it.
///
/// Quality is measured on the objects reached by at least one step, so
/// `hops = 0` scores an empty retrieval.
pub fn no_cube_family(cube: &DataCube, query: &QuerySet, hops: usize) -> SelectionResult {
    let start = Instant::now();
    let mut visited: ObjectSet = query.ids().clone();
    let mut reached = ObjectSet::new();
    let mut frontier: Vec<ObjectIdx> = query.ids().iter().copied().collect();
    for _ in 0..hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for &(v, _) in cube.neighbors(u) {
                reached.insert(v);
                if visited.insert(v) {
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    SelectionResult::from_objects(query, &reached, start)
}

/// `min(m, n)` distinct cells drawn uniformly without replacement.
pub fn cube_random(cube: &DataCube, query: &QuerySet, m: usize, rng: &mut impl Rng) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = cube.num_cells();
    let picked = rand::seq::index::sample(rng, n, m.min(n))
        .into_iter()
        .map(|i| CellId(i as u32))
        .collect();
    SelectionResult::from_cells(cube, query, picked, 0, start)
}

/// `m` rounds of adding the cell that maximizes relevance, scoring every
/// remaining cell each round. Ties go to the smallest cell id.
pub fn cube_greedy(cube: &DataCube, query: &QuerySet, m: usize, counter: &mut EvalCounter) -> Result<SelectionResult> {
    let start = Instant::now();
    let before = counter.count();
    let mut selected: BTreeSet<CellId> = BTreeSet::new();
    let mut members = ObjectSet::new();
    for _ in 0..m {
        let mut best: Option<(f64, CellId)> = None;
        for cell in cube.cells().iter().filter(|c| !selected.contains(&c.id)) {
            let mut candidate = members.clone();
            candidate.extend(cell.members.iter().copied());
            let q = counter.relevance(&candidate, query);
            if best.is_none_or(|(b, _)| q > b) {
                best = Some((q, cell.id));
            }
        }
        let Some((_, id)) = best else { break };
        selected.insert(id);
        members.extend(cube.cell(id)?.members.iter().copied());
    }
    SelectionResult::from_cells(cube, query, selected.into_iter().collect(), counter.count() - before, start)
}

/// Simplified connected-growth search from the query.
///
/// Repeatedly adds the outside node with the most links into the current node
/// set (smallest id on ties) until `budget` nodes were added or no outside node
/// is linked to the set. Quality is measured on the added nodes plus the query
/// nodes adjacent to them.
pub fn max_disc_lite(cube: &DataCube, query: &QuerySet, budget: usize) -> SelectionResult {
    let start = Instant::now();
    let mut in_set = vec![false; cube.num_objects()];
    let mut links_in = vec![0usize; cube.num_objects()];
    let mut frontier: BTreeSet<ObjectIdx> = BTreeSet::new();
    let touch = |u: ObjectIdx, in_set: &[bool], links_in: &mut [usize], frontier: &mut BTreeSet<ObjectIdx>| {
        for &(v, _) in cube.neighbors(u) {
            if !in_set[v.index()] {
                links_in[v.index()] += 1;
                frontier.insert(v);
            }
        }
    };
    for &q in query.ids() {
        in_set[q.index()] = true;
        frontier.remove(&q);
    }
    for &q in query.ids() {
        touch(q, &in_set, &mut links_in, &mut frontier);
    }
    let mut added = ObjectSet::new();
    while added.len() < budget {
        let Some(&next) = frontier.iter().max_by(|a, b| links_in[a.index()].cmp(&links_in[b.index()]).then(b.cmp(a)))
        else {
            break;
        };
        frontier.remove(&next);
        in_set[next.index()] = true;
        added.insert(next);
        touch(next, &in_set, &mut links_in, &mut frontier);
    }
    let mut reached = added.clone();
    for &a in &added {
        reached.extend(cube.neighbors(a).iter().map(|&(v, _)| v).filter(|v| query.contains(*v)));
    }
    SelectionResult::from_objects(query, &reached, start)
}

/// `Σ_{k=1}^{m} C(n, k)`, saturating.
pub fn subsets_up_to(n: usize, m: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for k in 1..=m.min(n) {
        binom = binom.saturating_mul((n - k + 1) as u128) / k as u128;
        total = total.saturating_add(binom);
    }
    total
}

/// Best non-empty selection of at most `m` cells by full enumeration.
/// Ties go to the lexicographically smallest id sequence.
pub fn exhaustive_oracle(
    cube: &DataCube,
    query: &QuerySet,
    m: usize,
    counter: &mut EvalCounter,
) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = cube.num_cells();
    let required = subsets_up_to(n, m);
    if required > ORACLE_LIMIT {
        return Err(Error::SearchTooLarge {
            required,
            limit: ORACLE_LIMIT,
        });
    }
    let before = counter.count();
    let mut best: Option<(f64, Vec<CellId>)> = None;
    for k in 1..=m.min(n) {
        for combo in cube.cell_ids().combinations(k) {
            let members = union_members(cube, combo.iter().copied())?;
            let q = counter.relevance(&members, query);
            let better = match &best {
                None => true,
                Some((bq, bc)) => q > *bq || (q == *bq && combo < *bc),
            };
            if better {
                best = Some((q, combo));
            }
        }
    }
    let selected = best.map(|(_, c)| c).unwrap_or_default();
    SelectionResult::from_cells(cube, query, selected, counter.count() - before, start)
}
