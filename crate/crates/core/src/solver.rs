//! Exact discrete Kantorovich solver.
//!
//! [`solve_exact`] runs the network simplex method on the complete bipartite
//! transportation graph. The basis is a spanning tree of `m + n − 1` cells;
//! node potentials are recomputed from the tree after every pivot, entering
//! cells are chosen by block pricing, and a run of degenerate pivots switches
//! pricing to Bland's rule until the objective moves again.
//!
//! [`brute_force`] enumerates permutations and exists only as an independent
//! oracle for small uniform instances. [`dual_potentials`] reconstructs and
//! checks dual potentials for an arbitrary plan.

use std::collections::VecDeque;
use std::sync::Arc;

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, TransportPlan};
use crate::scalar::Scalar;

/// Largest instance size accepted by [`brute_force`].
pub const BRUTE_FORCE_MAX_POINTS: usize = 8;

/// Potentials `φ` on source atoms and `ψ` on target atoms with
/// `φᵢ + ψⱼ ≤ c(xᵢ, yⱼ)`, normalized so that `φ₀ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualPotentials<T> {
    pub phi: Vec<T>,
    pub psi: Vec<T>,
}

impl<T: Scalar> DualPotentials<T> {
    /// `Σ φᵢ wᵢ + Σ ψⱼ w′ⱼ`.
    pub fn dual_objective(&self, source: &DiscreteMeasure<T>, target: &DiscreteMeasure<T>) -> T {
        let a: T = self
            .phi
            .iter()
            .zip(source.weights())
            .map(|(&p, &w)| p * w)
            .sum();
        let b: T = self
            .psi
            .iter()
            .zip(target.weights())
            .map(|(&p, &w)| p * w)
            .sum();
        a + b
    }
}

/// Solver output: an optimal vertex plan and the potentials certifying it.
#[derive(Clone, Debug)]
pub struct OptimalPlan<T> {
    pub plan: TransportPlan<T>,
    pub duals: DualPotentials<T>,
    pub objective: T,
    pub pivots: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Hard cap on simplex pivots; exceeding it is a solver failure.
    pub max_pivots: usize,
    /// Consecutive degenerate pivots before Bland's rule takes over.
    pub bland_after: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_pivots: 5_000_000,
            bland_after: 64,
        }
    }
}

/// Minimum-cost coupling of `source` and `target` under `model`.
pub fn solve_exact<T: Scalar>(
    source: &Arc<DiscreteMeasure<T>>,
    target: &Arc<DiscreteMeasure<T>>,
    model: &CostModel<T>,
) -> Result<OptimalPlan<T>> {
    solve_exact_with(source, target, model, SolverOptions::default())
}

pub fn solve_exact_with<T: Scalar>(
    source: &Arc<DiscreteMeasure<T>>,
    target: &Arc<DiscreteMeasure<T>>,
    model: &CostModel<T>,
    options: SolverOptions,
) -> Result<OptimalPlan<T>> {
    check_compatible(source, target, model)?;
    let cost = cost_matrix(source, target, model)?;
    let solution = network_simplex(source.weights(), target.weights(), &cost, options)?;
    let plan = TransportPlan::new(source.clone(), target.clone(), solution.flows)?;
    let n = target.len();
    let objective = plan
        .entries()
        .iter()
        .map(|e| e.mass * cost[e.i * n + e.j])
        .sum();
    Ok(OptimalPlan {
        plan,
        duals: DualPotentials {
            phi: solution.u,
            psi: solution.v,
        },
        objective,
        pivots: solution.pivots,
    })
}

fn check_compatible<T: Scalar>(
    source: &DiscreteMeasure<T>,
    target: &DiscreteMeasure<T>,
    model: &CostModel<T>,
) -> Result<()> {
    if source.dim() != model.dim() || target.dim() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "measures of dimension {} and {} do not match cost `{}` of dimension {}",
            source.dim(),
            target.dim(),
            model.label(),
            model.dim()
        )));
    }
    let (a, b) = (source.total_mass(), target.total_mass());
    if (a - b).abs() > T::slack_tolerance() {
        return Err(Error::Infeasible {
            source_mass: a.to_f64_lossy(),
            target_mass: b.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Row-major `c(xᵢ, yⱼ)`, assembled in parallel over rows.
pub fn cost_matrix<T: Scalar>(
    source: &DiscreteMeasure<T>,
    target: &DiscreteMeasure<T>,
    model: &CostModel<T>,
) -> Result<Vec<T>> {
    let rows: Vec<Vec<T>> = source
        .points()
        .par_iter()
        .map(|x| {
            target
                .points()
                .iter()
                .map(|y| model.eval(x, y))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub(crate) struct SimplexSolution<T> {
    pub flows: Vec<(usize, usize, T)>,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub pivots: usize,
}

const NO_SLOT: usize = usize::MAX;

struct Tree<T> {
    m: usize,
    n: usize,
    /// Basic cells as flat indices `i·n + j`.
    cells: Vec<usize>,
    flows: Vec<T>,
    /// Basis slot of each flat cell, or `NO_SLOT`.
    slot_of: Vec<usize>,
    /// Incident basis slots per node; rows are `0..m`, columns `m..m+n`.
    adj: Vec<Vec<usize>>,
}

impl<T: Scalar> Tree<T> {
    fn endpoints(&self, slot: usize) -> (usize, usize) {
        let cell = self.cells[slot];
        (cell / self.n, self.m + cell % self.n)
    }

    fn push(&mut self, cell: usize, flow: T) {
        let slot = self.cells.len();
        self.cells.push(cell);
        self.flows.push(flow);
        self.slot_of[cell] = slot;
        let (r, c) = (cell / self.n, self.m + cell % self.n);
        self.adj[r].push(slot);
        self.adj[c].push(slot);
    }

    fn replace(&mut self, slot: usize, cell: usize, flow: T) {
        let (r, c) = self.endpoints(slot);
        self.adj[r].retain(|&s| s != slot);
        self.adj[c].retain(|&s| s != slot);
        self.slot_of[self.cells[slot]] = NO_SLOT;
        self.cells[slot] = cell;
        self.flows[slot] = flow;
        self.slot_of[cell] = slot;
        let (r, c) = self.endpoints(slot);
        self.adj[r].push(slot);
        self.adj[c].push(slot);
    }

    /// Potentials with `u₀ = 0` and `uᵢ + vⱼ = cᵢⱼ` on every basic cell.
    fn potentials(&self, cost: &[T], u: &mut [T], v: &mut [T]) {
        let total = self.m + self.n;
        let mut seen = vec![false; total];
        let mut queue = VecDeque::with_capacity(total);
        u[0] = T::zero();
        seen[0] = true;
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &slot in &self.adj[node] {
                let (r, c) = self.endpoints(slot);
                let cij = cost[self.cells[slot]];
                let other = if node == r { c } else { r };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if other == c {
                    v[c - self.m] = cij - u[r];
                } else {
                    u[r] = cij - v[c - self.m];
                }
                queue.push_back(other);
            }
        }
    }

    /// Basis slots on the tree path from `from` to `to`, ordered from `to`
    /// back towards `from`.
    fn path(&self, from: usize, to: usize, parent: &mut [usize]) -> Vec<usize> {
        parent.iter_mut().for_each(|p| *p = NO_SLOT);
        let mut queue = VecDeque::new();
        let mut seen = vec![false; self.m + self.n];
        seen[from] = true;
        queue.push_back(from);
        'bfs: while let Some(node) = queue.pop_front() {
            for &slot in &self.adj[node] {
                let (r, c) = self.endpoints(slot);
                let other = if node == r { c } else { r };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                parent[other] = slot;
                if other == to {
                    break 'bfs;
                }
                queue.push_back(other);
            }
        }
        let mut out = Vec::new();
        let mut node = to;
        while node != from {
            let slot = parent[node];
            out.push(slot);
            let (r, c) = self.endpoints(slot);
            node = if node == r { c } else { r };
        }
        out
    }

    /// Recomputes basic flows from supplies and demands by leaf elimination.
    fn flows_from_balances(&self, supply: &[T], demand: &[T]) -> Vec<T> {
        let total = self.m + self.n;
        let mut balance: Vec<T> = supply.iter().chain(demand).copied().collect();
        let mut degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut done = vec![false; self.cells.len()];
        let mut flows = vec![T::zero(); self.cells.len()];
        let mut leaves: Vec<usize> = (0..total).filter(|&k| degree[k] == 1).collect();
        while let Some(node) = leaves.pop() {
            if degree[node] != 1 {
                continue;
            }
            let slot = *self.adj[node]
                .iter()
                .find(|&&s| !done[s])
                .expect("leaf has one open edge");
            done[slot] = true;
            let (r, c) = self.endpoints(slot);
            let other = if node == r { c } else { r };
            let f = balance[node];
            flows[slot] = f;
            balance[node] = T::zero();
            balance[other] = balance[other] - f;
            degree[node] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push(other);
            }
        }
        flows
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Least-cost greedy start, completed to a spanning tree with zero-flow cells.
fn initial_tree<T: Scalar>(supply: &[T], demand: &[T], cost: &[T]) -> Tree<T> {
    let (m, n) = (supply.len(), demand.len());
    let mut order: Vec<usize> = (0..m * n).collect();
    order.sort_by(|&a, &b| cost[a].partial_cmp(&cost[b]).unwrap().then(a.cmp(&b)));
    let mut tree = Tree {
        m,
        n,
        cells: Vec::with_capacity(m + n - 1),
        flows: Vec::with_capacity(m + n - 1),
        slot_of: vec![NO_SLOT; m * n],
        adj: vec![Vec::new(); m + n],
    };
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let mut sets = DisjointSets::new(m + n);
    for &cell in &order {
        let (i, j) = (cell / n, cell % n);
        if s[i] > T::zero() && d[j] > T::zero() {
            let q = s[i].min(d[j]);
            if s[i] <= d[j] {
                d[j] = d[j] - s[i];
                s[i] = T::zero();
            } else {
                s[i] = s[i] - d[j];
                d[j] = T::zero();
            }
            let joined = sets.union(i, m + j);
            debug_assert!(joined, "greedy allocations form a forest");
            tree.push(cell, q);
        }
    }
    for &cell in &order {
        if tree.cells.len() == m + n - 1 {
            break;
        }
        let (i, j) = (cell / n, cell % n);
        if tree.slot_of[cell] == NO_SLOT && sets.union(i, m + j) {
            tree.push(cell, T::zero());
        }
    }
    tree
}

pub(crate) fn network_simplex<T: Scalar>(
    supply: &[T],
    demand: &[T],
    cost: &[T],
    options: SolverOptions,
) -> Result<SimplexSolution<T>> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("empty measure".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(
            "cost matrix has non-finite entries".into(),
        ));
    }
    let cmax = cost.iter().fold(T::zero(), |a, &c| a.max(c.abs()));
    let enter_tol = T::epsilon() * T::lit(1024.0) * (T::one() + cmax);

    let mut tree = initial_tree(supply, demand, cost);
    let mut u = vec![T::zero(); m];
    let mut v = vec![T::zero(); n];
    let mut parent = vec![NO_SLOT; m + n];
    let cells = m * n;
    let block = ((cells as f64).sqrt() as usize).max(32).min(cells);
    let mut cursor = 0usize;
    let mut degenerate_streak = 0usize;
    let mut pivots = 0usize;

    loop {
        tree.potentials(cost, &mut u, &mut v);
        let reduced = |cell: usize| cost[cell] - u[cell / n] - v[cell % n];
        let bland = degenerate_streak >= options.bland_after;
        let entering = if bland {
            (0..cells).find(|&c| tree.slot_of[c] == NO_SLOT && reduced(c) < -enter_tol)
        } else {
            let mut best: Option<(usize, T)> = None;
            let mut scanned = 0;
            while scanned < cells {
                let end = (scanned + block).min(cells);
                for k in scanned..end {
                    let c = (cursor + k) % cells;
                    if tree.slot_of[c] != NO_SLOT {
                        continue;
                    }
                    let r = reduced(c);
                    if r < -enter_tol && best.is_none_or(|(_, b)| r < b) {
                        best = Some((c, r));
                    }
                }
                scanned = end;
                if best.is_some() {
                    break;
                }
            }
            if let Some((c, _)) = best {
                cursor = (c + 1) % cells;
            }
            best.map(|(c, _)| c)
        };
        let Some(entering) = entering else { break };

        pivots += 1;
        if pivots > options.max_pivots {
            return Err(Error::SolverFailure(format!(
                "pivot limit {} exceeded",
                options.max_pivots
            )));
        }

        let (ei, ej) = (entering / n, entering % n);
        let path = tree.path(ei, m + ej, &mut parent);
        // Signs alternate along the path starting with −θ at column ej.
        let mut theta = T::infinity();
        let mut leaving = NO_SLOT;
        for (k, &slot) in path.iter().enumerate() {
            if k % 2 == 0 {
                let f = tree.flows[slot];
                let better = f < theta
                    || (f == theta && leaving != NO_SLOT && tree.cells[slot] < tree.cells[leaving]);
                if better {
                    theta = f;
                    leaving = slot;
                }
            }
        }
        debug_assert!(leaving != NO_SLOT);
        for (k, &slot) in path.iter().enumerate() {
            if slot == leaving {
                continue;
            }
            tree.flows[slot] = if k % 2 == 0 {
                tree.flows[slot] - theta
            } else {
                tree.flows[slot] + theta
            };
        }
        tree.replace(leaving, entering, theta);
        if theta > T::zero() {
            degenerate_streak = 0;
        } else {
            degenerate_streak += 1;
        }
    }

    let flows = tree.flows_from_balances(supply, demand);
    let mut out = Vec::with_capacity(flows.len());
    for (slot, &f) in flows.iter().enumerate() {
        if f < -T::mass_tolerance() {
            return Err(Error::SolverFailure(format!(
                "negative basic flow {:e}",
                f.to_f64_lossy()
            )));
        }
        if f > T::zero() {
            let cell = tree.cells[slot];
            out.push((cell / n, cell % n, f));
        }
    }
    Ok(SimplexSolution {
        flows: out,
        u,
        v,
        pivots,
    })
}

/// Exhaustive search over permutations; the independent oracle.
///
/// Requires equal point counts `N ≤ 8` and uniform weights, where an optimal
/// vertex of the transportation polytope is a permutation. Ties go to the
/// lexicographically smallest permutation.
pub fn brute_force<T: Scalar>(
    source: &Arc<DiscreteMeasure<T>>,
    target: &Arc<DiscreteMeasure<T>>,
    model: &CostModel<T>,
) -> Result<TransportPlan<T>> {
    let n = source.len();
    if target.len() != n || n > BRUTE_FORCE_MAX_POINTS {
        return Err(Error::Unsupported(format!(
            "brute force needs equal sizes up to {BRUTE_FORCE_MAX_POINTS}, got {} and {}",
            n,
            target.len()
        )));
    }
    let w = T::one() / T::from_usize_exact(n);
    let uniform = |m: &DiscreteMeasure<T>| {
        m.weights()
            .iter()
            .all(|&x| (x - w).abs() <= T::mass_tolerance())
    };
    if !uniform(source) || !uniform(target) {
        return Err(Error::Unsupported(
            "brute force needs uniform weights".into(),
        ));
    }
    check_compatible(source, target, model)?;
    let cost = cost_matrix(source, target, model)?;
    let mut best: Option<(T, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let total: T = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    TransportPlan::new(
        source.clone(),
        target.clone(),
        perm.into_iter()
            .enumerate()
            .map(|(i, j)| (i, j, w))
            .collect::<Vec<_>>(),
    )
}

/// Reconstructs dual potentials certifying optimality of `plan`.
///
/// Equalities `φᵢ + ψⱼ = cᵢⱼ` are propagated over each connected component
/// of the support graph; the free offset between components is then fixed
/// by a shortest-path pass over the inequality constraints. Fails with a
/// certification error if a support cycle is inconsistent or some cell
/// violates `φᵢ + ψⱼ ≤ cᵢⱼ` by more than the slack tolerance.
pub fn dual_potentials<T: Scalar>(
    plan: &TransportPlan<T>,
    model: &CostModel<T>,
) -> Result<DualPotentials<T>> {
    let source = plan.source();
    let target = plan.target();
    let (m, n) = (source.len(), target.len());
    let cost = cost_matrix(source, target, model)?;
    let tol = T::slack_tolerance();

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for e in plan.entries() {
        adj[e.i].push(e.i * n + e.j);
        adj[m + e.j].push(e.i * n + e.j);
    }
    let mut pot = vec![T::zero(); m + n];
    let mut comp = vec![usize::MAX; m + n];
    let mut ncomp = 0;
    let mut worst = T::zero();
    for root in 0..m + n {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = ncomp;
        let mut queue = VecDeque::from([root]);
        while let Some(node) = queue.pop_front() {
            for &cell in &adj[node] {
                let (r, c) = (cell / n, m + cell % n);
                let other = if node == r { c } else { r };
                let want = cost[cell] - pot[node];
                if comp[other] == usize::MAX {
                    comp[other] = ncomp;
                    pot[other] = want;
                    queue.push_back(other);
                } else {
                    worst = worst.max((pot[other] - want).abs());
                }
            }
        }
        ncomp += 1;
    }
    if worst > tol {
        return Err(Error::CertificationFailure {
            violation: worst.to_f64_lossy(),
        });
    }

    // Shifting component K by δ_K (φ += δ, ψ −= δ) keeps its equalities.
    // Cell (i, j) across components needs δ_ci − δ_cj ≤ slack(i, j).
    let mut bound = vec![vec![T::infinity(); ncomp]; ncomp];
    for i in 0..m {
        for j in 0..n {
            let (ci, cj) = (comp[i], comp[m + j]);
            let slack = cost[i * n + j] - pot[i] - pot[m + j];
            if ci == cj {
                worst = worst.max(-slack);
            } else if slack < bound[cj][ci] {
                bound[cj][ci] = slack;
            }
        }
    }
    if worst > tol {
        return Err(Error::CertificationFailure {
            violation: worst.to_f64_lossy(),
        });
    }
    let mut delta = vec![T::zero(); ncomp];
    let mut settled = false;
    for _ in 0..=ncomp {
        let mut changed = false;
        for a in 0..ncomp {
            for b in 0..ncomp {
                let w = bound[a][b];
                let guard = T::epsilon() * T::lit(16.0) * (T::one() + delta[b].abs());
                if w.is_finite() && delta[a] + w < delta[b] - guard {
                    delta[b] = delta[a] + w;
                    changed = true;
                }
            }
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::CertificationFailure {
            violation: f64::INFINITY,
        });
    }
    let mut phi: Vec<T> = (0..m).map(|i| pot[i] + delta[comp[i]]).collect();
    let mut psi: Vec<T> = (0..n).map(|j| pot[m + j] - delta[comp[m + j]]).collect();
    let shift = phi[0];
    phi.iter_mut().for_each(|p| *p = *p - shift);
    psi.iter_mut().for_each(|p| *p = *p + shift);

    let mut violation = T::zero();
    for i in 0..m {
        for j in 0..n {
            violation = violation.max(phi[i] + psi[j] - cost[i * n + j]);
        }
    }
    for e in plan.entries() {
        violation = violation.max((cost[e.i * n + e.j] - phi[e.i] - psi[e.j]).abs());
    }
    if violation > tol {
        return Err(Error::CertificationFailure {
            violation: violation.to_f64_lossy(),
        });
    }
    Ok(DualPotentials { phi, psi })
}
