//! Primal network simplex for balanced transportation problems.
//!
//! The tree bookkeeping (thread/rev-thread lists, successor counts, strongly
//! feasible leaving-arc rule, block pricing) follows the classical
//! spanning-tree implementation used by LEMON. Arcs are implicit: arc
//! `e < n1 * n2` joins supply `e / n2` to demand `e % n2`; the remaining
//! `n1 + n2` arcs are artificial and link every node to an extra root.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: f64,
    pub pivots: usize,
    /// Nonzero plan entries `(supply index, demand index, mass)`.
    pub plan: Vec<(usize, usize, f64)>,
}

struct Simplex<'a> {
    n1: usize,
    n2: usize,
    node_num: usize,
    arc_num: usize,
    costs: &'a [f64],
    art_source: Vec<usize>,
    art_target: Vec<usize>,
    art_cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    // pivot scratch
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    next_arc: usize,
    block_size: usize,
    eps: f64,
}

impl<'a> Simplex<'a> {
    fn new(supply: &[f64], demand: &[f64], costs: &'a [f64]) -> Self {
        let n1 = supply.len();
        let n2 = demand.len();
        let node_num = n1 + n2;
        let arc_num = n1 * n2;
        let root = node_num;
        let max_cost = costs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let art = (max_cost + 1.0) * node_num as f64;

        let mut s = Self {
            n1,
            n2,
            node_num,
            arc_num,
            costs,
            art_source: vec![0; node_num],
            art_target: vec![0; node_num],
            art_cost: vec![0.0; node_num],
            flow: vec![0.0; arc_num + node_num],
            state: vec![STATE_LOWER; arc_num + node_num],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            next_arc: 0,
            block_size: ((arc_num as f64).sqrt() as usize).max(10),
            eps: 1e-13 * max_cost.max(1.0),
        };

        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = arc_num + u;
            let sup = if u < n1 { supply[u] } else { -demand[u - n1] };
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if sup >= 0.0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.art_source[u] = u;
                s.art_target[u] = root;
                s.flow[e] = sup;
                s.art_cost[u] = 0.0;
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art;
                s.art_source[u] = root;
                s.art_target[u] = u;
                s.flow[e] = -sup;
                s.art_cost[u] = art;
            }
        }
        s
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.n2
        } else {
            self.art_source[e - self.arc_num]
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.n1 + e % self.n2
        } else {
            self.art_target[e - self.arc_num]
        }
    }

    #[inline]
    fn cost(&self, e: usize) -> f64 {
        if e < self.arc_num {
            self.costs[e]
        } else {
            self.art_cost[e - self.arc_num]
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        let i = e / self.n2;
        let j = self.n1 + e % self.n2;
        f64::from(self.state[e]) * (self.costs[e] + self.pi[i] - self.pi[j])
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.eps;
        let mut found = false;
        let mut cnt = self.block_size;
        let m = self.arc_num;
        let mut e = self.next_arc;
        for _ in 0..m {
            let c = self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        // Entering arcs are always at their lower bound (no capacities).
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DIR_DOWN { f64::INFINITY } else { self.flow[e] };
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DIR_UP { f64::INFINITY } else { self.flow[e] };
            if d <= self.delta {
                self.delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let delta = self.delta;
        if delta > 0.0 {
            self.flow[self.in_arc] += delta;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.state[out] = STATE_LOWER;
        self.flow[out] = 0.0;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let in_arc = self.in_arc;
        let join = self.join;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source(in_arc) { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source(in_arc) { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in]
            - self.pi[self.u_in]
            - f64::from(self.pred_dir[self.u_in]) * self.cost(self.in_arc);
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self, max_pivots: usize) -> Result<usize> {
        let mut pivots = 0;
        while self.find_entering_arc() {
            if pivots == max_pivots {
                return Err(Error::PivotLimit(max_pivots));
            }
            self.find_join_node();
            if !self.find_leaving_arc() || !self.delta.is_finite() {
                return Err(Error::LinearSolve("unbounded transport problem".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
        }
        Ok(pivots)
    }
}

/// Solves `min sum c_ij P_ij` over couplings of `supply` and `demand`
/// (equal totals). `costs` is row-major `supply.len() x demand.len()`.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    costs: &[f64],
    max_pivots: usize,
) -> Result<TransportSolution> {
    assert_eq!(costs.len(), supply.len() * demand.len());
    if supply.is_empty() || demand.is_empty() {
        return Ok(TransportSolution {
            cost: 0.0,
            pivots: 0,
            plan: Vec::new(),
        });
    }
    let mut sx = Simplex::new(supply, demand, costs);
    let pivots = sx.run(max_pivots)?;

    let total: f64 = supply.iter().sum();
    let residual_art = (0..sx.node_num)
        .map(|u| sx.flow[sx.arc_num + u].abs())
        .fold(0.0, f64::max);
    if residual_art > 1e-9 * total.max(1.0) {
        return Err(Error::LinearSolve(format!(
            "transport infeasible: artificial flow {residual_art:e}"
        )));
    }
    let mut cost = 0.0;
    let mut plan = Vec::new();
    for u in 0..sx.node_num {
        let e = sx.pred[u];
        if e < sx.arc_num && sx.flow[e] != 0.0 {
            cost += sx.flow[e] * sx.costs[e];
            plan.push((e / sx.n2, e % sx.n2, sx.flow[e]));
        }
    }
    Ok(TransportSolution { cost, pivots, plan })
}
