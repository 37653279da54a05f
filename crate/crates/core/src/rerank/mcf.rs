//! Integer min-cost flow by the primal network simplex method.
//!
//! The spanning tree is kept strongly feasible (artificial root, last
//! blocking arc leaves), which rules out cycling on degenerate pivots.
//! Entering arcs are chosen by block search.

const INF: i64 = i64::MAX / 4;
const NONE: usize = usize::MAX;

const TREE: i8 = 0;
const LOWER: i8 = 1;
const UPPER: i8 = -1;

/// A flow network with per-node supplies (positive = source).
#[derive(Debug, Clone, Default)]
pub struct MinCostFlow {
    supply: Vec<i64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSolution {
    /// Flow per arc, in insertion order.
    pub flow: Vec<i64>,
    pub cost: i64,
}

impl MinCostFlow {
    pub fn new(n_nodes: usize) -> Self {
        MinCostFlow {
            supply: vec![0; n_nodes],
            ..Default::default()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.supply.len()
    }

    pub fn n_arcs(&self) -> usize {
        self.src.len()
    }

    /// Adds an arc with lower bound 0 and returns its index.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        assert!(
            from < self.n_nodes() && to < self.n_nodes(),
            "arc endpoint out of range"
        );
        assert!(cap >= 0, "negative capacity");
        self.src.push(from);
        self.dst.push(to);
        self.cap.push(cap.min(INF));
        self.cost.push(cost);
        self.src.len() - 1
    }

    pub fn set_supply(&mut self, node: usize, supply: i64) {
        self.supply[node] = supply;
    }

    /// Optimal flow meeting every supply exactly, or `None` when no feasible
    /// flow exists (or supplies do not balance).
    pub fn solve(&self) -> Option<FlowSolution> {
        if self.supply.iter().sum::<i64>() != 0 {
            return None;
        }
        let mut s = Simplex::new(self);
        s.run()?;
        let flow = s.flow[..self.n_arcs()].to_vec();
        if s.flow[self.n_arcs()..].iter().any(|&f| f != 0) {
            return None;
        }
        let cost = flow.iter().zip(&self.cost).map(|(f, c)| f * c).sum();
        Some(FlowSolution { flow, cost })
    }
}

struct Simplex {
    n_real_arcs: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    flow: Vec<i64>,
    state: Vec<i8>,
    pi: Vec<i64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    // +1 when the pred arc points from the node to its parent
    pred_dir: Vec<i64>,
    depth: Vec<usize>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
}

impl Simplex {
    fn new(g: &MinCostFlow) -> Self {
        let n = g.n_nodes();
        let m = g.n_arcs();
        let root = n;
        let art_cost = (g.cost.iter().map(|c| c.abs()).max().unwrap_or(0) + 1) * (n as i64 + 1);
        let mut s = Simplex {
            n_real_arcs: m,
            src: g.src.clone(),
            dst: g.dst.clone(),
            cap: g.cap.clone(),
            cost: g.cost.clone(),
            flow: vec![0; m + n],
            state: vec![LOWER; m + n],
            pi: vec![0; n + 1],
            parent: vec![NONE; n + 1],
            pred: vec![NONE; n + 1],
            pred_dir: vec![0; n + 1],
            depth: vec![0; n + 1],
            first_child: vec![NONE; n + 1],
            next_sib: vec![NONE; n + 1],
            prev_sib: vec![NONE; n + 1],
        };
        for v in 0..n {
            let e = m + v;
            let b = g.supply[v];
            s.cap.push(INF);
            s.state[e] = TREE;
            if b >= 0 {
                s.src.push(v);
                s.dst.push(root);
                s.flow[e] = b;
                s.cost.push(0);
                s.pred_dir[v] = 1;
            } else {
                s.src.push(root);
                s.dst.push(v);
                s.flow[e] = -b;
                s.cost.push(art_cost);
                s.pi[v] = art_cost;
                s.pred_dir[v] = -1;
            }
            s.pred[v] = e;
            s.depth[v] = 1;
            s.attach(root, v);
        }
        s
    }

    fn attach(&mut self, p: usize, c: usize) {
        self.parent[c] = p;
        let first = self.first_child[p];
        self.next_sib[c] = first;
        self.prev_sib[c] = NONE;
        if first != NONE {
            self.prev_sib[first] = c;
        }
        self.first_child[p] = c;
    }

    fn detach(&mut self, c: usize) {
        let p = self.parent[c];
        let (prev, next) = (self.prev_sib[c], self.next_sib[c]);
        if prev != NONE {
            self.next_sib[prev] = next;
        } else {
            self.first_child[p] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.parent[c] = NONE;
    }

    fn reduced(&self, e: usize) -> i64 {
        self.cost[e] + self.pi[self.src[e]] - self.pi[self.dst[e]]
    }

    fn run(&mut self) -> Option<()> {
        let m = self.n_real_arcs;
        if m == 0 {
            return Some(());
        }
        let block = ((m as f64).sqrt() as usize).max(10);
        let mut next_arc = 0;
        loop {
            // block search for the most violating arc
            let mut entering = NONE;
            let mut best = 0;
            let mut left = block;
            let mut e = next_arc;
            for _ in 0..m {
                let c = self.state[e] as i64 * self.reduced(e);
                if c < best {
                    best = c;
                    entering = e;
                }
                e += 1;
                if e == m {
                    e = 0;
                }
                left -= 1;
                if left == 0 {
                    if entering != NONE {
                        break;
                    }
                    left = block;
                }
            }
            if entering == NONE {
                return Some(());
            }
            next_arc = e;
            self.pivot(entering)?;
        }
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] > self.depth[b] {
                a = self.parent[a];
            } else if self.depth[b] > self.depth[a] {
                b = self.parent[b];
            } else {
                a = self.parent[a];
                b = self.parent[b];
            }
        }
        a
    }

    fn pivot(&mut self, in_arc: usize) -> Option<()> {
        let join = self.join(self.src[in_arc], self.dst[in_arc]);
        let (first, second) = if self.state[in_arc] == LOWER {
            (self.src[in_arc], self.dst[in_arc])
        } else {
            (self.dst[in_arc], self.src[in_arc])
        };

        let mut delta = self.cap[in_arc];
        let mut side = 0;
        let mut u_out = NONE;
        let mut u = first;
        while u != join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == -1 {
                residual(self.cap[e], self.flow[e])
            } else {
                self.flow[e]
            };
            if d < delta {
                delta = d;
                u_out = u;
                side = 1;
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == 1 {
                residual(self.cap[e], self.flow[e])
            } else {
                self.flow[e]
            };
            if d <= delta {
                delta = d;
                u_out = u;
                side = 2;
            }
            u = self.parent[u];
        }
        if delta >= INF {
            // negative cycle of unbounded capacity
            return None;
        }

        if delta > 0 {
            let val = self.state[in_arc] as i64 * delta;
            self.flow[in_arc] += val;
            let mut u = self.src[in_arc];
            while u != join {
                self.flow[self.pred[u]] -= self.pred_dir[u] * val;
                u = self.parent[u];
            }
            u = self.dst[in_arc];
            while u != join {
                self.flow[self.pred[u]] += self.pred_dir[u] * val;
                u = self.parent[u];
            }
        }

        if side == 0 {
            self.state[in_arc] = -self.state[in_arc];
            return Some(());
        }
        let (u_in, v_in) = if side == 1 { (first, second) } else { (second, first) };
        self.rehang(in_arc, u_in, v_in, u_out);
        Some(())
    }

    /// Removes the pred arc of `u_out` and hangs its subtree, re-rooted at
    /// `u_in`, below `v_in` through `in_arc`.
    fn rehang(&mut self, in_arc: usize, u_in: usize, v_in: usize, u_out: usize) {
        let out_arc = self.pred[u_out];
        let mut path = vec![u_in];
        while *path.last().unwrap() != u_out {
            path.push(self.parent[*path.last().unwrap()]);
        }
        let old_pred: Vec<usize> = path.iter().map(|&w| self.pred[w]).collect();
        for &w in &path {
            self.detach(w);
        }
        for j in 1..path.len() {
            let (w, below) = (path[j], path[j - 1]);
            let e = old_pred[j - 1];
            self.pred[w] = e;
            self.pred_dir[w] = if self.src[e] == w { 1 } else { -1 };
            self.attach(below, w);
        }
        self.pred[u_in] = in_arc;
        self.pred_dir[u_in] = if self.src[in_arc] == u_in { 1 } else { -1 };
        self.attach(v_in, u_in);

        self.state[in_arc] = TREE;
        self.state[out_arc] = if self.flow[out_arc] == 0 { LOWER } else { UPPER };

        let target = if self.src[in_arc] == u_in {
            self.pi[v_in] - self.cost[in_arc]
        } else {
            self.pi[v_in] + self.cost[in_arc]
        };
        let sigma = target - self.pi[u_in];
        let mut stack = vec![u_in];
        while let Some(x) = stack.pop() {
            self.depth[x] = self.depth[self.parent[x]] + 1;
            self.pi[x] += sigma;
            let mut c = self.first_child[x];
            while c != NONE {
                stack.push(c);
                c = self.next_sib[c];
            }
        }
    }
}

fn residual(cap: i64, flow: i64) -> i64 {
    if cap >= INF {
        INF
    } else {
        cap - flow
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Successive shortest paths with Bellman-Ford on the residual graph.
    fn ssp(n: usize, arcs: &[(usize, usize, i64, i64)], supply: &[i64]) -> Option<i64> {
        let s = n;
        let t = n + 1;
        let mut edges: Vec<(usize, usize, i64, i64)> = Vec::new();
        let add = |a: usize, b: usize, cap: i64, cost: i64, edges: &mut Vec<_>| {
            edges.push((a, b, cap, cost));
            edges.push((b, a, 0, -cost));
        };
        for &(a, b, c, w) in arcs {
            add(a, b, c, w, &mut edges);
        }
        let mut need = 0;
        for (v, &b) in supply.iter().enumerate() {
            if b > 0 {
                add(s, v, b, 0, &mut edges);
                need += b;
            } else if b < 0 {
                add(v, t, -b, 0, &mut edges);
            }
        }
        let nn = n + 2;
        let mut total = 0;
        let mut sent = 0;
        while sent < need {
            let mut dist = vec![i64::MAX; nn];
            let mut via = vec![usize::MAX; nn];
            dist[s] = 0;
            for _ in 0..nn {
                let mut changed = false;
                for (k, &(a, b, cap, w)) in edges.iter().enumerate() {
                    if cap > 0 && dist[a] != i64::MAX && dist[a] + w < dist[b] {
                        dist[b] = dist[a] + w;
                        via[b] = k;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[t] == i64::MAX {
                return None;
            }
            let mut push = need - sent;
            let mut v = t;
            while v != s {
                push = push.min(edges[via[v]].2);
                v = edges[via[v]].0;
            }
            v = t;
            while v != s {
                let k = via[v];
                edges[k].2 -= push;
                edges[k ^ 1].2 += push;
                v = edges[k].0;
            }
            total += push * dist[t];
            sent += push;
        }
        Some(total)
    }

    #[test]
    fn matches_shortest_path_oracle_on_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut feasible = 0;
        for _ in 0..300 {
            let n = rng.random_range(2..9);
            let n_arcs = rng.random_range(1..25);
            let arcs: Vec<_> = (0..n_arcs)
                .map(|_| {
                    let a = rng.random_range(0..n);
                    let mut b = rng.random_range(0..n);
                    if a == b {
                        b = (b + 1) % n;
                    }
                    (a, b, rng.random_range(0..6), rng.random_range(0..20))
                })
                .collect();
            let mut supply = vec![0i64; n];
            for _ in 0..rng.random_range(1..4) {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let k = rng.random_range(1..5);
                supply[a] += k;
                supply[b] -= k;
            }
            let mut g = MinCostFlow::new(n);
            for &(a, b, c, w) in &arcs {
                g.add_arc(a, b, c, w);
            }
            for (v, &b) in supply.iter().enumerate() {
                g.set_supply(v, b);
            }
            let got = g.solve();
            let want = ssp(n, &arcs, &supply);
            assert_eq!(got.as_ref().map(|s| s.cost), want, "arcs {arcs:?} supply {supply:?}");
            if let Some(sol) = got {
                feasible += 1;
                let mut bal = supply.clone();
                for (k, &(a, b, c, _)) in arcs.iter().enumerate() {
                    assert!((0..=c).contains(&sol.flow[k]));
                    bal[a] -= sol.flow[k];
                    bal[b] += sol.flow[k];
                }
                assert!(bal.iter().all(|&x| x == 0));
            }
        }
        assert!(feasible > 50);
    }

    #[test]
    fn unbalanced_or_disconnected_is_infeasible() {
        let mut g = MinCostFlow::new(2);
        g.set_supply(0, 1);
        assert!(g.solve().is_none());
        g.set_supply(1, -1);
        assert!(g.solve().is_none());
        g.add_arc(0, 1, 1, 3);
        assert_eq!(g.solve().unwrap().cost, 3);
    }

    #[test]
    fn negative_costs_on_bounded_arcs() {
        let mut g = MinCostFlow::new(3);
        g.set_supply(0, 2);
        g.set_supply(2, -2);
        g.add_arc(0, 1, 2, -5);
        g.add_arc(1, 2, 1, 1);
        g.add_arc(0, 2, 2, 0);
        g.add_arc(1, 0, 2, 0);
        // the 0 -> 1 -> 0 loop is worth 2 * -5; both units then go 0 -> 2 for free
        assert_eq!(g.solve().unwrap().cost, -10);
    }
}
