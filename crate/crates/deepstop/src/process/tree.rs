//! Finite scenario trees with an exact dynamic-programming solver.
//!
//! Trees serve two purposes: small calibration problems whose stopping value
//! is known exactly, and user-defined finite-state test problems loaded from
//! JSON. The engine-facing feature vector of a node is its declared feature
//! list with the payoff appended, so the reward is a pure function of the
//! features like in every other family.

use serde::{Deserialize, Serialize};

use super::{empty_batch, PathBatch, PathOrigin};
use crate::rng::Stream;
use crate::{Error, Result};

const MAX_NODES: usize = 1_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeNode {
    pub step: usize,
    pub features: Vec<f64>,
    pub payoff: f64,
    #[serde(default)]
    pub children: Vec<(f64, u32)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleTree {
    pub n_steps: usize,
    pub feature_dim_raw: usize,
    pub nodes: Vec<TreeNode>,
    /// Initial distribution over step-0 nodes. A single entry makes the
    /// start deterministic.
    pub roots: Vec<(f64, u32)>,
}

/// Exact solution of the stopping problem on a tree.
#[derive(Clone, Debug)]
pub struct DpSolution {
    /// Value at time 0, including the option to stop immediately.
    pub value: f64,
    /// Value function per node id.
    pub snell: Vec<f64>,
    /// Optimal decision per node id; ties break toward stopping.
    pub stop: Vec<bool>,
}

impl OracleTree {
    pub fn new(
        n_steps: usize,
        feature_dim_raw: usize,
        nodes: Vec<TreeNode>,
        roots: Vec<(f64, u32)>,
    ) -> Result<Self> {
        let tree = OracleTree { n_steps, feature_dim_raw, nodes, roots };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::MalformedTree("tree has no nodes".into()));
        }
        if self.nodes.len() > MAX_NODES {
            return Err(Error::MalformedTree(format!(
                "{} nodes exceed the {MAX_NODES} node limit",
                self.nodes.len()
            )));
        }
        if self.feature_dim_raw == 0 {
            return Err(Error::MalformedTree("nodes need at least one feature".into()));
        }
        check_distribution(&self.roots, self.nodes.len(), "root distribution")?;
        for (p, id) in &self.roots {
            let _ = p;
            if self.nodes[*id as usize].step != 0 {
                return Err(Error::MalformedTree(format!("root node {id} is not at step 0")));
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.features.len() != self.feature_dim_raw {
                return Err(Error::MalformedTree(format!(
                    "node {id} has {} features, expected {}",
                    node.features.len(),
                    self.feature_dim_raw
                )));
            }
            if !node.payoff.is_finite() || node.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::MalformedTree(format!("node {id} has non-finite data")));
            }
            if node.step > self.n_steps {
                return Err(Error::MalformedTree(format!(
                    "node {id} sits at step {} beyond horizon {}",
                    node.step, self.n_steps
                )));
            }
            if node.step == self.n_steps {
                if !node.children.is_empty() {
                    return Err(Error::MalformedTree(format!("leaf node {id} has children")));
                }
            } else {
                if node.children.is_empty() {
                    return Err(Error::MalformedTree(format!(
                        "interior node {id} at step {} has no children",
                        node.step
                    )));
                }
                check_distribution(
                    &node.children,
                    self.nodes.len(),
                    &format!("children of node {id}"),
                )?;
                for (_, c) in &node.children {
                    if self.nodes[*c as usize].step != node.step + 1 {
                        return Err(Error::MalformedTree(format!(
                            "child {c} of node {id} is not one step deeper"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: OracleTree =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn start_features(&self) -> Option<Vec<f64>> {
        if self.roots.len() == 1 {
            Some(self.engine_features(self.roots[0].1))
        } else {
            None
        }
    }

    fn engine_features(&self, id: u32) -> Vec<f64> {
        let node = &self.nodes[id as usize];
        let mut f = node.features.clone();
        f.push(node.payoff);
        f
    }

    fn sample(&self, dist: &[(f64, u32)], u: f64) -> u32 {
        let mut acc = 0.0;
        for (p, id) in dist {
            acc += p;
            if u <= acc {
                return *id;
            }
        }
        dist.last().expect("validated non-empty").1
    }

    pub(crate) fn simulate(&self, count: usize, first: usize, stream: Stream) -> Result<PathBatch> {
        let f = self.feature_dim_raw + 1;
        let mut batch = empty_batch(count, 0, self.n_steps, f);
        let mut node_ids = ndarray::Array2::<u32>::zeros((count, self.n_steps + 1));
        for k in 0..count {
            let s = stream.derive((first + k) as u64);
            let mut id = self.sample(&self.roots, s.uniform(0));
            self.record(&mut batch, &mut node_ids, k, 0, id);
            for step in 1..=self.n_steps {
                id = self.sample(&self.nodes[id as usize].children, s.uniform(step));
                self.record(&mut batch, &mut node_ids, k, step, id);
            }
        }
        batch.nodes = Some(node_ids);
        Ok(batch)
    }

    pub(crate) fn continuations(
        &self,
        origin: &PathOrigin<'_>,
        count: usize,
        stream: Stream,
    ) -> Result<PathBatch> {
        let n0 = origin.step;
        let f = self.feature_dim_raw + 1;
        let mut batch = empty_batch(count, n0 + 1, self.n_steps, f);
        if n0 == self.n_steps {
            return Ok(batch);
        }
        let start = origin.node.ok_or_else(|| {
            Error::InvalidSpec("tree continuations need the origin node id".into())
        })?;
        let mut node_ids = ndarray::Array2::<u32>::zeros((count, self.n_steps - n0));
        for j in 0..count {
            let s = stream.derive(j as u64);
            let mut id = start;
            for step in (n0 + 1)..=self.n_steps {
                id = self.sample(&self.nodes[id as usize].children, s.uniform(step - n0 - 1));
                let local = step - n0 - 1;
                for (q, &x) in self.nodes[id as usize].features.iter().enumerate() {
                    batch.states[[j, local, q]] = x;
                }
                batch.states[[j, local, self.feature_dim_raw]] = self.nodes[id as usize].payoff;
                batch.rewards[[j, local]] = self.nodes[id as usize].payoff;
                node_ids[[j, local]] = id;
            }
        }
        batch.nodes = Some(node_ids);
        Ok(batch)
    }

    fn record(
        &self,
        batch: &mut PathBatch,
        ids: &mut ndarray::Array2<u32>,
        k: usize,
        step: usize,
        id: u32,
    ) {
        let node = &self.nodes[id as usize];
        for (q, &x) in node.features.iter().enumerate() {
            batch.states[[k, step, q]] = x;
        }
        batch.states[[k, step, self.feature_dim_raw]] = node.payoff;
        batch.rewards[[k, step]] = node.payoff;
        ids[[k, step]] = id;
    }

    /// Backward induction for the exact stopping value. Ties break toward
    /// stopping, matching the inclusive threshold of the hard decisions.
    pub fn solve_dp(&self) -> DpSolution {
        let mut snell = vec![0.0; self.nodes.len()];
        let mut stop = vec![false; self.nodes.len()];
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&id| std::cmp::Reverse(self.nodes[id].step));
        for id in order {
            let node = &self.nodes[id];
            if node.step == self.n_steps {
                snell[id] = node.payoff;
                stop[id] = true;
            } else {
                let cont: f64 = node.children.iter().map(|&(p, c)| p * snell[c as usize]).sum();
                if node.payoff >= cont {
                    snell[id] = node.payoff;
                    stop[id] = true;
                } else {
                    snell[id] = cont;
                    stop[id] = false;
                }
            }
        }
        let value = self.roots.iter().map(|&(p, id)| p * snell[id as usize]).sum();
        DpSolution { value, snell, stop }
    }

    /// Value of following a fixed per-node stopping rule from each node on.
    /// Leaves always stop.
    pub fn rule_values(&self, stop: &[bool]) -> Vec<f64> {
        let mut values = vec![0.0; self.nodes.len()];
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&id| std::cmp::Reverse(self.nodes[id].step));
        for id in order {
            let node = &self.nodes[id];
            if node.step == self.n_steps || stop[id] {
                values[id] = node.payoff;
            } else {
                values[id] = node.children.iter().map(|&(p, c)| p * values[c as usize]).sum();
            }
        }
        values
    }

    /// Expected value of `values` over the children of `id`: the exact
    /// continuation value of the rule that produced `values`.
    pub fn continuation_of(&self, values: &[f64], id: u32) -> f64 {
        self.nodes[id as usize].children.iter().map(|&(p, c)| p * values[c as usize]).sum()
    }

    pub fn initial_expectation(&self, values: &[f64]) -> f64 {
        self.roots.iter().map(|&(p, id)| p * values[id as usize]).sum()
    }

    // ---- Builders ----

    /// Non-recombining binomial tree on a single asset with a discounted
    /// put or call exercise payoff.
    pub fn binomial(
        s0: f64,
        up: f64,
        down: f64,
        p_up: f64,
        rate: f64,
        maturity: f64,
        n_steps: usize,
        strike: f64,
        is_put: bool,
    ) -> Result<Self> {
        if n_steps > 19 {
            return Err(Error::MalformedTree("binomial depth capped at 19 (node budget)".into()));
        }
        if !(up > 0.0 && down > 0.0 && up > down) {
            return Err(Error::MalformedTree("need up > down > 0".into()));
        }
        if !(0.0..=1.0).contains(&p_up) {
            return Err(Error::MalformedTree("p_up must lie in [0, 1]".into()));
        }
        let dt = if n_steps == 0 { 0.0 } else { maturity / n_steps as f64 };
        let payoff = |step: usize, price: f64| -> f64 {
            let intrinsic = if is_put { strike - price } else { price - strike };
            (-rate * step as f64 * dt).exp() * intrinsic.max(0.0)
        };
        let mut nodes = Vec::new();
        // Level n occupies ids 2^n - 1 .. 2^{n+1} - 1; child ids follow the
        // usual heap layout.
        for step in 0..=n_steps {
            let width = 1usize << step;
            for idx in 0..width {
                let ups = (idx as u32).count_ones() as i32;
                let downs = step as i32 - ups;
                let price = s0 * up.powi(ups) * down.powi(downs);
                let id = (width - 1 + idx) as u32;
                debug_assert_eq!(id as usize, nodes.len());
                let children = if step == n_steps {
                    vec![]
                } else {
                    let base = (2 * width - 1 + 2 * idx) as u32;
                    // Child idx bit layout: appending a 1 bit marks an up move.
                    vec![(1.0 - p_up, base), (p_up, base + 1)]
                };
                nodes.push(TreeNode {
                    step,
                    features: vec![price],
                    payoff: payoff(step, price),
                    children,
                });
            }
        }
        OracleTree::new(n_steps, 1, nodes, vec![(1.0, 0)])
    }

    /// Two-step coin toss: X_1 uniform on {-1, +1}, reward x at step 1 and 0
    /// everywhere else. The stopping value is 0.5.
    pub fn two_point_chain() -> Self {
        let nodes = vec![
            TreeNode {
                step: 0,
                features: vec![0.0],
                payoff: 0.0,
                children: vec![(0.5, 1), (0.5, 2)],
            },
            TreeNode { step: 1, features: vec![1.0], payoff: 1.0, children: vec![(1.0, 3)] },
            TreeNode { step: 1, features: vec![-1.0], payoff: -1.0, children: vec![(1.0, 4)] },
            TreeNode { step: 2, features: vec![1.0], payoff: 0.0, children: vec![] },
            TreeNode { step: 2, features: vec![-1.0], payoff: 0.0, children: vec![] },
        ];
        OracleTree::new(2, 1, nodes, vec![(1.0, 0)]).expect("static tree is well formed")
    }

    /// Deterministic chain with the given per-step rewards.
    pub fn deterministic_chain(rewards: &[f64]) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::MalformedTree("chain needs at least one step".into()));
        }
        let n = rewards.len() - 1;
        let nodes = rewards
            .iter()
            .enumerate()
            .map(|(step, &g)| TreeNode {
                step,
                features: vec![step as f64],
                payoff: g,
                children: if step < n { vec![(1.0, step as u32 + 1)] } else { vec![] },
            })
            .collect();
        OracleTree::new(n, 1, nodes, vec![(1.0, 0)])
    }
}

fn check_distribution(dist: &[(f64, u32)], n_nodes: usize, what: &str) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::MalformedTree(format!("{what} is empty")));
    }
    let mut total = 0.0;
    for &(p, id) in dist {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::MalformedTree(format!("{what} has negative or non-finite weight")));
        }
        if id as usize >= n_nodes {
            return Err(Error::MalformedTree(format!("{what} references missing node {id}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::MalformedTree(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}
