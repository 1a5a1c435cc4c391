//! Pairwise-swap ordering search followed by a topological sort.

use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_COMPONENTS: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OrderingError {
    #[error("need between 2 and {max} items, got {got}")]
    BadSize { got: usize, max: usize },
    #[error("duplicate item in ordering input")]
    Duplicate,
    #[error("inconsistent pairwise preferences: cycle {0}")]
    Cycle(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingOutcome<T> {
    pub order: Vec<T>,
    /// Directed preference edges `(a, b)`: `a` should precede `b`.
    pub edges: Vec<(T, T)>,
    pub baseline_loss: f64,
    /// Swapped arrangements evaluated; always `k(k-1)/2`.
    pub swap_evaluations: usize,
}

/// Learns an ordering of `items`, whose slice order is the default
/// arrangement. Every pair is swapped once in the default arrangement; a
/// swap that lowers the loss by more than `epsilon` records "second before
/// first", a swap that raises it by more than `epsilon` records the reverse.
/// Nodes without constraints keep their default relative order.
pub fn train_ordering<T, F>(items: &[T], mut eval_loss: F, epsilon: f64, max_items: usize) -> Result<OrderingOutcome<T>, OrderingError>
where
    T: Copy + Eq + Hash + Debug,
    F: FnMut(&[T]) -> f64,
{
    let k = items.len();
    if !(2..=max_items).contains(&k) {
        return Err(OrderingError::BadSize { got: k, max: max_items });
    }
    let pos: HashMap<T, usize> = items.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    if pos.len() != k {
        return Err(OrderingError::Duplicate);
    }
    let baseline = eval_loss(items);
    let mut edges = Vec::new();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut swaps = 0;
    for i in 0..k {
        for j in i + 1..k {
            let mut arr = items.to_vec();
            arr.swap(i, j);
            let swapped = eval_loss(&arr);
            swaps += 1;
            let (from, to) = if baseline - swapped > epsilon {
                (j, i)
            } else if swapped - baseline > epsilon {
                (i, j)
            } else {
                continue;
            };
            succ[from].push(to);
            edges.push((items[from], items[to]));
        }
    }
    let order = topo_sort(&succ).map_err(|cycle| {
        OrderingError::Cycle(
            cycle
                .iter()
                .map(|&n| format!("{:?}", items[n]))
                .collect::<Vec<_>>()
                .join(" -> "),
        )
    })?;
    Ok(OrderingOutcome {
        order: order.into_iter().map(|n| items[n]).collect(),
        edges,
        baseline_loss: baseline,
        swap_evaluations: swaps,
    })
}

/// Kahn's algorithm picking the smallest ready index; on failure returns a cycle.
fn topo_sort(succ: &[Vec<usize>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(&v) = ready.iter().next() {
        ready.remove(&v);
        out.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.insert(w);
            }
        }
    }
    if out.len() == n {
        return Ok(out);
    }
    // walk predecessors inside the leftover subgraph until a node repeats
    let left: Vec<bool> = (0..n).map(|i| indeg[i] > 0).collect();
    let mut pred = vec![usize::MAX; n];
    for (v, ss) in succ.iter().enumerate() {
        for &w in ss {
            if left[v] && left[w] {
                pred[w] = v;
            }
        }
    }
    let start = (0..n).find(|&i| left[i]).unwrap();
    let mut seen = vec![false; n];
    let mut v = start;
    while !seen[v] {
        seen[v] = true;
        v = pred[v];
    }
    let mut cycle = vec![v];
    let mut u = pred[v];
    while u != v {
        cycle.push(u);
        u = pred[u];
    }
    cycle.reverse();
    cycle.push(v);
    Err(cycle)
}
