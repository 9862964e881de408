//! Highly-connected-subgraphs clustering.
//!
//! A connected subgraph with `n` nodes is accepted as a cluster when its
//! unweighted edge connectivity (global minimum cut, Stoer-Wagner with unit
//! capacities) exceeds `n / 2`; otherwise it is split along the minimum cut
//! and both sides are processed recursively. Singletons are trivially
//! accepted. The recursion records a trace of every accept/split decision so
//! tests can verify each step against a brute-force minimum cut.

use super::FusionGraph;

#[derive(Debug, Clone)]
pub enum HcsStep {
    /// Subgraph accepted as a cluster. `connectivity` is `None` for
    /// singletons, where no cut exists.
    Accept {
        nodes: Vec<u32>,
        connectivity: Option<u64>,
    },
    /// Subgraph split along a minimum cut of value `cut_value`.
    Split {
        nodes: Vec<u32>,
        cut_value: u64,
        side_a: Vec<u32>,
        side_b: Vec<u32>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct HcsOutcome {
    /// Clusters with at least `min_support` nodes, ordered by smallest
    /// member; node ids sorted within each cluster.
    pub clusters: Vec<Vec<u32>>,
    /// Nodes of clusters below the support floor.
    pub discarded: Vec<u32>,
    pub trace: Vec<HcsStep>,
}

/// Global minimum cut of an undirected unit-capacity graph given as a dense
/// adjacency matrix over `0..n`. Returns the cut value and one side of the
/// partition. Deterministic: maximum-adjacency ties break on the smaller
/// vertex index. A disconnected graph yields a zero cut.
pub fn stoer_wagner(n: usize, adjacency: &[Vec<u64>]) -> (u64, Vec<usize>) {
    assert!(n >= 2, "min cut needs at least two vertices");
    let mut weight: Vec<Vec<u64>> = adjacency.to_vec();
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut vertices: Vec<usize> = (0..n).collect();
    let mut best_cut = u64::MAX;
    let mut best_side: Vec<usize> = Vec::new();

    while vertices.len() > 1 {
        // Maximum adjacency search.
        let mut added = vec![false; vertices.len()];
        let mut attach = vec![0u64; vertices.len()];
        let mut order: Vec<usize> = Vec::with_capacity(vertices.len());
        for _ in 0..vertices.len() {
            let mut pick = usize::MAX;
            for (pos, &v) in vertices.iter().enumerate() {
                if added[pos] {
                    continue;
                }
                let better = pick == usize::MAX
                    || attach[pos] > attach[pick]
                    || (attach[pos] == attach[pick] && v < vertices[pick]);
                if better {
                    pick = pos;
                }
            }
            added[pick] = true;
            order.push(pick);
            let v = vertices[pick];
            for (pos, &u) in vertices.iter().enumerate() {
                if !added[pos] {
                    attach[pos] += weight[v][u];
                }
            }
        }

        let t_pos = *order.last().unwrap();
        let s_pos = order[order.len() - 2];
        let cut_of_phase = attach[t_pos];
        let t = vertices[t_pos];
        let s = vertices[s_pos];
        if cut_of_phase < best_cut {
            best_cut = cut_of_phase;
            best_side = groups[t].clone();
        }

        // Merge t into s.
        for u in 0..n {
            let w = weight[t][u];
            weight[s][u] += w;
            weight[u][s] += w;
        }
        weight[s][s] = 0;
        let moved = std::mem::take(&mut groups[t]);
        groups[s].extend(moved);
        vertices.remove(t_pos);
    }
    (best_cut, best_side)
}

fn recurse(
    nodes: Vec<u32>,
    neighbors: &[Vec<u32>],
    trace: &mut Vec<HcsStep>,
    clusters: &mut Vec<Vec<u32>>,
) {
    let n = nodes.len();
    if n == 1 {
        trace.push(HcsStep::Accept {
            nodes: nodes.clone(),
            connectivity: None,
        });
        clusters.push(nodes);
        return;
    }

    let local: std::collections::HashMap<u32, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let mut adjacency = vec![vec![0u64; n]; n];
    for (i, &v) in nodes.iter().enumerate() {
        for u in &neighbors[v as usize] {
            if let Some(&j) = local.get(u) {
                adjacency[i][j] = 1;
            }
        }
    }

    let (cut, side) = stoer_wagner(n, &adjacency);
    // Highly connected: edge connectivity strictly above n / 2.
    if 2 * cut > n as u64 {
        trace.push(HcsStep::Accept {
            nodes: nodes.clone(),
            connectivity: Some(cut),
        });
        clusters.push(nodes);
        return;
    }

    let side_set: std::collections::HashSet<usize> = side.iter().copied().collect();
    let mut side_a: Vec<u32> = Vec::with_capacity(side.len());
    let mut side_b: Vec<u32> = Vec::with_capacity(n - side.len());
    for (i, &v) in nodes.iter().enumerate() {
        if side_set.contains(&i) {
            side_a.push(v);
        } else {
            side_b.push(v);
        }
    }
    trace.push(HcsStep::Split {
        nodes,
        cut_value: cut,
        side_a: side_a.clone(),
        side_b: side_b.clone(),
    });
    recurse(side_a, neighbors, trace, clusters);
    recurse(side_b, neighbors, trace, clusters);
}

/// Runs HCS on the graph binarized at `w_min` supporters per edge. Clusters
/// smaller than `min_support` are moved to `discarded`.
pub fn hcs_cluster(graph: &FusionGraph, w_min: u32, min_support: usize) -> HcsOutcome {
    let n = graph.node_count;
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (&(a, b), &w) in graph.edges.iter().zip(&graph.weights) {
        if w >= w_min {
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
    }

    // Connected components of the binarized graph, ordered by smallest node.
    let mut component_of = vec![usize::MAX; n];
    let mut components: Vec<Vec<u32>> = Vec::new();
    for start in 0..n {
        if component_of[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![start as u32];
        let mut members = Vec::new();
        component_of[start] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for &u in &neighbors[v as usize] {
                if component_of[u as usize] == usize::MAX {
                    component_of[u as usize] = id;
                    stack.push(u);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }

    // Each component recurses independently.
    let per_component: Vec<(Vec<Vec<u32>>, Vec<HcsStep>)> =
        crate::par::map_slice(&components, |component| {
            let mut trace = Vec::new();
            let mut clusters = Vec::new();
            recurse(component.clone(), &neighbors, &mut trace, &mut clusters);
            (clusters, trace)
        });

    let mut outcome = HcsOutcome::default();
    for (clusters, trace) in per_component {
        for mut cluster in clusters {
            cluster.sort_unstable();
            if cluster.len() >= min_support {
                outcome.clusters.push(cluster);
            } else {
                outcome.discarded.extend(cluster);
            }
        }
        outcome.trace.extend(trace);
    }
    outcome.clusters.sort_by_key(|c| c[0]);
    outcome.discarded.sort_unstable();
    outcome
}
