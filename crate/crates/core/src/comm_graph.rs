//! Communication graph over agents and targets, rebuilt every time-step.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Agent,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: usize,
}

impl EntityId {
    pub const fn agent(index: usize) -> Self {
        Self {
            kind: EntityKind::Agent,
            index,
        }
    }

    pub const fn target(index: usize) -> Self {
        Self {
            kind: EntityKind::Target,
            index,
        }
    }

    pub fn is_agent(&self) -> bool {
        self.kind == EntityKind::Agent
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EntityKind::Agent => write!(f, "A{}", self.index),
            EntityKind::Target => write!(f, "T{}", self.index),
        }
    }
}

/// Snapshot of who can talk to whom. Edge `(u, v)` iff `‖p_u - p_v‖ ≤ comm_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicCommGraph {
    ids: Vec<EntityId>,
    positions: Vec<[f64; 2]>,
    comm_range: f64,
    lookup: HashMap<EntityId, usize>,
    adjacency: Vec<Vec<usize>>,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl DynamicCommGraph {
    pub fn build(positions: &[(EntityId, [f64; 2])], comm_range: f64) -> Result<Self> {
        if !(comm_range > 0.0) || !comm_range.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "comm_range must be positive, got {comm_range}"
            )));
        }
        let mut lookup = HashMap::with_capacity(positions.len());
        for (k, (id, _)) in positions.iter().enumerate() {
            if lookup.insert(*id, k).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate entity {id}")));
            }
        }
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for u in 0..n {
            for v in (u + 1)..n {
                if distance(positions[u].1, positions[v].1) <= comm_range {
                    adjacency[u].push(v);
                    adjacency[v].push(u);
                }
            }
        }
        Ok(Self {
            ids: positions.iter().map(|(id, _)| *id).collect(),
            positions: positions.iter().map(|(_, p)| *p).collect(),
            comm_range,
            lookup,
            adjacency,
        })
    }

    pub fn comm_range(&self) -> f64 {
        self.comm_range
    }

    /// Radius `r` of the per-entity ball; two balls meet iff the centers are within `2r`.
    pub fn ball_radius(&self) -> f64 {
        self.comm_range / 2.0
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn position(&self, id: EntityId) -> Result<[f64; 2]> {
        Ok(self.positions[self.slot(id)?])
    }

    fn slot(&self, id: EntityId) -> Result<usize> {
        self.lookup.get(&id).copied().ok_or(Error::UnknownEntity(id))
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.lookup.contains_key(&id)
    }

    pub fn adjacent(&self, u: EntityId, v: EntityId) -> Result<bool> {
        let (a, b) = (self.slot(u)?, self.slot(v)?);
        Ok(self.adjacency[a].contains(&b))
    }

    /// Edges as ordered pairs `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> BTreeSet<(EntityId, EntityId)> {
        let mut out = BTreeSet::new();
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                let (a, b) = (self.ids[u], self.ids[v]);
                out.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
        out
    }

    /// Every entity adjacent to `id`, agents and targets alike, sorted.
    pub fn one_hop(&self, id: EntityId) -> Result<Vec<EntityId>> {
        let slot = self.slot(id)?;
        let mut out: Vec<EntityId> = self.adjacency[slot].iter().map(|&k| self.ids[k]).collect();
        out.sort();
        Ok(out)
    }

    /// Agent indices in the one-hop set of agent `index`, ascending.
    pub fn agent_neighbors(&self, index: usize) -> Result<Vec<usize>> {
        Ok(self
            .one_hop(EntityId::agent(index))?
            .into_iter()
            .filter(EntityId::is_agent)
            .map(|id| id.index)
            .collect())
    }

    pub fn largest_component_size(&self) -> usize {
        let n = self.ids.len();
        let mut dsu = Dsu::new(n);
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                dsu.union(u, v);
            }
        }
        (0..n).map(|u| dsu.size(u)).max().unwrap_or(0)
    }

    pub fn path_exists(&self, from: EntityId, to: EntityId) -> Result<bool> {
        let (start, goal) = (self.slot(from)?, self.slot(to)?);
        let mut seen = vec![false; self.ids.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            if u == goal {
                return Ok(true);
            }
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        Ok(false)
    }

    /// Hop count of a shortest path, if any.
    pub fn hops(&self, from: EntityId, to: EntityId) -> Result<Option<usize>> {
        let (start, goal) = (self.slot(from)?, self.slot(to)?);
        let mut dist = vec![usize::MAX; self.ids.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        Ok((dist[goal] != usize::MAX).then_some(dist[goal]))
    }
}

pub fn build_graph(positions: &[(EntityId, [f64; 2])], comm_range: f64) -> Result<DynamicCommGraph> {
    DynamicCommGraph::build(positions, comm_range)
}

struct Dsu {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }

    fn size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn agents(points: &[[f64; 2]]) -> Vec<(EntityId, [f64; 2])> {
        points.iter().enumerate().map(|(k, p)| (EntityId::agent(k), *p)).collect()
    }

    #[test]
    fn threshold_is_closed() {
        let g = build_graph(&agents(&[[0.0, 0.0], [0.2, 0.0]]), 0.20).unwrap();
        assert!(g.adjacent(EntityId::agent(0), EntityId::agent(1)).unwrap());
        let g = build_graph(&agents(&[[0.0, 0.0], [0.201, 0.0]]), 0.20).unwrap();
        assert!(!g.adjacent(EntityId::agent(0), EntityId::agent(1)).unwrap());
        assert!(build_graph(&agents(&[[0.0, 0.0]]), 0.0).is_err());
    }

    #[test]
    fn edges_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pts: Vec<[f64; 2]> = (0..6).map(|_| [rng.random(), rng.random()]).collect();
            let g = build_graph(&agents(&pts), 0.3).unwrap();
            let mut expected = BTreeSet::new();
            for i in 0..6 {
                for j in 0..6 {
                    let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                    if i < j && d <= 0.3 {
                        expected.insert((EntityId::agent(i), EntityId::agent(j)));
                    }
                }
            }
            assert_eq!(g.edges(), expected);
            for i in 0..6 {
                let nbrs = g.one_hop(EntityId::agent(i)).unwrap();
                let from_edges: Vec<EntityId> = expected
                    .iter()
                    .filter_map(|&(a, b)| {
                        if a.index == i {
                            Some(b)
                        } else if b.index == i {
                            Some(a)
                        } else {
                            None
                        }
                    })
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                assert_eq!(nbrs, from_edges);
            }
        }
    }

    #[test]
    fn one_hop_examples() {
        let g = build_graph(&agents(&[[0.0, 0.0], [5.0, 5.0]]), 0.2).unwrap();
        assert!(g.one_hop(EntityId::agent(0)).unwrap().is_empty());
        assert!(matches!(g.one_hop(EntityId::target(0)), Err(Error::UnknownEntity(_))));

        let g = build_graph(&agents(&[[0.0, 0.0], [0.1, 0.0], [0.05, 0.08]]), 0.2).unwrap();
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            assert_eq!(g.agent_neighbors(i).unwrap(), others);
        }
    }

    #[test]
    fn component_sizes() {
        let isolated: Vec<[f64; 2]> = (0..5).map(|k| [k as f64, 0.0]).collect();
        assert_eq!(build_graph(&agents(&isolated), 0.2).unwrap().largest_component_size(), 1);
        let clique: Vec<[f64; 2]> = (0..5).map(|k| [0.01 * k as f64, 0.0]).collect();
        assert_eq!(build_graph(&agents(&clique), 0.2).unwrap().largest_component_size(), 5);
        let two_triangles = [
            [0.0, 0.0],
            [0.1, 0.0],
            [0.05, 0.1],
            [2.0, 0.0],
            [2.1, 0.0],
            [2.05, 0.1],
            [5.0, 5.0],
        ];
        let g = build_graph(&agents(&two_triangles), 0.2).unwrap();
        assert_eq!(g.largest_component_size(), 3);
        assert_eq!(build_graph(&[], 0.2).unwrap().largest_component_size(), 0);
    }

    #[test]
    fn paths() {
        let t1 = EntityId::target(0);
        let t2 = EntityId::target(1);
        let g = build_graph(&[(t1, [0.0, 0.0]), (t2, [0.15, 0.0])], 0.2).unwrap();
        assert!(g.path_exists(t1, t2).unwrap());

        let g = build_graph(&[(t1, [0.0, 0.0]), (t2, [0.5, 0.0])], 0.2).unwrap();
        assert!(!g.path_exists(t1, t2).unwrap());

        let mut chain = vec![(t1, [0.0, 0.0])];
        for k in 0..3 {
            chain.push((EntityId::agent(k), [0.19 * (k + 1) as f64, 0.0]));
        }
        chain.push((t2, [0.76, 0.0]));
        let g = build_graph(&chain, 0.2).unwrap();
        assert!(g.path_exists(t1, t2).unwrap());
        assert_eq!(g.hops(t1, t2).unwrap(), Some(4));
        assert!(matches!(
            g.path_exists(t1, EntityId::target(7)),
            Err(Error::UnknownEntity(_))
        ));
    }

    proptest! {
        #[test]
        fn graph_properties(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..9),
            range in 0.05f64..0.5,
            grow in 0.0f64..0.3,
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let g = build_graph(&agents(&pts), range).unwrap();
            prop_assert_eq!(&g, &build_graph(&agents(&pts), range).unwrap());
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let (a, b) = (EntityId::agent(i), EntityId::agent(j));
                    prop_assert_eq!(g.adjacent(a, b).unwrap(), g.adjacent(b, a).unwrap());
                    if i == j {
                        prop_assert!(!g.adjacent(a, a).unwrap());
                    }
                    if let Some(h) = g.hops(a, b).unwrap() {
                        prop_assert!(g.path_exists(a, b).unwrap());
                        prop_assert!(g.largest_component_size() > h);
                    }
                }
            }
            let wider = build_graph(&agents(&pts), range + grow).unwrap();
            prop_assert!(g.edges().is_subset(&wider.edges()));
        }
    }
}
