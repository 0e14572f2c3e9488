//! Extraction of a discrete linkage from a converged design: binarized springs,
//! rigid links, revolute joints and mobility.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{NetworkSpring, SpringNetwork};
use crate::error::{Error, Result};
use crate::grid::{node_position, DesignVector, SolverParams, SphericalGrid};

/// Band of stiffness variables reported as not crisp.
pub const CRISP_BAND: (f64, f64) = (0.2, 0.8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarized {
    pub present: Vec<bool>,
    pub warnings: Vec<String>,
}

pub fn binarize(xi_k: &[f64], threshold: f64) -> Result<Binarized> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let present = xi_k.iter().map(|&x| x >= threshold).collect();
    let warnings = xi_k
        .iter()
        .enumerate()
        .filter(|(_, &x)| (CRISP_BAND.0..=CRISP_BAND.1).contains(&x))
        .map(|(m, x)| format!("spring {m} has intermediate stiffness variable {x:.4}"))
        .collect();
    Ok(Binarized { present, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    /// Grid blocks merged into this link; empty for the ground.
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub links: (usize, usize),
    /// Grid node the joint sits at, when extracted from a grid.
    #[serde(default)]
    pub node: Option<usize>,
    /// Unit axis through the origin in the undeformed configuration.
    pub axis: [f64; 3],
}

impl Joint {
    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismGraph {
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub ground_link: usize,
    pub input_link: usize,
    pub output_link: usize,
    pub dof: i64,
    /// Blocks dropped because they carry no load path.
    #[serde(default)]
    pub debris: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut i = i;
        while self.0[i] != r {
            let next = self.0[i];
            self.0[i] = r;
            i = next;
        }
        r
    }

    /// Joins two sets under the smaller root.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
        true
    }
}

/// Distinct nodes joining each pair of current sets.
fn pair_nodes(uf: &mut UnionFind, grid: &SphericalGrid, present: &[bool]) -> BTreeMap<(usize, usize), BTreeSet<usize>> {
    let mut pairs: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for (s, &on) in grid.springs.iter().zip(present) {
        if !on {
            continue;
        }
        let (a, b) = (uf.find(s.blocks.0), uf.find(s.blocks.1));
        if a != b {
            pairs.entry((a.min(b), a.max(b))).or_default().insert(s.node);
        }
    }
    pairs
}

/// Builds the linkage implied by the present springs. Block pairs held at two
/// or more distinct nodes are merged into one rigid link; pairs held at a single
/// node form a revolute joint there. Links without a load path to ground, and
/// links hanging from a single joint, are dropped.
pub fn build_linkage(
    grid: &SphericalGrid,
    design: &DesignVector,
    params: &SolverParams,
    present: &[bool],
) -> Result<MechanismGraph> {
    let nb = grid.n_blocks();
    let mut uf = UnionFind::new(nb);
    loop {
        let mut merged = false;
        for ((a, b), nodes) in pair_nodes(&mut uf, grid, present) {
            if nodes.len() >= 2 {
                merged |= uf.union(a, b);
            }
        }
        if !merged {
            break;
        }
    }

    // Candidate links keyed by root; ground is the extra vertex `nb`.
    let ground = nb;
    let mut edges: Vec<(usize, usize, usize)> = pair_nodes(&mut uf, grid, present)
        .into_iter()
        .map(|((a, b), nodes)| (a, b, *nodes.iter().next().unwrap()))
        .collect();
    let input_root = uf.find(grid.block_i);
    let output_root = uf.find(grid.block_a);
    edges.push((input_root.min(ground), input_root.max(ground), grid.anchor.node));

    let mut alive: BTreeSet<usize> = (0..nb).map(|b| uf.find(b)).collect();
    alive.insert(ground);

    let reachable = |alive: &BTreeSet<usize>, edges: &[(usize, usize, usize)]| {
        let mut seen = BTreeSet::from([ground]);
        let mut queue = VecDeque::from([ground]);
        while let Some(v) = queue.pop_front() {
            for &(a, b, _) in edges {
                let other = if a == v { b } else if b == v { a } else { continue };
                if alive.contains(&other) && seen.insert(other) {
                    queue.push_back(other);
                }
            }
        }
        seen
    };

    let seen = reachable(&alive, &edges);
    if !seen.contains(&output_root) {
        return Err(Error::Disconnected(format!("end-effector block {} has no path to ground", grid.block_a)));
    }
    alive.retain(|v| seen.contains(v));
    edges.retain(|(a, b, _)| alive.contains(a) && alive.contains(b));

    loop {
        let dangling: Vec<usize> = alive
            .iter()
            .copied()
            .filter(|&v| v != ground && v != input_root && v != output_root)
            .filter(|&v| edges.iter().filter(|(a, b, _)| *a == v || *b == v).count() <= 1)
            .collect();
        if dangling.is_empty() {
            break;
        }
        for v in &dangling {
            alive.remove(v);
        }
        edges.retain(|(a, b, _)| alive.contains(a) && alive.contains(b));
    }

    // Renumber: ground first, then links by smallest block.
    let mut ids = BTreeMap::from([(ground, 0usize)]);
    let mut links = vec![Link { id: 0, blocks: vec![] }];
    for root in alive.iter().copied().filter(|&v| v != ground) {
        let id = links.len();
        ids.insert(root, id);
        let blocks: Vec<usize> = (0..nb).filter(|&b| uf.find(b) == root).collect();
        links.push(Link { id, blocks });
    }
    let debris: Vec<usize> = (0..nb).filter(|&b| !alive.contains(&uf.find(b))).collect();

    let mut joints: Vec<Joint> = edges
        .iter()
        .map(|&(a, b, node)| {
            let (ia, ib) = (ids[&a], ids[&b]);
            Joint {
                links: (ia.min(ib), ia.max(ib)),
                node: Some(node),
                axis: node_position(node, design, grid, params).normalize().into(),
            }
        })
        .collect();
    joints.sort_by_key(|j| (j.links, j.node));

    let mut graph = MechanismGraph {
        links,
        joints,
        ground_link: 0,
        input_link: ids[&input_root],
        output_link: ids[&output_root],
        dof: 0,
        debris,
        warnings: vec![],
    };
    graph.dof = mobility(&graph);
    let loops = graph.loop_count();
    if loops > 0 {
        graph.warnings.push(format!("{loops} closed loop(s)"));
    }
    Ok(graph)
}

/// Spherical mobility `3 (L − 1) − 2 J`, with `L` counting the ground link.
pub fn mobility(graph: &MechanismGraph) -> i64 {
    3 * (graph.links.len() as i64 - 1) - 2 * graph.joints.len() as i64
}

impl MechanismGraph {
    /// Independent loops of the joint graph.
    pub fn loop_count(&self) -> usize {
        (self.joints.len() + 1).saturating_sub(self.links.len())
    }

    pub fn joints_of(&self, link: usize) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&j| self.joints[j].links.0 == link || self.joints[j].links.1 == link)
            .collect()
    }

    pub fn other_link(&self, joint: usize, link: usize) -> usize {
        let (a, b) = self.joints[joint].links;
        if a == link {
            b
        } else {
            a
        }
    }

    /// Joint indices along the path from ground to the output when the linkage
    /// is an open chain of `n` revolute joints.
    pub fn serial_chain(&self) -> Option<Vec<usize>> {
        if self.loop_count() != 0 {
            return None;
        }
        let mut chain = Vec::new();
        let mut link = self.ground_link;
        let mut prev_joint = None;
        while link != self.output_link {
            let next: Vec<usize> = self.joints_of(link).into_iter().filter(|&j| Some(j) != prev_joint).collect();
            if next.len() != 1 {
                return None;
            }
            chain.push(next[0]);
            prev_joint = Some(next[0]);
            link = self.other_link(next[0], link);
        }
        (chain.len() == self.joints.len()).then_some(chain)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.links.len();
        for (i, j) in self.joints.iter().enumerate() {
            if j.links.0 >= n || j.links.1 >= n || j.links.0 == j.links.1 {
                return Err(Error::Invalid(format!("joint {i} references invalid links {:?}", j.links)));
            }
            if (j.axis().norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("joint {i} axis is not unit length")));
            }
        }
        for l in [self.ground_link, self.input_link, self.output_link] {
            if l >= n {
                return Err(Error::Invalid(format!("link index {l} out of range")));
            }
        }
        let mut seen = BTreeSet::from([self.ground_link]);
        let mut queue = VecDeque::from([self.ground_link]);
        while let Some(v) = queue.pop_front() {
            for j in self.joints_of(v) {
                let o = self.other_link(j, v);
                if seen.insert(o) {
                    queue.push_back(o);
                }
            }
        }
        if !seen.contains(&self.output_link) {
            return Err(Error::Disconnected("output link has no path to ground".into()));
        }
        Ok(())
    }

    /// Spring network with one body per non-ground link and a stiff
    /// zero-length spring at each joint axis.
    pub fn network(&self, k_max: f64) -> SpringNetwork {
        let body_of = |link: usize| -> usize {
            if link == self.ground_link {
                self.links.len() - 1
            } else if link < self.ground_link {
                link
            } else {
                link - 1
            }
        };
        let springs = self
            .joints
            .iter()
            .map(|j| {
                let (a, b) = (body_of(j.links.0), body_of(j.links.1));
                NetworkSpring {
                    a: a.max(b),
                    b: a.min(b),
                    k: k_max,
                    s: j.axis(),
                    k_var: None,
                    s_var: None,
                }
            })
            .collect();
        SpringNetwork {
            n_bodies: self.links.len() - 1,
            input: body_of(self.input_link),
            output: body_of(self.output_link),
            springs,
            n_design: 0,
            k_max,
        }
    }

    /// Link index of each network body.
    pub fn body_links(&self) -> Vec<usize> {
        (0..self.links.len()).filter(|&l| l != self.ground_link).collect()
    }
}
