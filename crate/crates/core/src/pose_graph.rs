//! The 15-landmark pose graph and the masked row-softmax adjacency used by
//! the graph communication layers.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub const NUM_LANDMARKS: usize = 15;

/// One of the 15 tracked landmarks. The discriminant is the agent index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Landmark {
    EyeL = 0,
    EyeR,
    ShoulderL,
    ShoulderR,
    ElbowL,
    ElbowR,
    WristL,
    WristR,
    Bladder,
    HipL,
    HipR,
    KneeL,
    KneeR,
    AnkleL,
    AnkleR,
}

impl Landmark {
    pub const ALL: [Landmark; NUM_LANDMARKS] = [
        Landmark::EyeL,
        Landmark::EyeR,
        Landmark::ShoulderL,
        Landmark::ShoulderR,
        Landmark::ElbowL,
        Landmark::ElbowR,
        Landmark::WristL,
        Landmark::WristR,
        Landmark::Bladder,
        Landmark::HipL,
        Landmark::HipR,
        Landmark::KneeL,
        Landmark::KneeR,
        Landmark::AnkleL,
        Landmark::AnkleR,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Landmark> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Landmark::EyeL => "eye_L",
            Landmark::EyeR => "eye_R",
            Landmark::ShoulderL => "shoulder_L",
            Landmark::ShoulderR => "shoulder_R",
            Landmark::ElbowL => "elbow_L",
            Landmark::ElbowR => "elbow_R",
            Landmark::WristL => "wrist_L",
            Landmark::WristR => "wrist_R",
            Landmark::Bladder => "bladder",
            Landmark::HipL => "hip_L",
            Landmark::HipR => "hip_R",
            Landmark::KneeL => "knee_L",
            Landmark::KneeR => "knee_R",
            Landmark::AnkleL => "ankle_L",
            Landmark::AnkleR => "ankle_R",
        }
    }

    /// The contralateral landmark; bladder maps to itself.
    pub fn mirrored(self) -> Landmark {
        use Landmark::*;
        match self {
            EyeL => EyeR,
            EyeR => EyeL,
            ShoulderL => ShoulderR,
            ShoulderR => ShoulderL,
            ElbowL => ElbowR,
            ElbowR => ElbowL,
            WristL => WristR,
            WristR => WristL,
            Bladder => Bladder,
            HipL => HipR,
            HipR => HipL,
            KneeL => KneeR,
            KneeR => KneeL,
            AnkleL => AnkleR,
            AnkleR => AnkleL,
        }
    }

    pub fn is_limb(self) -> bool {
        !matches!(self, Landmark::EyeL | Landmark::EyeR | Landmark::Bladder)
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Landmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Landmark::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown landmark name {s:?}")))
    }
}

/// Unordered landmark pair, stored with the lower index first.
pub type Edge = (Landmark, Landmark);

fn edge(a: Landmark, b: Landmark) -> Edge {
    if a.index() <= b.index() {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<Landmark>,
    pub skeleton_edges: Vec<Edge>,
    pub lateral_edges: Vec<Edge>,
    pub limb_agents: Vec<Landmark>,
    limb_segments: Vec<Vec<Landmark>>,
}

/// Builds the fixed fetal pose graph.
///
/// Skeleton edges follow the anatomical chains with the bladder standing in
/// for the torso: eyes, shoulders and hips attach to the bladder, and each
/// limb chains proximal to distal. Lateral edges pair every left landmark
/// with its right counterpart.
pub fn build_fetal_graph() -> PoseGraph {
    use Landmark::*;

    let mut skeleton_edges = Vec::new();
    for (l, r) in [(ShoulderL, ShoulderR), (HipL, HipR)] {
        for side in [l, r] {
            skeleton_edges.push(edge(side, Bladder));
        }
    }
    for eye in [EyeL, EyeR] {
        skeleton_edges.push(edge(eye, Bladder));
    }
    let chains = [
        [ShoulderL, ElbowL, WristL],
        [ShoulderR, ElbowR, WristR],
        [HipL, KneeL, AnkleL],
        [HipR, KneeR, AnkleR],
    ];
    for chain in &chains {
        skeleton_edges.push(edge(chain[0], chain[1]));
        skeleton_edges.push(edge(chain[1], chain[2]));
    }
    skeleton_edges.sort();

    let mut lateral_edges: Vec<Edge> = Landmark::ALL
        .iter()
        .filter(|l| l.mirrored() != **l)
        .map(|&l| edge(l, l.mirrored()))
        .collect();
    lateral_edges.sort();
    lateral_edges.dedup();

    let limb_agents: Vec<Landmark> = Landmark::ALL.iter().copied().filter(|l| l.is_limb()).collect();

    let mut limb_segments = vec![Vec::new(); NUM_LANDMARKS];
    for &(a, b) in &skeleton_edges {
        if a.is_limb() && b.is_limb() {
            limb_segments[a.index()].push(b);
            limb_segments[b.index()].push(a);
        }
    }
    for seg in &mut limb_segments {
        seg.sort();
    }

    PoseGraph {
        nodes: Landmark::ALL.to_vec(),
        skeleton_edges,
        lateral_edges,
        limb_agents,
        limb_segments,
    }
}

impl PoseGraph {
    /// Neighbors of `k` along its limb; empty for agents outside the limb set.
    pub fn limb_neighbors(&self, k: Landmark) -> &[Landmark] {
        if self.limb_agents.contains(&k) {
            &self.limb_segments[k.index()]
        } else {
            &[]
        }
    }

    pub fn all_edges(&self) -> impl Iterator<Item = &Edge> {
        self.skeleton_edges.iter().chain(self.lateral_edges.iter())
    }

    /// Binary adjacency with self-loops over skeleton and lateral edges.
    pub fn adjacency(&self) -> Vec<[bool; NUM_LANDMARKS]> {
        let mut a = vec![[false; NUM_LANDMARKS]; NUM_LANDMARKS];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(u, v) in self.all_edges() {
            a[u.index()][v.index()] = true;
            a[v.index()][u.index()] = true;
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = [false; NUM_LANDMARKS];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..NUM_LANDMARKS {
                if adj[u][v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

pub fn limb_neighbors(graph: &PoseGraph, k: Landmark) -> Vec<Landmark> {
    graph.limb_neighbors(k).to_vec()
}

/// Support pattern `A` (row-major, `n × n`) and trainable logits `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMask {
    pub n: usize,
    pub support: Vec<bool>,
    pub logits: Vec<f64>,
}

impl AdjacencyMask {
    pub fn from_graph(graph: &PoseGraph) -> Self {
        let support = graph.adjacency().iter().flat_map(|r| r.iter().copied()).collect();
        AdjacencyMask {
            n: NUM_LANDMARKS,
            support,
            logits: vec![0.0; NUM_LANDMARKS * NUM_LANDMARKS],
        }
    }

    pub fn new(n: usize, support: Vec<bool>, logits: Vec<f64>) -> Self {
        assert_eq!(support.len(), n * n);
        assert_eq!(logits.len(), n * n);
        AdjacencyMask { n, support, logits }
    }

    pub fn normalized(&self) -> Vec<f64> {
        normalized_adjacency_raw(self.n, &self.support, &self.logits)
    }
}

/// Row-wise softmax of `M ⊙ A`, where entries outside the support act as −∞.
pub fn normalized_adjacency(mask: &AdjacencyMask) -> Vec<f64> {
    mask.normalized()
}

pub(crate) fn normalized_adjacency_raw(n: usize, support: &[bool], logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let row = i * n..(i + 1) * n;
        let max = row
            .clone()
            .filter(|&idx| support[idx])
            .map(|idx| logits[idx])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for idx in row.clone() {
            if support[idx] {
                let e = (logits[idx] - max).exp();
                out[idx] = e;
                sum += e;
            }
        }
        for idx in row {
            out[idx] /= sum;
        }
    }
    out
}

/// Back-propagates `d_out` (gradient w.r.t. the normalized adjacency) into the
/// logits. Entries outside the support receive exactly zero.
pub(crate) fn normalized_adjacency_backward(n: usize, support: &[bool], normalized: &[f64], d_out: &[f64]) -> Vec<f64> {
    let mut d_logits = vec![0.0; n * n];
    for i in 0..n {
        let row = i * n..(i + 1) * n;
        let dot: f64 = row.clone().map(|idx| normalized[idx] * d_out[idx]).sum();
        for idx in row {
            if support[idx] {
                d_logits[idx] = normalized[idx] * (d_out[idx] - dot);
            }
        }
    }
    d_logits
}
