//! Immediate reward: distance-to-landmark improvement plus a β-weighted
//! improvement of the distance to the agent's limb segments.

use crate::error::{Error, Result};
use crate::geom::{cross, dist, dot, norm, sub, Vec3};
use crate::pose_graph::{Landmark, PoseGraph, NUM_LANDMARKS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub beta: f64,
    pub use_structure_reward: bool,
    /// When false, elbows and knees only use their distal segment.
    pub both_segments: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta: 2.0,
            use_structure_reward: true,
            both_segments: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Distance from `p` to the segment `[pk, pm]`, split into the two endpoint
/// regions and the perpendicular band. Ties on a region boundary fall through
/// to the perpendicular formula, which agrees with the endpoint distance there.
pub fn point_segment_distance(p: Vec3, pk: Vec3, pm: Vec3) -> Result<f64> {
    let a = sub(pk, pm);
    let len = norm(a);
    if len < 1e-9 {
        return Err(Error::DegenerateSegment);
    }
    let from_k = sub(p, pk);
    let from_m = sub(p, pm);
    if dot(from_k, a) > 0.0 {
        Ok(norm(from_k))
    } else if dot(from_m, a) < 0.0 {
        Ok(norm(from_m))
    } else {
        Ok(norm(cross(from_m, a)) / len)
    }
}

fn structure_neighbors(graph: &PoseGraph, k: Landmark, cfg: &RewardConfig) -> Vec<Landmark> {
    let mut n = graph.limb_neighbors(k).to_vec();
    if !cfg.both_segments && n.len() > 1 {
        // Keep the distal neighbor (highest index along the chain).
        n.sort();
        n.drain(..n.len() - 1);
    }
    n
}

/// Reward for agent `k` moving from `pos_t` to `pos_t1`, in voxel units.
pub fn agent_reward(
    k: Landmark,
    pos_t: Vec3,
    pos_t1: Vec3,
    gt: &[Vec3; NUM_LANDMARKS],
    graph: &PoseGraph,
    cfg: &RewardConfig,
) -> Result<f64> {
    let target = gt[k.index()];
    let mut r = dist(pos_t, target) - dist(pos_t1, target);
    if cfg.use_structure_reward && cfg.beta != 0.0 {
        let mut structure = 0.0;
        for m in structure_neighbors(graph, k, cfg) {
            let pm = gt[m.index()];
            structure += point_segment_distance(pos_t, target, pm)? - point_segment_distance(pos_t1, target, pm)?;
        }
        r += cfg.beta * structure;
    }
    Ok(r)
}

/// Rewards for all 15 agents for one joint step.
pub fn step_rewards(
    pos_t: &[[i64; 3]; NUM_LANDMARKS],
    pos_t1: &[[i64; 3]; NUM_LANDMARKS],
    gt: &[Vec3; NUM_LANDMARKS],
    graph: &PoseGraph,
    cfg: &RewardConfig,
) -> Result<[f64; NUM_LANDMARKS]> {
    let mut out = [0.0; NUM_LANDMARKS];
    for (k, r) in Landmark::ALL.iter().zip(out.iter_mut()) {
        *r = agent_reward(
            *k,
            crate::geom::to_f64(pos_t[k.index()]),
            crate::geom::to_f64(pos_t1[k.index()]),
            gt,
            graph,
            cfg,
        )?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::build_fetal_graph;
    use proptest::prelude::*;

    /// Minimum distance over the segment sampled at a fixed parameter spacing.
    fn sampled_distance(p: Vec3, pk: Vec3, pm: Vec3, samples: usize) -> f64 {
        (0..=samples)
            .map(|i| {
                let t = i as f64 / samples as f64;
                let q = [
                    pk[0] + t * (pm[0] - pk[0]),
                    pk[1] + t * (pm[1] - pk[1]),
                    pk[2] + t * (pm[2] - pk[2]),
                ];
                dist(p, q)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn worked_examples() {
        let pk = [0.0, 0.0, 0.0];
        let pm = [10.0, 0.0, 0.0];
        for (p, want) in [([5.0, 4.0, 0.0], 4.0), ([12.0, 0.0, 0.0], 2.0), ([-3.0, 0.0, 0.0], 3.0)] {
            let got = point_segment_distance(p, pk, pm).unwrap();
            assert!((got - want).abs() < 1e-9);
            // 10-unit segment sampled at 1e-4 spacing.
            assert!((sampled_distance(p, pk, pm, 100_000) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_segment() {
        let p = [1.0, 2.0, 3.0];
        assert!(matches!(point_segment_distance(p, p, p), Err(Error::DegenerateSegment)));
    }

    #[test]
    fn boundary_tie_agrees_with_endpoint() {
        let pk = [0.0, 0.0, 0.0];
        let pm = [10.0, 0.0, 0.0];
        let p = [0.0, 3.0, 0.0];
        assert!((point_segment_distance(p, pk, pm).unwrap() - 3.0).abs() < 1e-12);
    }

    fn gt_with(k: Landmark, pk: Vec3, m: Landmark, pm: Vec3) -> [Vec3; NUM_LANDMARKS] {
        let mut gt = [[30.0, 30.0, 30.0]; NUM_LANDMARKS];
        for (i, g) in gt.iter_mut().enumerate() {
            g[0] += i as f64;
        }
        gt[k.index()] = pk;
        gt[m.index()] = pm;
        gt
    }

    #[test]
    fn wrist_reward_example() {
        let g = build_fetal_graph();
        let gt = gt_with(Landmark::WristL, [0.0, 0.0, 0.0], Landmark::ElbowL, [10.0, 0.0, 0.0]);
        let cfg = RewardConfig { beta: 2.0, ..Default::default() };
        let r = agent_reward(Landmark::WristL, [6.0, 4.0, 0.0], [5.0, 4.0, 0.0], &gt, &g, &cfg).unwrap();
        let want = 52f64.sqrt() - 41f64.sqrt();
        assert!((r - want).abs() < 1e-12);
        assert!((r - 0.807_979).abs() < 1e-6);
    }

    #[test]
    fn no_move_is_zero_reward() {
        let g = build_fetal_graph();
        let gt = gt_with(Landmark::KneeL, [1.0, 2.0, 3.0], Landmark::AnkleL, [7.0, 2.0, 3.0]);
        for beta in [0.0, 1.0, 5.0] {
            let cfg = RewardConfig { beta, ..Default::default() };
            for k in Landmark::ALL {
                assert_eq!(agent_reward(k, [4.0, 5.0, 6.0], [4.0, 5.0, 6.0], &gt, &g, &cfg).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn bladder_ignores_structure_term() {
        let g = build_fetal_graph();
        let gt = gt_with(Landmark::Bladder, [10.0, 10.0, 10.0], Landmark::HipL, [14.0, 10.0, 10.0]);
        let cfg = RewardConfig { beta: 5.0, ..Default::default() };
        let r = agent_reward(Landmark::Bladder, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], &gt, &g, &cfg).unwrap();
        let plain = dist([0.0; 3], gt[8]) - dist([1.0, 0.0, 0.0], gt[8]);
        assert_eq!(r, plain);
    }

    #[test]
    fn single_segment_option_keeps_distal() {
        let g = build_fetal_graph();
        let cfg = RewardConfig { both_segments: false, ..Default::default() };
        assert_eq!(structure_neighbors(&g, Landmark::ElbowL, &cfg), vec![Landmark::WristL]);
        assert_eq!(structure_neighbors(&g, Landmark::KneeR, &cfg), vec![Landmark::AnkleR]);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -20.0f64..20.0
    }

    fn point() -> impl Strategy<Value = Vec3> {
        [coord(), coord(), coord()]
    }

    proptest! {
        #[test]
        fn segment_distance_symmetric_and_bounded(p in point(), pk in point(), pm in point()) {
            prop_assume!(dist(pk, pm) > 1e-3);
            let d1 = point_segment_distance(p, pk, pm).unwrap();
            let d2 = point_segment_distance(p, pm, pk).unwrap();
            prop_assert!((d1 - d2).abs() <= 1e-12 * (1.0 + d1));
            prop_assert!(d1 <= dist(p, pk).min(dist(p, pm)) + 1e-12);
            prop_assert!(d1 >= 0.0);
        }

        #[test]
        fn closed_loop_rewards_sum_to_zero(
            start in prop::array::uniform3(0i64..40),
            moves in prop::collection::vec(0usize..6, 1..20),
            k in 0usize..15,
            beta in 0.0f64..5.0,
        ) {
            let g = build_fetal_graph();
            let mut gt = [[0.0; 3]; NUM_LANDMARKS];
            for (i, p) in gt.iter_mut().enumerate() {
                *p = [5.0 + 2.0 * i as f64, 20.0 - i as f64, 3.0 * (i % 5) as f64 + 1.5];
            }
            let cfg = RewardConfig { beta, ..Default::default() };
            let agent = Landmark::from_index(k).unwrap();
            let step = |m: usize| -> [i64; 3] {
                let mut d = [0i64; 3];
                d[m / 2] = if m % 2 == 0 { 1 } else { -1 };
                d
            };
            // walk the moves then retrace them backwards
            let mut path = vec![start];
            let mut cur = start;
            for &m in &moves {
                let d = step(m);
                cur = [cur[0] + d[0], cur[1] + d[1], cur[2] + d[2]];
                path.push(cur);
            }
            for &m in moves.iter().rev() {
                let d = step(m);
                cur = [cur[0] - d[0], cur[1] - d[1], cur[2] - d[2]];
                path.push(cur);
            }
            let total: f64 = path
                .windows(2)
                .map(|w| agent_reward(agent, crate::geom::to_f64(w[0]), crate::geom::to_f64(w[1]), &gt, &g, &cfg).unwrap())
                .sum();
            prop_assert!(total.abs() < 1e-9);
        }

        #[test]
        fn beta_zero_is_plain_distance_reward(p0 in point(), p1 in point(), k in 0usize..15) {
            let g = build_fetal_graph();
            let mut gt = [[0.0; 3]; NUM_LANDMARKS];
            for (i, p) in gt.iter_mut().enumerate() {
                *p = [i as f64, 2.0 * i as f64, -(i as f64)];
            }
            let agent = Landmark::from_index(k).unwrap();
            let on = RewardConfig { beta: 0.0, use_structure_reward: true, both_segments: true };
            let off = RewardConfig { beta: 0.0, use_structure_reward: false, both_segments: true };
            let a = agent_reward(agent, p0, p1, &gt, &g, &on).unwrap();
            let b = agent_reward(agent, p0, p1, &gt, &g, &off).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            let plain = dist(p0, gt[k]) - dist(p1, gt[k]);
            prop_assert_eq!(a.to_bits(), plain.to_bits());
        }
    }
}
