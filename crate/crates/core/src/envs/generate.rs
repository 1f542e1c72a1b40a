//! Instance generators: low-rank linear MDPs, the hard two-MDP tree pair,
//! and a skewed-coverage family for corruption experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::mdp::{LinearMdp, Policy, RewardRealization, TabularMdp};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Default reward-noise half-width for generated instances.
const GEN_REWARD_NOISE: f64 = 0.02;

fn sample_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Exponential spacings normalized: uniform on the simplex.
    let mut v: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

/// Builds a low-rank MDP whose transitions and rewards are mixtures over `d`
/// anchor distributions, with the mixture weights as the feature map. Every
/// one-step backup of any state-value table is then exactly linear in the
/// features, and the feature second-moment matrix under roughly uniform data
/// has minimum eigenvalue on the order of `1/d`.
///
/// Deterministic in `seed`. Rejects `d > S*A` (rank impossible) and zero sizes.
pub fn build_linear_mdp(
    d: usize,
    s_count: usize,
    a_count: usize,
    horizon: usize,
    seed: u64,
) -> Result<LinearMdp> {
    if d == 0 || s_count == 0 || a_count == 0 || horizon == 0 {
        return Err(Error::invalid_argument("d, S, A, H must all be >= 1"));
    }
    if d > s_count * a_count {
        return Err(Error::invalid_argument(format!(
            "feature dimension {d} exceeds S*A = {}",
            s_count * a_count
        )));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 0x11));

    // Features: near-one-hot mixture weights over the d anchors; the primary
    // anchor cycles over cells so every anchor direction is populated.
    let kappa = 0.2;
    let mut phi = vec![vec![vec![0.0; d]; a_count]; s_count];
    for s in 0..s_count {
        for a in 0..a_count {
            let primary = (s * a_count + a) % d;
            let mut f = sample_simplex(&mut rng, d);
            for x in f.iter_mut() {
                *x *= kappa;
            }
            f[primary] += 1.0 - kappa;
            phi[s][a] = f;
        }
    }

    // Per-step anchors: next-state distributions and mean rewards.
    let mut p = vec![vec![vec![vec![0.0; s_count]; a_count]; s_count]; horizon];
    let mut r = vec![vec![vec![0.0; a_count]; s_count]; horizon];
    for h in 0..horizon {
        let anchors: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                let dir = sample_simplex(&mut rng, s_count);
                dir.iter()
                    .map(|&x| 0.5 / s_count as f64 + 0.5 * x)
                    .collect()
            })
            .collect();
        let rho: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
        for s in 0..s_count {
            for a in 0..a_count {
                let f = &phi[s][a];
                for sn in 0..s_count {
                    p[h][s][a][sn] = (0..d).map(|k| f[k] * anchors[k][sn]).sum();
                }
                r[h][s][a] = (0..d).map(|k| f[k] * rho[k]).sum();
            }
        }
    }

    // Leave headroom for the additive reward noise so realized trajectory
    // sums stay within 1.
    let mut base = TabularMdp::new(
        p,
        r,
        GEN_REWARD_NOISE,
        vec![1.0 / s_count as f64; s_count],
    )?;
    let target = 1.0 - horizon as f64 * GEN_REWARD_NOISE;
    let worst = base.worst_trajectory_reward();
    if worst > target {
        let c = target / worst;
        for hr in &mut base.r {
            for sr in hr {
                for v in sr {
                    *v *= c;
                }
            }
        }
    }
    LinearMdp::new(base, d, phi)
}

/// Builds the two tree MDPs that differ only in the reward at one leaf pair.
///
/// The state space is a complete `A`-ary tree of depth `L`; from an interior
/// node, action `a` moves to child `a` deterministically, and leaves absorb.
/// `M` pays `(1/H) * Bernoulli(A^(L-1) * eps / 2)` at the first leaf under
/// action 0; `M'` additionally pays `(1/H) * Bernoulli(A^(L-1) * eps)` at the
/// last leaf under action 0. All other rewards are zero.
pub fn build_lower_bound_pair(
    a_count: usize,
    depth: usize,
    horizon: usize,
    eps: f64,
) -> Result<(TabularMdp, TabularMdp)> {
    if a_count <= 2 {
        return Err(Error::invalid_argument(
            "tree construction requires action count A > 2",
        ));
    }
    if depth < 2 {
        return Err(Error::invalid_argument("tree depth must be at least 2"));
    }
    if horizon < depth {
        return Err(Error::invalid_argument("horizon must be at least the tree depth"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid_argument("eps must lie in (0, 1)"));
    }
    let leaf_count = a_count.pow(depth as u32 - 1);
    let p_big = leaf_count as f64 * eps;
    if p_big > 1.0 {
        return Err(Error::invalid_argument(format!(
            "A^(L-1)*eps = {p_big} exceeds 1; the coin-flip reward is undefined"
        )));
    }

    // Nodes in breadth-first order; level l starts at (A^l - 1)/(A - 1).
    let s_count = (a_count.pow(depth as u32) - 1) / (a_count - 1);
    let level_start = |l: usize| (a_count.pow(l as u32) - 1) / (a_count - 1);
    let first_leaf = level_start(depth - 1);

    let mut p_row = vec![vec![vec![0.0; s_count]; a_count]; s_count];
    for s in 0..s_count {
        if s < first_leaf {
            // interior: locate the level and in-level offset
            let mut l = 0;
            while level_start(l + 1) <= s {
                l += 1;
            }
            let offset = s - level_start(l);
            for a in 0..a_count {
                let child = level_start(l + 1) + offset * a_count + a;
                p_row[s][a][child] = 1.0;
            }
        } else {
            for a in 0..a_count {
                p_row[s][a][s] = 1.0;
            }
        }
    }
    let p = vec![p_row; horizon];

    let scale = 1.0 / horizon as f64;
    let (s_star, a_star) = (first_leaf, 0usize);
    let (s_prime, a_prime) = (s_count - 1, 0usize);

    let mut r_m = vec![vec![vec![0.0; a_count]; s_count]; horizon];
    for hr in &mut r_m {
        hr[s_star][a_star] = scale * (p_big / 2.0);
    }
    let mut r_mp = r_m.clone();
    for hr in &mut r_mp {
        hr[s_prime][a_prime] = scale * p_big;
    }

    let mut x1 = vec![0.0; s_count];
    x1[0] = 1.0;

    let mut m = TabularMdp::new(p.clone(), r_m, 0.0, x1.clone())?;
    let mut m_prime = TabularMdp::new(p, r_mp, 0.0, x1)?;
    m.reward_realization = RewardRealization::Bernoulli;
    m_prime.reward_realization = RewardRealization::Bernoulli;
    Ok((m, m_prime))
}

/// A one-hot-feature family with one well-covered "safe" action, a mid-reward
/// "tempting" action the behavior policy rarely takes, and a junk action.
/// Useful for experiments where a handful of records controls entire cells.
pub fn build_uneven_coverage_mdp(seed: u64) -> Result<LinearMdp> {
    let (s_count, a_count, horizon) = (6usize, 3usize, 3usize);
    let mut rng = rng_from_seed(derive_seed(seed, 0x22));
    let mut p = vec![vec![vec![vec![0.0; s_count]; a_count]; s_count]; horizon];
    let mut r = vec![vec![vec![0.0; a_count]; s_count]; horizon];
    for h in 0..horizon {
        for s in 0..s_count {
            for a in 0..a_count {
                let dir = sample_simplex(&mut rng, s_count);
                for sn in 0..s_count {
                    p[h][s][a][sn] = 0.5 / s_count as f64 + 0.5 * dir[sn];
                }
            }
            r[h][s][0] = rng.random_range(0.26..0.30);
            r[h][s][1] = rng.random_range(0.16..0.22);
            r[h][s][2] = 0.01;
        }
    }
    let base = TabularMdp::new(p, r, 0.01, vec![1.0 / s_count as f64; s_count])?;
    Ok(LinearMdp::one_hot(base))
}

/// Behavior policy matching [`build_uneven_coverage_mdp`]: heavy on the safe
/// action, thin on the tempting one.
pub fn uneven_coverage_behavior(mdp: &TabularMdp) -> Policy {
    let row = vec![0.90, 0.02, 0.08];
    Policy::Stochastic(vec![vec![row; mdp.s_count]; mdp.horizon])
}

/// Max absolute residual of least-squares fits of one-step backups onto the
/// feature map, over `trials` random state-value tables per step. Zero (to
/// numerical precision) certifies that backups stay inside the feature span.
pub fn linearity_residual(lin: &LinearMdp, trials: usize, seed: u64) -> f64 {
    let mdp = &lin.base;
    let cells = mdp.s_count * mdp.a_count;
    let mut rng = rng_from_seed(derive_seed(seed, 0x33));
    let mut phi_mat = DMatrix::zeros(cells, lin.d);
    for s in 0..mdp.s_count {
        for a in 0..mdp.a_count {
            for k in 0..lin.d {
                phi_mat[(s * mdp.a_count + a, k)] = lin.phi[s][a][k];
            }
        }
    }
    let svd = phi_mat.clone().svd(true, true);
    let mut worst: f64 = 0.0;
    for h in 0..mdp.horizon {
        for _ in 0..trials {
            let g: Vec<f64> = (0..mdp.s_count).map(|_| rng.random::<f64>()).collect();
            let mut y = DVector::zeros(cells);
            for s in 0..mdp.s_count {
                for a in 0..mdp.a_count {
                    y[s * mdp.a_count + a] = mdp.backup(h, s, a, &g);
                }
            }
            let w = svd.solve(&y, 1e-13).expect("svd solve");
            let resid = &phi_mat * w - y;
            worst = worst.max(resid.amax());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_mdp_is_deterministic_in_seed() {
        let a = build_linear_mdp(2, 4, 2, 3, 7).unwrap();
        let b = build_linear_mdp(2, 4, 2, 3, 7).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.base.p, b.base.p);
        assert_eq!(a.base.r, b.base.r);
    }

    #[test]
    fn rejects_rank_impossible_dimension() {
        assert!(build_linear_mdp(9, 2, 2, 1, 0).is_err());
    }

    #[test]
    fn one_hot_embedding_has_zero_residual() {
        let lin = build_linear_mdp(3, 3, 2, 2, 5).unwrap();
        let tab = lin.base.clone();
        let onehot = LinearMdp::one_hot(tab);
        assert!(linearity_residual(&onehot, 20, 1) < 1e-12);
    }

    #[test]
    fn tree_pair_shares_transitions_and_differs_in_one_cell() {
        let (m, mp) = build_lower_bound_pair(3, 2, 2, 0.1).unwrap();
        assert_eq!(m.p, mp.p);
        let mut diffs = Vec::new();
        for h in 0..m.horizon {
            for s in 0..m.s_count {
                for a in 0..m.a_count {
                    if m.r[h][s][a] != mp.r[h][s][a] {
                        diffs.push((s, a));
                    }
                }
            }
        }
        diffs.dedup();
        assert_eq!(diffs.len(), 1);
    }

    #[test]
    fn tree_rejects_small_action_count_and_short_horizon() {
        assert!(build_lower_bound_pair(2, 2, 3, 0.1).is_err());
        assert!(build_lower_bound_pair(3, 3, 2, 0.1).is_err());
    }

    #[test]
    fn tree_node_count_follows_geometric_sum() {
        let (m, _) = build_lower_bound_pair(3, 3, 3, 0.01).unwrap();
        assert_eq!(m.s_count, 13); // 1 + 3 + 9
    }
}
