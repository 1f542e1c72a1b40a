//! Finite episodic MDPs with step-indexed transition and reward tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on probability rows.
pub const PROB_TOL: f64 = 1e-12;

/// How observed rewards are realized when a dataset is collected.
///
/// Mean rewards always live in the `r` table; this only controls the noise
/// around them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RewardRealization {
    /// `r = R + Uniform[-w, w]` with `w = min(reward_noise, R)` so realized
    /// rewards stay nonnegative and the mean is preserved.
    BoundedNoise,
    /// `r = (1/H) * Bernoulli(H * R)`; requires `H * R <= 1` cell-wise.
    /// Used by the tree instances whose rewards are coin flips.
    Bernoulli,
}

/// A finite-horizon tabular MDP: the ground truth environment.
///
/// Index convention: step `h` runs over `0..H` internally; transition row
/// `p[h][s][a]` is a distribution over next states, `r[h][s][a]` is the mean
/// reward. Construction validates stochasticity and rescales rewards so that
/// the largest possible trajectory sum of mean rewards is at most 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub s_count: usize,
    pub a_count: usize,
    pub horizon: usize,
    /// `p[h][s][a][s']`, each row a probability distribution.
    pub p: Vec<Vec<Vec<Vec<f64>>>>,
    /// `r[h][s][a]`, nonnegative mean rewards.
    pub r: Vec<Vec<Vec<f64>>>,
    /// Half-width of the symmetric bounded reward noise per step.
    pub reward_noise: f64,
    /// Initial state distribution.
    pub x1: Vec<f64>,
    pub reward_realization: RewardRealization,
}

impl TabularMdp {
    pub fn new(
        p: Vec<Vec<Vec<Vec<f64>>>>,
        r: Vec<Vec<Vec<f64>>>,
        reward_noise: f64,
        x1: Vec<f64>,
    ) -> Result<Self> {
        let horizon = p.len();
        if horizon == 0 {
            return Err(Error::invalid_mdp("horizon must be at least 1"));
        }
        let s_count = p[0].len();
        if s_count == 0 {
            return Err(Error::invalid_mdp("state count must be at least 1"));
        }
        let a_count = p[0][0].len();
        if a_count == 0 {
            return Err(Error::invalid_mdp("action count must be at least 1"));
        }
        if reward_noise < 0.0 || !reward_noise.is_finite() {
            return Err(Error::invalid_mdp("reward_noise must be finite and >= 0"));
        }
        let mut mdp = TabularMdp {
            s_count,
            a_count,
            horizon,
            p,
            r,
            reward_noise,
            x1,
            reward_realization: RewardRealization::BoundedNoise,
        };
        mdp.validate_shape()?;
        mdp.validate_stochastic()?;
        mdp.normalize_rewards();
        Ok(mdp)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.r.len() != self.horizon {
            return Err(Error::invalid_mdp("reward table horizon mismatch"));
        }
        for h in 0..self.horizon {
            if self.p[h].len() != self.s_count || self.r[h].len() != self.s_count {
                return Err(Error::invalid_mdp("state dimension mismatch"));
            }
            for s in 0..self.s_count {
                if self.p[h][s].len() != self.a_count || self.r[h][s].len() != self.a_count {
                    return Err(Error::invalid_mdp("action dimension mismatch"));
                }
                for a in 0..self.a_count {
                    if self.p[h][s][a].len() != self.s_count {
                        return Err(Error::invalid_mdp("next-state dimension mismatch"));
                    }
                    for &q in &self.p[h][s][a] {
                        if !q.is_finite() {
                            return Err(Error::invalid_mdp("non-finite transition probability"));
                        }
                    }
                    if !self.r[h][s][a].is_finite() || self.r[h][s][a] < 0.0 {
                        return Err(Error::invalid_mdp("rewards must be finite and >= 0"));
                    }
                }
            }
        }
        if self.x1.len() != self.s_count {
            return Err(Error::invalid_mdp("x1 dimension mismatch"));
        }
        Ok(())
    }

    fn validate_stochastic(&self) -> Result<()> {
        for h in 0..self.horizon {
            for s in 0..self.s_count {
                for a in 0..self.a_count {
                    let row = &self.p[h][s][a];
                    if row.iter().any(|&q| q < 0.0) {
                        return Err(Error::invalid_mdp(format!(
                            "negative transition probability at h={h} s={s} a={a}"
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > PROB_TOL {
                        return Err(Error::invalid_mdp(format!(
                            "transition row at h={h} s={s} a={a} sums to {sum}"
                        )));
                    }
                }
            }
        }
        if self.x1.iter().any(|&q| q < 0.0) {
            return Err(Error::invalid_mdp("negative initial probability"));
        }
        let sum: f64 = self.x1.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid_mdp(format!("x1 sums to {sum}")));
        }
        Ok(())
    }

    /// Rescales the reward table so the largest achievable trajectory sum of
    /// mean rewards is at most 1. The worst case maximizes over actions and
    /// over next states in the support of the transition row.
    fn normalize_rewards(&mut self) {
        let worst = self.worst_trajectory_reward();
        if worst > 1.0 {
            let c = 1.0 / worst;
            for hr in &mut self.r {
                for sr in hr {
                    for v in sr {
                        *v *= c;
                    }
                }
            }
        }
    }

    /// Max over trajectories (with positive probability) of the sum of mean rewards.
    pub fn worst_trajectory_reward(&self) -> f64 {
        let mut next = vec![0.0f64; self.s_count];
        for h in (0..self.horizon).rev() {
            let mut cur = vec![f64::NEG_INFINITY; self.s_count];
            for s in 0..self.s_count {
                for a in 0..self.a_count {
                    let mut reach_best = 0.0f64;
                    if h + 1 < self.horizon {
                        reach_best = f64::NEG_INFINITY;
                        for (sn, &q) in self.p[h][s][a].iter().enumerate() {
                            if q > 0.0 {
                                reach_best = reach_best.max(next[sn]);
                            }
                        }
                    }
                    cur[s] = cur[s].max(self.r[h][s][a] + reach_best);
                }
            }
            next = cur;
        }
        self.x1
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0)
            .map(|(s, _)| next[s])
            .fold(0.0, f64::max)
    }

    /// Mean of `r * g(s')` under the transition row: the exact one-step backup
    /// of a state-value table `g` at `(h, s, a)`.
    pub fn backup(&self, h: usize, s: usize, a: usize, g: &[f64]) -> f64 {
        let row = &self.p[h][s][a];
        let mut acc = self.r[h][s][a];
        for (sn, &q) in row.iter().enumerate() {
            if q != 0.0 {
                acc += q * g[sn];
            }
        }
        acc
    }
}

/// A tabular MDP together with a feature map certifying that every one-step
/// backup of any state-value table is linear in the features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearMdp {
    pub base: TabularMdp,
    pub d: usize,
    /// `phi[s][a]`, each of length `d`, Euclidean norm <= 1.
    pub phi: Vec<Vec<Vec<f64>>>,
}

impl LinearMdp {
    pub fn new(base: TabularMdp, d: usize, phi: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid_argument("feature dimension must be >= 1"));
        }
        if phi.len() != base.s_count {
            return Err(Error::dimension("phi state dimension mismatch"));
        }
        for srow in &phi {
            if srow.len() != base.a_count {
                return Err(Error::dimension("phi action dimension mismatch"));
            }
            for f in srow {
                if f.len() != d {
                    return Err(Error::dimension("phi feature dimension mismatch"));
                }
                let norm2: f64 = f.iter().map(|x| x * x).sum();
                if norm2 > 1.0 + 1e-9 {
                    return Err(Error::invalid_mdp(format!(
                        "feature norm {} exceeds 1",
                        norm2.sqrt()
                    )));
                }
            }
        }
        Ok(LinearMdp { base, d, phi })
    }

    /// Embeds any tabular MDP with one-hot features of dimension `S*A`.
    pub fn one_hot(base: TabularMdp) -> Self {
        let (s_count, a_count) = (base.s_count, base.a_count);
        let d = s_count * a_count;
        let mut phi = vec![vec![vec![0.0; d]; a_count]; s_count];
        for (s, srow) in phi.iter_mut().enumerate() {
            for (a, f) in srow.iter_mut().enumerate() {
                f[s * a_count + a] = 1.0;
            }
        }
        LinearMdp { base, d, phi }
    }

    pub fn feature(&self, s: usize, a: usize) -> &[f64] {
        &self.phi[s][a]
    }
}

/// Optimal (or fitted) value tables for each step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTables {
    /// `q[h][s][a]`
    pub q: Vec<Vec<Vec<f64>>>,
    /// `v[h][s] = max_a q[h][s][a]`
    pub v: Vec<Vec<f64>>,
}

impl ValueTables {
    /// State value at step h, zero beyond the horizon.
    pub fn v_at(&self, h: usize, s: usize) -> f64 {
        if h < self.v.len() {
            self.v[h][s]
        } else {
            0.0
        }
    }
}

/// A step-indexed policy, deterministic or stochastic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// `actions[h][s]`
    Deterministic(Vec<Vec<usize>>),
    /// `probs[h][s][a]`, rows summing to 1.
    Stochastic(Vec<Vec<Vec<f64>>>),
}

impl Policy {
    /// Uniform-random policy; the default behavior policy for collection.
    pub fn uniform(horizon: usize, s_count: usize, a_count: usize) -> Self {
        let row = vec![1.0 / a_count as f64; a_count];
        Policy::Stochastic(vec![vec![row; s_count]; horizon])
    }

    /// Validates dimensions against an MDP, and row sums for stochastic policies.
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        match self {
            Policy::Deterministic(t) => {
                if t.len() != mdp.horizon || t.iter().any(|row| row.len() != mdp.s_count) {
                    return Err(Error::dimension("policy table shape mismatch"));
                }
                if t.iter().flatten().any(|&a| a >= mdp.a_count) {
                    return Err(Error::invalid_argument("policy action out of range"));
                }
            }
            Policy::Stochastic(t) => {
                if t.len() != mdp.horizon || t.iter().any(|row| row.len() != mdp.s_count) {
                    return Err(Error::dimension("policy table shape mismatch"));
                }
                for hrow in t {
                    for srow in hrow {
                        if srow.len() != mdp.a_count {
                            return Err(Error::dimension("policy action row mismatch"));
                        }
                        if srow.iter().any(|&q| q < 0.0) {
                            return Err(Error::invalid_argument("negative action probability"));
                        }
                        let sum: f64 = srow.iter().sum();
                        if (sum - 1.0).abs() > PROB_TOL {
                            return Err(Error::invalid_argument(format!(
                                "policy row sums to {sum}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Probability of action `a` at `(h, s)`.
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic(t) => {
                if t[h][s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Stochastic(t) => t[h][s][a],
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Policy::Deterministic(t) => t.len(),
            Policy::Stochastic(t) => t.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_chain() -> TabularMdp {
        // Two states, two actions, H=2. Action 0 stays, action 1 swaps.
        let stay = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let p_h = vec![
            vec![stay[0].clone(), swap[0].clone()],
            vec![stay[1].clone(), swap[1].clone()],
        ];
        let r_h = vec![vec![0.0, 0.0], vec![0.5, 0.0]];
        TabularMdp::new(
            vec![p_h.clone(), p_h],
            vec![r_h.clone(), r_h],
            0.0,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let mut mdp = two_state_chain();
        mdp.p[0][0][0][0] = 0.9;
        let res = TabularMdp::new(mdp.p, mdp.r, 0.0, mdp.x1);
        assert!(res.is_err());
    }

    #[test]
    fn rescales_rewards_to_unit_trajectory_sum() {
        let p = vec![vec![vec![vec![1.0]]]; 3];
        let r = vec![vec![vec![2.0]]; 3];
        let mdp = TabularMdp::new(p, r, 0.0, vec![1.0]).unwrap();
        assert!((mdp.worst_trajectory_reward() - 1.0).abs() < 1e-12);
        assert!((mdp.r[0][0][0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_features_have_unit_norm() {
        let lin = LinearMdp::one_hot(two_state_chain());
        assert_eq!(lin.d, 4);
        for s in 0..2 {
            for a in 0..2 {
                let n: f64 = lin.feature(s, a).iter().map(|x| x * x).sum();
                assert_eq!(n, 1.0);
            }
        }
    }

    #[test]
    fn stochastic_policy_rows_must_sum_to_one() {
        let mdp = two_state_chain();
        let bad = Policy::Stochastic(vec![vec![vec![0.6, 0.3]; 2]; 2]);
        assert!(bad.validate(&mdp).is_err());
        let good = Policy::uniform(2, 2, 2);
        assert!(good.validate(&mdp).is_ok());
    }
}
