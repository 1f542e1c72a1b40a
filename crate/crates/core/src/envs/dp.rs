//! Exact dynamic programming: optimal solve, policy evaluation, occupancy.

use serde::{Deserialize, Serialize};

use super::mdp::{Policy, TabularMdp, ValueTables};
use crate::error::{Error, Result};

/// Where evaluation starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Start {
    /// The MDP's own initial distribution.
    Default,
    State(usize),
    Distribution(Vec<f64>),
}

impl Start {
    fn weights<'a>(&'a self, mdp: &'a TabularMdp) -> Result<Vec<f64>> {
        match self {
            Start::Default => Ok(mdp.x1.clone()),
            Start::State(s) => {
                if *s >= mdp.s_count {
                    return Err(Error::dimension("start state out of range"));
                }
                let mut w = vec![0.0; mdp.s_count];
                w[*s] = 1.0;
                Ok(w)
            }
            Start::Distribution(w) => {
                if w.len() != mdp.s_count {
                    return Err(Error::dimension("start distribution length mismatch"));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Backward induction to the optimal value tables and the greedy policy.
/// Ties in the argmax break toward the smallest action index.
pub fn solve_optimal(mdp: &TabularMdp) -> (Policy, ValueTables) {
    let (hn, sn, an) = (mdp.horizon, mdp.s_count, mdp.a_count);
    let mut q = vec![vec![vec![0.0; an]; sn]; hn];
    let mut v = vec![vec![0.0; sn]; hn];
    let mut actions = vec![vec![0usize; sn]; hn];
    let mut next_v = vec![0.0; sn];
    for h in (0..hn).rev() {
        for s in 0..sn {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..an {
                let val = mdp.backup(h, s, a, &next_v);
                q[h][s][a] = val;
                if val > best {
                    best = val;
                    best_a = a;
                }
            }
            v[h][s] = best;
            actions[h][s] = best_a;
        }
        next_v.copy_from_slice(&v[h]);
    }
    (Policy::Deterministic(actions), ValueTables { q, v })
}

/// Exact value of a policy from `start`, by backward policy evaluation.
/// No sampling is involved.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &Policy, start: &Start) -> Result<f64> {
    policy.validate(mdp)?;
    let w = start.weights(mdp)?;
    let (hn, sn, an) = (mdp.horizon, mdp.s_count, mdp.a_count);
    let mut next_v = vec![0.0; sn];
    for h in (0..hn).rev() {
        let mut cur = vec![0.0; sn];
        for s in 0..sn {
            let mut acc = 0.0;
            for a in 0..an {
                let pr = policy.prob(h, s, a);
                if pr != 0.0 {
                    acc += pr * mdp.backup(h, s, a, &next_v);
                }
            }
            cur[s] = acc;
        }
        next_v = cur;
    }
    Ok(w.iter().zip(&next_v).map(|(wi, vi)| wi * vi).sum())
}

/// State occupancy `d[h][s]` of a policy, propagated forward from `start`.
pub fn state_occupancy(mdp: &TabularMdp, policy: &Policy, start: &Start) -> Result<Vec<Vec<f64>>> {
    policy.validate(mdp)?;
    let w = start.weights(mdp)?;
    let (hn, sn, an) = (mdp.horizon, mdp.s_count, mdp.a_count);
    let mut occ = vec![vec![0.0; sn]; hn];
    occ[0].copy_from_slice(&w);
    for h in 0..hn.saturating_sub(1) {
        for s in 0..sn {
            let mass = occ[h][s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..an {
                let pr = policy.prob(h, s, a);
                if pr == 0.0 {
                    continue;
                }
                for (sn_idx, &q) in mdp.p[h][s][a].iter().enumerate() {
                    if q != 0.0 {
                        occ[h + 1][sn_idx] += mass * pr * q;
                    }
                }
            }
        }
    }
    Ok(occ)
}

/// State-action occupancy `d[h][(s, a)]` of a policy.
pub fn state_action_occupancy(
    mdp: &TabularMdp,
    policy: &Policy,
    start: &Start,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let occ = state_occupancy(mdp, policy, start)?;
    let (hn, sn, an) = (mdp.horizon, mdp.s_count, mdp.a_count);
    let mut out = vec![vec![vec![0.0; an]; sn]; hn];
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                out[h][s][a] = occ[h][s] * policy.prob(h, s, a);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic 2-state chain: only action 1 at step 0 reaches the state
    /// whose final-step action 0 pays. Single rewarding path pays 1.
    fn rewarding_chain(h: usize) -> TabularMdp {
        let stay = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let p_h: Vec<Vec<Vec<f64>>> = vec![
            vec![stay[0].clone(), swap[0].clone()],
            vec![stay[1].clone(), swap[1].clone()],
        ];
        let mut r = vec![vec![vec![0.0, 0.0]; 2]; h];
        r[h - 1][1][0] = 1.0;
        TabularMdp::new(vec![p_h; h], r, 0.0, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn chain_with_single_rewarding_path() {
        let mdp = rewarding_chain(3);
        let (pi, vt) = solve_optimal(&mdp);
        assert!((vt.v[0][0] - 1.0).abs() < 1e-15);
        let v = evaluate_policy(&mdp, &pi, &Start::State(0)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rewards_solve_to_zero_and_smallest_index_policy() {
        let p_h = vec![vec![vec![0.5, 0.5]; 3]; 2];
        let mdp = TabularMdp::new(
            vec![p_h.clone(), p_h],
            vec![vec![vec![0.0; 3]; 2]; 2],
            0.0,
            vec![0.5, 0.5],
        )
        .unwrap();
        let (pi, vt) = solve_optimal(&mdp);
        assert!(vt.v.iter().flatten().all(|&x| x == 0.0));
        match pi {
            Policy::Deterministic(t) => assert!(t.iter().flatten().all(|&a| a == 0)),
            _ => panic!("expected deterministic policy"),
        }
    }

    #[test]
    fn optimal_policy_reproduces_its_own_value() {
        let mdp = rewarding_chain(4);
        let (pi, vt) = solve_optimal(&mdp);
        let v = evaluate_policy(&mdp, &pi, &Start::Default).unwrap();
        let v_star: f64 = mdp
            .x1
            .iter()
            .enumerate()
            .map(|(s, w)| w * vt.v[0][s])
            .sum();
        assert!((v - v_star).abs() < 1e-12);
    }

    #[test]
    fn occupancy_rows_sum_to_one() {
        let mdp = rewarding_chain(4);
        let pi = Policy::uniform(4, 2, 2);
        let occ = state_occupancy(&mdp, &pi, &Start::Default).unwrap();
        for row in occ {
            let m: f64 = row.iter().sum();
            assert!((m - 1.0).abs() < 1e-12);
        }
    }
}
