//! Data-corruption operators and corruption accounting.
//!
//! Each attack variant sits behind [`AttackOperator`] and is registered by
//! name, so harness configs select them at runtime. Operators are pure: they
//! never mutate their input dataset.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, TruthSidecar};
use crate::envs::{TabularMdp, ValueTables};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    RandomReward,
    RandomDynamics,
    AdversarialReward,
    AdversarialDynamics,
}

impl AttackMode {
    pub fn name(self) -> &'static str {
        match self {
            AttackMode::RandomReward => "random_reward",
            AttackMode::RandomDynamics => "random_dynamics",
            AttackMode::AdversarialReward => "adversarial_reward",
            AttackMode::AdversarialDynamics => "adversarial_dynamics",
        }
    }

    pub fn touches_dynamics(self) -> bool {
        matches!(self, AttackMode::RandomDynamics | AttackMode::AdversarialDynamics)
    }

    pub fn needs_value_oracle(self) -> bool {
        self == AttackMode::AdversarialDynamics
    }
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        operator_by_name(s)
            .map(|op| op.mode())
            .ok_or_else(|| Error::invalid_argument(format!("unknown attack mode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTiming {
    /// Corruption interleaved with collection; a corrupted next state steers
    /// the rest of the trajectory.
    OnTheFly,
    /// Corruption of a saved dataset; episodes are not re-simulated.
    PostHoc,
}

/// Which operator, how hard, and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub mode: AttackMode,
    /// Fraction of records to corrupt, in [0, 1].
    pub c: f64,
    /// Corruption scale. For dynamics modes, `ceil(eps)` is the neighborhood
    /// radius in state-index distance.
    pub eps: f64,
    pub timing: AttackTiming,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::invalid_argument("corruption rate c must lie in [0, 1]"));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::invalid_argument("corruption scale eps must be > 0"));
        }
        Ok(())
    }
}

/// Bookkeeping for one applied attack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub num_corrupted: usize,
    /// The coarse budget `|D| * c * eps`.
    pub zeta_approx: f64,
    /// Per-step sums of the per-record operator-gap bounds, when a sidecar is
    /// available. Treat as an upper bound, not a canonical attribution.
    pub zeta_exact_per_h: Option<Vec<f64>>,
    pub attack: Option<AttackSpec>,
}

impl CorruptionReport {
    pub fn zeta_exact_total(&self) -> Option<f64> {
        self.zeta_exact_per_h.as_ref().map(|v| v.iter().sum())
    }
}

/// The coarse corruption budget: dataset size times rate times scale.
pub fn zeta_budget(dataset_size: usize, c: f64, eps: f64) -> f64 {
    dataset_size as f64 * c * eps
}

/// Evaluation context shared by the operators.
pub struct AttackContext<'a> {
    pub eps: f64,
    pub radius: usize,
    pub mdp: &'a TabularMdp,
    pub oracle: Option<ValueTables>,
    op: &'static dyn AttackOperator,
}

pub struct CorruptedStep {
    pub r: f64,
    pub x_next: usize,
    /// `|r - clean_r|` plus the total-variation gap of the redirected kernel.
    pub zeta: f64,
}

impl<'a> AttackContext<'a> {
    pub fn new(
        spec: &AttackSpec,
        mdp: &'a TabularMdp,
        oracle: Option<ValueTables>,
    ) -> Result<Self> {
        spec.validate()?;
        let op = operator_for(spec.mode);
        let ctx = AttackContext {
            eps: spec.eps,
            radius: spec.eps.ceil() as usize,
            mdp,
            oracle,
            op,
        };
        op.check_compatible(&ctx)?;
        Ok(ctx)
    }

    /// States within `radius` of `center` in index distance, inclusive.
    pub fn neighborhood(&self, center: usize) -> std::ops::RangeInclusive<usize> {
        let lo = center.saturating_sub(self.radius);
        let hi = (center + self.radius).min(self.mdp.s_count - 1);
        lo..=hi
    }

    /// Applies the operator to one record; `h0` is the 0-based step index.
    pub fn corrupt_one(
        &self,
        h0: usize,
        x: usize,
        a: usize,
        clean_r: f64,
        clean_x_next: usize,
        rng: &mut ChaCha8Rng,
    ) -> CorruptedStep {
        let r = self.op.corrupt_reward(self, clean_r, rng);
        let x_next = self.op.redirect(self, h0, clean_x_next, rng);
        let mut zeta = (r - clean_r).abs();
        if self.op.mode().touches_dynamics() {
            zeta += self.kernel_tv(h0, x, a);
        }
        CorruptedStep { r, x_next, zeta }
    }

    /// Total-variation distance between the clean transition row and the row
    /// pushed through the operator's redirect kernel.
    pub fn kernel_tv(&self, h0: usize, x: usize, a: usize) -> f64 {
        let row = &self.mdp.p[h0][x][a];
        let mut pushed = vec![0.0; self.mdp.s_count];
        for (xp, &q) in row.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            match self.op.kernel_row(self, h0, xp) {
                None => pushed[xp] += q,
                Some(krow) => {
                    for (y, &k) in krow.iter().enumerate() {
                        if k != 0.0 {
                            pushed[y] += q * k;
                        }
                    }
                }
            }
        }
        0.5 * row
            .iter()
            .zip(&pushed)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

/// One corruption strategy. Implementations touch the reward, the next state,
/// or both; defaults leave each untouched.
pub trait AttackOperator: Send + Sync {
    fn name(&self) -> &'static str;
    fn mode(&self) -> AttackMode;

    fn check_compatible(&self, _ctx: &AttackContext) -> Result<()> {
        Ok(())
    }

    fn corrupt_reward(&self, _ctx: &AttackContext, clean_r: f64, _rng: &mut ChaCha8Rng) -> f64 {
        clean_r
    }

    /// New next state for a record whose clean draw was `clean_x_next`.
    fn redirect(
        &self,
        _ctx: &AttackContext,
        _h0: usize,
        clean_x_next: usize,
        _rng: &mut ChaCha8Rng,
    ) -> usize {
        clean_x_next
    }

    /// Distribution of the redirect target given a clean draw, or `None` for
    /// the identity. Length `S` when present.
    fn kernel_row(&self, _ctx: &AttackContext, _h0: usize, _clean_draw: usize) -> Option<Vec<f64>> {
        None
    }
}

fn require_two_states(ctx: &AttackContext) -> Result<()> {
    if ctx.mdp.s_count < 2 {
        return Err(Error::Incompatible(
            "dynamics attack needs at least two states to redirect between".into(),
        ));
    }
    Ok(())
}

struct RandomReward;

impl AttackOperator for RandomReward {
    fn name(&self) -> &'static str {
        "random_reward"
    }
    fn mode(&self) -> AttackMode {
        AttackMode::RandomReward
    }
    fn corrupt_reward(&self, ctx: &AttackContext, _clean_r: f64, rng: &mut ChaCha8Rng) -> f64 {
        (2.0 * rng.random::<f64>() - 1.0) * ctx.eps
    }
}

struct AdversarialReward;

impl AttackOperator for AdversarialReward {
    fn name(&self) -> &'static str {
        "adversarial_reward"
    }
    fn mode(&self) -> AttackMode {
        AttackMode::AdversarialReward
    }
    fn corrupt_reward(&self, ctx: &AttackContext, clean_r: f64, _rng: &mut ChaCha8Rng) -> f64 {
        -ctx.eps * clean_r
    }
}

struct RandomDynamics;

impl AttackOperator for RandomDynamics {
    fn name(&self) -> &'static str {
        "random_dynamics"
    }
    fn mode(&self) -> AttackMode {
        AttackMode::RandomDynamics
    }
    fn check_compatible(&self, ctx: &AttackContext) -> Result<()> {
        require_two_states(ctx)
    }
    fn redirect(
        &self,
        ctx: &AttackContext,
        _h0: usize,
        clean_x_next: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let nb = ctx.neighborhood(clean_x_next);
        let span = nb.end() - nb.start() + 1;
        nb.start() + (rng.random::<f64>() * span as f64) as usize
    }
    fn kernel_row(&self, ctx: &AttackContext, _h0: usize, clean_draw: usize) -> Option<Vec<f64>> {
        let nb = ctx.neighborhood(clean_draw);
        let span = (nb.end() - nb.start() + 1) as f64;
        let mut row = vec![0.0; ctx.mdp.s_count];
        for y in nb {
            row[y] = 1.0 / span;
        }
        Some(row)
    }
}

struct AdversarialDynamics;

impl AdversarialDynamics {
    /// Smallest-index state in the neighborhood minimizing the greedy value at
    /// the next step. Exhaustive minimization over the neighborhood.
    fn worst_state(&self, ctx: &AttackContext, h0: usize, clean_x_next: usize) -> usize {
        let oracle = ctx.oracle.as_ref().expect("value oracle checked at construction");
        let mut best = clean_x_next;
        let mut best_v = f64::INFINITY;
        for y in ctx.neighborhood(clean_x_next) {
            let v = oracle.v_at(h0 + 1, y);
            if v < best_v {
                best_v = v;
                best = y;
            }
        }
        best
    }
}

impl AttackOperator for AdversarialDynamics {
    fn name(&self) -> &'static str {
        "adversarial_dynamics"
    }
    fn mode(&self) -> AttackMode {
        AttackMode::AdversarialDynamics
    }
    fn check_compatible(&self, ctx: &AttackContext) -> Result<()> {
        require_two_states(ctx)?;
        if ctx.oracle.is_none() {
            return Err(Error::Incompatible(
                "adversarial dynamics attack requires a value-table oracle".into(),
            ));
        }
        Ok(())
    }
    fn redirect(
        &self,
        ctx: &AttackContext,
        h0: usize,
        clean_x_next: usize,
        _rng: &mut ChaCha8Rng,
    ) -> usize {
        self.worst_state(ctx, h0, clean_x_next)
    }
    fn kernel_row(&self, ctx: &AttackContext, h0: usize, clean_draw: usize) -> Option<Vec<f64>> {
        let mut row = vec![0.0; ctx.mdp.s_count];
        row[self.worst_state(ctx, h0, clean_draw)] = 1.0;
        Some(row)
    }
}

static RANDOM_REWARD: RandomReward = RandomReward;
static RANDOM_DYNAMICS: RandomDynamics = RandomDynamics;
static ADVERSARIAL_REWARD: AdversarialReward = AdversarialReward;
static ADVERSARIAL_DYNAMICS: AdversarialDynamics = AdversarialDynamics;

/// All registered corruption operators.
pub fn operators() -> [&'static dyn AttackOperator; 4] {
    [
        &RANDOM_REWARD,
        &RANDOM_DYNAMICS,
        &ADVERSARIAL_REWARD,
        &ADVERSARIAL_DYNAMICS,
    ]
}

pub fn operator_by_name(name: &str) -> Option<&'static dyn AttackOperator> {
    operators().into_iter().find(|op| op.name() == name)
}

pub fn operator_for(mode: AttackMode) -> &'static dyn AttackOperator {
    operators()
        .into_iter()
        .find(|op| op.mode() == mode)
        .expect("every mode is registered")
}

/// Number of records a rate-`c` attack corrupts. Rounded, except that a
/// budget below one whole record corrupts nothing.
pub fn corrupted_count(spec: &AttackSpec, dataset_size: usize) -> usize {
    let budget = spec.c * dataset_size as f64;
    if budget < 1.0 {
        if budget > 0.0 {
            eprintln!(
                "warning: corruption budget c*|D| = {budget:.3} is below one record; corrupting none"
            );
        }
        0
    } else {
        budget.round() as usize
    }
}

/// Uniformly random subset of `corrupted_count` record indices, without
/// replacement, in sorted order. Deterministic in the attack seed.
pub fn sample_corrupted_indices(spec: &AttackSpec, dataset_size: usize) -> Vec<usize> {
    let count = corrupted_count(spec, dataset_size);
    let mut rng = rng_from_seed(derive_seed(spec.seed, 0xA77A));
    let mut pool: Vec<usize> = (0..dataset_size).collect();
    for i in 0..count {
        let j = i + (rng.random::<f64>() * (dataset_size - i) as f64) as usize;
        pool.swap(i, j.min(dataset_size - 1));
    }
    let mut chosen = pool[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Applies a post-hoc attack to a saved dataset. The input is untouched;
/// corrupted copies of the dataset and sidecar come back with a report.
/// Trajectories are not re-simulated, so state chaining may break by design.
pub fn corrupt(
    ds: &OfflineDataset,
    sidecar: &TruthSidecar,
    spec: &AttackSpec,
    mdp: &TabularMdp,
    qoracle: Option<&ValueTables>,
) -> Result<(OfflineDataset, TruthSidecar, CorruptionReport)> {
    spec.validate()?;
    if spec.timing != AttackTiming::PostHoc {
        return Err(Error::Incompatible(
            "corrupt applies post-hoc attacks; pass on-the-fly specs to collect".into(),
        ));
    }
    if sidecar.entries.len() != ds.records.len() {
        return Err(Error::dimension("sidecar length differs from record count"));
    }
    if ds.is_empty() {
        return Err(Error::invalid_argument("cannot corrupt an empty dataset"));
    }
    if ds.horizon != mdp.horizon {
        return Err(Error::dimension("dataset horizon differs from MDP"));
    }
    let ctx = AttackContext::new(spec, mdp, qoracle.cloned())?;

    let mut out_ds = ds.clone();
    let mut out_sc = sidecar.clone();
    out_sc.attack = Some(spec.clone());
    out_ds.meta.attack = Some(spec.clone());

    for idx in sample_corrupted_indices(spec, ds.len()) {
        let rec = &mut out_ds.records[idx];
        let mut rng = rng_from_seed(derive_seed(spec.seed, 0x5000_0000 + idx as u64));
        let entry = &mut out_sc.entries[idx];
        let step = ctx.corrupt_one(rec.h - 1, rec.x, rec.a, rec.r, rec.x_next, &mut rng);
        rec.r = step.r;
        rec.x_next = step.x_next;
        entry.corrupted = true;
        // bound against the clean values, in case this record was already touched
        entry.zeta = (rec.r - entry.clean_r).abs()
            + if spec.mode.touches_dynamics() {
                ctx.kernel_tv(rec.h - 1, rec.x, rec.a)
            } else {
                0.0
            };
    }

    let report = account_corruption(mdp, &out_ds, &out_sc)?;
    Ok((out_ds, out_sc, report))
}

/// Aggregates the sidecar's per-record gap bounds into per-step totals and
/// the coarse `|D| * c * eps` budget.
pub fn account_corruption(
    mdp: &TabularMdp,
    ds: &OfflineDataset,
    sidecar: &TruthSidecar,
) -> Result<CorruptionReport> {
    if sidecar.entries.len() != ds.records.len() {
        return Err(Error::dimension(
            "sidecar length differs from record count; accounting needs the full sidecar",
        ));
    }
    if ds.horizon != mdp.horizon {
        return Err(Error::dimension("dataset horizon differs from MDP"));
    }
    let mut per_h = vec![0.0; ds.horizon];
    let mut num_corrupted = 0;
    for (rec, entry) in ds.records.iter().zip(&sidecar.entries) {
        if entry.corrupted {
            num_corrupted += 1;
            per_h[rec.h - 1] += entry.zeta;
        }
    }
    let attack = sidecar.attack.clone().or_else(|| ds.meta.attack.clone());
    let zeta_approx = attack
        .as_ref()
        .map(|s| zeta_budget(ds.len(), s.c, s.eps))
        .unwrap_or(0.0);
    Ok(CorruptionReport {
        num_corrupted,
        zeta_approx,
        zeta_exact_per_h: Some(per_h),
        attack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect;
    use crate::envs::{build_linear_mdp, solve_optimal, Policy};

    fn setup(n: usize) -> (TabularMdp, OfflineDataset, TruthSidecar) {
        let mdp = build_linear_mdp(2, 4, 2, 3, 5).unwrap().base;
        let behavior = Policy::uniform(mdp.horizon, mdp.s_count, mdp.a_count);
        let (ds, sc) = collect(&mdp, &behavior, n, 11, None).unwrap();
        (mdp, ds, sc)
    }

    fn spec(mode: AttackMode, c: f64, eps: f64) -> AttackSpec {
        AttackSpec {
            mode,
            c,
            eps,
            timing: AttackTiming::PostHoc,
            seed: 99,
        }
    }

    #[test]
    fn adversarial_reward_flips_and_scales() {
        let (mdp, ds, sc) = setup(50);
        let (out, out_sc, report) =
            corrupt(&ds, &sc, &spec(AttackMode::AdversarialReward, 0.2, 3.0), &mdp, None).unwrap();
        let expected = (0.2 * ds.len() as f64).round() as usize;
        assert_eq!(report.num_corrupted, expected);
        for (i, e) in out_sc.entries.iter().enumerate() {
            if e.corrupted {
                assert!((out.records[i].r - (-3.0 * e.clean_r)).abs() < 1e-15);
                assert!((e.zeta - 4.0 * e.clean_r.abs()).abs() < 1e-12);
            } else {
                assert_eq!(out.records[i].r, ds.records[i].r);
            }
        }
    }

    #[test]
    fn random_reward_stays_in_range_and_counts() {
        let (mdp, ds, sc) = setup(40);
        let (out, out_sc, report) =
            corrupt(&ds, &sc, &spec(AttackMode::RandomReward, 0.2, 30.0), &mdp, None).unwrap();
        assert_eq!(report.num_corrupted, (0.2 * ds.len() as f64).round() as usize);
        for (i, e) in out_sc.entries.iter().enumerate() {
            if e.corrupted {
                assert!(out.records[i].r.abs() <= 30.0);
            }
        }
        // zeta budget: |D| * c * eps
        assert!((report.zeta_approx - ds.len() as f64 * 0.2 * 30.0).abs() < 1e-9);
    }

    #[test]
    fn adversarial_dynamics_minimizes_next_value() {
        let (mdp, ds, sc) = setup(50);
        let oracle = solve_optimal(&mdp).1;
        let atk = spec(AttackMode::AdversarialDynamics, 0.3, 1.0);
        let (out, out_sc, _) = corrupt(&ds, &sc, &atk, &mdp, Some(&oracle)).unwrap();
        for (i, e) in out_sc.entries.iter().enumerate() {
            if e.corrupted {
                let rec = &out.records[i];
                let lo = e.clean_x_next.saturating_sub(1);
                let hi = (e.clean_x_next + 1).min(mdp.s_count - 1);
                let best = (lo..=hi)
                    .min_by(|&p, &q| {
                        oracle
                            .v_at(rec.h, p)
                            .partial_cmp(&oracle.v_at(rec.h, q))
                            .unwrap()
                            .then(p.cmp(&q))
                    })
                    .unwrap();
                assert_eq!(rec.x_next, best);
            }
        }
    }

    #[test]
    fn adversarial_dynamics_requires_oracle() {
        let (mdp, ds, sc) = setup(10);
        let err = corrupt(&ds, &sc, &spec(AttackMode::AdversarialDynamics, 0.5, 1.0), &mdp, None);
        assert!(err.is_err());
    }

    #[test]
    fn sub_one_record_budget_corrupts_nothing() {
        let (mdp, ds, sc) = setup(3); // 9 records; c = 0.05 -> budget 0.45
        let (_, out_sc, report) =
            corrupt(&ds, &sc, &spec(AttackMode::RandomReward, 0.05, 1.0), &mdp, None).unwrap();
        assert_eq!(report.num_corrupted, 0);
        assert!(out_sc.entries.iter().all(|e| !e.corrupted));
    }

    #[test]
    fn clean_accounting_is_zero_everywhere() {
        let (mdp, ds, sc) = setup(8);
        let report = account_corruption(&mdp, &ds, &sc).unwrap();
        assert_eq!(report.num_corrupted, 0);
        assert_eq!(report.zeta_approx, 0.0);
        assert!(report.zeta_exact_per_h.unwrap().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn single_reward_change_accounts_its_delta() {
        let (mdp, ds, mut sc) = setup(6);
        let mut out = ds.clone();
        out.records[7].r = sc.entries[7].clean_r + 0.25;
        sc.entries[7].corrupted = true;
        sc.entries[7].zeta = 0.25;
        let report = account_corruption(&mdp, &out, &sc).unwrap();
        let per_h = report.zeta_exact_per_h.unwrap();
        let h0 = out.records[7].h - 1;
        assert!((per_h[h0] - 0.25).abs() < 1e-15);
        assert_eq!(report.num_corrupted, 1);
    }

    #[test]
    fn corrupted_subset_is_uniform_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let size = 60;
        let trials = 400;
        let mut counts = vec![0usize; size];
        for t in 0..trials {
            let s = AttackSpec {
                mode: AttackMode::RandomReward,
                c: 0.5,
                eps: 1.0,
                timing: AttackTiming::PostHoc,
                seed: 1000 + t as u64,
            };
            for idx in sample_corrupted_indices(&s, size) {
                counts[idx] += 1;
            }
        }
        let expected = trials as f64 * 0.5;
        let stat: f64 = counts
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        let dist = ChiSquared::new((size - 1) as f64).unwrap();
        let p = 1.0 - dist.cdf(stat);
        assert!(p > 0.001, "chi-square p-value {p} too small (stat {stat})");
    }
}
