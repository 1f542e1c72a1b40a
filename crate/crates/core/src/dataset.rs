//! Offline trajectory collection and the line-oriented dataset files.
//!
//! A dataset is the only thing a solver ever sees. The clean values and
//! corruption flags live in a separate sidecar structure and file, so the
//! solver-facing artifact carries no trace of what the adversary did.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversary::{self, AttackContext, AttackSpec, AttackTiming};
use crate::envs::{
    fnv1a64, solve_optimal, tabular_to_json, Policy, RewardRealization, TabularMdp,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// One observed step. `h` is 1-based to match the on-disk record format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode: usize,
    pub h: usize,
    pub x: usize,
    pub a: usize,
    pub r: f64,
    pub x_next: usize,
}

/// Provenance of a collected dataset. Not part of the dataset file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mdp_hash: Option<u64>,
    pub behavior_hash: Option<u64>,
    pub seed: Option<u64>,
    pub attack: Option<AttackSpec>,
}

/// An immutable list of `n * H` transition records, grouped by episode then step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub records: Vec<TransitionRecord>,
    pub n: usize,
    pub horizon: usize,
    pub meta: DatasetMeta,
}

impl OfflineDataset {
    /// Records at 0-based step index `h0`, with their dataset positions.
    pub fn records_at_step(&self, h0: usize) -> Vec<(usize, &TransitionRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, rec)| rec.h == h0 + 1)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Structural checks: exactly `n * H` records covering each `(episode, h)`
    /// cell once, in episode-major order.
    pub fn validate_grid(&self) -> Result<()> {
        if self.records.len() != self.n * self.horizon {
            return Err(Error::invalid_argument(format!(
                "expected {} records, found {}",
                self.n * self.horizon,
                self.records.len()
            )));
        }
        for (i, rec) in self.records.iter().enumerate() {
            let (ep, h) = (i / self.horizon, i % self.horizon + 1);
            if rec.episode != ep || rec.h != h {
                return Err(Error::invalid_argument(format!(
                    "record {i} out of order: episode {} step {}",
                    rec.episode, rec.h
                )));
            }
            if !rec.r.is_finite() {
                return Err(Error::invalid_argument(format!("record {i} has non-finite reward")));
            }
        }
        Ok(())
    }

    /// Within-episode chaining: the state at step h+1 is the stored next state
    /// of step h. Holds for freshly collected data; corruption applied after
    /// collection intentionally breaks it.
    pub fn validate_chaining(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[0].episode == w[1].episode && w[1].x != w[0].x_next {
                return Err(Error::invalid_argument(format!(
                    "episode {} step {} starts at {} but previous next-state was {}",
                    w[1].episode, w[1].h, w[1].x, w[0].x_next
                )));
            }
        }
        Ok(())
    }
}

/// Hidden truth for each record: what the environment actually produced, and
/// the corruption bound attributed to the record. Solvers never read this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub clean_r: f64,
    pub clean_x_next: usize,
    pub corrupted: bool,
    /// Upper bound on the per-record operator gap:
    /// |r - clean_r| plus a total-variation term when dynamics were touched.
    pub zeta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub entries: Vec<SidecarEntry>,
    pub attack: Option<AttackSpec>,
}

impl TruthSidecar {
    pub fn clean(len: usize) -> Self {
        TruthSidecar {
            entries: vec![
                SidecarEntry {
                    clean_r: 0.0,
                    clean_x_next: 0,
                    corrupted: false,
                    zeta: 0.0,
                };
                len
            ],
            attack: None,
        }
    }
}

fn sample_categorical<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &q) in row.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

fn sample_reward<R: Rng>(rng: &mut R, mdp: &TabularMdp, h: usize, s: usize, a: usize) -> f64 {
    let mean = mdp.r[h][s][a];
    match mdp.reward_realization {
        RewardRealization::BoundedNoise => {
            // width truncated so rewards stay nonnegative; mean preserved
            let w = mdp.reward_noise.min(mean);
            if w == 0.0 {
                mean
            } else {
                mean + (2.0 * rng.random::<f64>() - 1.0) * w
            }
        }
        RewardRealization::Bernoulli => {
            let p = (mdp.horizon as f64 * mean).clamp(0.0, 1.0);
            if rng.random::<f64>() < p {
                1.0 / mdp.horizon as f64
            } else {
                0.0
            }
        }
    }
}

fn sample_action<R: Rng>(rng: &mut R, policy: &Policy, h: usize, s: usize) -> usize {
    match policy {
        Policy::Deterministic(t) => t[h][s],
        Policy::Stochastic(t) => sample_categorical(rng, &t[h][s]),
    }
}

/// Simulates `n` episodes under `behavior`. With an on-the-fly adversary the
/// corrupted `(r, x_next)` replaces the clean draw before it is appended and
/// the trajectory continues from the corrupted state.
///
/// Deterministic in `seed`: episode `i` draws from a stream derived as
/// `derive_seed(seed, i)`, and each corrupted record has its own attack
/// stream, so outcomes do not depend on evaluation order.
pub fn collect(
    mdp: &TabularMdp,
    behavior: &Policy,
    n: usize,
    seed: u64,
    adversary: Option<&AttackSpec>,
) -> Result<(OfflineDataset, TruthSidecar)> {
    if n == 0 {
        return Err(Error::invalid_argument("episode count must be >= 1"));
    }
    behavior.validate(mdp)?;

    let mut attack_ctx = None;
    let mut corrupted_set = vec![false; n * mdp.horizon];
    if let Some(spec) = adversary {
        spec.validate()?;
        if spec.timing != AttackTiming::OnTheFly {
            return Err(Error::Incompatible(
                "collect only applies on-the-fly attacks; corrupt the saved dataset instead"
                    .into(),
            ));
        }
        let oracle = if spec.mode.needs_value_oracle() {
            Some(solve_optimal(mdp).1)
        } else {
            None
        };
        let ctx = AttackContext::new(spec, mdp, oracle)?;
        for idx in adversary::sample_corrupted_indices(spec, n * mdp.horizon) {
            corrupted_set[idx] = true;
        }
        attack_ctx = Some(ctx);
    }

    let mut records = Vec::with_capacity(n * mdp.horizon);
    let mut entries = Vec::with_capacity(n * mdp.horizon);
    for ep in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, ep as u64));
        let mut x = sample_categorical(&mut rng, &mdp.x1);
        for h in 0..mdp.horizon {
            let a = sample_action(&mut rng, behavior, h, x);
            let clean_r = sample_reward(&mut rng, mdp, h, x, a);
            let clean_x_next = sample_categorical(&mut rng, &mdp.p[h][x][a]);
            let idx = ep * mdp.horizon + h;
            let (mut r, mut x_next) = (clean_r, clean_x_next);
            let mut zeta = 0.0;
            let corrupted = corrupted_set[idx];
            if corrupted {
                let ctx = attack_ctx.as_ref().expect("attack context");
                let spec = adversary.expect("attack spec");
                let mut att_rng =
                    rng_from_seed(derive_seed(spec.seed, 0x5000_0000 + idx as u64));
                let out = ctx.corrupt_one(h, x, a, clean_r, clean_x_next, &mut att_rng);
                r = out.r;
                x_next = out.x_next;
                zeta = out.zeta;
            }
            records.push(TransitionRecord {
                episode: ep,
                h: h + 1,
                x,
                a,
                r,
                x_next,
            });
            entries.push(SidecarEntry {
                clean_r,
                clean_x_next,
                corrupted,
                zeta,
            });
            x = x_next;
        }
    }

    let meta = DatasetMeta {
        mdp_hash: Some(fnv1a64(tabular_to_json(mdp).as_bytes())),
        behavior_hash: Some(fnv1a64(
            serde_json::to_string(behavior).unwrap_or_default().as_bytes(),
        )),
        seed: Some(seed),
        attack: adversary.cloned(),
    };
    let ds = OfflineDataset {
        records,
        n,
        horizon: mdp.horizon,
        meta,
    };
    ds.validate_grid()?;
    ds.validate_chaining()?;
    let sidecar = TruthSidecar {
        entries,
        attack: adversary.cloned(),
    };
    Ok((ds, sidecar))
}

fn dataset_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".dataset.jsonl");
    PathBuf::from(p)
}

fn sidecar_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".sidecar.jsonl");
    PathBuf::from(p)
}

/// Writes `<prefix>.dataset.jsonl` and, when a sidecar is supplied,
/// `<prefix>.sidecar.jsonl`. One record per line, LF endings, reals with 17
/// significant digits; the round trip is bit-exact.
pub fn serialize_dataset(
    ds: &OfflineDataset,
    sidecar: Option<&TruthSidecar>,
    path_prefix: &Path,
) -> Result<()> {
    use crate::envs::fmt_real;
    let mut out = String::new();
    for rec in &ds.records {
        out.push_str(&format!(
            "{{\"episode\":{},\"h\":{},\"x\":{},\"a\":{},\"r\":{},\"x_next\":{}}}\n",
            rec.episode,
            rec.h,
            rec.x,
            rec.a,
            fmt_real(rec.r),
            rec.x_next
        ));
    }
    fs::write(dataset_path(path_prefix), out)?;
    if let Some(sc) = sidecar {
        if sc.entries.len() != ds.records.len() {
            return Err(Error::dimension("sidecar length differs from record count"));
        }
        let mut out = String::new();
        for e in &sc.entries {
            out.push_str(&format!(
                "{{\"clean_r\":{},\"clean_x_next\":{},\"corrupted\":{},\"zeta\":{}}}\n",
                fmt_real(e.clean_r),
                e.clean_x_next,
                e.corrupted,
                fmt_real(e.zeta)
            ));
        }
        fs::write(sidecar_path(path_prefix), out)?;
    }
    Ok(())
}

fn parse_line(line: &str, lineno: usize) -> Result<Value> {
    serde_json::from_str::<Value>(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })
}

fn field_u64(v: &Value, key: &str, lineno: usize) -> Result<u64> {
    v.get(key).and_then(Value::as_u64).ok_or(Error::Parse {
        line: lineno,
        message: format!("missing or non-integer field {key}"),
    })
}

fn field_f64(v: &Value, key: &str, lineno: usize) -> Result<f64> {
    v.get(key).and_then(Value::as_f64).ok_or(Error::Parse {
        line: lineno,
        message: format!("missing or non-numeric field {key}"),
    })
}

/// Loads a dataset written by [`serialize_dataset`]. The sidecar file is
/// optional: handing someone the dataset file alone reveals nothing about
/// corruption. The first malformed line is reported by number.
pub fn load_dataset(path_prefix: &Path) -> Result<(OfflineDataset, Option<TruthSidecar>)> {
    let text = fs::read_to_string(dataset_path(path_prefix))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "blank line in dataset file".into(),
            });
        }
        let v = parse_line(line, lineno)?;
        records.push(TransitionRecord {
            episode: field_u64(&v, "episode", lineno)? as usize,
            h: field_u64(&v, "h", lineno)? as usize,
            x: field_u64(&v, "x", lineno)? as usize,
            a: field_u64(&v, "a", lineno)? as usize,
            r: field_f64(&v, "r", lineno)?,
            x_next: field_u64(&v, "x_next", lineno)? as usize,
        });
    }
    if records.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "dataset file is empty".into(),
        });
    }
    let horizon = records.iter().map(|r| r.h).max().unwrap_or(0);
    let n = records.iter().map(|r| r.episode).max().unwrap_or(0) + 1;
    let ds = OfflineDataset {
        records,
        n,
        horizon,
        meta: DatasetMeta::default(),
    };
    ds.validate_grid().map_err(|e| Error::Parse {
        line: ds.records.len(),
        message: format!("truncated or reordered dataset: {e}"),
    })?;

    let sc_path = sidecar_path(path_prefix);
    let sidecar = if sc_path.exists() {
        let text = fs::read_to_string(sc_path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let v = parse_line(line, lineno)?;
            entries.push(SidecarEntry {
                clean_r: field_f64(&v, "clean_r", lineno)?,
                clean_x_next: field_u64(&v, "clean_x_next", lineno)? as usize,
                corrupted: v.get("corrupted").and_then(Value::as_bool).ok_or(Error::Parse {
                    line: lineno,
                    message: "missing or non-boolean field corrupted".into(),
                })?,
                zeta: field_f64(&v, "zeta", lineno)?,
            });
        }
        if entries.len() != ds.records.len() {
            return Err(Error::Parse {
                line: entries.len(),
                message: "sidecar line count differs from dataset".into(),
            });
        }
        Some(TruthSidecar {
            entries,
            attack: None,
        })
    } else {
        None
    };
    Ok((ds, sidecar))
}
