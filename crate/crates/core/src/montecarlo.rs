//! Monte Carlo sampling of measurement chains.
//!
//! RNG contract: trial `t` draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! stream `t` (rand_chacha 0.9). Trials are independent, results are
//! collected in trial order and aggregated serially, so serial and parallel
//! runs of the same spec are bit-identical.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instrument::{schrodinger_action, Instrument, PROBABILITY_FLOOR};
use crate::linalg::{hermitian_part, trace, CMatrix, DensityOperator};
use crate::povm::PROBABILITY_CLIP;
use crate::sequential::JOINT_SEPARATOR;

/// Probabilities are renormalized when their sum is this close to one.
pub const RENORMALIZATION_TOL: f64 = 1e-9;
pub const DEFAULT_Z_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub initial: DensityOperator,
    pub stages: Vec<Instrument>,
    pub trials: usize,
    pub seed: u64,
    /// Accumulate the mean final state per outcome sequence.
    pub track_states: bool,
}

impl ChainSpec {
    pub fn new(
        initial: DensityOperator,
        stages: Vec<Instrument>,
        trials: usize,
        seed: u64,
    ) -> Self {
        Self {
            initial,
            stages,
            trials,
            seed,
            track_states: false,
        }
    }

    pub fn with_states(mut self) -> Self {
        self.track_states = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidChain("at least one trial is required".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidChain("at least one stage is required".into()));
        }
        let d = self.initial.dim();
        for (n, stage) in self.stages.iter().enumerate() {
            if stage.dim() != d {
                return Err(Error::InvalidChain(format!(
                    "stage {n} has dimension {}, initial state has {d}",
                    stage.dim()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSummary {
    pub labels: Vec<String>,
    pub count: u64,
    pub mean_state: Option<CMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub trials: usize,
    pub seed: u64,
    pub stage_labels: Vec<Vec<String>>,
    /// Outcome index per (trial, stage), trial-major.
    outcomes: Vec<usize>,
    pub stage_counts: Vec<Vec<u64>>,
    /// Observed sequences in lexicographic order of outcome indices.
    pub sequences: Vec<SequenceSummary>,
}

impl ChainRecord {
    pub fn stages(&self) -> usize {
        self.stage_labels.len()
    }

    pub fn trial_outcomes(&self, trial: usize) -> &[usize] {
        let n = self.stages();
        &self.outcomes[trial * n..(trial + 1) * n]
    }

    pub fn trial_labels(&self, trial: usize) -> Vec<&str> {
        self.trial_outcomes(trial)
            .iter()
            .enumerate()
            .map(|(stage, &i)| self.stage_labels[stage][i].as_str())
            .collect()
    }

    pub fn frequencies(&self, stage: usize) -> Vec<f64> {
        self.stage_counts[stage]
            .iter()
            .map(|&c| c as f64 / self.trials as f64)
            .collect()
    }

    pub fn stage_table(&self, stage: usize) -> Vec<(String, u64)> {
        self.stage_labels[stage]
            .iter()
            .cloned()
            .zip(self.stage_counts[stage].iter().copied())
            .collect()
    }

    /// Counts of whole outcome sequences, keyed by `"a|b|…"`.
    pub fn joint_table(&self) -> Vec<(String, u64)> {
        self.sequences
            .iter()
            .map(|s| (join_labels(&s.labels), s.count))
            .collect()
    }

    pub fn sequence(&self, labels: &[&str]) -> Option<&SequenceSummary> {
        self.sequences.iter().find(|s| {
            s.labels
                .iter()
                .map(String::as_str)
                .eq(labels.iter().copied())
        })
    }

    /// Rows `table,label,count,frequency` for every stage and the joint table.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["table", "label", "count", "frequency"])
            .map_err(io)?;
        let n = self.trials as f64;
        let mut rows = Vec::new();
        for stage in 0..self.stages() {
            for (label, count) in self.stage_table(stage) {
                rows.push((format!("stage{stage}"), label, count));
            }
        }
        for (label, count) in self.joint_table() {
            rows.push(("joint".to_owned(), label, count));
        }
        for (table, label, count) in rows {
            w.write_record([
                table,
                label,
                count.to_string(),
                format!("{}", count as f64 / n),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn join_labels<S: AsRef<str>>(labels: &[S]) -> String {
    let mut out = String::new();
    for (n, l) in labels.iter().enumerate() {
        if n > 0 {
            out.push(JOINT_SEPARATOR);
        }
        out.push_str(l.as_ref());
    }
    out
}

struct Trial {
    outcomes: Vec<usize>,
    state: Option<CMatrix>,
}

/// `(p_i, A_i ρ A_i† summed)` for every outcome, renormalized.
fn branch_outputs(stage: &Instrument, rho: &CMatrix) -> Result<(Vec<f64>, Vec<CMatrix>)> {
    let d = stage.dim();
    let mut probs = Vec::with_capacity(stage.outcomes().len());
    let mut outs = Vec::with_capacity(stage.outcomes().len());
    for o in stage.outcomes() {
        let out = schrodinger_action(&o.kraus, rho, d);
        let p = trace(&out).re;
        probs.push(if p < 0.0 && p >= -PROBABILITY_CLIP {
            0.0
        } else {
            p.max(0.0)
        });
        outs.push(out);
    }
    let total: f64 = probs.iter().sum();
    if total <= PROBABILITY_FLOOR {
        return Err(Error::AllZeroProbabilities { total });
    }
    if (total - 1.0).abs() > RENORMALIZATION_TOL {
        return Err(Error::NotTotal {
            residual: (total - 1.0).abs(),
        });
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok((probs, outs))
}

/// Inverse CDF over the ordered outcomes; never returns a zero-probability index.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn run_trial(spec: &ChainSpec, trial: usize) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(trial as u64);
    let mut rho = spec.initial.matrix().clone();
    let mut outcomes = Vec::with_capacity(spec.stages.len());
    for stage in &spec.stages {
        let (probs, outs) = branch_outputs(stage, &rho)?;
        let u: f64 = rng.random();
        let i = sample_index(&probs, u);
        let p = trace(&outs[i]).re;
        rho = hermitian_part(&outs[i].unscale(p));
        outcomes.push(i);
    }
    Ok(Trial {
        outcomes,
        state: spec.track_states.then_some(rho),
    })
}

pub fn run_chain(spec: &ChainSpec) -> Result<ChainRecord> {
    run_chain_with(spec, Execution::Parallel)
}

pub fn run_chain_with(spec: &ChainSpec, execution: Execution) -> Result<ChainRecord> {
    spec.validate()?;
    let trials: Vec<Trial> = match execution {
        Execution::Serial => (0..spec.trials)
            .map(|t| run_trial(spec, t))
            .collect::<Result<_>>()?,
        Execution::Parallel => (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(spec, t))
            .collect::<Result<_>>()?,
    };

    let stage_labels: Vec<Vec<String>> = spec
        .stages
        .iter()
        .map(|s| s.labels().map(str::to_owned).collect())
        .collect();
    let mut stage_counts: Vec<Vec<u64>> = stage_labels.iter().map(|l| vec![0; l.len()]).collect();
    let mut seq: BTreeMap<Vec<usize>, (u64, Option<CMatrix>)> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(spec.trials * spec.stages.len());
    for trial in trials {
        for (stage, &i) in trial.outcomes.iter().enumerate() {
            stage_counts[stage][i] += 1;
        }
        let entry = seq.entry(trial.outcomes.clone()).or_insert((0, None));
        entry.0 += 1;
        if let Some(state) = trial.state {
            entry.1 = Some(match entry.1.take() {
                Some(sum) => sum + state,
                None => state,
            });
        }
        outcomes.extend(trial.outcomes);
    }
    let sequences = seq
        .into_iter()
        .map(|(idx, (count, sum))| SequenceSummary {
            labels: idx
                .iter()
                .enumerate()
                .map(|(stage, &i)| stage_labels[stage][i].clone())
                .collect(),
            count,
            mean_state: sum.map(|s| s.unscale(count as f64)),
        })
        .collect();
    Ok(ChainRecord {
        trials: spec.trials,
        seed: spec.seed,
        stage_labels,
        outcomes,
        stage_counts,
        sequences,
    })
}

/// Exact probabilities of every outcome sequence, keyed like [`ChainRecord::joint_table`].
pub fn analytic_sequence_probabilities(spec: &ChainSpec) -> Result<Vec<(String, f64)>> {
    spec.validate()?;
    let mut frontier: Vec<(Vec<String>, CMatrix)> =
        vec![(Vec::new(), spec.initial.matrix().clone())];
    for stage in &spec.stages {
        let d = stage.dim();
        let mut next = Vec::with_capacity(frontier.len() * stage.outcomes().len());
        for (labels, rho) in &frontier {
            for o in stage.outcomes() {
                let mut l = labels.clone();
                l.push(o.label.clone());
                next.push((l, schrodinger_action(&o.kraus, rho, d)));
            }
        }
        frontier = next;
    }
    Ok(frontier
        .into_iter()
        .map(|(labels, out)| (join_labels(&labels), trace(&out).re.max(0.0)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZRow {
    pub label: String,
    pub expected: f64,
    pub observed: f64,
    pub count: u64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub trials: u64,
    pub rows: Vec<ZRow>,
    pub max_z: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Per-label z-scores `|f − p| / √(p(1−p)/N)`.
///
/// Labels absent from `counts` were observed zero times; labels absent from
/// `analytic` are expected with probability zero. A deterministic outcome
/// (`p ∈ {0, 1}`) scores zero if matched exactly and infinity otherwise.
pub fn empirical_vs_analytic(
    counts: &[(String, u64)],
    analytic: &[(String, f64)],
    threshold: f64,
) -> ComparisonReport {
    let n: u64 = counts.iter().map(|(_, c)| c).sum();
    let mut labels: Vec<&str> = analytic.iter().map(|(l, _)| l.as_str()).collect();
    for (l, _) in counts {
        if !labels.contains(&l.as_str()) {
            labels.push(l);
        }
    }
    let rows: Vec<ZRow> = labels
        .into_iter()
        .map(|label| {
            let count = counts
                .iter()
                .find(|(l, _)| l == label)
                .map_or(0, |(_, c)| *c);
            let expected = analytic
                .iter()
                .find(|(l, _)| l == label)
                .map_or(0.0, |(_, p)| *p);
            let observed = if n == 0 { 0.0 } else { count as f64 / n as f64 };
            let variance = expected * (1.0 - expected) / n.max(1) as f64;
            let diff = (observed - expected).abs();
            let z = if variance > 0.0 {
                diff / variance.sqrt()
            } else if diff <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            ZRow {
                label: label.to_owned(),
                expected,
                observed,
                count,
                z,
            }
        })
        .collect();
    let max_z = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    ComparisonReport {
        trials: n,
        rows,
        max_z,
        threshold,
        passed: max_z <= threshold,
    }
}
