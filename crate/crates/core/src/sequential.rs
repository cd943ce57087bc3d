//! Sequential composition of instruments and complete measurements.
//!
//! Measuring `M` and then `N` gives the joint instrument
//! `J(X×Y, B) = M(X, N(Y, B))`. Joint outcomes are labelled `"a|b"`.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::instrument::{
    associated_povm, instrument_from_kraus, luders_instrument, minimal_kraus, Instrument,
    InstrumentOutcome,
};
use crate::linalg::{
    hermitian_residual, identity, outer, scaled_tol, trace, CMatrix, CVector, DEFAULT_TOL, ZERO,
};
use crate::povm::{DiscretePovm, Outcome, Pvm, RefinedPovm};

pub const JOINT_SEPARATOR: char = '|';

pub fn joint_label(first: &str, second: &str) -> String {
    format!("{first}{JOINT_SEPARATOR}{second}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointInstrument {
    inner: Instrument,
    pairs: Vec<(String, String)>,
    first_labels: Vec<String>,
    second_labels: Vec<String>,
}

impl JointInstrument {
    /// Validates totality over all pairs. Pairs may carry empty Kraus lists.
    pub fn new(
        dim: usize,
        outcomes: Vec<((String, String), Vec<CMatrix>)>,
        tol: f64,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(outcomes.len());
        let mut built = Vec::with_capacity(outcomes.len());
        let mut seen = HashSet::new();
        for ((a, b), kraus) in outcomes {
            let label = joint_label(&a, &b);
            if !seen.insert(label.clone()) {
                return Err(Error::DuplicateLabel { label });
            }
            for k in &kraus {
                if k.nrows() != dim || k.ncols() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "Kraus operator for {label} is {}x{}, expected {dim}x{dim}",
                        k.nrows(),
                        k.ncols()
                    )));
                }
                if !crate::linalg::is_finite(k) {
                    return Err(Error::NonFinite);
                }
            }
            built.push(InstrumentOutcome {
                label,
                kraus: minimal_kraus(&kraus, DEFAULT_TOL),
            });
            pairs.push((a, b));
        }
        if built.is_empty() {
            return Err(Error::EmptyPovm);
        }
        let joint = Self::assemble(Instrument::from_outcomes_unchecked(dim, built), pairs);
        let residual = joint.inner.totality_residual();
        if residual > scaled_tol(tol, &identity(dim)) {
            return Err(Error::NotTotal { residual });
        }
        Ok(joint)
    }

    fn assemble(inner: Instrument, pairs: Vec<(String, String)>) -> Self {
        let mut first_labels: Vec<String> = Vec::new();
        let mut second_labels: Vec<String> = Vec::new();
        for (a, b) in &pairs {
            if !first_labels.contains(a) {
                first_labels.push(a.clone());
            }
            if !second_labels.contains(b) {
                second_labels.push(b.clone());
            }
        }
        Self {
            inner,
            pairs,
            first_labels,
            second_labels,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// The joint instrument as an ordinary instrument on labels `"a|b"`.
    pub fn instrument(&self) -> &Instrument {
        &self.inner
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn first_labels(&self) -> &[String] {
        &self.first_labels
    }

    pub fn second_labels(&self) -> &[String] {
        &self.second_labels
    }

    pub fn outcome(&self, first: &str, second: &str) -> Result<&InstrumentOutcome> {
        self.inner.outcome(&joint_label(first, second))
    }
}

/// First `first`, then `second`: Kraus operators `B_jt A_is`, reduced.
pub fn compose_sequential(first: &Instrument, second: &Instrument) -> Result<JointInstrument> {
    if first.dim() != second.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compose instruments of dimensions {} and {}",
            first.dim(),
            second.dim()
        )));
    }
    let mut outcomes = Vec::with_capacity(first.outcomes().len() * second.outcomes().len());
    let mut pairs = Vec::with_capacity(outcomes.capacity());
    for m in first.outcomes() {
        for n in second.outcomes() {
            let products: Vec<CMatrix> = m
                .kraus
                .iter()
                .flat_map(|a| n.kraus.iter().map(move |b| b * a))
                .collect();
            outcomes.push(InstrumentOutcome {
                label: joint_label(&m.label, &n.label),
                kraus: minimal_kraus(&products, DEFAULT_TOL),
            });
            pairs.push((m.label.clone(), n.label.clone()));
        }
    }
    Ok(JointInstrument::assemble(
        Instrument::from_outcomes_unchecked(first.dim(), outcomes),
        pairs,
    ))
}

/// Effects `J_ab(I)`; outcomes that never occur keep a zero effect.
pub fn joint_povm(j: &JointInstrument) -> DiscretePovm {
    associated_povm(&j.inner)
}

fn margin(
    j: &JointInstrument,
    labels: &[String],
    pick: impl Fn(&(String, String)) -> &String,
) -> DiscretePovm {
    let joint = joint_povm(j);
    let d = j.dim();
    let outcomes = labels
        .iter()
        .map(|label| {
            let effect = j
                .pairs
                .iter()
                .zip(joint.outcomes())
                .filter(|(p, _)| pick(p) == label)
                .fold(CMatrix::zeros(d, d), |acc, (_, o)| acc + &o.effect);
            Outcome {
                label: label.clone(),
                effect,
            }
        })
        .collect();
    DiscretePovm::from_outcomes_unchecked(d, outcomes)
}

/// `X ↦ J(X × Ω, I)`, the first measurement's POVM.
pub fn margin_first(j: &JointInstrument) -> DiscretePovm {
    margin(j, &j.first_labels, |p| &p.0)
}

/// `Y ↦ J(Ω × Y, I) = M(Ω, N(Y))`, the second POVM as disturbed by the first.
pub fn margin_second(j: &JointInstrument) -> DiscretePovm {
    margin(j, &j.second_labels, |p| &p.1)
}

/// Orthogonal projections `N_1..N_K` with completion `N_0 = I − Σ N_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityPvm {
    dim: usize,
    projections: Vec<CMatrix>,
}

impl MultiplicityPvm {
    pub fn new(projections: Vec<CMatrix>, tol: f64) -> Result<Self> {
        let Some(first) = projections.first() else {
            return Err(Error::InsufficientK {
                available: 0,
                required: 1,
            });
        };
        let dim = first.nrows();
        for (idx, p) in projections.iter().enumerate() {
            let label = (idx + 1).to_string();
            if p.nrows() != dim || p.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "projection {label} is {}x{}, expected {dim}x{dim}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            if !crate::linalg::is_finite(p) {
                return Err(Error::NonFinite);
            }
            let residual = hermitian_residual(p).max((p * p - p).norm());
            if residual > scaled_tol(tol, p) {
                return Err(Error::NotPvm { label, residual });
            }
            for (jdx, q) in projections.iter().enumerate().skip(idx + 1) {
                let residual = (p * q).norm();
                if residual > tol {
                    return Err(Error::NotPvm {
                        label: format!("{label},{}", jdx + 1),
                        residual,
                    });
                }
            }
        }
        Ok(Self { dim, projections })
    }

    /// `N_k = |e_k⟩⟨e_k|` for `k = 1..K`.
    pub fn computational(dim: usize, k: usize) -> Result<Self> {
        if k > dim {
            return Err(Error::DimensionMismatch(format!(
                "{k} basis projections in dimension {dim}"
            )));
        }
        Self::new(
            (0..k)
                .map(|i| {
                    outer(
                        &crate::linalg::basis_vector(dim, i),
                        &crate::linalg::basis_vector(dim, i),
                    )
                })
                .collect(),
            DEFAULT_TOL,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of projections `K`, not counting the completion.
    pub fn k(&self) -> usize {
        self.projections.len()
    }

    /// `N_k` for `k = 1..K`; `N_0` for `k = 0`.
    pub fn projection(&self, k: usize) -> CMatrix {
        if k == 0 {
            self.completion()
        } else {
            self.projections[k - 1].clone()
        }
    }

    pub fn projections(&self) -> &[CMatrix] {
        &self.projections
    }

    pub fn completion(&self) -> CMatrix {
        self.projections
            .iter()
            .fold(identity(self.dim), |acc, p| acc - p)
    }

    /// The PVM `{N_0, N_1, …, N_K}` labelled `"0".."K"`; `N_0` may be zero.
    pub fn as_pvm(&self) -> Pvm {
        let outcomes = (0..=self.k())
            .map(|k| Outcome {
                label: k.to_string(),
                effect: self.projection(k),
            })
            .collect();
        Pvm::from_povm_unchecked(DiscretePovm::from_outcomes_unchecked(self.dim, outcomes))
    }
}

/// Both stages of a complete measurement and their composition.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteMeasurement {
    pub first: Instrument,
    pub second: Instrument,
    pub joint: JointInstrument,
}

/// Measures `refined` (i.e. `M¹`) as `M` followed by the Lüders measurement of `mult`.
///
/// The first stage has one Kraus operator per outcome, `A_i = Σ_k |φ_k⟩⟨d_ik|`.
/// Outcome `(i, k)` then occurs with probability `⟨d_ik|ρ|d_ik⟩` and leaves
/// the system in `|φ_k⟩⟨φ_k|`.
pub fn complete_measurement(
    refined: &RefinedPovm,
    mult: &MultiplicityPvm,
    phi: &[CVector],
    tol: f64,
) -> Result<CompleteMeasurement> {
    let d = refined.dim();
    if mult.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "multiplicity projections of dimension {} for POVM of dimension {d}",
            mult.dim()
        )));
    }
    let required = refined.max_multiplicity();
    if mult.k() < required {
        return Err(Error::InsufficientK {
            available: mult.k(),
            required,
        });
    }
    if phi.len() != mult.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} vectors for {} multiplicity projections",
            phi.len(),
            mult.k()
        )));
    }
    for (idx, v) in phi.iter().enumerate() {
        let k = idx + 1;
        if v.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "vector {k} has length {}",
                v.len()
            )));
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > tol {
            return Err(Error::NotUnit {
                label: "phi".into(),
                k,
                norm,
            });
        }
        let residual = (mult.projection(k) * v - v).norm();
        if residual > tol {
            return Err(Error::NotInRange { k, residual });
        }
    }

    let outcomes = refined
        .labels()
        .iter()
        .map(|label| {
            let a = refined
                .entries_for(label)
                .fold(CMatrix::zeros(d, d), |acc, e| {
                    acc + outer(&phi[e.k - 1], &e.d)
                });
            (label.clone(), vec![a])
        })
        .collect();
    let first = instrument_from_kraus(d, outcomes, tol)?;
    let second = luders_instrument(&mult.as_pvm());
    let joint = compose_sequential(&first, &second)?;
    Ok(CompleteMeasurement {
        first,
        second,
        joint,
    })
}

/// Condition check for one `(i, k)`; `k = 0` is the completion branch.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementEntry {
    pub label: String,
    pub k: usize,
    /// Largest deviation of `Σ_s |N_k φ_ibs⟩⟨N_k φ_ias|` from `δ_ak δ_bk σ_ik`.
    pub residual: f64,
    /// `σ_ik` for `1 ≤ k ≤ m_i`.
    pub sigma: Option<CMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub entries: Vec<RefinementEntry>,
    pub max_residual: f64,
}

impl RefinementReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }
}

/// Checks whether `first` followed by the Lüders measurement of `mult`
/// measures the maximal refinement `refined`.
///
/// With `φ_ias = A_is g_ia` the condition is
/// `Σ_s |N_k φ_ibs⟩⟨N_k φ_ias| = δ_ak δ_bk σ_ik` with `tr σ_ik = 1`.
pub fn verify_refinement_condition(
    first: &Instrument,
    mult: &MultiplicityPvm,
    refined: &RefinedPovm,
    tol: f64,
) -> Result<RefinementReport> {
    let d = refined.dim();
    if first.dim() != d || mult.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "dimensions {} (instrument), {} (projections), {d} (POVM)",
            first.dim(),
            mult.dim()
        )));
    }
    if first.outcomes().len() != refined.labels().len() {
        return Err(Error::IncompatibleFirst {
            label: "*".into(),
            residual: f64::INFINITY,
        });
    }
    for label in refined.labels() {
        let o = first.outcome(label).map_err(|_| Error::IncompatibleFirst {
            label: label.clone(),
            residual: f64::INFINITY,
        })?;
        let target = refined
            .entries_for(label)
            .fold(CMatrix::zeros(d, d), |acc, e| acc + e.effect());
        let residual = (o.effect(d) - &target).norm();
        if residual > scaled_tol(tol, &target) {
            return Err(Error::IncompatibleFirst {
                label: label.clone(),
                residual,
            });
        }
    }
    let required = refined.max_multiplicity();
    if mult.k() < required {
        return Err(Error::InsufficientK {
            available: mult.k(),
            required,
        });
    }

    let mut entries = Vec::new();
    for label in refined.labels() {
        let kraus = &first.outcome(label)?.kraus;
        let duals: Vec<&CVector> = refined.entries_for(label).map(|e| &e.g).collect();
        let m = duals.len();
        // phi[a][s] = A_is g_ia
        let phi: Vec<Vec<CVector>> = duals
            .iter()
            .map(|g| kraus.iter().map(|a| a * *g).collect())
            .collect();
        for k in (1..=mult.k()).chain(std::iter::once(0)) {
            let n = mult.projection(k);
            let projected: Vec<Vec<CVector>> = phi
                .iter()
                .map(|row| row.iter().map(|v| &n * v).collect())
                .collect();
            let mut residual = 0.0f64;
            let mut sigma = None;
            for a in 0..m {
                for b in 0..m {
                    let t = (0..kraus.len()).fold(CMatrix::zeros(d, d), |acc, s| {
                        acc + outer(&projected[b][s], &projected[a][s])
                    });
                    let diagonal = k >= 1 && a == k - 1 && b == k - 1;
                    if diagonal {
                        residual = residual.max((trace(&t) - crate::linalg::ONE).norm());
                        sigma = Some(t);
                    } else {
                        residual = residual.max(t.norm());
                    }
                }
            }
            if k >= 1 && k <= m && sigma.is_none() {
                sigma = Some(CMatrix::from_element(d, d, ZERO));
                residual = residual.max(1.0);
            }
            entries.push(RefinementEntry {
                label: label.clone(),
                k,
                residual,
                sigma,
            });
        }
    }
    let max_residual = entries.iter().map(|e| e.residual).fold(0.0, f64::max);
    Ok(RefinementReport {
        entries,
        max_residual,
    })
}
