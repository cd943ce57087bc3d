//! Instruments in minimal Kraus form.
//!
//! Outcome `i` acts as `ρ ↦ Σ_s A_is ρ A_is†` (Schrödinger picture) and
//! `B ↦ Σ_s A_is† B A_is` (Heisenberg picture). Kraus lists are kept
//! linearly independent, so their length is the Kraus rank `r_i`.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eig, identity, matrix_units, outer, projector, scaled_tol, trace, CMatrix, CVector,
    DensityOperator, DEFAULT_TOL,
};
use crate::povm::{
    composite_label, parse_composite_label, refine, DiscretePovm, Outcome, Pvm, RefinedPovm,
};

/// Below this outcome probability the conditional state is undefined.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentOutcome {
    pub label: String,
    pub kraus: Vec<CMatrix>,
}

impl InstrumentOutcome {
    /// `Σ_s A_s† A_s`
    pub fn effect(&self, dim: usize) -> CMatrix {
        self.kraus
            .iter()
            .fold(CMatrix::zeros(dim, dim), |acc, a| acc + a.adjoint() * a)
    }

    pub fn kraus_rank(&self) -> usize {
        self.kraus.len()
    }
}

/// A linearly dependent Kraus list that was replaced by a shorter one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KrausReduction {
    pub label: String,
    pub original: usize,
    pub reduced: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    dim: usize,
    outcomes: Vec<InstrumentOutcome>,
    reductions: Vec<KrausReduction>,
}

impl Instrument {
    pub(crate) fn from_outcomes_unchecked(dim: usize, outcomes: Vec<InstrumentOutcome>) -> Self {
        Self {
            dim,
            outcomes,
            reductions: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[InstrumentOutcome] {
        &self.outcomes
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.outcomes.iter().map(|o| o.label.as_str())
    }

    pub fn outcome(&self, label: &str) -> Result<&InstrumentOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.label == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_owned(),
            })
    }

    pub fn kraus_ranks(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .map(InstrumentOutcome::kraus_rank)
            .collect()
    }

    /// Kraus lists shortened while building this instrument.
    pub fn reductions(&self) -> &[KrausReduction] {
        &self.reductions
    }

    /// `‖Σ_i Σ_s A_is†A_is − I‖_F`
    pub fn totality_residual(&self) -> f64 {
        let sum = self
            .outcomes
            .iter()
            .fold(CMatrix::zeros(self.dim, self.dim), |acc, o| {
                acc + o.effect(self.dim)
            });
        (sum - identity(self.dim)).norm()
    }

    /// `M_i(B)`
    pub fn heisenberg(&self, label: &str, b: &CMatrix) -> Result<CMatrix> {
        Ok(heisenberg_action(&self.outcome(label)?.kraus, b, self.dim))
    }

    /// `M_*i(ρ)`, unnormalized.
    pub fn schrodinger(&self, label: &str, rho: &CMatrix) -> Result<CMatrix> {
        Ok(schrodinger_action(
            &self.outcome(label)?.kraus,
            rho,
            self.dim,
        ))
    }

    /// The channel `Φ(B) = M(Ω, B)` in Heisenberg form.
    pub fn channel_heisenberg(&self, b: &CMatrix) -> CMatrix {
        self.outcomes
            .iter()
            .fold(CMatrix::zeros(self.dim, self.dim), |acc, o| {
                acc + heisenberg_action(&o.kraus, b, self.dim)
            })
    }
}

pub fn schrodinger_action(kraus: &[CMatrix], rho: &CMatrix, dim: usize) -> CMatrix {
    kraus.iter().fold(CMatrix::zeros(dim, dim), |acc, a| {
        acc + a * rho * a.adjoint()
    })
}

pub fn heisenberg_action(kraus: &[CMatrix], b: &CMatrix, dim: usize) -> CMatrix {
    kraus
        .iter()
        .fold(CMatrix::zeros(dim, dim), |acc, a| acc + a.adjoint() * b * a)
}

/// Largest Frobenius distance between two CP maps over all matrix units.
pub fn cp_map_distance(a: &[CMatrix], b: &[CMatrix], dim: usize) -> f64 {
    matrix_units(dim)
        .iter()
        .map(|e| (schrodinger_action(a, e, dim) - schrodinger_action(b, e, dim)).norm())
        .fold(0.0, f64::max)
}

/// Outcome-by-outcome CP-map distance; labels must agree in order.
pub fn instrument_distance(a: &Instrument, b: &Instrument) -> Result<f64> {
    if a.dim != b.dim || a.outcomes.len() != b.outcomes.len() {
        return Err(Error::DimensionMismatch(format!(
            "instruments differ in shape: {}x{} vs {}x{}",
            a.dim,
            a.outcomes.len(),
            b.dim,
            b.outcomes.len()
        )));
    }
    let mut worst = 0.0f64;
    for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
        if x.label != y.label {
            return Err(Error::UnknownLabel {
                label: y.label.clone(),
            });
        }
        worst = worst.max(cp_map_distance(&x.kraus, &y.kraus, a.dim));
    }
    Ok(worst)
}

/// Shortest Kraus list with the same CP map.
///
/// Uses the Gram matrix `G_st = tr[A_s† A_t]`: for eigenpairs `(λ_j, v_j)`
/// the operators `B_j = Σ_s (v_j)_s A_s` reproduce the map, and only those
/// with `λ_j > rank_tol · λ_max` are nonzero. Independent lists are
/// returned unchanged.
pub fn minimal_kraus(kraus: &[CMatrix], rank_tol: f64) -> Vec<CMatrix> {
    let r = kraus.len();
    if r == 0 {
        return Vec::new();
    }
    let gram = CMatrix::from_fn(r, r, |s, t| trace(&(kraus[s].adjoint() * &kraus[t])));
    let eig = hermitian_eig(&gram, 1.0).expect("Gram matrices are Hermitian");
    let top = eig.max_value();
    if top <= 0.0 {
        return Vec::new();
    }
    let keep = eig.values.iter().filter(|&&l| l > rank_tol * top).count();
    if keep == r {
        return kraus.to_vec();
    }
    (0..keep)
        .map(|j| {
            let v = eig.vector(j);
            kraus.iter().zip(v.iter()).fold(
                CMatrix::zeros(kraus[0].nrows(), kraus[0].ncols()),
                |acc, (a, &w)| acc + a * w,
            )
        })
        .collect()
}

/// Builds an instrument from labelled Kraus lists, reducing dependent lists.
pub fn instrument_from_kraus(
    dim: usize,
    outcomes: Vec<(String, Vec<CMatrix>)>,
    tol: f64,
) -> Result<Instrument> {
    build_from_kraus(dim, outcomes, tol, false)
}

/// Like [`instrument_from_kraus`] but accepts empty Kraus lists, as carried
/// by derived instruments for outcomes that never occur.
pub fn derived_instrument_from_kraus(
    dim: usize,
    outcomes: Vec<(String, Vec<CMatrix>)>,
    tol: f64,
) -> Result<Instrument> {
    build_from_kraus(dim, outcomes, tol, true)
}

fn build_from_kraus(
    dim: usize,
    outcomes: Vec<(String, Vec<CMatrix>)>,
    tol: f64,
    allow_empty: bool,
) -> Result<Instrument> {
    if outcomes.is_empty() {
        return Err(Error::EmptyPovm);
    }
    let mut seen = HashSet::new();
    let mut built = Vec::with_capacity(outcomes.len());
    let mut reductions = Vec::new();
    for (label, kraus) in outcomes {
        if !seen.insert(label.clone()) {
            return Err(Error::DuplicateLabel { label });
        }
        if kraus.is_empty() && !allow_empty {
            return Err(Error::EmptyOutcome { label });
        }
        for a in &kraus {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operator for {label} is {}x{}, expected {dim}x{dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if !crate::linalg::is_finite(a) {
                return Err(Error::NonFinite);
            }
        }
        let reduced = minimal_kraus(&kraus, DEFAULT_TOL);
        if reduced.len() != kraus.len() {
            reductions.push(KrausReduction {
                label: label.clone(),
                original: kraus.len(),
                reduced: reduced.len(),
            });
        }
        built.push(InstrumentOutcome {
            label,
            kraus: reduced,
        });
    }
    let inst = Instrument {
        dim,
        outcomes: built,
        reductions,
    };
    let residual = inst.totality_residual();
    if residual > scaled_tol(tol, &identity(dim)) {
        return Err(Error::NotTotal { residual });
    }
    Ok(inst)
}

/// `X ↦ M(X, I)`; effects `Σ_s A_is†A_is` under the same labels.
pub fn associated_povm(inst: &Instrument) -> DiscretePovm {
    let outcomes = inst
        .outcomes
        .iter()
        .map(|o| Outcome {
            label: o.label.clone(),
            effect: crate::linalg::hermitian_part(&o.effect(inst.dim)),
        })
        .collect();
    DiscretePovm::from_outcomes_unchecked(inst.dim, outcomes)
}

/// A trace-preserving CP map given by Kraus operators.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumChannel {
    dim: usize,
    kraus: Vec<CMatrix>,
}

impl QuantumChannel {
    pub fn new(kraus: Vec<CMatrix>, tol: f64) -> Result<Self> {
        let dim = kraus
            .first()
            .map(|k| k.ncols())
            .ok_or(Error::NotTotal { residual: 1.0 })?;
        for k in &kraus {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "channel Kraus operator is {}x{}, expected {dim}x{dim}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        let sum = kraus
            .iter()
            .fold(CMatrix::zeros(dim, dim), |acc, k| acc + k.adjoint() * k);
        let residual = (sum - identity(dim)).norm();
        if residual > scaled_tol(tol, &identity(dim)) {
            return Err(Error::NotTotal { residual });
        }
        Ok(Self { dim, kraus })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            kraus: vec![identity(dim)],
        }
    }

    pub fn unitary(u: CMatrix, tol: f64) -> Result<Self> {
        Self::new(vec![u], tol)
    }

    /// `ρ ↦ tr[ρ] I/d` with Kraus operators `|a⟩⟨b|/√d`.
    pub fn completely_depolarizing(dim: usize) -> Self {
        let scale = (dim as f64).sqrt();
        let kraus = matrix_units(dim)
            .into_iter()
            .map(|e| e.unscale(scale))
            .collect();
        Self { dim, kraus }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn heisenberg(&self, b: &CMatrix) -> CMatrix {
        heisenberg_action(&self.kraus, b, self.dim)
    }
}

/// Outcome probability and the normalized output state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalOutput {
    pub probability: f64,
    pub state: Option<DensityOperator>,
}

impl ConditionalOutput {
    pub(crate) fn from_unnormalized(out: CMatrix) -> Self {
        let p = trace(&out).re;
        let probability = if p < 0.0 && p >= -crate::povm::PROBABILITY_CLIP {
            0.0
        } else {
            p
        };
        let state = (probability > PROBABILITY_FLOOR).then(|| {
            DensityOperator::from_matrix_unchecked(crate::linalg::hermitian_part(
                &out.unscale(probability),
            ))
        });
        Self { probability, state }
    }
}

/// Conditional output of outcome `label` on input `ρ`.
pub fn apply(inst: &Instrument, label: &str, rho: &DensityOperator) -> Result<ConditionalOutput> {
    if rho.dim() != inst.dim {
        return Err(Error::DimensionMismatch(format!(
            "state of dimension {} for instrument of dimension {}",
            rho.dim(),
            inst.dim
        )));
    }
    let out = inst.schrodinger(label, rho.matrix())?;
    Ok(ConditionalOutput::from_unnormalized(out))
}

/// von Neumann–Lüders instrument `B ↦ M_i B M_i`.
pub fn luders_instrument(pvm: &Pvm) -> Instrument {
    let povm = pvm.povm();
    let outcomes = povm
        .outcomes()
        .iter()
        .map(|o| {
            let kraus = if o.effect.norm() > DEFAULT_TOL {
                vec![o.effect.clone()]
            } else {
                Vec::new()
            };
            InstrumentOutcome {
                label: o.label.clone(),
                kraus,
            }
        })
        .collect();
    Instrument::from_outcomes_unchecked(povm.dim(), outcomes)
}

/// `M_i(B) = M_i Φ(B) M_i`, i.e. Kraus operators `A_is = K_s M_i`.
///
/// Fails with `NotCompatible` unless `Σ_s A_is†A_is = M_i` for every outcome.
pub fn pvm_channel_instrument(pvm: &Pvm, channel: &QuantumChannel, tol: f64) -> Result<Instrument> {
    let povm = pvm.povm();
    if channel.dim() != povm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "channel of dimension {} for PVM of dimension {}",
            channel.dim(),
            povm.dim()
        )));
    }
    let mut outcomes = Vec::with_capacity(povm.len());
    for o in povm.outcomes() {
        let kraus: Vec<CMatrix> = channel.kraus().iter().map(|k| k * &o.effect).collect();
        let kraus = minimal_kraus(&kraus, DEFAULT_TOL);
        let out = InstrumentOutcome {
            label: o.label.clone(),
            kraus,
        };
        let residual = (out.effect(povm.dim()) - &o.effect).norm();
        if residual > scaled_tol(tol, &o.effect) {
            return Err(Error::NotCompatible {
                label: o.label.clone(),
                residual,
            });
        }
        outcomes.push(out);
    }
    Ok(Instrument::from_outcomes_unchecked(povm.dim(), outcomes))
}

/// Rank-1 POVM as a state preparator: `M_*i(ρ) = tr[ρ M_i] σ_i`.
///
/// Kraus operators are `√p_s |ψ_s⟩⟨d_i|` from the spectral decomposition
/// `σ_i = Σ_s p_s |ψ_s⟩⟨ψ_s|`.
pub fn preparator_instrument(
    povm: &DiscretePovm,
    states: &[DensityOperator],
    rank_tol: f64,
) -> Result<Instrument> {
    if states.len() != povm.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} states for {} outcomes",
            states.len(),
            povm.len()
        )));
    }
    let refined = refine(povm, rank_tol)?;
    let mut outcomes = Vec::with_capacity(povm.len());
    for (label, sigma) in refined.labels().iter().zip(states) {
        if sigma.dim() != povm.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state for {label} has dimension {}",
                sigma.dim()
            )));
        }
        let m = refined.multiplicity(label);
        if m > 1 {
            return Err(Error::NotRank1 {
                label: label.clone(),
                multiplicity: m,
            });
        }
        let mut kraus = Vec::new();
        if let Some(entry) = refined.entry(label, 1) {
            let eig = hermitian_eig(sigma.matrix(), 1e-8)?;
            let top = eig.max_value();
            for (j, &p) in eig.values.iter().enumerate() {
                if p <= rank_tol * top {
                    break;
                }
                kraus.push(outer(&eig.vector(j), &entry.d).scale(p.sqrt()));
            }
        }
        outcomes.push(InstrumentOutcome {
            label: label.clone(),
            kraus,
        });
    }
    Ok(Instrument::from_outcomes_unchecked(povm.dim(), outcomes))
}

/// The choice `φ_ik = g_ik / ‖g_ik‖`, aligned with `refined.entries()`.
pub fn dual_unit_vectors(refined: &RefinedPovm) -> Vec<CVector> {
    refined
        .entries()
        .iter()
        .map(|e| e.g.unscale(e.g.norm()))
        .collect()
}

/// Maximally refinable instrument with Kraus operators `A_ik = |φ_ik⟩⟨d_ik|`.
///
/// `phi` is aligned with `refined.entries()`.
pub fn max_refinable_instrument(
    refined: &RefinedPovm,
    phi: &[CVector],
    tol: f64,
) -> Result<Instrument> {
    if phi.len() != refined.entries().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vectors for {} refined outcomes",
            phi.len(),
            refined.entries().len()
        )));
    }
    for (e, v) in refined.entries().iter().zip(phi) {
        if v.len() != refined.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector for ({},{}) has length {}",
                e.label,
                e.k,
                v.len()
            )));
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > tol {
            return Err(Error::NotUnit {
                label: e.label.clone(),
                k: e.k,
                norm,
            });
        }
    }
    let outcomes = refined
        .labels()
        .iter()
        .map(|label| {
            let kraus = refined
                .entries()
                .iter()
                .zip(phi)
                .filter(|(e, _)| &e.label == label)
                .map(|(e, v)| outer(v, &e.d))
                .collect();
            InstrumentOutcome {
                label: label.clone(),
                kraus,
            }
        })
        .collect();
    Ok(Instrument::from_outcomes_unchecked(refined.dim(), outcomes))
}

/// Rank-1 refinement of a maximally refinable instrument on labels `(i,k)`.
///
/// Every Kraus operator must be a dyad `|φ⟩⟨d_ik|` for exactly one `k`, and
/// each `k` must be used exactly once.
pub fn refine_instrument(inst: &Instrument, refined: &RefinedPovm, tol: f64) -> Result<Instrument> {
    if inst.dim != refined.dim() {
        return Err(Error::DimensionMismatch(format!(
            "instrument of dimension {} for refined POVM of dimension {}",
            inst.dim,
            refined.dim()
        )));
    }
    let component_floor = tol.sqrt();
    let mut outcomes = Vec::new();
    for label in refined.labels() {
        let source = inst.outcome(label)?;
        let entries: Vec<_> = refined.entries_for(label).collect();
        let not_max = |reason: String| Error::NotMaximallyRefinable {
            label: label.clone(),
            reason,
        };
        if source.kraus.len() != entries.len() {
            return Err(not_max(format!(
                "Kraus rank {} differs from multiplicity {}",
                source.kraus.len(),
                entries.len()
            )));
        }
        let mut slots: Vec<Option<CMatrix>> = vec![None; entries.len()];
        for a in &source.kraus {
            let images: Vec<CVector> = entries.iter().map(|e| a * &e.g).collect();
            let rebuilt = entries
                .iter()
                .zip(&images)
                .fold(CMatrix::zeros(inst.dim, inst.dim), |acc, (e, phi)| {
                    acc + outer(phi, &e.d)
                });
            let residual = (a - rebuilt).norm();
            if residual > scaled_tol(tol, a) {
                return Err(not_max(format!(
                    "Kraus operator acts outside span of the d vectors (residual {residual:.3e})"
                )));
            }
            let used: Vec<usize> = images
                .iter()
                .enumerate()
                .filter(|(_, phi)| phi.norm() > component_floor)
                .map(|(k, _)| k)
                .collect();
            let [k] = used[..] else {
                return Err(not_max(format!(
                    "Kraus operator is not a dyad on a single d vector ({} components)",
                    used.len()
                )));
            };
            if slots[k].is_some() {
                return Err(not_max(format!(
                    "multiplicity index {} carried by more than one Kraus operator",
                    entries[k].k
                )));
            }
            slots[k] = Some(a.clone());
        }
        for (e, slot) in entries.iter().zip(slots) {
            let a = slot.expect("every slot filled when counts match and slots are unique");
            outcomes.push(InstrumentOutcome {
                label: composite_label(label, e.k),
                kraus: vec![a],
            });
        }
    }
    Ok(Instrument::from_outcomes_unchecked(inst.dim, outcomes))
}

/// Merges outcomes `(i,k)` into `i` and re-minimizes the Kraus lists.
pub fn compress_instrument(refined_inst: &Instrument) -> Result<Instrument> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<CMatrix>> = Vec::new();
    for o in &refined_inst.outcomes {
        let (base, _) = parse_composite_label(&o.label).ok_or_else(|| Error::LabelStructure {
            label: o.label.clone(),
        })?;
        match order.iter().position(|l| l == base) {
            Some(i) => groups[i].extend(o.kraus.iter().cloned()),
            None => {
                order.push(base.to_owned());
                groups.push(o.kraus.clone());
            }
        }
    }
    let outcomes = order
        .into_iter()
        .zip(groups)
        .map(|(label, kraus)| InstrumentOutcome {
            label,
            kraus: minimal_kraus(&kraus, DEFAULT_TOL),
        })
        .collect();
    Ok(Instrument::from_outcomes_unchecked(
        refined_inst.dim,
        outcomes,
    ))
}

/// Checks `M_i(M_j(B)) = δ_ij M_i(B)` on every matrix unit `B`.
pub fn is_strongly_repeatable(inst: &Instrument, tol: f64) -> bool {
    let d = inst.dim;
    let units = matrix_units(d);
    for a in &inst.outcomes {
        for b in &inst.outcomes {
            for e in &units {
                let inner = heisenberg_action(&b.kraus, e, d);
                let twice = heisenberg_action(&a.kraus, &inner, d);
                let expected = if a.label == b.label {
                    heisenberg_action(&a.kraus, e, d)
                } else {
                    CMatrix::zeros(d, d)
                };
                if (twice - expected).norm() > tol {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct VeryWeakEntry {
    pub label: String,
    pub k: usize,
    /// `‖g_ik‖⁻²`
    pub expected_probability: f64,
    pub probability: f64,
    /// Frobenius distance between the output state and `|g¹_ik⟩⟨g¹_ik|`.
    pub state_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VeryWeakReport {
    pub entries: Vec<VeryWeakEntry>,
    pub max_residual: f64,
}

impl VeryWeakReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }
}

/// Feeds `|g¹_ik⟩⟨g¹_ik|` (with `g¹ = g/‖g‖`) into outcome `i` and compares
/// against probability `‖g_ik‖⁻²` and an unchanged output state.
pub fn check_very_weak_repeatability(
    refined: &RefinedPovm,
    inst: &Instrument,
) -> Result<VeryWeakReport> {
    let mut entries = Vec::with_capacity(refined.entries().len());
    let mut worst = 0.0f64;
    for e in refined.entries() {
        let norm = e.g.norm();
        let g1 = e.g.unscale(norm);
        let input = DensityOperator::pure(&g1)?;
        let out = apply(inst, &e.label, &input)?;
        let expected = 1.0 / (norm * norm);
        let state_residual = match &out.state {
            Some(s) => (s.matrix() - projector(&g1)).norm(),
            None => f64::INFINITY,
        };
        worst = worst
            .max((out.probability - expected).abs())
            .max(state_residual);
        entries.push(VeryWeakEntry {
            label: e.label.clone(),
            k: e.k,
            expected_probability: expected,
            probability: out.probability,
            state_residual,
        });
    }
    Ok(VeryWeakReport {
        entries,
        max_residual: worst,
    })
}

/// Constant-output instrument `M_*i(ρ) = tr[ρ M_i] σ` for an arbitrary POVM.
pub fn trivial_instrument(
    povm: &DiscretePovm,
    sigma: &DensityOperator,
    rank_tol: f64,
) -> Result<Instrument> {
    let refined = refine(povm, rank_tol)?;
    let eig = hermitian_eig(sigma.matrix(), 1e-8)?;
    let top = eig.max_value();
    let outcomes = refined
        .labels()
        .iter()
        .map(|label| {
            let mut kraus = Vec::new();
            for (j, &p) in eig.values.iter().enumerate() {
                if p <= rank_tol * top {
                    break;
                }
                let psi = eig.vector(j);
                for e in refined.entries_for(label) {
                    kraus.push(outer(&psi, &e.d).scale(p.sqrt()));
                }
            }
            InstrumentOutcome {
                label: label.clone(),
                kraus,
            }
        })
        .collect();
    Ok(Instrument::from_outcomes_unchecked(povm.dim(), outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::{basis_vector, real, tensor_vectors, validate_density};
    use crate::povm::{as_refined_povm, relabel, validate_povm};
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(0.0)])
    }

    fn e(n: usize, i: usize) -> CVector {
        basis_vector(n, i)
    }

    /// Choi-style rank of a CP map: rank of `Σ_s vec(A_s) vec(A_s)†`.
    fn choi_rank(kraus: &[CMatrix]) -> usize {
        let n = kraus[0].nrows();
        let mut choi = CMatrix::zeros(n * n, n * n);
        for a in kraus {
            let mut v = CVector::zeros(n * n);
            for i in 0..n {
                for j in 0..n {
                    v += tensor_vectors(&e(n, i), &e(n, j)) * a[(i, j)];
                }
            }
            choi += projector(&v);
        }
        crate::linalg::numerical_rank(&choi, 1e-8)
    }

    #[test]
    fn luders_z_is_minimal() {
        let inst = instrument_from_kraus(
            2,
            vec![
                ("0".into(), vec![projector(&e(2, 0))]),
                ("1".into(), vec![projector(&e(2, 1))]),
            ],
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(inst.kraus_ranks(), [1, 1]);
        assert!(inst.reductions().is_empty());
        assert!(instrument_distance(&inst, &fixtures::luders_z()).unwrap() < 1e-15);
    }

    #[test]
    fn duplicated_kraus_is_reduced() {
        let a = projector(&e(2, 0)).unscale(2f64.sqrt());
        let dup = vec![a.clone(), a.clone()];
        assert_eq!(choi_rank(&dup), 1);
        let inst = instrument_from_kraus(
            2,
            vec![
                ("0".into(), dup.clone()),
                ("1".into(), vec![projector(&e(2, 1))]),
            ],
            DEFAULT_TOL,
        )
        .unwrap();
        let out = inst.outcome("0").unwrap();
        assert_eq!(out.kraus_rank(), 1);
        assert!((&out.kraus[0] - a.scale(2f64.sqrt())).norm() < 1e-14);
        assert!(cp_map_distance(&dup, &out.kraus, 2) < 1e-14);
        assert_eq!(
            inst.reductions(),
            [KrausReduction {
                label: "0".into(),
                original: 2,
                reduced: 1
            }]
        );
    }

    #[test]
    fn incomplete_kraus_is_not_total() {
        let err = instrument_from_kraus(
            2,
            vec![("0".into(), vec![projector(&e(2, 0))])],
            DEFAULT_TOL,
        )
        .unwrap_err();
        match err {
            Error::NotTotal { residual } => assert!((residual - 1.0).abs() < 1e-14),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            instrument_from_kraus(2, vec![("0".into(), vec![])], DEFAULT_TOL),
            Err(Error::EmptyOutcome { .. })
        ));
    }

    #[test]
    fn associated_povms() {
        let z = associated_povm(&fixtures::luders_z());
        for (a, b) in z.outcomes().iter().zip(fixtures::z_pvm().outcomes()) {
            assert!((&a.effect - &b.effect).norm() < 1e-15);
        }

        let sigma = fixtures::plus_state();
        let trivial = trivial_instrument(&fixtures::unsharp_qubit(), &sigma, DEFAULT_TOL).unwrap();
        let povm = associated_povm(&trivial);
        for (a, b) in povm
            .outcomes()
            .iter()
            .zip(fixtures::unsharp_qubit().outcomes())
        {
            assert!((&a.effect - &b.effect).norm() < 1e-14);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let inst = random::instrument(&mut rng, 3, 3, 3);
            let povm = associated_povm(&inst);
            let entries = povm
                .outcomes()
                .iter()
                .map(|o| (o.label.clone(), o.effect.clone()))
                .collect();
            assert!(validate_povm(entries, DEFAULT_TOL).is_ok());
        }
    }

    #[test]
    fn trivial_instrument_outputs_sigma() {
        let sigma = fixtures::plus_state();
        let inst = trivial_instrument(&fixtures::trine(), &sigma, DEFAULT_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random::density(&mut rng, 2);
        for label in ["t0", "t1", "t2"] {
            let out = apply(&inst, label, &rho).unwrap();
            assert!((out.state.unwrap().matrix() - sigma.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn luders_of_pvms() {
        let q = Pvm::new(fixtures::qutrit_degenerate_pvm(), DEFAULT_TOL).unwrap();
        let inst = luders_instrument(&q);
        assert_eq!(inst.kraus_ranks(), [1, 1]);
        assert_eq!(
            inst.outcome("a").unwrap().kraus[0],
            q.povm().effect("a").unwrap().clone()
        );
        assert!(matches!(
            Pvm::new(fixtures::trine(), DEFAULT_TOL),
            Err(Error::NotPvm { .. })
        ));
    }

    #[test]
    fn pvm_channel_identity_is_luders() {
        let z = Pvm::new(fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let inst = pvm_channel_instrument(&z, &QuantumChannel::identity(2), DEFAULT_TOL).unwrap();
        assert!(instrument_distance(&inst, &fixtures::luders_z()).unwrap() < 1e-15);
    }

    #[test]
    fn pvm_channel_with_unitary_and_depolarizing() {
        let z = Pvm::new(fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let flip = QuantumChannel::unitary(pauli_x(), DEFAULT_TOL).unwrap();
        let inst = pvm_channel_instrument(&z, &flip, DEFAULT_TOL).unwrap();
        // M_*i(ρ) = σ_x M_i ρ M_i σ_x
        let out = apply(&inst, "0", &fixtures::plus_state()).unwrap();
        assert!((out.probability - 0.5).abs() < 1e-14);
        assert!((out.state.unwrap().matrix() - projector(&e(2, 1))).norm() < 1e-14);

        let dep = QuantumChannel::completely_depolarizing(2);
        let inst = pvm_channel_instrument(&z, &dep, DEFAULT_TOL).unwrap();
        let povm = associated_povm(&inst);
        for (a, b) in povm.outcomes().iter().zip(z.povm().outcomes()) {
            assert!((&a.effect - &b.effect).norm() < 1e-14);
        }
        // the instrument's own channel commutes with the PVM
        for unit in matrix_units(2) {
            let phi = inst.channel_heisenberg(&unit);
            for o in z.povm().outcomes() {
                assert!((&phi * &o.effect - &o.effect * &phi).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn pvm_channel_rejects_non_trace_preserving_input() {
        let z = Pvm::new(fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let leaky = QuantumChannel::new(vec![identity(2).scale(0.9)], 1.0).unwrap();
        assert!(matches!(
            pvm_channel_instrument(&z, &leaky, DEFAULT_TOL),
            Err(Error::NotCompatible { .. })
        ));
    }

    #[test]
    fn trine_preparator_forgets_the_input() {
        let inst = fixtures::trine_preparator();
        assert_eq!(inst.kraus_ranks(), [1, 1, 1]);
        let kets = fixtures::trine_kets();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let rho = random::density(&mut rng, 2);
            for (j, label) in ["t0", "t1", "t2"].iter().enumerate() {
                let out = apply(&inst, label, &rho).unwrap();
                assert!((out.state.unwrap().matrix() - projector(&kets[j])).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn preparator_of_z_with_mixed_state() {
        let half = DensityOperator::maximally_mixed(2);
        let inst = preparator_instrument(
            &fixtures::z_pvm(),
            &[half.clone(), half.clone()],
            DEFAULT_TOL,
        )
        .unwrap();
        let rho = fixtures::plus_state();
        for label in ["0", "1"] {
            let out = apply(&inst, label, &rho).unwrap();
            assert!((out.state.unwrap().matrix() - half.matrix()).norm() < 1e-14);
        }
    }

    #[test]
    fn preparator_needs_rank_one_effects() {
        let half = DensityOperator::maximally_mixed(2);
        assert!(matches!(
            preparator_instrument(
                &fixtures::unsharp_qubit(),
                &[half.clone(), half],
                DEFAULT_TOL
            ),
            Err(Error::NotRank1 {
                multiplicity: 2,
                ..
            })
        ));
    }

    #[test]
    fn max_refinable_with_d_vectors() {
        // nondegenerate Z: the dyad choice φ = d is exactly Lüders
        let z = crate::povm::refine(&fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let phi: Vec<CVector> = z.entries().iter().map(|e| e.d.clone()).collect();
        let inst = max_refinable_instrument(&z, &phi, DEFAULT_TOL).unwrap();
        assert!(instrument_distance(&inst, &fixtures::luders_z()).unwrap() < 1e-15);

        // degenerate qutrit: outcome b is still Lüders, outcome a dephases inside its block
        let q = fixtures::qutrit_degenerate_pvm();
        let r = crate::povm::refine(&q, DEFAULT_TOL).unwrap();
        let phi: Vec<CVector> = r.entries().iter().map(|e| e.d.clone()).collect();
        let inst = max_refinable_instrument(&r, &phi, DEFAULT_TOL).unwrap();
        assert_eq!(inst.kraus_ranks(), [2, 1]);
        let luders = luders_instrument(&Pvm::new(q.clone(), DEFAULT_TOL).unwrap());
        let b = |i: &Instrument| i.outcome("b").unwrap().kraus.clone();
        assert!(cp_map_distance(&b(&inst), &b(&luders), 3) < 1e-14);
        let a = |i: &Instrument| i.outcome("a").unwrap().kraus.clone();
        assert!(cp_map_distance(&a(&inst), &a(&luders), 3) > 0.5);
        for (x, y) in associated_povm(&inst).outcomes().iter().zip(q.outcomes()) {
            assert!((&x.effect - &y.effect).norm() < 1e-14);
        }
    }

    #[test]
    fn max_refinable_trine_is_pure_preparator() {
        let r = crate::povm::refine(&fixtures::trine(), DEFAULT_TOL).unwrap();
        let phi: Vec<CVector> = fixtures::trine_kets().to_vec();
        let inst = max_refinable_instrument(&r, &phi, DEFAULT_TOL).unwrap();
        assert!(instrument_distance(&inst, &fixtures::trine_preparator()).unwrap() < 1e-14);
    }

    #[test]
    fn max_refinable_rejects_non_unit_vectors() {
        let r = crate::povm::refine(&fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let phi = vec![e(2, 0).scale(2.0), e(2, 1)];
        assert!(matches!(
            max_refinable_instrument(&r, &phi, DEFAULT_TOL),
            Err(Error::NotUnit { k: 1, .. })
        ));
    }

    #[test]
    fn refine_and_compress_round_trip() {
        let z = crate::povm::refine(&fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let fine = refine_instrument(&fixtures::luders_z(), &z, DEFAULT_TOL).unwrap();
        let labels: Vec<&str> = fine.labels().collect();
        assert_eq!(labels, ["(0,1)", "(1,1)"]);
        let back = compress_instrument(&fine).unwrap();
        assert!(instrument_distance(&back, &fixtures::luders_z()).unwrap() < 1e-15);

        let q = crate::povm::refine(&fixtures::qutrit_degenerate_pvm(), DEFAULT_TOL).unwrap();
        let phi: Vec<CVector> = q.entries().iter().map(|e| e.d.clone()).collect();
        let inst = max_refinable_instrument(&q, &phi, DEFAULT_TOL).unwrap();
        let fine = refine_instrument(&inst, &q, DEFAULT_TOL).unwrap();
        assert_eq!(fine.kraus_ranks(), [1, 1, 1]);
        for (o, entry) in fine.outcomes().iter().zip(q.entries()) {
            assert!((&o.kraus[0] - projector(&entry.d)).norm() < 1e-14);
        }
        let back = compress_instrument(&fine).unwrap();
        assert!(instrument_distance(&back, &inst).unwrap() < 1e-14);
    }

    #[test]
    fn refine_unsharp_instrument() {
        let r = crate::povm::refine(&fixtures::unsharp_qubit(), DEFAULT_TOL).unwrap();
        let inst = fixtures::unsharp_max_refinable();
        let fine = refine_instrument(&inst, &r, DEFAULT_TOL).unwrap();
        assert_eq!(fine.outcomes().len(), 4);
        let povm = associated_povm(&fine);
        for (a, b) in povm.outcomes().iter().zip(as_refined_povm(&r).outcomes()) {
            assert_eq!(a.label, b.label);
            assert!((&a.effect - &b.effect).norm() < 1e-14);
        }
        let back = compress_instrument(&fine).unwrap();
        assert!(instrument_distance(&back, &inst).unwrap() < 1e-14);
        assert!(
            (relabel(&r).effect("+").unwrap() - associated_povm(&back).effect("+").unwrap()).norm()
                < 1e-14
        );
    }

    #[test]
    fn refine_instrument_rejects_non_dyadic_kraus() {
        let q = fixtures::qutrit_degenerate_pvm();
        let r = crate::povm::refine(&q, DEFAULT_TOL).unwrap();
        let luders = luders_instrument(&Pvm::new(q, DEFAULT_TOL).unwrap());
        assert!(matches!(
            refine_instrument(&luders, &r, DEFAULT_TOL),
            Err(Error::NotMaximallyRefinable { .. })
        ));

        let t = crate::povm::refine(&fixtures::trine(), DEFAULT_TOL).unwrap();
        let half = DensityOperator::maximally_mixed(2);
        let mixed = preparator_instrument(&fixtures::trine(), &vec![half; 3], DEFAULT_TOL).unwrap();
        assert_eq!(mixed.kraus_ranks(), [2, 2, 2]);
        assert!(matches!(
            refine_instrument(&mixed, &t, DEFAULT_TOL),
            Err(Error::NotMaximallyRefinable { .. })
        ));
    }

    #[test]
    fn compress_single_outcome_labels_and_bad_labels() {
        let z = crate::povm::refine(&fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let fine = refine_instrument(&fixtures::luders_z(), &z, DEFAULT_TOL).unwrap();
        let back = compress_instrument(&fine).unwrap();
        assert_eq!(back.kraus_ranks(), fine.kraus_ranks());
        assert!(matches!(
            compress_instrument(&fixtures::luders_z()),
            Err(Error::LabelStructure { .. })
        ));
    }

    #[test]
    fn apply_examples() {
        let luders = fixtures::luders_z();
        let out = apply(&luders, "0", &fixtures::plus_state()).unwrap();
        assert!((out.probability - 0.5).abs() < 1e-14);
        assert!((out.state.unwrap().matrix() - projector(&e(2, 0))).norm() < 1e-14);

        let out = apply(&luders, "1", &fixtures::basis_state(2, 0)).unwrap();
        assert_eq!(out.probability, 0.0);
        assert!(out.state.is_none());

        assert!(matches!(
            apply(&luders, "2", &fixtures::plus_state()),
            Err(Error::UnknownLabel { .. })
        ));
    }

    #[test]
    fn strong_repeatability() {
        assert!(is_strongly_repeatable(&fixtures::luders_z(), DEFAULT_TOL));
        assert!(!is_strongly_repeatable(
            &fixtures::trine_preparator(),
            DEFAULT_TOL
        ));
        let q = Pvm::new(fixtures::qutrit_degenerate_pvm(), DEFAULT_TOL).unwrap();
        assert!(is_strongly_repeatable(&luders_instrument(&q), DEFAULT_TOL));
    }

    #[test]
    fn very_weak_repeatability_examples() {
        let r = crate::povm::refine(&fixtures::unsharp_qubit(), DEFAULT_TOL).unwrap();
        let report = check_very_weak_repeatability(&r, &fixtures::unsharp_max_refinable()).unwrap();
        assert!(report.passed(1e-10));
        let first = &report.entries[0];
        assert_eq!((first.label.as_str(), first.k), ("+", 1));
        assert!((first.probability - 0.75).abs() < 1e-12);

        let z = crate::povm::refine(&fixtures::z_pvm(), DEFAULT_TOL).unwrap();
        let report = check_very_weak_repeatability(&z, &fixtures::luders_z()).unwrap();
        assert!(report.passed(1e-10));
        assert!(report
            .entries
            .iter()
            .all(|e| (e.probability - 1.0).abs() < 1e-12));

        let t = crate::povm::refine(&fixtures::trine(), DEFAULT_TOL).unwrap();
        let inst = max_refinable_instrument(&t, &dual_unit_vectors(&t), DEFAULT_TOL).unwrap();
        let report = check_very_weak_repeatability(&t, &inst).unwrap();
        assert!(report.passed(1e-10));
        assert!(report
            .entries
            .iter()
            .all(|e| (e.probability - 2.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn rank_one_instruments_keep_pure_states_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let q = crate::povm::refine(&random::povm(&mut rng, 3, 3), DEFAULT_TOL).unwrap();
        let phi: Vec<CVector> = q
            .entries()
            .iter()
            .map(|_| random::unit_vector(&mut rng, 3))
            .collect();
        let fine = refine_instrument(
            &max_refinable_instrument(&q, &phi, DEFAULT_TOL).unwrap(),
            &q,
            DEFAULT_TOL,
        )
        .unwrap();
        for _ in 0..5 {
            let psi = random::pure_state(&mut rng, 3);
            for label in fine.labels() {
                let out = apply(&fine, label, &psi).unwrap();
                if let Some(s) = out.state {
                    assert!(s.purity_eigenvalue() >= 1.0 - 1e-10);
                }
            }
        }
    }

    #[test]
    fn totality_for_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = random::instrument(&mut rng, 3, 4, 2);
        for _ in 0..5 {
            let rho = random::density(&mut rng, 3);
            let total: f64 = crate::povm::born_probabilities(&associated_povm(&inst), &rho)
                .unwrap()
                .iter()
                .sum();
            assert!((total - 1.0).abs() < 1e-10);
            let _ = validate_density(rho.matrix(), DEFAULT_TOL).unwrap();
        }
    }
}
