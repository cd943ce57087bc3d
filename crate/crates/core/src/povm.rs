//! Discrete POVMs and their maximal rank-1 refinement.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eig, identity, projector, scaled_tol, trace, CMatrix, CVector, DensityOperator,
};

/// Outcomes with probability below this are reported as exactly zero.
pub const PROBABILITY_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub effect: CMatrix,
}

/// A normalized POVM with finitely many labelled outcomes.
///
/// POVMs accepted through [`validate_povm`] never contain zero effects.
/// Derived POVMs (associated POVMs of instruments, sequential joints) may
/// carry zero effects for outcomes that never occur.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePovm {
    dim: usize,
    outcomes: Vec<Outcome>,
}

impl DiscretePovm {
    pub(crate) fn from_outcomes_unchecked(dim: usize, outcomes: Vec<Outcome>) -> Self {
        Self { dim, outcomes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.outcomes.iter().map(|o| o.label.as_str())
    }

    pub fn effect(&self, label: &str) -> Option<&CMatrix> {
        self.outcomes
            .iter()
            .find(|o| o.label == label)
            .map(|o| &o.effect)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o.label == label)
    }

    /// Spectral norm of `Σ_i M_i − I`.
    pub fn normalization_residual(&self) -> f64 {
        let mut sum = CMatrix::zeros(self.dim, self.dim);
        for o in &self.outcomes {
            sum += &o.effect;
        }
        spectral_norm_hermitian(&(sum - identity(self.dim)))
    }

    /// Per-effect spectrum bounds and the normalization residual.
    pub fn report(&self, rank_tol: f64) -> PovmReport {
        let effects = self
            .outcomes
            .iter()
            .map(|o| {
                let eig = hermitian_eig(&o.effect, 1.0).expect("effects are Hermitian");
                EffectSummary {
                    label: o.label.clone(),
                    min_eigenvalue: eig.min_value(),
                    max_eigenvalue: eig.max_value(),
                    rank: retained_count(&eig.values, rank_tol),
                }
            })
            .collect();
        PovmReport {
            effects,
            normalization_residual: self.normalization_residual(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSummary {
    pub label: String,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PovmReport {
    pub effects: Vec<EffectSummary>,
    pub normalization_residual: f64,
}

fn spectral_norm_hermitian(m: &CMatrix) -> f64 {
    match hermitian_eig(m, 1.0) {
        Ok(e) => e.max_value().abs().max(e.min_value().abs()),
        Err(_) => m.norm(),
    }
}

fn retained_count(values: &[f64], rank_tol: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&l| l > rank_tol * top).count()
}

/// Checks a candidate list of labelled effects and builds the POVM.
pub fn validate_povm(candidate: Vec<(String, CMatrix)>, tol: f64) -> Result<DiscretePovm> {
    let first = candidate.first().ok_or(Error::EmptyPovm)?;
    let dim = first.1.nrows();
    let mut seen = HashSet::new();
    for (label, m) in &candidate {
        if !seen.insert(label.as_str()) {
            return Err(Error::DuplicateLabel {
                label: label.clone(),
            });
        }
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "effect {label} is {}x{}, expected {dim}x{dim}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    for (label, m) in &candidate {
        let eig = hermitian_eig(m, tol).map_err(|e| match e {
            Error::NotHermitian { .. } => Error::NotEffect {
                label: label.clone(),
                min: f64::NAN,
                max: f64::NAN,
            },
            other => other,
        })?;
        let (min, max) = (eig.min_value(), eig.max_value());
        if min < -tol || max > 1.0 + tol {
            return Err(Error::NotEffect {
                label: label.clone(),
                min,
                max,
            });
        }
        if max <= tol {
            return Err(Error::ZeroEffect {
                label: label.clone(),
            });
        }
    }
    let povm = DiscretePovm {
        dim,
        outcomes: candidate
            .into_iter()
            .map(|(label, m)| Outcome {
                label,
                effect: crate::linalg::hermitian_part(&m),
            })
            .collect(),
    };
    let residual = povm.normalization_residual();
    if residual > tol {
        return Err(Error::NotNormalized { residual });
    }
    Ok(povm)
}

/// One rank-1 piece `|d_ik⟩⟨d_ik|` of an effect, with its dual vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedEntry {
    pub label: String,
    /// Multiplicity index, starting at 1.
    pub k: usize,
    pub d: CVector,
    pub g: CVector,
}

impl RefinedEntry {
    pub fn composite_label(&self) -> String {
        composite_label(&self.label, self.k)
    }

    pub fn effect(&self) -> CMatrix {
        projector(&self.d)
    }
}

/// Maximally refined rank-1 POVM on pairs `(label, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPovm {
    dim: usize,
    labels: Vec<String>,
    entries: Vec<RefinedEntry>,
}

impl RefinedPovm {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Base labels in input order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &[RefinedEntry] {
        &self.entries
    }

    pub fn entries_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RefinedEntry> {
        self.entries.iter().filter(move |e| e.label == label)
    }

    pub fn multiplicity(&self, label: &str) -> usize {
        self.entries_for(label).count()
    }

    pub fn max_multiplicity(&self) -> usize {
        self.labels
            .iter()
            .map(|l| self.multiplicity(l))
            .max()
            .unwrap_or(0)
    }

    pub fn entry(&self, label: &str, k: usize) -> Option<&RefinedEntry> {
        self.entries.iter().find(|e| e.label == label && e.k == k)
    }

    /// `‖Σ_{i,k} |d_ik⟩⟨d_ik| − I‖_F`
    pub fn normalization_residual(&self) -> f64 {
        let mut sum = CMatrix::zeros(self.dim, self.dim);
        for e in &self.entries {
            sum += e.effect();
        }
        (sum - identity(self.dim)).norm()
    }

    /// Largest `|⟨d_ik|g_il⟩ − δ_kl|` within any label.
    pub fn biorthogonality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for label in &self.labels {
            let group: Vec<&RefinedEntry> = self.entries_for(label).collect();
            for a in &group {
                for b in &group {
                    let expected = if a.k == b.k { 1.0 } else { 0.0 };
                    let got = a.d.dotc(&b.g);
                    worst = worst.max((got - crate::linalg::real(expected)).norm());
                }
            }
        }
        worst
    }
}

pub fn composite_label(label: &str, k: usize) -> String {
    format!("({label},{k})")
}

/// Splits `"(base,k)"` into `("base", k)`.
pub fn parse_composite_label(label: &str) -> Option<(&str, usize)> {
    let inner = label.strip_prefix('(')?.strip_suffix(')')?;
    let (base, k) = inner.rsplit_once(',')?;
    let k: usize = k.parse().ok()?;
    (k >= 1).then_some((base, k))
}

/// Maximal rank-1 refinement: `M_i = Σ_k |d_ik⟩⟨d_ik|` with `d_ik = √λ_ik u_ik`.
///
/// Eigenvalues at or below `rank_tol · λ_max(M_i)` are dropped. Duals are
/// `g_ik = u_ik / √λ_ik`.
pub fn refine(povm: &DiscretePovm, rank_tol: f64) -> Result<RefinedPovm> {
    let mut entries = Vec::new();
    for o in povm.outcomes() {
        let eig = hermitian_eig(&o.effect, 1e-8)?;
        let top = eig.max_value();
        let mut k = 0;
        for (j, &lam) in eig.values.iter().enumerate() {
            if top <= 0.0 || lam <= rank_tol * top {
                break;
            }
            k += 1;
            let u = eig.vector(j);
            let root = lam.sqrt();
            entries.push(RefinedEntry {
                label: o.label.clone(),
                k,
                d: u.scale(root),
                g: u.unscale(root),
            });
        }
    }
    Ok(RefinedPovm {
        dim: povm.dim(),
        labels: povm.labels().map(str::to_owned).collect(),
        entries,
    })
}

/// Recovers the coarse POVM by summing `|d_ik⟩⟨d_ik|` over `k`.
pub fn relabel(refined: &RefinedPovm) -> DiscretePovm {
    let n = refined.dim();
    let outcomes = refined
        .labels()
        .iter()
        .map(|label| {
            let mut effect = CMatrix::zeros(n, n);
            for e in refined.entries_for(label) {
                effect += e.effect();
            }
            Outcome {
                label: label.clone(),
                effect,
            }
        })
        .collect();
    DiscretePovm::from_outcomes_unchecked(n, outcomes)
}

/// The refined POVM itself, on composite labels `"(label,k)"`.
pub fn as_refined_povm(refined: &RefinedPovm) -> DiscretePovm {
    let outcomes = refined
        .entries()
        .iter()
        .map(|e| Outcome {
            label: e.composite_label(),
            effect: e.effect(),
        })
        .collect();
    DiscretePovm::from_outcomes_unchecked(refined.dim(), outcomes)
}

/// True iff every effect is idempotent to `tol`.
pub fn is_pvm(povm: &DiscretePovm, tol: f64) -> bool {
    povm.outcomes()
        .iter()
        .all(|o| idempotence_residual(&o.effect) <= scaled_tol(tol, &o.effect))
}

fn idempotence_residual(m: &CMatrix) -> f64 {
    (m * m - m).norm()
}

/// True iff every nonzero effect has rank one.
pub fn is_rank1(povm: &DiscretePovm, rank_tol: f64) -> bool {
    povm.report(rank_tol).effects.iter().all(|e| e.rank <= 1)
}

/// A POVM whose effects are mutually orthogonal projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Pvm(DiscretePovm);

impl Pvm {
    pub(crate) fn from_povm_unchecked(povm: DiscretePovm) -> Self {
        Self(povm)
    }

    pub fn new(povm: DiscretePovm, tol: f64) -> Result<Self> {
        for o in povm.outcomes() {
            let residual = idempotence_residual(&o.effect);
            if residual > scaled_tol(tol, &o.effect) {
                return Err(Error::NotPvm {
                    label: o.label.clone(),
                    residual,
                });
            }
        }
        let outs = povm.outcomes();
        for (i, a) in outs.iter().enumerate() {
            for b in &outs[i + 1..] {
                let residual = (&a.effect * &b.effect).norm();
                if residual > tol {
                    return Err(Error::NotPvm {
                        label: b.label.clone(),
                        residual,
                    });
                }
            }
        }
        Ok(Self(povm))
    }

    pub fn povm(&self) -> &DiscretePovm {
        &self.0
    }

    pub fn into_povm(self) -> DiscretePovm {
        self.0
    }
}

/// `p_i = tr[ρ M_i]`, tiny negatives clipped to zero.
pub fn born_probabilities(povm: &DiscretePovm, rho: &DensityOperator) -> Result<Vec<f64>> {
    if rho.dim() != povm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state of dimension {} for POVM of dimension {}",
            rho.dim(),
            povm.dim()
        )));
    }
    Ok(povm
        .outcomes()
        .iter()
        .map(|o| {
            let p = trace(&(rho.matrix() * &o.effect)).re;
            if p < 0.0 && p >= -PROBABILITY_CLIP {
                0.0
            } else {
                p
            }
        })
        .collect())
}
