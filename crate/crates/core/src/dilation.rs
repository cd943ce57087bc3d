//! Minimal pure measurement models `⟨H′, P, |ξ⟩⟨ξ|, U⟩`.
//!
//! The ancilla has one basis vector `b_is` per Kraus operator, laid out
//! contiguously by outcome (POVM order) and then by `s`. Composite indices
//! are `system * ancilla_dim + ancilla`.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::instrument::{ConditionalOutput, Instrument, InstrumentOutcome};
use crate::linalg::{
    basis_vector, complete_to_unitary, identity, numerical_rank, partial_trace, projector,
    tensor_product, tensor_vectors, CMatrix, CVector, DensityOperator, Keep, UnitaryOperator,
    DEFAULT_TOL,
};
use crate::povm::composite_label;

/// Ancilla basis indices read out as one pointer value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerBlock {
    pub label: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    system_dim: usize,
    ancilla_dim: usize,
    pointer_blocks: Vec<PointerBlock>,
    xi: CVector,
    unitary: UnitaryOperator,
}

impl MeasurementModel {
    /// Checks that the blocks partition the ancilla basis, `‖ξ‖ = 1` and `U` is unitary.
    pub fn new(
        system_dim: usize,
        ancilla_dim: usize,
        pointer_blocks: Vec<PointerBlock>,
        xi: CVector,
        unitary: CMatrix,
        tol: f64,
    ) -> Result<Self> {
        let n = system_dim
            .checked_mul(ancilla_dim)
            .ok_or(Error::DimensionOverflow(system_dim, ancilla_dim))?;
        if system_dim == 0 || ancilla_dim == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        if xi.len() != ancilla_dim {
            return Err(Error::InvalidModel(format!(
                "xi has length {}, ancilla dimension is {ancilla_dim}",
                xi.len()
            )));
        }
        let norm = xi.norm();
        if (norm - 1.0).abs() > tol {
            return Err(Error::InvalidModel(format!("xi has norm {norm:.12}")));
        }
        if unitary.nrows() != n || unitary.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "coupling is {}x{}, expected {n}x{n}",
                unitary.nrows(),
                unitary.ncols()
            )));
        }
        let mut seen = HashSet::new();
        let mut labels = HashSet::new();
        for block in &pointer_blocks {
            if !labels.insert(block.label.as_str()) {
                return Err(Error::DuplicateLabel {
                    label: block.label.clone(),
                });
            }
            for &i in &block.indices {
                if i >= ancilla_dim || !seen.insert(i) {
                    return Err(Error::InvalidModel(format!(
                        "pointer blocks do not partition the ancilla basis (index {i})"
                    )));
                }
            }
        }
        if seen.len() != ancilla_dim {
            return Err(Error::InvalidModel(format!(
                "pointer blocks cover {} of {ancilla_dim} ancilla indices",
                seen.len()
            )));
        }
        let unitary = UnitaryOperator::new(unitary, tol)?;
        Ok(Self {
            system_dim,
            ancilla_dim,
            pointer_blocks,
            xi,
            unitary,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dim
    }

    pub fn pointer_blocks(&self) -> &[PointerBlock] {
        &self.pointer_blocks
    }

    pub fn xi(&self) -> &CVector {
        &self.xi
    }

    pub fn unitary(&self) -> &UnitaryOperator {
        &self.unitary
    }

    pub fn block(&self, label: &str) -> Result<&PointerBlock> {
        self.pointer_blocks
            .iter()
            .find(|b| b.label == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_owned(),
            })
    }

    /// `P_i = Σ_{s ∈ block} |b_s⟩⟨b_s|` on the ancilla.
    pub fn pointer_projection(&self, label: &str) -> Result<CMatrix> {
        let block = self.block(label)?;
        let mut p = CMatrix::zeros(self.ancilla_dim, self.ancilla_dim);
        for &i in &block.indices {
            p[(i, i)] = crate::linalg::ONE;
        }
        Ok(p)
    }

    /// `ω_ρ = U (ρ ⊗ |ξ⟩⟨ξ|) U†`
    pub fn interact(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.nrows() != self.system_dim || rho.ncols() != self.system_dim {
            return Err(Error::DimensionMismatch(format!(
                "input of size {}x{} for system dimension {}",
                rho.nrows(),
                rho.ncols(),
                self.system_dim
            )));
        }
        let u = self.unitary.matrix();
        let initial = tensor_product(rho, &projector(&self.xi))?;
        Ok(u * initial * u.adjoint())
    }

    /// Kraus operators `A_is = (I ⊗ ⟨b_is|) U (· ⊗ ξ)` read off the coupling,
    /// grouped by pointer block.
    pub fn kraus_operators(&self) -> Vec<InstrumentOutcome> {
        let d = self.system_dim;
        let r = self.ancilla_dim;
        let u = self.unitary.matrix();
        let images: Vec<CVector> = (0..d)
            .map(|c| u * tensor_vectors(&basis_vector(d, c), &self.xi))
            .collect();
        self.pointer_blocks
            .iter()
            .map(|block| InstrumentOutcome {
                label: block.label.clone(),
                kraus: block
                    .indices
                    .iter()
                    .map(|&b| CMatrix::from_fn(d, d, |row, col| images[col][row * r + b]))
                    .collect(),
            })
            .collect()
    }

    /// The instrument realized by this model, as explicit Kraus lists.
    pub fn to_instrument(&self) -> Instrument {
        Instrument::from_outcomes_unchecked(self.system_dim, self.kraus_operators())
    }
}

/// Builds the minimal pure measurement model of `inst` with ancilla
/// dimension `Σ_i r_i`.
///
/// `U` is fixed on `H ⊗ ξ` by `U(ψ ⊗ ξ) = Σ_{i,s} A_is ψ ⊗ b_is` and
/// extended deterministically.
pub fn minimal_dilation(inst: &Instrument, xi: Option<&CVector>) -> Result<MeasurementModel> {
    let d = inst.dim();
    let ancilla_dim: usize = inst.kraus_ranks().iter().sum();
    if ancilla_dim == 0 {
        return Err(Error::InvalidModel(
            "instrument has no Kraus operators".into(),
        ));
    }
    let xi = match xi {
        Some(v) => {
            if v.len() != ancilla_dim {
                return Err(Error::DimensionMismatch(format!(
                    "xi has length {}, minimal ancilla has dimension {ancilla_dim}",
                    v.len()
                )));
            }
            let norm = v.norm();
            if (norm - 1.0).abs() > DEFAULT_TOL {
                return Err(Error::InvalidModel(format!("xi has norm {norm:.12}")));
            }
            v.clone()
        }
        None => basis_vector(ancilla_dim, 0),
    };

    let mut blocks = Vec::with_capacity(inst.outcomes().len());
    let mut ancilla_index = 0;
    let n = d * ancilla_dim;
    let mut isometry = CMatrix::zeros(n, d);
    for o in inst.outcomes() {
        let mut indices = Vec::with_capacity(o.kraus.len());
        for a in &o.kraus {
            let b = basis_vector(ancilla_dim, ancilla_index);
            for col in 0..d {
                let image = tensor_vectors(&a.column(col).into_owned(), &b);
                let mut target = isometry.column_mut(col);
                target += image;
            }
            indices.push(ancilla_index);
            ancilla_index += 1;
        }
        blocks.push(PointerBlock {
            label: o.label.clone(),
            indices,
        });
    }

    // U0 sends e_c to U(e_c ⊗ ξ); X sends e_c to e_c ⊗ ξ. Then U = U0 X†.
    let u0 = complete_to_unitary(&isometry)?;
    let probe_columns: Vec<CVector> = (0..d)
        .map(|c| tensor_vectors(&basis_vector(d, c), &xi))
        .collect();
    let x = complete_to_unitary(&CMatrix::from_columns(&probe_columns))?;
    let u = u0.matrix() * x.matrix().adjoint();
    MeasurementModel::new(d, ancilla_dim, blocks, xi, u, DEFAULT_TOL)
}

/// `tr_{H′}[U(X ⊗ |ξ⟩⟨ξ|)U†(I ⊗ P_i)]` for an arbitrary input operator `X`.
pub fn realized_action(model: &MeasurementModel, label: &str, x: &CMatrix) -> Result<CMatrix> {
    let omega = model.interact(x)?;
    let pointer = tensor_product(
        &identity(model.system_dim),
        &model.pointer_projection(label)?,
    )?;
    partial_trace(
        &(omega * pointer),
        model.system_dim,
        model.ancilla_dim,
        Keep::A,
    )
}

/// The conditional output the model produces for pointer value `label`.
pub fn realized_instrument(
    model: &MeasurementModel,
    label: &str,
    rho: &DensityOperator,
) -> Result<ConditionalOutput> {
    Ok(ConditionalOutput::from_unnormalized(realized_action(
        model,
        label,
        rho.matrix(),
    )?))
}

/// Object–apparatus state on `H ⊗ H′`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub state: DensityOperator,
    pub system_dim: usize,
    pub ancilla_dim: usize,
}

impl JointState {
    pub fn system_marginal(&self) -> CMatrix {
        partial_trace(
            self.state.matrix(),
            self.system_dim,
            self.ancilla_dim,
            Keep::A,
        )
        .expect("joint state dims are consistent")
    }

    pub fn ancilla_marginal(&self) -> CMatrix {
        partial_trace(
            self.state.matrix(),
            self.system_dim,
            self.ancilla_dim,
            Keep::B,
        )
        .expect("joint state dims are consistent")
    }
}

/// `ω_ρ`, or with a pointer reading `i` the projected state
/// `(I ⊗ P_i) ω_ρ (I ⊗ P_i) / p_i`.
pub fn post_measurement_joint_state(
    model: &MeasurementModel,
    rho: &DensityOperator,
    label: Option<&str>,
) -> Result<JointState> {
    let omega = model.interact(rho.matrix())?;
    let state = match label {
        None => omega,
        Some(label) => {
            let pointer = tensor_product(
                &identity(model.system_dim),
                &model.pointer_projection(label)?,
            )?;
            let projected = &pointer * omega * &pointer;
            let p = crate::linalg::trace(&projected).re;
            if p <= crate::instrument::PROBABILITY_FLOOR {
                return Err(Error::ZeroProbabilityBranch {
                    label: label.to_owned(),
                    probability: p,
                });
            }
            projected.unscale(p)
        }
    };
    Ok(JointState {
        state: DensityOperator::from_matrix_unchecked(crate::linalg::hermitian_part(&state)),
        system_dim: model.system_dim,
        ancilla_dim: model.ancilla_dim,
    })
}

/// Replaces each pointer block by singletons `(i,s)`, keeping `H′`, `ξ`, `U`.
///
/// Requires the realized instrument to be maximally refinable: every Kraus
/// operator has rank one and each outcome's Kraus rank equals the rank of
/// its effect.
pub fn refine_pointer(model: &MeasurementModel) -> Result<MeasurementModel> {
    let d = model.system_dim;
    let kraus = model.kraus_operators();
    let mut blocks = Vec::new();
    for (block, outcome) in model.pointer_blocks.iter().zip(&kraus) {
        let not_max = |reason: String| Error::NotMaximallyRefinable {
            label: block.label.clone(),
            reason,
        };
        for a in &outcome.kraus {
            let rank = numerical_rank(a, 1e-8);
            if rank > 1 {
                return Err(not_max(format!("Kraus operator of rank {rank}")));
            }
        }
        let effect_rank = numerical_rank(&outcome.effect(d), 1e-8);
        if effect_rank != outcome.kraus.len() {
            return Err(not_max(format!(
                "Kraus rank {} differs from multiplicity {effect_rank}",
                outcome.kraus.len()
            )));
        }
        for (s, &index) in block.indices.iter().enumerate() {
            blocks.push(PointerBlock {
                label: composite_label(&block.label, s + 1),
                indices: vec![index],
            });
        }
    }
    MeasurementModel::new(
        d,
        model.ancilla_dim,
        blocks,
        model.xi.clone(),
        model.unitary.matrix().clone(),
        DEFAULT_TOL,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::instrument::{apply, associated_povm, max_refinable_instrument, refine_instrument};
    use crate::linalg::{matrix_units, orthonormality_residual};
    use crate::povm::{as_refined_povm, born_probabilities, refine};
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn realized_distance(model: &MeasurementModel, inst: &Instrument) -> f64 {
        let d = inst.dim();
        let mut worst = 0.0f64;
        for o in inst.outcomes() {
            for e in matrix_units(d) {
                let via_model = realized_action(model, &o.label, &e).unwrap();
                let direct = crate::instrument::schrodinger_action(&o.kraus, &e, d);
                worst = worst.max((via_model - direct).norm());
            }
        }
        worst
    }

    /// Same coupling on a larger ancilla; the extra basis vectors join the
    /// first pointer block and are never populated.
    fn pad_ancilla(model: &MeasurementModel, extra: usize) -> MeasurementModel {
        let d = model.system_dim();
        let r = model.ancilla_dim();
        let big = r + extra;
        let u = model.unitary().matrix();
        let mut padded = CMatrix::zeros(d * big, d * big);
        for s in 0..d {
            for t in 0..d {
                for a in 0..r {
                    for b in 0..r {
                        padded[(s * big + a, t * big + b)] = u[(s * r + a, t * r + b)];
                    }
                }
            }
            for a in r..big {
                padded[(s * big + a, s * big + a)] = crate::linalg::ONE;
            }
        }
        let mut blocks = model.pointer_blocks().to_vec();
        blocks[0].indices.extend(r..big);
        let mut xi = CVector::zeros(big);
        xi.rows_mut(0, r).copy_from(model.xi());
        MeasurementModel::new(d, big, blocks, xi, padded, DEFAULT_TOL).unwrap()
    }

    #[test]
    fn luders_z_coupling() {
        let inst = fixtures::luders_z();
        let model = minimal_dilation(&inst, None).unwrap();
        assert_eq!(model.ancilla_dim(), 2);
        let u = model.unitary().matrix();
        assert!(orthonormality_residual(u) < 1e-12);
        assert!((u * u.adjoint() - identity(4)).norm() < 1e-12);
        // U(ψ ⊗ e1) = Σ_i M_i ψ ⊗ e_i, column by column
        for c in 0..2 {
            let psi = basis_vector(2, c);
            let got = u * tensor_vectors(&psi, &basis_vector(2, 0));
            let want = tensor_vectors(&psi, &basis_vector(2, c));
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn ancilla_dimension_is_total_kraus_rank() {
        assert_eq!(
            minimal_dilation(&fixtures::trine_preparator(), None)
                .unwrap()
                .ancilla_dim(),
            3
        );
        assert_eq!(
            minimal_dilation(&fixtures::unsharp_max_refinable(), None)
                .unwrap()
                .ancilla_dim(),
            4
        );
    }

    #[test]
    fn realized_instrument_matches_source() {
        for inst in [
            fixtures::luders_z(),
            fixtures::trine_preparator(),
            fixtures::unsharp_max_refinable(),
        ] {
            let model = minimal_dilation(&inst, None).unwrap();
            assert!(realized_distance(&model, &inst) < 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let inst = random::instrument(&mut rng, 3, 2, 2);
        let model = minimal_dilation(&inst, None).unwrap();
        assert!(realized_distance(&model, &inst) < 1e-10);
        assert!(
            crate::instrument::instrument_distance(&model.to_instrument(), &inst).unwrap() < 1e-10
        );
    }

    #[test]
    fn luders_z_realized_output() {
        let model = minimal_dilation(&fixtures::luders_z(), None).unwrap();
        let out = realized_instrument(&model, "0", &fixtures::plus_state()).unwrap();
        assert!((out.probability - 0.5).abs() < 1e-12);
        assert!((out.state.unwrap().matrix() - projector(&basis_vector(2, 0))).norm() < 1e-12);
    }

    #[test]
    fn reproducibility_for_trine() {
        let inst = fixtures::trine_preparator();
        let model = minimal_dilation(&inst, None).unwrap();
        let povm = associated_povm(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let rho = random::density(&mut rng, 2);
            let born = born_probabilities(&povm, &rho).unwrap();
            for (o, p) in povm.outcomes().iter().zip(born) {
                let omega = model.interact(rho.matrix()).unwrap();
                let pointer =
                    tensor_product(&identity(2), &model.pointer_projection(&o.label).unwrap())
                        .unwrap();
                let q = crate::linalg::trace(&(omega * pointer)).re;
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn other_probe_vector_gives_same_instrument() {
        let inst = fixtures::unsharp_max_refinable();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let xi = random::unit_vector(&mut rng, 4);
        let model = minimal_dilation(&inst, Some(&xi)).unwrap();
        assert_eq!(model.xi(), &xi);
        assert!(realized_distance(&model, &inst) < 1e-10);
    }

    #[test]
    fn bad_probe_vector_is_rejected() {
        let inst = fixtures::luders_z();
        assert!(minimal_dilation(&inst, Some(&basis_vector(3, 0))).is_err());
        assert!(minimal_dilation(&inst, Some(&basis_vector(2, 0).scale(2.0))).is_err());
    }

    #[test]
    fn padded_ancilla_realizes_same_instrument() {
        let inst = fixtures::trine_preparator();
        let model = minimal_dilation(&inst, None).unwrap();
        let padded = pad_ancilla(&model, 2);
        assert_eq!(padded.ancilla_dim(), model.ancilla_dim() + 2);
        assert!(realized_distance(&padded, &inst) < 1e-10);
    }

    #[test]
    fn projected_joint_state_factorizes() {
        let model = minimal_dilation(&fixtures::luders_z(), None).unwrap();
        let joint =
            post_measurement_joint_state(&model, &fixtures::plus_state(), Some("0")).unwrap();
        let want = tensor_product(
            &projector(&basis_vector(2, 0)),
            &projector(&basis_vector(2, 0)),
        )
        .unwrap();
        assert!((joint.state.matrix() - want).norm() < 1e-12);

        let trine = minimal_dilation(&fixtures::trine_preparator(), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random::density(&mut rng, 2);
        for (i, label) in ["t0", "t1", "t2"].iter().enumerate() {
            let joint = post_measurement_joint_state(&trine, &rho, Some(label)).unwrap();
            let anc = joint.ancilla_marginal();
            assert!((anc - projector(&basis_vector(3, i))).norm() < 1e-10);
            let product =
                tensor_product(&joint.system_marginal(), &joint.ancilla_marginal()).unwrap();
            assert!((joint.state.matrix() - product).norm() < 1e-10);
        }
    }

    #[test]
    fn joint_state_marginals() {
        let inst = fixtures::unsharp_max_refinable();
        let model = minimal_dilation(&inst, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let rho = random::density(&mut rng, 2);
        let joint = post_measurement_joint_state(&model, &rho, None).unwrap();
        let anc = joint.ancilla_marginal();
        let mut mixture = CMatrix::zeros(2, 2);
        for o in inst.outcomes() {
            let out = apply(&inst, &o.label, &rho).unwrap();
            let block_weight: f64 = model
                .block(&o.label)
                .unwrap()
                .indices
                .iter()
                .map(|&i| anc[(i, i)].re)
                .sum();
            assert!((block_weight - out.probability).abs() < 1e-10);
            mixture += out.state.unwrap().matrix().scale(out.probability);
        }
        assert!((joint.system_marginal() - mixture).norm() < 1e-10);
    }

    #[test]
    fn zero_probability_branch_is_an_error() {
        let model = minimal_dilation(&fixtures::luders_z(), None).unwrap();
        assert!(matches!(
            post_measurement_joint_state(&model, &fixtures::basis_state(2, 0), Some("1")),
            Err(Error::ZeroProbabilityBranch { .. })
        ));
    }

    #[test]
    fn refine_pointer_qutrit() {
        let q = refine(&fixtures::qutrit_degenerate_pvm(), DEFAULT_TOL).unwrap();
        let phi: Vec<CVector> = q.entries().iter().map(|e| e.d.clone()).collect();
        let inst = max_refinable_instrument(&q, &phi, DEFAULT_TOL).unwrap();
        let model = minimal_dilation(&inst, None).unwrap();
        let fine_model = refine_pointer(&model).unwrap();
        assert_eq!(fine_model.pointer_blocks().len(), 3);
        assert!(fine_model
            .pointer_blocks()
            .iter()
            .all(|b| b.indices.len() == 1));
        let fine = refine_instrument(&inst, &q, DEFAULT_TOL).unwrap();
        assert!(realized_distance(&fine_model, &fine) < 1e-10);
    }

    #[test]
    fn refine_pointer_unsharp_qubit() {
        let r = refine(&fixtures::unsharp_qubit(), DEFAULT_TOL).unwrap();
        let model = minimal_dilation(&fixtures::unsharp_max_refinable(), None).unwrap();
        let fine_model = refine_pointer(&model).unwrap();
        assert_eq!(fine_model.pointer_blocks().len(), 4);
        let realized = associated_povm(&fine_model.to_instrument());
        for (a, b) in realized
            .outcomes()
            .iter()
            .zip(as_refined_povm(&r).outcomes())
        {
            assert_eq!(a.label, b.label);
            assert!((&a.effect - &b.effect).norm() < 1e-10);
        }
    }

    #[test]
    fn refine_pointer_keeps_singleton_blocks() {
        let model = minimal_dilation(&fixtures::trine_preparator(), None).unwrap();
        let fine = refine_pointer(&model).unwrap();
        let before: Vec<_> = model
            .pointer_blocks()
            .iter()
            .map(|b| b.indices.clone())
            .collect();
        let after: Vec<_> = fine
            .pointer_blocks()
            .iter()
            .map(|b| b.indices.clone())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn refine_pointer_rejects_non_maximally_refinable() {
        let q = crate::povm::Pvm::new(fixtures::qutrit_degenerate_pvm(), DEFAULT_TOL).unwrap();
        let model = minimal_dilation(&crate::instrument::luders_instrument(&q), None).unwrap();
        assert!(matches!(
            refine_pointer(&model),
            Err(Error::NotMaximallyRefinable { .. })
        ));
        let half = DensityOperator::maximally_mixed(2);
        let mixed = crate::instrument::preparator_instrument(
            &fixtures::trine(),
            &vec![half; 3],
            DEFAULT_TOL,
        )
        .unwrap();
        let model = minimal_dilation(&mixed, None).unwrap();
        assert!(refine_pointer(&model).is_err());
    }

    #[test]
    fn model_validation() {
        let u = identity(4);
        let blocks = vec![PointerBlock {
            label: "a".into(),
            indices: vec![0],
        }];
        assert!(matches!(
            MeasurementModel::new(2, 2, blocks, basis_vector(2, 0), u.clone(), DEFAULT_TOL),
            Err(Error::InvalidModel(_))
        ));
        let blocks = vec![
            PointerBlock {
                label: "a".into(),
                indices: vec![0],
            },
            PointerBlock {
                label: "b".into(),
                indices: vec![1],
            },
        ];
        assert!(
            MeasurementModel::new(2, 2, blocks.clone(), basis_vector(2, 0), u, DEFAULT_TOL).is_ok()
        );
        let not_unitary = identity(4).scale(2.0);
        assert!(
            MeasurementModel::new(2, 2, blocks, basis_vector(2, 0), not_unitary, DEFAULT_TOL)
                .is_err()
        );
    }
}
