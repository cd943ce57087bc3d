//! Standard small examples used across tests, the CLI and the bindings.

use crate::linalg::{basis_vector, identity, projector, real, CMatrix, CVector, DensityOperator};
use crate::povm::{DiscretePovm, Outcome};

fn povm(dim: usize, outcomes: Vec<(&str, CMatrix)>) -> DiscretePovm {
    DiscretePovm::from_outcomes_unchecked(
        dim,
        outcomes
            .into_iter()
            .map(|(label, effect)| Outcome {
                label: label.to_owned(),
                effect,
            })
            .collect(),
    )
}

fn diag(entries: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(
        entries.len(),
        entries.iter().map(|&x| real(x)),
    ))
}

/// Computational-basis PVM on a qubit, labels `"0"`, `"1"`.
pub fn z_pvm() -> DiscretePovm {
    povm(2, vec![("0", diag(&[1.0, 0.0])), ("1", diag(&[0.0, 1.0]))])
}

/// `|±⟩⟨±|`, labels `"+"`, `"-"`.
pub fn x_pvm() -> DiscretePovm {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = CVector::from_column_slice(&[real(s), real(s)]);
    let minus = CVector::from_column_slice(&[real(s), real(-s)]);
    povm(2, vec![("+", projector(&plus)), ("-", projector(&minus))])
}

/// `M_a = diag(1,1,0)`, `M_b = diag(0,0,1)`.
pub fn qutrit_degenerate_pvm() -> DiscretePovm {
    povm(
        3,
        vec![("a", diag(&[1.0, 1.0, 0.0])), ("b", diag(&[0.0, 0.0, 1.0]))],
    )
}

/// `M_± = (I ± σ_z/2)/2`.
pub fn unsharp_qubit() -> DiscretePovm {
    povm(
        2,
        vec![("+", diag(&[0.75, 0.25])), ("-", diag(&[0.25, 0.75]))],
    )
}

/// Unit vectors at Bloch angles 0°, 120°, 240° in the x–z plane.
pub fn trine_kets() -> [CVector; 3] {
    [0.0f64, 120.0, 240.0].map(|deg| {
        let half = deg.to_radians() / 2.0;
        CVector::from_column_slice(&[real(half.cos()), real(half.sin())])
    })
}

/// `{(2/3)|t_j⟩⟨t_j|}`, labels `"t0"`, `"t1"`, `"t2"`.
pub fn trine() -> DiscretePovm {
    let kets = trine_kets();
    povm(
        2,
        vec![
            ("t0", projector(&kets[0]).scale(2.0 / 3.0)),
            ("t1", projector(&kets[1]).scale(2.0 / 3.0)),
            ("t2", projector(&kets[2]).scale(2.0 / 3.0)),
        ],
    )
}

/// Single-outcome POVM `{I}`.
pub fn trivial(dim: usize, label: &str) -> DiscretePovm {
    povm(dim, vec![(label, identity(dim))])
}

pub fn plus_state() -> DensityOperator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DensityOperator::pure(&CVector::from_column_slice(&[real(s), real(s)])).unwrap()
}

pub fn basis_state(dim: usize, i: usize) -> DensityOperator {
    DensityOperator::pure(&basis_vector(dim, i)).unwrap()
}

/// Lüders instrument of [`z_pvm`].
pub fn luders_z() -> crate::instrument::Instrument {
    let pvm = crate::povm::Pvm::new(z_pvm(), crate::DEFAULT_TOL).expect("Z is a PVM");
    crate::instrument::luders_instrument(&pvm)
}

/// Trine as a preparator of the pure states `|t_j⟩⟨t_j|`.
pub fn trine_preparator() -> crate::instrument::Instrument {
    let states: Vec<DensityOperator> = trine_kets()
        .iter()
        .map(|k| DensityOperator::pure(k).expect("unit vector"))
        .collect();
    crate::instrument::preparator_instrument(&trine(), &states, crate::DEFAULT_TOL)
        .expect("trine is rank-1")
}

/// Maximally refinable instrument of [`unsharp_qubit`] with `φ_ik = g_ik/‖g_ik‖`.
pub fn unsharp_max_refinable() -> crate::instrument::Instrument {
    let refined = crate::povm::refine(&unsharp_qubit(), crate::DEFAULT_TOL).expect("valid POVM");
    let phi = crate::instrument::dual_unit_vectors(&refined);
    crate::instrument::max_refinable_instrument(&refined, &phi, crate::DEFAULT_TOL)
        .expect("dual vectors are unit")
}
