//! Random test instances: Ginibre-distributed states, isometries and the
//! POVMs, PVMs and instruments built from them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::instrument::{Instrument, InstrumentOutcome};
use crate::linalg::{c, hermitian_part, projector, trace, CMatrix, CVector, DensityOperator};
use crate::povm::{DiscretePovm, Outcome, Pvm};

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    let v: CVector = gaussian_matrix(rng, n, 1).column(0).into_owned();
    v.unscale(v.norm())
}

pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    hermitian_part(&gaussian_matrix(rng, n, n))
}

/// Full-rank mixed state `GG†/tr[GG†]`.
pub fn density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityOperator {
    let g = gaussian_matrix(rng, n, n);
    let m = &g * g.adjoint();
    let tr = trace(&m).re;
    DensityOperator::from_matrix_unchecked(hermitian_part(&m.unscale(tr)))
}

pub fn pure_state<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityOperator {
    DensityOperator::from_matrix_unchecked(projector(&unit_vector(rng, n)))
}

/// `n × k` matrix with orthonormal columns (`k ≤ n`).
pub fn isometry<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> CMatrix {
    assert!(k <= n, "isometry needs k <= n");
    let g = gaussian_matrix(rng, n, k);
    let mut cols: Vec<CVector> = Vec::with_capacity(k);
    for j in 0..k {
        let mut w = g.column(j).into_owned();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dotc(&w);
                w -= q * p;
            }
        }
        let norm = w.norm();
        cols.push(w.unscale(norm));
    }
    CMatrix::from_columns(&cols)
}

pub fn unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    isometry(rng, n, n)
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Splits an isometry `V: ℂ^dim → ℂ^(Σ r_i · dim)` into per-outcome Kraus lists.
fn kraus_from_isometry(v: &CMatrix, dim: usize, ranks: &[usize]) -> Vec<Vec<CMatrix>> {
    let mut row = 0;
    ranks
        .iter()
        .map(|&r| {
            (0..r)
                .map(|_| {
                    let block = v.rows(row, dim).into_owned();
                    row += dim;
                    block
                })
                .collect()
        })
        .collect()
}

/// Random POVM whose effects have random ranks between 1 and `dim`.
pub fn povm<R: Rng + ?Sized>(rng: &mut R, dim: usize, outcomes: usize) -> DiscretePovm {
    let mut ranks: Vec<usize> = (0..outcomes).map(|_| rng.random_range(1..=dim)).collect();
    while ranks.iter().sum::<usize>() < dim {
        let i = rng.random_range(0..outcomes);
        ranks[i] = (ranks[i] + 1).min(dim);
    }
    let rows: usize = ranks.iter().sum();
    let v = isometry(rng, rows, dim);
    let mut row = 0;
    let outs = ranks
        .iter()
        .zip(labels(outcomes))
        .map(|(&r, label)| {
            let block = v.rows(row, r).into_owned();
            row += r;
            Outcome {
                label,
                effect: hermitian_part(&(block.adjoint() * block)),
            }
        })
        .collect();
    DiscretePovm::from_outcomes_unchecked(dim, outs)
}

/// Random PVM with `outcomes ≤ dim` nonzero projections.
pub fn pvm<R: Rng + ?Sized>(rng: &mut R, dim: usize, outcomes: usize) -> Pvm {
    assert!((1..=dim).contains(&outcomes));
    let u = unitary(rng, dim);
    // every outcome gets one column, the rest are scattered
    let mut owner: Vec<usize> = (0..dim)
        .map(|j| {
            if j < outcomes {
                j
            } else {
                rng.random_range(0..outcomes)
            }
        })
        .collect();
    for j in (1..dim).rev() {
        let swap = rng.random_range(0..=j);
        owner.swap(j, swap);
    }
    let outs = labels(outcomes)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut effect = CMatrix::zeros(dim, dim);
            for (j, _) in owner.iter().enumerate().filter(|(_, &o)| o == i) {
                effect += projector(&u.column(j).into_owned());
            }
            Outcome { label, effect }
        })
        .collect();
    Pvm::new(DiscretePovm::from_outcomes_unchecked(dim, outs), 1e-10)
        .expect("columns of a unitary give a PVM")
}

/// Random instrument with Kraus ranks between 1 and `max_rank`.
pub fn instrument<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    outcomes: usize,
    max_rank: usize,
) -> Instrument {
    let ranks: Vec<usize> = (0..outcomes)
        .map(|_| rng.random_range(1..=max_rank))
        .collect();
    let total: usize = ranks.iter().sum();
    let v = isometry(rng, total * dim, dim);
    let outs = kraus_from_isometry(&v, dim, &ranks)
        .into_iter()
        .zip(labels(outcomes))
        .map(|(kraus, label)| InstrumentOutcome { label, kraus })
        .collect();
    Instrument::from_outcomes_unchecked(dim, outs)
}
