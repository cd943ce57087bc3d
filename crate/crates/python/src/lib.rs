//! Python bindings. Matrices cross the boundary as nested lists of complex
//! numbers; anything with a `__complex__` method (numpy scalars included) is
//! accepted on the way in.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qmeasure::dilation::{self, MeasurementModel};
use qmeasure::instrument::{self, ConditionalOutput};
use qmeasure::io::{InstrumentDoc, Manifest, ModelDoc, Payload, PovmDoc};
use qmeasure::montecarlo::{self, ChainSpec};
use qmeasure::povm::{self, DiscretePovm, Pvm};
use qmeasure::sequential::{self, JointInstrument};
use qmeasure::{CMatrix, DEFAULT_TOL};

type Rows = Vec<Vec<Complex64>>;

fn err(e: qmeasure::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Rows) -> PyResult<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!(
            "expected a square {n}x{n} matrix"
        )));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn to_rows(m: &CMatrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn density(rows: &Rows, tol: f64) -> PyResult<qmeasure::DensityOperator> {
    qmeasure::linalg::validate_density(&to_matrix(rows)?, tol).map_err(err)
}

fn conditional(out: ConditionalOutput) -> (f64, Option<Rows>) {
    (out.probability, out.state.map(|s| to_rows(s.matrix())))
}

fn parse(text: &str) -> PyResult<Payload> {
    Ok(Manifest::parse(text).map_err(err)?.payload)
}

/// A discrete POVM with labelled effects.
#[pyclass(name = "Povm", module = "qmeasure_py", frozen)]
struct PyPovm(DiscretePovm);

#[pymethods]
impl PyPovm {
    #[new]
    #[pyo3(signature = (effects, tol = DEFAULT_TOL))]
    fn new(effects: Vec<(String, Rows)>, tol: f64) -> PyResult<Self> {
        let candidate = effects
            .iter()
            .map(|(l, m)| Ok((l.clone(), to_matrix(m)?)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self(povm::validate_povm(candidate, tol).map_err(err)?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        match parse(text)? {
            Payload::Povm(doc) => Ok(Self(doc.into_povm(DEFAULT_TOL).map_err(err)?)),
            other => Err(PyValueError::new_err(format!(
                "expected a povm, got {}",
                other.kind()
            ))),
        }
    }

    fn to_json(&self) -> String {
        Manifest::new(Payload::Povm(PovmDoc::from_povm(&self.0))).to_json()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.labels().map(str::to_owned).collect()
    }

    fn effect(&self, label: &str) -> PyResult<Rows> {
        self.0
            .effect(label)
            .map(to_rows)
            .ok_or_else(|| PyValueError::new_err(format!("unknown label {label}")))
    }

    #[pyo3(signature = (rho, tol = DEFAULT_TOL))]
    fn probabilities(&self, rho: Rows, tol: f64) -> PyResult<Vec<f64>> {
        povm::born_probabilities(&self.0, &density(&rho, tol)?).map_err(err)
    }

    /// Rank-one refinement as a POVM on labels `(label,k)`.
    #[pyo3(signature = (rank_tol = DEFAULT_TOL))]
    fn refine(&self, rank_tol: f64) -> PyResult<Self> {
        let refined = povm::refine(&self.0, rank_tol).map_err(err)?;
        Ok(Self(povm::as_refined_povm(&refined)))
    }

    fn is_pvm(&self) -> bool {
        povm::is_pvm(&self.0, DEFAULT_TOL)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Povm(dim={}, labels={:?})", self.0.dim(), self.labels())
    }
}

/// An instrument given by labelled Kraus lists.
#[pyclass(name = "Instrument", module = "qmeasure_py", frozen)]
struct PyInstrument(instrument::Instrument);

#[pymethods]
impl PyInstrument {
    #[new]
    #[pyo3(signature = (outcomes, tol = DEFAULT_TOL))]
    fn new(outcomes: Vec<(String, Vec<Rows>)>, tol: f64) -> PyResult<Self> {
        let dim = outcomes
            .iter()
            .flat_map(|(_, ks)| ks.first())
            .map(Vec::len)
            .next()
            .ok_or_else(|| PyValueError::new_err("no Kraus operators"))?;
        let parsed = outcomes
            .iter()
            .map(|(l, ks)| {
                Ok((
                    l.clone(),
                    ks.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?,
                ))
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self(
            instrument::instrument_from_kraus(dim, parsed, tol).map_err(err)?,
        ))
    }

    /// Lüders instrument `ρ ↦ PρP` of a projection-valued measure.
    #[staticmethod]
    #[pyo3(signature = (pvm, tol = DEFAULT_TOL))]
    fn luders(pvm: &PyPovm, tol: f64) -> PyResult<Self> {
        let p = Pvm::new(pvm.0.clone(), tol).map_err(err)?;
        Ok(Self(instrument::luders_instrument(&p)))
    }

    /// Rank-one POVM that prepares `states[i]` on outcome `i`.
    #[staticmethod]
    #[pyo3(signature = (povm, states, tol = DEFAULT_TOL))]
    fn preparator(povm: &PyPovm, states: Vec<Rows>, tol: f64) -> PyResult<Self> {
        let states = states
            .iter()
            .map(|s| density(s, tol))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self(
            instrument::preparator_instrument(&povm.0, &states, tol).map_err(err)?,
        ))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        match parse(text)? {
            Payload::Instrument(doc) => Ok(Self(doc.into_instrument(DEFAULT_TOL).map_err(err)?)),
            other => Err(PyValueError::new_err(format!(
                "expected an instrument, got {}",
                other.kind()
            ))),
        }
    }

    fn to_json(&self) -> String {
        Manifest::new(Payload::Instrument(InstrumentDoc::from_instrument(&self.0))).to_json()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.labels().map(str::to_owned).collect()
    }

    fn kraus(&self, label: &str) -> PyResult<Vec<Rows>> {
        Ok(self
            .0
            .outcome(label)
            .map_err(err)?
            .kraus
            .iter()
            .map(to_rows)
            .collect())
    }

    /// `(probability, state)`; the state is `None` when the outcome cannot occur.
    #[pyo3(signature = (label, rho, tol = DEFAULT_TOL))]
    fn apply(&self, label: &str, rho: Rows, tol: f64) -> PyResult<(f64, Option<Rows>)> {
        let rho = density(&rho, tol)?;
        Ok(conditional(
            instrument::apply(&self.0, label, &rho).map_err(err)?,
        ))
    }

    fn associated_povm(&self) -> PyPovm {
        PyPovm(instrument::associated_povm(&self.0))
    }

    fn totality_residual(&self) -> f64 {
        self.0.totality_residual()
    }

    #[pyo3(signature = (tol = DEFAULT_TOL))]
    fn is_strongly_repeatable(&self, tol: f64) -> bool {
        instrument::is_strongly_repeatable(&self.0, tol)
    }

    fn distance(&self, other: &PyInstrument) -> PyResult<f64> {
        instrument::instrument_distance(&self.0, &other.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instrument(dim={}, labels={:?})",
            self.0.dim(),
            self.labels()
        )
    }
}

/// Unitary coupling to a pointer ancilla.
#[pyclass(name = "MeasurementModel", module = "qmeasure_py", frozen)]
struct PyModel(MeasurementModel);

#[pymethods]
impl PyModel {
    #[getter]
    fn system_dim(&self) -> usize {
        self.0.system_dim()
    }

    #[getter]
    fn ancilla_dim(&self) -> usize {
        self.0.ancilla_dim()
    }

    #[getter]
    fn unitary(&self) -> Rows {
        to_rows(self.0.unitary().matrix())
    }

    fn pointer_blocks(&self) -> Vec<(String, Vec<usize>)> {
        self.0
            .pointer_blocks()
            .iter()
            .map(|b| (b.label.clone(), b.indices.clone()))
            .collect()
    }

    #[pyo3(signature = (label, rho, tol = DEFAULT_TOL))]
    fn measure(&self, label: &str, rho: Rows, tol: f64) -> PyResult<(f64, Option<Rows>)> {
        let rho = density(&rho, tol)?;
        Ok(conditional(
            dilation::realized_instrument(&self.0, label, &rho).map_err(err)?,
        ))
    }

    fn instrument(&self) -> PyInstrument {
        PyInstrument(self.0.to_instrument())
    }

    /// Splits each pointer block into singletons `(label,s)`.
    fn refine_pointer(&self) -> PyResult<Self> {
        Ok(Self(dilation::refine_pointer(&self.0).map_err(err)?))
    }

    fn to_json(&self) -> String {
        Manifest::new(Payload::Model(ModelDoc::from_model(&self.0))).to_json()
    }
}

/// Two instruments applied in sequence, with outcome labels `"a|b"`.
#[pyclass(name = "JointInstrument", module = "qmeasure_py", frozen)]
struct PyJoint(JointInstrument);

#[pymethods]
impl PyJoint {
    fn instrument(&self) -> PyInstrument {
        PyInstrument(self.0.instrument().clone())
    }

    fn margin_first(&self) -> PyPovm {
        PyPovm(sequential::margin_first(&self.0))
    }

    fn margin_second(&self) -> PyPovm {
        PyPovm(sequential::margin_second(&self.0))
    }

    fn joint_povm(&self) -> PyPovm {
        PyPovm(sequential::joint_povm(&self.0))
    }
}

/// Minimal measurement model realizing `inst`.
#[pyfunction]
fn dilate(inst: &PyInstrument) -> PyResult<PyModel> {
    Ok(PyModel(
        dilation::minimal_dilation(&inst.0, None).map_err(err)?,
    ))
}

#[pyfunction]
fn compose(first: &PyInstrument, second: &PyInstrument) -> PyResult<PyJoint> {
    Ok(PyJoint(
        sequential::compose_sequential(&first.0, &second.0).map_err(err)?,
    ))
}

/// Samples outcome sequences; returns `{"stages": [...], "joint": [...]}`
/// as lists of `(label, count)`.
#[pyfunction]
#[pyo3(signature = (initial, stages, trials, seed, tol = DEFAULT_TOL))]
fn simulate(
    py: Python<'_>,
    initial: Rows,
    stages: Vec<PyRef<'_, PyInstrument>>,
    trials: usize,
    seed: u64,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let spec = ChainSpec::new(
        density(&initial, tol)?,
        stages.iter().map(|s| s.0.clone()).collect(),
        trials,
        seed,
    );
    let record = py.detach(|| montecarlo::run_chain(&spec)).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    let per_stage: Vec<Vec<(String, u64)>> = (0..record.stages())
        .map(|i| record.stage_table(i))
        .collect();
    out.set_item("stages", per_stage)?;
    out.set_item("joint", record.joint_table())?;
    Ok(out.into_any().unbind())
}

#[pymodule]
fn qmeasure_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPovm>()?;
    m.add_class::<PyInstrument>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyJoint>()?;
    m.add_function(wrap_pyfunction!(dilate, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("DEFAULT_TOL", DEFAULT_TOL)?;
    Ok(())
}
