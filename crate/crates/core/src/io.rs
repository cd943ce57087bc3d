//! JSON interchange format, version "1".
//!
//! Complex numbers are `[re, im]`, vectors are arrays of complex numbers and
//! matrices are arrays of rows. Every file is a [`Manifest`]:
//!
//! ```json
//! {"format_version": "1", "kind": "povm", "payload": {"dim": 2, "outcomes": [...]}}
//! ```
//!
//! Shape problems (ragged rows, wrong lengths, unknown kinds) are reported as
//! [`Error::Format`]; physical invariants are checked by the constructors the
//! `into_*` conversions call.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dilation::{MeasurementModel, PointerBlock};
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::linalg::{c, validate_density, CMatrix, CVector, DensityOperator};
use crate::montecarlo::{ChainRecord, ChainSpec};
use crate::povm::{validate_povm, DiscretePovm};
use crate::sequential::{CompleteMeasurement, JointInstrument, MultiplicityPvm};

pub const FORMAT_VERSION: &str = "1";

pub type ComplexDoc = [f64; 2];
pub type VectorDoc = Vec<ComplexDoc>;
pub type MatrixDoc = Vec<Vec<ComplexDoc>>;

pub fn matrix_to_doc(m: &CMatrix) -> MatrixDoc {
    (0..m.nrows())
        .map(|r| {
            (0..m.ncols())
                .map(|col| [m[(r, col)].re, m[(r, col)].im])
                .collect()
        })
        .collect()
}

pub fn vector_to_doc(v: &CVector) -> VectorDoc {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// Square `dim × dim` matrix from rows.
pub fn matrix_from_doc(doc: &MatrixDoc, dim: usize, what: &str) -> Result<CMatrix> {
    if doc.len() != dim || doc.iter().any(|row| row.len() != dim) {
        return Err(Error::Format(format!(
            "{what}: expected a {dim}x{dim} matrix"
        )));
    }
    let m = CMatrix::from_fn(dim, dim, |r, col| c(doc[r][col][0], doc[r][col][1]));
    if !crate::linalg::is_finite(&m) {
        return Err(Error::NonFinite);
    }
    Ok(m)
}

pub fn vector_from_doc(doc: &VectorDoc, len: usize, what: &str) -> Result<CVector> {
    if doc.len() != len {
        return Err(Error::Format(format!(
            "{what}: expected {len} entries, found {}",
            doc.len()
        )));
    }
    let v = CVector::from_iterator(len, doc.iter().map(|z| c(z[0], z[1])));
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectDoc {
    pub label: String,
    pub effect: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmDoc {
    pub dim: usize,
    pub outcomes: Vec<EffectDoc>,
}

impl PovmDoc {
    pub fn from_povm(p: &DiscretePovm) -> Self {
        Self {
            dim: p.dim(),
            outcomes: p
                .outcomes()
                .iter()
                .map(|o| EffectDoc {
                    label: o.label.clone(),
                    effect: matrix_to_doc(&o.effect),
                })
                .collect(),
        }
    }

    pub fn into_povm(&self, tol: f64) -> Result<DiscretePovm> {
        let candidate = self
            .outcomes
            .iter()
            .map(|o| {
                Ok((
                    o.label.clone(),
                    matrix_from_doc(&o.effect, self.dim, &o.label)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        validate_povm(candidate, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrausDoc {
    pub label: String,
    pub kraus: Vec<MatrixDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentDoc {
    pub dim: usize,
    pub outcomes: Vec<KrausDoc>,
}

impl InstrumentDoc {
    pub fn from_instrument(inst: &Instrument) -> Self {
        Self {
            dim: inst.dim(),
            outcomes: inst
                .outcomes()
                .iter()
                .map(|o| KrausDoc {
                    label: o.label.clone(),
                    kraus: o.kraus.iter().map(matrix_to_doc).collect(),
                })
                .collect(),
        }
    }

    fn kraus_lists(&self) -> Result<Vec<(String, Vec<CMatrix>)>> {
        self.outcomes
            .iter()
            .map(|o| {
                let kraus = o
                    .kraus
                    .iter()
                    .map(|m| matrix_from_doc(m, self.dim, &o.label))
                    .collect::<Result<Vec<_>>>()?;
                Ok((o.label.clone(), kraus))
            })
            .collect()
    }

    pub fn into_instrument(&self, tol: f64) -> Result<Instrument> {
        crate::instrument::instrument_from_kraus(self.dim, self.kraus_lists()?, tol)
    }

    /// Accepts outcomes with empty Kraus lists.
    pub fn into_derived_instrument(&self, tol: f64) -> Result<Instrument> {
        crate::instrument::derived_instrument_from_kraus(self.dim, self.kraus_lists()?, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointOutcomeDoc {
    pub first: String,
    pub second: String,
    pub kraus: Vec<MatrixDoc>,
}

/// Joint outcomes keyed by `"label1|label2"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub dim: usize,
    pub outcomes: IndexMap<String, JointOutcomeDoc>,
}

impl JointDoc {
    pub fn from_joint(j: &JointInstrument) -> Self {
        let outcomes = j
            .pairs()
            .iter()
            .zip(j.instrument().outcomes())
            .map(|((a, b), o)| {
                (
                    o.label.clone(),
                    JointOutcomeDoc {
                        first: a.clone(),
                        second: b.clone(),
                        kraus: o.kraus.iter().map(matrix_to_doc).collect(),
                    },
                )
            })
            .collect();
        Self {
            dim: j.dim(),
            outcomes,
        }
    }

    pub fn into_joint(&self, tol: f64) -> Result<JointInstrument> {
        let mut outcomes = Vec::with_capacity(self.outcomes.len());
        for (key, o) in &self.outcomes {
            let expected = crate::sequential::joint_label(&o.first, &o.second);
            if key != &expected {
                return Err(Error::Format(format!(
                    "joint key {key:?} does not match {expected:?}"
                )));
            }
            let kraus = o
                .kraus
                .iter()
                .map(|m| matrix_from_doc(m, self.dim, key))
                .collect::<Result<Vec<_>>>()?;
            outcomes.push(((o.first.clone(), o.second.clone()), kraus));
        }
        JointInstrument::new(self.dim, outcomes, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub system_dim: usize,
    pub ancilla_dim: usize,
    pub pointer_blocks: IndexMap<String, Vec<usize>>,
    pub xi: VectorDoc,
    #[serde(rename = "U")]
    pub unitary: MatrixDoc,
}

impl ModelDoc {
    pub fn from_model(m: &MeasurementModel) -> Self {
        Self {
            system_dim: m.system_dim(),
            ancilla_dim: m.ancilla_dim(),
            pointer_blocks: m
                .pointer_blocks()
                .iter()
                .map(|b| (b.label.clone(), b.indices.clone()))
                .collect(),
            xi: vector_to_doc(m.xi()),
            unitary: matrix_to_doc(m.unitary().matrix()),
        }
    }

    pub fn into_model(&self, tol: f64) -> Result<MeasurementModel> {
        let n = self
            .system_dim
            .checked_mul(self.ancilla_dim)
            .ok_or(Error::DimensionOverflow(self.system_dim, self.ancilla_dim))?;
        let xi = vector_from_doc(&self.xi, self.ancilla_dim, "xi")?;
        let u = matrix_from_doc(&self.unitary, n, "U")?;
        let blocks = self
            .pointer_blocks
            .iter()
            .map(|(label, indices)| PointerBlock {
                label: label.clone(),
                indices: indices.clone(),
            })
            .collect();
        MeasurementModel::new(self.system_dim, self.ancilla_dim, blocks, xi, u, tol)
    }
}

/// Projections `N_1..N_K` and optionally the vectors `φ_k ∈ N_k H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicityDoc {
    pub dim: usize,
    pub projections: Vec<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<VectorDoc>>,
}

impl MultiplicityDoc {
    pub fn from_parts(mult: &MultiplicityPvm, phi: Option<&[CVector]>) -> Self {
        Self {
            dim: mult.dim(),
            projections: mult.projections().iter().map(matrix_to_doc).collect(),
            phi: phi.map(|p| p.iter().map(vector_to_doc).collect()),
        }
    }

    pub fn into_parts(&self, tol: f64) -> Result<(MultiplicityPvm, Option<Vec<CVector>>)> {
        let projections = self
            .projections
            .iter()
            .enumerate()
            .map(|(k, m)| matrix_from_doc(m, self.dim, &format!("projection {}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let mult = MultiplicityPvm::new(projections, tol)?;
        let phi = self
            .phi
            .as_ref()
            .map(|vs| {
                vs.iter()
                    .enumerate()
                    .map(|(k, v)| vector_from_doc(v, self.dim, &format!("phi {}", k + 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok((mult, phi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteDoc {
    pub first: InstrumentDoc,
    pub second: InstrumentDoc,
    pub joint: JointDoc,
}

impl CompleteDoc {
    pub fn from_complete(cm: &CompleteMeasurement) -> Self {
        Self {
            first: InstrumentDoc::from_instrument(&cm.first),
            second: InstrumentDoc::from_instrument(&cm.second),
            joint: JointDoc::from_joint(&cm.joint),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDoc {
    pub initial: MatrixDoc,
    pub stages: Vec<InstrumentDoc>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub track_states: bool,
}

impl ChainDoc {
    pub fn from_spec(spec: &ChainSpec) -> Self {
        Self {
            initial: matrix_to_doc(spec.initial.matrix()),
            stages: spec
                .stages
                .iter()
                .map(InstrumentDoc::from_instrument)
                .collect(),
            trials: spec.trials,
            seed: spec.seed,
            track_states: spec.track_states,
        }
    }

    pub fn into_spec(&self, tol: f64) -> Result<ChainSpec> {
        let dim = self.initial.len();
        let rho: DensityOperator =
            validate_density(&matrix_from_doc(&self.initial, dim, "initial")?, tol)?;
        let stages = self
            .stages
            .iter()
            .map(|s| s.into_instrument(tol))
            .collect::<Result<Vec<_>>>()?;
        let spec = ChainSpec {
            initial: rho,
            stages,
            trials: self.trials,
            seed: self.seed,
            track_states: self.track_states,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCountsDoc {
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceDoc {
    pub labels: Vec<String>,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_state: Option<MatrixDoc>,
}

/// Aggregated Monte Carlo results; per-trial sequences are not exported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordDoc {
    pub trials: usize,
    pub seed: u64,
    pub stages: Vec<StageCountsDoc>,
    pub sequences: Vec<SequenceDoc>,
}

impl RecordDoc {
    pub fn from_record(r: &ChainRecord) -> Self {
        Self {
            trials: r.trials,
            seed: r.seed,
            stages: r
                .stage_labels
                .iter()
                .zip(&r.stage_counts)
                .map(|(labels, counts)| StageCountsDoc {
                    labels: labels.clone(),
                    counts: counts.clone(),
                })
                .collect(),
            sequences: r
                .sequences
                .iter()
                .map(|s| SequenceDoc {
                    labels: s.labels.clone(),
                    count: s.count,
                    mean_state: s.mean_state.as_ref().map(matrix_to_doc),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Povm(PovmDoc),
    Instrument(InstrumentDoc),
    Model(ModelDoc),
    Chain(ChainDoc),
    Joint(JointDoc),
    Multiplicity(MultiplicityDoc),
    Complete(CompleteDoc),
    Record(RecordDoc),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Povm(_) => "povm",
            Payload::Instrument(_) => "instrument",
            Payload::Model(_) => "model",
            Payload::Chain(_) => "chain",
            Payload::Joint(_) => "joint",
            Payload::Multiplicity(_) => "multiplicity",
            Payload::Complete(_) => "complete",
            Payload::Record(_) => "record",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Manifest {
    pub fn new(payload: Payload) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_owned(),
            payload,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {:?}, expected {FORMAT_VERSION:?}",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Indented JSON with vectors and matrices kept on one line each.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("documents always serialize");
        let mut out = String::new();
        write_compact(&value, 0, &mut out);
        out.push('\n');
        out
    }
}

/// Nesting depth of an all-numeric array (a complex number is 1, a vector 2).
fn numeric_depth(v: &serde_json::Value) -> Option<usize> {
    match v {
        serde_json::Value::Number(_) => Some(0),
        serde_json::Value::Array(items) => items
            .iter()
            .map(numeric_depth)
            .try_fold(0, |acc, d| d.map(|d| acc.max(d)))
            .map(|d| d + 1),
        _ => None,
    }
}

fn write_compact(v: &serde_json::Value, depth: usize, out: &mut String) {
    use serde_json::Value;
    let pad = |d: usize, out: &mut String| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Array(items) if !items.is_empty() && numeric_depth(v).is_none_or(|d| d > 2) => {
            out.push_str("[\n");
            for (n, item) in items.iter().enumerate() {
                pad(depth + 1, out);
                write_compact(item, depth + 1, out);
                out.push_str(if n + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(depth, out);
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (n, (k, item)) in map.iter().enumerate() {
                pad(depth + 1, out);
                out.push_str(&serde_json::to_string(k).expect("keys serialize"));
                out.push_str(": ");
                write_compact(item, depth + 1, out);
                out.push_str(if n + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(depth, out);
            out.push('}');
        }
        leaf => out.push_str(&serde_json::to_string(leaf).expect("values serialize")),
    }
}
