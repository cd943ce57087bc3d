use std::io::Write;
use std::path::Path;

use qmeasure::dilation::{minimal_dilation, realized_action, MeasurementModel};
use qmeasure::instrument::{associated_povm, instrument_distance, schrodinger_action, Instrument};
use qmeasure::io::{CompleteDoc, JointDoc, Manifest, ModelDoc, Payload, PovmDoc, RecordDoc};
use qmeasure::linalg::{hermitian_eig, identity, matrix_units, trace, CMatrix, CVector};
use qmeasure::montecarlo::{analytic_sequence_probabilities, empirical_vs_analytic, run_chain};
use qmeasure::povm::{as_refined_povm, refine, relabel, validate_povm, DiscretePovm, RefinedPovm};
use qmeasure::sequential::{
    complete_measurement, compose_sequential, joint_label, joint_povm, margin_first,
    verify_refinement_condition, JointInstrument, MultiplicityPvm,
};
use serde_json::json;

use crate::report::{Failure, Report};

pub struct Options {
    pub tol: f64,
    pub out: Option<std::path::PathBuf>,
    pub csv: Option<std::path::PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub z: f64,
}

type CmdResult = Result<Report, Failure>;

pub fn read_manifest(path: &Path) -> Result<Manifest, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Manifest::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::Input(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn emit(report: &mut Report, opts: &Options, payload: Payload) -> Result<(), Failure> {
    let out = opts
        .out
        .as_ref()
        .ok_or_else(|| Failure::Input("this command requires --out".into()))?;
    write_atomic(out, &Manifest::new(payload).to_json())?;
    report.output = Some(out.display().to_string());
    Ok(())
}

fn povm_of(m: &Manifest, tol: f64) -> Result<DiscretePovm, Failure> {
    match &m.payload {
        Payload::Povm(doc) => Ok(doc.into_povm(tol)?),
        other => Err(wrong_kind("povm", other)),
    }
}

fn instrument_of(m: &Manifest, tol: f64) -> Result<Instrument, Failure> {
    match &m.payload {
        Payload::Instrument(doc) => Ok(doc.into_instrument(tol)?),
        other => Err(wrong_kind("instrument", other)),
    }
}

fn wrong_kind(expected: &str, got: &Payload) -> Failure {
    Failure::Input(format!(
        "expected a {expected} file, found kind {:?}",
        got.kind()
    ))
}

fn unitarity_residual(model: &MeasurementModel) -> f64 {
    let u = model.unitary().matrix();
    (u.adjoint() * u - identity(u.nrows())).norm()
}

fn povm_distance(a: &DiscretePovm, b: &DiscretePovm) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.outcomes()
        .iter()
        .zip(b.outcomes())
        .map(|(x, y)| {
            if x.label == y.label {
                (&x.effect - &y.effect).norm()
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

pub fn validate(path: &Path, opts: &Options) -> CmdResult {
    let m = read_manifest(path)?;
    let tol = opts.tol;
    let mut r = Report::new("validate");
    r.info("kind", m.payload.kind());
    match &m.payload {
        Payload::Povm(doc) => {
            let p = doc.into_povm(tol)?;
            let summary = p.report(tol);
            r.check(
                "normalization_residual",
                summary.normalization_residual,
                tol,
            );
            r.info("dim", p.dim()).info("outcomes", p.len());
            r.info(
                "ranks",
                summary
                    .effects
                    .iter()
                    .map(|e| json!({"label": e.label, "rank": e.rank}))
                    .collect::<Vec<_>>(),
            );
        }
        Payload::Instrument(doc) => {
            let inst = doc.into_instrument(tol)?;
            r.check("totality_residual", inst.totality_residual(), tol);
            r.info("dim", inst.dim())
                .info("kraus_ranks", inst.kraus_ranks());
            for red in inst.reductions() {
                r.info(
                    &format!("reduced {}", red.label),
                    format!("{} -> {}", red.original, red.reduced),
                );
            }
        }
        Payload::Model(doc) => {
            let model = doc.into_model(tol)?;
            r.check("unitarity_residual", unitarity_residual(&model), tol);
            r.info("system_dim", model.system_dim())
                .info("ancilla_dim", model.ancilla_dim());
        }
        Payload::Joint(doc) => {
            let j = doc.into_joint(tol)?;
            r.check("totality_residual", j.instrument().totality_residual(), tol);
            r.info("outcomes", j.pairs().len());
        }
        Payload::Chain(doc) => {
            let spec = doc.into_spec(tol)?;
            r.info("stages", spec.stages.len())
                .info("trials", spec.trials);
        }
        Payload::Multiplicity(doc) => {
            let (mult, _) = doc.into_parts(tol)?;
            r.info("k", mult.k());
        }
        Payload::Complete(doc) => {
            let first = doc.first.into_derived_instrument(tol)?;
            let second = doc.second.into_derived_instrument(tol)?;
            let joint = doc.joint.into_joint(tol)?;
            r.check("first_totality_residual", first.totality_residual(), tol);
            r.check("second_totality_residual", second.totality_residual(), tol);
            r.check(
                "joint_totality_residual",
                joint.instrument().totality_residual(),
                tol,
            );
        }
        Payload::Record(doc) => {
            let worst = doc
                .stages
                .iter()
                .map(|s| (s.counts.iter().sum::<u64>() as f64 - doc.trials as f64).abs())
                .fold(0.0, f64::max);
            r.check("count_deficit", worst, 0.0);
        }
    }
    Ok(r)
}

pub fn refine_cmd(path: &Path, opts: &Options) -> CmdResult {
    let povm = povm_of(&read_manifest(path)?, opts.tol)?;
    let refined = refine(&povm, opts.tol)?;
    let fine = as_refined_povm(&refined);
    let mut r = Report::new("refine");
    r.check(
        "relabel_residual",
        povm_distance(&relabel(&refined), &povm),
        opts.tol,
    );
    r.check(
        "normalization_residual",
        refined.normalization_residual(),
        opts.tol,
    );
    r.check(
        "biorthogonality_residual",
        refined.biorthogonality_residual(),
        opts.tol,
    );
    r.info(
        "multiplicities",
        refined
            .labels()
            .iter()
            .map(|l| json!({"label": l, "m": refined.multiplicity(l)}))
            .collect::<Vec<_>>(),
    );
    r.info("outcomes", fine.len());
    emit(&mut r, opts, Payload::Povm(PovmDoc::from_povm(&fine)))?;
    Ok(r)
}

/// Largest deviation over matrix units of the model's output from `inst`,
/// and of its outcome probabilities from the effects of `inst`.
fn model_residuals(model: &MeasurementModel, inst: &Instrument) -> Result<(f64, f64), Failure> {
    if model.system_dim() != inst.dim() {
        return Err(Failure::Check(format!(
            "DimensionMismatch: model acts on dimension {}, instrument on {}",
            model.system_dim(),
            inst.dim()
        )));
    }
    let d = inst.dim();
    let mut action = 0.0f64;
    let mut probability = 0.0f64;
    for o in inst.outcomes() {
        let effect = o.effect(d);
        for e in matrix_units(d) {
            let got = realized_action(model, &o.label, &e)?;
            let want = schrodinger_action(&o.kraus, &e, d);
            action = action.max((&got - want).norm());
            probability = probability.max((trace(&got) - trace(&(&e * &effect))).norm());
        }
    }
    Ok((action, probability))
}

pub fn dilate(path: &Path, opts: &Options) -> CmdResult {
    let inst = instrument_of(&read_manifest(path)?, opts.tol)?;
    let model = minimal_dilation(&inst, None)?;
    let (action, probability) = model_residuals(&model, &inst)?;
    let mut r = Report::new("dilate");
    r.check("unitarity_residual", unitarity_residual(&model), opts.tol);
    r.check("reproducibility_residual", probability, opts.tol);
    r.check("instrument_residual", action, opts.tol);
    r.info("ancilla_dim", model.ancilla_dim());
    emit(&mut r, opts, Payload::Model(ModelDoc::from_model(&model)))?;
    Ok(r)
}

pub fn compose(first: &Path, second: &Path, opts: &Options) -> CmdResult {
    let a = instrument_of(&read_manifest(first)?, opts.tol)?;
    let b = instrument_of(&read_manifest(second)?, opts.tol)?;
    let j = compose_sequential(&a, &b)?;
    let mut r = Report::new("compose");
    r.check(
        "totality_residual",
        j.instrument().totality_residual(),
        opts.tol,
    );
    r.check(
        "first_margin_residual",
        povm_distance(&margin_first(&j), &associated_povm(&a)),
        opts.tol,
    );
    r.info("outcomes", j.pairs().len());
    emit(&mut r, opts, Payload::Joint(JointDoc::from_joint(&j)))?;
    Ok(r)
}

/// Largest effect norm of joint outcomes `(i, k)` that must never occur,
/// and the deviation of the others from `|d_ik⟩⟨d_ik|`.
fn joint_vs_refined(j: &JointInstrument, refined: &RefinedPovm) -> (f64, f64) {
    let joint = joint_povm(j);
    let mut spurious = 0.0f64;
    let mut mismatch = 0.0f64;
    for ((a, b), o) in j.pairs().iter().zip(joint.outcomes()) {
        let k: usize = b.parse().unwrap_or(0);
        match refined.entry(a, k) {
            Some(e) => mismatch = mismatch.max((&o.effect - e.effect()).norm()),
            None => spurious = spurious.max(o.effect.norm()),
        }
    }
    for e in refined.entries() {
        if joint
            .effect(&joint_label(&e.label, &e.k.to_string()))
            .is_none()
        {
            mismatch = f64::INFINITY;
        }
    }
    (mismatch, spurious)
}

fn top_eigenvector(n: &CMatrix, tol: f64) -> Result<CVector, Failure> {
    Ok(hermitian_eig(n, tol)?.vector(0))
}

pub fn complete(povm_path: &Path, mult_path: &Path, opts: &Options) -> CmdResult {
    let povm = povm_of(&read_manifest(povm_path)?, opts.tol)?;
    let (mult, phi) = match read_manifest(mult_path)?.payload {
        Payload::Multiplicity(doc) => doc.into_parts(opts.tol)?,
        other => return Err(wrong_kind("multiplicity", &other)),
    };
    let phi = match phi {
        Some(p) => p,
        None => mult
            .projections()
            .iter()
            .map(|n| top_eigenvector(n, opts.tol))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let refined = refine(&povm, opts.tol)?;
    let cm = complete_measurement(&refined, &mult, &phi, opts.tol)?;
    let condition = verify_refinement_condition(&cm.first, &mult, &refined, opts.tol)?;
    let (mismatch, spurious) = joint_vs_refined(&cm.joint, &refined);
    let mut r = Report::new("complete");
    r.check(
        "refinement_condition_residual",
        condition.max_residual,
        opts.tol,
    );
    r.check("refined_povm_residual", mismatch, opts.tol);
    r.check("null_branch_effect", spurious, opts.tol);
    r.info("k", mult.k())
        .info("max_multiplicity", refined.max_multiplicity());
    emit(
        &mut r,
        opts,
        Payload::Complete(CompleteDoc::from_complete(&cm)),
    )?;
    Ok(r)
}

pub fn simulate(path: &Path, opts: &Options) -> CmdResult {
    let doc = match read_manifest(path)?.payload {
        Payload::Chain(doc) => doc,
        other => return Err(wrong_kind("chain", &other)),
    };
    let mut spec = doc.into_spec(opts.tol)?;
    if let Some(seed) = opts.seed {
        spec.seed = seed;
    }
    if let Some(trials) = opts.trials {
        spec.trials = trials;
    }
    spec.validate()?;
    let record = run_chain(&spec)?;
    let analytic = analytic_sequence_probabilities(&spec)?;
    let cmp = empirical_vs_analytic(&record.joint_table(), &analytic, opts.z);
    let mut r = Report::new("simulate");
    r.check("max_z", cmp.max_z, opts.z);
    r.info("trials", spec.trials).info("seed", spec.seed);
    r.info(
        "sequences",
        cmp.rows
            .iter()
            .map(|row| json!({"label": row.label, "count": row.count, "observed": row.observed, "expected": row.expected, "z": row.z}))
            .collect::<Vec<_>>(),
    );
    if let Some(csv) = &opts.csv {
        write_atomic(csv, &record.to_csv()?)?;
        r.info("csv", csv.display().to_string());
    }
    if let Some(out) = &opts.out {
        write_atomic(
            out,
            &Manifest::new(Payload::Record(RecordDoc::from_record(&record))).to_json(),
        )?;
        r.output = Some(out.display().to_string());
    }
    Ok(r)
}

/// Multiplicity projections recovered from the Lüders second stage.
fn multiplicity_from_second(second: &Instrument, tol: f64) -> Result<MultiplicityPvm, Failure> {
    let d = second.dim();
    let mut projections: Vec<(usize, CMatrix)> = Vec::new();
    for o in second.outcomes() {
        let k: usize = o.label.parse().map_err(|_| {
            Failure::Input(format!(
                "second-stage label {:?} is not an integer",
                o.label
            ))
        })?;
        if k > 0 {
            projections.push((k, o.effect(d)));
        }
    }
    projections.sort_by_key(|(k, _)| *k);
    if projections
        .iter()
        .enumerate()
        .any(|(i, (k, _))| *k != i + 1)
    {
        return Err(Failure::Input("second-stage labels must be 0..K".into()));
    }
    Ok(MultiplicityPvm::new(
        projections.into_iter().map(|(_, p)| p).collect(),
        tol,
    )?)
}

pub fn verify(path: &Path, reference: Option<&Path>, opts: &Options) -> CmdResult {
    let m = read_manifest(path)?;
    let tol = opts.tol;
    let reference = reference
        .map(|p| instrument_of(&read_manifest(p)?, tol))
        .transpose()?;
    let mut r = Report::new("verify");
    r.info("kind", m.payload.kind());
    match &m.payload {
        Payload::Model(doc) => {
            let model = doc.into_model(tol)?;
            let extracted = model.to_instrument();
            r.check("unitarity_residual", unitarity_residual(&model), tol);
            r.check("totality_residual", extracted.totality_residual(), tol);
            let target = reference.as_ref().unwrap_or(&extracted);
            let (action, probability) = model_residuals(&model, target)?;
            r.check("reproducibility_residual", probability, tol);
            r.check("instrument_residual", action, tol);
        }
        Payload::Joint(doc) => {
            let j = doc.into_joint(tol)?;
            r.check("totality_residual", j.instrument().totality_residual(), tol);
            if let Some(first) = &reference {
                r.check(
                    "first_margin_residual",
                    povm_distance(&margin_first(&j), &associated_povm(first)),
                    tol,
                );
            }
        }
        Payload::Complete(doc) => {
            let first = doc.first.into_derived_instrument(tol)?;
            let second = doc.second.into_derived_instrument(tol)?;
            let joint = doc.joint.into_joint(tol)?;
            let mult = multiplicity_from_second(&second, tol)?;
            let effects = associated_povm(&first)
                .outcomes()
                .iter()
                .map(|o| (o.label.clone(), o.effect.clone()))
                .collect();
            let refined = refine(&validate_povm(effects, tol)?, tol)?;
            let condition = verify_refinement_condition(&first, &mult, &refined, tol)?;
            let recomposed = compose_sequential(&first, &second)?;
            let (mismatch, spurious) = joint_vs_refined(&joint, &refined);
            r.check("refinement_condition_residual", condition.max_residual, tol);
            r.check(
                "joint_consistency_residual",
                instrument_distance(joint.instrument(), recomposed.instrument())?,
                tol,
            );
            r.check("refined_povm_residual", mismatch, tol);
            r.check("null_branch_effect", spurious, tol);
        }
        other => {
            return Err(Failure::Input(format!(
                "cannot verify a {} file",
                other.kind()
            )))
        }
    }
    Ok(r)
}
