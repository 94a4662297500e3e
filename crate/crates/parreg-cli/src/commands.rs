//! Subcommand bodies. Each validates its config, runs the library, writes
//! reports into the output directory, and returns what it read and wrote so
//! the caller can assemble `run_manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_rational::BigRational;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use parreg::certifier::{certify_regularity, scan_candidates};
use parreg::container;
use parreg::cover::{self, fixtures, PointSet4D};
use parreg::error::{Error, Result};
use parreg::field::{generate_beltrami, generate_constant, generate_near_singular, SpaceTimeField};
use parreg::functionals::{eval_batch, FieldQuadrature, Point4, Query};
use parreg::lemmas::{verify_interpolation, verify_pressure, LemmaReport};
use parreg::schedule::{check_schedule_identities, make_schedule, ParameterSchedule};
use parreg::solver::{self, InitialCondition};

use crate::config::*;

struct Outcome {
    outputs: Vec<String>,
    inputs: Vec<PathBuf>,
    parallelism: usize,
}

impl Outcome {
    fn serial(outputs: Vec<String>, inputs: Vec<PathBuf>) -> Self {
        Outcome { outputs, inputs, parallelism: 1 }
    }
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    version: String,
    config_sha256: String,
    input_sha256: BTreeMap<String, String>,
    outputs: Vec<String>,
    parallelism: usize,
    wall_ms: u64,
}

pub fn run(subcommand: &str, config_path: &Path, out: &Path) -> Result<()> {
    let raw = fs::read(config_path)?;
    fs::create_dir_all(out)?;
    let started = Instant::now();
    let outcome = dispatch(subcommand, &raw, out)?;
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hex::encode(Sha256::digest(&raw)),
        input_sha256: checksum_inputs(&outcome.inputs)?,
        outputs: outcome.outputs,
        parallelism: outcome.parallelism,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    write_json(&out.join("run_manifest.json"), &manifest)?;
    Ok(())
}

fn dispatch(subcommand: &str, raw: &[u8], out: &Path) -> Result<Outcome> {
    match subcommand {
        "generate" => cmd_generate(&parse(raw)?, out),
        "solve" => cmd_solve(&parse(raw)?, out),
        "functionals" => cmd_functionals(&parse(raw)?, out),
        "certify" => cmd_certify(&parse(raw)?, out),
        "scan" => cmd_scan(&parse(raw)?, out),
        "cover" => cmd_cover(&parse(raw)?, out),
        "dimension" => cmd_dimension(&parse(raw)?, out),
        "verify-lemmas" => cmd_verify_lemmas(&parse(raw)?, out),
        other => Err(Error::Internal(format!("unknown subcommand {other}"))),
    }
}

fn parse<T: DeserializeOwned>(raw: &[u8]) -> Result<T> {
    serde_json::from_slice(raw).map_err(|e| Error::Config(format!("config: {e}")))
}

fn cmd_generate(cfg: &GenerateConfig, out: &Path) -> Result<Outcome> {
    let field = build_field(&cfg.grid, &cfg.kind)?;
    container::store(&field, &out.join(&cfg.name))?;
    Ok(Outcome::serial(container_outputs(&cfg.name, &field), vec![]))
}

fn build_field(grid: &parreg::grid::Grid, kind: &FieldKind) -> Result<SpaceTimeField> {
    match kind {
        FieldKind::Constant { u, p } => generate_constant(grid, *u, *p),
        FieldKind::Beltrami { a, b, c } => generate_beltrami(grid, *a, *b, *c),
        FieldKind::NearSingular { center, exponent } => {
            generate_near_singular(grid, center.point(), *exponent)
        }
    }
}

fn container_outputs(name: &str, field: &SpaceTimeField) -> Vec<String> {
    let mut v = vec![
        format!("{name}/header.json"),
        format!("{name}/u.bin"),
        format!("{name}/p.bin"),
    ];
    if field.b.is_some() {
        v.push(format!("{name}/b.bin"));
    }
    v
}

fn cmd_solve(cfg: &SolveConfig, out: &Path) -> Result<Outcome> {
    let field = solver::run(&cfg.solver)?;
    container::store(&field, &out.join(&cfg.name))?;
    let inputs = match &cfg.solver.initial_condition {
        InitialCondition::FromFile { path } => vec![path.clone()],
        _ => vec![],
    };
    Ok(Outcome::serial(container_outputs(&cfg.name, &field), inputs))
}

fn cmd_functionals(cfg: &FunctionalsConfig, out: &Path) -> Result<Outcome> {
    if cfg.parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    let mut inputs = vec![cfg.field.clone()];
    let mut queries = cfg.queries.clone();
    if let Some(path) = &cfg.queries_path {
        if !queries.is_empty() {
            return Err(Error::Config(
                "give either inline queries or queries_path, not both".into(),
            ));
        }
        let raw = fs::read(path)?;
        queries = serde_json::from_slice::<Vec<Query>>(&raw)
            .map_err(|e| Error::Config(format!("queries {}: {e}", path.display())))?;
        inputs.push(path.clone());
    }
    if queries.is_empty() {
        return Err(Error::Config("no queries given".into()));
    }
    let field = container::load(&cfg.field)?;
    let quad = FieldQuadrature::new(&field);
    let rows = eval_batch(&quad, &queries, cfg.mode, cfg.mhd, cfg.parallelism)?;
    write_csv(&out.join("functionals.csv"), &rows)?;
    Ok(Outcome {
        outputs: vec!["functionals.csv".into()],
        inputs,
        parallelism: cfg.parallelism,
    })
}

fn cmd_certify(cfg: &CertifyConfig, out: &Path) -> Result<Outcome> {
    let field = container::load(&cfg.field)?;
    let quad = FieldQuadrature::new(&field);
    let mut schedule = make_schedule(cfg.gamma, cfg.constants)?;
    if let Some(rho0) = cfg.rho0 {
        schedule = schedule.with_rho0(rho0)?;
    }
    let report = certify_regularity(&quad, &cfg.z.point(), cfg.rho, &schedule, cfg.mhd)?;
    write_json(&out.join("certificate.json"), &report)?;
    Ok(Outcome::serial(vec!["certificate.json".into()], vec![cfg.field.clone()]))
}

fn cmd_scan(cfg: &ScanConfig, out: &Path) -> Result<Outcome> {
    let mut points: Vec<Point4> = cfg.points.iter().map(EventSpec::point).collect();
    if let Some(lattice) = &cfg.lattice {
        points.extend(lattice.points()?);
    }
    if points.is_empty() {
        return Err(Error::Config("no events to scan: give points or a lattice".into()));
    }
    let field = container::load(&cfg.field)?;
    let quad = FieldQuadrature::new(&field);
    let rows = scan_candidates(&quad, &points, &cfg.radii, &cfg.constants, cfg.mhd)?;
    write_csv(&out.join("scan.csv"), &rows)?;
    let candidates: Vec<[f64; 4]> = rows
        .iter()
        .filter(|row| row.candidate)
        .map(|row| [row.x, row.y, row.z, row.t])
        .collect();
    let set = PointSet4D::new(candidates)?;
    set.to_csv(fs::File::create(out.join("candidates.csv"))?)?;
    Ok(Outcome::serial(
        vec!["scan.csv".into(), "candidates.csv".into()],
        vec![cfg.field.clone()],
    ))
}

fn load_points(source: &PointSource, inputs: &mut Vec<PathBuf>) -> Result<PointSet4D> {
    match source {
        PointSource::Csv { path } => {
            inputs.push(path.clone());
            PointSet4D::from_csv(fs::File::open(path)?)
        }
        PointSource::LatticeUniform { n } => Ok(fixtures::lattice_uniform(*n)),
        PointSource::TimeSegment { n } => Ok(fixtures::time_segment(*n)),
        PointSource::SpaceSegment { n } => Ok(fixtures::space_segment(*n)),
        PointSource::ReciprocalSequence { n } => Ok(fixtures::reciprocal_sequence(*n)),
        PointSource::CantorTime { level } => Ok(fixtures::cantor_time(*level)),
        PointSource::CantorSpace { level } => Ok(fixtures::cantor_space(*level)),
    }
}

#[derive(Serialize)]
struct CoverReport {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    counts: Vec<cover::CoverResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hausdorff: Option<cover::HausdorffEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vitali: Option<cover::VitaliFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<cover::BudgetReport>,
}

#[derive(Serialize)]
struct LadderRow {
    r: f64,
    count: usize,
}

fn cmd_cover(cfg: &CoverConfig, out: &Path) -> Result<Outcome> {
    if cfg.box_scales.is_empty()
        && cfg.hausdorff.is_none()
        && cfg.vitali.is_none()
        && cfg.budget.is_none()
    {
        return Err(Error::Config(
            "nothing to do: give box_scales, hausdorff, vitali, or budget".into(),
        ));
    }
    let mut inputs = Vec::new();
    let set = load_points(&cfg.points, &mut inputs)?;
    let mut counts = Vec::with_capacity(cfg.box_scales.len());
    for &r in &cfg.box_scales {
        counts.push(cover::box_count(&set, r, cfg.with_centers)?);
    }
    let hausdorff = match &cfg.hausdorff {
        Some(h) => Some(cover::hausdorff_upper(&set, h.alpha, &h.deltas)?),
        None => None,
    };
    let vitali = match &cfg.vitali {
        Some(v) => Some(cover::vitali_disjoint(&set, v.r)?),
        None => None,
    };
    let budget = match &cfg.budget {
        Some(b) => {
            let field = container::load(&b.field)?;
            inputs.push(b.field.clone());
            let quad = FieldQuadrature::new(&field);
            let family = cover::vitali_disjoint(&set, b.r)?;
            let centers: Vec<Point4> =
                family.centers.iter().map(|c| ([c[0], c[1], c[2]], c[3])).collect();
            Some(cover::covering_budget(&quad, &centers, b.r, b.epsilon, b.gamma, b.mhd)?)
        }
        None => None,
    };
    let mut outputs = vec!["cover.json".into()];
    if !counts.is_empty() {
        let ladder: Vec<LadderRow> =
            counts.iter().map(|c| LadderRow { r: c.r, count: c.count }).collect();
        write_csv(&out.join("cover_counts.csv"), &ladder)?;
        outputs.push("cover_counts.csv".into());
    }
    write_json(&out.join("cover.json"), &CoverReport { counts, hausdorff, vitali, budget })?;
    Ok(Outcome::serial(outputs, inputs))
}

fn cmd_dimension(cfg: &DimensionConfig, out: &Path) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let set = load_points(&cfg.points, &mut inputs)?;
    let est = cover::estimate_minkowski(&set, &cfg.radii)?;
    let ladder: Vec<LadderRow> = est
        .radii
        .iter()
        .zip(&est.counts)
        .map(|(&r, &count)| LadderRow { r, count })
        .collect();
    write_csv(&out.join("dimension.csv"), &ladder)?;
    write_json(&out.join("dimension.json"), &est)?;
    Ok(Outcome::serial(vec!["dimension.json".into(), "dimension.csv".into()], inputs))
}

/// Exponent bookkeeping for one rational gamma, stringified exactly.
#[derive(Serialize)]
struct IdentityRow {
    gamma: String,
    n: u64,
    alpha: String,
    beta: String,
    decay_exponent: String,
    gap_exponent: String,
}

#[derive(Default, Serialize)]
struct LemmasReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    interpolation: Option<LemmaReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pressure: Option<LemmaReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    identities: Vec<IdentityRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<ParameterSchedule>,
}

#[derive(Serialize)]
struct SampleRow {
    lemma: &'static str,
    r: f64,
    theta: f64,
    lhs: f64,
    rhs: f64,
    k_required: f64,
    resolution_limited: bool,
}

fn sample_rows(lemma: &'static str, report: &LemmaReport, rows: &mut Vec<SampleRow>) {
    for s in &report.samples {
        rows.push(SampleRow {
            lemma,
            r: s.r,
            theta: s.theta,
            lhs: s.lhs,
            rhs: s.rhs,
            k_required: s.k_required,
            resolution_limited: s.resolution_limited,
        });
    }
}

fn cmd_verify_lemmas(cfg: &VerifyLemmasConfig, out: &Path) -> Result<Outcome> {
    let needs_field = cfg.interpolation.is_some() || cfg.pressure.is_some();
    if !needs_field && cfg.identities_gamma.is_empty() && cfg.schedule_gamma.is_none() {
        return Err(Error::Config(
            "nothing to do: give interpolation, pressure, identities_gamma, or schedule_gamma"
                .into(),
        ));
    }
    let mut inputs = Vec::new();
    let mut report = LemmasReport::default();
    let mut rows = Vec::new();
    if needs_field {
        let path = cfg
            .field
            .as_ref()
            .ok_or_else(|| Error::Config("inequality probes need a field path".into()))?;
        let z = cfg
            .z
            .as_ref()
            .ok_or_else(|| Error::Config("inequality probes need an event z".into()))?
            .point();
        let field = container::load(path)?;
        inputs.push(path.clone());
        let quad = FieldQuadrature::new(&field);
        if let Some(probe) = &cfg.interpolation {
            let rep = verify_interpolation(&quad, &z, &probe.pairs, probe.k)?;
            sample_rows("interpolation", &rep, &mut rows);
            report.interpolation = Some(rep);
        }
        if let Some(probe) = &cfg.pressure {
            let rep = verify_pressure(&quad, &z, &probe.pairs, probe.k)?;
            sample_rows("pressure", &rep, &mut rows);
            report.pressure = Some(rep);
        }
    }
    for text in &cfg.identities_gamma {
        let gamma = BigRational::from_str(text)
            .map_err(|e| Error::Config(format!("gamma {text}: {e}")))?;
        let ids = check_schedule_identities(&gamma)?;
        report.identities.push(IdentityRow {
            gamma: gamma.to_string(),
            n: ids.n,
            alpha: ids.alpha.to_string(),
            beta: ids.beta.to_string(),
            decay_exponent: ids.decay_exponent.to_string(),
            gap_exponent: ids.gap_exponent.to_string(),
        });
    }
    if let Some(gamma) = cfg.schedule_gamma {
        report.schedule = Some(make_schedule(gamma, cfg.constants)?);
    }
    let mut outputs = vec!["lemmas.json".into()];
    if !rows.is_empty() {
        write_csv(&out.join("lemma_samples.csv"), &rows)?;
        outputs.push("lemma_samples.csv".into());
    }
    write_json(&out.join("lemmas.json"), &report)?;
    Ok(Outcome::serial(outputs, inputs))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn checksum_inputs(inputs: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for path in inputs {
        let mut hasher = Sha256::new();
        hash_path(path, &mut hasher)?;
        map.insert(path.display().to_string(), hex::encode(hasher.finalize()));
    }
    Ok(map)
}

/// Hash a file's bytes, or a directory's entries recursively in name order.
fn hash_path(path: &Path, hasher: &mut Sha256) -> Result<()> {
    if fs::metadata(path)?.is_dir() {
        let mut entries =
            fs::read_dir(path)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            hasher.update(entry.file_name().as_encoded_bytes());
            hasher.update([0]);
            hash_path(&entry.path(), hasher)?;
        }
    } else {
        hasher.update(fs::read(path)?);
    }
    Ok(())
}
