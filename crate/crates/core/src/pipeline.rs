//! Batch pipeline: a flat `key=value` configuration, stages run in order,
//! and a validation report plus histograms written after every stage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::{json, Value};
use thiserror::Error;

use crate::aed::{refine, RefineParams};
use crate::amr::{amr_step, AmrParams};
use crate::gen;
use crate::geom::{self, Point3};
use crate::indicators::{
    compute_indicators, ConstantField, FieldOracle, LinearField, Material, PhysicalParams,
    PiecewiseConstant, PlaneWave, C3,
};
use crate::io::{self, IoError};
use crate::mesh::{
    aspect_ratio, dihedral_histogram, quality, quality_histogram, validate, Histogram, SizeMeasure,
    TetMesh, ValidationReport,
};
use crate::sliver::{
    count_below, detect_slivers, min_dihedral, pad_locked, remove_slivers, PadParams,
    RemovalParams, SliverClass, THETA_HIGH, THETA_LOW,
};
use crate::smooth::{classify_boundary_vertices, optimize, smooth, ElasticConfig, Reference};
use crate::surface::{eliminate_obtuse, SurfaceMesh};
use crate::tetra::{tetrahedralize_points, tetrahedralize_surface};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("stage {stage}: invariant violation: {msg}")]
    Invariant { stage: String, msg: String },
    #[error("stage {stage}: {msg}")]
    Stage { stage: String, msg: String },
}

impl PipelineError {
    /// 2 parse error, 3 invariant violation, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Io(e) if e.is_input() => 2,
            PipelineError::Io(IoError::Mesh(_)) => 3,
            PipelineError::Io(_) => 4,
            PipelineError::Invariant { .. } => 3,
            PipelineError::Stage { .. } => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    SurfacePrep,
    Tetrahedralize,
    RefineAed,
    SliverPass,
    Smooth,
    Indicators,
    AmrStep,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SurfacePrep,
        Stage::Tetrahedralize,
        Stage::RefineAed,
        Stage::SliverPass,
        Stage::Smooth,
        Stage::Indicators,
        Stage::AmrStep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SurfacePrep => "surface-prep",
            Stage::Tetrahedralize => "tetrahedralize",
            Stage::RefineAed => "refine-aed",
            Stage::SliverPass => "sliver-pass",
            Stage::Smooth => "smooth",
            Stage::Indicators => "indicators",
            Stage::AmrStep => "amr-step",
        }
    }

    fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Surface(PathBuf),
    Points(PathBuf),
    Mesh(PathBuf),
    /// Unit box surface with `n` cells per side and `count` perturbed
    /// vertices.
    BoxSurface { n: usize, count: usize, seed: u64 },
    RotatedLattice { n: usize, axis: Point3, angle: f64 },
    RandomPoints { n: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum OracleSpec {
    Constant(C3),
    PlaneWave { p: C3, k: Point3 },
    Linear { e0: C3, a: [C3; 3] },
    Random { seed: u64 },
}

impl OracleSpec {
    fn build(&self, mesh: &TetMesh) -> Box<dyn FieldOracle> {
        match self {
            OracleSpec::Constant(e) => Box::new(ConstantField(*e)),
            OracleSpec::PlaneWave { p, k } => Box::new(PlaneWave { p: *p, k: *k }),
            OracleSpec::Linear { e0, a } => Box::new(LinearField { e0: *e0, a: *a }),
            OracleSpec::Random { seed } => Box::new(PiecewiseConstant::random(mesh, *seed)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliverPassParams {
    pub removal: RemovalParams,
    /// Pad blocked slivers away from the boundary before optimizing.
    pub pad: bool,
    pub pad_params: PadParams,
    /// Dihedral target of the flip and polish rounds.
    pub target_dihedral: f64,
    pub rounds: usize,
}

impl Default for SliverPassParams {
    fn default() -> Self {
        SliverPassParams {
            removal: RemovalParams::default(),
            pad: true,
            pad_params: PadParams::default(),
            target_dihedral: 35.0,
            rounds: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub input: Input,
    pub stages: Vec<Stage>,
    pub obtuse_threshold: f64,
    pub obtuse_passes: usize,
    /// Flatness tolerance (degrees) for grouping facets into patches.
    pub feature_angle: f64,
    pub refine: RefineParams,
    pub sliver: SliverPassParams,
    pub smooth: ElasticConfig,
    pub oracle: OracleSpec,
    pub physics: PhysicalParams,
    pub amr: AmrParams,
    pub output: PathBuf,
    pub name: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: Input::BoxSurface {
                n: 2,
                count: 0,
                seed: 0,
            },
            stages: vec![Stage::Tetrahedralize],
            obtuse_threshold: 150.0,
            obtuse_passes: 4,
            feature_angle: 5.0,
            refine: RefineParams::default(),
            sliver: SliverPassParams::default(),
            smooth: ElasticConfig::default(),
            oracle: OracleSpec::PlaneWave {
                p: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
                k: Point3::new(0.0, 0.0, 20.94),
            },
            physics: PhysicalParams::default(),
            amr: AmrParams::default(),
            output: PathBuf::from("out"),
            name: "mesh".into(),
        }
    }
}

struct Entry<'a> {
    key: &'a str,
    raw: &'a str,
    line: usize,
}

impl Entry<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> PipelineError {
        PipelineError::Config {
            line: self.line,
            msg: format!("{}: {msg}", self.key),
        }
    }

    fn f64(&self) -> Result<f64, PipelineError> {
        let x: f64 = self.raw.parse().map_err(|_| self.err(format!("expected a number, got {:?}", self.raw)))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self.err("must be finite"))
        }
    }

    fn usize(&self) -> Result<usize, PipelineError> {
        self.raw.parse().map_err(|_| self.err(format!("expected a count, got {:?}", self.raw)))
    }

    fn u64(&self) -> Result<u64, PipelineError> {
        self.raw.parse().map_err(|_| self.err(format!("expected an integer, got {:?}", self.raw)))
    }

    fn bool(&self) -> Result<bool, PipelineError> {
        match self.raw {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.err(format!("expected true or false, got {:?}", self.raw))),
        }
    }

    fn list(&self) -> Result<Vec<f64>, PipelineError> {
        self.raw
            .split(',')
            .map(|s| {
                let x: f64 = s.trim().parse().map_err(|_| self.err(format!("bad number {s:?}")))?;
                x.is_finite().then_some(x).ok_or_else(|| self.err("must be finite"))
            })
            .collect()
    }

    fn point(&self) -> Result<Point3, PipelineError> {
        match self.list()?[..] {
            [x, y, z] => Ok(Point3::new(x, y, z)),
            _ => Err(self.err("expected three comma-separated numbers")),
        }
    }

    fn c3(&self) -> Result<C3, PipelineError> {
        let p = self.point()?;
        Ok([Complex64::new(p.x, 0.0), Complex64::new(p.y, 0.0), Complex64::new(p.z, 0.0)])
    }
}

impl PipelineConfig {
    /// Parse configuration text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<PipelineConfig, PipelineError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, l) in text.lines().enumerate() {
            let l = l.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or(PipelineError::Config {
                line: i + 1,
                msg: format!("expected key=value, got {l:?}"),
            })?;
            if entries.insert(k.trim().to_owned(), (i + 1, v.trim().to_owned())).is_some() {
                return Err(PipelineError::Config {
                    line: i + 1,
                    msg: format!("duplicate key {:?}", k.trim()),
                });
            }
        }
        let mut c = PipelineConfig::default();
        let val = |k: &'static str| {
            entries.get(k).map(|(line, raw)| Entry {
                key: k,
                raw: raw.as_str(),
                line: *line,
            })
        };
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_owned()
            } else {
                base_dir.join(p)
            }
        };

        let kind = val("input.kind");
        let kind_name = kind.as_ref().map_or("box-surface", |v| v.raw);
        let path = val("input.path").map(|v| resolve(v.raw));
        let need_path = |p: Option<PathBuf>| {
            p.ok_or(PipelineError::Config {
                line: kind.as_ref().map_or(0, |v| v.line),
                msg: format!("input.kind={kind_name} needs input.path"),
            })
        };
        let n = val("input.n").map(|v| v.usize()).transpose()?;
        let seed = val("input.seed").map(|v| v.u64()).transpose()?.unwrap_or(0);
        c.input = match kind_name {
            "surface" => Input::Surface(need_path(path)?),
            "points" => Input::Points(need_path(path)?),
            "mesh" => Input::Mesh(need_path(path)?),
            "box-surface" => Input::BoxSurface {
                n: n.unwrap_or(2),
                count: val("input.count").map(|v| v.usize()).transpose()?.unwrap_or(0),
                seed,
            },
            "rotated-lattice" => Input::RotatedLattice {
                n: n.unwrap_or(10),
                axis: val("input.axis").map(|v| v.point()).transpose()?.unwrap_or(Point3::new(1.0, 2.0, 3.0)),
                angle: val("input.angle").map(|v| v.f64()).transpose()?.unwrap_or(0.4),
            },
            "random-points" => Input::RandomPoints {
                n: n.unwrap_or(1000),
                seed,
            },
            other => return Err(kind.unwrap().err(format!("unknown input kind {other:?}"))),
        };

        if let Some(v) = val("stages") {
            c.stages.clear();
            for s in v.raw.split(',').map(str::trim) {
                let (name, times) = match s.split_once('*') {
                    Some((a, b)) => (a.trim(), b.trim().parse::<usize>().map_err(|_| v.err(format!("bad repeat in {s:?}")))?),
                    None => (s, 1),
                };
                let st = Stage::parse(name).ok_or_else(|| v.err(format!("unknown stage {name:?}")))?;
                c.stages.extend(std::iter::repeat_n(st, times));
            }
        }

        macro_rules! set {
            ($key:literal, $field:expr, $conv:ident) => {
                if let Some(v) = val($key) {
                    $field = v.$conv()?;
                }
            };
        }
        set!("surface.obtuse_threshold", c.obtuse_threshold, f64);
        set!("surface.max_passes", c.obtuse_passes, usize);
        set!("features.angle_tol", c.feature_angle, f64);

        set!("refine.quality_bound", c.refine.quality_bound, f64);
        set!("refine.anisotropy", c.refine.anisotropy, f64);
        set!("refine.size_bound", c.refine.size_bound, f64);
        set!("refine.chordal_error", c.refine.chordal_error, f64);
        set!("refine.angular_resolution", c.refine.angular_resolution, f64);
        set!("refine.hidden_splits", c.refine.hidden_splits, bool);
        set!("refine.cap_candidates", c.refine.cap_candidates, bool);
        set!("refine.optimize_rounds", c.refine.optimize_rounds, usize);
        set!("refine.max_growth", c.refine.max_growth, f64);
        if let Some(v) = val("refine.size_measure") {
            c.refine.size_measure = match v.raw {
                "regular-volume" => SizeMeasure::RegularVolume,
                "max-edge" => SizeMeasure::MaxEdge,
                _ => return Err(v.err("expected regular-volume or max-edge")),
            };
        }

        set!("sliver.theta_low", c.sliver.removal.theta_low, f64);
        set!("sliver.theta_high", c.sliver.removal.theta_high, f64);
        set!("sliver.anisotropy", c.sliver.removal.anisotropy, f64);
        set!("sliver.max_passes", c.sliver.removal.max_passes, usize);
        set!("sliver.pad", c.sliver.pad, bool);
        set!("sliver.pad_fraction", c.sliver.pad_params.pad_fraction, f64);
        set!("sliver.target_dihedral", c.sliver.target_dihedral, f64);
        set!("sliver.rounds", c.sliver.rounds, usize);

        set!("smooth.theta", c.smooth.theta, f64);
        set!("smooth.max_iters", c.smooth.max_iters, usize);
        set!("smooth.step_tol", c.smooth.step_tol, f64);
        if let Some(v) = val("smooth.delta") {
            c.smooth.delta = Some(v.f64()?);
        }
        if let Some(v) = val("smooth.reference") {
            c.smooth.reference = match v.raw {
                "local-mean" => Reference::LocalMean,
                "current" => Reference::Current,
                s => match s.strip_prefix("uniform:").and_then(|x| x.parse::<f64>().ok()) {
                    Some(x) if x > 0.0 => Reference::Uniform(x),
                    _ => return Err(v.err("expected local-mean, current or uniform:<volume>")),
                },
            };
        }

        let okind = val("oracle.kind");
        let p = val("oracle.p").map(|v| v.c3()).transpose()?;
        let k = val("oracle.k").map(|v| v.point()).transpose()?;
        let one = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        if let Some(v) = &okind {
            c.oracle = match v.raw {
                "constant" => OracleSpec::Constant(p.unwrap_or(one)),
                "plane_wave" | "plane-wave" => OracleSpec::PlaneWave {
                    p: p.unwrap_or(one),
                    k: k.unwrap_or(Point3::new(0.0, 0.0, 20.94)),
                },
                "linear" => {
                    let a = val("oracle.a").map(|v| v.list()).transpose()?.unwrap_or(vec![0.0; 9]);
                    if a.len() != 9 {
                        return Err(val("oracle.a").unwrap().err("expected nine numbers, row major"));
                    }
                    let row = |r: usize| [0, 1, 2].map(|j| Complex64::new(a[3 * r + j], 0.0));
                    OracleSpec::Linear {
                        e0: p.unwrap_or(one),
                        a: [row(0), row(1), row(2)],
                    }
                }
                "random" => OracleSpec::Random {
                    seed: val("oracle.seed").map(|v| v.u64()).transpose()?.unwrap_or(0),
                },
                other => return Err(v.err(format!("unknown oracle {other:?}"))),
            };
        }

        set!("physics.omega", c.physics.omega, f64);
        set!("physics.eps0", c.physics.eps0, f64);
        set!("physics.mu0", c.physics.mu0, f64);
        let eps_r = val("physics.eps_r").map(|v| v.list()).transpose()?;
        let eps_i = val("physics.eps_r_imag").map(|v| v.list()).transpose()?;
        let mu_r = val("physics.mu_r").map(|v| v.list()).transpose()?;
        if eps_r.is_some() || mu_r.is_some() {
            let n = [&eps_r, &eps_i, &mu_r].iter().filter_map(|l| l.as_ref().map(Vec::len)).max().unwrap();
            let pick = |l: &Option<Vec<f64>>, i: usize, d: f64| {
                l.as_ref().map_or(d, |l| l.get(i).or(l.last()).copied().unwrap_or(d))
            };
            c.physics.materials = (0..n)
                .map(|i| Material {
                    eps_r: Complex64::new(pick(&eps_r, i, 1.0), pick(&eps_i, i, 0.0)),
                    mu_r: pick(&mu_r, i, 1.0),
                })
                .collect();
        }

        set!("amr.gamma", c.amr.policy.gamma, f64);
        set!("amr.gradation", c.amr.policy.gradation, f64);
        set!("amr.budget_fraction", c.amr.budget_fraction, f64);
        set!("amr.anisotropy", c.amr.anisotropy, f64);
        set!("amr.optimize", c.amr.optimize, bool);
        set!("amr.smooth_fraction", c.amr.smooth_fraction, f64);
        set!("amr.convergence_tol", c.amr.convergence_tol, f64);

        if let Some(v) = val("output.dir") {
            c.output = resolve(v.raw);
        } else {
            c.output = base_dir.join("out");
        }
        if let Some(v) = val("output.name") {
            if v.raw.is_empty() || v.raw.contains(['/', '\\']) {
                return Err(v.err("must be a plain file name"));
            }
            c.name = v.raw.to_owned();
        }

        const KNOWN: &[&str] = &[
            "input.kind", "input.path", "input.n", "input.seed", "input.count", "input.axis", "input.angle",
            "stages", "surface.obtuse_threshold", "surface.max_passes", "features.angle_tol",
            "refine.quality_bound", "refine.anisotropy", "refine.size_bound", "refine.chordal_error",
            "refine.angular_resolution", "refine.hidden_splits", "refine.cap_candidates",
            "refine.optimize_rounds", "refine.max_growth", "refine.size_measure", "sliver.theta_low",
            "sliver.theta_high", "sliver.anisotropy", "sliver.max_passes", "sliver.pad",
            "sliver.pad_fraction", "sliver.target_dihedral", "sliver.rounds", "smooth.theta",
            "smooth.max_iters", "smooth.step_tol", "smooth.delta", "smooth.reference", "oracle.kind",
            "oracle.p", "oracle.k", "oracle.a", "oracle.seed", "physics.omega", "physics.eps0",
            "physics.mu0", "physics.eps_r", "physics.eps_r_imag", "physics.mu_r", "amr.gamma",
            "amr.gradation", "amr.budget_fraction", "amr.anisotropy", "amr.optimize",
            "amr.smooth_fraction", "amr.convergence_tol", "output.dir", "output.name",
        ];
        if let Some((k, (line, _))) = entries.iter().find(|(k, _)| !KNOWN.contains(&k.as_str())) {
            return Err(PipelineError::Config {
                line: *line,
                msg: format!("unknown key {k:?}"),
            });
        }
        c.check()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.to_owned(),
            source,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::parse(&text, dir)
    }

    /// Stage order and parameter ranges.
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| PipelineError::Config { line: 0, msg };
        let mut have_volume = matches!(self.input, Input::Mesh(_));
        let surface_input = matches!(self.input, Input::Surface(_) | Input::BoxSurface { .. });
        for &s in &self.stages {
            match s {
                Stage::SurfacePrep if have_volume || !surface_input => {
                    return Err(bad("surface-prep needs a surface input and must precede tetrahedralize".into()))
                }
                Stage::SurfacePrep => {}
                Stage::Tetrahedralize if have_volume => {
                    return Err(bad("tetrahedralize needs a surface or point input and may run once".into()))
                }
                Stage::Tetrahedralize => have_volume = true,
                _ if !have_volume => return Err(bad(format!("{} needs a volume mesh; tetrahedralize first", s.name()))),
                _ => {}
            }
        }
        self.refine.validate().map_err(|e| bad(format!("refine: {e}")))?;
        self.amr.validate().map_err(|e| bad(format!("amr: {e}")))?;
        self.physics.validate().map_err(|e| bad(format!("physics: {e}")))?;
        Ok(())
    }
}

enum State {
    Surface(SurfaceMesh),
    Points(Vec<Point3>),
    Volume(TetMesh),
}

/// What a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<Value>,
    pub mesh: Option<PathBuf>,
}

fn surface_max_angle(s: &SurfaceMesh) -> f64 {
    (0..s.triangles.len())
        .map(|t| {
            let [a, b, c] = s.points(t);
            geom::triangle_angles(a, b, c).into_iter().fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn summary(r: &ValidationReport) -> Value {
    json!({
        "valid": r.is_valid(),
        "violations": r.violations.len(),
        "tets": r.tets,
        "vertices": r.vertices,
        "facets": r.facets,
        "min_dihedral_deg": r.min_dihedral_deg,
        "max_dihedral_deg": r.max_dihedral_deg,
        "max_quality": if r.max_quality.is_finite() { json!(r.max_quality) } else { json!("inf") },
    })
}

fn write_file(path: PathBuf, text: &str) -> Result<(), PipelineError> {
    fs::write(&path, text).map_err(|source| IoError::Write { path, source }.into())
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn stage_err(stage: Stage, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.name().into(),
        msg: e.to_string(),
    }
}

fn mesh_of(state: &mut State) -> &mut TetMesh {
    match state {
        State::Volume(m) => m,
        _ => unreachable!("stage order is checked before running"),
    }
}

/// Run every stage, writing `NN-<stage>.json` reports, histograms and the
/// final mesh into the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    config.check()?;
    let out = &config.output;
    fs::create_dir_all(out).map_err(|source| IoError::Write {
        path: out.clone(),
        source,
    })?;
    let mut state = match &config.input {
        Input::Surface(p) => State::Surface(io::read_surface(p)?),
        Input::Points(p) => State::Points(io::read_points(p)?),
        Input::Mesh(p) => State::Volume(io::read_mesh(p)?),
        Input::BoxSurface { n, count, seed } => State::Surface(gen::perturbed_box_surface(*n, *count, *seed)),
        Input::RotatedLattice { n, axis, angle } => State::Points(gen::rotated_lattice(*n, *axis, *angle)),
        Input::RandomPoints { n, seed } => State::Points(gen::random_points(*n, *seed)),
    };
    let mut reports = Vec::new();
    for (i, &stage) in config.stages.iter().enumerate() {
        let tag = format!("{:02}-{}", i + 1, stage.name());
        let report = run_stage(config, stage, &mut state, &out.join(&tag))?;
        let mut doc = json!({ "stage": stage.name(), "index": i + 1, "report": report });
        let violation = match &state {
            State::Volume(m) => {
                let v = validate(m);
                write_file(out.join(format!("{tag}-dihedral.csv")), &v.dihedral.to_csv())?;
                write_file(out.join(format!("{tag}-quality.csv")), &v.quality.to_csv())?;
                doc["validation"] = summary(&v);
                doc["slivers"] = json!(detect_slivers(m, THETA_LOW, THETA_HIGH).len());
                doc["below_10deg"] = json!(count_below(m, 10.0));
                (!v.is_valid()).then(|| format!("{:?}", &v.violations[..v.violations.len().min(5)]))
            }
            State::Surface(s) => {
                doc["validation"] = json!({
                    "valid": s.check().is_ok(),
                    "vertices": s.vertices.len(),
                    "triangles": s.triangles.len(),
                    "max_angle_deg": surface_max_angle(s),
                });
                s.check().err().map(|e| e.to_string())
            }
            State::Points(_) => None,
        };
        write_file(out.join(format!("{tag}.json")), &(serde_json::to_string_pretty(&doc).unwrap() + "\n"))?;
        reports.push(doc);
        if let Some(msg) = violation {
            return Err(PipelineError::Invariant {
                stage: stage.name().into(),
                msg,
            });
        }
    }
    let mesh_path = match &state {
        State::Volume(m) => {
            let base = out.join(&config.name);
            io::write_mesh(m, &base)?;
            Some(base)
        }
        State::Surface(s) => {
            io::write_surface(s, &out.join(&config.name))?;
            None
        }
        State::Points(_) => None,
    };
    let final_doc = json!({
        "stages": config.stages.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "final": reports.last().and_then(|r| r.get("validation")).cloned().unwrap_or(Value::Null),
        "slivers": reports.last().and_then(|r| r.get("slivers")).cloned().unwrap_or(Value::Null),
        "below_10deg": reports.last().and_then(|r| r.get("below_10deg")).cloned().unwrap_or(Value::Null),
    });
    write_file(out.join("summary.json"), &(serde_json::to_string_pretty(&final_doc).unwrap() + "\n"))?;
    Ok(RunSummary {
        stages: reports,
        mesh: mesh_path,
    })
}

fn run_stage(config: &PipelineConfig, stage: Stage, state: &mut State, prefix: &Path) -> Result<Value, PipelineError> {
    let err = |e: &dyn std::fmt::Display| stage_err(stage, e);
    Ok(match stage {
        Stage::SurfacePrep => {
            let State::Surface(s) = state else { unreachable!() };
            let before = surface_max_angle(s);
            let (out, r) = eliminate_obtuse(s, config.obtuse_threshold, config.obtuse_passes).map_err(|e| err(&e))?;
            let after = surface_max_angle(&out);
            let report = json!({
                "passes": r.passes,
                "polylines": r.polylines,
                "added_vertices": r.added_vertices,
                "residual": r.residual.len(),
                "max_angle_before_deg": before,
                "max_angle_after_deg": after,
            });
            *s = out;
            report
        }
        Stage::Tetrahedralize => {
            let mut m = match state {
                State::Surface(s) => tetrahedralize_surface(s).map_err(|e| err(&e))?,
                State::Points(p) => tetrahedralize_points(p).map_err(|e| err(&e))?,
                State::Volume(_) => unreachable!(),
            };
            let f = classify_boundary_vertices(&mut m, config.feature_angle);
            *state = State::Volume(m);
            json!({ "features": to_json(&f) })
        }
        Stage::RefineAed => {
            let r = refine(mesh_of(state), &config.refine).map_err(|e| err(&e))?;
            to_json(&r)
        }
        Stage::SliverPass => {
            let m = mesh_of(state);
            let p = &config.sliver;
            let (lo, hi) = (p.removal.theta_low, p.removal.theta_high);
            let g = detect_slivers(m, lo, hi);
            write_file(crate::io::with_ext(prefix, "slivers.csv"), &g.to_csv())?;
            let classes = json!({
                "isolated": g.count(SliverClass::Isolated),
                "blocked": g.count(SliverClass::Blocked),
                "chain_member": g.count(SliverClass::ChainMember),
            });
            let removal = remove_slivers(m, &g, &p.removal);
            let mut pad = Value::Null;
            if p.pad {
                let blocked: Vec<u32> = detect_slivers(m, lo, hi).blocked_groups().concat();
                if !blocked.is_empty() {
                    pad = match pad_locked(m, &blocked, &p.pad_params) {
                        Ok(r) => json!({ "padded": r.chain.len(), "duplicated": r.duplicated.len(), "prism_tets": r.prism_tets, "scale": r.scale }),
                        Err(e) => json!({ "refused": e.to_string() }),
                    };
                }
            }
            let opt = optimize(m, &config.smooth, p.target_dihedral, p.rounds);
            json!({
                "detected": g.len(),
                "classes": classes,
                "flips23": removal.flips23,
                "flips32": removal.flips32,
                "insertions": removal.insertions,
                "residual_after_removal": removal.residual.len(),
                "pad": pad,
                "optimize": to_json(&opt),
                "remaining": detect_slivers(m, lo, hi).len(),
                "min_dihedral_deg": min_dihedral_of(m),
            })
        }
        Stage::Smooth => {
            let m = mesh_of(state);
            let r = smooth(m, &config.smooth);
            let mut v = to_json(&r);
            v["min_dihedral_deg"] = json!(min_dihedral_of(m));
            v
        }
        Stage::Indicators => {
            let m = mesh_of(state);
            let oracle = config.oracle.build(m);
            let ind = compute_indicators(m, oracle.as_ref(), &config.physics).map_err(|e| err(&e))?;
            write_file(crate::io::with_ext(prefix, "csv"), &ind.to_csv())?;
            let mags = ind.magnitudes();
            json!({
                "tets": mags.len(),
                "interior_faces": ind.faces.len(),
                "max_eta_abs": mags.iter().copied().fold(0.0, f64::max),
                "sum_eta_abs": mags.iter().sum::<f64>(),
            })
        }
        Stage::AmrStep => {
            let m = mesh_of(state);
            let oracle = config.oracle.build(m);
            let ind = compute_indicators(m, oracle.as_ref(), &config.physics).map_err(|e| err(&e))?;
            let n_max = config.amr.budget(m.num_tets());
            let r = amr_step(m, &ind.magnitudes(), n_max, &config.amr).map_err(|e| err(&e))?;
            to_json(&r)
        }
    })
}

fn min_dihedral_of(m: &TetMesh) -> f64 {
    m.tets().map(|(t, _)| min_dihedral(&m.tet_points(t))).fold(180.0, f64::min)
}

// ---- stats ----

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Range {
    fn of(v: &[f64]) -> Range {
        Range {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshStats {
    pub dihedral: Histogram,
    pub quality: Histogram,
    pub aspect: Histogram,
    pub size: Histogram,
    pub summary: BTreeMap<&'static str, Range>,
}

/// Histograms of dihedral angle, radius-edge quality, aspect ratio and
/// element diameter. Degenerate tets count as infinite quality and aspect
/// ratio, which is left out of the means.
pub fn mesh_stats(mesh: &TetMesh) -> Result<MeshStats, PipelineError> {
    if mesh.num_tets() == 0 {
        return Err(PipelineError::Stage {
            stage: "stats".into(),
            msg: "mesh has no tets".into(),
        });
    }
    let mut dihedrals = Vec::new();
    let (mut q, mut a, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (t, _) in mesh.tets() {
        let p = mesh.tet_points(t);
        if let Ok(d) = geom::dihedral_angles(p[0], p[1], p[2], p[3]) {
            dihedrals.extend(d.iter().map(|x| x.to_degrees()));
        }
        q.push(quality(&p).value);
        a.push(aspect_ratio(&p));
        s.push(crate::mesh::diameter(&p));
    }
    let mut aspect = Histogram::log(1.0, 1e3, 30);
    a.iter().for_each(|&x| aspect.add(x));
    let sr = Range::of(&s);
    let mut size = if sr.max > sr.min {
        Histogram::log(sr.min, sr.max, 20)
    } else {
        Histogram::uniform(sr.min * 0.5, sr.max * 1.5, 20)
    };
    s.iter().for_each(|&x| size.add(x));
    let finite = |v: &[f64]| -> Vec<f64> { v.iter().copied().filter(|x| x.is_finite()).collect() };
    let mut summary = BTreeMap::new();
    if !dihedrals.is_empty() {
        summary.insert("dihedral_deg", Range::of(&dihedrals));
    }
    if !finite(&q).is_empty() {
        summary.insert("quality", Range::of(&finite(&q)));
        summary.insert("aspect_ratio", Range::of(&finite(&a)));
    }
    summary.insert("size", sr);
    Ok(MeshStats {
        dihedral: dihedral_histogram(mesh),
        quality: quality_histogram(mesh),
        aspect,
        size,
        summary,
    })
}

impl MeshStats {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).unwrap() + "\n"
    }

    /// Write `<base>.{dihedral,quality,aspect,size}.csv` and `<base>.stats.json`.
    pub fn write(&self, base: &Path) -> Result<(), PipelineError> {
        for (name, h) in [
            ("dihedral.csv", &self.dihedral),
            ("quality.csv", &self.quality),
            ("aspect.csv", &self.aspect),
            ("size.csv", &self.size),
        ] {
            write_file(io::with_ext(base, name), &h.to_csv())?;
        }
        write_file(io::with_ext(base, "stats.json"), &self.summary_json())
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (k, r) in &self.summary {
            let _ = writeln!(s, "{k}: min {:.6} max {:.6} mean {:.6}", r.min, r.max, r.mean);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<PipelineConfig, PipelineError> {
        PipelineConfig::parse(text, Path::new("/tmp"))
    }

    #[test]
    fn parses_namespaced_keys() {
        let c = cfg("stages = tetrahedralize, refine-aed, amr-step*3\nrefine.anisotropy=10\namr.gamma=0.25\noracle.kind=plane_wave\noracle.k=0,0,20.94\n").unwrap();
        assert_eq!(c.stages.len(), 5);
        assert_eq!(c.stages[4], Stage::AmrStep);
        assert_eq!(c.amr.policy.gamma, 0.25);
        assert_eq!(c.output, Path::new("/tmp/out"));
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(cfg("refine.speed=3\n").unwrap_err().exit_code(), 2);
        assert_eq!(cfg("refine.anisotropy=ten\n").unwrap_err().exit_code(), 2);
        assert!(cfg("stages=refine-aed\n").is_err());
        assert!(cfg("stages=tetrahedralize,surface-prep\n").is_err());
        assert!(cfg("input.kind=rotated-lattice\nstages=surface-prep\n").is_err());
        assert!(cfg("just words\n").is_err());
        assert!(cfg("a=1\na=2\n").is_err());
    }

    #[test]
    fn stats_of_empty_mesh_fail() {
        let m = TetMesh::from_parts(vec![], &[], &[], &[]).unwrap();
        assert!(mesh_stats(&m).is_err());
    }

    #[test]
    fn regular_tet_dihedrals_in_one_bin() {
        let m = gen::regular_tet(1.0).build().unwrap();
        let s = mesh_stats(&m).unwrap();
        // 70.53 degrees falls in [70, 75).
        assert_eq!(s.dihedral.counts[14], 6);
        assert_eq!(s.dihedral.total(), 6);
    }
}
