//! Command-line driver: terrain generation, survey ablations and fusion
//! experiments. Every run writes a `manifest.json` sidecar with the scenario
//! hash, seed, resolved parameters and the hash of every artifact.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use terratrack::exec::Exec;
use terratrack::fusion::{self, FusionScenario};
use terratrack::gridmap::Heatmap;
use terratrack::metrics::{self, FullReport, NormalField, SafetyStats, SurveyReport};
use terratrack::sim::{self, Method, ScenarioConfig, SurveyOutcome, World};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "terratrack",
    version,
    about = "Terrain-following survey and GNSS/odometry fusion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the survey methods on one scenario and tabulate them.
    Ablate(AblateArgs),
    /// Simulate odometry/GNSS streams and run the fixed-lag smoother.
    Fuse(RunArgs),
    /// Write the ground-truth heightfield of a survey scenario.
    Terrain(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario JSON [default: scenarios/ablation.json, or
    /// scenarios/fusion_loop.json for `fuse`]
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Run seed; terrain, detector noise and streams use named sub-seeds of it.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Artifacts to write. `fuse` renders its heatmap as a position-error map.
    #[arg(long, value_delimiter = ',', default_value = "csv,heatmap,report")]
    pub emit: Vec<Emit>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Methods: proposed, alignedK (K >= 1) or fixed.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "proposed,aligned1,aligned6,fixed"
    )]
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Heatmap,
    Report,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or configuration.
    Usage(String),
    /// The run itself failed or an artifact could not be written.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "error: {m}\n\nFor more information, try '--help'."),
            Failure::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

fn usage(e: impl fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Sidecar written next to the artifacts of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub scenario: String,
    pub scenario_sha256: String,
    pub methods: Vec<String>,
    pub out: String,
    pub seed: u64,
    pub emit: Vec<Emit>,
    /// Scenario with every default filled in.
    pub params: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> terratrack::Result<()>,
    ) -> Result<(), Failure> {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(runtime)?;
        let path = self.dir.join(name);
        fs::write(&path, &buf)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(&buf),
        });
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)?;
            Ok(())
        })
    }

    fn heatmap(&mut self, name: &str, map: &Heatmap) -> Result<(), Failure> {
        self.write(&format!("{name}.ppm"), |out| map.write_ppm(out))?;
        self.write(&format!("{name}.pgm"), |out| map.write_pgm(out))?;
        self.write(&format!("{name}.scale.txt"), |out| {
            Ok(out.write_all(map.scale_description().as_bytes())?)
        })
    }

    fn finish(self, mut manifest: RunManifest) -> Result<Vec<Artifact>, Failure> {
        manifest.artifacts = self.artifacts.clone();
        let text = serde_json::to_string_pretty(&manifest).map_err(runtime)? + "\n";
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.artifacts)
    }
}

struct Loaded<T> {
    path: PathBuf,
    sha256: String,
    value: T,
}

fn load<T>(
    path: &Path,
    parse: impl FnOnce(&str) -> terratrack::Result<T>,
) -> Result<Loaded<T>, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| usage(format!("cannot read scenario {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| usage(format!("scenario {} is not UTF-8: {e}", path.display())))?;
    let value = parse(text).map_err(|e| usage(format!("scenario {}: {e}", path.display())))?;
    Ok(Loaded {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        value,
    })
}

fn manifest<T: Serialize>(
    command: &str,
    args: &RunArgs,
    methods: Vec<String>,
    scenario: &Loaded<T>,
) -> Result<RunManifest, Failure> {
    let mut emit = args.emit.clone();
    emit.sort();
    emit.dedup();
    Ok(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        scenario: scenario.path.display().to_string(),
        scenario_sha256: scenario.sha256.clone(),
        methods,
        out: args.out.display().to_string(),
        seed: args.seed,
        emit,
        params: serde_json::to_value(&scenario.value).map_err(runtime)?,
        artifacts: Vec::new(),
    })
}

/// Parses arguments, runs the command and returns the exit status. Messages
/// go to stdout on success and stderr on failure.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(artifacts) => {
            for a in &artifacts {
                println!("wrote {}", a.file);
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<Vec<Artifact>, Failure> {
    match command {
        Command::Ablate(a) => cmd_ablate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Terrain(a) => cmd_terrain(a),
    }
}

fn scenario_path(args: &RunArgs, default: &str) -> PathBuf {
    args.scenario
        .clone()
        .unwrap_or_else(|| PathBuf::from(default))
}

pub fn parse_methods(names: &[String]) -> Result<Vec<Method>, Failure> {
    if names.is_empty() {
        return Err(usage("--methods needs at least one method"));
    }
    let mut methods = Vec::with_capacity(names.len());
    for n in names {
        let m: Method = n.trim().parse().map_err(usage)?;
        if methods.contains(&m) {
            return Err(usage(format!("method '{m}' listed twice")));
        }
        methods.push(m);
    }
    Ok(methods)
}

/// Per-method entry of `report.json`.
#[derive(Debug, Serialize)]
struct MethodReport {
    #[serde(flatten)]
    report: FullReport,
    skipped_samples: Vec<usize>,
    safety: SafetyStats,
    detection: Option<metrics::DetectionReport>,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<Artifact>, Failure> {
    let run = &args.run;
    let methods = parse_methods(&args.methods)?;
    let scenario = load(
        &scenario_path(run, "scenarios/ablation.json"),
        ScenarioConfig::from_json,
    )?;
    let mut out = Output::create(&run.out)?;
    let names = methods.iter().map(Method::to_string).collect();
    let manifest = manifest("ablate", run, names, &scenario)?;

    let world = World::build(&scenario.value, run.seed, Exec::default()).map_err(runtime)?;
    // Methods are independent; each survey is single-threaded inside.
    let outcomes: Vec<terratrack::Result<SurveyOutcome>> =
        Exec::default().map_slice(&methods, |m| sim::run_survey(&world, *m, Exec::Sequential));
    let outcomes: Vec<SurveyOutcome> = outcomes
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(runtime)?;

    let truth = NormalField::survey_truth(&world).map_err(runtime)?;
    let obstacles = metrics::truth_obstacles(&world, Exec::default()).map_err(runtime)?;
    let targets: Vec<_> = scenario.value.targets.iter().map(|t| t.xy()).collect();
    let mut reports = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        reports.push(MethodReport {
            report: FullReport::from_log(&o.log, &truth).map_err(runtime)?,
            skipped_samples: o.log.skipped.clone(),
            safety: metrics::safety_stats(&world, &o.log, &o.map, &obstacles).map_err(runtime)?,
            detection: (!targets.is_empty())
                .then(|| metrics::detection_report(&o.map, &targets, None)),
        });
    }

    if run.emit.contains(&Emit::Csv) {
        for o in &outcomes {
            out.write(&format!("{}_log.csv", o.log.method), |w| o.log.write_csv(w))?;
        }
        let rows: Vec<SurveyReport> = reports.iter().map(|r| r.report.summary.clone()).collect();
        out.write("summary.csv", |w| metrics::write_report_csv(&rows, w))?;
    }
    if run.emit.contains(&Emit::Heatmap) {
        for o in &outcomes {
            out.heatmap(
                &format!("{}_signal", o.log.method),
                &Heatmap::signal(&o.map),
            )?;
            out.heatmap(
                &format!("{}_elevation", o.log.method),
                &Heatmap::elevation(&o.map),
            )?;
        }
    }
    if run.emit.contains(&Emit::Report) {
        out.json("report.json", &reports)?;
    }
    out.finish(manifest)
}

pub const TRACE_CSV_HEADER: &str =
    "timestamp,traveled_m,extrinsic_yaw_deg,tx,ty,tz,yaw_sigma_deg,yaw_sigma_nominal_deg,gated,iterations,window_states";

fn write_trace_csv<W: Write>(rows: &[fusion::TraceRow], out: &mut W) -> terratrack::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in rows {
        let t = r.extrinsic_translation;
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e},{:.6e},{},{},{}",
            r.timestamp,
            r.traveled,
            r.extrinsic_yaw.to_degrees(),
            t[0],
            t[1],
            t[2],
            r.yaw_variance.sqrt().to_degrees(),
            r.yaw_variance_nominal.sqrt().to_degrees(),
            u8::from(r.gated),
            r.iterations,
            r.window_states
        )?;
    }
    Ok(())
}

/// Top-down raster of the fused position error, max per 0.25 m cell.
fn error_heatmap(exp: &fusion::Experiment) -> Heatmap {
    const CELL: f64 = 0.25;
    let pts: Vec<_> = exp
        .run
        .estimates
        .iter()
        .map(|e| {
            (
                e.pose.translation,
                (e.pose.translation - exp.truth.pose_at(e.timestamp).translation).norm(),
            )
        })
        .collect();
    let (lo, hi) = pts.iter().fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(lo, hi), (p, _)| {
            (
                [lo[0].min(p.x), lo[1].min(p.y)],
                [hi[0].max(p.x), hi[1].max(p.y)],
            )
        },
    );
    if pts.is_empty() {
        return Heatmap::from_values(1, 1, vec![None], "fused_error_m");
    }
    let origin = [lo[0] - CELL, lo[1] - CELL];
    let width = ((hi[0] - origin[0]) / CELL).ceil() as usize + 2;
    let height = ((hi[1] - origin[1]) / CELL).ceil() as usize + 2;
    let mut values: Vec<Option<f64>> = vec![None; width * height];
    for (p, e) in pts {
        let col = ((p.x - origin[0]) / CELL) as usize;
        let row = ((p.y - origin[1]) / CELL) as usize;
        let v = &mut values[row * width + col];
        *v = Some(v.map_or(e, |x| x.max(e)));
    }
    Heatmap::from_values(width, height, values, "fused_error_m")
}

pub fn cmd_fuse(args: &RunArgs) -> Result<Vec<Artifact>, Failure> {
    let scenario = load(
        &scenario_path(args, "scenarios/fusion_loop.json"),
        FusionScenario::from_json,
    )?;
    let mut out = Output::create(&args.out)?;
    let manifest = manifest("fuse", args, Vec::new(), &scenario)?;
    let exp = fusion::run_experiment(&scenario.value, args.seed).map_err(runtime)?;

    if args.emit.contains(&Emit::Csv) {
        out.write("streams.csv", |w| {
            fusion::write_streams_csv(&exp.streams, w)
        })?;
        out.write("estimates.csv", |w| {
            fusion::write_estimates_csv(&exp.run.estimates, w)
        })?;
        out.write("odometry.csv", |w| {
            fusion::write_estimates_csv(&fusion::dead_reckoning(&exp.streams), w)
        })?;
        out.write("trace.csv", |w| write_trace_csv(&exp.run.trace, w))?;
    }
    if args.emit.contains(&Emit::Heatmap) {
        out.heatmap("fused_error", &error_heatmap(&exp))?;
    }
    if args.emit.contains(&Emit::Report) {
        #[derive(Serialize)]
        struct FuseReport<'a> {
            #[serde(flatten)]
            evaluation: &'a fusion::FusionEvaluation,
            diagnostics: &'a [String],
        }
        out.json(
            "fusion_report.json",
            &FuseReport {
                evaluation: &exp.evaluation,
                diagnostics: &exp.run.diagnostics,
            },
        )?;
    }
    out.finish(manifest)
}

#[derive(Debug, Serialize)]
struct TerrainReport {
    nodes: [usize; 2],
    resolution: f64,
    bounds: [f64; 4],
    z_min: f64,
    z_max: f64,
    z_mean: f64,
}

pub fn cmd_terrain(args: &RunArgs) -> Result<Vec<Artifact>, Failure> {
    let scenario = load(
        &scenario_path(args, "scenarios/ablation.json"),
        ScenarioConfig::from_json,
    )?;
    let mut out = Output::create(&args.out)?;
    let manifest = manifest("terrain", args, Vec::new(), &scenario)?;
    let sc = &scenario.value;
    let bounds = sc.map_bounds();
    let field = sim::generate_terrain(
        &sc.terrain,
        &sc.obstacles,
        &bounds,
        sc.map.truth_resolution,
        args.seed,
        Exec::default(),
    )
    .map_err(runtime)?;
    let (nx, ny) = field.node_count();
    let z: Vec<f64> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| field.node(i, j))
        .collect();

    if args.emit.contains(&Emit::Csv) {
        out.write("terrain.csv", |w| field.write_csv(w))?;
    }
    if args.emit.contains(&Emit::Heatmap) {
        out.heatmap(
            "terrain",
            &Heatmap::from_values(nx, ny, z.iter().map(|v| Some(*v)).collect(), "height_m"),
        )?;
    }
    if args.emit.contains(&Emit::Report) {
        let b = field.bounds();
        let (mean, _) = metrics::mean_std(&z);
        out.json(
            "terrain_report.json",
            &TerrainReport {
                nodes: [nx, ny],
                resolution: field.resolution(),
                bounds: [b.min().x, b.min().y, b.max().x, b.max().y],
                z_min: z.iter().copied().fold(f64::INFINITY, f64::min),
                z_max: z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                z_mean: mean,
            },
        )?;
    }
    out.finish(manifest)
}
