//! Subcommands of the `lifelong` binary. Each `cmd_*` returns the process
//! exit code: 0 on success, 2 for bad input (config, known-set file,
//! parameters), 3 for I/O failures.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lifelong_core::baselines::random_knowledge;
use lifelong_core::config::{RunConfigFile, Settings};
use lifelong_core::coverage::{crate_estimate, ProbeSet, SphereIndex};
use lifelong_core::lifecycle::{self, fmt_float, KnowledgeBase};
use lifelong_core::metrics::clearance;
use lifelong_core::packing::objective;
use lifelong_core::simulator::{run_episode_traced, Role, TraceRow};
use lifelong_core::space::{ParamMap, ParamSpace, Point, SpaceMode, Sphere, PARAM_NAMES};
use lifelong_core::strategy::{SampleRequest, SamplerRegistry, TrafficEvaluator};
use lifelong_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lifelong", version, about = "Life-long scenario testing by sphere packing")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full generate / pack / evaluate / score loop.
    Test(TestArgs),
    /// Place N new samples by sphere packing against a known set.
    Pack(PlaceArgs),
    /// Place N samples with a reference method (smc, qmc, greedy).
    Baseline(BaselineArgs),
    /// Simulate a single scenario.
    Sim(SimArgs),
    /// Estimate the covered fraction of the unit cube.
    Coverage(CoverageArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's sampler.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Continue from `<out>/knowledge.csv` if it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct PlaceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Known spheres in knowledge.csv format.
    #[arg(long, conflicts_with = "random_known")]
    pub known: Option<PathBuf>,
    /// Draw this many uniform known spheres instead of reading a file.
    #[arg(long)]
    pub random_known: Option<usize>,
    /// How many of the random known spheres are critical.
    #[arg(long, default_value_t = 0)]
    pub random_critical: usize,
    /// Dimension when no known file is given (default: the config's space).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// smc, qmc or greedy.
    #[arg(long)]
    pub kind: String,
    #[command(flatten)]
    pub place: PlaceArgs,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "T")]
    pub time_gap: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "delta_a_th")]
    pub delta_a_th: Option<f64>,
    /// Accepted for uniformity; the episode itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the per-step trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    /// Sphere files (knowledge.csv or packed/samples.csv format); their union is measured.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of Halton probes (default: the config's `probes`).
    #[arg(long)]
    pub probes: Option<usize>,
    /// Accepted for uniformity; probes are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return EXIT_INPUT;
        }
    }
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Pack(a) => cmd_place("packing", a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Sim(a) => cmd_sim(a),
        Command::Coverage(a) => cmd_coverage(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_INPUT,
    }
}

fn settings(path: Option<&Path>) -> Result<Settings, Error> {
    match path {
        None => Ok(Settings::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::InvalidConfig {
                key: "<file>".into(),
                reason: format!("cannot read {}: {e}", p.display()),
            })?;
            RunConfigFile::parse(&text)?.resolve()
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn cmd_test(a: &TestArgs) -> Result<(), Error> {
    let mut s = settings(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        s.outer.seed = seed;
    }
    if let Some(name) = &a.sampler {
        s.sampler = name.clone();
    }
    let sampler = SamplerRegistry::standard().create(&s.sampler, &s.samplers)?;
    let evaluator = TrafficEvaluator {
        space: s.space.clone(),
        sim: s.sim.clone(),
    };
    fs::create_dir_all(&a.out)?;
    let knowledge_path = a.out.join("knowledge.csv");
    let rounds_path = a.out.join("rounds.csv");
    let mut kb = if a.resume && knowledge_path.exists() {
        let kb = KnowledgeBase::read_csv(
            File::open(&knowledge_path)?,
            &knowledge_path,
            s.outer.max_score,
            s.outer.kde_bandwidth,
            s.outer.probes,
        )?;
        if kb.dim() != s.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.space.dim(),
                got: kb.dim(),
            });
        }
        kb
    } else {
        KnowledgeBase::new(s.space.dim())
    };
    let persist = |kb: &KnowledgeBase| -> Result<(), Error> {
        kb.write_csv(create(&knowledge_path)?)?;
        lifecycle::write_rounds_csv(kb.rounds(), create(&rounds_path)?)
    };
    persist(&kb)?;
    let report = lifecycle::run(
        &s.outer,
        s.samplers.packing.radii,
        sampler.as_ref(),
        &evaluator,
        &mut kb,
        persist,
    )?;
    let mut w = create(&a.out.join("report.txt"))?;
    write!(w, "{report}")?;
    w.flush()?;
    println!(
        "{} scenarios, {} critical, score {}, crate {} ({})",
        report.total,
        report.total_critical,
        fmt_float(report.final_score),
        fmt_float(report.final_crate),
        report.stop
    );
    Ok(())
}

pub fn cmd_baseline(a: &BaselineArgs) -> Result<(), Error> {
    match a.kind.as_str() {
        "smc" | "qmc" | "greedy" => cmd_place(&a.kind, &a.place),
        other => Err(Error::InvalidConfig {
            key: "kind".into(),
            reason: format!("`{other}` is not smc, qmc or greedy"),
        }),
    }
}

/// Shared body of `pack` and `baseline`: same inputs, same output schema.
fn cmd_place(kind: &str, a: &PlaceArgs) -> Result<(), Error> {
    let s = settings(a.config.as_deref())?;
    let radii = s.samplers.packing.radii;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let known: Vec<Sphere> = match (&a.known, a.random_known) {
        (Some(path), _) => {
            let kb = KnowledgeBase::read_csv(
                File::open(path).map_err(|e| Error::Malformed {
                    path: path.clone(),
                    line: 0,
                    reason: e.to_string(),
                })?,
                path,
                s.outer.max_score,
                s.outer.kde_bandwidth,
                s.outer.probes,
            )?;
            if let Some(d) = a.dim {
                if d != kb.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: kb.dim(),
                    });
                }
            }
            kb.spheres().to_vec()
        }
        (None, Some(n)) => {
            if a.random_critical > n {
                return Err(Error::InvalidConfig {
                    key: "random_critical".into(),
                    reason: format!("{} exceeds --random-known {n}", a.random_critical),
                });
            }
            let dim = a.dim.unwrap_or(s.space.dim());
            random_knowledge(n, a.random_critical, dim, radii, &mut rng)
        }
        (None, None) => Vec::new(),
    };
    let dim = match (known.first(), a.dim) {
        (Some(k), _) => k.center.dim(),
        (None, Some(d)) => d,
        (None, None) => s.space.dim(),
    };
    if dim == 0 {
        return Err(Error::InvalidConfig {
            key: "dim".into(),
            reason: "must be at least 1".into(),
        });
    }
    fs::create_dir_all(&a.out)?;
    let round = known.iter().map(|k| k.round + 1).max().unwrap_or(0);

    let (points, trace) = if a.n == 0 {
        (Vec::new(), Vec::new())
    } else {
        let sampler = SamplerRegistry::standard().create(kind, &s.samplers)?;
        let req = SampleRequest {
            n: a.n,
            dim,
            known: &known,
            round,
            offset: 0,
            seed: a.seed,
        };
        let out = sampler.sample(&req, &mut rng);
        (out.points, out.trace)
    };
    let placed: Vec<Sphere> = points
        .into_iter()
        .map(|c| Sphere::new(c, radii.r_noncrit, false, round))
        .collect();

    let file = if kind == "packing" { "packed.csv" } else { "samples.csv" };
    write_samples(&placed, dim, create(&a.out.join(file))?)?;
    if kind == "packing" {
        let mut w = csv::Writer::from_writer(create(&a.out.join("pack_trace.csv"))?);
        w.write_record(["k", "objective", "current_objective", "accepted", "acceptance_probability"])
            .map_err(csv_err)?;
        for r in &trace {
            w.write_record([
                r.k.to_string(),
                fmt_float(r.best_objective),
                fmt_float(r.objective),
                u8::from(r.accepted).to_string(),
                fmt_float(r.probability),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    if placed.is_empty() {
        return Ok(());
    }
    let mut all = known.clone();
    all.extend(placed.iter().cloned());
    let probes = ProbeSet::halton(dim, s.outer.probes);
    let idx = SphereIndex::new(&all);
    println!("n={}", placed.len());
    println!("objective={}", fmt_float(objective(&known, &placed)));
    println!("clearance={}", fmt_float(clearance(&known, &placed)));
    println!("coverage={}", fmt_float(crate_estimate(&all, &probes, idx.index())));
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// `id,x0,..,radius`
pub fn write_samples<W: Write>(spheres: &[Sphere], dim: usize, out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((0..dim).map(|d| format!("x{d}")));
    header.push("radius".into());
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in spheres.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(s.center.coords().iter().map(|&x| fmt_float(x)));
        row.push(fmt_float(s.radius));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads either sphere file format, telling them apart by the first column.
pub fn read_spheres(path: &Path) -> Result<Vec<Sphere>, Error> {
    let bad = |line: u64, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(0, e.to_string()))?;
    if text.starts_with("round") {
        let kb = KnowledgeBase::read_csv(text.as_bytes(), path, 0.0, 0.1, 1)?;
        return Ok(kb.spheres().to_vec());
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[header.len() - 1] != "radius" {
        return Err(bad(1, "expected header `id,x0,...,radius` or a knowledge file".into()));
    }
    let dim = header.len() - 2;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| bad(line, e.to_string()))?;
        let nums = row
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(line, format!("`{f}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        let center = Point::new(nums[..dim].to_vec()).map_err(|e| bad(line, e.to_string()))?;
        if !(nums[dim] > 0.0) {
            return Err(bad(line, "radius must be positive".into()));
        }
        out.push(Sphere::new(center, nums[dim], false, 0));
    }
    Ok(out)
}

pub fn cmd_coverage(a: &CoverageArgs) -> Result<(), Error> {
    let s = settings(a.config.as_deref())?;
    let mut all: Vec<Sphere> = Vec::new();
    for f in &a.files {
        let spheres = read_spheres(f)?;
        if let (Some(x), Some(y)) = (all.first(), spheres.first()) {
            if x.center.dim() != y.center.dim() {
                return Err(Error::DimensionMismatch {
                    expected: x.center.dim(),
                    got: y.center.dim(),
                });
            }
        }
        all.extend(spheres);
    }
    let count = a.probes.unwrap_or(s.outer.probes);
    if count == 0 {
        return Err(Error::InvalidConfig {
            key: "probes".into(),
            reason: "must be at least 1".into(),
        });
    }
    let rate = match all.first() {
        None => 0.0,
        Some(first) => {
            let probes = ProbeSet::halton(first.center.dim(), count);
            let idx = SphereIndex::new(&all);
            crate_estimate(&all, &probes, idx.index())
        }
    };
    let se = (rate * (1.0 - rate) / count as f64).sqrt();
    println!("spheres={}", all.len());
    println!("crate={}", fmt_float(rate));
    println!("standard_error={}", fmt_float(se));
    Ok(())
}

pub fn cmd_sim(a: &SimArgs) -> Result<(), Error> {
    let s = settings(a.config.as_deref())?;
    // Always the seven shared parameters, with the configured bounds.
    let space = ParamSpace::with_bounds(
        SpaceMode::Shared,
        s.space.base_bounds().clone(),
        &[],
        &Default::default(),
    )?;
    let given = [a.v0, a.alpha, a.time_gap, a.b, a.s0, a.p, a.delta_a_th];
    let params: ParamMap = PARAM_NAMES
        .iter()
        .zip(space.base_bounds())
        .zip(given)
        .map(|((name, d), v)| (name.to_string(), v.unwrap_or(0.5 * (d.lower + d.upper))))
        .collect();
    space.from_physical(&params)?;
    let behaviors = space.behaviors(&params)?;
    let (res, trace) = run_episode_traced(&behaviors, &s.sim);
    if let Some(path) = &a.trace {
        write_trace(&trace, create(path)?)?;
    }
    println!("min_ttc={}", fmt_float(res.min_ttc));
    println!("min_accel={}", fmt_float(res.min_accel));
    println!("collision={}", u8::from(res.collision));
    println!("lane_change={}", u8::from(res.lane_change_completed));
    println!("critical={}", u8::from(res.critical));
    Ok(())
}

/// Long format: one row per vehicle per step.
pub fn write_trace<W: Write>(trace: &[TraceRow], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "vehicle", "lane", "position", "speed", "av_gap", "av_ttc"])
        .map_err(csv_err)?;
    for row in trace {
        for v in &row.vehicles {
            let name = match v.role {
                Role::Av => "av".to_string(),
                Role::Sv => format!("sv{}", v.sv),
            };
            w.write_record([
                fmt_float(row.t),
                name,
                v.lane.to_string(),
                fmt_float(v.position),
                fmt_float(v.speed),
                fmt_float(row.gap),
                fmt_float(row.ttc),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
