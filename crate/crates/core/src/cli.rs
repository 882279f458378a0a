//! Command-line surface of the `geoloc25d` binary.
//!
//! A `--config FILE` of `key=value` lines supplies defaults for the chosen
//! subcommand. Its entries are inserted ahead of the explicit arguments, so
//! any flag given on the command line wins. A value of `true` turns on a
//! switch; `false` leaves it off.
//!
//! Exit status: 0 on success, 2 on a usage error, 1 on a runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::contrastive::{
    decode_checkpoint, encode_checkpoint, gradient_check, loss_trace_csv, toy_train, LinearEncoderPair, LossConfig,
    TrainConfig,
};
use crate::embedindex::{
    decode_index, decode_pca, encode_index, encode_pca, pca_fit, pca_transform_rows, recall_csv, recall_curve,
    EmbeddingIndex, TopK,
};
use crate::error::{invalid, Error, Result};
use crate::localizer::{
    evaluate_route_traces, parse_graph, success_curve, success_curve_csv, QuerySequence, RouteConfig, ScoreMode,
};
use crate::mapgen::{
    crop_region, decode_cloud, encode_cloud, format_mesh, normalize_cloud, parse_mesh, sample_mesh, CropSpec, Frame,
    DEFAULT_CROP_SIDE, DEFAULT_DENSITY,
};
use crate::pointops::{fps, rps, DEFAULT_SAMPLE_POINTS};
use crate::rng::sub_seed;
use crate::synthcity::{
    decode_features, encode_features, format_routes, generate_city, generate_routes, paired_features, parse_routes,
    CitySpec, GroundViewParams, SectorEncoderSpec,
};

#[derive(Debug, Parser)]
#[command(name = "geoloc25d", version, about = "Ground-to-2.5D-map geolocalization toolkit", args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Optional key=value defaults file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a semantic mesh into a point cloud, optionally cropping and
    /// normalizing around a location.
    Mesh2cloud(Mesh2CloudArgs),
    /// Subsample a point cloud by farthest-point or random selection.
    Sample(SampleArgs),
    /// Generate a synthetic city with its graph, features and routes.
    Synthcity(SynthCityArgs),
    /// Train the linear encoder pair on paired features.
    Train(TrainArgs),
    /// Fit or apply a PCA reduction to an embedding index.
    Pca {
        #[command(subcommand)]
        action: PcaCommand,
    },
    /// Embed one side of a feature file into an index.
    Index(IndexArgs),
    /// Single-image localization against an index.
    Query(QueryArgs),
    /// Route-based localization success curve.
    RouteEval(RouteEvalArgs),
    /// Compare analytic loss gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameArg {
    World,
    Crop,
    Normalized,
}

impl From<FrameArg> for Frame {
    fn from(f: FrameArg) -> Self {
        match f {
            FrameArg::World => Frame::World,
            FrameArg::Crop => Frame::Crop,
            FrameArg::Normalized => Frame::Normalized,
        }
    }
}

#[derive(Debug, Args)]
pub struct Mesh2CloudArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Points per square meter.
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    pub density: f64,
    /// Crop center as `x,y`; without it the whole world-frame cloud is
    /// written.
    #[arg(long, value_parser = parse_pair)]
    pub center: Option<[f64; 2]>,
    /// Crop heading in radians.
    #[arg(long, default_value_t = 0.0)]
    pub heading: f64,
    #[arg(long, default_value_t = DEFAULT_CROP_SIDE)]
    pub side: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Fps,
    Rps,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_POINTS)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Fps)]
    pub strategy: StrategyArg,
    /// First point index for farthest-point sampling.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Frame recorded for the input cloud.
    #[arg(long, value_enum, default_value_t = FrameArg::Normalized)]
    pub frame: FrameArg,
}

#[derive(Debug, Args)]
pub struct SynthCityArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub grid_w: usize,
    #[arg(long, default_value_t = 32)]
    pub grid_h: usize,
    #[arg(long, default_value_t = 10.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    pub density: f64,
    #[arg(long, default_value_t = 16)]
    pub sectors: usize,
    #[arg(long, default_value_t = 76.0)]
    pub radius: f64,
    /// Ground-view noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Ground-view point dropout probability.
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 500)]
    pub routes: usize,
    #[arg(long, default_value_t = 40)]
    pub route_length: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Encoder checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of per-epoch losses.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    /// Feature jitter standard deviation per augmented view.
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    /// Start both encoders from the same matrix.
    #[arg(long)]
    pub shared_init: bool,
}

#[derive(Debug, Subcommand)]
pub enum PcaCommand {
    /// Fit a reduction on the vectors of an index.
    Fit(PcaFitArgs),
    /// Reduce the vectors of an index with a fitted model.
    Transform(PcaTransformArgs),
}

#[derive(Debug, Args)]
pub struct PcaFitArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaTransformArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// L2-normalize the reduced vectors.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Map,
    Ground,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SideArg::Map)]
    pub side: SideArg,
    #[arg(long)]
    pub out: PathBuf,
    /// L2-normalize embeddings before indexing.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Comma-separated query vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "queries")]
    pub vector: Option<Vec<f64>>,
    /// Index of query embeddings; every row is localized unless `--id`
    /// selects one.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, requires = "queries")]
    pub id: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// With `--queries` and no `--id`: recall CSV for Top-1, Top-5, Top-10
    /// and Top-1%.
    #[arg(long, requires = "queries")]
    pub recall_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Full,
    Window,
}

#[derive(Debug, Args)]
pub struct RouteEvalArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Map-side embedding index.
    #[arg(long)]
    pub index: PathBuf,
    /// Ground-side query embeddings.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub routes: PathBuf,
    /// Success curve CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-route success trace CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub cull_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub floor: usize,
    #[arg(long)]
    pub no_cull: bool,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = ScoreArg::Full)]
    pub score: ScoreArg,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    /// Relative error above which the check fails.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Optional report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected x,y".into());
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([x, y])
}

/// Finds `--config` in the raw arguments without consuming them.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Turns `key=value` lines into flags.
pub fn config_flags(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Malformed {
            what: "config file",
            offset: start,
            message: format!("expected key=value, found {body:?}"),
        })?;
        let key = k.trim().replace('_', "-");
        let value = v.trim();
        if key.is_empty() || key == "config" {
            return Err(Error::Malformed {
                what: "config file",
                offset: start,
                message: format!("invalid key {:?}", k.trim()),
            });
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

/// Position just after the subcommand name (and the `pca` action), where
/// config flags are spliced in.
fn subcommand_end(args: &[OsString]) -> Option<usize> {
    let names = [
        "mesh2cloud",
        "sample",
        "synthcity",
        "train",
        "pca",
        "index",
        "query",
        "route-eval",
        "gradcheck",
    ];
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if names.contains(&s.as_ref()) {
            if s == "pca" && i + 1 < args.len() {
                return Some(i + 2);
            }
            return Some(i + 1);
        }
        if matches!(s.as_ref(), "--seed" | "--threads" | "--config") {
            i += 2;
        } else {
            i += 1;
        }
    }
    None
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|e| Error::Malformed {
        what: "text file",
        offset: e.utf8_error().valid_up_to() as u64,
        message: "invalid UTF-8".into(),
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`. Returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with_output(args, &mut lock)
}

pub fn run_with_output<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Some(path) = config_path(&args) {
        let flags = match read_text(&path).and_then(|t| config_flags(&t)) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        };
        if let Some(at) = subcommand_end(&args) {
            args.splice(at..at, flags);
        }
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Mesh2cloud(a) => mesh2cloud(a, seed, out),
        Command::Sample(a) => sample(a, seed, out),
        Command::Synthcity(a) => synthcity(a, seed, out),
        Command::Train(a) => train(a, seed, out),
        Command::Pca { action } => match action {
            PcaCommand::Fit(a) => {
                let index = decode_index(&read(&a.index)?, false)?;
                let model = pca_fit(index.vectors(), a.k)?;
                write(&a.out, encode_pca(&model))?;
                let total: f64 = model.eigenvalues.iter().sum();
                writeln!(out, "pca {} -> {} dims, retained variance {total:.6}", model.input_dim(), a.k)?;
                Ok(())
            }
            PcaCommand::Transform(a) => {
                let model = decode_pca(&read(&a.model)?)?;
                let index = decode_index(&read(&a.index)?, false)?;
                let reduced = pca_transform_rows(&model, index.vectors())?;
                let index = EmbeddingIndex::new(index.ids().to_vec(), reduced, a.normalize)?;
                write(&a.out, encode_index(&index))?;
                writeln!(out, "reduced {} vectors to {} dims", index.len(), index.dim())?;
                Ok(())
            }
        },
        Command::Index(a) => index(a, out),
        Command::Query(a) => query(a, out),
        Command::RouteEval(a) => route_eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, seed, out),
    }
}

fn mesh2cloud(a: &Mesh2CloudArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let mesh = parse_mesh(&read_text(&a.mesh)?)?;
    let cloud = sample_mesh(&mesh, a.density, seed)?;
    let sampled = cloud.len();
    let (cloud, clamped) = match a.center {
        Some(center) => {
            let spec = CropSpec::new(center, a.heading, a.side)?;
            let crop = crop_region(&cloud, &spec)?;
            let n = normalize_cloud(&crop, spec.half_extent())?;
            (n.cloud, n.clamped)
        }
        None => (cloud, 0),
    };
    write(&a.out, encode_cloud(&cloud))?;
    writeln!(out, "sampled {sampled} points, wrote {} ({clamped} clamped)", cloud.len())?;
    Ok(())
}

fn sample(a: &SampleArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let cloud = decode_cloud(&read(&a.cloud)?, a.frame.into())?;
    let picked = match a.strategy {
        StrategyArg::Fps => fps(&cloud, a.k, a.start)?,
        StrategyArg::Rps => rps(&cloud, a.k, seed)?,
    };
    let sub = cloud.select(&picked.indices);
    write(&a.out, encode_cloud(&sub))?;
    writeln!(out, "selected {} of {} points", sub.len(), cloud.len())?;
    Ok(())
}

fn synthcity(a: &SynthCityArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let spec = CitySpec {
        grid_w: a.grid_w,
        grid_h: a.grid_h,
        spacing: a.spacing,
        seed,
        ..CitySpec::default()
    };
    let enc = SectorEncoderSpec {
        sectors: a.sectors,
        radius: a.radius,
    };
    let view = GroundViewParams {
        noise_sigma: a.noise,
        dropout: a.dropout,
    };
    let city = generate_city(&spec)?;
    let cloud = sample_mesh(&city.mesh, a.density, sub_seed(seed, 1))?;
    let train = paired_features(&cloud, &city.graph, &enc, &view, sub_seed(seed, 2))?;
    let test = paired_features(&cloud, &city.graph, &enc, &view, sub_seed(seed, 3))?;
    let routes = generate_routes(&city.graph, a.routes, a.route_length, sub_seed(seed, 4))?;
    fs::create_dir_all(&a.out_dir)?;
    let d = &a.out_dir;
    write(&d.join("city.mesh"), format_mesh(&city.mesh))?;
    write(&d.join("graph.jsonl"), crate::localizer::format_graph(&city.graph))?;
    write(&d.join("cloud.p25d"), encode_cloud(&cloud))?;
    write(&d.join("train_features.bin"), encode_features(&train))?;
    write(&d.join("query_features.bin"), encode_features(&test))?;
    write(&d.join("routes.txt"), format_routes(&routes))?;
    writeln!(
        out,
        "city {}x{}: {} locations, {} triangles, {} points, {} routes",
        a.grid_w,
        a.grid_h,
        city.graph.len(),
        city.mesh.triangles.len(),
        cloud.len(),
        routes.len()
    )?;
    Ok(())
}

fn train(a: &TrainArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let data = decode_features(&read(&a.features)?)?;
    let mut enc = LinearEncoderPair::new(data.ground.ncols(), data.map.ncols(), a.dim, seed, a.shared_init)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        jitter_sigma: a.jitter,
        seed: sub_seed(seed, 1),
        loss: LossConfig {
            tau: a.tau,
            lambda1: a.lambda1,
            lambda2: a.lambda2,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let trace = toy_train(&data, &mut enc, &cfg)?;
    write(&a.out, encode_checkpoint(&enc))?;
    if let Some(p) = &a.trace {
        write(p, loss_trace_csv(&trace))?;
    }
    let first = trace.first().map_or(f64::NAN, |e| e.losses.total);
    let last = trace.last().map_or(f64::NAN, |e| e.losses.total);
    writeln!(out, "trained {} epochs: L_total {first:.6} -> {last:.6}", a.epochs)?;
    Ok(())
}

fn index(a: &IndexArgs, out: &mut dyn Write) -> Result<()> {
    let data = decode_features(&read(&a.features)?)?;
    let enc = decode_checkpoint(&read(&a.model)?)?;
    let emb = match a.side {
        SideArg::Map => enc.embed_map(data.map.view())?,
        SideArg::Ground => enc.embed_ground(data.ground.view())?,
    };
    let index = EmbeddingIndex::new(data.ids.clone(), emb, a.normalize)?;
    write(&a.out, encode_index(&index))?;
    writeln!(out, "indexed {} vectors of dim {}", index.len(), index.dim())?;
    Ok(())
}

fn query(a: &QueryArgs, out: &mut dyn Write) -> Result<()> {
    let db = decode_index(&read(&a.index)?, false)?;
    let print = |out: &mut dyn Write, q: ndarray::ArrayView1<f64>| -> Result<()> {
        for (rank, n) in db.knn_query(q, a.k)?.iter().enumerate() {
            writeln!(out, "{}\t{}\t{:.6}", rank + 1, n.id, n.distance)?;
        }
        Ok(())
    };
    if let Some(v) = &a.vector {
        return print(out, ndarray::ArrayView1::from(v.as_slice()));
    }
    let Some(qpath) = &a.queries else {
        return Err(invalid("query needs --vector or --queries"));
    };
    let queries = decode_index(&read(qpath)?, false)?;
    if let Some(id) = a.id {
        let row = queries.ids().iter().position(|&q| q == id).ok_or(Error::UnknownLocation(id))?;
        return print(out, queries.row(row));
    }
    let tops = [TopK::Count(1), TopK::Count(5), TopK::Count(10), TopK::Percent(1.0)];
    let recall = recall_curve(&db, queries.vectors(), queries.ids(), &tops)?;
    let rows: Vec<(usize, f64)> = tops.iter().map(|t| t.resolve(db.len())).zip(recall.iter().copied()).collect();
    writeln!(out, "top1 {:.6} top5 {:.6} top10 {:.6} top1% {:.6}", recall[0], recall[1], recall[2], recall[3])?;
    if let Some(p) = &a.recall_out {
        write(p, recall_csv(&rows))?;
    }
    Ok(())
}

fn route_eval(a: &RouteEvalArgs, out: &mut dyn Write) -> Result<()> {
    let graph = parse_graph(&read_text(&a.graph)?)?;
    let db = decode_index(&read(&a.index)?, false)?;
    let queries = decode_index(&read(&a.queries)?, false)?;
    let walks = parse_routes(&read_text(&a.routes)?)?;
    let seqs = walks
        .iter()
        .map(|w| QuerySequence::from_walk(w, &queries))
        .collect::<Result<Vec<_>>>()?;
    let cfg = RouteConfig {
        cull_fraction: a.cull_fraction,
        floor: if a.no_cull { None } else { Some(a.floor) },
        window: a.window,
        score: match a.score {
            ScoreArg::Full => ScoreMode::FullHistory,
            ScoreArg::Window => ScoreMode::WindowOnly,
        },
    };
    let traces = evaluate_route_traces(&graph, &db, &seqs, cfg)?;
    let curve = success_curve(&traces);
    write(&a.out, success_curve_csv(&curve))?;
    if let Some(p) = &a.trace_out {
        let mut s = String::from("route,step,success\n");
        for (r, tr) in traces.iter().enumerate() {
            for (t, ok) in tr.iter().enumerate() {
                s.push_str(&format!("{r},{},{}\n", t + 1, u8::from(*ok)));
            }
        }
        write(p, s)?;
    }
    if let Some(last) = curve.last() {
        writeln!(out, "{} routes, success at step {}: {last:.6}", seqs.len(), curve.len())?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let cfg = LossConfig {
        tau: a.tau,
        ..LossConfig::default()
    };
    let r = gradient_check(a.batches, a.batch, a.dim, a.step, &cfg, seed)?;
    let report = format!(
        "batches,entries,max_abs_error,max_rel_error,tolerance,pass\n{},{},{:e},{:e},{:e},{}\n",
        r.batches,
        r.entries,
        r.max_abs_error,
        r.max_rel_error,
        a.tolerance,
        r.max_rel_error < a.tolerance
    );
    if let Some(p) = &a.out {
        write(p, &report)?;
    }
    write!(out, "{report}")?;
    if r.max_rel_error < a.tolerance {
        Ok(())
    } else {
        Err(invalid(format!(
            "max relative error {:e} exceeds {:e}",
            r.max_rel_error, a.tolerance
        )))
    }
}
