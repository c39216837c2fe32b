use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use starpoly::encode::{object_probability, radial_distances_with, subsample, GridSpec, MarchEnd};
use starpoly::error::Error;
use starpoly::losses::{loss_total, LossWeights};
use starpoly::matching::accuracy_curve;
use starpoly::nms::{extract_candidates, run_nms, CandidateSet, Criterion, NmsConfig};
use starpoly::pipeline::{bench_nms, fidelity, fidelity_csv, render, RayConfig, RenderPolicy};
use starpoly::polyset::PolySet;
use starpoly::rays::{estimate_anisotropy, Anisotropy, RayKind, RaySystem};
use starpoly::synth::{generate, CloudSpec, SceneSpec, ShapeKind};
use starpoly::volumes::{read_volume, write_field, write_labels, LabelVolume};
use starpoly::FORMAT_VERSION;

const ENCODE_FILE: &str = "encode.json";
const RAYS_FILE: &str = "rays.json";

#[derive(Parser)]
#[command(name = "starpoly", version, about = "Star-convex polyhedra: encoding, NMS, rendering and evaluation")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic label volume and its ground-truth parameters.
    Synth(SynthArgs),
    /// Encode a label volume into object probabilities and radial distances.
    Encode(EncodeArgs),
    /// Reference training losses for predicted fields.
    Loss(LossArgs),
    /// Extract candidates and run non-maximum suppression.
    Nms(NmsArgs),
    /// Rasterize a polyhedra set into a label volume.
    Render(RenderArgs),
    /// Matched accuracy of a prediction against ground truth.
    Eval(EvalArgs),
    /// Reconstruction IoU for a sweep of ray configurations.
    Fidelity(FidelityArgs),
    /// Time NMS on a synthetic candidate cloud with and without the cascade.
    BenchNms(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Fibonacci,
    Equidistant,
}

impl From<KindArg> for RayKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Fibonacci => RayKind::Fibonacci,
            KindArg::Equidistant => RayKind::Equidistant,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MarchArg {
    Step,
    FaceCrossing,
}

impl From<MarchArg> for MarchEnd {
    fn from(m: MarchArg) -> Self {
        match m {
            MarchArg::Step => MarchEnd::Step,
            MarchArg::FaceCrossing => MarchEnd::FaceCrossing,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Ellipsoid,
    StarBlob,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    HigherProb,
    FirstKept,
}

/// Comma-separated triple such as `64,96,96`.
#[derive(Clone, Copy, Debug)]
struct Triple<T>([T; 3]);

impl<T: FromStr + Copy> FromStr for Triple<T> {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<T> = s
            .split(',')
            .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse '{p}'")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [a, b, c] => Ok(Triple([a, b, c])),
            _ => Err(format!("expected three comma-separated values, got '{s}'")),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output label volume directory.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth parameter file (default: `<out>/truth.json`).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Volume shape `Z,Y,X`.
    #[arg(long, default_value = "64,96,96")]
    shape: Triple<usize>,
    #[arg(long, default_value_t = 10)]
    n_objects: usize,
    #[arg(long, value_enum, default_value = "ellipsoid")]
    kind: ShapeArg,
    #[arg(long, default_value_t = 8.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 14.0)]
    radius_max: f64,
    /// Per-axis squeeze `az,ay,ax`.
    #[arg(long, default_value = "1,1,1")]
    aspect: Triple<f64>,
    /// Minimum center distance as a fraction of summed radii.
    #[arg(long, default_value_t = 1.0)]
    min_separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RayArgs {
    #[arg(long, value_enum, default_value = "fibonacci")]
    kind: KindArg,
    /// Ray count; equidistant grids use the nearest feasible count.
    #[arg(long, default_value_t = 96)]
    n_rays: usize,
    /// Anisotropy `sx,sy,sz`.
    #[arg(long, conflicts_with = "anisotropy_from")]
    anisotropy: Option<Triple<f64>>,
    /// Estimate the anisotropy from these label volumes (repeatable).
    #[arg(long)]
    anisotropy_from: Vec<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Output directory; receives `prob/`, `dist/`, `rays.json` and `encode.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    rays: RayArgs,
    /// Prediction grid factors `gz,gy,gx`.
    #[arg(long, default_value = "1,1,1")]
    grid: Triple<usize>,
    #[arg(long, value_enum, default_value = "face-crossing")]
    march: MarchArg,
}

#[derive(Args)]
struct LossArgs {
    /// Ground-truth object probability volume.
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    p_hat: PathBuf,
    /// Ground-truth distance volume.
    #[arg(long)]
    d: PathBuf,
    #[arg(long)]
    d_hat: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda_d: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda_reg: f64,
}

#[derive(Args)]
struct NmsArgs {
    /// Directory written by `encode`; supplies defaults for the inputs below.
    #[arg(long)]
    encoded: Option<PathBuf>,
    /// Predicted object probability volume.
    #[arg(long)]
    prob: Option<PathBuf>,
    /// Predicted distance volume.
    #[arg(long)]
    dist: Option<PathBuf>,
    /// Ray system JSON.
    #[arg(long)]
    rays: Option<PathBuf>,
    /// Grid factors of the predicted fields (default: from `encode.json`, else 1,1,1).
    #[arg(long)]
    grid: Option<Triple<usize>>,
    /// Polyhedra-set file of candidates, instead of dense fields.
    #[arg(long, conflicts_with_all = ["encoded", "prob", "dist", "rays"])]
    candidates: Option<PathBuf>,
    /// Output polyhedra-set file of kept candidates.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    prob_thresh: f64,
    #[arg(long, default_value_t = 0.4)]
    nms_thresh: f64,
    /// `smaller` (intersection over the smaller volume) or `iou`.
    #[arg(long, default_value = "smaller")]
    criterion: String,
    #[arg(long)]
    no_cascade: bool,
    /// Also write the run statistics here.
    #[arg(long)]
    stats_json: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    polyset: PathBuf,
    /// Output label volume directory.
    #[arg(long)]
    out: PathBuf,
    /// Output shape `Z,Y,X` (default: the set's source shape).
    #[arg(long)]
    shape: Option<Triple<usize>>,
    #[arg(long, value_enum, default_value = "higher-prob")]
    policy: PolicyArg,
}

const DEFAULT_TAUS: &str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_TAUS)]
    taus: Vec<f64>,
    /// Also write one CSV row per threshold.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FidelityArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fibonacci,equidistant")]
    kinds: Vec<KindArg>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,96")]
    n_rays: Vec<usize>,
    /// Anisotropy `sx,sy,sz` to sweep (repeatable; default 1,1,1).
    #[arg(long)]
    anisotropy: Vec<Triple<f64>>,
    /// Add the anisotropy estimated from the labels to the sweep.
    #[arg(long)]
    auto_anisotropy: bool,
    #[arg(long, value_enum, default_value = "face-crossing")]
    march: MarchArg,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 12000)]
    n_candidates: usize,
    #[arg(long, default_value = "1141,140,140")]
    shape: Triple<usize>,
    #[arg(long, default_value_t = 20)]
    per_object: usize,
    #[arg(long, default_value_t = 5.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 9.0)]
    radius_max: f64,
    #[arg(long, default_value_t = 2.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 96)]
    n_rays: usize,
    #[arg(long, default_value_t = 0.4)]
    nms_thresh: f64,
    #[arg(long, default_value = "smaller")]
    criterion: String,
    /// Skip the exact-only comparison run.
    #[arg(long)]
    no_compare: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = panic::catch_unwind(panic::AssertUnwindSafe(|| run(cli)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}

/// 2 for bad input, 3 for internal failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Degenerate(_)) => 3,
        Some(_) => 2,
        None if e.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Loss(a) => cmd_loss(a),
        Cmd::Nms(a) => cmd_nms(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Fidelity(a) => cmd_fidelity(a),
        Cmd::BenchNms(a) => cmd_bench(a),
    }
}

/// `{version, config, ...body}`.
fn report(config: impl Serialize, body: impl Serialize) -> Result<Value> {
    let mut out = json!({ "version": FORMAT_VERSION, "config": config });
    match serde_json::to_value(body)? {
        Value::Object(m) => {
            for (k, v) in m {
                if k != "version" && k != "config" {
                    out[k.as_str()] = v;
                }
            }
        }
        other => out["result"] = other,
    }
    Ok(out)
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn read_labels(dir: &Path) -> Result<LabelVolume> {
    Ok(read_volume(dir)
        .and_then(|v| v.into_labels())
        .with_context(|| format!("reading label volume {}", dir.display()))?)
}

fn read_field(dir: &Path, what: &str) -> Result<starpoly::volumes::Volume<f32>> {
    let v = read_volume(dir).with_context(|| format!("reading {what} volume {}", dir.display()))?;
    let meta = v.meta().clone();
    let out = if meta.channels == 0 { v.into_scalar() } else { v.into_dist() };
    Ok(out.with_context(|| format!("{what} volume {}", dir.display()))?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        shape: a.shape.0,
        n_objects: a.n_objects,
        shape_kind: match a.kind {
            ShapeArg::Ellipsoid => ShapeKind::Ellipsoid,
            ShapeArg::StarBlob => ShapeKind::StarBlob,
        },
        radius_range: (a.radius_min, a.radius_max),
        aspect: a.aspect.0,
        min_separation: a.min_separation,
        seed: a.seed,
    };
    let (labels, objects) = generate(&spec)?;
    write_labels(&labels, &a.out)?;
    let truth_path = a.truth.unwrap_or_else(|| a.out.join("truth.json"));
    let truth = report(&spec, json!({ "objects": objects }))?;
    write_json(&truth_path, &truth)?;
    print_json(&report(
        &spec,
        json!({ "out": a.out, "truth": truth_path, "objects": objects.len() }),
    )?)
}

fn resolve_rays(a: &RayArgs) -> Result<(RaySystem, Option<Value>)> {
    let (anisotropy, estimate) = if let Some(t) = a.anisotropy {
        (Anisotropy::try_from(t.0)?, None)
    } else if !a.anisotropy_from.is_empty() {
        let vols = a.anisotropy_from.iter().map(|p| read_labels(p)).collect::<Result<Vec<_>>>()?;
        let est = estimate_anisotropy(&vols.iter().collect::<Vec<_>>())?;
        (est.anisotropy, Some(serde_json::to_value(est)?))
    } else {
        (Anisotropy::ISOTROPIC, None)
    };
    let cfg = RayConfig {
        kind: a.kind.into(),
        n: a.n_rays,
        anisotropy,
    };
    Ok((cfg.build()?, estimate))
}

#[derive(Serialize)]
struct EncodeConfig {
    labels: PathBuf,
    kind: RayKind,
    requested_n: usize,
    n: usize,
    anisotropy: Anisotropy,
    anisotropy_estimate: Option<Value>,
    grid: GridSpec,
    march: MarchEnd,
    source_shape: [usize; 3],
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let (rays, estimate) = resolve_rays(&a.rays)?;
    let grid = GridSpec::new(a.grid.0)?;
    let end: MarchEnd = a.march.into();
    let prob = subsample(&object_probability(&labels)?, grid)?;
    let dist = subsample(&radial_distances_with(&labels, &rays, end)?, grid)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_field(&prob, a.out.join("prob"))?;
    write_field(&dist, a.out.join("dist"))?;
    fs::write(a.out.join(RAYS_FILE), serde_json::to_string_pretty(&rays)?)
        .with_context(|| format!("writing {}", a.out.join(RAYS_FILE).display()))?;
    let cfg = EncodeConfig {
        labels: a.labels,
        kind: rays.kind,
        requested_n: a.rays.n_rays,
        n: rays.n,
        anisotropy: rays.anisotropy,
        anisotropy_estimate: estimate,
        grid,
        march: end,
        source_shape: labels.shape(),
    };
    let out = report(&cfg, json!({ "out": a.out, "grid_shape": prob.shape() }))?;
    write_json(&a.out.join(ENCODE_FILE), &out)?;
    print_json(&out)
}

fn cmd_loss(a: LossArgs) -> Result<()> {
    let w = LossWeights::new(a.lambda_d, a.lambda_reg)?;
    let p = read_field(&a.p, "probability")?;
    let p_hat = read_field(&a.p_hat, "predicted probability")?;
    let d = read_field(&a.d, "distance")?;
    let d_hat = read_field(&a.d_hat, "predicted distance")?;
    let loss = loss_total(&p, &p_hat, &d, &d_hat, w)?;
    let cfg = json!({
        "p": a.p, "p_hat": a.p_hat, "d": a.d, "d_hat": a.d_hat,
        "lambda_d": w.lambda_d, "lambda_reg": w.lambda_reg,
    });
    print_json(&report(cfg, loss)?)
}

fn encoded_grid(dir: &Path) -> Result<Option<GridSpec>> {
    let path = dir.join(ENCODE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let grid = serde_json::from_value(v["config"]["grid"].clone()).map_err(Error::from)?;
    Ok(Some(grid))
}

fn load_candidates(a: &NmsArgs) -> Result<(Arc<RaySystem>, CandidateSet)> {
    if let Some(path) = &a.candidates {
        let set = PolySet::read(path).with_context(|| format!("reading {}", path.display()))?;
        let (rays, polys) = set.polyhedra()?;
        let polys = polys.into_iter().filter(|p| p.prob() >= a.prob_thresh).collect();
        let cands = CandidateSet::new(polys, set.grid, a.prob_thresh, set.source_shape)?;
        return Ok((rays, cands));
    }
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
        explicit
            .clone()
            .or_else(|| a.encoded.as_ref().map(|d| d.join(name)))
            .ok_or_else(|| invalid(format!("missing input: pass --{} or --encoded", name.trim_end_matches(".json"))))
    };
    let prob = read_field(&pick(&a.prob, "prob")?, "probability")?;
    let dist = read_field(&pick(&a.dist, "dist")?, "distance")?;
    let rays_path = pick(&a.rays, RAYS_FILE)?;
    let text = fs::read_to_string(&rays_path).with_context(|| format!("reading {}", rays_path.display()))?;
    let rays: RaySystem = serde_json::from_str(&text).map_err(Error::from)?;
    rays.validate()?;
    let grid = match (a.grid, &a.encoded) {
        (Some(g), _) => GridSpec::new(g.0)?,
        (None, Some(dir)) => encoded_grid(dir)?.unwrap_or(GridSpec::DENSE),
        (None, None) => GridSpec::DENSE,
    };
    let rays = Arc::new(rays);
    let cands = extract_candidates(&prob, &dist, &rays, grid, a.prob_thresh)?;
    Ok((rays, cands))
}

fn cmd_nms(a: NmsArgs) -> Result<()> {
    let cfg = NmsConfig {
        overlap_thresh: a.nms_thresh,
        criterion: Criterion::from_str(&a.criterion)?,
        use_cascade: !a.no_cascade,
        raster_budget: None,
    };
    cfg.validate()?;
    if !(0.0..=1.0).contains(&a.prob_thresh) {
        return Err(invalid(format!("--prob-thresh {} outside [0, 1]", a.prob_thresh)));
    }
    let (rays, cands) = load_candidates(&a)?;
    let (kept, stats) = run_nms(&cands, &cfg)?;
    PolySet::from_polyhedra(&rays, cands.source_shape, cands.grid, &kept).write(&a.out)?;
    let config = json!({
        "input": a.candidates.as_ref().or(a.encoded.as_ref()),
        "prob_thresh": a.prob_thresh,
        "nms": cfg,
        "grid": cands.grid,
        "source_shape": cands.source_shape,
    });
    let out = report(config, json!({ "out": a.out, "stats": stats }))?;
    if let Some(path) = &a.stats_json {
        write_json(path, &out)?;
    }
    print_json(&out)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let set = PolySet::read(&a.polyset).with_context(|| format!("reading {}", a.polyset.display()))?;
    let (_, polys) = set.polyhedra()?;
    let shape = a.shape.map(|t| t.0).unwrap_or(set.source_shape);
    let policy = match a.policy {
        PolicyArg::HigherProb => RenderPolicy::HigherProb,
        PolicyArg::FirstKept => RenderPolicy::FirstKept,
    };
    let (labels, rep) = render(&polys, shape, policy)?;
    for i in &rep.skipped {
        eprintln!("warning: polyhedron {i} lies outside the volume; skipped");
    }
    write_labels(&labels, &a.out)?;
    let cfg = json!({ "polyset": a.polyset, "shape": shape, "policy": policy });
    print_json(&report(cfg, json!({ "out": a.out, "render": rep }))?)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let gt = read_labels(&a.gt)?;
    let pred = read_labels(&a.pred)?;
    let rep = accuracy_curve(&gt, &pred, &a.taus)?;
    if let Some(path) = &a.csv {
        fs::write(path, rep.csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let cfg = json!({ "gt": a.gt, "pred": a.pred, "taus": a.taus });
    print_json(&report(cfg, rep)?)
}

fn cmd_fidelity(a: FidelityArgs) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let mut anis = a
        .anisotropy
        .iter()
        .map(|t| Anisotropy::try_from(t.0))
        .collect::<starpoly::error::Result<Vec<_>>>()?;
    let mut estimate = None;
    if a.auto_anisotropy {
        let est = estimate_anisotropy(&[&labels])?;
        anis.push(est.anisotropy);
        estimate = Some(est);
    }
    if anis.is_empty() {
        anis.push(Anisotropy::ISOTROPIC);
    }
    let mut configs = Vec::new();
    for &s in &anis {
        for &k in &a.kinds {
            for &n in &a.n_rays {
                configs.push(RayConfig {
                    kind: k.into(),
                    n,
                    anisotropy: s,
                });
            }
        }
    }
    let end: MarchEnd = a.march.into();
    let rows = fidelity(&labels, &configs, end)?;
    if let Some(path) = &a.csv {
        fs::write(path, fidelity_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    }
    let cfg = json!({
        "labels": a.labels,
        "configs": configs,
        "march": end,
        "anisotropy_estimate": estimate,
    });
    print_json(&report(cfg, json!({ "rows": rows }))?)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cloud = CloudSpec {
        shape: a.shape.0,
        n_candidates: a.n_candidates,
        per_object: a.per_object,
        radius_range: (a.radius_min, a.radius_max),
        jitter: a.jitter,
        seed: a.seed,
    };
    let cfg = NmsConfig {
        overlap_thresh: a.nms_thresh,
        criterion: Criterion::from_str(&a.criterion)?,
        ..NmsConfig::default()
    };
    let rep = bench_nms(&cloud, a.n_rays, &cfg, !a.no_compare)?;
    let config = json!({ "cloud": &rep.cloud, "n_rays": rep.n_rays, "nms": rep.config, "compare": !a.no_compare });
    print_json(&report(config, &rep)?)
}
