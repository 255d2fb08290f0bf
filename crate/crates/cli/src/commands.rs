use std::fs;
use std::path::{Path, PathBuf};

use demforge::augment::AugmentProfile;
use demforge::bench::{run_bench, BenchConfig};
use demforge::dataset::{
    build_selfsup_split, build_synthetic_split, load_mask, load_role, manifest_base, prediction_paths, read_manifest,
    SelfsupConfig, Split, SyntheticConfig, TargetRole, TilingSpec, ROLE_GT,
};
use demforge::dgm::{read_grid, write_grid};
use demforge::grid::{compose, mask_from_grid};
use demforge::inpaint::{inpaint_with_stats, InpaintConfig, InpaintMethod, InpaintStats};
use demforge::metrics::{aggregate, dynamic_range, evaluate_with_composed, AggregateMetrics, DynamicRange, MetricsReport};
use demforge::sampler::SamplerConfig;
use demforge::terrain::TerrainKind;
use demforge::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{BenchArgs, Cli, Command, EvalArgs, InpaintArgs, Method, SelfsupArgs, SplitArg, SynthArgs, TargetArg, Terrain};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Generation(String),
    Eval(String),
}

impl Failure {
    pub const USAGE: u8 = 2;

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => Self::USAGE,
            Failure::Io(_) => 3,
            Failure::Generation(_) => 4,
            Failure::Eval(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Generation(m) | Failure::Eval(m) => m,
        }
    }

    /// I/O-flavoured errors map to 3, configuration errors to 2, the rest to `otherwise`.
    fn classify(e: Error, otherwise: fn(String) -> Failure) -> Failure {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else if matches!(e, Error::InvalidConfig(_)) {
            Failure::Usage(e.to_string())
        } else {
            otherwise(e.to_string())
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> CmdResult {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth(&cli, a),
        Command::Selfsup(a) => selfsup(&cli, a),
        Command::Inpaint(a) => inpaint_cmd(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Bench(a) => bench(&cli, a),
    })
}

fn out_dir(cli: &Cli) -> CmdResult<&Path> {
    cli.out.as_deref().ok_or_else(|| Failure::Usage("--out DIR is required".into()))
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn method_of(m: Method) -> InpaintMethod {
    match m {
        Method::Diffusion => InpaintMethod::Diffusion,
        Method::FastMarching => InpaintMethod::FastMarching,
    }
}

fn emit<T: Serialize>(cli: &Cli, value: &T, pretty: impl FnOnce() -> String) -> CmdResult {
    if cli.pretty {
        print!("{}", pretty());
    } else {
        let json = serde_json::to_string(value).map_err(|e| Failure::Io(e.to_string()))?;
        println!("{json}");
    }
    Ok(())
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct DatasetSummary {
    manifest: PathBuf,
    records: usize,
    failed: usize,
}

fn synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    let out = out_dir(cli)?;
    if a.count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    let kind = match a.terrain {
        Terrain::Hills => TerrainKind::Hills,
        Terrain::Stairs => TerrainKind::Stairs,
        Terrain::Boxes => TerrainKind::Boxes,
    };
    let augment = match &a.augment {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            let profile: AugmentProfile = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("augment profile {}: {e}", path.display())))?;
            profile.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            Some(profile)
        }
        None => None,
    };
    let mut cfg = SyntheticConfig::new(kind, a.count, split_of(a.split), cli.seed);
    cfg.augment = augment;
    let manifest = build_synthetic_split(&cfg, out).map_err(|e| Failure::classify(e, Failure::Generation))?;
    let summary = DatasetSummary { manifest: out.join(demforge::dataset::MANIFEST_FILE), records: manifest.records.len(), failed: 0 };
    emit(cli, &summary, || format!("{} {} samples written to {}\n", summary.records, kind, out.display()))
}

fn selfsup(cli: &Cli, a: &SelfsupArgs) -> CmdResult {
    let out = out_dir(cli)?;
    let sampler = SamplerConfig {
        r_occ_min: a.rmin,
        r_occ_max: a.rmax,
        o_min_init: a.o_min,
        o_max_init: a.o_max,
        max_iters: a.max_iters,
        ..SamplerConfig::default()
    };
    sampler.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut cfg = SelfsupConfig::new(sampler, cli.seed);
    cfg.target = match a.target {
        TargetArg::Input => TargetRole::Input,
        TargetArg::Gt => TargetRole::Gt,
    };
    let summary = match build_selfsup_split(&a.input, &cfg, out) {
        Ok(s) => s,
        Err(Error::AllSamplesFailed(n)) => {
            eprintln!("succeeded: 0, failed: {n}");
            return Err(Failure::Generation(format!("all {n} samples failed to reach the occlusion window")));
        }
        Err(e) => return Err(Failure::classify(e, Failure::Generation)),
    };
    eprintln!("succeeded: {}, failed: {}", summary.succeeded, summary.failed);
    let report = DatasetSummary {
        manifest: out.join(demforge::dataset::MANIFEST_FILE),
        records: summary.succeeded,
        failed: summary.failed,
    };
    emit(cli, &report, || format!("{} pairs written to {}, {} failed\n", report.records, out.display(), report.failed))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub rec: String,
    pub comp: String,
    pub stats: InpaintStats,
}

fn inpaint_cmd(cli: &Cli, a: &InpaintArgs) -> CmdResult {
    let out = out_dir(cli)?;
    let cfg = InpaintConfig { method: method_of(a.method), radius_px: a.radius, tol: a.tol, max_iters: a.max_iters };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = read_manifest(&a.input).map_err(|e| Failure::classify(e, Failure::Io))?;
    let base = manifest_base(&a.input);
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;

    let records = manifest
        .records
        .par_iter()
        .map(|r| -> Result<PredictionRecord, Error> {
            let role = r.input_role().unwrap_or(ROLE_GT);
            let input = load_role(&base, r, role)?;
            let (rec, stats) = inpaint_with_stats(&input, &cfg)?;
            let comp = compose(&input, &rec, &mask_from_grid(&input))?;
            let (rec_path, comp_path) = prediction_paths(out, &r.id);
            write_grid(&rec, &rec_path)?;
            write_grid(&comp, &comp_path)?;
            let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
            Ok(PredictionRecord { id: r.id.clone(), rec: name(&rec_path), comp: name(&comp_path), stats })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::classify(e, Failure::Io))?;

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).map_err(|e| Failure::Io(e.to_string()))?);
        lines.push('\n');
    }
    let listing = out.join(PREDICTIONS_FILE);
    fs::write(&listing, lines).map_err(|e| Failure::Io(format!("{}: {e}", listing.display())))?;
    let unconverged = records.iter().filter(|r| !r.stats.converged).count();
    let summary = serde_json::json!({
        "predictions": listing,
        "records": records.len(),
        "method": cfg.method,
        "unconverged": unconverged,
    });
    emit(cli, &summary, || format!("{} grids filled with {} into {}\n", records.len(), cfg.method, out.display()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleProblem {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub manifest: PathBuf,
    pub predictions: PathBuf,
    pub dynamic_range: DynamicRange,
    pub aggregate: AggregateMetrics,
    pub samples: Vec<SampleMetrics>,
    /// Samples without any occluded cell that has ground truth.
    pub skipped: Vec<String>,
    pub missing_predictions: Vec<String>,
    pub errors: Vec<SampleProblem>,
}

enum SampleOutcome {
    Scored(MetricsReport),
    Skipped,
    Missing,
    Failed(String),
}

fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let manifest = read_manifest(&a.manifest).map_err(|e| Failure::classify(e, Failure::Io))?;
    let base = manifest_base(&a.manifest);
    if !a.pred.is_dir() {
        return Err(Failure::Io(format!("{} is not a directory", a.pred.display())));
    }
    let gts = manifest
        .records
        .par_iter()
        .map(|r| load_role(&base, r, ROLE_GT))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::classify(e, Failure::Eval))?;
    let range = dynamic_range(gts.iter()).map_err(|e| Failure::Eval(e.to_string()))?;
    if range.is_degenerate() {
        return Err(Failure::Eval(format!("ground-truth dynamic range {} is degenerate", range.0)));
    }

    let outcomes: Vec<SampleOutcome> = manifest
        .records
        .par_iter()
        .zip(&gts)
        .map(|(r, gt)| {
            let (rec_path, comp_path) = prediction_paths(&a.pred, &r.id);
            if !rec_path.is_file() {
                return SampleOutcome::Missing;
            }
            let scored = (|| {
                let input_role = r.input_role().ok_or_else(|| Error::Manifest("no input grid".into()))?;
                let mask_role = r.mask_role().ok_or_else(|| Error::Manifest("no mask grid".into()))?;
                let input = load_role(&base, r, input_role)?;
                let mask = load_mask(&base, r, mask_role)?;
                let rec = read_grid(&rec_path)?;
                let comp = if comp_path.is_file() {
                    read_grid(&comp_path)?
                } else {
                    compose(&input, &rec, &mask_from_grid(&input))?
                };
                evaluate_with_composed(gt, &rec, &comp, &mask, range)
            })();
            match scored {
                Ok(m) => SampleOutcome::Scored(m),
                Err(Error::EmptyEvaluation(_)) => SampleOutcome::Skipped,
                Err(e) => SampleOutcome::Failed(e.to_string()),
            }
        })
        .collect();

    let mut report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        manifest: a.manifest.clone(),
        predictions: a.pred.clone(),
        dynamic_range: range,
        aggregate: aggregate(&[]),
        samples: Vec::new(),
        skipped: Vec::new(),
        missing_predictions: Vec::new(),
        errors: Vec::new(),
    };
    for (r, o) in manifest.records.iter().zip(outcomes) {
        match o {
            SampleOutcome::Scored(metrics) => report.samples.push(SampleMetrics { id: r.id.clone(), metrics }),
            SampleOutcome::Skipped => report.skipped.push(r.id.clone()),
            SampleOutcome::Missing => report.missing_predictions.push(r.id.clone()),
            SampleOutcome::Failed(reason) => report.errors.push(SampleProblem { id: r.id.clone(), reason }),
        }
    }
    let scored: Vec<MetricsReport> = report.samples.iter().map(|s| s.metrics.clone()).collect();
    report.aggregate = aggregate(&scored);

    if let Some(path) = &cli.out {
        write_json_file(path, &report)?;
    }
    if cli.out.is_none() || cli.pretty {
        emit(cli, &report, || pretty_eval(&report))?;
    }

    if !report.missing_predictions.is_empty() || !report.errors.is_empty() {
        for id in &report.missing_predictions {
            eprintln!("missing prediction: {id}");
        }
        for p in &report.errors {
            eprintln!("sample {}: {}", p.id, p.reason);
        }
        return Err(Failure::Eval(format!(
            "{} missing predictions, {} failed samples",
            report.missing_predictions.len(),
            report.errors.len()
        )));
    }
    Ok(())
}

fn pretty_eval(r: &EvalReport) -> String {
    let a = &r.aggregate;
    let fmt = |m: &Option<demforge::metrics::MeanStd>| match m {
        Some(m) => format!("{:.6} ± {:.6}", m.mean, m.std),
        None => "n/a".to_string(),
    };
    format!(
        "samples      {}\nL            {:.4} m\nl1_occ       {}\nmse_occ      {}\npsnr_occ     {} dB ({} infinite)\nssim_rec     {}\nssim_comp    {}\nskipped      {}\nmissing      {}\nerrors       {}\n",
        a.samples,
        r.dynamic_range.0,
        fmt(&a.l1_occ),
        fmt(&a.mse_occ),
        fmt(&a.psnr_occ),
        a.psnr_infinite_samples,
        fmt(&a.ssim_rec),
        fmt(&a.ssim_comp),
        r.skipped.len(),
        r.missing_predictions.len(),
        r.errors.len(),
    )
}

fn bench(cli: &Cli, a: &BenchArgs) -> CmdResult {
    let tiling = TilingSpec { tiles_per_side: a.tiles, tile_px: a.tile_px, out_px: a.out_px };
    if a.tiles * a.tile_px != a.size || a.out_px == 0 || a.out_px > a.tile_px {
        return Err(Failure::Usage(format!(
            "--size {} must equal --tiles x --tile-px and --out-px must lie in 1..={}",
            a.size, a.tile_px
        )));
    }
    if a.repeat == 0 {
        return Err(Failure::Usage("--repeat must be at least 1".into()));
    }
    let cfg = BenchConfig {
        size: a.size,
        tiling,
        method: method_of(a.method),
        repeat: a.repeat,
        max_tile_occlusion: a.max_occlusion,
        seed: cli.seed,
    };
    let report = run_bench(&cfg).map_err(|e| Failure::classify(e, Failure::Generation))?;
    if let Some(path) = &cli.out {
        write_json_file(path, &report)?;
    }
    emit(cli, &report, || {
        let m = &report.mean_stage_ms;
        format!(
            "rate        {:.1} Hz mean, {:.1} Hz p95\ntiles       {}/{} inpainted\ntile        {:.3} ms\nfilter      {:.3} ms\ninpaint     {:.3} ms\nstitch      {:.3} ms\ntotal       {:.3} ms\n",
            report.hz_mean,
            report.hz_p95,
            report.tiles_inpainted,
            report.tiles_total,
            m.tile_ms,
            m.filter_ms,
            m.inpaint_ms,
            m.stitch_ms,
            m.total_ms
        )
    })
}
