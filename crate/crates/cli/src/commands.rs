use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ptl_core::gap::{score_pool, MultiScaleFeatures, ScaleMode, CANONICAL_SCALE, DEFAULT_SCALES};
use ptl_core::gaussian::{DEFAULT_DIM, DEFAULT_RIDGE_SCALE};
use ptl_core::io::json::{read_json, write_atomic, write_json_atomic};
use ptl_core::io::{
    read_features, read_metadata, read_scores, write_features, write_metadata, write_scores, AdapterEndpoint,
    SubprocessBackend, DEFAULT_ADAPTER_TIMEOUT,
};
use ptl_core::ptl::{run, PtlState, DEFAULT_CATEGORY, DEFAULT_ITERATIONS};
use ptl_core::sampler::{DEFAULT_N, DEFAULT_TAU};
use ptl_core::synth::report::{
    report_metadata_spread, state_gap_histograms, write_csv, HISTOGRAM_HEADER, SPREAD_HEADER,
};
use ptl_core::synth::{run_synthetic, SyntheticWorld};
use ptl_core::{fit_gaussian, FeatureSet, GaussianClassModel, PtlConfig, SamplerConfig, SelectionManifest};
use serde::Serialize;

use crate::args::{Cli, Command, FitArgs, GapArgs, LoopArgs, ReportArgs, ReportKind, SelectArgs, SynthArgs};
use crate::config::FileConfig;
use crate::error::{CliError, ResultExt};
use crate::lock::SnapshotLock;

const DEFAULT_BINS: usize = 20;

struct Ctx {
    seed: Option<u64>,
    file: FileConfig,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.or(self.file.seed).unwrap_or(0)
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        file: FileConfig::load(cli.config.as_deref())?,
    };
    match cli.command {
        Command::Fit(a) => fit(&ctx, a),
        Command::Gap(a) => gap(&ctx, a),
        Command::Select(a) => select(&ctx, a),
        Command::Iterate(a) => drive(&ctx, a, true),
        Command::Run(a) => drive(&ctx, a, false),
        Command::Synth(a) => synth(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn csv_bytes<R: Serialize>(rows: &[R], header: &[&str]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows, header).data()?;
    Ok(buf)
}

fn fit(ctx: &Ctx, a: FitArgs) -> Result<(), CliError> {
    let file = read_features(&a.features).data_ctx(a.features.display())?;
    let category = a
        .category
        .or_else(|| ctx.file.category.clone())
        .unwrap_or_else(|| DEFAULT_CATEGORY.to_owned());
    let members = file.vectors.iter().map(|v| v.cast::<f64>()).collect();
    let set = FeatureSet::new(category, file.dim, members).data()?;
    let ridge = a.ridge.or(ctx.file.ridge).unwrap_or(DEFAULT_RIDGE_SCALE);
    if !(ridge >= 0.0) {
        return Err(CliError::usage("ridge must be >= 0"));
    }
    let model = fit_gaussian(&set, ridge).data()?;
    log::info!(
        "fitted {} members, dim {}, ridge scale {}",
        model.sample_count,
        model.dim(),
        model.ridge_scale_used
    );
    write_json_atomic(&a.out, &model).data()
}

/// Read every `*.ptlf` in `dir` and group the vectors by instance.
fn read_pool_dir(dir: &Path) -> Result<(Vec<u32>, Vec<MultiScaleFeatures<f64>>), CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .data_ctx(dir.display())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ptlf"))
        .collect();
    paths.sort();
    let mut by_id: BTreeMap<u64, MultiScaleFeatures<f64>> = BTreeMap::new();
    let mut scales = Vec::new();
    for path in paths {
        let file = read_features(&path).data_ctx(path.display())?;
        if file.scale == CANONICAL_SCALE || scales.contains(&file.scale) {
            return Err(CliError {
                exit: crate::error::Exit::Data,
                error: anyhow::anyhow!("{}: scale {} is canonical or repeated", path.display(), file.scale),
            });
        }
        scales.push(file.scale);
        for v in file.vectors {
            let entry = by_id
                .remove(&v.instance_id)
                .unwrap_or_else(|| MultiScaleFeatures::new(v.instance_id));
            by_id.insert(v.instance_id, entry.with_scale(file.scale, v.cast::<f64>().values));
        }
    }
    scales.sort_unstable();
    Ok((scales, by_id.into_values().collect()))
}

fn gap(ctx: &Ctx, a: GapArgs) -> Result<(), CliError> {
    let model: GaussianClassModel<f64> = read_json(&a.model).data_ctx(a.model.display())?;
    let (found, pool) = read_pool_dir(&a.pool)?;
    let scales = a.scales.or_else(|| ctx.file.scales.clone()).unwrap_or(found);
    if scales.is_empty() {
        return Err(CliError::usage("no scales given and none found in the pool directory"));
    }
    let mode = if a.partial || ctx.file.partial == Some(true) {
        ScaleMode::Partial
    } else {
        ScaleMode::Strict
    };
    let scores = score_pool(&model, &pool, &scales, mode).data()?;
    let mut buf = Vec::new();
    write_scores(&mut buf, &scores).data()?;
    write_atomic(&a.out, &buf).data()
}

fn select(ctx: &Ctx, a: SelectArgs) -> Result<(), CliError> {
    let tau = a.tau.or(ctx.file.tau).unwrap_or(DEFAULT_TAU);
    let n = a.n.or(ctx.file.n).unwrap_or(DEFAULT_N);
    let cfg = SamplerConfig::new(tau, n, ctx.seed()).usage()?;
    let scores = read_scores(&a.scores).data_ctx(a.scores.display())?;
    let manifest = SelectionManifest::select(a.iteration, &scores, &cfg, None).data()?;
    write_json_atomic(&a.out, &manifest).data()
}

fn loop_config(ctx: &Ctx, a: &LoopArgs, dim: usize) -> PtlConfig {
    let f = &ctx.file;
    PtlConfig {
        sampler: SamplerConfig {
            tau: a.tau.or(f.tau).unwrap_or(DEFAULT_TAU),
            n: a.n.or(f.n).unwrap_or(DEFAULT_N),
            seed: ctx.seed(),
        },
        scales: a.scales.clone().or_else(|| f.scales.clone()).unwrap_or(DEFAULT_SCALES.to_vec()),
        scale_mode: if a.partial || f.partial == Some(true) {
            ScaleMode::Partial
        } else {
            ScaleMode::Strict
        },
        iterations: a.iterations.or(f.iterations).unwrap_or(DEFAULT_ITERATIONS),
        ridge_scale: a.ridge.or(f.ridge).unwrap_or(DEFAULT_RIDGE_SCALE),
        dim,
        gamma: a.gamma.or(f.gamma),
    }
}

fn initial_state(ctx: &Ctx, a: &LoopArgs) -> Result<(PtlState, Option<usize>), CliError> {
    if a.state.exists() {
        let state = PtlState::load(&a.state)?;
        let dim = state.model.as_ref().map(|m| m.dim());
        return Ok((state, dim));
    }
    let (Some(real), Some(pool)) = (&a.init_real, &a.init_pool) else {
        return Err(CliError::usage(format!(
            "{} does not exist; pass --init-real and --init-pool to create it",
            a.state.display()
        )));
    };
    let real_file = read_features(real).data_ctx(real.display())?;
    let metadata = read_metadata(pool).data_ctx(pool.display())?;
    let category = ctx.file.category.clone().unwrap_or_else(|| DEFAULT_CATEGORY.to_owned());
    let state = PtlState::new(
        category,
        real_file.vectors.iter().map(|v| v.instance_id),
        metadata.into_iter().map(|m| (m.instance_id, Some(m))),
    )?;
    Ok((state, Some(real_file.dim)))
}

fn endpoint(flag: &Option<String>, file: &Option<String>, name: &str) -> Result<AdapterEndpoint, CliError> {
    flag.as_deref()
        .or(file.as_deref())
        .and_then(AdapterEndpoint::parse)
        .ok_or_else(|| CliError::usage(format!("--{name} <CMD> is required")))
}

fn drive(ctx: &Ctx, a: LoopArgs, one_step: bool) -> Result<(), CliError> {
    let embedder = endpoint(&a.embedder, &ctx.file.embedder, "embedder")?;
    let transformer = endpoint(&a.transformer, &ctx.file.transformer, "transformer")?;
    let _lock = SnapshotLock::acquire(&a.state).data()?;

    let (state, known_dim) = initial_state(ctx, &a)?;
    let dim = a.dim.or(ctx.file.dim).or(known_dim).unwrap_or(DEFAULT_DIM);
    let mut cfg = loop_config(ctx, &a, dim);
    if one_step {
        cfg.iterations = state.iteration + 1;
    }

    let work_dir = a.work_dir.clone().or_else(|| ctx.file.work_dir.clone()).unwrap_or_else(|| {
        let mut name = a.state.file_name().unwrap_or_default().to_os_string();
        name.push(".work");
        a.state.with_file_name(name)
    });
    let timeout = a
        .timeout
        .or(ctx.file.timeout)
        .map_or(DEFAULT_ADAPTER_TIMEOUT, Duration::from_secs);
    let mut embedder = SubprocessBackend::new(embedder, &work_dir).with_timeout(timeout);
    let mut transformer = SubprocessBackend::new(transformer, &work_dir).with_timeout(timeout);

    let out = run(&state, &cfg, &mut embedder, &mut transformer, Some(&a.state))?;
    log::info!(
        "{} iteration(s) run, now at iteration {} ({:?}), |R| = {}, |V| = {}",
        out.iterations_run,
        out.state.iteration,
        out.stop_reason,
        out.state.real_set.len(),
        out.state.virtual_pool.len()
    );
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let mut syn = f.synthetic.clone().unwrap_or_default();
    syn.seed = ctx.seed.or(f.seed).unwrap_or(syn.seed);
    syn.real_count = a.real_count.unwrap_or(syn.real_count);
    syn.kappa = a.kappa.unwrap_or(syn.kappa);
    syn.gamma = a.gamma.or(f.gamma).unwrap_or(syn.gamma);
    syn.dim = a.dim.or(f.dim).unwrap_or(syn.dim);
    if let Some(scales) = &f.scales {
        syn.scales = scales.clone();
    }
    let world = Arc::new(SyntheticWorld::generate(&syn).usage()?);

    let out = &a.out;
    let pool_dir = out.join("pool");
    let manifest_dir = out.join("manifests");
    let report_dir = out.join("reports");
    for d in [out, &pool_dir, &manifest_dir, &report_dir] {
        fs::create_dir_all(d).data_ctx(d.display())?;
    }
    write_json_atomic(out.join("synthetic.json"), &syn).data()?;
    write_features(out.join("real.ptlf"), CANONICAL_SCALE, world.dim(), world.real_features()).data()?;
    write_metadata(out.join("metadata.csv"), world.pool_metadata()).data()?;
    for &scale in &syn.scales {
        let vectors: Vec<_> = world
            .pool_metadata()
            .iter()
            .map(|m| {
                let values = world.virtual_at_scale(m.instance_id, scale).expect("scale rendered").to_vec();
                ptl_core::FeatureVector::new(m.instance_id, values)
            })
            .collect();
        write_features(pool_dir.join(format!("scale_{scale}.ptlf")), scale, world.dim(), &vectors).data()?;
    }

    let cfg = PtlConfig {
        sampler: SamplerConfig::new(
            a.tau.or(f.tau).unwrap_or(DEFAULT_TAU),
            a.n.or(f.n).unwrap_or(DEFAULT_N),
            syn.seed,
        )
        .usage()?,
        scales: syn.scales.clone(),
        iterations: a.iterations.or(f.iterations).unwrap_or(DEFAULT_ITERATIONS),
        ridge_scale: f.ridge.unwrap_or(DEFAULT_RIDGE_SCALE),
        gamma: Some(syn.gamma),
        ..PtlConfig::default()
    };
    cfg.validate()?;
    let outcome = run_synthetic(world, &cfg, Some(&out.join("state.json")))?;
    let state = &outcome.state;

    for m in &state.history {
        write_json_atomic(manifest_dir.join(format!("iter{:04}.json", m.iteration)), m).data()?;
    }
    let bins = a.bins.or(f.bins).unwrap_or(DEFAULT_BINS);
    write_gap_reports(state, bins, &report_dir.join("gap_hist.csv"))?;
    let spread = report_metadata_spread(state, None).data()?;
    write_atomic(report_dir.join("metadata_spread.csv"), &csv_bytes(&spread, &SPREAD_HEADER)?).data()?;
    log::info!(
        "{} iteration(s), pool gap means {:?}",
        outcome.iterations_run,
        state.history.iter().map(|m| m.pool_gap_mean.unwrap_or(f64::NAN)).collect::<Vec<_>>()
    );
    Ok(())
}

#[derive(Serialize)]
struct GapSummaryRow {
    iteration: u64,
    pool_size: usize,
    mean_gap: f64,
}

/// Per-iteration histograms as `<stem>_iter<N>.csv` beside `out`, plus a
/// per-iteration summary of pool size and mean gap at `out`.
fn write_gap_reports(state: &PtlState, bins: usize, out: &Path) -> Result<(), CliError> {
    let hists = state_gap_histograms(state, bins).data()?;
    let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    for (t, rows) in &hists {
        let path = out.with_file_name(format!("{stem}_iter{t}.csv"));
        write_atomic(&path, &csv_bytes(rows, &HISTOGRAM_HEADER)?).data()?;
    }
    let summary: Vec<GapSummaryRow> = state
        .pool_gaps
        .iter()
        .enumerate()
        .map(|(t, gaps)| GapSummaryRow {
            iteration: t as u64,
            pool_size: gaps.len(),
            mean_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
        })
        .collect();
    write_atomic(out, &csv_bytes(&summary, &["iteration", "pool_size", "mean_gap"])?).data()
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<(), CliError> {
    let state = PtlState::load(&a.state)?;
    match a.kind {
        ReportKind::GapHist => {
            let bins = a.bins.or(ctx.file.bins).unwrap_or(DEFAULT_BINS);
            if bins == 0 {
                return Err(CliError::usage("--bins must be >= 1"));
            }
            write_gap_reports(&state, bins, &a.out)
        }
        ReportKind::MetadataSpread => {
            let rows = report_metadata_spread(&state, a.through).data()?;
            write_atomic(&a.out, &csv_bytes(&rows, &SPREAD_HEADER)?).data()
        }
    }
}
