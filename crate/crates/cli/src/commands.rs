use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use gridfield_core::api::{QueryRequest, QueryResponse, QuerySource};
use gridfield_core::eval::{
    evaluate_field, prototype_queries, read_queries, run_suite, write_queries, Ablation, LabelMaps,
    SuiteOptions,
};
use gridfield_core::field::{MappingFile, TrainedField};
use gridfield_core::ingest::{
    denoise_dataset, generate_synthetic_scene, resolve_matches, DenoiseParams, KeypointParams,
    PairSelection, SyntheticSceneSpec,
};
use gridfield_core::mapper::{bake_feature_maps, cross_view_grid_mapping};
use gridfield_core::query::{QueryEngine, QueryInput, ViewSpec};
use gridfield_core::scene::io::{
    matches_to_bytes, read_dataset, read_embedding_file, write_dataset, write_embedding_file,
    write_mask_png, GAUSSIANS_FILE, MATCHES_FILE,
};
use gridfield_core::scene::{
    validate_dataset, Dataset, GaussianCloud, MatchParams, QueryConfig, ScoreAggregation,
    TrainConfig,
};
use gridfield_core::splat::RenderConfig;
use gridfield_service::{AppState, Encoder, Loaded};

use crate::{AblateArg, AggregationArg};

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(dir: &Path, need_histograms: bool) -> Result<Dataset> {
    let mut ds = read_dataset(dir)?;
    if need_histograms {
        ds.ensure_histograms()?;
    }
    Ok(ds)
}

pub fn synth(spec: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let spec: SyntheticSceneSpec = match spec {
        Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticSceneSpec::default(),
    };
    let scene = generate_synthetic_scene(&spec)?;
    write_dataset(&scene.dataset, out)?;
    scene.cloud.write(&out.join(GAUSSIANS_FILE))?;
    LabelMaps::from(&scene.truth).write_dir(&out.join("truth"))?;
    let queries = prototype_queries(&scene.truth);
    write_queries(&out.join("queries.json"), &queries)?;
    let qdir = out.join("queries");
    std::fs::create_dir_all(&qdir)?;
    for q in &queries {
        write_embedding_file(&qdir.join(format!("{}.bin", q.name)), &q.embedding)?;
    }
    write_json(&out.join("spec.json"), &spec)?;
    eprintln!(
        "wrote {} views, {} masks, {} gaussians to {}",
        scene.dataset.view_count(),
        scene.dataset.mask_count(),
        scene.cloud.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn ingest(dir: &Path, denoise_out: Option<&Path>) -> Result<ExitCode> {
    let mut ds = read_dataset(dir)?;
    let violations = validate_dataset(&ds);
    for v in &violations {
        println!("{v}");
    }
    eprintln!(
        "{}: {} views, {} masks, {} violation(s)",
        dir.display(),
        ds.view_count(),
        ds.mask_count(),
        violations.len()
    );
    if let Some(out) = denoise_out {
        let outcome = denoise_dataset(&mut ds, DenoiseParams::default());
        write_dataset(&ds, out)?;
        let geometry = dir.join(GAUSSIANS_FILE);
        if geometry.exists() {
            std::fs::copy(&geometry, out.join(GAUSSIANS_FILE))?;
        }
        eprintln!(
            "removed {} mask(s), views left empty {:?}, denoised copy in {}",
            outcome.removed,
            outcome.emptied_views,
            out.display()
        );
    }
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn parse_pairs(s: &str) -> Result<PairSelection> {
    if s == "all" {
        return Ok(PairSelection::All);
    }
    match s.strip_prefix("window:").map(str::parse::<usize>) {
        Some(Ok(n)) if n > 0 => Ok(PairSelection::Window(n)),
        _ => bail!("--pairs takes `all` or `window:N`, got {s:?}"),
    }
}

pub fn match_views(dataset: &Path, pairs: &str, out: Option<&Path>) -> Result<ExitCode> {
    let ds = read_dataset(dataset)?;
    let set = resolve_matches(&ds, parse_pairs(pairs)?, &KeypointParams::default())?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dataset.join(MATCHES_FILE));
    std::fs::write(&out, matches_to_bytes(&set)).with_context(|| format!("writing {}", out.display()))?;
    for ((a, b), m) in set.iter() {
        println!("{a} {b} {}", m.len());
    }
    eprintln!("{} correspondences written to {}", set.total(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn map(
    dataset: &Path,
    tau: usize,
    theta: f64,
    alpha: f64,
    window: Option<usize>,
    use_keypoints: bool,
    out: &Path,
) -> Result<ExitCode> {
    let params = MatchParams {
        tau_kp: tau,
        theta,
        alpha,
        window,
        use_keypoints,
    };
    params.validate()?;
    let ds = load_dataset(dataset, alpha > 0.0)?;
    let mapping = cross_view_grid_mapping(&ds, &params)?;
    let k = mapping.k;
    MappingFile::new(&ds, mapping).write(out)?;
    eprintln!("K = {k}, mapping written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    dataset: &Path,
    mapping: &Path,
    geometry: Option<&Path>,
    iters: usize,
    seed: u64,
    lambda: f64,
    step: f64,
    out: &Path,
) -> Result<ExitCode> {
    let ds = read_dataset(dataset)?;
    let geometry = geometry.map(Path::to_path_buf).unwrap_or_else(|| dataset.join(GAUSSIANS_FILE));
    let cloud = GaussianCloud::read(&geometry)?;
    let mf = MappingFile::read(mapping)?;
    let baked = bake_feature_maps(&ds, &mf.mapping)?;
    let cfg = TrainConfig {
        lambda,
        iterations: iters,
        step_size: step,
        seed,
    };
    let field = TrainedField::train(&ds, &cloud, mf, &baked, &cfg, &RenderConfig::default())?;
    field.save(out, mapping)?;
    match (field.sidecar.history.first(), field.sidecar.history.last()) {
        (Some(a), Some(b)) => eprintln!("loss {a:.5} -> {b:.5} over {iters} iterations"),
        _ => eprintln!("no training iterations run"),
    }
    Ok(ExitCode::SUCCESS)
}

pub struct QueryArgs {
    pub field: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub server: Option<String>,
    pub view: usize,
    pub embedding: PathBuf,
    pub top_n: usize,
    pub tau_ac: f64,
    pub aggregation: AggregationArg,
    pub relevancy_floor: Option<f64>,
    pub out: PathBuf,
    pub json: Option<PathBuf>,
}

fn aggregation(a: AggregationArg) -> ScoreAggregation {
    match a {
        AggregationArg::Max => ScoreAggregation::Max,
        AggregationArg::Mean => ScoreAggregation::Mean,
    }
}

pub fn query(a: QueryArgs) -> Result<ExitCode> {
    let embedding = read_embedding_file(&a.embedding)?;
    let response = if let Some(url) = &a.server {
        let req = QueryRequest {
            view: a.view,
            source: QuerySource::Embedding { embedding },
            top_n: Some(a.top_n),
            tau_ac: Some(a.tau_ac),
            aggregation: Some(aggregation(a.aggregation)),
            relevancy_floor: a.relevancy_floor,
        };
        crate::remote::runtime()?.block_on(gridfield_client::Client::new(url.clone()).query(&req))?
    } else {
        let (field, mapping) = (a.field.as_ref().unwrap(), a.mapping.as_ref().unwrap());
        let engine = QueryEngine::new(Arc::new(TrainedField::load(field, mapping)?));
        let result = engine.query(&QueryInput {
            embedding,
            view: ViewSpec::Id(a.view),
            config: QueryConfig {
                tau_ac: a.tau_ac,
                top_n: a.top_n,
                aggregation: aggregation(a.aggregation),
                relevancy_floor: a.relevancy_floor,
                canonical: None,
            },
        })?;
        QueryResponse::from_result(&result)
    };
    write_response(&response, &a.out, a.json.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

pub fn write_response(r: &QueryResponse, png: &Path, json: Option<&Path>) -> Result<()> {
    write_mask_png(png, &gridfield_core::rle::decode(&r.mask)?)?;
    let json = json.map(Path::to_path_buf).unwrap_or_else(|| png.with_extension("json"));
    write_json(&json, r)?;
    eprintln!(
        "targets {:?}, mask area {} px, mask {} and response {}",
        r.targets,
        r.mask_area,
        png.display(),
        json.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    dataset: &Path,
    field: &Path,
    mapping: &Path,
    queries: &Path,
    truth: &Path,
    ablate: &[AblateArg],
    iters: usize,
    serial: bool,
    report: &Path,
) -> Result<ExitCode> {
    let trained = TrainedField::load(field, mapping)?;
    let queries = read_queries(queries)?;
    let labels = LabelMaps::read_dir(truth, trained.view_count())?;
    let ablation = Ablation {
        keypoints: !ablate.iter().any(|a| matches!(a, AblateArg::Kp)),
        color: !ablate.iter().any(|a| matches!(a, AblateArg::Cd)),
    };
    let mut options = SuiteOptions {
        params: trained.mapping.mapping.params.clone(),
        ablation,
        train: trained.sidecar.train.clone(),
        render: trained.sidecar.render.clone(),
        serial,
        ..SuiteOptions::default()
    };
    let out = if ablate.is_empty() {
        evaluate_field(Arc::new(trained), &queries, &labels, &options)?
    } else {
        let ds = load_dataset(dataset, ablation.color && options.params.alpha > 0.0)?;
        let geometry = GaussianCloud::read(&dataset.join(GAUSSIANS_FILE))?;
        options.train.iterations = iters;
        run_suite(&ds, &geometry, &queries, &labels, &options)?
    };
    write_json(report, &out)?;
    println!(
        "mIoU {:.4}  mAcc {:.4}  localization {:.4}  mTime {:.2} ms  K {}",
        out.miou, out.macc, out.localization_accuracy, out.mtime_ms, out.k
    );
    Ok(ExitCode::SUCCESS)
}

pub fn serve(
    field: Option<PathBuf>,
    mapping: Option<PathBuf>,
    host: &str,
    port: u16,
    queries: Option<&Path>,
    encoder_url: Option<String>,
) -> Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let loaded = match (&field, &mapping) {
        (Some(f), Some(m)) => Some(Loaded::open(f, m)?),
        (None, None) => None,
        _ => bail!("--field and --mapping go together"),
    };
    let encoder = encoder_url.map(Encoder::new).or_else(Encoder::from_env);
    if let Some(e) = &encoder {
        tracing::info!(url = e.url(), "text encoder configured");
    }
    let state = Arc::new(AppState::new(loaded, encoder));
    if let Some(q) = queries {
        for spec in read_queries(q)? {
            state.register(&spec.name, spec.embedding);
        }
    }
    let rt = crate::remote::runtime()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        gridfield_service::serve(listener, state, shutdown).await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}
