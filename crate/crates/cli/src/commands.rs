use std::fs;
use std::path::{Path, PathBuf};

use loopgan_core::featurenets::{freeze, train_classifier as fit_classifier, AdapterMeta, ClassifierTrainConfig, FeatureNetwork, FrozenAdapter, NetConfig};
use loopgan_core::generator::Generator;
use loopgan_core::melpipe::{
    ingest_dir, make_general_corpus, make_synthetic_corpus, read_clip, write_clip, Corpus, MelClip, MelExtractor, NormStats,
    SyntheticSpec,
};
use loopgan_core::metrics::MetricReport;
use loopgan_core::real::derive_seed;
use loopgan_core::trainer::{generator_from_checkpoint, Evaluator, RunManifest, TrainInputs, Trainer, GENERATOR_FILE};
use loopgan_core::{Error, Real, Result};
use serde::Serialize;

use crate::config::{Dtype, RunConfig};
use crate::render::{write_png, write_wav, COLORMAP_VERSION};
use crate::{plot as plotting, ClassifierArgs, EvaluateArgs, GenerateArgs, NetArg, PlotArgs, PreprocessArgs, SplitArg, TrainArgs, OUTPUT_ROOT_ENV};

pub const NORM_STATS_FILE: &str = "norm_stats.json";

macro_rules! with_dtype {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            Dtype::F32 => $f::<f32>($($arg),*),
            Dtype::F64 => $f::<f64>($($arg),*),
        }
    };
}

/// Resolves a relative output path against the output root, if one is set.
fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn select<T: Real>(corpus: &Corpus<T>, split: SplitArg) -> Vec<&MelClip<T>> {
    match split.split() {
        Some(s) => corpus.clips_in(s),
        None => corpus.clips.iter().collect(),
    }
}

fn load_corpus<T: Real>(dir: &Path) -> Result<Corpus<T>> {
    require(dir)?;
    Corpus::load(dir)
}

fn load_net<T: Real>(path: &Path) -> Result<FrozenAdapter<T>> {
    require(path)?;
    Ok(FrozenAdapter::load(path)?.0)
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    with_dtype!(args.dtype, preprocess_as(args))
}

fn preprocess_as<T: Real>(args: &PreprocessArgs) -> Result<()> {
    let ratio: [f64; 3] =
        args.split_ratio.as_slice().try_into().map_err(|_| Error::Config("split ratio needs three values".into()))?;
    let corpus: Corpus<T> = match (&args.input, args.synthetic.as_deref()) {
        (Some(dir), _) => {
            require(dir)?;
            ingest_dir(dir, args.split_seed, ratio)?
        }
        (None, Some(&[seed, n, classes])) if args.distractors == 0 => make_synthetic_corpus(seed, n as usize, classes as usize)?,
        (None, Some(&[seed, n, classes])) => make_general_corpus(SyntheticSpec {
            seed,
            n_clips: n as usize,
            n_classes: classes as usize,
            n_distractors: args.distractors,
        })?,
        _ => return Err(Error::Config("give either --input DIR or --synthetic SEED N CLASSES".into())),
    };
    let out = out_path(&args.out);
    corpus.save(&out)?;
    write_json(&out.join("preprocess.json"), args)?;
    println!("corpus {} with {} clips, {} tags -> {}", corpus.manifest.corpus_id, corpus.len(), corpus.num_classes(), out.display());
    Ok(())
}

pub fn train_classifier(args: &ClassifierArgs) -> Result<()> {
    with_dtype!(args.dtype, train_classifier_as(args))
}

fn train_classifier_as<T: Real>(args: &ClassifierArgs) -> Result<()> {
    let corpus: Corpus<T> = load_corpus(&args.corpus)?;
    let classes = corpus.num_classes();
    let mut net_config = match args.kind {
        NetArg::General => NetConfig::general(classes, args.embedding_dim),
        NetArg::Domain => NetConfig::scnn(classes),
    }
    .with_seed(args.seed);
    if let Some(w) = &args.widths {
        net_config = net_config.with_widths(w);
    }
    let train_config = ClassifierTrainConfig { epochs: args.epochs, batch_size: args.batch_size, lr: args.lr, seed: args.seed };
    let (net, report) = fit_classifier(FeatureNetwork::new(net_config)?, &corpus, &train_config)?;
    let adapter = freeze(net);
    let out = out_path(&args.out);
    ensure_parent(&out)?;
    adapter.save(
        &out,
        AdapterMeta {
            train_config: Some(train_config),
            corpus_id: Some(corpus.manifest.corpus_id.clone()),
            tags: corpus.manifest.tags.clone(),
            report: Some(report.clone()),
        },
    )?;
    #[derive(Serialize)]
    struct Record<'a, R> {
        args: &'a ClassifierArgs,
        corpus_id: &'a str,
        digest: &'a str,
        report: R,
    }
    let record = Record { args, corpus_id: &corpus.manifest.corpus_id, digest: adapter.digest(), report: &report };
    write_json(&out.with_extension("json"), &record)?;
    println!(
        "{:?} net {}: {} accuracy {:.3} on {} clips -> {}",
        args.kind,
        adapter.digest(),
        serde_json::to_string(&report.eval_split).unwrap_or_default().trim_matches('"'),
        report.accuracy,
        report.n_eval,
        out.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    require(&args.config)?;
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(p) = args.projector {
        cfg.projector = p.into();
    }
    if let Some(s) = args.steps {
        cfg.total_steps = s;
    }
    if let Some(r) = &args.resume {
        cfg.resume = Some(r.clone());
    }
    with_dtype!(cfg.dtype, train_as(&cfg))
}

fn train_as<T: Real>(cfg: &RunConfig) -> Result<()> {
    let train_config = cfg.train_config();
    train_config.validate()?;
    let out = out_path(&cfg.out_dir);
    create_dir(&out)?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let corpus: Corpus<T> = load_corpus(&cfg.corpus)?;
    let real = select(&corpus, cfg.real_split);
    let general = cfg.general_net.as_deref().map(load_net::<T>).transpose()?;
    let domain = cfg.domain_net.as_deref().map(load_net::<T>).transpose()?;
    write_json(&out.join(NORM_STATS_FILE), &corpus.manifest.stats)?;
    let inputs = TrainInputs { real: &real, corpus_id: &corpus.manifest.corpus_id, general: general.as_ref(), domain: domain.as_ref() };
    let mut trainer = match &cfg.resume {
        Some(ckpt) => {
            require(ckpt)?;
            let t = Trainer::resume(ckpt, inputs, Some(&out))?;
            if t.config() != &train_config {
                log::warn!("resuming with the checkpoint's training settings; those in {} are ignored", config_path.display());
            }
            t
        }
        None => Trainer::new(train_config, inputs, Some(&out))?,
    };
    trainer.set_launch(serde_json::to_value(cfg).map_err(|e| Error::format("run config", e))?);
    log::info!("training {:?} from step {} to {}", cfg.mode, trainer.step_count(), trainer.config().total_steps);
    let manifest = trainer.run()?;
    if cfg.export_clips > 0 {
        let (generator, _) = Generator::<T>::load(&out.join(GENERATOR_FILE))?;
        export_clips(&generator, cfg.export_clips, cfg.export_seed, &out.join("samples"), Some(&corpus.manifest.stats), loopgan_core::melpipe::GRIFFIN_LIM_ITERS)?;
    }
    report_run(&manifest, &out);
    Ok(())
}

fn report_run(m: &RunManifest, out: &Path) {
    print!("trained to step {}", m.final_step);
    if let Some(r) = m.records.last() {
        print!(", FAD {:.4}, coverage {:.3}", r.fad, r.coverage);
    }
    if let Some(tau) = m.tau {
        match m.steps_to_threshold(tau) {
            Some(s) => print!(", FAD <= tau ({tau:.4}) at step {s}"),
            None => print!(", FAD never reached tau ({tau:.4})"),
        }
    }
    println!(" -> {}", out.display());
}

/// Weights saved by `train`, or the generator inside a trainer checkpoint.
fn load_generator<T: Real>(path: &Path) -> Result<Generator<T>> {
    let path = if path.is_dir() { path.join(GENERATOR_FILE) } else { path.to_path_buf() };
    require(&path)?;
    match Generator::load(&path) {
        Ok((g, _)) => Ok(g),
        Err(first) => generator_from_checkpoint(&path).map(|(g, _)| g).map_err(|_| first),
    }
}

fn norm_stats_for(args: &GenerateArgs) -> Result<Option<NormStats>> {
    if let Some(dir) = &args.corpus {
        return Ok(Some(load_corpus::<f32>(dir)?.manifest.stats));
    }
    let dir = if args.generator.is_dir() { Some(args.generator.as_path()) } else { args.generator.parent() };
    let Some(path) = dir.map(|d| d.join(NORM_STATS_FILE)).filter(|p| p.exists()) else {
        return Ok(None);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::format(path.display().to_string(), e))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    with_dtype!(args.dtype, generate_as(args))
}

fn generate_as<T: Real>(args: &GenerateArgs) -> Result<()> {
    let generator = load_generator::<T>(&args.generator)?;
    let stats = if args.no_audio {
        None
    } else {
        let s = norm_stats_for(args)?;
        if s.is_none() {
            return Err(Error::Config(format!(
                "no {NORM_STATS_FILE} next to {}; pass --corpus or --no-audio",
                args.generator.display()
            )));
        }
        s
    };
    let out = out_path(&args.out);
    export_clips(&generator, args.n, args.seed, &out, stats.as_ref(), args.griffin_lim_iters)?;
    #[derive(Serialize)]
    struct Record<'a> {
        args: &'a GenerateArgs,
        generator_ema_digest: String,
        colormap: &'a str,
        norm_stats: Option<NormStats>,
    }
    let record = Record { args, generator_ema_digest: generator.ema().digest(), colormap: COLORMAP_VERSION, norm_stats: stats };
    write_json(&out.join("generate.json"), &record)?;
    println!("wrote {} clips -> {}", args.n, out.display());
    Ok(())
}

/// Per clip: `clip_NNNN.f32` + `.json` (mel blob), `.png` and, when
/// normalization stats are known, `.wav`.
fn export_clips<T: Real>(
    generator: &Generator<T>,
    n: usize,
    seed: u64,
    out: &Path,
    stats: Option<&NormStats>,
    iters: usize,
) -> Result<()> {
    create_dir(out)?;
    let clips = generator.generate_batch(seed, n)?;
    let extractor = MelExtractor::<T>::new();
    for (i, clip) in clips.iter().enumerate() {
        let stem = out.join(format!("clip_{i:04}"));
        write_clip(&stem, clip)?;
        write_png(&stem.with_extension("png"), clip)?;
        if let Some(stats) = stats {
            let audio = extractor.invert(clip, stats, iters, derive_seed(seed, &[i as u64]));
            write_wav(&stem.with_extension("wav"), &audio)?;
        }
    }
    Ok(())
}

/// A corpus directory, or a flat directory of `.f32` clip blobs.
fn load_clip_set<T: Real>(dir: &Path, split: SplitArg) -> Result<Vec<MelClip<T>>> {
    require(dir)?;
    if dir.join("corpus.json").exists() {
        let corpus = Corpus::<T>::load(dir)?;
        return Ok(select(&corpus, split).into_iter().cloned().collect());
    }
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32"))
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Input(format!("no clips in {}", dir.display())));
    }
    stems.iter().map(|s| read_clip(s)).collect()
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    with_dtype!(args.dtype, evaluate_as(args))
}

fn evaluate_as<T: Real>(args: &EvaluateArgs) -> Result<()> {
    let real_corpus: Corpus<T> = load_corpus(&args.real)?;
    let real = select(&real_corpus, args.real_split);
    let fake_clips = load_clip_set::<T>(&args.fake, args.fake_split)?;
    let fake: Vec<&MelClip<T>> = fake_clips.iter().collect();
    let general = load_net::<T>(&args.general)?;
    let classifier = args.classifier.as_deref().map(load_net::<T>).transpose()?;
    let evaluator = Evaluator::new(&general, classifier.as_ref(), &real, fake.len(), args.metric_seed, args.k, args.splits)?;
    let m = evaluator.score_clips(&fake)?;
    let (n_real, n_fake) = (Some(real.len()), fake.len());
    let report = |metric: &str, value: f64, digest: Option<&str>, k: Option<usize>, splits: Option<usize>| MetricReport {
        metric: metric.into(),
        value,
        n_real,
        n_fake,
        embedder_digest: digest.map(str::to_string),
        k,
        splits,
    };
    let dc = evaluator.dc_embedder().digest();
    let mut reports = vec![
        report("fad", m.fad, Some(general.digest()), None, None),
        report("split_half_fad", evaluator.split_half_fad(), Some(general.digest()), None, None),
        report("tau", evaluator.tau(), Some(general.digest()), None, None),
        report("density", m.density, Some(dc), Some(args.k), None),
        report("coverage", m.coverage, Some(dc), Some(args.k), None),
    ];
    if let (Some(is), Some(c)) = (m.inception_score, &classifier) {
        reports.push(MetricReport { n_real: None, ..report("inception_score", is, Some(c.digest()), None, Some(args.splits)) });
    }
    #[derive(Serialize)]
    struct Record<'a> {
        args: &'a EvaluateArgs,
        real_corpus_id: &'a str,
        metrics: &'a [MetricReport],
    }
    let out = out_path(&args.out);
    ensure_parent(&out)?;
    write_json(&out, &Record { args, real_corpus_id: &real_corpus.manifest.corpus_id, metrics: &reports })?;
    for r in &reports {
        println!("{:<16} {:.6}", r.metric, r.value);
    }
    Ok(())
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let data = plotting::collect(&args.manifests)?;
    let out = out_path(&args.out);
    ensure_parent(&out)?;
    plotting::render_svg(&data, &out)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        args: &'a PlotArgs,
        #[serde(flatten)]
        data: &'a plotting::PlotData,
    }
    write_json(&out.with_extension("json"), &Sidecar { args, data: &data })?;
    println!("plotted {} runs -> {}", data.runs.len(), out.display());
    Ok(())
}
