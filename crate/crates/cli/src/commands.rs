//! Pipeline stages behind each subcommand.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use qwem_core::corpus::{count_skipgrams_in_file, count_words_in_file, OovPolicy, DEFAULT_CHUNK_DOCS};
use qwem_core::dynamics::{characteristic_time, silent_alignment_experiment, InitKind, SilentAlignmentConfig};
use qwem_core::eval::{Similarity, SimilaritySet};
use qwem_core::mxc::{load_mxc, save_mxc};
use qwem_core::taskvec::{spectrum_plot, sweep_csv, task_vectors_from_ids, SpectrumPlot, SweepRow};
use qwem_core::trainers::{even_probes, Init, Sampling, Trainer};
use qwem_core::{
    analogy_accuracy, build_mstar, build_pmi, eigh, generate_planted, pc_neighbors, snr_sweep, spearman, AnalogySet,
    CountConfig, EmbeddingMatrix, LossKind, Normalization, PairObjective, PlantedConfig, Provenance, Reweight,
    Schedule, SkipGramStats, TargetMatrix, TopK, TrainConfig, Vocabulary,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, PathContext, Result};
use crate::manifest::ManifestBuilder;
use crate::{
    DynInitArg, DynamicsArgs, EvalArgs, FactorizeArgs, IngestArgs, InitArg, LossArg, NormArg, OovArg, SamplingArg,
    ScheduleArg, ScoreArg, StatsArgs, TargetArgs, TargetKindArg, TaskvecArgs, TrainArgs,
};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STATS_FILE: &str = "corpus.sgs";
pub const TRAIN_FILE: &str = "train.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const DYNAMICS_FILE: &str = "dynamics.json";
pub const EVAL_FILE: &str = "eval.json";
pub const TASKVEC_FILE: &str = "taskvec.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

fn write_file(path: &Path, text: &str, manifest: &mut ManifestBuilder) -> Result<()> {
    fs::write(path, text).at(path)?;
    manifest.output(path);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, manifest: &mut ManifestBuilder) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"), manifest)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path).at(path)?;
    Vocabulary::read_tsv(BufReader::new(file), None).at(path)
}

fn load_stats(dir: &Path, manifest: &mut ManifestBuilder) -> Result<SkipGramStats> {
    let vocab_path = dir.join(VOCAB_FILE);
    let stats_path = dir.join(STATS_FILE);
    manifest.input(&vocab_path)?;
    manifest.input(&stats_path)?;
    let vocab = load_vocab(&vocab_path)?;
    let file = File::open(&stats_path).at(&stats_path)?;
    SkipGramStats::read_sgs(BufReader::new(file), vocab).at(&stats_path)
}

fn save_vocab(path: &Path, vocab: &Vocabulary, manifest: &mut ManifestBuilder) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).at(path)?);
    vocab.write_tsv(&mut out).at(path)?;
    out.flush().at(path)?;
    manifest.output(path);
    Ok(())
}

fn parse_reweight(s: &str) -> Result<Reweight> {
    s.parse().map_err(|e: qwem_core::Error| CliError::usage(format!("--reweight: {e}")))
}

fn load_target(path: &Path, manifest: &mut ManifestBuilder) -> Result<(TargetMatrix, String)> {
    manifest.input(path)?;
    let (m, header) = load_mxc(path).at(path)?;
    let target = TargetMatrix::synthetic(m).at(path)?;
    Ok((target, header.provenance))
}

fn load_embedding(
    path: &Path,
    vocab_file: Option<&Path>,
    manifest: &mut ManifestBuilder,
) -> Result<(EmbeddingMatrix, Vocabulary)> {
    let vocab_path = vocab_file.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(path).join(VOCAB_FILE));
    manifest.input(path)?;
    manifest.input(&vocab_path)?;
    let w = EmbeddingMatrix::load(path).at(path)?;
    let vocab = load_vocab(&vocab_path)?;
    if vocab.len() != w.vocab_size() {
        return Err(CliError::data(format!(
            "{} has {} words but {} has {} rows",
            vocab_path.display(),
            vocab.len(),
            path.display(),
            w.vocab_size()
        )));
    }
    Ok((w, vocab))
}

pub fn ingest(a: &IngestArgs, args: &[String]) -> Result<()> {
    create_dir(&a.out)?;
    let mut m = ManifestBuilder::start("ingest", args);
    let corpus = if a.planted {
        let cfg = PlantedConfig { seed: a.seed, ..PlantedConfig::default() };
        let planted = generate_planted(&cfg)?;
        let corpus = a.out.join("corpus.txt");
        write_file(&corpus, &planted.text(), &mut m)?;
        write_file(&a.out.join("questions-words.txt"), &planted.questions_words(), &mut m)?;
        m.seed(a.seed);
        m.config(&json!({ "planted": cfg, "vocab": a.vocab, "min_doc_tokens": a.min_doc_tokens }))?;
        corpus
    } else {
        let corpus = a.corpus.clone().expect("clap requires --corpus without --planted");
        m.input(&corpus)?;
        m.config(&json!({ "corpus": corpus, "vocab": a.vocab, "min_doc_tokens": a.min_doc_tokens }))?;
        corpus
    };
    let counter = count_words_in_file(&corpus, a.min_doc_tokens, DEFAULT_CHUNK_DOCS).at(&corpus)?;
    let summary = json!({
        "documents": counter.documents(),
        "skipped_documents": counter.skipped_documents(),
        "tokens": counter.total_tokens(),
        "distinct_words": counter.distinct_words(),
    });
    let size = a.vocab.unwrap_or(counter.distinct_words());
    let vocab = counter.finish(size).at(&corpus)?;
    save_vocab(&a.out.join(VOCAB_FILE), &vocab, &mut m)?;
    write_json(&a.out.join("ingest.json"), &summary, &mut m)?;
    println!("{summary}");
    m.finish(&a.out)?;
    Ok(())
}

pub fn stats(a: &StatsArgs, args: &[String]) -> Result<()> {
    create_dir(&a.out)?;
    let mut m = ManifestBuilder::start("stats", args);
    m.input(&a.corpus)?;
    let config = CountConfig {
        window: a.window,
        oov: match a.oov {
            OovArg::Remove => OovPolicy::Remove,
            OovArg::Mask => OovPolicy::Mask,
        },
        min_doc_tokens: a.min_doc_tokens,
    };
    m.config(&json!({ "corpus": a.corpus, "vocab": a.vocab, "vocab_file": a.vocab_file, "count": config }))?;
    let vocab = match &a.vocab_file {
        Some(path) => {
            m.input(path)?;
            load_vocab(path)?
        }
        None => {
            let counter = count_words_in_file(&a.corpus, a.min_doc_tokens, DEFAULT_CHUNK_DOCS).at(&a.corpus)?;
            let size = a.vocab.unwrap_or(counter.distinct_words());
            counter.finish(size).at(&a.corpus)?
        }
    };
    save_vocab(&a.out.join(VOCAB_FILE), &vocab, &mut m)?;
    let stats = count_skipgrams_in_file(&a.corpus, &vocab, config, DEFAULT_CHUNK_DOCS).at(&a.corpus)?;
    let path = a.out.join(STATS_FILE);
    let mut out = BufWriter::new(File::create(&path).at(&path)?);
    stats.write_sgs(&mut out).at(&path)?;
    out.flush().at(&path)?;
    m.output(&path);
    let summary = json!({
        "vocab_size": stats.vocab_size(),
        "window": stats.window(),
        "pair_total": stats.pair_total(),
        "stored_pairs": stats.records().len(),
        "checksum": stats.checksum(),
    });
    write_json(&a.out.join("stats.json"), &summary, &mut m)?;
    println!("{summary}");
    m.finish(&a.out)?;
    Ok(())
}

pub fn target(a: &TargetArgs, args: &[String]) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.stats.clone());
    create_dir(&out)?;
    let mut m = ManifestBuilder::start("target", args);
    let reweight = parse_reweight(&a.reweight)?;
    m.config(
        &json!({ "stats": a.stats, "kind": format!("{:?}", a.kind).to_lowercase(), "reweight": reweight.to_string() }),
    )?;
    let stats = load_stats(&a.stats, &mut m)?;
    let target = match a.kind {
        TargetKindArg::Mstar => build_mstar(&stats, &reweight)?,
        TargetKindArg::Pmi => build_pmi(&stats, &reweight, false)?,
        TargetKindArg::Ppmi => build_pmi(&stats, &reweight, true)?,
    };
    let name = target.kind().as_str();
    let path = out.join(format!("{name}.mxc"));
    save_mxc(&path, target.matrix(), name, &target.provenance()).at(&path)?;
    m.output(&path);
    let summary = json!({
        "kind": name,
        "dim": target.dim(),
        "reweight": target.reweight().to_string(),
        "g": target.g(),
        "g_structure": match target.g_structure() {
            qwem_core::target::GStructure::Constant(_) => "constant",
            qwem_core::target::GStructure::RankOne(_) => "rank_one",
            qwem_core::target::GStructure::General => "general",
        },
        "floored": target.floored(),
        "checksum": target.checksum(),
    });
    write_json(&out.join("target.json"), &summary, &mut m)?;
    println!("{summary}");
    m.finish(&out)?;
    Ok(())
}

pub fn factorize(a: &FactorizeArgs, args: &[String]) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| parent_dir(&a.target));
    create_dir(&out)?;
    let mut m = ManifestBuilder::start("factorize", args);
    m.config(&json!({ "target": a.target, "d": a.d }))?;
    let (target, provenance) = load_target(&a.target, &mut m)?;
    if a.d == 0 || a.d > target.dim() {
        return Err(CliError::usage(format!("--d must lie in 1..={}", target.dim())));
    }
    let spec = eigh(target.matrix(), TopK::Top(a.d))?;
    let w = EmbeddingMatrix::new(spec.factor(a.d)?, Provenance::Spectral, target.checksum())?;
    let path = out.join("W.mxc");
    w.save(&path, "W").at(&path)?;
    m.output(&path);
    let mut csv = String::from("k,eigenvalue\n");
    for (k, l) in spec.eigenvalues().iter().enumerate() {
        csv.push_str(&format!("{},{l:e}\n", k + 1));
    }
    write_file(&out.join("spectrum.csv"), &csv, &mut m)?;
    println!("factorized {} (d = {}, source {provenance})", a.target.display(), a.d);
    m.finish(&out)?;
    Ok(())
}

/// What `train` records next to the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub probe_steps: Vec<usize>,
    pub loss_stderr: Vec<f64>,
    pub final_flow_time: f64,
    /// Top-d eigenvalues of the target when it is known.
    pub eigenvalues: Vec<f64>,
    /// Characteristic times `ln(λ_k/σ²)/λ_k` in flow units.
    pub tau: Vec<f64>,
}

pub fn train(a: &TrainArgs, args: &[String]) -> Result<()> {
    create_dir(&a.out)?;
    let mut m = ManifestBuilder::start("train", args);
    let loss = match a.loss {
        LossArg::Qwem => LossKind::Qwem,
        LossArg::Sgns => LossKind::Sgns,
    };
    let mut config = TrainConfig::new(a.d, loss);
    config.reweight = parse_reweight(&a.reweight)?;
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    config.schedule = match a.schedule {
        ScheduleArg::Constant => Schedule::Constant,
        ScheduleArg::Step => Schedule::standard_step(),
        ScheduleArg::Linear => Schedule::Linear { floor: a.lr_floor },
    };
    config.steps = a.steps;
    config.n_pos = a.n_pos;
    config.n_neg = a.n_neg;
    config.init = match a.init {
        InitArg::Normal => Init::Normal { sigma2: a.sigma2 },
        InitArg::W2v => Init::W2vDefault,
    };
    config.sampling = match a.sampling {
        SamplingArg::Adjusted => Sampling::Adjusted,
        SamplingArg::Raw => Sampling::Raw,
    };
    config.seed = a.seed;
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    m.seed(a.seed);
    m.config(&json!({ "stats": a.stats, "target": a.target, "probes": a.probes, "train": config }))?;

    let objective = match (&a.stats, &a.target) {
        (Some(dir), _) => PairObjective::from_stats(&load_stats(dir, &mut m)?, &config.reweight, config.sampling)?,
        (None, Some(path)) => {
            m.input(path)?;
            let (matrix, _) = load_mxc(path).at(path)?;
            PairObjective::from_target(&matrix).at(path)?
        }
        (None, None) => unreachable!("clap requires --stats or --target"),
    };
    if a.d > objective.vocab_size() {
        return Err(CliError::usage(format!("--d exceeds the vocabulary size {}", objective.vocab_size())));
    }
    let (eigenvalues, tau) = match (objective.target(), config.init) {
        (Some(t), Init::Normal { sigma2 }) => {
            let spec = eigh(t, TopK::Top(a.d))?;
            let lambdas: Vec<f64> = spec.eigenvalues().iter().copied().collect();
            let tau = lambdas.iter().filter_map(|&l| characteristic_time(l, sigma2).ok()).collect();
            (lambdas, tau)
        }
        _ => (Vec::new(), Vec::new()),
    };
    let probes = even_probes(config.steps, a.probes);
    let mut trainer = Trainer::new(&objective, config.clone())?;
    let report = trainer.run(&probes)?;
    let w = trainer.embedding()?;
    let path = a.out.join("W.mxc");
    w.save(&path, "W").at(&path)?;
    m.output(&path);
    let trace_path = a.out.join(TRACE_FILE);
    let mut buf = Vec::new();
    report.trace.write_csv(&mut buf)?;
    write_file(&trace_path, &String::from_utf8(buf).expect("csv is utf-8"), &mut m)?;
    let summary = TrainSummary {
        config,
        probe_steps: report.probe_steps,
        loss_stderr: report.loss_stderr,
        final_flow_time: trainer.flow_time(),
        eigenvalues,
        tau,
    };
    write_json(&a.out.join(TRAIN_FILE), &summary, &mut m)?;
    println!(
        "trained {} steps, final loss {:e}",
        summary.config.steps,
        report.trace.loss.last().copied().unwrap_or(f64::NAN)
    );
    m.finish(&a.out)?;
    Ok(())
}

pub fn dynamics(a: &DynamicsArgs, args: &[String]) -> Result<()> {
    create_dir(&a.out)?;
    let mut m = ManifestBuilder::start("dynamics", args);
    let cfg = SilentAlignmentConfig {
        d: a.d,
        sigma2: a.sigma2.clone(),
        seed: a.seed,
        init: match a.init {
            DynInitArg::Random => InitKind::Random,
            DynInitArg::Aligned => InitKind::Aligned,
        },
        grid_points: a.grid_points,
        horizon: a.horizon,
    };
    m.seed(a.seed);
    m.config(&json!({ "target": a.target, "experiment": cfg }))?;
    let (target, _) = load_target(&a.target, &mut m)?;
    let report = silent_alignment_experiment(&target, &cfg)?;
    for (k, run) in report.runs.iter().enumerate() {
        let mut buf = Vec::new();
        run.trace.write_csv(&mut buf)?;
        write_file(&a.out.join(format!("dynamics_{k}.csv")), &String::from_utf8(buf).expect("csv is utf-8"), &mut m)?;
        println!(
            "sigma2 {:e}: sup distance {:e}, final relative distance {:e}",
            run.sigma2, run.sup_distance, run.final_relative_distance
        );
    }
    write_json(&a.out.join(DYNAMICS_FILE), &report, &mut m)?;
    m.finish(&a.out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityResult {
    pub file: String,
    pub pairs: usize,
    pub dropped_oov: usize,
    pub score: String,
    pub spearman: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentNeighbors {
    pub component: usize,
    pub neighbors: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub embedding: String,
    pub analogy: Vec<qwem_core::eval::AnalogyReport>,
    pub dropped_oov: usize,
    pub dropped_repeated: usize,
    pub similarity: Option<SimilarityResult>,
    pub components: Vec<ComponentNeighbors>,
}

pub fn eval(a: &EvalArgs, args: &[String]) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| parent_dir(&a.embedding));
    create_dir(&out)?;
    let mut m = ManifestBuilder::start("eval", args);
    m.config(&json!({
        "embedding": a.embedding, "vocab_file": a.vocab_file, "analogies": a.analogies,
        "similarity": a.similarity, "normalization": format!("{:?}", a.normalization),
        "score": format!("{:?}", a.score), "components": a.components, "top_n": a.top_n,
    }))?;
    if a.analogies.is_none() && a.similarity.is_none() && a.components == 0 {
        return Err(CliError::usage("nothing to evaluate: pass --analogies, --similarity or --components"));
    }
    let (w, vocab) = load_embedding(&a.embedding, a.vocab_file.as_deref(), &mut m)?;
    let mut summary = EvalSummary {
        embedding: a.embedding.display().to_string(),
        analogy: Vec::new(),
        dropped_oov: 0,
        dropped_repeated: 0,
        similarity: None,
        components: Vec::new(),
    };
    if let Some(path) = &a.analogies {
        m.input(path)?;
        let text = fs::read_to_string(path).at(path)?;
        let set = AnalogySet::parse(&text, &vocab).at(path)?;
        summary.dropped_oov = set.dropped_oov;
        summary.dropped_repeated = set.dropped_repeated;
        let norms: &[Normalization] = match a.normalization {
            NormArg::Full => &[Normalization::Full],
            NormArg::CandidateOnly => &[Normalization::CandidateOnly],
            NormArg::Both => &[Normalization::Full, Normalization::CandidateOnly],
        };
        for &norm in norms {
            let report = analogy_accuracy(w.matrix(), &set, norm)?;
            let name = match norm {
                Normalization::Full => "full",
                Normalization::CandidateOnly => "candidate_only",
            };
            write_file(&out.join(format!("analogy_{name}.csv")), &report.to_csv(), &mut m)?;
            println!("analogy ({name}): {}/{} = {:.4}", report.correct, report.total, report.accuracy);
            summary.analogy.push(report);
        }
    }
    if let Some(path) = &a.similarity {
        m.input(path)?;
        let text = fs::read_to_string(path).at(path)?;
        let set = SimilaritySet::parse(&text, &vocab).at(path)?;
        let sim = match a.score {
            ScoreArg::Inner => Similarity::Inner,
            ScoreArg::Cosine => Similarity::Cosine,
        };
        let rho = spearman(w.matrix(), &set, sim)?;
        println!("similarity: spearman {rho:.4} over {} pairs", set.pairs.len());
        summary.similarity = Some(SimilarityResult {
            file: path.display().to_string(),
            pairs: set.pairs.len(),
            dropped_oov: set.dropped_oov,
            score: format!("{:?}", a.score).to_lowercase(),
            spearman: rho,
        });
    }
    for component in 0..a.components.min(w.dim()) {
        let neighbors = pc_neighbors(w.matrix(), &vocab, component, a.top_n)?;
        summary.components.push(ComponentNeighbors { component, neighbors });
    }
    write_json(&out.join(EVAL_FILE), &summary, &mut m)?;
    m.finish(&out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskvecSummary {
    pub embedding: String,
    pub d_grid: Vec<usize>,
    pub rank_tol: f64,
    pub sweep: Vec<SweepRow>,
    pub spectra: Vec<SpectrumPlot>,
}

fn default_grid(dim: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (1..=10).map(|k| (k * dim / 10).max(2).min(dim)).collect();
    grid.dedup();
    grid
}

pub fn taskvec(a: &TaskvecArgs, args: &[String]) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| parent_dir(&a.embedding));
    create_dir(&out)?;
    let mut m = ManifestBuilder::start("taskvec", args);
    let (w, vocab) = load_embedding(&a.embedding, a.vocab_file.as_deref(), &mut m)?;
    let grid = if a.d_grid.is_empty() { default_grid(w.dim()) } else { a.d_grid.clone() };
    if let Some(&d) = grid.iter().find(|&&d| d == 0 || d > w.dim()) {
        return Err(CliError::usage(format!("--d-grid entry {d} outside 1..={}", w.dim())));
    }
    m.config(&json!({
        "embedding": a.embedding, "vocab_file": a.vocab_file, "analogies": a.analogies,
        "d_grid": grid, "rank_tol": a.rank_tol, "bins": a.bins,
    }))?;
    m.input(&a.analogies)?;
    let text = fs::read_to_string(&a.analogies).at(&a.analogies)?;
    let set = AnalogySet::parse(&text, &vocab).at(&a.analogies)?;
    let categories = set.pair_categories();
    let sweep = snr_sweep(&w, &categories, &grid, a.rank_tol)?;
    write_file(&out.join("sweep.csv"), &sweep_csv(&sweep), &mut m)?;
    let mut spectra = Vec::new();
    for (k, (name, pairs)) in categories.iter().enumerate() {
        let tv = task_vectors_from_ids(&w, name, pairs, w.dim())?;
        let plot = spectrum_plot(&tv, a.bins)?;
        let mut csv = String::from("left,right,count\n");
        for (i, c) in plot.histogram.counts.iter().enumerate() {
            csv.push_str(&format!("{:e},{:e},{c}\n", plot.histogram.edges[i], plot.histogram.edges[i + 1]));
        }
        write_file(&out.join(format!("spectrum_{k}.csv")), &csv, &mut m)?;
        println!("{name}: sigma2 {:e}, d_eff {}, ks {:.4}", plot.fit.sigma2, plot.fit.d_eff, plot.fit.ks);
        spectra.push(plot);
    }
    let summary = TaskvecSummary {
        embedding: a.embedding.display().to_string(),
        d_grid: grid,
        rank_tol: a.rank_tol,
        sweep,
        spectra,
    };
    write_json(&out.join(TASKVEC_FILE), &summary, &mut m)?;
    m.finish(&out)?;
    Ok(())
}
