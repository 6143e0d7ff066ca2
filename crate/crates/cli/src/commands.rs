use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use log::{info, warn};
use vmr_core::gradcheck::{self, GradcheckConfig};
use vmr_core::io::manifest::{load_dataset, write_dataset, DatasetPaths};
use vmr_core::io::results::{read_results, write_results};
use vmr_core::metrics::{query_truths, report_csv, report_json, EvalTask, ReportRow};
use vmr_core::model::ModelParams;
use vmr_core::pairdet::{mine_pairs, PairKind, PairMap};
use vmr_core::retrieval::{build_index, retrieve_all, RetrievalConfig};
use vmr_core::synth::generate;
use vmr_core::trainer::Trainer;
use vmr_core::{Condition, Dataset};

use crate::config::ConfigFile;
use crate::{Cli, Command, DataArgs, DetectArgs, DetectorArgs, EvaluateArgs, Failure, GradcheckArgs, RetrieveArgs, SynthArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<(), Failure> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(&config, a),
        Command::DetectPairs(a) => detect_pairs(&config, a),
        Command::Train(a) => train(&config, a),
        Command::Retrieve(a) => retrieve(&config, a),
        Command::Evaluate(a) => evaluate(&config, a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn paths(data: &DataArgs) -> DatasetPaths {
    let mut p = DatasetPaths::beside(&data.manifest);
    if let Some(v) = &data.videos {
        p.videos = v.clone();
    }
    if let Some(v) = &data.parses {
        p.parses = v.clone();
    }
    p
}

fn load(config: &ConfigFile, data: &DataArgs) -> Result<Dataset, Failure> {
    Ok(load_dataset(&paths(data), &config.grid())?)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `i<TAB>j<TAB>kind<TAB>confidence`, potentially relevant pairs only.
pub fn pair_dump<'a>(pairs: impl IntoIterator<Item = (&'a (usize, usize), f64)>) -> String {
    let mut out = String::new();
    for (&(i, j), c) in pairs {
        let _ = writeln!(out, "{i}\t{j}\t{}\t{c:.6}", PairKind::PotentiallyRelevant);
    }
    out
}

fn relevant(labels: &PairMap) -> impl Iterator<Item = (&(usize, usize), f64)> {
    labels
        .iter()
        .filter(|(_, l)| l.kind == PairKind::PotentiallyRelevant)
        .map(|(k, l)| (k, l.confidence))
}

fn synth(config: &ConfigFile, a: SynthArgs) -> Result<(), Failure> {
    let mut cfg = config.synth;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.sigma = a.sigma.unwrap_or(cfg.sigma);
    cfg.n_videos = a.n_videos.unwrap_or(cfg.n_videos);
    cfg.n_actions = a.n_actions.unwrap_or(cfg.n_actions);
    cfg.n_train = a.n_train.unwrap_or(cfg.n_train);
    cfg.n_val = a.n_val.unwrap_or(cfg.n_val);
    cfg.n_test = a.n_test.unwrap_or(cfg.n_test);
    let corpus = generate(&cfg)?;
    let paths = write_dataset(&a.out, &corpus.dataset, &corpus.parses)?;
    write_text(&a.out.join("true_pairs.tsv"), &pair_dump(corpus.true_pairs.iter().map(|(k, &c)| (k, c))))?;
    println!(
        "{} videos, {} queries, {} true pairs -> {}",
        corpus.dataset.videos.len(),
        corpus.dataset.queries.len(),
        corpus.true_pairs.len(),
        paths.manifest.display()
    );
    Ok(())
}

fn detector(config: &ConfigFile, d: &DetectorArgs) -> Result<vmr_core::DetectorConfig, Failure> {
    let base = config.detector();
    vmr_core::DetectorConfig::new(d.phi.unwrap_or(base.phi), d.theta.unwrap_or(base.theta)).map_err(|e| Failure::Usage(e.to_string()))
}

fn detect_pairs(config: &ConfigFile, a: DetectArgs) -> Result<(), Failure> {
    let det = detector(config, &a.detector)?;
    let ds = load(config, &a.data)?;
    let queries: Vec<_> = ds.queries.iter().collect();
    let labels = mine_pairs(&queries, &det)?;
    let dump = pair_dump(relevant(&labels));
    let n_rel = dump.lines().count();
    let cross = labels
        .keys()
        .filter(|&&(i, j)| i != j && ds.video_of(i) != ds.video_of(j))
        .count();
    match &a.out {
        Some(p) => write_text(p, &dump)?,
        None => print!("{dump}"),
    }
    eprintln!(
        "{} queries, {cross} cross-video ordered pairs, {n_rel} potentially relevant (phi={}, theta={})",
        ds.queries.len(),
        det.phi,
        det.theta
    );
    Ok(())
}

fn train(config: &ConfigFile, a: TrainArgs) -> Result<(), Failure> {
    let condition = a
        .condition
        .or(config.train.condition)
        .ok_or_else(|| Failure::Usage("--condition is required (xml|pr|sl|sl-pr)".into()))?;
    let c_one = a.c_one || config.train.c_one.unwrap_or(false);
    if condition == Condition::Xml && (a.detector.phi.is_some() || a.detector.theta.is_some()) {
        warn!("condition xml does not use pairs; --phi/--theta are ignored");
    }
    let mut cfg = config.train(condition, c_one);
    if condition.uses_pairs() {
        cfg.detector = detector(config, &a.detector)?;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if cfg.pool_schedule.epochs_before >= cfg.epochs {
        warn!(
            "pool switch at epoch {} is past the last epoch {}; N_pool stays {}",
            cfg.pool_schedule.epochs_before, cfg.epochs, cfg.pool_schedule.pool_before
        );
    }
    let ds = load(config, &a.data)?;
    let mut trainer = Trainer::new(cfg, &ds)?;
    info!("training {} for {} epochs on {} queries", cfg.experiment(), cfg.epochs, ds.split_indices("train").len());
    let mut log = String::new();
    trainer.fit(|s| {
        info!("epoch {:>3}  n_pool {:>2}  loss {:.6}{}", s.epoch, s.n_pool, s.total, s.val_score.map(|v| format!("  val {v:.2}")).unwrap_or_default());
        log.push_str(&serde_json::to_string(s)?);
        log.push('\n');
        Ok(())
    })?;
    trainer.params().save(&a.out)?;
    if let Some(p) = &a.log {
        write_text(p, &log)?;
    }
    match (trainer.best(), &a.best_out) {
        (Some((epoch, score, params)), Some(p)) => {
            params.save(p)?;
            info!("best validation epoch {epoch} (VCMR-0.5 R@10 {score:.2}) -> {}", p.display());
        }
        (None, Some(_)) => warn!("no `val` split; --best-out not written"),
        _ => {}
    }
    println!("{}", a.out.display());
    Ok(())
}

fn split_indices(ds: &Dataset, split: &str) -> Result<Vec<usize>, Failure> {
    let idx = if split == "all" {
        (0..ds.queries.len()).collect()
    } else {
        ds.split_indices(split)
    };
    if idx.is_empty() {
        return Err(Failure::Usage(format!("no queries in split `{split}`")));
    }
    Ok(idx)
}

fn retrieve(config: &ConfigFile, a: RetrieveArgs) -> Result<(), Failure> {
    let d = RetrievalConfig::default();
    let cfg = RetrievalConfig {
        k_videos: a.k_videos.or(config.retrieval.k_videos).unwrap_or(d.k_videos),
        k_results: a.k_results.or(config.retrieval.k_results).unwrap_or(d.k_results),
        alpha: a.alpha.or(config.retrieval.alpha).or(config.train.alpha).unwrap_or(d.alpha),
    };
    if cfg.k_videos == 0 || cfg.k_results == 0 {
        return Err(Failure::Usage("--k-videos and --k-results must be >= 1".into()));
    }
    let params = ModelParams::load(&a.model)?;
    let ds = load(config, &a.data)?;
    let idx = split_indices(&ds, &a.split)?;
    let index = build_index(&params, &ds.videos)?;
    let qs: Vec<_> = idx
        .iter()
        .map(|&i| (ds.queries[i].query_id.clone(), &ds.queries[i].word_features, Some(ds.video_of(i))))
        .collect();
    let results = retrieve_all(&params, &index, &qs, &cfg)?;
    write_results(&a.out, &results)?;
    info!("{} queries -> {}", results.len(), a.out.display());
    Ok(())
}

fn evaluate(config: &ConfigFile, a: EvaluateArgs) -> Result<(), Failure> {
    if !a.results.is_file() {
        return Err(Failure::Usage(format!("results file {} does not exist", a.results.display())));
    }
    let ds = load(config, &a.data)?;
    let idx = split_indices(&ds, &a.split)?;
    let lists = read_results(&a.results)?;
    let truth = query_truths(&ds, &idx);
    let tasks = if a.tasks.is_empty() {
        vec![EvalTask::Vcmr, EvalTask::Svmr, EvalTask::Vr]
    } else {
        a.tasks.clone()
    };
    let mut row = ReportRow::new(a.label, a.phi, a.theta);
    for task in tasks {
        row.fill(task, &lists, &truth);
    }
    let rows = [row];
    let csv = report_csv(&rows)?;
    if let Some(p) = &a.csv {
        write_text(p, &csv)?;
    }
    if let Some(p) = &a.json {
        write_text(p, &report_json(&rows)?)?;
    }
    print!("{csv}");
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), Failure> {
    let cfg = GradcheckConfig::default();
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let outcomes = gradcheck::run(&cfg, &seeds)?;
    let mut conditions: Vec<String> = Vec::new();
    for o in &outcomes {
        if !conditions.contains(&o.condition) {
            conditions.push(o.condition.clone());
        }
    }
    let mut failed = 0;
    for c in &conditions {
        let of: Vec<_> = outcomes.iter().filter(|o| &o.condition == c).collect();
        let worst = of.iter().map(|o| o.max_rel_err).fold(0.0, f64::max);
        let objectives: Vec<&str> = {
            let mut v: Vec<&str> = Vec::new();
            for o in &of {
                if !v.contains(&o.objective.as_str()) {
                    v.push(&o.objective);
                }
            }
            v
        };
        let ok = of.iter().all(|o| o.passed);
        if !ok {
            failed += 1;
        }
        println!(
            "{} {c}: max rel err {worst:.2e} over {} seeds [{}]",
            if ok { "PASS" } else { "FAIL" },
            a.seeds,
            objectives.join(", ")
        );
    }
    if let Some(p) = &a.json {
        write_text(p, &(serde_json::to_string_pretty(&outcomes).context("serializing outcomes")? + "\n"))?;
    }
    if failed > 0 {
        return Err(Failure::Data(anyhow::anyhow!("{failed} condition(s) failed the gradient check")));
    }
    Ok(())
}
