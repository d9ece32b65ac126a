use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use multiea::dataset::{build_multi_kg, split_labels, AlignmentLabel, MultiKgDataset};
use multiea::encoder::{encode, EncodedEmbeddings};
use multiea::io::{self, DatasetDir};
use multiea::metrics::{evaluate, evaluation_similarities, EvalReport};
use multiea::synthetic::{planted, PlantedConfig};
use multiea::training::{prepare_graphs, train as fit, TrainOutcome};
use multiea::{Error, Result};

use crate::config::{EvalSection, RunConfig};
use crate::manifest::RunManifest;
use crate::{BuildArgs, EvalArgs, EvalOverrides, ExportArgs, SweepArgs, SweepParam, SynthArgs, TrainArgs, TrainOverrides};

const CHECKPOINT: &str = "checkpoint.bin";
const CONFIG: &str = "config.toml";

impl TrainOverrides {
    fn apply(&self, c: &mut multiea::training::TrainConfig) {
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if self.anchor_index.is_some() {
            c.anchor_index = self.anchor_index;
        }
        if let Some(v) = self.margin {
            c.margin = v;
        }
        if let Some(v) = self.negative_groups {
            c.negative_groups = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.dim {
            c.dim = v;
        }
        if let Some(v) = self.layer_count {
            c.layer_count = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.seed {
            c.rng_seed = v;
        }
        if let Some(v) = self.train_ratio {
            c.train_ratio = v;
        }
        if let Some(v) = self.monitor_fraction {
            c.monitor_fraction = v;
        }
        if self.ordered_pairs {
            c.ordered_pairs = true;
        }
    }
}

impl EvalOverrides {
    fn apply(&self, e: &mut EvalSection) {
        if self.infer {
            e.infer = true;
        }
        if self.no_infer {
            e.infer = false;
        }
        if let Some(g) = self.gamma {
            e.gamma = g;
        }
        if let Some(ks) = &self.ks {
            e.ks = ks.clone();
        }
        if let Some(p) = self.pool {
            e.pool = p;
        }
    }
}

fn dataset_path(config: &RunConfig) -> Result<PathBuf> {
    config
        .dataset
        .clone()
        .ok_or_else(|| Error::config("no dataset given (use --dataset or `dataset` in the config)"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn fingerprint_dataset(manifest: &mut RunManifest, dir: &Path, ds: &DatasetDir) -> Result<()> {
    for f in io::dataset_files(dir, &ds.names) {
        manifest.input(&f)?;
    }
    Ok(())
}

fn embeddings_for(ds: &DatasetDir, params: &multiea::encoder::ModelParams) -> Result<EncodedEmbeddings> {
    let (kgs, graphs) = prepare_graphs(&ds.kgs)?;
    params.check_against(&kgs)?;
    encode(&graphs, params)
}

pub fn build_dataset(args: BuildArgs) -> Result<()> {
    if args.pairs.len() + 1 != args.graphs.len() {
        return Err(Error::config(format!(
            "{} graphs need {} --pairs files, got {}",
            args.graphs.len(),
            args.graphs.len().saturating_sub(1),
            args.pairs.len()
        )));
    }
    let mut manifest = RunManifest::new("build-dataset", &serde_json::json!({
        "graphs": args.graphs,
        "pairs": args.pairs,
        "degree_threshold": args.degree_threshold,
    }));
    let mut kgs = Vec::new();
    for (_, path) in &args.graphs {
        kgs.push(io::load_triples_file(path)?);
        manifest.input(path)?;
    }
    let mut tables = Vec::new();
    for path in &args.pairs {
        tables.push(io::load_pairs_file(path)?);
        manifest.input(path)?;
    }
    let built = build_multi_kg(&kgs, &tables, args.degree_threshold)?;
    let names: Vec<String> = args.graphs.iter().map(|(n, _)| n.clone()).collect();
    let subgraphs = built.kgs();
    io::write_dataset_dir(&args.out, &names, &subgraphs, &built.labels)?;

    let stats = io::stats_table(&names, &subgraphs, built.labels.len());
    write_text(&args.out.join("stats.tsv"), &stats)?;
    let mut named = String::new();
    for l in &built.labels {
        let row: Vec<String> = l
            .entities()
            .iter()
            .enumerate()
            .map(|(m, &e)| subgraphs[m].entity_label(e))
            .collect();
        named.push_str(&row.join("\t"));
        named.push('\n');
    }
    write_text(&args.out.join("labels_named.tsv"), &named)?;
    for (name, sub) in names.iter().zip(&built.subgraphs) {
        let map: String = sub
            .entity_map
            .iter()
            .enumerate()
            .map(|(new, old)| format!("{new}\t{old}\n"))
            .collect();
        write_text(&args.out.join(name).join("source_index.tsv"), &map)?;
    }

    print!("{stats}");
    println!(
        "label ratio {:.4}; dropped {} labels missing from a graph, {} removed by induction",
        built.label_ratio(),
        built.dropped_missing,
        built.dropped_by_induction
    );
    for f in io::dataset_files(&args.out, &names) {
        manifest.output(&f);
    }
    manifest.write(&args.out.join("manifest.json"))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let config = PlantedConfig {
        graphs: args.graphs,
        entities: args.entities,
        relations: args.relations,
        triples: args.triples,
        seed: args.seed,
    };
    let inst = planted(&config)?;
    let names: Vec<String> = (0..config.graphs).map(|m| format!("g{m}")).collect();
    io::write_dataset_dir(&args.out, &names, &inst.kgs, &inst.labels)?;
    write_text(
        &args.out.join("stats.tsv"),
        &io::stats_table(&names, &inst.kgs, inst.labels.len()),
    )?;
    let mut manifest = RunManifest::new("synth", &config);
    manifest.seeds.push(("seed".into(), config.seed));
    for f in io::dataset_files(&args.out, &names) {
        manifest.output(&f);
    }
    manifest.write(&args.out.join("manifest.json"))
}

struct Trained {
    dataset: DatasetDir,
    outcome: TrainOutcome,
    test: Vec<AlignmentLabel>,
    train: Vec<AlignmentLabel>,
}

fn run_training(config: &RunConfig, dataset_dir: &Path) -> Result<Trained> {
    let ds = io::read_dataset_dir(dataset_dir)?;
    let c = &config.train;
    let (train, test) = split_labels(&ds.labels, c.train_ratio, c.rng_seed)?;
    let mut data = MultiKgDataset::new(ds.kgs.clone(), train.clone(), test.clone())?;
    data.anchor_index = c.anchor_index;
    let outcome = fit(&data, c)?;
    Ok(Trained {
        dataset: ds,
        outcome,
        test,
        train,
    })
}

fn curve_tsv(outcome: &TrainOutcome) -> String {
    let mut out = String::from("epoch\tloss\tmonitor\tstep_seconds\tmonitor_seconds\n");
    for r in &outcome.curve {
        let monitor = r.monitor.map_or_else(|| "NA".to_string(), |m| format!("{m:.6}"));
        out.push_str(&format!(
            "{}\t{:.6}\t{monitor}\t{:.4}\t{:.4}\n",
            r.epoch, r.loss, r.step_seconds, r.monitor_seconds
        ));
    }
    out
}

fn report_for(ds: &DatasetDir, outcome_params: &multiea::encoder::ModelParams, test: &[AlignmentLabel], eval: &EvalSection) -> Result<EvalReport> {
    let embeddings = embeddings_for(ds, outcome_params)?;
    evaluate(&embeddings, test, &eval.options())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if args.dataset.is_some() {
        config.dataset = args.dataset.clone();
    }
    args.train.apply(&mut config.train);
    args.eval.apply(&mut config.eval);
    config.validate()?;
    let dataset_dir = dataset_path(&config)?;

    let mut manifest = RunManifest::new("train", &config);
    manifest.seeds.push(("rng_seed".into(), config.train.rng_seed));
    manifest.seeds.push(("split_seed".into(), config.train.rng_seed));

    let trained = run_training(&config, &dataset_dir)?;
    fingerprint_dataset(&mut manifest, &dataset_dir, &trained.dataset)?;
    let out = &args.out;
    fs::create_dir_all(out)?;
    io::save_checkpoint(&out.join(CHECKPOINT), &trained.outcome.params)?;
    io::save_labels_file(&out.join("train_labels.tsv"), &trained.train)?;
    io::save_labels_file(&out.join("test_labels.tsv"), &trained.test)?;
    write_text(&out.join("loss_curve.tsv"), &curve_tsv(&trained.outcome))?;
    let snapshot = toml::to_string(&config).map_err(|e| Error::config(e.to_string()))?;
    write_text(&out.join(CONFIG), &snapshot)?;

    let report = report_for(&trained.dataset, &trained.outcome.params, &trained.test, &config.eval)?;
    write_text(&out.join("report.tsv"), &report.to_tsv())?;
    println!(
        "trained {} epochs in {:.1}s, kept epoch {}{}",
        trained.outcome.curve.len(),
        trained.outcome.total_seconds,
        trained.outcome.best_epoch,
        if trained.outcome.stopped_early { " (early stop)" } else { "" }
    );
    print!("{}", report.summary());

    for f in [CHECKPOINT, "train_labels.tsv", "test_labels.tsv", "loss_curve.tsv", CONFIG, "report.tsv"] {
        manifest.output(&out.join(f));
    }
    manifest.write(&out.join("manifest.json"))
}

/// Config saved by `train`, with the explicit dataset overriding it.
fn run_config(run: &Path, config: Option<&Path>, dataset: Option<&PathBuf>) -> Result<RunConfig> {
    let path = config.map(Path::to_path_buf).unwrap_or_else(|| run.join(CONFIG));
    let mut c = RunConfig::load(&path)?;
    if let Some(d) = dataset {
        c.dataset = Some(d.clone());
    }
    Ok(c)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut config = run_config(&args.run, args.config.as_deref(), args.dataset.as_ref())?;
    args.eval.apply(&mut config.eval);
    config.validate()?;
    let dataset_dir = dataset_path(&config)?;
    let ds = io::read_dataset_dir(&dataset_dir)?;
    let params = io::load_checkpoint(&args.run.join(CHECKPOINT))?;
    let test = io::load_labels_file(&args.run.join("test_labels.tsv"))?;

    let mut manifest = RunManifest::new("eval", &config);
    fingerprint_dataset(&mut manifest, &dataset_dir, &ds)?;
    manifest.input(&args.run.join(CHECKPOINT))?;
    manifest.input(&args.run.join("test_labels.tsv"))?;

    let embeddings = embeddings_for(&ds, &params)?;
    let options = config.eval.options();
    let report = evaluate(&embeddings, &test, &options)?;
    let report_path = args.report.clone().unwrap_or_else(|| args.run.join("report.tsv"));
    write_text(&report_path, &report.to_tsv())?;
    manifest.output(&report_path);
    print!("{}", report.summary());

    if let Some(dir) = &args.dump_similarities {
        let set = evaluation_similarities(&embeddings, &test, options.gamma, options.pool)?;
        fs::create_dir_all(dir)?;
        for a in 0..ds.names.len() {
            for b in a + 1..ds.names.len() {
                let path = dir.join(format!("{}-{}.tsv", ds.names[a], ds.names[b]));
                let mut w = BufWriter::new(fs::File::create(&path)?);
                let (ka, kb) = (&ds.kgs[a], &ds.kgs[b]);
                io::write_similarity_dump(&mut w, set.get(a, b)?, |e| ka.entity_label(e), |e| kb.entity_label(e))?;
                w.flush()?;
                manifest.output(&path);
            }
        }
    }
    let manifest_path = report_path.with_extension("manifest.json");
    manifest.write(&manifest_path)
}

pub fn export_embeddings(args: ExportArgs) -> Result<()> {
    let config = run_config(&args.run, None, args.dataset.as_ref())?;
    let dataset_dir = dataset_path(&config)?;
    let ds = io::read_dataset_dir(&dataset_dir)?;
    let params = io::load_checkpoint(&args.run.join(CHECKPOINT))?;
    let embeddings = embeddings_for(&ds, &params)?;
    let mut manifest = RunManifest::new("export-embeddings", &config);
    manifest.input(&args.run.join(CHECKPOINT))?;
    fs::create_dir_all(&args.out)?;
    for (m, name) in ds.names.iter().enumerate() {
        let path = args.out.join(format!("{name}.tsv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        let kg = &ds.kgs[m];
        io::write_embeddings(&mut w, embeddings.table(m), |e| kg.entity_label(e))?;
        w.flush()?;
        manifest.output(&path);
    }
    manifest.write(&args.out.join("manifest.json"))
}

fn format_value(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "_")
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let mut base = RunConfig::load_or_default(args.config.as_deref())?;
    if args.dataset.is_some() {
        base.dataset = args.dataset.clone();
    }
    args.train.apply(&mut base.train);
    args.eval.apply(&mut base.eval);
    base.validate()?;
    let values = match (&args.values, args.param) {
        (Some(v), _) if !v.is_empty() => v.clone(),
        (_, SweepParam::Gamma) => (0..=5).map(|i| i as f64 * 0.2).collect(),
        _ => return Err(Error::config("--values is required for this parameter")),
    };
    let name = match args.param {
        SweepParam::Margin => "margin",
        SweepParam::NegativeGroups => "negative_groups",
        SweepParam::Gamma => "gamma",
        SweepParam::TrainRatio => "train_ratio",
    };
    // validate the whole grid before training anything
    let mut grid = Vec::new();
    let mut problems = Vec::new();
    for &v in &values {
        let mut c = base.clone();
        match args.param {
            SweepParam::Margin => c.train.margin = v,
            SweepParam::NegativeGroups => {
                if v.fract() != 0.0 || v < 1.0 {
                    problems.push(format!("negative_groups value {v} is not a positive integer"));
                }
                c.train.negative_groups = v as usize;
            }
            SweepParam::Gamma => {
                c.eval.gamma = v;
                c.eval.infer = true;
            }
            SweepParam::TrainRatio => c.train.train_ratio = v,
        }
        if let Err(Error::Config(list)) = c.validate() {
            problems.extend(list.into_iter().map(|p| format!("{name} = {v}: {p}")));
        }
        grid.push((v, c));
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let dataset_dir = dataset_path(&base)?;
    fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("sweep", &base);
    let mut table = String::from("param\tvalue\tmetric\tK\tscore\n");
    let mut shared: Option<Trained> = None;
    for (v, c) in &grid {
        let trained = match (args.param, shared.take()) {
            (SweepParam::Gamma, Some(t)) => t,
            _ => run_training(c, &dataset_dir)?,
        };
        let report = report_for(&trained.dataset, &trained.outcome.params, &trained.test, &c.eval)?;
        let metric = if report.graph_count > 2 { "M-Hits" } else { "Hits" };
        for &k in &c.eval.ks {
            if let Some(score) = report.headline(k) {
                table.push_str(&format!("{name}\t{v}\t{metric}\t{k}\t{score:.6}\n"));
            }
        }
        let path = args.out.join(format!("report_{name}_{}.tsv", format_value(*v)));
        write_text(&path, &report.to_tsv())?;
        manifest.output(&path);
        println!("{name} = {v}: {metric}@{} {:.4}", c.eval.ks[0], report.headline(c.eval.ks[0]).unwrap_or(f64::NAN));
        if args.param == SweepParam::Gamma {
            shared = Some(trained);
        }
    }
    if let Some(t) = &shared {
        fingerprint_dataset(&mut manifest, &dataset_dir, &t.dataset)?;
    }
    let path = args.out.join("sweep.tsv");
    write_text(&path, &table)?;
    manifest.output(&path);
    manifest.write(&args.out.join("manifest.json"))
}
