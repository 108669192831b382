use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use sage_core::autodiff::Tensor;
use sage_core::baselines::{rotation_invariance_check, skipgram_objective, train_skipgram_on, SkipgramConfig};
use sage_core::datagen::{
    gen_gnp, gen_multigraph, gen_sbm_inductive, write_dataset, write_multi_dataset, SplitSpec, SyntheticSpec,
    CALIBRATED_NOISE,
};
use sage_core::eval::{fit_downstream_classifier, macro_f1, micro_f1, LogisticConfig};
use sage_core::experiments::{fit_inductive, inductive_vs_online, lookup_on_old_nodes, supervised_preset};
use sage_core::graph::{read_ids, read_labels, Graph};
use sage_core::model::{load_model, save_model};
use sage_core::probe::{gnp_family, noise_sweep, theorem1_probe, ProbeConfig};
use sage_core::sampler::{build_minibatch_plan, expected_tree_slots, generate_walks, NegativeDistribution};
use sage_core::train::{train, write_step_log, Mode, TrainData};
use sage_core::verify::gradient_suite;
use sage_core::{Result, SageError};

use crate::data::{self, Embeddings};
use crate::manifest::{manifest_path, write_atomic, RunManifest};
use crate::{BenchKind, Cli, CliError, Command, EmbedArgs, EvalArgs, GenArgs, GradcheckArgs, Kind, ProbeKind, TrainArgs};

pub fn dispatch(cli: &Cli) -> std::result::Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a)?,
        Command::Train(a) => train_cmd(cli, a)?,
        Command::Embed(a) => embed(cli, a)?,
        Command::Eval(a) => eval(cli, a)?,
        Command::Gradcheck(a) => return gradcheck(cli, a),
        Command::Bench(a) => match &a.what {
            BenchKind::Sampler { graph, batch_size, sizes, plans, out } => {
                bench_sampler(cli, graph, *batch_size, sizes, *plans, out)?
            }
            BenchKind::Inference { nodes, out } => bench_inference(cli, *nodes, out)?,
        },
        Command::Probe(a) => probe(cli, &a.what)?,
    }
    Ok(())
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

fn finish(mut m: RunManifest, files: &[PathBuf], manifest: &Path) -> Result<()> {
    for f in files {
        m.output(f)?;
    }
    m.write(manifest)?;
    info!("wrote {} (+ {})", files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(", "), manifest.display());
    Ok(())
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let mut m = RunManifest::new("gen", seed(cli), cli.threads);
    let mut spec = match &a.spec {
        Some(p) => {
            m.input(p)?;
            serde_json::from_reader(data::open(p)?)?
        }
        None => {
            let noise = a.noise.unwrap_or(CALIBRATED_NOISE);
            match a.kind {
                Kind::Sbm => SyntheticSpec::inductive(noise, 0),
                Kind::Multigraph => SyntheticSpec::multigraph(noise, 0),
            }
        }
    };
    spec.seed = cli.seed.unwrap_or(spec.seed);
    spec.nodes = a.nodes.unwrap_or(spec.nodes);
    m.seed = spec.seed;
    m.config = json!({ "kind": format!("{:?}", a.kind).to_lowercase(), "spec": spec });
    match a.kind {
        Kind::Sbm => {
            let d = m.time("generate", || gen_sbm_inductive(&spec))?;
            write_dataset(&a.out, &d, &spec)?;
        }
        Kind::Multigraph => {
            let d = m.time("generate", || gen_multigraph(&spec))?;
            write_multi_dataset(&a.out, &d, &spec)?;
        }
    }
    finish(m, &files_under(&a.out)?, &a.out.join("manifest.json"))
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut m = RunManifest::new("train", seed(cli), cli.threads);
    let t = Instant::now();
    let g = a.graph.load(&mut m)?;
    m.record("load", t);
    let r = a.model.resolve(g.feature_dim(), cli.seed, cli.threads)?;
    m.seed = r.train.seed;
    let labels = match a.graph.sibling(&a.labels, "labels.tsv") {
        Some(p) if r.train.mode == Mode::Sup => Some(data::labels(&p, &g, &mut m)?),
        _ => None,
    };
    if r.train.mode == Mode::Sup && labels.is_none() {
        return Err(SageError::InvalidConfig("supervised training needs --labels".into()));
    }
    let split = match a.graph.sibling(&a.split, "split.tsv") {
        Some(p) => data::read_split(&p, &g, &mut m)?,
        None => sage_core::datagen::Split { train: (0..g.node_count()).collect(), ..Default::default() },
    };
    let out = m.time("train", || -> Result<_> {
        match &labels {
            Some(y) => fit_inductive(
                &sage_core::datagen::Dataset { graph: g.clone(), labels: y.clone(), blocks: Vec::new(), split },
                &r.model,
                &r.train,
            ),
            None => {
                // unsupervised: walks run on the training subgraph only
                let sub = g.induced_subgraph(&split.train)?;
                let nodes: Vec<usize> = (0..sub.node_count()).collect();
                let tr = TrainData { graph: &sub, labels: None, nodes: &nodes };
                train(&tr, None, &r.model, &r.train)
            }
        }
    })?;
    let mut model_bytes = Vec::new();
    save_model(&mut model_bytes, &out.model)?;
    write_atomic(&a.out, &model_bytes)?;
    let log = crate::data::sibling_path(&a.out, ".log.tsv");
    let mut log_bytes = Vec::new();
    write_step_log(&mut log_bytes, &out.log)?;
    write_atomic(&log, &log_bytes)?;
    if let (Some(first), Some(last)) = (out.history.first(), out.history.last()) {
        info!("{} steps, train loss {:.4} -> {:.4}", out.steps, first.train_loss, last.train_loss);
    }
    m.config = serde_json::to_value(&r)?;
    finish(m, &[a.out.clone(), log], &manifest_path(&a.out))
}

fn embed(cli: &Cli, a: &EmbedArgs) -> Result<()> {
    let mut m = RunManifest::new("embed", seed(cli), cli.threads);
    m.input(&a.model)?;
    let model = load_model(data::open(&a.model)?)?;
    let t = Instant::now();
    let g = a.graph.load(&mut m)?;
    m.record("load", t);
    let nodes = match &a.nodes {
        Some(p) => data::node_list(p, &g, &mut m)?,
        None => (0..g.node_count()).collect(),
    };
    let before = model.params.checksum();
    let z = m.time("embed", || model.embed_nodes(&g, &nodes, a.batch_size, seed(cli)))?;
    if model.params.checksum() != before {
        return Err(SageError::InvalidConfig("embedding changed the model".into()));
    }
    let e = Embeddings { ids: nodes.iter().map(|&v| g.id(v).to_string()).collect(), z };
    let files = data::write_embeddings(&a.out, &e, a.format)?;
    m.config = json!({ "model": model.config, "batch_size": a.batch_size, "format": format!("{:?}", a.format).to_lowercase(), "nodes": nodes.len() });
    finish(m, &files, &manifest_path(&a.out))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut m = RunManifest::new("eval", seed(cli), cli.threads);
    let e = data::read_embeddings(&a.embeddings, &mut m)?;
    // a graph with no edges over the labelled ids, just to resolve ids
    let label_ids: Vec<String> = read_ids(data::open(&a.labels)?)?
        .into_iter()
        .map(|l| l.split('\t').next().unwrap_or_default().to_string())
        .collect();
    let n = label_ids.len();
    let ids = Graph::build(label_ids, &[], Tensor::zeros(n, 1))?;
    m.input(&a.labels)?;
    let labels = read_labels(data::open(&a.labels)?, &ids, None, None)?;
    let split = data::read_split(&a.split, &ids, &mut m)?;
    let row_of: std::collections::HashMap<&str, usize> = e.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let rows = |nodes: &[usize]| -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&v| row_of.get(ids.id(v)).copied().ok_or_else(|| SageError::UnknownNode(format!("{} has no embedding", ids.id(v)))))
            .collect()
    };
    let (tr, te) = (rows(&split.train)?, rows(&split.test)?);
    let cfg = LogisticConfig { lr: a.lr, epochs: a.epochs, l2: a.l2, seed: seed(cli) };
    let (micro, macro_) = m.time("classify", || -> Result<_> {
        let clf = fit_downstream_classifier(&e.z.select_rows(&tr), &labels.select(&split.train), &cfg)?;
        let truth = labels.select(&split.test);
        let pred = clf.predict(&e.z.select_rows(&te))?;
        Ok((micro_f1(&pred, &truth)?, macro_f1(&pred, &truth)?))
    })?;
    info!("micro-F1 {micro:.4}, macro-F1 {:.4} on {} test nodes", macro_.value, te.len());
    let report = json!({ "micro_f1": micro, "macro_f1": macro_.value, "train": tr.len(), "test": te.len() });
    write_atomic(&a.out, &serde_json::to_vec_pretty(&report)?)?;
    m.config = json!({ "classifier": cfg });
    finish(m, &[a.out.clone()], &manifest_path(&a.out))
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> std::result::Result<(), CliError> {
    let mut m = RunManifest::new("gradcheck", seed(cli), cli.threads);
    let cases = m.time("check", || gradient_suite(a.seeds, a.step))?;
    let worst = cases.iter().max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error)).ok_or(SageError::Empty("gradient cases"))?;
    info!("{} cases, worst relative error {:.3e} ({} {:?} seed {})", cases.len(), worst.max_rel_error, worst.aggregator, worst.objective, worst.seed);
    if let Some(out) = &a.out {
        write_atomic(out, &serde_json::to_vec_pretty(&json!({ "worst": worst, "cases": cases })).map_err(SageError::from)?)?;
        m.config = json!({ "seeds": a.seeds, "step": a.step, "tolerance": a.tolerance });
        finish(m, &[out.clone()], &manifest_path(out))?;
    }
    if worst.max_rel_error >= a.tolerance {
        return Err(CliError::Numerical(format!(
            "gradient check failed: {} {:?} seed {} has relative error {:.3e} >= {:.1e}",
            worst.aggregator, worst.objective, worst.seed, worst.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

fn bench_sampler(cli: &Cli, graph: &data::GraphArgs, batch: usize, sizes: &[usize], plans: usize, out: &Path) -> Result<()> {
    let mut m = RunManifest::new("bench sampler", seed(cli), cli.threads);
    let g = graph.load(&mut m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(cli));
    let nodes: Vec<usize> = (0..g.node_count()).collect();
    let t = Instant::now();
    let mut slots = 0;
    for i in 0..plans {
        let start = (i * batch) % nodes.len().max(1);
        let chunk: Vec<usize> = (0..batch.min(nodes.len())).map(|j| nodes[(start + j) % nodes.len()]).collect();
        let plan = build_minibatch_plan(&g, &chunk, sizes, &mut rng)?;
        slots = plan.tree_slots_per_item().first().copied().unwrap_or(0);
    }
    let secs = t.elapsed().as_secs_f64();
    let mut tsv = String::from("batch_size\tsizes\tplans\tseconds\tplans_per_sec\tslots_per_item\texpected_slots\n");
    let sz: Vec<String> = sizes.iter().map(ToString::to_string).collect();
    writeln!(tsv, "{batch}\t{}\t{plans}\t{secs:.6}\t{:.2}\t{slots}\t{}", sz.join(","), plans as f64 / secs.max(1e-12), expected_tree_slots(sizes)).ok();
    write_atomic(out, tsv.as_bytes())?;
    m.record("plans", t);
    m.config = json!({ "batch_size": batch, "sizes": sizes, "plans": plans });
    finish(m, &[out.to_path_buf()], &manifest_path(out))
}

fn bench_inference(cli: &Cli, nodes: usize, out: &Path) -> Result<()> {
    let s = seed(cli);
    let mut m = RunManifest::new("bench inference", s, cli.threads);
    let spec = SyntheticSpec {
        nodes,
        split: SplitSpec::Evolving { train: 0.5, val: 0.0, test: 0.5 },
        ..SyntheticSpec::inductive(CALIBRATED_NOISE, s)
    };
    let d = gen_sbm_inductive(&spec)?;
    let (mcfg, mut tcfg) = supervised_preset(d.graph.feature_dim(), "mean", s);
    tcfg.threads = cli.threads;
    let trained = m.time("train", || fit_inductive(&d, &mcfg, &tcfg))?;
    let sg = SkipgramConfig { seed: s, ..SkipgramConfig::default() };
    let lookup = m.time("lookup", || lookup_on_old_nodes(&d.graph, &d.split.train, &sg))?;
    let (cmp, _) = inductive_vs_online(&trained.model, &d.graph, &d.split.test, &lookup, &sg, s)?;
    info!("speedup {:.1}x over {} new nodes", cmp.speedup(), cmp.nodes);
    let tsv = format!(
        "nodes\tinductive_s\tinductive_updates\tonline_s\tonline_updates\tspeedup\tparams_unchanged\n{}\t{:.6}\t{}\t{:.6}\t{}\t{:.3}\t{}\n",
        cmp.nodes,
        cmp.inductive.as_secs_f64(),
        cmp.inductive_updates,
        cmp.online.as_secs_f64(),
        cmp.online_updates,
        cmp.speedup(),
        cmp.params_unchanged
    );
    write_atomic(out, tsv.as_bytes())?;
    m.config = json!({ "spec": spec, "model": mcfg, "train": tcfg, "skipgram": sg });
    finish(m, &[out.to_path_buf()], &manifest_path(out))
}

fn probe(cli: &Cli, what: &ProbeKind) -> Result<()> {
    let s = seed(cli);
    let mut m = RunManifest::new("probe", s, cli.threads);
    let (out, body) = match what {
        ProbeKind::Theorem1 { graphs, train_graphs, nodes, p, feature_dim, epochs, out } => {
            if train_graphs >= graphs {
                return Err(SageError::InvalidConfig("--train-graphs must be below --graphs".into()));
            }
            let family = gnp_family(*graphs, *nodes, *p, *feature_dim, s)?;
            let mut cfg = ProbeConfig { seed: s, ..ProbeConfig::default() };
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            let r = m.time("probe", || theorem1_probe(&family[..*train_graphs], &family[*train_graphs..], &cfg))?;
            info!("test MSE {:.5} vs predict-mean {:.5} (ratio {:.3})", r.mse, r.baseline_mse, r.ratio());
            m.config = json!({ "probe": cfg, "graphs": graphs, "train_graphs": train_graphs, "nodes": nodes, "p": p, "feature_dim": feature_dim });
            (out, serde_json::to_vec_pretty(&json!({ "report": r, "ratio": r.ratio() }))?)
        }
        ProbeKind::Noise { fractions, aggs, dim, out } => {
            let d = gen_sbm_inductive(&SyntheticSpec::inductive(CALIBRATED_NOISE, s))?;
            let names: Vec<&str> = aggs.iter().map(String::as_str).collect();
            let points = m.time("sweep", || noise_sweep(&d, fractions, &names, *dim, s))?;
            let mut tsv = String::from("fraction\taggregator\tf1\n");
            for p in &points {
                writeln!(tsv, "{}\t{}\t{:.6}", p.fraction, p.aggregator, p.f1).ok();
            }
            m.config = json!({ "fractions": fractions, "aggregators": aggs, "dim": dim, "noise": CALIBRATED_NOISE });
            (out, tsv.into_bytes())
        }
        ProbeKind::Rotation { nodes, trials, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let g = gen_gnp(*nodes, 0.05, 1, &mut rng)?;
            let all: Vec<usize> = (0..*nodes).collect();
            let cfg = SkipgramConfig { seed: s, ..SkipgramConfig::default() };
            let z = train_skipgram_on(&g, &all, &cfg)?.z;
            let pairs = generate_walks(&g, &cfg.walks, &mut rng)?.pairs;
            let negatives = NegativeDistribution::new(&g, cfg.alpha)?.draw_negatives(cfg.negatives, &mut rng);
            let worst = m.time("rotate", || rotation_invariance_check(&z, |z| skipgram_objective(z, &pairs, &negatives), *trials, &mut rng))?;
            info!("worst |J(Z) - J(ZQ)| over {trials} rotations: {worst:.3e}");
            m.config = json!({ "nodes": nodes, "trials": trials, "skipgram": cfg });
            (out, serde_json::to_vec_pretty(&json!({ "worst_abs_change": worst, "trials": trials }))?)
        }
    };
    write_atomic(out, &body)?;
    finish(m, &[out.clone()], &manifest_path(out))
}
