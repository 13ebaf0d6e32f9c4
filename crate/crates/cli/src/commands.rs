//! Subcommand implementations. Every file written carries a `# ` header line
//! with the command, the config hash, the seed and the stage plan.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nebias::corpus::{build_index, load_corpus, load_ne_inventory, Corpus, NeInventory};
use nebias::exemplar::{augment_corpus_with, build_pool, write_provenance};
use nebias::experiment::{
    run_systems, sweep, sweep_mean, ur_keywords, write_sweep_csv, ExperimentConfig, Figure,
    SystemId, World, SWEEP_CSV_HEADER,
};
use nebias::lattice::text::{read_lattices, write_lattices};
use nebias::metrics::{corpus_stats, evaluate, EvalReport, MetricsError};
use nebias::ngram::{read_arpa, train_ngram_with_vocab, NGramModel, Smoothing, BOS, EOS, UNK};
use nebias::par::{self, Exec};
use nebias::rescore::{read_hypotheses, run_pipeline, write_hypotheses, PipelineModels, Stage, StagePlan};
use nebias::rnnlm::{enrich_embeddings, read_checkpoint, train_rnnlm_with_vocab, RnnLmModel};
use nebias::simdecode::{build_confusion_model, simulate_corpus};
use nebias::seed::derive_seed;
use nebias::synth::generate;
use nebias::{Lattice, SymbolTable};

use crate::config::{self, PipelineConfig};
use crate::{Cli, Command, DataArgs, InputError, ModelArgs};

struct Ctx {
    cfg: PipelineConfig,
    /// Experiment settings with every seeded component keyed to `cfg.seed`.
    exp: ExperimentConfig,
    hash: String,
    command: &'static str,
    exec: Exec,
}

fn bad_input(path: &Path, e: impl Display) -> anyhow::Error {
    InputError(format!("{}: {e}", path.display())).into()
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| bad_input(path, format!("cannot read: {e}")))
}

fn lexicon(inventory: &NeInventory) -> Vec<&str> {
    inventory
        .entities()
        .iter()
        .map(|e| e.surface.as_str())
        .collect()
}

impl Ctx {
    fn header(&self, plan: Option<&str>) -> String {
        format!(
            "# nebias {} config={} seed={} plan={}\n",
            self.command,
            self.hash,
            self.cfg.seed,
            plan.unwrap_or("-")
        )
    }

    fn out(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.cfg.paths.out(default))
    }

    fn write(&self, path: &Path, plan: Option<&str>, body: &str) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating directory {}", dir.display()))?;
        }
        let mut text = self.header(plan);
        text.push_str(body);
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn train(&self, d: &DataArgs) -> Result<Corpus> {
        let p = d.train.clone().unwrap_or_else(|| self.cfg.paths.train());
        load_corpus(read_file(&p)?.as_bytes()).map_err(|e| bad_input(&p, e))
    }

    fn test(&self, d: &DataArgs) -> Result<Corpus> {
        let p = d.test.clone().unwrap_or_else(|| self.cfg.paths.test());
        load_corpus(read_file(&p)?.as_bytes()).map_err(|e| bad_input(&p, e))
    }

    /// Inventory with training counts taken from `train`.
    fn inventory(&self, d: &DataArgs, train: &Corpus) -> Result<NeInventory> {
        let p = d
            .inventory
            .clone()
            .unwrap_or_else(|| self.cfg.paths.inventory());
        load_ne_inventory(read_file(&p)?.as_bytes(), train).map_err(|e| bad_input(&p, e))
    }
}

fn read_lm(path: &Path) -> Result<NGramModel> {
    read_arpa(read_file(path)?.as_bytes()).map_err(|e| bad_input(path, e))
}

fn read_rnn(path: &Path) -> Result<RnnLmModel> {
    read_checkpoint(read_file(path)?.as_bytes()).map_err(|e| bad_input(path, e))
}

fn read_lattice_file(path: &Path) -> Result<(Vec<Lattice>, SymbolTable)> {
    let mut symbols = SymbolTable::new();
    let lattices =
        read_lattices(read_file(path)?.as_bytes(), &mut symbols).map_err(|e| bad_input(path, e))?;
    Ok((lattices, symbols))
}

fn to_string<F>(f: F) -> Result<String>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).context("output is not UTF-8")
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut cfg = config::load(g.config.as_deref(), &g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = g.out {
        cfg.paths.out_dir = o;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    let exec = if cfg.jobs == 1 {
        Exec::Sequential
    } else {
        if cfg.jobs > 1 {
            par::init_workers(cfg.jobs);
        }
        Exec::Parallel
    };
    let command = match &cli.command {
        Command::Config => "config",
        Command::Synth => "synth",
        Command::Stats { .. } => "stats",
        Command::TrainNgram { .. } => "train-ngram",
        Command::Exemplar { .. } => "exemplar",
        Command::Simulate { .. } => "simulate",
        Command::TrainRnnlm { .. } => "train-rnnlm",
        Command::Enrich { .. } => "enrich",
        Command::Rescore { .. } => "rescore",
        Command::Boost { .. } => "boost",
        Command::Score { .. } => "score",
        Command::Sweep { .. } => "sweep",
        Command::Run { .. } => "run",
    };
    let ctx = Ctx {
        exp: cfg.experiment.for_trial(cfg.seed),
        hash: cfg.hash()?,
        cfg,
        command,
        exec,
    };
    match cli.command {
        Command::Config => {
            print!("{}", ctx.cfg.to_toml()?);
            Ok(())
        }
        Command::Synth => synth(&ctx),
        Command::Stats { data } => stats(&ctx, &data),
        Command::TrainNgram {
            data,
            order,
            output,
        } => train_ngram(&ctx, &data, order, &output),
        Command::Exemplar { data, output } => exemplar(&ctx, &data, &output),
        Command::Simulate { data, lm, output } => simulate(&ctx, &data, &lm, &output),
        Command::TrainRnnlm { data, output } => train_rnnlm(&ctx, &data, &output),
        Command::Enrich {
            data,
            model,
            output,
        } => enrich(&ctx, &data, &model, &output),
        Command::Rescore { plan, data, models } => {
            let plan: StagePlan = plan
                .parse()
                .map_err(|e| InputError(format!("--plan: {e}")))?;
            rescore(&ctx, plan, &data, &models)
        }
        Command::Boost { plan, data, models } => {
            let before: StagePlan = plan
                .parse()
                .map_err(|e| InputError(format!("--plan: {e}")))?;
            let mut stages = before.stages().to_vec();
            stages.push(Stage::LatticeBoost);
            let plan = StagePlan::new(stages).map_err(|e| InputError(format!("--plan: {e}")))?;
            rescore(&ctx, plan, &data, &models)
        }
        Command::Score {
            hyp,
            lattices,
            name,
            data,
            output,
        } => score(&ctx, &hyp, &lattices, &name, &data, &output),
        Command::Sweep { figure, output } => {
            let figure: Figure = figure
                .parse()
                .map_err(|e| InputError(format!("--figure: {e}")))?;
            run_sweep(&ctx, figure, &output)
        }
        Command::Run { systems, trial } => {
            let systems = match systems {
                None => SystemId::ALL.to_vec(),
                Some(s) => s
                    .split(',')
                    .map(|t| t.trim().parse::<SystemId>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| InputError(format!("--systems: {e}")))?,
            };
            run(&ctx, &systems, trial.unwrap_or(ctx.cfg.seed))
        }
    }
}

fn synth(ctx: &Ctx) -> Result<()> {
    let bench = generate(&ctx.exp.synth);
    let train = to_string(|b| Ok(bench.train.write(b)?))?;
    let test = to_string(|b| Ok(bench.test.write(b)?))?;
    let inventory = to_string(|b| Ok(bench.inventory.write(b)?))?;
    let mut competitors = String::from("ur_ne\tcompetitor\n");
    for (ur, rr) in &bench.competitors {
        let _ = writeln!(competitors, "{ur}\t{rr}");
    }
    ctx.write(&ctx.cfg.paths.out("train.txt"), None, &train)?;
    ctx.write(&ctx.cfg.paths.out("test.txt"), None, &test)?;
    ctx.write(&ctx.cfg.paths.out("inventory.tsv"), None, &inventory)?;
    ctx.write(&ctx.cfg.paths.out("competitors.tsv"), None, &competitors)?;
    println!(
        "{} training and {} test utterances, {} named entities in {}",
        bench.train.len(),
        bench.test.len(),
        bench.inventory.len(),
        ctx.cfg.paths.out_dir.display()
    );
    Ok(())
}

fn stats(ctx: &Ctx, data: &DataArgs) -> Result<()> {
    let train = ctx.train(data)?;
    let test = ctx.test(data)?;
    let inv = ctx.inventory(data, &train)?;
    let vocab: BTreeSet<String> = train.counts().keys().cloned().collect();
    let t = &ctx.exp.thresholds;
    let mut body = String::from("section\tmetric\tvalue\n");
    for (name, c) in [("train", &train), ("test", &test)] {
        let s = corpus_stats(c, &inv, &vocab);
        let _ = writeln!(body, "{name}\tutterances\t{}", s.utterances);
        let _ = writeln!(body, "{name}\ttokens\t{}", s.tokens);
        let _ = writeln!(body, "{name}\tne_tokens\t{}", s.ne_tokens);
        let _ = writeln!(body, "{name}\tne_rate\t{:.2}", s.ne_rate());
        let _ = writeln!(body, "{name}\toov_tokens\t{}", s.oov_tokens);
        let _ = writeln!(body, "{name}\toov_rate\t{:.2}", s.oov_rate());
    }
    let absent = inv.with_count_in(0, 0).count();
    let rare = inv.with_count_in(1, t.ur_max).count();
    let _ = writeln!(body, "inventory\tentities\t{}", inv.len());
    let _ = writeln!(body, "inventory\tabsent\t{absent}");
    let _ = writeln!(body, "inventory\trare\t{rare}");
    let _ = writeln!(body, "inventory\trich\t{}", inv.rich(t).count());
    ctx.write(&ctx.cfg.paths.out("stats.tsv"), None, &body)?;
    print!("{body}");
    Ok(())
}

fn train_ngram(ctx: &Ctx, data: &DataArgs, order: Option<usize>, output: &Option<PathBuf>) -> Result<()> {
    let order = order.unwrap_or(ctx.exp.rescore_order);
    if order == 0 {
        return Err(InputError("--order must be at least 1".into()).into());
    }
    let train = ctx.train(data)?;
    let inv = ctx.inventory(data, &train)?;
    let lm = train_ngram_with_vocab(&train, order, Smoothing::WittenBell, lexicon(&inv))?;
    let arpa = to_string(|b| Ok(lm.write_arpa(b)?))?;
    let path = ctx.out(output, &format!("models/ngram-o{order}.arpa"));
    ctx.write(&path, None, &arpa)?;
    let counts: Vec<String> = (1..=order).map(|k| lm.num_ngrams(k).to_string()).collect();
    println!(
        "order {order}, vocabulary {}, n-gram counts {}",
        lm.vocab_len(),
        counts.join("/")
    );
    Ok(())
}

fn exemplar(ctx: &Ctx, data: &DataArgs, output: &Option<PathBuf>) -> Result<()> {
    let train = ctx.train(data)?;
    let inv = ctx.inventory(data, &train)?;
    let t = &ctx.exp.thresholds;
    let index = build_index(&train, &inv, t);
    let pool = build_pool(&train, &inv, &index, t, &ctx.exp.exemplar)
        .map_err(|e| InputError(format!("exemplar pool: {e}")))?;
    let aug = augment_corpus_with(&train, &inv, &pool, &ctx.exp.exemplar, ctx.exec)?;
    let corpus = to_string(|b| Ok(aug.corpus.write(b)?))?;
    let records = to_string(|b| Ok(write_provenance(b, &aug.records)?))?;
    ctx.write(&ctx.out(output, "train_augmented.txt"), None, &corpus)?;
    ctx.write(&ctx.cfg.paths.out("exemplars.tsv"), None, &records)?;
    println!(
        "{} exemplar utterances from a pool of {} entries",
        aug.records.len(),
        pool.len()
    );
    Ok(())
}

fn simulate(ctx: &Ctx, data: &DataArgs, lm: &Option<PathBuf>, output: &Option<PathBuf>) -> Result<()> {
    let train = ctx.train(data)?;
    let test = ctx.test(data)?;
    let inv = ctx.inventory(data, &train)?;
    let lm = match lm {
        Some(p) => read_lm(p)?,
        None => train_ngram_with_vocab(
            &train,
            ctx.exp.first_pass_order,
            Smoothing::WittenBell,
            lexicon(&inv),
        )?,
    };
    let mut vocab: Vec<&str> = lexicon(&inv);
    for c in [&train, &test] {
        vocab.extend(c.counts().keys().map(String::as_str));
    }
    vocab.extend(
        lm.vocab()
            .iter()
            .map(String::as_str)
            .filter(|w| ![BOS, EOS, UNK].contains(w)),
    );
    let confusion = build_confusion_model(
        &vocab,
        derive_seed(ctx.exp.synth.seed, "confusion"),
        ctx.exp.confusion,
        ctx.exec,
    )?;
    let (lattices, symbols) =
        simulate_corpus(test.utterances(), &confusion, &lm, &ctx.exp.sim, ctx.exec)?;
    let text = to_string(|b| Ok(write_lattices(b, &lattices, &symbols)?))?;
    ctx.write(&ctx.out(output, "lattices.txt"), None, &text)?;
    let conf = to_string(|b| Ok(confusion.write_tsv(b)?))?;
    ctx.write(&ctx.cfg.paths.out("confusion.tsv"), None, &conf)?;
    let arcs: usize = lattices.iter().map(|l| l.arcs().len()).sum();
    println!("{} lattices, {arcs} arcs", lattices.len());
    Ok(())
}

fn train_rnnlm(ctx: &Ctx, data: &DataArgs, output: &Option<PathBuf>) -> Result<()> {
    let train = ctx.train(data)?;
    let inv = ctx.inventory(data, &train)?;
    let (model, report) = train_rnnlm_with_vocab(&train, &ctx.exp.rnn, lexicon(&inv))?;
    let ppl: Vec<String> = report
        .epoch_perplexities
        .iter()
        .map(|p| format!("{p:.3}"))
        .collect();
    let mut body = format!(
        "# perplexity initial={:.3} epochs={}\n",
        report.initial_perplexity,
        ppl.join(",")
    );
    body.push_str(&to_string(|b| Ok(model.write_checkpoint(b)?))?);
    ctx.write(&ctx.out(output, "models/rnnlm.txt"), None, &body)?;
    println!(
        "vocabulary {}, training perplexity {:.3} -> {}",
        model.vocab_len(),
        report.initial_perplexity,
        ppl.last().map(String::as_str).unwrap_or("-")
    );
    Ok(())
}

fn enrich(
    ctx: &Ctx,
    data: &DataArgs,
    model: &Option<PathBuf>,
    output: &Option<PathBuf>,
) -> Result<()> {
    let train = ctx.train(data)?;
    let inv = ctx.inventory(data, &train)?;
    let path = ctx.out(model, "models/rnnlm.txt");
    let base = read_rnn(&path)?;
    let e = enrich_embeddings(&base, &inv, &ctx.exp.thresholds, &ctx.exp.enrichment)
        .map_err(|e| InputError(format!("enrichment: {e}")))?;
    let mut body = format!(
        "# donors {}\n# targets {}\n",
        e.donors.join(","),
        e.targets.len()
    );
    body.push_str(&to_string(|b| Ok(e.model.write_checkpoint(b)?))?);
    ctx.write(&ctx.out(output, "models/rnnlm-enriched.txt"), None, &body)?;
    println!(
        "enriched {} embeddings from donors {}",
        e.targets.len(),
        e.donors.join(", ")
    );
    Ok(())
}

fn rescore(ctx: &Ctx, plan: StagePlan, data: &DataArgs, m: &ModelArgs) -> Result<()> {
    let train = ctx.train(data)?;
    let inv = ctx.inventory(data, &train)?;
    let (lattices, symbols) = read_lattice_file(&ctx.out(&m.lattices, "lattices.txt"))?;
    let order = ctx.exp.rescore_order;
    let ngram = plan
        .contains(Stage::NgramSwap)
        .then(|| read_lm(&ctx.out(&m.lm, &format!("models/ngram-o{order}.arpa"))))
        .transpose()?;
    let rnn = plan
        .contains(Stage::NeuralRescore)
        .then(|| read_rnn(&ctx.out(&m.rnn, "models/rnnlm.txt")))
        .transpose()?;
    let enriched = plan
        .contains(Stage::NeuralEnrichedRescore)
        .then(|| read_rnn(&ctx.out(&m.enriched_rnn, "models/rnnlm-enriched.txt")))
        .transpose()?;
    let models = PipelineModels {
        ngram: ngram.as_ref(),
        rnn: rnn.as_ref(),
        enriched_rnn: enriched.as_ref(),
    };
    let keywords = ur_keywords(&inv, &ctx.exp.thresholds, &symbols);
    let hyps = run_pipeline(
        &lattices,
        &symbols,
        &plan,
        &models,
        &keywords,
        &ctx.exp.rescore,
        ctx.exec,
    )?;
    let text = to_string(|b| Ok(write_hypotheses(b, &hyps)?))?;
    let plan_str = plan.to_string();
    ctx.write(&ctx.out(&m.output, "hyp.txt"), Some(&plan_str), &text)?;
    let boosted = hyps.iter().filter(|h| h.boosted).count();
    println!(
        "{} hypotheses with plan {plan_str}, {boosted} boosted",
        hyps.len()
    );
    Ok(())
}

fn score(
    ctx: &Ctx,
    hyp: &Option<PathBuf>,
    lattices: &Option<PathBuf>,
    name: &str,
    data: &DataArgs,
    output: &Option<PathBuf>,
) -> Result<()> {
    let train = ctx.train(data)?;
    let test = ctx.test(data)?;
    let inv = ctx.inventory(data, &train)?;
    let hyp_path = ctx.out(hyp, "hyp.txt");
    let parsed = read_hypotheses(&read_file(&hyp_path)?).map_err(|e| bad_input(&hyp_path, e))?;
    let by_id: HashMap<String, Vec<String>> =
        parsed.into_iter().map(|(id, _, w)| (id, w)).collect();
    let lats = lattices.as_deref().map(read_lattice_file).transpose()?;
    let report = evaluate(
        name,
        test.utterances(),
        &by_id,
        lats.as_ref().map(|(l, s)| (l.as_slice(), s)),
        &inv,
        &ctx.exp.thresholds,
    )
    .map_err(|e| match e {
        MetricsError::MissingHypothesis(_) => bad_input(&hyp_path, e),
        other => other.into(),
    })?;
    let body = format!("{}\n{}\n", EvalReport::TSV_HEADER, report.tsv_row());
    ctx.write(&ctx.out(output, "report.tsv"), None, &body)?;
    print!("{}", EvalReport::table(std::slice::from_ref(&report)));
    Ok(())
}

fn run_sweep(ctx: &Ctx, figure: Figure, output: &Option<PathBuf>) -> Result<()> {
    let world = World::new(&ctx.cfg.experiment, ctx.exec)?;
    let rows = sweep(&world, &ctx.cfg.experiment, &ctx.cfg.sweep, figure, ctx.exec)?;
    let csv = to_string(|b| Ok(write_sweep_csv(b, &rows)?))?;
    let path = ctx.out(output, &format!("{}.csv", figure.as_str()));
    ctx.write(&path, None, &csv)?;

    let mut keys: Vec<(f64, String)> = Vec::new();
    for r in &rows {
        if !keys.iter().any(|(x, m)| *x == r.x && *m == r.metric) {
            keys.push((r.x, r.metric.clone()));
        }
    }
    println!("{}", SWEEP_CSV_HEADER.replace(",seed", ",mean"));
    for (x, m) in keys {
        let mean = sweep_mean(&rows, x, &m).unwrap_or(f64::NAN);
        println!("{x},{m},{mean:.2}");
    }
    Ok(())
}

fn run(ctx: &Ctx, systems: &[SystemId], trial: u64) -> Result<()> {
    let world = World::new(&ctx.cfg.experiment, ctx.exec)?;
    let runs = run_systems(&world, &ctx.cfg.experiment, trial, systems, ctx.exec)?;
    let mut summary = format!("{}\n", EvalReport::TSV_HEADER);
    for r in &runs {
        let plan = r.provenance.plan.to_string();
        let id = r.provenance.system;
        ctx.write(
            &ctx.cfg.paths.out(&format!("systems/{id}.report.tsv")),
            Some(&plan),
            &r.render_report(),
        )?;
        ctx.write(
            &ctx.cfg.paths.out(&format!("systems/{id}.hyp.txt")),
            Some(&plan),
            &r.render_hypotheses(),
        )?;
        summary.push_str(&r.report.tsv_row());
        summary.push('\n');
    }
    ctx.write(&ctx.cfg.paths.out("summary.tsv"), None, &summary)?;
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    print!("{}", EvalReport::table(&reports));
    Ok(())
}
