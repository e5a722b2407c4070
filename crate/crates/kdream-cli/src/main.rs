//! `kdream`: pipeline front end for knowledge-guided molecular generation.
//!
//! Every subcommand is deterministic given (config, seed): randomness flows
//! from one global seed through named streams, so `--jobs` never changes
//! results. Each artifact-producing command also writes `<artifact>.manifest`
//! with input/output hashes, the seed, and timing.

mod config;
mod error;
mod manifest;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use error::CliError;
use kdream_core::crn::{load_crn, save_crn, train_crn, CrnParams, CrnTrainConfig};
use kdream_core::diffusion::{
    load_score_network, save_score_network, train_score, NoiseSchedule, ScoreNetwork,
    ScoreTrainConfig,
};
use kdream_core::gradcheck::{run_all, GRADCHECK_TOLERANCE};
use kdream_core::guidance::{
    generate, interpolate, recommended_guidance_weight, ChainRecord, GenerateConfig, GuidanceSpec,
};
use kdream_core::kg::KnowledgeGraph;
use kdream_core::kge::{
    evaluate_link_prediction, load_embeddings, save_embeddings, train_transe, EmbeddingTable,
    KgeTrainConfig,
};
use kdream_core::molgraph::{parse_smiles_lenient, write_smiles, MolecularGraph};
use kdream_core::stats::{compute_metrics, top_fraction_stats, ScoreMatrix};
use manifest::Manifest;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "kdream", version, about = "Knowledge-guided molecular generation pipeline")]
struct Cli {
    /// Sectioned key = value configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config value (also spelled --SECTION.KEY VALUE)
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Random seed (wins over the config and KDREAM_SEED)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 = available parallelism
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-graph ingestion
    Kg {
        #[command(subcommand)]
        cmd: KgCmd,
    },
    /// Translational embeddings
    Kge {
        #[command(subcommand)]
        cmd: KgeCmd,
    },
    /// Score-based diffusion model
    Diff {
        #[command(subcommand)]
        cmd: DiffCmd,
    },
    /// Context regressor network
    Crn {
        #[command(subcommand)]
        cmd: CrnCmd,
    },
    /// Sample molecules, optionally guided toward a target embedding
    Generate(GenerateArgs),
    /// Sample along an interpolation path between two target embeddings
    Interpolate(InterpolateArgs),
    /// Metrics and score summaries for a generated batch
    Evaluate(EvaluateArgs),
    /// Finite-difference verification of all analytic gradients
    Gradcheck,
    /// Print the effective configuration (defaults + file + overrides)
    Config,
}

#[derive(Subcommand)]
enum KgCmd {
    /// Normalize a triple file (dedup, drop reverse duplicates) into canonical TSV
    Build {
        /// head<TAB>relation<TAB>tail triples
        #[arg(long)]
        triples: PathBuf,
        /// entity<TAB>role (drug/target/other) annotations
        #[arg(long)]
        roles: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum KgeCmd {
    /// Train translational embeddings on the train split of a KG
    Train {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered link-prediction metrics on the held-out test split
    Eval {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Optional metrics report file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DiffCmd {
    /// Train the score network on a SMILES corpus (one molecule per line)
    Train {
        #[arg(long)]
        molecules: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CrnCmd {
    /// Train the regressor on SMILES<TAB>entity pairs against an embedding table
    Train {
        #[arg(long)]
        molecules: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// Score-network checkpoint
    #[arg(long)]
    score: PathBuf,
    /// Regressor checkpoint
    #[arg(long)]
    crn: PathBuf,
    /// Embedding table (required with --target)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Target entity name; known preset names pick their published λ_X
    #[arg(long)]
    target: Option<String>,
    /// Explicit target embedding, comma-separated
    #[arg(long, value_name = "V1,V2,...", conflicts_with = "target")]
    y: Option<String>,
    #[arg(long)]
    lambda_x: Option<f64>,
    #[arg(long)]
    lambda_e: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    crn: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Entity name at α = 0
    #[arg(long)]
    from: String,
    /// Entity name at α = 1
    #[arg(long)]
    to: String,
    /// Comma-separated interpolation weights in [0, 1]
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    alphas: String,
    #[arg(long)]
    lambda_x: Option<f64>,
    #[arg(long)]
    lambda_e: Option<f64>,
    /// Chains per interpolation point
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Generated molecules, one SMILES per line (blank = failed chain)
    #[arg(long)]
    molecules: PathBuf,
    /// Reference set for the novelty metric
    #[arg(long)]
    reference: Option<PathBuf>,
    /// TSV of named score columns, one row per molecule ("" or NA = missing)
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let argv = rewrite_dotted_flags(std::env::args().collect());
    let cli = Cli::parse_from(argv);
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("kdream: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

/// Rewrite `--section.key [=]value` flags into `--set section.key=value` so
/// that overrides mirror config keys exactly.
fn rewrite_dotted_flags(argv: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut iter = argv.into_iter().peekable();
    while let Some(arg) = iter.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|rest| {
                rest.split_once('.')
                    .is_some_and(|(section, _)| config::SECTIONS.contains(&section))
            })
            .map(|rest| rest.to_string());
        match dotted {
            Some(rest) if rest.contains('=') => {
                out.push("--set".into());
                out.push(rest);
            }
            Some(rest) => {
                let value = iter.next().unwrap_or_default();
                out.push("--set".into());
                out.push(format!("{rest}={value}"));
            }
            None => out.push(arg),
        }
    }
    out
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text, &path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    for spec in &cli.set {
        cfg.apply_override(spec)?;
    }
    if let Ok(v) = std::env::var("KDREAM_SEED") {
        cfg.run.seed = v
            .parse()
            .map_err(|_| CliError::Config(format!("KDREAM_SEED={v:?} is not a valid seed")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.run.jobs = jobs;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    if cfg.run.jobs > 0 {
        // results are stream-seeded per chain, so pool size never affects output
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.jobs)
            .build_global()
            .ok();
    }
    let start = Instant::now();
    match &cli.command {
        Command::Kg { cmd } => match cmd {
            KgCmd::Build { triples, roles, out } => kg_build(&cfg, triples, roles.as_deref(), out, start),
        },
        Command::Kge { cmd } => match cmd {
            KgeCmd::Train { kg, out } => kge_train(&cfg, kg, out, start),
            KgeCmd::Eval { kg, embeddings, out } => kge_eval(&cfg, kg, embeddings, out.as_deref(), start),
        },
        Command::Diff { cmd } => match cmd {
            DiffCmd::Train { molecules, out } => diff_train(&cfg, molecules, out, start),
        },
        Command::Crn { cmd } => match cmd {
            CrnCmd::Train { molecules, embeddings, out } => crn_train_cmd(&cfg, molecules, embeddings, out, start),
        },
        Command::Generate(args) => generate_cmd(&cfg, args, start),
        Command::Interpolate(args) => interpolate_cmd(&cfg, args, start),
        Command::Evaluate(args) => evaluate_cmd(&cfg, args, start),
        Command::Gradcheck => gradcheck_cmd(&cfg),
        Command::Config => {
            print!("{}", cfg.write());
            Ok(())
        }
    }
}

fn schedule_from(cfg: &RunConfig) -> Result<NoiseSchedule, CliError> {
    NoiseSchedule::new(
        cfg.diffusion.beta_min,
        cfg.diffusion.beta_max,
        cfg.diffusion.schedule_steps,
    )
    .map_err(CliError::from)
}

fn write_artifact(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn finish(
    mut manifest: Manifest,
    inputs: &[&Path],
    outputs: &[&Path],
    start: Instant,
) -> Result<(), CliError> {
    for p in inputs {
        manifest
            .add_input(p)
            .map_err(|e| CliError::Io(format!("cannot hash {}: {e}", p.display())))?;
    }
    for p in outputs {
        manifest
            .add_output(p)
            .map_err(|e| CliError::Io(format!("cannot hash {}: {e}", p.display())))?;
    }
    let primary = outputs
        .first()
        .expect("artifact commands always have an output");
    manifest
        .write_for(primary, start.elapsed())
        .map_err(|e| CliError::Io(format!("cannot write manifest: {e}")))?;
    Ok(())
}

fn kg_build(
    cfg: &RunConfig,
    triples: &Path,
    roles: Option<&Path>,
    out: &Path,
    start: Instant,
) -> Result<(), CliError> {
    let mut kg = KnowledgeGraph::load(triples)?;
    if let Some(roles_path) = roles {
        kg.load_roles(roles_path)?;
    }
    let (normalized, report) = kg.normalize();
    write_artifact(out, &normalized.to_tsv())?;
    let mut m = Manifest::new("kg build", cfg.run.seed);
    m.note("triples", &normalized.triples.len().to_string());
    m.note("duplicates_removed", &report.duplicates_removed.to_string());
    m.note("reverses_removed", &report.reverses_removed.to_string());
    let mut inputs = vec![triples];
    if let Some(r) = roles {
        inputs.push(r);
    }
    finish(m, &inputs, &[out], start)?;
    println!(
        "kg build: {} triples ({} duplicates, {} reverses removed)",
        normalized.triples.len(),
        report.duplicates_removed,
        report.reverses_removed
    );
    Ok(())
}

fn kg_splits(
    cfg: &RunConfig,
    path: &Path,
) -> Result<(KnowledgeGraph, KnowledgeGraph, KnowledgeGraph, KnowledgeGraph), CliError> {
    let kg = KnowledgeGraph::load(path)?;
    let train_fraction = 1.0 - cfg.kg.valid_fraction - cfg.kg.test_fraction;
    let (train, valid, test) = kg.split(
        (train_fraction, cfg.kg.valid_fraction, cfg.kg.test_fraction),
        cfg.run.seed,
    )?;
    Ok((kg, train, valid, test))
}

fn kge_train(cfg: &RunConfig, kg: &Path, out: &Path, start: Instant) -> Result<(), CliError> {
    let (_, train, _, _) = kg_splits(cfg, kg)?;
    let train_cfg = KgeTrainConfig {
        dim: cfg.kge.dim,
        epochs: cfg.kge.epochs,
        learning_rate: cfg.kge.learning_rate,
        margin: cfg.kge.margin,
        negatives_per_positive: cfg.kge.negatives,
        seed: cfg.run.seed,
    };
    let (table, log) = train_transe(&train, &train_cfg)?;
    save_embeddings(&table, out)?;
    let final_loss = log.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let mut m = Manifest::new("kge train", cfg.run.seed);
    m.note("dim", &cfg.kge.dim.to_string());
    m.note("final_loss", &format!("{final_loss}"));
    finish(m, &[kg], &[out], start)?;
    println!("kge train: dim {} final loss {final_loss:.6}", cfg.kge.dim);
    Ok(())
}

fn kge_eval(
    cfg: &RunConfig,
    kg: &Path,
    embeddings: &Path,
    out: Option<&Path>,
    start: Instant,
) -> Result<(), CliError> {
    let (all, _, _, test) = kg_splits(cfg, kg)?;
    let table = load_embeddings(embeddings)?;
    let metrics = evaluate_link_prediction(&table, &test, &all)?;
    let report = format!(
        "mrr = {}\nhits_at_1 = {}\nhits_at_10 = {}\ntest_triples = {}\n",
        metrics.mrr,
        metrics.hits_at_1,
        metrics.hits_at_10,
        test.triples.len()
    );
    print!("{report}");
    if let Some(out) = out {
        write_artifact(out, &report)?;
        let m = Manifest::new("kge eval", cfg.run.seed);
        finish(m, &[kg, embeddings], &[out], start)?;
    }
    Ok(())
}

/// One molecule per non-blank line; anything after a tab is a label. Parsing
/// is lenient about valence: generated batches legitimately contain invalid
/// molecules, and validity is measured by `evaluate`, not enforced here.
fn read_molecules(path: &Path) -> Result<Vec<(MolecularGraph, Option<String>)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (smiles, label) = match line.split_once('\t') {
            Some((s, l)) => (s, Some(l.trim().to_string())),
            None => (line, None),
        };
        let mol = parse_smiles_lenient(smiles).map_err(|e| {
            CliError::Data(format!("{}:{}: {e}", path.display(), idx + 1))
        })?;
        out.push((mol, label));
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no molecules", path.display())));
    }
    Ok(out)
}

fn diff_train(cfg: &RunConfig, molecules: &Path, out: &Path, start: Instant) -> Result<(), CliError> {
    let dataset: Vec<MolecularGraph> = read_molecules(molecules)?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let train_cfg = ScoreTrainConfig {
        n: cfg.diffusion.n,
        layers: cfg.diffusion.layers,
        hidden: cfg.diffusion.hidden,
        epochs: cfg.diffusion.epochs,
        batch_size: cfg.diffusion.batch_size,
        learning_rate: cfg.diffusion.learning_rate,
        grad_clip: cfg.diffusion.grad_clip,
        seed: cfg.run.seed,
        schedule: schedule_from(cfg)?,
        ood: cfg.diffusion.ood,
    };
    let (net, log) = train_score(&dataset, &train_cfg)?;
    save_score_network(&net, out)?;
    let final_loss = log.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let mut m = Manifest::new("diff train", cfg.run.seed);
    m.note("molecules", &dataset.len().to_string());
    m.note("final_loss", &format!("{final_loss}"));
    finish(m, &[molecules], &[out], start)?;
    println!(
        "diff train: {} molecules, final loss {final_loss:.6}",
        dataset.len()
    );
    Ok(())
}

fn entity_embedding(table: &EmbeddingTable, name: &str) -> Result<Vec<f64>, CliError> {
    let id = table
        .entity_names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| CliError::Data(format!("entity {name:?} not in embedding table")))?;
    Ok(table.entity_vec_f64(id))
}

fn crn_train_cmd(
    cfg: &RunConfig,
    molecules: &Path,
    embeddings: &Path,
    out: &Path,
    start: Instant,
) -> Result<(), CliError> {
    let table = load_embeddings(embeddings)?;
    let mut pairs = Vec::new();
    for (mol, label) in read_molecules(molecules)? {
        let name = label.ok_or_else(|| {
            CliError::Data(format!(
                "{}: every line needs SMILES<TAB>entity",
                molecules.display()
            ))
        })?;
        pairs.push((mol, entity_embedding(&table, &name)?));
    }
    let train_cfg = CrnTrainConfig {
        n: cfg.diffusion.n,
        layers: cfg.crn.layers,
        hidden: cfg.crn.hidden,
        tau: cfg.crn.tau,
        attention: cfg.crn.attention,
        epochs: cfg.crn.epochs,
        batch_size: cfg.crn.batch_size,
        learning_rate: cfg.crn.learning_rate,
        grad_clip: cfg.crn.grad_clip,
        seed: cfg.run.seed,
    };
    let (params, log) = train_crn(&pairs, &schedule_from(cfg)?, &train_cfg)?;
    save_crn(&params, out)?;
    let final_loss = log.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let mut m = Manifest::new("crn train", cfg.run.seed);
    m.note("pairs", &pairs.len().to_string());
    m.note("final_loss", &format!("{final_loss}"));
    finish(m, &[molecules, embeddings], &[out], start)?;
    println!("crn train: {} pairs, final loss {final_loss:.6}", pairs.len());
    Ok(())
}

fn load_nets(score: &Path, crn: &Path) -> Result<(ScoreNetwork, CrnParams), CliError> {
    Ok((load_score_network(score)?, load_crn(crn)?))
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad {what} entry {v:?}")))
        })
        .collect()
}

fn chains_tsv(records: &[ChainRecord], alpha: Option<f64>) -> String {
    let mut s = String::new();
    for r in records {
        let smiles = r
            .molecule
            .as_ref()
            .filter(|m| m.n_atoms() > 0)
            .map(write_smiles)
            .unwrap_or_default();
        let dist = r.final_distance.map(|d| format!("{d}")).unwrap_or_default();
        let err = r.error.clone().unwrap_or_default();
        if let Some(a) = alpha {
            let _ = writeln!(s, "{a}\t{}\t{smiles}\t{dist}\t{err}", r.chain);
        } else {
            let _ = writeln!(s, "{}\t{smiles}\t{dist}\t{err}", r.chain);
        }
    }
    s
}

fn generate_cmd(cfg: &RunConfig, args: &GenerateArgs, start: Instant) -> Result<(), CliError> {
    let (net, crn) = load_nets(&args.score, &args.crn)?;
    let mut inputs: Vec<&Path> = vec![&args.score, &args.crn];
    let (y, target_note) = if let Some(list) = &args.y {
        (parse_float_list(list, "--y")?, None)
    } else if let Some(name) = &args.target {
        let path = args.embeddings.as_ref().ok_or_else(|| {
            CliError::Config("--target requires --embeddings".into())
        })?;
        inputs.push(path);
        let table = load_embeddings(path)?;
        (entity_embedding(&table, name)?, Some(name.clone()))
    } else {
        (vec![0.0; crn.dim], None)
    };
    if y.len() != crn.dim {
        return Err(CliError::Incompatible(format!(
            "target embedding has dim {}, regressor checkpoint expects {}",
            y.len(),
            crn.dim
        )));
    }
    let lambda_x = args
        .lambda_x
        .or_else(|| target_note.as_deref().and_then(recommended_guidance_weight))
        .unwrap_or(cfg.guidance.lambda_x);
    let lambda_e = args.lambda_e.unwrap_or(cfg.guidance.lambda_e);
    // no target at all = unconditional sampling regardless of config weights
    let (lambda_x, lambda_e) = if args.y.is_none() && args.target.is_none() {
        (0.0, 0.0)
    } else {
        (lambda_x, lambda_e)
    };
    let spec = GuidanceSpec::new(y, lambda_x, lambda_e)?;
    let count = args.count.unwrap_or(cfg.guidance.count);
    let gen_cfg = GenerateConfig {
        steps: cfg.guidance.steps,
        seed: cfg.run.seed,
    };
    let records = generate(&net, &crn, &spec, count, &gen_cfg);
    let mut body = String::from("chain\tsmiles\tfinal_distance\terror\n");
    body.push_str(&chains_tsv(&records, None));
    write_artifact(&args.out, &body)?;
    let ok = records.iter().filter(|r| r.error.is_none()).count();
    let mut m = Manifest::new("generate", cfg.run.seed);
    m.note("count", &count.to_string());
    m.note("lambda_x", &format!("{lambda_x}"));
    m.note("lambda_e", &format!("{lambda_e}"));
    if let Some(t) = &target_note {
        m.note("target", t);
    }
    m.note("chains_ok", &ok.to_string());
    finish(m, &inputs, &[&args.out], start)?;
    println!("generate: {ok}/{count} chains ok (lambda_x = {lambda_x}, lambda_e = {lambda_e})");
    Ok(())
}

fn interpolate_cmd(cfg: &RunConfig, args: &InterpolateArgs, start: Instant) -> Result<(), CliError> {
    let (net, crn) = load_nets(&args.score, &args.crn)?;
    let table = load_embeddings(&args.embeddings)?;
    let y1 = entity_embedding(&table, &args.from)?;
    let y2 = entity_embedding(&table, &args.to)?;
    if y1.len() != crn.dim {
        return Err(CliError::Incompatible(format!(
            "embedding table has dim {}, regressor checkpoint expects {}",
            y1.len(),
            crn.dim
        )));
    }
    let alphas = parse_float_list(&args.alphas, "--alphas")?;
    let lambda_x = args.lambda_x.unwrap_or(cfg.guidance.lambda_x);
    let lambda_e = args.lambda_e.unwrap_or(cfg.guidance.lambda_e);
    let count = args.count.unwrap_or(cfg.guidance.count);
    // every alpha reuses the same chain streams, so trajectories are paired
    // across interpolation points
    let gen_cfg = GenerateConfig {
        steps: cfg.guidance.steps,
        seed: cfg.run.seed,
    };
    let mut body = String::from("alpha\tchain\tsmiles\tfinal_distance\terror\n");
    for &alpha in &alphas {
        let y = interpolate(&y1, &y2, alpha)?;
        let spec = GuidanceSpec::new(y, lambda_x, lambda_e)?;
        let records = generate(&net, &crn, &spec, count, &gen_cfg);
        body.push_str(&chains_tsv(&records, Some(alpha)));
    }
    write_artifact(&args.out, &body)?;
    let mut m = Manifest::new("interpolate", cfg.run.seed);
    m.note("from", &args.from);
    m.note("to", &args.to);
    m.note("alphas", &args.alphas);
    finish(m, &[&args.score, &args.crn, &args.embeddings], &[&args.out], start)?;
    println!(
        "interpolate: {} x {count} chains from {:?} to {:?}",
        alphas.len(),
        args.from,
        args.to
    );
    Ok(())
}

fn read_score_table(path: &Path, n_rows: usize) -> Result<ScoreMatrix, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty score file", path.display())))?;
    let names: Vec<&str> = header.split('\t').collect();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (idx, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != names.len() {
            return Err(CliError::Data(format!(
                "{}:{}: {} cells, header has {}",
                path.display(),
                idx + 2,
                cells.len(),
                names.len()
            )));
        }
        for (col, cell) in columns.iter_mut().zip(&cells) {
            let cell = cell.trim();
            if cell.is_empty() || cell == "NA" {
                col.push(None);
            } else {
                let v = cell.parse().map_err(|_| {
                    CliError::Data(format!(
                        "{}:{}: bad number {cell:?}",
                        path.display(),
                        idx + 2
                    ))
                })?;
                col.push(Some(v));
            }
        }
    }
    if columns[0].len() != n_rows {
        return Err(CliError::Data(format!(
            "{}: {} score rows for {} molecules",
            path.display(),
            columns[0].len(),
            n_rows
        )));
    }
    let mut table = ScoreMatrix::new(n_rows);
    for (name, col) in names.iter().zip(columns) {
        table
            .add_column(name, col)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(table)
}

fn evaluate_cmd(cfg: &RunConfig, args: &EvaluateArgs, start: Instant) -> Result<(), CliError> {
    let mols: Vec<MolecularGraph> = read_molecules(&args.molecules)?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let reference: Vec<MolecularGraph> = match &args.reference {
        Some(path) => read_molecules(path)?.into_iter().map(|(m, _)| m).collect(),
        None => Vec::new(),
    };
    let metrics = compute_metrics(&mols, &reference);
    let mut report = String::new();
    let _ = writeln!(report, "# uniqueness denominator: valid molecules");
    let _ = writeln!(report, "n_total = {}", metrics.n_total);
    let _ = writeln!(report, "n_valid = {}", metrics.n_valid);
    let _ = writeln!(report, "validity = {}", metrics.validity);
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "absent".into());
    let _ = writeln!(report, "uniqueness = {}", fmt_opt(metrics.uniqueness));
    let _ = writeln!(report, "novelty = {}", fmt_opt(metrics.novelty));
    let mut inputs: Vec<&Path> = vec![&args.molecules];
    if let Some(r) = &args.reference {
        inputs.push(r);
    }
    if let Some(scores_path) = &args.scores {
        inputs.push(scores_path);
        let table = read_score_table(scores_path, mols.len())?;
        let _ = writeln!(report, "top_fraction = {}", cfg.eval.top_fraction);
        for name in table.columns().to_vec() {
            let present: Vec<f64> = table
                .column(&name)
                .map_err(|e| CliError::Data(e.to_string()))?
                .into_iter()
                .flatten()
                .collect();
            if present.is_empty() {
                let _ = writeln!(report, "column {name} top_mean = absent top_std = absent n_scored = 0");
                continue;
            }
            let (mean, std) = top_fraction_stats(&present, cfg.eval.top_fraction)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let _ = writeln!(
                report,
                "column {name} top_mean = {mean} top_std = {std} n_scored = {}",
                present.len()
            );
        }
    }
    write_artifact(&args.out, &report)?;
    let m = Manifest::new("evaluate", cfg.run.seed);
    finish(m, &inputs, &[&args.out], start)?;
    print!("{report}");
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mut worst = 0.0f64;
    for report in run_all(cfg.run.seed) {
        let ok = report.passed(GRADCHECK_TOLERANCE);
        println!(
            "gradcheck {}: max_rel_err = {:.3e} ({})",
            report.name,
            report.max_rel_err,
            if ok { "PASS" } else { "FAIL" }
        );
        worst = worst.max(report.max_rel_err);
    }
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Gradcheck(worst))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_flags_become_set_overrides() {
        let argv: Vec<String> = ["kdream", "generate", "--kge.dim", "64", "--out", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rewritten = rewrite_dotted_flags(argv);
        assert_eq!(
            rewritten,
            vec!["kdream", "generate", "--set", "kge.dim=64", "--out", "x"]
        );
        // inline = form
        let argv: Vec<String> = ["kdream", "--guidance.lambda_x=0.5", "gradcheck"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            rewrite_dotted_flags(argv),
            vec!["kdream", "--set", "guidance.lambda_x=0.5", "gradcheck"]
        );
        // unknown prefixes pass through
        let argv: Vec<String> = ["kdream", "--file.with.dots", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(rewrite_dotted_flags(argv.clone()), argv);
    }
}
