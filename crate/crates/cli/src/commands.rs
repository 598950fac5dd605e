//! The subcommands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use elcrf::data::conll::{read_conll, read_raw_blocks, write_conll, write_tagged_blocks, Corpus, DEFAULT_DOC_SEPARATOR};
use elcrf::data::eval::{chunk_f1, compare_reports, format_comparison, ChunkF1Report};
use elcrf::data::loo::loo_cross_validate;
use elcrf::data::synth::{generate_constraint_corpus, ConstraintSpec};
use elcrf::featurizer::load_pretrained_embeddings;
use elcrf::potentials::TransitionFactors;
use elcrf::training::train_model;
use elcrf::ModelParams;

use crate::{CliError, EvalArgs, InspectArgs, SynthArgs, TagArgs, TrainArgs};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn io_error(e: std::io::Error) -> CliError {
    CliError::Internal(format!("write failed: {e}"))
}

fn read_corpus(path: &Path, normalize_digits: bool) -> Result<Corpus, CliError> {
    read_conll(open(path)?, normalize_digits)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    ModelParams::load(open(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn gold_labels(corpus: &Corpus) -> Vec<&Vec<String>> {
    corpus.sequences.iter().map(|s| &s.labels).collect()
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let config = args.hyper.resolve()?;
    let train_set = read_corpus(&args.train, config.normalize_digits)?;
    if train_set.is_empty() {
        return Err(CliError::Usage(format!("{} has no sequences", args.train.display())));
    }
    let dev = match &args.dev {
        Some(p) => read_corpus(p, config.normalize_digits)?,
        None => Corpus::default(),
    };
    let test = match &args.test {
        Some(p) => Some(read_corpus(p, config.normalize_digits)?),
        None => None,
    };

    let mut params = ModelParams::for_corpus(&config, &train_set)?;
    if let Some(path) = &args.embeddings {
        let matched = load_pretrained_embeddings(open(path)?, &mut params.featurizer)?;
        log::info!("loaded {matched} pretrained vectors from {}", path.display());
    }
    log::info!(
        "{} labels, {} hidden states, {} transition parameters",
        params.schema.len(),
        params.num_states(),
        params.transitions.parameter_count()
    );
    let (model, train_log) = train_model(params, &train_set, &dev)?;

    model.save_file(&args.model)?;
    let log_path = args.out.clone().unwrap_or_else(|| {
        let mut p = args.model.clone().into_os_string();
        p.push(".log.tsv");
        p.into()
    });
    let mut out = create(&log_path)?;
    out.write_all(train_log.to_tsv().as_bytes()).map_err(io_error)?;
    out.flush().map_err(io_error)?;

    if let Some(test) = test {
        let pred = model.decode_corpus(&test)?;
        print!("{}", chunk_f1(&gold_labels(&test), &pred)?);
    }
    Ok(())
}

pub fn tag(args: &TagArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let blocks = read_raw_blocks(open(&args.test)?, Some(DEFAULT_DOC_SEPARATOR))?;
    let tokens: Vec<Vec<String>> = blocks
        .iter()
        .map(|b| b.tokens(model.config.normalize_digits))
        .collect();
    let predictions = model.decode_all(&tokens)?;
    let mut out = output(args.out.as_ref())?;
    write_tagged_blocks(&mut out, &blocks, &predictions)?;
    out.flush().map_err(io_error)
}

/// Checks that two corpora have the same sequences and tokens.
fn check_alignment(gold: &Corpus, pred: &Corpus) -> Result<(), CliError> {
    for (i, (g, p)) in gold.sequences.iter().zip(&pred.sequences).enumerate() {
        if g.len() != p.len() {
            return Err(CliError::Usage(format!(
                "sequence {} has {} gold tokens but {} predicted",
                i + 1,
                g.len(),
                p.len()
            )));
        }
        if let Some(t) = g.tokens.iter().zip(&p.tokens).position(|(a, b)| a != b) {
            return Err(CliError::Usage(format!(
                "sequence {} differs at token {}: {:?} vs {:?}",
                i + 1,
                t + 1,
                g.tokens[t],
                p.tokens[t]
            )));
        }
    }
    if gold.len() != pred.len() {
        return Err(CliError::Usage(format!(
            "sequence {} is missing: {} gold sequences but {} predicted",
            gold.len().min(pred.len()) + 1,
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

fn scored_predictions(gold: &Corpus, path: &Path) -> Result<ChunkF1Report, CliError> {
    let pred = read_corpus(path, false)?;
    check_alignment(gold, &pred)?;
    Ok(chunk_f1(&gold_labels(gold), &gold_labels(&pred))?)
}

fn emit(report: &ChunkF1Report, out: Option<&PathBuf>) -> Result<(), CliError> {
    print!("{report}");
    if let Some(path) = out {
        let mut w = create(path)?;
        w.write_all(report.to_key_values().as_bytes()).map_err(io_error)?;
        w.flush().map_err(io_error)?;
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.loo {
        let config = args.hyper.resolve()?;
        let train_path = args.train.as_ref().expect("clap requires --train with --loo");
        let corpus = read_corpus(train_path, config.normalize_digits)?;
        let outcome = loo_cross_validate(&config, &corpus)?;
        log::info!("{} folds", outcome.folds);
        return emit(&outcome.report, args.out.as_ref());
    }
    let gold_path = args.test.as_ref().expect("clap requires --test without --loo");
    if let Some(model_path) = &args.model {
        let model = load_model(model_path)?;
        let gold = read_corpus(gold_path, model.config.normalize_digits)?;
        let pred = model.decode_corpus(&gold)?;
        return emit(&chunk_f1(&gold_labels(&gold), &pred)?, args.out.as_ref());
    }
    let Some(pred_path) = &args.pred else {
        return Err(CliError::Usage("eval needs --pred, --model or --loo".into()));
    };
    let gold = read_corpus(gold_path, false)?;
    let baseline = scored_predictions(&gold, pred_path)?;
    if let Some(compare_path) = &args.compare {
        let candidate = scored_predictions(&gold, compare_path)?;
        print!("{}", format_comparison(&compare_reports(&baseline, &candidate), &baseline, &candidate));
        if let Some(path) = &args.out {
            let mut w = create(path)?;
            for (prefix, r) in [("baseline", &baseline), ("candidate", &candidate)] {
                for line in r.to_key_values().lines() {
                    writeln!(w, "{prefix}.{line}").map_err(io_error)?;
                }
            }
            w.flush().map_err(io_error)?;
        }
        return Ok(());
    }
    emit(&baseline, args.out.as_ref())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = ConstraintSpec::new(args.kind);
    let corpus = generate_constraint_corpus(&spec, args.sequences, args.seed)?;
    let mut out = output(args.out.as_ref())?;
    write_conll(&mut out, &corpus)?;
    out.flush().map_err(io_error)
}

pub fn inspect(args: &InspectArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let TransitionFactors::Factorized { u, v } = &model.transitions else {
        return Err(CliError::Usage(format!(
            "{} has a full-rank transition matrix; there are no state embeddings to inspect",
            args.model.display()
        )));
    };
    let k = u.nrows();
    let mut out = output(args.out.as_ref())?;
    let mut header = vec!["state".to_string(), "label".to_string()];
    header.extend((1..=k).map(|i| format!("u{i}")));
    header.extend((1..=k).map(|i| format!("v{i}")));
    writeln!(out, "{}", header.join("\t")).map_err(io_error)?;
    for z in 0..model.num_states() {
        let mut row = vec![z.to_string(), model.schema.label(model.states.label_of(z)).to_string()];
        row.extend(u.column(z).iter().map(|x| x.to_string()));
        row.extend(v.column(z).iter().map(|x| x.to_string()));
        writeln!(out, "{}", row.join("\t")).map_err(io_error)?;
    }
    out.flush().map_err(io_error)
}
