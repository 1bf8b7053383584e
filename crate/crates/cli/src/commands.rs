//! Subcommand drivers.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wordattr::attribution::{attribute, completeness_residual, AttributionSnapshot, GradShapConfig};
use wordattr::corpus::{load_corpus, CleaningConfig, CorpusError, CorpusRecord, WordAnnotation};
use wordattr::faithfulness::{
    summarize, sweep, write_rows_csv, write_summary_csv, FaithfulnessError, Removal, SweepConfig, SweepDocument,
};
use wordattr::highlight::{evaluate_highlights, f_h_histogram, fit_slopes, grouped, write_csv, HighlightConfig};
use wordattr::model::Head;
use wordattr::oracle::fixtures::{QuadraticOracle, SumOracle};
use wordattr::oracle::server::serve;
use wordattr::oracle::{ExternalConfig, ExternalOracle};
use wordattr::parallel::map_ordered;
use wordattr::render::emit::{ansi, html_report, ReportEntry};
use wordattr::render::{
    link_negations, merge_scores, merge_tokens_to_words, normalize_for_display, zero_incoherent_signs, DepAnnotation,
    Linking, Word,
};
use wordattr::saliency::{extract_keywords, keyword_table_csv, keyword_table_html, ExtractConfig, ExtractError};
use wordattr::{
    AttributionConfig, BaselineStrategy, BuiltinOracle, GradientOracle, ModelParams, OracleError, QuadratureRule,
    Target, TokenizedText, Tokenizer, Vocab,
};

use crate::config::{check_target, LinkingMode, OracleSpec, Purpose, RenderOptions, RunConfig};
use crate::{CliError, Command, RunArgs};

pub fn dispatch(cmd: Command, threads: usize) -> Result<(), CliError> {
    match cmd {
        Command::Attribute { run, ansi } => attribute_cmd(&run, threads, ansi),
        Command::Faithfulness { run } => faithfulness_cmd(&run, threads),
        Command::Extract { run } => extract_cmd(&run, threads),
        Command::Highlights { run } => highlights_cmd(&run, threads),
        Command::Render {
            config,
            output,
            ansi,
            attributions,
        } => render_cmd(config.as_deref(), output, ansi, &attributions),
        Command::OracleCheck {
            external,
            config,
            timeout_ms,
        } => oracle_check(external.as_deref(), config.as_deref(), timeout_ms),
        Command::ServeOracle {
            config,
            corpus,
            fixture,
            dim,
        } => serve_oracle(config.as_deref(), corpus.as_deref(), fixture.as_deref(), dim),
    }
}

/// Builds one oracle per worker.
pub enum OracleFactory {
    Builtin(Arc<ModelParams>),
    External(ExternalConfig),
}

impl OracleFactory {
    /// `texts` provide the vocabulary when a built-in model is initialized
    /// rather than loaded.
    pub fn new(spec: &OracleSpec, texts: &[&str]) -> Result<Self, CliError> {
        match spec {
            OracleSpec::Builtin { params: Some(path), .. } => {
                let p = ModelParams::load(path)
                    .map_err(|e| CliError::Validation(format!("cannot load model {}: {e}", path.display())))?;
                Ok(OracleFactory::Builtin(Arc::new(p)))
            }
            OracleSpec::Builtin {
                arch,
                seed,
                params: None,
            } => {
                let vocab = Vocab::build(&Tokenizer::new(arch.tokenizer), texts.iter().copied());
                let p = ModelParams::init(arch.clone(), vocab, *seed)
                    .map_err(|e| CliError::Validation(format!("oracle.arch: {e}")))?;
                Ok(OracleFactory::Builtin(Arc::new(p)))
            }
            OracleSpec::External { .. } => Ok(OracleFactory::External(spec.external_config()?.expect("external spec"))),
        }
    }

    pub fn make(&self) -> Result<Box<dyn GradientOracle>, OracleError> {
        match self {
            OracleFactory::Builtin(p) => Ok(Box::new(BuiltinOracle::from_arc(p.clone()))),
            OracleFactory::External(c) => Ok(Box::new(ExternalOracle::spawn(c)?)),
        }
    }
}

/// Starts one oracle and checks the run settings against its descriptor,
/// before anything is evaluated.
fn probe(factory: &OracleFactory, cfg: &RunConfig, baselines: &[BaselineStrategy]) -> Result<(), CliError> {
    let oracle = factory.make()?;
    let d = oracle.descriptor();
    check_target(cfg.target, &d.head)?;
    let mut needed = baselines.to_vec();
    if cfg.removal == Removal::Mask {
        needed.push(BaselineStrategy::Mask);
    }
    for b in needed {
        b.reference_row(&d.references, d.dim)
            .map_err(|e| CliError::Validation(format!("baseline {}: {e}", b.name())))?;
    }
    Ok(())
}

fn gradshap_config(cfg: &RunConfig) -> GradShapConfig {
    GradShapConfig {
        n_samples: cfg.gradshap.samples,
        noise_stdev: cfg.gradshap.noise_stdev,
        seed: cfg.seed,
    }
}

fn attribution_config(cfg: &RunConfig) -> AttributionConfig {
    AttributionConfig {
        method: cfg.method,
        baseline: cfg.baseline,
        quadrature: QuadratureRule::new(cfg.quadrature(), cfg.steps),
        gradshap: gradshap_config(cfg),
    }
}

pub fn read_corpus(path: &Path, cleaning: &CleaningConfig) -> Result<Vec<CorpusRecord>, CliError> {
    let report = |errors: &[wordattr::corpus::LineError]| {
        for e in errors {
            match &e.id {
                Some(id) => eprintln!("wordattr: {}:{}: record {id}: {}", path.display(), e.line, e.message),
                None => eprintln!("wordattr: {}:{}: {}", path.display(), e.line, e.message),
            }
        }
    };
    match load_corpus(path, cleaning) {
        Ok(c) => {
            report(&c.errors);
            Ok(c.records)
        }
        Err(e) => {
            if let CorpusError::AllLinesMalformed { errors, .. } = &e {
                report(errors);
            }
            Err(CliError::Validation(e.to_string()))
        }
    }
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.clone();
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Output {
        path: dir.display().to_string(),
        source,
    })?;
    write_file(&dir, "config.json", to_pretty_json(cfg))?;
    Ok(dir)
}

fn to_pretty_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write_file(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Validation(format!("csv: {e}")))?;
    Ok(buf)
}

fn load_run(run: &RunArgs, purpose: Purpose) -> Result<(RunConfig, Vec<CorpusRecord>), CliError> {
    let mut cfg = RunConfig::load(run.config.as_deref())?.resolve(purpose)?;
    if let Some(o) = &run.output {
        cfg.output = o.clone();
    }
    let corpus = read_corpus(&run.corpus, &cfg.cleaning)?;
    Ok((cfg, corpus))
}

fn factory_for(cfg: &RunConfig, corpus: &[CorpusRecord]) -> Result<OracleFactory, CliError> {
    let texts: Vec<&str> = corpus.iter().map(|r| r.text.as_str()).collect();
    OracleFactory::new(&cfg.oracle, &texts)
}

/// Reports per-record failures and turns them into an exit status.
fn finish(failures: &[(String, String)], total: usize) -> Result<(), CliError> {
    for (id, msg) in failures {
        eprintln!("wordattr: record {id}: {msg}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Oracle(format!(
            "{} of {total} records failed",
            failures.len()
        )))
    }
}

/// One line of `attributions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionLine {
    pub id: String,
    pub config: AttributionSnapshot,
    pub target: Target,
    pub f_x: f64,
    pub f_x0: f64,
    /// `sum(scores) - (f_x - f_x0)`.
    pub residual: f64,
    pub tokens: TokenizedText,
    /// One score per token.
    pub scores: Vec<f64>,
    /// Token scores summed per word, before negation linking.
    pub words: Vec<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<WordAnnotation>>,
}

fn attribute_record(
    oracle: &mut dyn GradientOracle,
    rec: &CorpusRecord,
    target: Target,
    cfg: &AttributionConfig,
) -> Result<AttributionLine, String> {
    let e = oracle.embed(&rec.text).map_err(|e| e.to_string())?;
    let a = attribute(oracle, &e, target, cfg).map_err(|e| e.to_string())?;
    let wa = merge_tokens_to_words(&e.tokens, &a).map_err(|e| e.to_string())?;
    Ok(AttributionLine {
        id: rec.id.clone(),
        target,
        f_x: a.f_x,
        f_x0: a.f_x0,
        residual: completeness_residual(&a),
        scores: a.scores,
        config: a.config,
        tokens: e.tokens,
        words: wa.words,
        annotations: rec.annotations.clone(),
    })
}

/// HTML report and ANSI text for a set of attributions.
pub fn render_lines(lines: &[AttributionLine], opts: &RenderOptions) -> Result<(String, String), CliError> {
    let scale = opts
        .scale
        .unwrap_or_else(|| lines.iter().map(|l| l.f_x.abs()).fold(0.0, f64::max));
    let mut rendered = Vec::with_capacity(lines.len());
    let mut text = String::new();
    for l in lines {
        let wa = merge_scores(&l.tokens, &l.scores, l.f_x)
            .map_err(|e| CliError::Validation(format!("record {}: {e}", l.id)))?;
        let deps = match opts.linking {
            LinkingMode::Dependencies => l
                .annotations
                .as_deref()
                .filter(|a| a.len() == wa.words.len())
                .map(DepAnnotation::from_annotations),
            _ => None,
        };
        let linking = match (opts.linking, &deps) {
            (LinkingMode::None, _) => Linking::None,
            (_, Some(d)) => Linking::Dependencies(d),
            (_, None) => Linking::Heuristic,
        };
        let r = normalize_for_display(&zero_incoherent_signs(&link_negations(&wa, linking)), scale);
        text.push_str(&format!("{}  F(x) = {:.4}\n{}\n", l.id, l.f_x, ansi(&r)));
        rendered.push(r);
    }
    let entries: Vec<ReportEntry<'_>> = lines
        .iter()
        .zip(&rendered)
        .map(|(l, r)| ReportEntry { id: &l.id, rendered: r })
        .collect();
    let title = opts.title.as_deref().unwrap_or("Attributions");
    Ok((html_report(title, &entries), text))
}

fn attribute_cmd(run: &RunArgs, threads: usize, print_ansi: bool) -> Result<(), CliError> {
    let (cfg, corpus) = load_run(run, Purpose::Attribute)?;
    let factory = factory_for(&cfg, &corpus)?;
    probe(&factory, &cfg, &[cfg.baseline])?;
    let dir = output_dir(&cfg)?;
    let acfg = attribution_config(&cfg);
    let results = map_ordered(
        &corpus,
        threads,
        || factory.make().map_err(|e| e.to_string()),
        |oracle, _, rec| attribute_record(oracle.as_mut(), rec, cfg.target, &acfg),
    );
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (rec, r) in corpus.iter().zip(results) {
        match r {
            Ok(l) => lines.push(l),
            Err(msg) => failures.push((rec.id.clone(), msg)),
        }
    }
    let mut jsonl = String::new();
    for l in &lines {
        jsonl.push_str(&serde_json::to_string(l).expect("serializable"));
        jsonl.push('\n');
    }
    write_file(&dir, "attributions.jsonl", jsonl)?;
    let (html, text) = render_lines(&lines, &cfg.render)?;
    write_file(&dir, "report.html", html)?;
    if print_ansi {
        print!("{text}");
    }
    finish(&failures, corpus.len())
}

fn render_cmd(config: Option<&Path>, output: Option<PathBuf>, print_ansi: bool, input: &Path) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?.resolve(Purpose::Attribute)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    let file = std::fs::File::open(input)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", input.display())))?;
    let mut lines = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Validation(format!("cannot read {}: {e}", input.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: AttributionLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", input.display(), n + 1)))?;
        lines.push(l);
    }
    let dir = output_dir(&cfg)?;
    let (html, text) = render_lines(&lines, &cfg.render)?;
    write_file(&dir, "report.html", html)?;
    if print_ansi {
        print!("{text}");
    }
    Ok(())
}

fn faithfulness_cmd(run: &RunArgs, threads: usize) -> Result<(), CliError> {
    let (cfg, corpus) = load_run(run, Purpose::Faithfulness)?;
    let factory = factory_for(&cfg, &corpus)?;
    probe(&factory, &cfg, &cfg.sweep.baselines)?;
    let scfg = SweepConfig {
        methods: cfg.sweep.methods.clone(),
        baselines: cfg.sweep.baselines.clone(),
        steps: cfg.sweep.steps.clone(),
        quadrature: cfg.quadrature(),
        grid: cfg.grid.clone(),
        level: cfg.level,
        removal: cfg.removal,
        gradshap: gradshap_config(&cfg),
        threads,
    };
    let docs: Vec<SweepDocument> = corpus
        .iter()
        .map(|r| SweepDocument {
            id: r.id.clone(),
            text: r.text.clone(),
            target: cfg.target,
        })
        .collect();
    let dir = output_dir(&cfg)?;
    let result = sweep(&docs, &scfg, || factory.make()).map_err(|e| match e {
        FaithfulnessError::Oracle(e) => CliError::from(e),
        e => CliError::Validation(e.to_string()),
    })?;
    let rows = csv_bytes(|b| write_rows_csv(&result.rows, b).map_err(|e| e.to_string()))?;
    write_file(&dir, "faithfulness.csv", rows)?;
    let summary = csv_bytes(|b| write_summary_csv(&summarize(&result.rows), b).map_err(|e| e.to_string()))?;
    write_file(&dir, "faithfulness_summary.csv", summary)?;
    if result.degenerate_ae > 0 {
        eprintln!(
            "wordattr: {} cells have F(x) = F(x0); their approximation error is left empty",
            result.degenerate_ae
        );
    }
    let failures: Vec<(String, String)> = result
        .failures
        .iter()
        .map(|f| {
            let n = f.n.map(|n| format!(" n={n}")).unwrap_or_default();
            (
                f.document_id.clone(),
                format!("{} {}{n}: {}", f.method.name(), f.baseline.name(), f.message),
            )
        })
        .collect();
    finish(&failures, docs.len())
}

fn extract_cmd(run: &RunArgs, threads: usize) -> Result<(), CliError> {
    let (cfg, corpus) = load_run(run, Purpose::Extract)?;
    let OracleSpec::Builtin { arch, .. } = &cfg.oracle else {
        unreachable!("rejected by validation")
    };
    let ecfg = ExtractConfig {
        arch: arch.clone(),
        trainer: cfg.extract.trainer.clone(),
        attribution: attribution_config(&cfg),
        k: cfg.extract.k,
        aggregation: cfg.extract.aggregation,
        na: cfg.extract.na,
        binning: cfg.extract.binning.clone(),
        threads,
    };
    let dir = output_dir(&cfg)?;
    let ex = extract_keywords(&corpus, &ecfg).map_err(|e| match e {
        ExtractError::Model(_) | ExtractError::Attribution(_) | ExtractError::Document { .. } => {
            CliError::Oracle(e.to_string())
        }
        e => CliError::Validation(e.to_string()),
    })?;
    write_file(&dir, "keywords.csv", keyword_table_csv(&ex.table))?;
    let title = cfg.render.title.as_deref().unwrap_or("Keywords");
    write_file(&dir, "keywords.html", keyword_table_html(&ex.table, title))?;
    let model = ex
        .params
        .to_json()
        .map_err(|e| CliError::Validation(format!("model: {e}")))?;
    write_file(&dir, "model.json", model)?;
    write_file(&dir, "training.json", to_pretty_json(&ex.report))?;
    eprintln!(
        "wordattr: trained on {} classes in {} epochs, training accuracy {}",
        ex.class_names.len(),
        ex.report.epochs,
        ex.report.accuracy
    );
    Ok(())
}

fn highlights_cmd(run: &RunArgs, threads: usize) -> Result<(), CliError> {
    let (cfg, corpus) = load_run(run, Purpose::Highlights)?;
    if corpus
        .iter()
        .all(|r| r.highlights.as_ref().is_none_or(|h| h.is_empty()))
    {
        return Err(CliError::Validation(format!(
            "no record in {} has highlight spans",
            run.corpus.display()
        )));
    }
    let factory = factory_for(&cfg, &corpus)?;
    probe(&factory, &cfg, &[cfg.baseline])?;
    let dir = output_dir(&cfg)?;
    let hcfg = HighlightConfig {
        attribution: attribution_config(&cfg),
        target: cfg.target,
        noise: cfg.highlights.noise,
        threads,
    };
    let result = evaluate_highlights(&corpus, &hcfg, || factory.make());
    let slopes = fit_slopes(&grouped(&result.rows, cfg.highlights.grouping));
    let histogram = f_h_histogram(&result.rows);
    let rows = csv_bytes(|b| write_csv(&result.rows, b).map_err(|e| e.to_string()))?;
    write_file(&dir, "highlights.csv", rows)?;
    let slopes = csv_bytes(|b| write_csv(&slopes, b).map_err(|e| e.to_string()))?;
    write_file(&dir, "highlight_slopes.csv", slopes)?;
    let histogram = csv_bytes(|b| write_csv(&histogram, b).map_err(|e| e.to_string()))?;
    write_file(&dir, "f_h_histogram.csv", histogram)?;
    let s = &result.skipped;
    eprintln!(
        "wordattr: {} rows; skipped {} with F(x) = 0, {} with no coherent scores, {} without highlights",
        result.rows.len(),
        s.zero_agency,
        s.all_zero_after_polish,
        s.not_highlighted
    );
    finish(&result.failures, corpus.len())
}

fn oracle_check(external: Option<&str>, config: Option<&Path>, timeout_ms: u64) -> Result<(), CliError> {
    let factory = match (external, config) {
        (Some(cmd), _) => OracleFactory::new(
            &OracleSpec::External {
                command: cmd.to_string(),
                timeout_ms,
                batch_size: ExternalConfig::default().batch_size,
            },
            &[],
        )?,
        (None, Some(path)) => OracleFactory::new(&RunConfig::load(Some(path))?.oracle, &[])?,
        (None, None) => return Err(CliError::Validation("give --external CMD or --config FILE".into())),
    };
    let mut oracle = factory.make()?;
    println!("{}", to_pretty_json(oracle.descriptor()).trim_end());
    let target = match oracle.descriptor().head {
        Head::Scalar => Target::Scalar,
        Head::Classes(_) => Target::Class(0),
    };
    let e = oracle.embed("oracle check")?;
    let out = oracle.eval(&e.x, target, true)?;
    let g = out
        .gradient
        .ok_or_else(|| CliError::Oracle("no gradient returned".into()))?;
    if g.shape() != e.x.shape() {
        return Err(CliError::Oracle(format!(
            "gradient shape {:?} does not match input {:?}",
            g.shape(),
            e.x.shape()
        )));
    }
    println!(
        "probe: {} tokens, F = {}, gradient {}x{}",
        e.tokens.len(),
        out.value,
        g.rows(),
        g.cols()
    );
    Ok(())
}

fn serve_oracle(
    config: Option<&Path>,
    corpus: Option<&Path>,
    fixture: Option<&str>,
    dim: usize,
) -> Result<(), CliError> {
    let mut oracle: Box<dyn GradientOracle> = match fixture {
        Some("sum") => Box::new(SumOracle::new(dim)),
        Some("quadratic") => Box::new(QuadraticOracle::new(dim)),
        Some(other) => return Err(CliError::Validation(format!("unknown fixture {other:?}"))),
        None => {
            let cfg = RunConfig::load(config)?;
            if cfg.oracle.is_external() {
                return Err(CliError::Validation("serve-oracle needs a built-in oracle".into()));
            }
            let records = match corpus {
                Some(p) => read_corpus(p, &cfg.cleaning)?,
                None => Vec::new(),
            };
            factory_for(&cfg, &records)?.make()?
        }
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(oracle.as_mut(), stdin.lock(), stdout.lock()).map_err(|e| CliError::Oracle(e.to_string()))?;
    std::io::stdout().flush().ok();
    Ok(())
}
