use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use annobias::attribution::{render_html, IgConfig, IntegrationRule};
use annobias::classifier::{BagOfEmbeddings, ReferenceTrainer, Trainer};
use annobias::corpus::{corpus_stats, load_corpus, CorpusColumns};
use annobias::experiments::{
    emit_report, evaluate, report_to_string, run_attribution_study, run_correlation_study,
    run_distribution_study, run_gender_study_on, run_toxicity_matrix_on, count_grid,
    CorpusPaths, ExperimentPlan, GenderStudyReport, ModelCondition, ReportFormat, TestCondition,
    ToxicityMatrixReport,
};
use annobias::lexicon::{drop_very_toxic, scrub_dataset_with_summary, Blacklist};
use annobias::sampling::{
    build_gender_task, build_toxicity_task, manifest_path_for, read_dataset, split_train_test,
    write_dataset, Dataset, GenderFilter,
};
use annobias::{Error, Result};

#[derive(Parser)]
#[command(name = "annobias", version, about = "Audit annotator gender bias in toxicity corpora")]
struct Cli {
    /// TOML experiment plan supplying defaults for paths and hyperparameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or output directory for the study commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CorpusArgs {
    #[arg(long)]
    comments: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    demographics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Gender,
    Toxicity,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Male,
    Female,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    GaussLegendre,
    RiemannRight,
    Trapezoid,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics by annotator gender.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Draw a balanced dataset, optionally split into train and test.
    Sample {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "both")]
        filter: FilterArg,
        #[arg(long)]
        size: Option<usize>,
        /// Write `<out>.train.jsonl` and `<out>.test.jsonl` instead of one file.
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Remove blacklisted words from a dataset.
    Scrub {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        blacklist: Option<PathBuf>,
        /// Also drop very toxic examples (gender task only).
        #[arg(long)]
        drop_very_toxic: bool,
    },
    /// Train the reference classifier.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Bias report of a model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Integrated-gradients attributions for every example of a dataset.
    Attribute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        rule: Option<RuleArg>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Also write a colour-coded HTML page.
        #[arg(long)]
        html: Option<PathBuf>,
    },
    /// Convert a saved study report between JSON and CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Full gender-classification study over every seed of the plan.
    RunGenderStudy,
    /// Cross-gender toxicity matrix over every seed of the plan.
    RunToxicityMatrix,
}

struct Context {
    plan: ExperimentPlan,
    out: Option<PathBuf>,
}

impl Context {
    fn corpus_paths(&self, args: &CorpusArgs) -> Result<CorpusPaths> {
        let from_plan = self.plan.corpus.clone();
        let pick = |cli: &Option<PathBuf>, plan: Option<&PathBuf>, name: &str| {
            cli.clone()
                .or_else(|| plan.cloned())
                .ok_or_else(|| Error::Config(format!("--{name} is required (or set it in the plan)")))
        };
        Ok(CorpusPaths {
            comments: pick(&args.comments, from_plan.as_ref().map(|c| &c.comments), "comments")?,
            annotations: pick(&args.annotations, from_plan.as_ref().map(|c| &c.annotations), "annotations")?,
            demographics: pick(&args.demographics, from_plan.as_ref().map(|c| &c.demographics), "demographics")?,
            columns: from_plan.map(|c| c.columns).unwrap_or_else(CorpusColumns::default),
        })
    }

    fn blacklist(&self, cli: &Option<PathBuf>) -> Result<Blacklist> {
        let path = cli
            .clone()
            .or_else(|| self.plan.blacklist.clone())
            .ok_or_else(|| Error::Config("--blacklist is required (or set it in the plan)".into()))?;
        Blacklist::load(path)
    }

    fn out_file(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out is required".into()))
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| self.plan.output_dir.clone());
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Writes JSON to `--out` if given, else to stdout.
    fn emit_json<T: Serialize>(&self, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        match &self.out {
            Some(path) => fs::write(path, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn write_ds(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, path, &manifest_path_for(path))?;
    log::info!("wrote {} examples to {}", ds.len(), path.display());
    Ok(())
}

fn load_ds(path: &Path) -> Result<Dataset> {
    read_dataset(path, &manifest_path_for(path))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.{suffix}.jsonl"))
}

fn run(cli: Cli) -> Result<()> {
    let mut plan = match &cli.config {
        Some(path) => ExperimentPlan::load(path)?,
        None => ExperimentPlan::default(),
    };
    if let Some(seed) = cli.seed {
        plan.seeds = vec![seed];
    }
    let seed = plan.seeds.first().copied().unwrap_or(42);
    let cx = Context { plan, out: cli.out };

    match cli.command {
        Command::Stats { corpus } => {
            let p = cx.corpus_paths(&corpus)?;
            let joined = load_corpus(&p.comments, &p.annotations, &p.demographics, &p.columns)?;
            log::info!("join drops: {:?}", joined.drops);
            cx.emit_json(&corpus_stats(&joined.examples)?)
        }
        Command::Sample {
            corpus,
            task,
            filter,
            size,
            test_fraction,
        } => {
            let out = cx.out_file()?;
            let p = cx.corpus_paths(&corpus)?;
            let joined = load_corpus(&p.comments, &p.annotations, &p.demographics, &p.columns)?;
            let ds = match task {
                TaskArg::Gender => build_gender_task(&joined.examples, seed, size)?,
                TaskArg::Toxicity => {
                    let filter = match filter {
                        FilterArg::Male => GenderFilter::Male,
                        FilterArg::Female => GenderFilter::Female,
                        FilterArg::Both => GenderFilter::Both,
                    };
                    build_toxicity_task(&joined.examples, filter, seed, size)?
                }
            };
            match test_fraction {
                Some(f) => {
                    let (train, test) = split_train_test(&ds, f, seed)?;
                    write_ds(&train, &with_suffix(out, "train"))?;
                    write_ds(&test, &with_suffix(out, "test"))
                }
                None => write_ds(&ds, out),
            }
        }
        Command::Scrub {
            input,
            blacklist,
            drop_very_toxic: drop,
        } => {
            let out = cx.out_file()?;
            let blacklist = cx.blacklist(&blacklist)?;
            let (mut ds, summary) = scrub_dataset_with_summary(&load_ds(&input)?, &blacklist);
            log::info!(
                "removed {} tokens, {} examples emptied",
                summary.tokens_removed,
                summary.examples_emptied
            );
            if drop {
                ds = drop_very_toxic(&ds)?;
            }
            write_ds(&ds, out)
        }
        Command::Train {
            input,
            epochs,
            learning_rate,
        } => {
            let out = cx.out_file()?;
            let mut config = cx.plan.train.clone().with_seed(seed);
            if let Some(e) = epochs {
                config.epochs = e;
            }
            if let Some(lr) = learning_rate {
                config.learning_rate = lr;
            }
            let model = ReferenceTrainer.train(&load_ds(&input)?, &config)?;
            log::info!("loss by epoch: {:?}", model.loss_history());
            model.save(out)
        }
        Command::Evaluate { model: model_path, input } => {
            let model = BagOfEmbeddings::load(&model_path)?;
            let ds = load_ds(&input)?;
            let report = evaluate(&model, &ds)?.with_meta(
                ds.seed,
                &model_path.display().to_string(),
                &input.display().to_string(),
            );
            cx.emit_json(&report)
        }
        Command::Attribute {
            model,
            input,
            steps,
            rule,
            top_k,
            html,
        } => {
            let model = BagOfEmbeddings::load(&model)?;
            let ds = load_ds(&input)?;
            let mut ig: IgConfig = cx.plan.ig;
            if let Some(s) = steps {
                ig.steps = s;
            }
            if let Some(r) = rule {
                ig.rule = match r {
                    RuleArg::GaussLegendre => IntegrationRule::GaussLegendre,
                    RuleArg::RiemannRight => IntegrationRule::RiemannRight,
                    RuleArg::Trapezoid => IntegrationRule::Trapezoid,
                };
            }
            let study = run_attribution_study(&model, &ds, top_k.unwrap_or(cx.plan.top_k), &ig)?;
            if let Some(path) = html {
                fs::write(path, render_html(&study.records))?;
            }
            cx.emit_json(&study)
        }
        Command::Report { input, format } => {
            let text = fs::read_to_string(&input).map_err(|source| Error::Load {
                path: input.clone(),
                source,
            })?;
            let rendered = if let Ok(r) = serde_json::from_str::<ToxicityMatrixReport>(&text) {
                report_to_string(&r, format.into())?
            } else {
                let r: GenderStudyReport = serde_json::from_str(&text)?;
                report_to_string(&r, format.into())?
            };
            match &cx.out {
                Some(path) => fs::write(path, rendered)?,
                None => std::io::stdout().write_all(rendered.as_bytes())?,
            }
            Ok(())
        }
        Command::RunGenderStudy => {
            let (examples, blacklist) = cx.plan.load_inputs()?;
            let dir = cx.out_dir()?;
            let output = run_gender_study_on(&examples, &blacklist, &cx.plan, &ReferenceTrainer)?;
            emit_report(&output.report, dir.join("gender_study.json"), ReportFormat::Json)?;
            emit_report(&output.report, dir.join("gender_study.csv"), ReportFormat::Csv)?;
            if let Some(art) = &output.first_seed {
                let original = &art.models[&ModelCondition::Original];
                let test = &art.test_sets[&TestCondition::WithProfanity];
                for (condition, model) in &art.models {
                    model.save(dir.join(format!("model_{condition}_seed{}.json", art.seed)))?;
                }
                for (condition, ds) in &art.test_sets {
                    write_ds(ds, &dir.join(format!("test_{condition}_seed{}.jsonl", art.seed)))?;
                }
                let correlation = run_correlation_study(original, test, &blacklist)?;
                write_json(&dir.join("correlation.json"), &correlation)?;
                let grid = count_grid(test, &blacklist, cx.plan.kde_points);
                let distribution = run_distribution_study(original, test, &blacklist, &grid)?;
                write_json(&dir.join("distribution.json"), &distribution)?;
                let attribution = run_attribution_study(original, test, cx.plan.top_k, &cx.plan.ig)?;
                write_json(&dir.join("attribution.json"), &attribution)?;
                fs::write(dir.join("attribution.html"), render_html(&attribution.records))?;
            }
            log::info!("gender study written to {}", dir.display());
            if output.report.cells.is_empty() {
                return Err(Error::DegenerateData("every seed failed".into()));
            }
            Ok(())
        }
        Command::RunToxicityMatrix => {
            let (examples, blacklist) = cx.plan.load_inputs()?;
            let dir = cx.out_dir()?;
            let report = run_toxicity_matrix_on(&examples, &blacklist, &cx.plan, &ReferenceTrainer)?;
            emit_report(&report, dir.join("toxicity_matrix.json"), ReportFormat::Json)?;
            emit_report(&report, dir.join("toxicity_matrix.csv"), ReportFormat::Csv)?;
            log::info!("toxicity matrix written to {}", dir.display());
            if report.runs.is_empty() {
                return Err(Error::DegenerateData("every seed failed".into()));
            }
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not failures.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
