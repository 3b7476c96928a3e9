use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgseq::config::PipelineConfig;
use kgseq::pipeline::{self, KgInputs, Layout};
use kgseq::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "kgseq", version, about = "Knowledge-graph grounded concept-to-text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Match concepts to the knowledge graph, select triples and neighbors,
    /// and train the tokenizer.
    Ground {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kg: KgFlags,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Train TransE on the selected triples and write grounded bundles.
    KgeTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        triples: PathBuf,
    },
    /// Concept-mask pre-training.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune on concept-set/sentence pairs.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint whose parameters initialize the model.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Beam-search generation for every concept set of a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kg: KgFlags,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// BLEU-3/4 and concept coverage of generations against references.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        /// Directory for metrics.json; defaults to the directory of --gen.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export head-averaged concept attention for one example as CSV.
    Attn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kg: KgFlags,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        example_id: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Line-based `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, alias = "top_k")]
    top_k: Option<usize>,
    #[arg(long, alias = "beam_size")]
    beam_size: Option<usize>,
    #[arg(long, alias = "length_penalty")]
    length_penalty: Option<f64>,
    #[arg(long, alias = "max_epochs")]
    max_epochs: Option<usize>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct KgFlags {
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, alias = "pos_lexicon")]
    pos_lexicon: Option<PathBuf>,
}

impl KgFlags {
    fn inputs(&self) -> Result<Option<KgInputs>> {
        match (&self.triples, &self.vectors, &self.pos_lexicon) {
            (None, None, None) => Ok(None),
            (Some(t), Some(v), Some(p)) => Ok(Some(KgInputs {
                triples: t.clone(),
                vectors: v.clone(),
                pos_lexicon: p.clone(),
            })),
            _ => Err(Error::Usage(
                "--triples, --vectors and --pos-lexicon must be given together".into(),
            )),
        }
    }

    fn required(&self) -> Result<KgInputs> {
        self.inputs()?.ok_or_else(|| {
            Error::Usage("--triples, --vectors and --pos-lexicon are required".into())
        })
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Kge,
    Pretrain,
    Finetune,
    Other,
}

impl Common {
    fn load(&self, stage: Stage) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(k) = self.top_k {
            cfg.top_k = k;
        }
        if let Some(b) = self.beam_size {
            cfg.beam.beam_size = b;
        }
        if let Some(a) = self.length_penalty {
            cfg.beam.length_penalty = a;
        }
        if let Some(e) = self.max_epochs {
            match stage {
                Stage::Kge => cfg.kge.epochs = e,
                Stage::Pretrain => cfg.pretrain.epochs = e,
                Stage::Finetune => cfg.finetune.epochs = e,
                Stage::Other => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn checkpoint_or_default(checkpoint: &Option<PathBuf>, layout: &Layout) -> PathBuf {
    checkpoint
        .clone()
        .unwrap_or_else(|| layout.checkpoint_dir("finetune"))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ground {
            common,
            kg,
            dataset,
            val,
        } => {
            let cfg = common.load(Stage::Other)?;
            let summary = pipeline::ground(
                &cfg,
                &kg.required()?,
                &dataset,
                val.as_deref(),
                &Layout::new(&common.out),
            )?;
            println!(
                "grounded {} concept sets, {} triples selected, vocabulary {}",
                summary.records, summary.selected_triples, summary.vocab_size
            );
        }
        Command::KgeTrain { common, triples } => {
            let cfg = common.load(Stage::Kge)?;
            let losses = pipeline::kge_train(&cfg, &triples, &Layout::new(&common.out))?;
            if let Some(last) = losses.last() {
                println!("TransE final epoch loss {last:.6}");
            }
        }
        Command::Pretrain { common } => {
            let cfg = common.load(Stage::Pretrain)?;
            let report = pipeline::pretrain(&cfg, &Layout::new(&common.out))?;
            if let Some(last) = report.epoch_losses.last() {
                println!("pre-training final epoch loss {last:.6}");
            }
        }
        Command::Finetune {
            common,
            dataset,
            val,
            init,
        } => {
            let cfg = common.load(Stage::Finetune)?;
            let report = pipeline::finetune(
                &cfg,
                &dataset,
                val.as_deref(),
                init.as_deref(),
                &Layout::new(&common.out),
            )?;
            println!(
                "fine-tuning kept epoch {} (train loss {:.6})",
                report.best_epoch + 1,
                report.epoch_losses[report.best_epoch]
            );
        }
        Command::Generate {
            common,
            kg,
            dataset,
            checkpoint,
        } => {
            let cfg = common.load(Stage::Other)?;
            let layout = Layout::new(&common.out);
            let ckpt = checkpoint_or_default(&checkpoint, &layout);
            let gens =
                pipeline::generate(&cfg, &ckpt, &dataset, kg.inputs()?.as_ref(), &layout)?;
            println!(
                "wrote {} generations to {}",
                gens.len(),
                layout.generations_file().display()
            );
        }
        Command::Eval { gen, refs, out } => {
            let report = pipeline::eval(&gen, &refs)?;
            let dir = out.unwrap_or_else(|| {
                gen.parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let path = Layout::new(dir).metrics_file();
            pipeline::write_metrics(&report, &path)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Data(format!("cannot serialize metrics: {e}")))?;
            println!("{json}");
        }
        Command::Attn {
            common,
            kg,
            dataset,
            example_id,
            checkpoint,
        } => {
            let cfg = common.load(Stage::Other)?;
            let layout = Layout::new(&common.out);
            let ckpt = checkpoint_or_default(&checkpoint, &layout);
            let path = pipeline::attention(
                &cfg,
                &ckpt,
                &dataset,
                &example_id,
                kg.inputs()?.as_ref(),
                &layout,
            )?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Data(_)
        | Error::Grounding(_)
        | Error::Alignment(_)
        | Error::Parse { .. }
        | Error::Lookup(_)
        | Error::Io { .. } => 2,
        Error::Numeric(_) | Error::Dimension(_) => 3,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("KGC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("KGC_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match init_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
