use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mgp_core::eval::{evaluate, EvalReport};
use mgp_core::fusion::{fuse, FusionMode};
use mgp_core::imageio::{encode_pgm, read_dataset, read_ppm, write_dataset};
use mgp_core::nn::Module;
use mgp_core::synthdata::{make_splits, render, Lexicon, IMAGE_HEIGHT, IMAGE_WIDTH};
use mgp_core::tokenizers::{
    bpe_train, validate_word, wordpiece_train, CharTokenizer, Tokenizer,
};
use mgp_core::trainer::{TrainConfig, Trainer};
use mgp_core::{Error, Granularity, Recognizer};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mgp-str", version, about = "Multi-granularity scene text recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a tokenizer vocabulary from a one-word-per-line corpus.
    TokenizerTrain {
        #[arg(long)]
        corpus: PathBuf,
        /// char, bpe or wp
        #[arg(long)]
        granularity: String,
        /// Merge count for bpe, vocabulary size for wp; ignored for char.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic train/test dataset pair.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        augment: bool,
        /// One word per line; defaults to the built-in lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Dataset scored after every epoch.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated heads to train, e.g. `char` or `char,bpe,wp`.
        #[arg(long)]
        heads: Option<String>,
        /// Continue from the last checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Word accuracy of every head and of the fused prediction.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// mean, cumprod or both
        #[arg(long, default_value = "both")]
        fusion: String,
    },
    /// Recognize one 32×128 PPM image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Also list every head's reading and score.
        #[arg(long)]
        explain: bool,
        #[arg(long, default_value = "cumprod")]
        fusion: String,
    },
    /// Write one PGM per output slot showing its spatial attention.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        head: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inference latency and parameter counts.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Defaults to a rendering of "table".
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

const EXIT_LOAD: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NAN: u8 = 4;

struct Failure {
    code: u8,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// Default exit code for a library error.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::Io { .. } | Error::Json { .. } | Error::Format { .. } => EXIT_LOAD,
        Error::NonFinite(_) => EXIT_NAN,
        _ => EXIT_INPUT,
    };
    fail(code, e.to_string())
}

fn load_err(e: Error) -> Failure {
    match e {
        Error::NonFinite(_) => classify(e),
        _ => fail(EXIT_LOAD, e.to_string()),
    }
}

fn input_err(e: Error) -> Failure {
    match e {
        Error::Io { .. } => classify(e),
        _ => fail(EXIT_INPUT, e.to_string()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    fail(EXIT_LOAD, format!("{}: {e}", path.display()))
}

fn parse_head(s: &str) -> Result<Granularity, Failure> {
    s.trim()
        .parse()
        .map_err(|_| fail(EXIT_INPUT, format!("unknown head {s:?} (expected char, bpe or wp)")))
}

fn parse_modes(s: &str) -> Result<Vec<FusionMode>, Failure> {
    match s {
        "both" => Ok(FusionMode::ALL.to_vec()),
        other => Ok(vec![other.parse().map_err(input_err)?]),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn read_words(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn tokenizer_train(corpus: &Path, granularity: &str, size: Option<usize>, out: &Path) -> CmdResult {
    let g = parse_head(granularity)?;
    let words = read_words(corpus)?;
    if g != Granularity::Char {
        if words.is_empty() {
            return Err(fail(EXIT_INPUT, "corpus error: empty corpus"));
        }
        for w in &words {
            validate_word(w).map_err(input_err)?;
        }
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let vocab = match g {
        Granularity::Char => {
            let vocab = CharTokenizer::new().vocab().clone();
            vocab.save(&out.join("char_vocab.json")).map_err(classify)?;
            vocab
        }
        Granularity::Bpe => {
            let merges = size.unwrap_or(mgp_core::tokenizers::DEFAULT_NUM_MERGES);
            let (vocab, table) = bpe_train(&words, merges).map_err(input_err)?;
            vocab.save(&out.join("bpe_vocab.json")).map_err(classify)?;
            table.save(&out.join("bpe_merges.json")).map_err(classify)?;
            vocab
        }
        Granularity::WordPiece => {
            let n = size.unwrap_or(mgp_core::tokenizers::DEFAULT_VOCAB_SIZE);
            let vocab = wordpiece_train(&words, n).map_err(input_err)?;
            vocab.save(&out.join("wp_vocab.json")).map_err(classify)?;
            vocab
        }
    };
    print_json(&json!({ "granularity": g, "vocab_size": vocab.len() }));
    Ok(())
}

fn synth(
    out: &Path,
    n_train: usize,
    n_test: usize,
    seed: u64,
    augment: bool,
    lexicon: Option<&Path>,
) -> CmdResult {
    let lex = match lexicon {
        Some(p) => Lexicon::uniform(read_words(p)?).map_err(input_err)?,
        None => Lexicon::default(),
    };
    let (train, test) = make_splits(&lex, n_train, n_test, seed, augment).map_err(input_err)?;
    write_dataset(&out.join("train"), &train).map_err(classify)?;
    write_dataset(&out.join("test"), &test).map_err(classify)?;
    print_json(&json!({ "train": train.len(), "test": test.len(), "lexicon": lex.len() }));
    Ok(())
}

fn train(
    config: Option<&Path>,
    data: &Path,
    eval: Option<&Path>,
    out: &Path,
    heads: Option<&str>,
    resume: bool,
) -> CmdResult {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p).map_err(load_err)?,
        None => TrainConfig::default(),
    };
    cfg.apply_env().map_err(input_err)?;
    if let Some(h) = heads {
        cfg.heads = h.split(',').map(parse_head).collect::<Result<_, _>>()?;
    }
    cfg.validate().map_err(input_err)?;
    let samples = read_dataset(data).map_err(load_err)?;
    if samples.is_empty() {
        return Err(fail(EXIT_INPUT, "no samples"));
    }
    let eval_samples = eval.map(read_dataset).transpose().map_err(load_err)?;
    let mut trainer = if resume {
        Trainer::resume(cfg, out).map_err(load_err)?
    } else {
        Trainer::new(cfg, &samples).map_err(input_err)?
    };
    let summary = trainer
        .run(&samples, eval_samples.as_deref(), Some(out))
        .map_err(classify)?;
    let (train, eval) = match summary.last_epoch() {
        Some((t, e)) => (serde_json::to_value(t).ok(), e.and_then(|e| serde_json::to_value(e).ok())),
        None => (None, None),
    };
    print_json(&json!({ "steps": summary.steps, "train": train, "eval": eval }));
    Ok(())
}

fn human_table(report: &EvalReport) -> String {
    let s = &report.scores;
    let mut t = String::new();
    let _ = writeln!(t, "{:<12} {:>8}", "metric", "accuracy");
    for (h, a) in &s.accuracy {
        let _ = writeln!(t, "{:<12} {:>8.4}", h, a);
    }
    for (m, a) in &s.fused {
        let _ = writeln!(t, "{:<12} {:>8.4}", format!("fused/{m}"), a);
    }
    let _ = writeln!(t, "{:<12} {:>8.4}", "upper bound", s.upper_bound);
    let _ = writeln!(t, "{} samples, {:.2} ms/image", s.samples, report.ms_per_image);
    t
}

fn eval_cmd(checkpoint: &Path, data: &Path, fusion: &str) -> CmdResult {
    let modes = parse_modes(fusion)?;
    let rec = Recognizer::load(checkpoint).map_err(load_err)?;
    let samples = read_dataset(data).map_err(load_err)?;
    if samples.is_empty() {
        return Err(fail(EXIT_INPUT, "no samples"));
    }
    let report = evaluate(&rec, &samples, &modes).map_err(input_err)?;
    print_json(&serde_json::to_value(&report).expect("json"));
    eprint!("{}", human_table(&report));
    Ok(())
}

fn load_image(path: &Path) -> Result<mgp_core::nn::Tensor<f32>, Failure> {
    let image = read_ppm(path).map_err(input_err)?;
    if image.shape() != [IMAGE_HEIGHT, IMAGE_WIDTH, 3] {
        return Err(fail(
            EXIT_INPUT,
            format!(
                "{}: image is {}x{}, expected {IMAGE_WIDTH}x{IMAGE_HEIGHT} (no rescaling)",
                path.display(),
                image.shape()[1],
                image.shape()[0]
            ),
        ));
    }
    Ok(image)
}

fn predict(checkpoint: &Path, image: &Path, explain: bool, fusion: &str) -> CmdResult {
    let mode: FusionMode = fusion.parse().map_err(input_err)?;
    let rec = Recognizer::load(checkpoint).map_err(load_err)?;
    let image = load_image(image)?;
    let result = rec.recognize(&image, mode).map_err(input_err)?;
    println!("{}\t{:.4}", result.winner.text, result.winner.score);
    if explain {
        println!("{:<6}\t{:<28}\t{}", "head", "prediction", "score");
        for p in &result.all {
            println!("{:<6}\t{:<28}\t{:.4}", p.granularity.as_str(), p.text, p.score);
        }
    }
    Ok(())
}

fn dump_attention(checkpoint: &Path, image: &Path, head: &str, out: &Path) -> CmdResult {
    let g = parse_head(head)?;
    let rec = Recognizer::load(checkpoint).map_err(load_err)?;
    let image = load_image(image)?;
    if rec.model.branch(g).is_none() {
        return Err(fail(EXIT_INPUT, format!("checkpoint has no {g} head")));
    }
    let (output, _) = rec.model.forward_heads(&image, &[g]).map_err(input_err)?;
    let masks = &output.branches[0].masks;
    let (gh, gw) = rec.model.config().grid();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut mass = Vec::new();
    for t in 0..masks.slots() {
        let row = &masks.row(t)[1..];
        let (lo, hi) = row
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let gray: Vec<u8> = row
            .iter()
            .map(|v| {
                if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        let path = out.join(format!("{}_{t:02}.pgm", g.as_str()));
        fs::write(&path, encode_pgm(gw, gh, &gray)).map_err(|e| io_err(&path, e))?;
        mass.push(row.iter().map(|v| *v as f64).sum::<f64>());
    }
    print_json(&json!({ "head": g, "files": masks.slots(), "grid": [gh, gw], "patch_mass": mass }));
    Ok(())
}

fn bench(checkpoint: &Path, n: usize, image: Option<&Path>) -> CmdResult {
    if n == 0 {
        return Err(fail(EXIT_INPUT, "--n must be at least 1"));
    }
    let rec = Recognizer::load(checkpoint).map_err(load_err)?;
    let image = match image {
        Some(p) => load_image(p)?,
        None => render("table", 0, false).map_err(input_err)?.image,
    };
    let mode = FusionMode::Cumprod;
    let run = || -> Result<(), Failure> {
        let out = rec.model.forward(&image).map_err(input_err)?;
        let preds = rec.predictions(&out, mode).map_err(input_err)?;
        fuse(&preds, mode).map_err(input_err)?;
        Ok(())
    };
    for _ in 0..5 {
        run()?;
    }
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let b = rec.model.param_breakdown();
    print_json(&json!({
        "ms_per_image": median,
        "n": n,
        "params": {
            "backbone": b.backbone,
            "char_head": b.head(Granularity::Char),
            "subword_heads": b.subword(),
            "total": rec.model.num_params(),
        },
    }));
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::TokenizerTrain {
            corpus,
            granularity,
            size,
            out,
        } => tokenizer_train(&corpus, &granularity, size, &out),
        Command::Synth {
            out,
            n_train,
            n_test,
            seed,
            augment,
            lexicon,
        } => synth(&out, n_train, n_test, seed, augment, lexicon.as_deref()),
        Command::Train {
            config,
            data,
            eval,
            out,
            heads,
            resume,
        } => train(
            config.as_deref(),
            &data,
            eval.as_deref(),
            &out,
            heads.as_deref(),
            resume,
        ),
        Command::Eval {
            checkpoint,
            data,
            fusion,
        } => eval_cmd(&checkpoint, &data, &fusion),
        Command::Predict {
            checkpoint,
            image,
            explain,
            fusion,
        } => predict(&checkpoint, &image, explain, &fusion),
        Command::DumpAttention {
            checkpoint,
            image,
            head,
            out,
        } => dump_attention(&checkpoint, &image, &head, &out),
        Command::Bench { checkpoint, n, image } => bench(&checkpoint, n, image.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
