use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use serde_json::json;

use super::manifest::{RunManifest, RUN_MANIFEST_FILE};
use super::report::{predict, render_heatmap, top_k};
use super::{
    CentralizedArgs, Cli, Command, EvaluateArgs, FederatedArgs, InferArgs, ModeArg, ModelArgs, OptimizerArg,
    PrepareArgs, PresetArg, ReplayArgs, TrainArgs, TransportArg,
};
use crate::data::{
    even_sizes, load_dataset_dir, load_vocab, normalize_name, parse_onehot_csv, synthesize_dataset,
    write_dataset_dir, LoadedDataset, TokenizedPair, Vocab, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::federated::codec::{checkpoint_name, read_checkpoint, write_checkpoint};
use crate::federated::metrics::METRICS_FILE;
use crate::federated::{resume_federation, run_federation, AggregationMode, FederatedConfig, Transport};
use crate::model::{ModelDims, ModelParams, Preset};
use crate::rng;
use crate::train::{evaluate, train_epoch, OptimizerKind, OptimizerState, TrainConfig};

/// Executes a parsed command. `argv` (without the program name) is recorded
/// in run manifests so the run can be replayed.
pub fn run(cli: &Cli, argv: &[String], out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::PrepareData(a) => prepare_data(a, argv, out),
        Command::TrainCentralized(a) => train_centralized(a, argv, out),
        Command::TrainFederated(a) => train_federated(a, argv, out),
        Command::Infer(a) => infer(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Replay(a) => replay(a, out),
    }
}

fn prepare_data(a: &PrepareArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let (pairs, skipped, source) = match &a.input {
        Some(path) => {
            let parsed = parse_onehot_csv(File::open(path).map_err(Error::file(path))?)?;
            (parsed.pairs, parsed.skipped_rows, path.display().to_string())
        }
        None => (
            synthesize_dataset(a.diseases, a.symptoms, a.samples, a.seed)?,
            0,
            format!("synthetic(diseases={}, symptoms={}, samples={})", a.diseases, a.symptoms, a.samples),
        ),
    };
    let sizes = match (&a.sizes, a.clients) {
        (Some(s), Some(k)) if s.len() != k => {
            return Err(Error::Config(format!("--clients {k} but {} sizes given", s.len())));
        }
        (Some(s), _) => s.clone(),
        (None, k) => {
            let k = k.unwrap_or(5);
            if k == 0 {
                return Err(Error::Config("--clients must be at least 1".into()));
            }
            even_sizes(pairs.len(), k)
        }
    };
    let manifest = write_dataset_dir(&a.out, &pairs, &sizes, a.train_fraction, a.seed, &source, skipped)?;
    writeln!(
        out,
        "{} pairs, {} diseases, {} symptoms ({} rows skipped)",
        manifest.num_pairs, manifest.num_diseases, manifest.num_symptoms, manifest.skipped_rows
    )?;
    for (file, size) in manifest.shard_files.iter().zip(&manifest.shard_sizes) {
        writeln!(out, "  {file}: {size} pairs")?;
    }
    let mut artifacts = manifest.shard_files.clone();
    artifacts.extend([manifest.vocab_file.clone(), MANIFEST_FILE.to_owned()]);
    RunManifest::new("prepare-data", argv.to_vec(), serde_json::to_value(&manifest)?, a.seed).finish(&a.out, &artifacts)?;
    Ok(())
}

fn model_dims(m: &ModelArgs, vocab: &Vocab) -> ModelDims {
    let preset = match m.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    };
    let mut dims = preset.dims(vocab.input.len(), vocab.output.len());
    if let Some(e) = m.embed {
        dims.embed_dim = e;
    }
    if let Some(h) = m.hidden {
        dims.hidden_dim = h;
        dims.attention_dim = h;
    }
    if let Some(att) = m.attention {
        dims.attention_dim = att;
    }
    dims
}

fn train_config(t: &TrainArgs, local_epochs: usize) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        local_epochs,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        optimizer: match t.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        },
        grad_clip_norm: (!t.no_clip).then_some(t.clip),
        seed: t.seed,
        ..TrainConfig::default()
    };
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!("--lr must be positive, got {}", cfg.learning_rate)));
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f64,
    own_test_loss: f64,
    pooled_test_loss: f64,
}

fn train_centralized(a: &CentralizedArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset_dir(&a.data)?;
    let shard = ds
        .shards
        .get(a.client)
        .ok_or_else(|| Error::Config(format!("no client {} in a {}-client dataset", a.client, ds.shards.len())))?;
    let dims = model_dims(&a.model, &ds.vocab);
    dims.validate()?;
    let mut cfg = train_config(&a.train, a.epochs)?;
    cfg.seed = rng::derive_seed(a.train.seed, a.client as u64);
    let pooled_test = ds.pooled_test();
    let own_test: &[TokenizedPair] = if shard.test.is_empty() { &shard.train } else { &shard.test };

    std::fs::create_dir_all(&a.out)?;
    let mut params = ModelParams::init(dims, a.train.seed)?;
    let mut state = OptimizerState::new(cfg.optimizer, &params);
    let mut csv = csv::Writer::from_path(a.out.join(METRICS_FILE))?;
    if a.epochs == 0 {
        csv.write_record(["epoch", "train_loss", "own_test_loss", "pooled_test_loss"])?;
    }
    for epoch in 1..=a.epochs {
        let (next, train_loss) = train_epoch(&params, &shard.train, &cfg, &mut state, epoch - 1)?;
        params = next;
        let row = EpochRow {
            epoch,
            train_loss,
            own_test_loss: evaluate(&params, own_test)?,
            pooled_test_loss: evaluate(&params, &pooled_test)?,
        };
        writeln!(
            out,
            "epoch {epoch:>3}: train {:.6}  own test {:.6}  pooled test {:.6}",
            row.train_loss, row.own_test_loss, row.pooled_test_loss
        )?;
        csv.serialize(row)?;
    }
    csv.flush()?;
    drop(csv);

    let final_train = evaluate(&params, &shard.train)?;
    let final_pooled = evaluate(&params, &pooled_test)?;
    writeln!(out, "final: train {final_train:.6}  pooled test {final_pooled:.6}")?;
    write_checkpoint(&a.out.join("model.fedw"), &params)?;

    let config = json!({ "client": a.client, "epochs": a.epochs, "dims": dims, "train": cfg });
    let mut m = RunManifest::new("train-centralized", argv.to_vec(), config, a.train.seed);
    m.dataset_dir = Some(a.data.display().to_string());
    m.finish(&a.out, &["model.fedw".into(), METRICS_FILE.into()])?;
    Ok(())
}

fn has_checkpoints(dir: &Path) -> Result<bool> {
    if !dir.exists() {
        return Ok(false);
    }
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("round_") && name.ends_with(".fedw") {
            return Ok(true);
        }
    }
    Ok(false)
}

fn train_federated(a: &FederatedArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset_dir(&a.data)?;
    let k = a.clients.unwrap_or(ds.shards.len());
    if k == 0 || k > ds.shards.len() {
        return Err(Error::Config(format!("--clients {k} but the dataset has {} shards", ds.shards.len())));
    }
    if !a.resume && has_checkpoints(&a.out)? {
        return Err(Error::Config(format!(
            "{} already holds checkpoints; pass --resume or use a fresh directory",
            a.out.display()
        )));
    }
    let dims = model_dims(&a.model, &ds.vocab);
    let config = FederatedConfig {
        num_clients: k,
        num_rounds: a.rounds,
        dims,
        train: train_config(&a.train, a.local_epochs)?,
        aggregation: match a.mode {
            ModeArg::Weighted => AggregationMode::Weighted,
            ModeArg::Uniform => AggregationMode::Uniform,
        },
        transport: match a.transport {
            TransportArg::InProcess => Transport::InProcess,
            TransportArg::Socket => Transport::Socket {
                address: a.address.clone(),
            },
        },
        seed: a.train.seed,
        checkpoint_dir: Some(a.out.clone()),
        round_timeout_secs: None,
    };
    let shards = &ds.shards[..k];
    let state = if a.resume {
        resume_federation(&config, shards)?
    } else {
        run_federation(&config, shards)?
    };
    for m in &state.history {
        writeln!(
            out,
            "round {:>3}: global train {:.6}  pooled test {:.6}  client mean train {:.6}",
            m.round_index,
            m.global_train_loss,
            m.global_test_loss,
            m.clients_mean_train_loss()
        )?;
    }
    write_checkpoint(&a.out.join("final.fedw"), &state.global_params)?;

    let mut artifacts: Vec<String> = (1..=a.rounds).map(checkpoint_name).collect();
    artifacts.extend(["final.fedw".into(), METRICS_FILE.into()]);
    let mut m = RunManifest::new("train-federated", argv.to_vec(), serde_json::to_value(&config)?, a.train.seed);
    m.dataset_dir = Some(a.data.display().to_string());
    m.finish(&a.out, &artifacts)?;
    Ok(())
}

fn check_vocab(params: &ModelParams, vocab: &Vocab) -> Result<()> {
    if params.dims.vocab_in != vocab.input.len() || params.dims.vocab_out != vocab.output.len() {
        return Err(Error::Config(format!(
            "checkpoint vocabularies ({}/{}) do not match the dataset ({}/{})",
            params.dims.vocab_in,
            params.dims.vocab_out,
            vocab.input.len(),
            vocab.output.len()
        )));
    }
    Ok(())
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let symptoms: Vec<String> = a
        .symptoms
        .split(',')
        .map(normalize_name)
        .filter(|s| !s.is_empty())
        .collect();
    if symptoms.is_empty() {
        return Err(Error::Config("--symptoms must name at least one symptom".into()));
    }
    let params = read_checkpoint(&a.model)?;
    let vocab = load_vocab(&a.data)?;
    check_vocab(&params, &vocab)?;
    let p = predict(&params, &vocab, &symptoms, a.max_len)?;
    for s in &p.unknown_symptoms {
        log::warn!("unknown symptom {s:?} treated as <unk>");
        eprintln!("warning: unknown symptom {s:?} treated as <unk>");
    }
    let json = serde_json::to_string_pretty(&p.report)?;
    if let Some(path) = &a.attention_out {
        std::fs::write(path, &json)?;
    }
    if a.json {
        writeln!(out, "{json}")?;
        return Ok(());
    }
    writeln!(out, "prediction: {}", p.predicted.join(" "))?;
    writeln!(out)?;
    write!(out, "{}", render_heatmap(&p.report))?;
    if a.top_k > 0 {
        writeln!(out)?;
        for (token, cols) in top_k(&p.report, a.top_k) {
            let listed: Vec<String> = cols.iter().map(|(s, w)| format!("{s} ({w:.3})")).collect();
            writeln!(out, "{token}: {}", listed.join(", "))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRow {
    model: String,
    train_loss: f64,
    pooled_test_loss: f64,
}

/// Training pairs a checkpoint should be scored on: its own client's shard
/// for a centralized run, otherwise every client's training data.
fn training_scope(path: &Path, ds: &LoadedDataset) -> Vec<TokenizedPair> {
    let manifest = path
        .parent()
        .map(|d| d.join(RUN_MANIFEST_FILE))
        .and_then(|m| RunManifest::read(&m).ok());
    if let Some(m) = manifest {
        if m.command == "train-centralized" {
            if let Some(shard) = m.config["client"].as_u64().and_then(|c| ds.shards.get(c as usize)) {
                return shard.train.clone();
            }
        }
    }
    ds.pooled_train()
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset_dir(&a.data)?;
    let pooled_test = ds.pooled_test();
    let mut rows = Vec::with_capacity(a.models.len());
    for entry in &a.models {
        let (name, path) = match entry.split_once('=') {
            Some((n, p)) => (n.to_owned(), PathBuf::from(p)),
            None => (entry.clone(), PathBuf::from(entry)),
        };
        let params = read_checkpoint(&path)?;
        check_vocab(&params, &ds.vocab)?;
        rows.push(EvalRow {
            model: name,
            train_loss: evaluate(&params, &training_scope(&path, &ds))?,
            pooled_test_loss: evaluate(&params, &pooled_test)?,
        });
    }
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    writeln!(out, "{:width$}  {:>12}  {:>16}", "model", "train_loss", "pooled_test_loss")?;
    for r in &rows {
        writeln!(out, "{:width$}  {:>12.6}  {:>16.6}", r.model, r.train_loss, r.pooled_test_loss)?;
    }
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// `argv` with the value of `--out` replaced.
fn with_out(argv: &[String], new_out: &Path) -> Result<Vec<String>> {
    let mut args = argv.to_vec();
    let new_out = new_out.display().to_string();
    for i in 0..args.len() {
        if args[i] == "--out" && i + 1 < args.len() {
            args[i + 1] = new_out;
            return Ok(args);
        }
        if args[i].starts_with("--out=") {
            args[i] = format!("--out={new_out}");
            return Ok(args);
        }
    }
    Err(Error::Config("recorded command has no --out".into()))
}

fn replay(a: &ReplayArgs, out: &mut dyn Write) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    let argv = with_out(&recorded.argv, &a.out)?;
    let cli = Cli::try_parse_from(std::iter::once("fedattn".to_owned()).chain(argv.iter().cloned()))
        .map_err(|e| Error::Config(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("cannot replay a replay".into()));
    }
    run(&cli, &argv, out)?;
    let fresh = RunManifest::read(&a.out.join(RUN_MANIFEST_FILE))?;
    let mut mismatched = Vec::new();
    for (name, crc) in &recorded.artifacts {
        let same = fresh.artifacts.get(name) == Some(crc);
        writeln!(out, "{} {name}", if same { "same" } else { "DIFF" })?;
        if !same {
            mismatched.push(name.clone());
        }
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(format!("replay differs in {}", mismatched.join(", "))))
    }
}
