use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wawenet::analysis::{condition_fingerprint, dc_flow, filter_census, two_tone_demo, FilterType, TwoToneConfig};
use wawenet::dsp::ChannelSignal;
use wawenet::impairment::{make_corpus_sources, Condition};
use wawenet::io::{
    epoch_log_header, epoch_log_line, fmt_real, load_weights, save_weights, wav_read, wav_write, Manifest,
    ManifestRecord, PlotData, Split,
};
use wawenet::model::{ModelConfig, WaweNet, INPUT_LEN};
use wawenet::preprocess::{active_level, extract_segments, SegmentRecord, TargetSpec, PROXY_TARGETS};
use wawenet::synth::SpeechLike;
use wawenet::trainer::{fit, metrics, predict, Dataset, FitConfig};
use wawenet::{Error, Result, Waveform};

#[derive(Parser)]
#[command(name = "wawenet", version, about = "No-reference speech quality estimation from raw waveforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic speech-like recordings.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 6.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cut recordings into level-normalized three-second segments.
    Segment {
        #[arg(long)]
        out: PathBuf,
        /// Manifest path (default: <out>/manifest.csv).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "clean")]
        condition: String,
        /// Train, validation and test shares, assigned per source file.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.1, 0.4])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Apply impairment conditions to a clean corpus and attach proxy targets.
    Impair {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated conditions, e.g. clean,noise:10,lowpass,loss:0.1:0.5
        #[arg(long, value_delimiter = ',', required = true)]
        conditions: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network on a manifest's train split, validating on its val split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Weight file to write.
        #[arg(long)]
        out: PathBuf,
        /// Epoch log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "segsnr")]
        targets: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 60)]
        batch: usize,
        /// Train on polarity-inverted copies as well.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        ipa: bool,
        /// Worker threads; 1 gives the reference deterministic schedule.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Stop once every validation correlation reaches this value.
        #[arg(long)]
        stop_at_rho: Option<f64>,
    },
    /// Estimate targets for audio files or a manifest split.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "segsnr")]
        targets: Vec<String>,
        #[command(flatten)]
        input: InputArgs,
        /// Per-target metrics (CSV); needs a manifest with the target columns.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latent vectors (one row per segment).
    Features {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// DC value of every channel after every processing stage.
    Dcflow {
        /// Weight file; a freshly initialized network is used without one.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Segment of the file to trace.
        #[arg(long, default_value_t = 0)]
        segment: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        file: PathBuf,
    },
    /// Classify every convolution kernel by its frequency response.
    Filters {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean latent vector per condition of a manifest.
    Fingerprint {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectra showing rectification products and pooling aliasing.
    DemoTwoTone {
        #[arg(long, default_value_t = 345.0)]
        f1: f64,
        #[arg(long, default_value_t = 6789.0)]
        f2: f64,
        #[arg(long, default_value_t = 2)]
        pool: usize,
        /// Directory for spectra.txt and pooled.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the network geometry and parameter counts.
    Describe {
        #[arg(long, default_value_t = 1)]
        inputs: usize,
        #[arg(long, default_value_t = 1)]
        outputs: usize,
    },
}

#[derive(clap::Args)]
struct InputArgs {
    /// Manifest whose segments are used instead of audio files.
    #[arg(long, conflicts_with = "files")]
    manifest: Option<PathBuf>,
    /// Restrict a manifest to one split.
    #[arg(long, requires = "manifest")]
    split: Option<Split>,
    files: Vec<PathBuf>,
}

/// A network input with its provenance.
struct Item {
    source: String,
    offset: usize,
    condition: String,
    targets: Vec<f64>,
    signal: ChannelSignal<f32>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn mono(samples: Vec<f32>) -> Result<ChannelSignal<f32>> {
    if samples.len() != INPUT_LEN {
        return Err(Error::InvalidShape(format!("segment has {} samples, expected {INPUT_LEN}", samples.len())));
    }
    ChannelSignal::mono(samples)
}

fn manifest_items(m: &Manifest, split: Option<Split>) -> Result<Vec<Item>> {
    m.records
        .iter()
        .filter(|r| split.map_or(true, |s| r.split == s))
        .map(|r| {
            Ok(Item {
                source: r.path.display().to_string(),
                offset: 0,
                condition: r.condition.clone(),
                targets: r.targets.clone(),
                signal: mono(wav_read(&r.path)?.samples)?,
            })
        })
        .collect()
}

fn file_items(files: &[PathBuf]) -> Result<Vec<Item>> {
    let mut out = Vec::new();
    for f in files {
        for seg in extract_segments(&wav_read(f)?)? {
            out.push(Item {
                source: f.display().to_string(),
                offset: seg.offset,
                condition: String::new(),
                targets: Vec::new(),
                signal: mono(seg.samples)?,
            });
        }
    }
    Ok(out)
}

fn load_items(input: &InputArgs) -> Result<(Option<Manifest>, Vec<Item>)> {
    match &input.manifest {
        Some(p) => {
            let m = Manifest::load(p)?;
            let items = manifest_items(&m, input.split)?;
            Ok((Some(m), items))
        }
        None if input.files.is_empty() => Err(Error::InvalidConfig("give audio files or --manifest".into())),
        None => Ok((None, file_items(&input.files)?)),
    }
}

fn load_net(path: &Path) -> Result<WaweNet<f32>> {
    let net: WaweNet<f32> = load_weights(path)?;
    if net.config().input_channels != 1 {
        return Err(Error::InvalidConfig("only single-input networks are supported here".into()));
    }
    Ok(net)
}

fn target_specs(names: &[String]) -> Result<Vec<TargetSpec>> {
    names
        .iter()
        .map(|n| TargetSpec::lookup(n).ok_or_else(|| Error::InvalidConfig(format!("unknown target '{n}'"))))
        .collect()
}

fn csv_line<S: AsRef<str>>(cells: &[S]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(cells.iter().map(|c| c.as_ref())).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8")
}

fn synth(out: &Path, count: usize, duration: f64, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    let gen = SpeechLike::with_duration(duration);
    for i in 0..count {
        let x = gen.generate(seed.wrapping_add(i as u64))?;
        wav_write(out.join(format!("speech_{i:04}.wav")), &x)?;
    }
    Ok(())
}

fn segment(
    out: &Path,
    manifest: Option<PathBuf>,
    condition: &str,
    fractions: &[f64],
    seed: u64,
    files: &[PathBuf],
) -> Result<()> {
    if fractions.len() != 3 || fractions.iter().any(|f| !(*f >= 0.0)) || fractions.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConfig("--fractions needs three non-negative shares".into()));
    }
    fs::create_dir_all(out)?;
    let total: f64 = fractions.iter().sum();
    let mut order: Vec<usize> = (0..files.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = files.len() as f64;
    let n_train = (fractions[0] / total * n).round() as usize;
    let n_val = ((fractions[0] + fractions[1]) / total * n).round() as usize - n_train;
    let mut split_of = vec![Split::Test; files.len()];
    for (rank, &f) in order.iter().enumerate() {
        split_of[f] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut m = Manifest::new(Vec::new());
    for (i, f) in files.iter().enumerate() {
        let stem = f.file_stem().map_or("audio".into(), |s| s.to_string_lossy().into_owned());
        let segs = match extract_segments(&wav_read(f)?) {
            Ok(s) => s,
            Err(e @ (Error::EmptyResult(_) | Error::NoSpeech)) => {
                log::warn!("{}: {e}; skipped", f.display());
                continue;
            }
            Err(e) => return Err(e),
        };
        for seg in segs {
            let path = out.join(format!("{stem}_{:08}.wav", seg.offset));
            wav_write(&path, &Waveform::wideband(seg.samples))?;
            m.records.push(ManifestRecord {
                path,
                condition: condition.to_string(),
                split: split_of[i],
                targets: Vec::new(),
            });
        }
    }
    if m.records.is_empty() {
        return Err(Error::EmptyResult("no file produced a segment".into()));
    }
    m.save(manifest.unwrap_or_else(|| out.join("manifest.csv")))?;
    let f = m.fractions();
    println!(
        "{} segments: train {:.3}, val {:.3}, test {:.3}",
        m.records.len(),
        f.train,
        f.val,
        f.test
    );
    Ok(())
}

fn impair(manifest: &Path, out: &Path, conditions: &[String], seed: u64) -> Result<()> {
    let clean = Manifest::load(manifest)?;
    let conds = conditions.iter().map(|c| Condition::parse(c)).collect::<Result<Vec<_>>>()?;
    let records = clean
        .records
        .iter()
        .map(|r| {
            let x = wav_read(&r.path)?;
            let level = active_level(&x.samples, x.sample_rate)?;
            Ok(SegmentRecord {
                samples: mono(x.samples)?.into_vec(),
                offset: 0,
                saf: level.saf,
                active_level_dbov: level.active_level_dbov,
                condition: r.condition.clone(),
                targets: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut m = Manifest::new(PROXY_TARGETS.to_vec());
    for (src, rec) in make_corpus_sources(&records, &conds, seed)? {
        let c = conds.iter().position(|c| c.id == rec.condition).expect("condition from list");
        let origin = &clean.records[src];
        let stem = origin.path.file_stem().map_or("segment".into(), |s| s.to_string_lossy().into_owned());
        let path = out.join(format!("{stem}__c{c:02}.wav"));
        wav_write(&path, &Waveform::wideband(rec.samples))?;
        m.records.push(ManifestRecord {
            path,
            condition: rec.condition,
            split: origin.split,
            targets: rec.targets,
        });
    }
    m.save(out.join("manifest.csv"))?;
    println!("{} impaired segments", m.records.len());
    Ok(())
}

fn dataset(m: &Manifest, split: Split, columns: &[usize]) -> Result<Dataset<f32>> {
    let mut ds = Dataset {
        inputs: Vec::new(),
        targets: Vec::new(),
        conditions: Vec::new(),
    };
    for r in m.split(split) {
        ds.inputs.push(mono(wav_read(&r.path)?.samples)?);
        ds.targets.push(columns.iter().map(|&c| r.targets[c]).collect());
        ds.conditions.push(r.condition.clone());
    }
    Ok(ds)
}

fn train(
    manifest: &Path,
    out: &Path,
    log: Option<&Path>,
    targets: &[String],
    cfg: FitConfig,
) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let columns = targets
        .iter()
        .map(|t| {
            m.target_index(t)
                .ok_or_else(|| Error::InvalidConfig(format!("manifest has no target column '{t}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let train_set = dataset(&m, Split::Train, &columns)?;
    let val_set = dataset(&m, Split::Val, &columns)?;
    let mut net: WaweNet<f32> = WaweNet::build(ModelConfig::wawenet(1, columns.len())?, cfg.seed)?;
    let names: Vec<&str> = columns.iter().map(|&c| m.targets[c].name).collect();
    let mut log_file = match log {
        Some(p) => {
            let mut f = fs::File::create(p)?;
            writeln!(f, "{}", epoch_log_header(&names))?;
            Some(f)
        }
        None => None,
    };
    let mut io_error = None;
    let state = fit(&mut net, &train_set, &val_set, &cfg, &mut |r| {
        eprintln!(
            "epoch {:>3}  lr {:.0e}  train {:.4}  val {:.4}  rho {:?}",
            r.epoch, r.lr, r.train_rmse, r.val_rmse, r.val_rho
        );
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{}", epoch_log_line(r)).and_then(|_| f.flush()) {
                io_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    save_weights(out, &net)?;
    println!("trained {} epochs; weights in {}", state.epoch, out.display());
    Ok(())
}

fn evaluate(
    weights: &Path,
    targets: &[String],
    input: &InputArgs,
    metrics_out: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let net = load_net(weights)?;
    let specs = target_specs(targets)?;
    if specs.len() != net.head.outputs {
        return Err(Error::InvalidConfig(format!(
            "the network estimates {} targets, {} named",
            net.head.outputs,
            specs.len()
        )));
    }
    let (manifest, items) = load_items(input)?;
    if items.is_empty() {
        return Err(Error::EmptyResult("no segments to evaluate".into()));
    }
    let inputs: Vec<ChannelSignal<f32>> = items.iter().map(|i| i.signal.clone()).collect();
    let est: Vec<Vec<f64>> = predict(&net, &inputs)?
        .into_iter()
        .map(|row| row.iter().zip(&specs).map(|(&u, s)| s.from_unit(u)).collect())
        .collect();

    let mut header = vec!["source".to_string(), "offset".into(), "condition".into()];
    header.extend(specs.iter().map(|s| s.name.to_string()));
    let mut text = csv_line(&header);
    for (item, row) in items.iter().zip(&est) {
        let mut cells = vec![item.source.clone(), item.offset.to_string(), item.condition.clone()];
        cells.extend(row.iter().map(|&v| fmt_real(v)));
        text.push_str(&csv_line(&cells));
    }
    emit(out, &text)?;

    if let Some(mpath) = metrics_out {
        let m = manifest.ok_or_else(|| Error::InvalidConfig("--metrics needs --manifest".into()))?;
        let columns = specs
            .iter()
            .map(|s| {
                m.target_index(s.name)
                    .ok_or_else(|| Error::InvalidConfig(format!("manifest has no target column '{}'", s.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<Vec<f64>> = items
            .iter()
            .map(|i| columns.iter().zip(&specs).map(|(&c, s)| s.from_unit(i.targets[c])).collect())
            .collect();
        let conds: Vec<String> = items.iter().map(|i| i.condition.clone()).collect();
        let report = metrics(&est, &truth, &specs, Some(&conds))?;
        let mut text = csv_line(&["target", "scope", "rho", "rmse", "nrmse_pct", "points"]);
        for t in &report.targets {
            let scopes = [("segment", Some(&t.segment)), ("condition", t.condition.as_ref())];
            for (scope, a) in scopes {
                if let Some(a) = a {
                    text.push_str(&csv_line(&[
                        t.target.to_string(),
                        scope.to_string(),
                        fmt_real(a.rho),
                        fmt_real(a.rmse),
                        fmt_real(a.nrmse_pct),
                        a.points.to_string(),
                    ]));
                    eprintln!("{} {scope}: rho {:.4} rmse {:.4} ({:.1}%)", t.target, a.rho, a.rmse, a.nrmse_pct);
                }
            }
        }
        fs::write(mpath, text)?;
    }
    Ok(())
}

fn features(weights: &Path, input: &InputArgs, out: Option<&Path>) -> Result<()> {
    let net = load_net(weights)?;
    let (_, items) = load_items(input)?;
    let mut header = vec!["source".to_string(), "offset".into(), "condition".into()];
    header.extend((0..net.head.inputs).map(|c| format!("c{c}")));
    let mut text = csv_line(&header);
    for item in &items {
        let latent = net.forward(&item.signal)?.latent;
        let mut cells = vec![item.source.clone(), item.offset.to_string(), item.condition.clone()];
        cells.extend(latent.iter().map(|&v| fmt_real(v as f64)));
        text.push_str(&csv_line(&cells));
    }
    emit(out, &text)
}

fn dcflow(weights: Option<&Path>, seed: u64, segment: usize, file: &Path, out: Option<&Path>) -> Result<()> {
    let net = match weights {
        Some(w) => load_net(w)?,
        None => WaweNet::build(ModelConfig::wawenet(1, 1)?, seed)?,
    };
    let segs = extract_segments(&wav_read(file)?)?;
    let seg = segs.into_iter().nth(segment).ok_or_else(|| {
        Error::InvalidConfig(format!("{} has no segment {segment}", file.display()))
    })?;
    let map = dc_flow(&net, &mono(seg.samples)?)?;
    emit(out, &PlotData::new(map.labels, map.values)?.to_text())
}

fn filters(weights: &Path, out: Option<&Path>) -> Result<()> {
    let census = filter_census(&load_net(weights)?);
    let mut text = csv_line(&["class", "count", "fraction"]);
    for t in FilterType::ALL {
        text.push_str(&csv_line(&[
            t.name().to_string(),
            census.counts[&t].to_string(),
            fmt_real(census.fraction(t)),
        ]));
    }
    emit(out, &text)
}

fn fingerprint(weights: &Path, manifest: &Path, split: Option<Split>, out: Option<&Path>) -> Result<()> {
    let net = load_net(weights)?;
    let m = Manifest::load(manifest)?;
    let mut groups: BTreeMap<String, Vec<ChannelSignal<f32>>> = BTreeMap::new();
    for item in manifest_items(&m, split)? {
        groups.entry(item.condition).or_default().push(item.signal);
    }
    let groups: Vec<(String, Vec<ChannelSignal<f32>>)> = groups.into_iter().collect();
    let fp = condition_fingerprint(&net, &groups)?;
    let labels = fp.conditions.iter().map(|c| c.replace(['|', '\n', '\r'], "_")).collect();
    emit(out, &PlotData::new(labels, fp.latents)?.to_text())
}

fn demo(f1: f64, f2: f64, pool: usize, out: &Path) -> Result<()> {
    let d = two_tone_demo(&TwoToneConfig {
        f1_hz: f1,
        f2_hz: f2,
        pool,
        ..TwoToneConfig::default()
    })?;
    fs::create_dir_all(out)?;
    let labels = ["freq_hz", "input", "rectified", "separate"].map(String::from).to_vec();
    let rows = vec![
        d.input.frequencies(),
        d.input.magnitude.clone(),
        d.rectified.magnitude.clone(),
        d.separate.magnitude.clone(),
    ];
    PlotData::new(labels, rows)?.save(out.join("spectra.txt"))?;
    let labels = vec!["freq_hz".to_string(), "pooled".into()];
    PlotData::new(labels, vec![d.pooled.frequencies(), d.pooled.magnitude.clone()])?.save(out.join("pooled.txt"))?;
    println!("intermod_hz,{}", fmt_real((f2 - f1).abs()));
    println!("intermod_gain_db,{}", fmt_real(d.intermod_gain_db));
    println!("rectified_dc,{}", fmt_real(d.rectified.magnitude[0]));
    println!("alias_probe_hz,{}", fmt_real(d.alias_probe_hz));
    println!("alias_image_hz,{}", fmt_real(d.alias_image_hz));
    println!("alias_attenuation_db,{}", fmt_real(d.alias_attenuation_db));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            count,
            duration,
            seed,
        } => synth(&out, count, duration, seed),
        Command::Segment {
            out,
            manifest,
            condition,
            fractions,
            seed,
            files,
        } => segment(&out, manifest, &condition, &fractions, seed, &files),
        Command::Impair {
            manifest,
            out,
            conditions,
            seed,
        } => impair(&manifest, &out, &conditions, seed),
        Command::Train {
            manifest,
            out,
            log,
            targets,
            seed,
            epochs,
            batch,
            ipa,
            threads,
            stop_at_rho,
        } => {
            let cfg = FitConfig {
                epochs,
                batch,
                seed,
                ipa,
                threads,
                stop_at_rho,
                ..FitConfig::default()
            };
            train(&manifest, &out, log.as_deref(), &targets, cfg)
        }
        Command::Evaluate {
            weights,
            targets,
            input,
            metrics,
            out,
        } => evaluate(&weights, &targets, &input, metrics.as_deref(), out.as_deref()),
        Command::Features { weights, input, out } => features(&weights, &input, out.as_deref()),
        Command::Dcflow {
            weights,
            seed,
            segment,
            out,
            file,
        } => dcflow(weights.as_deref(), seed, segment, &file, out.as_deref()),
        Command::Filters { weights, out } => filters(&weights, out.as_deref()),
        Command::Fingerprint {
            weights,
            manifest,
            split,
            out,
        } => fingerprint(&weights, &manifest, split, out.as_deref()),
        Command::DemoTwoTone { f1, f2, pool, out } => demo(f1, f2, pool, &out),
        Command::Describe { inputs, outputs } => {
            let net: WaweNet<f32> = WaweNet::build(ModelConfig::wawenet(inputs, outputs)?, 0)?;
            print!("{}", net.describe());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
