//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line each and exits nonzero if any failed. Criterion numbers
//! given as arguments select a subset.

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wawenet::analysis::{classify_filter, dc_flow, filter_census, two_tone_demo, FilterType, TwoToneConfig};
use wawenet::dsp::{self, ChannelSignal, FilterKernel, NormMode, NormParams};
use wawenet::impairment::{make_corpus_sources, Condition};
use wawenet::io::{load_weights, save_weights};
use wawenet::model::{ModelConfig, SectionKind, WaweNet, CHANNELS, INPUT_LEN};
use wawenet::preprocess::{
    active_level, extract_segments, normalize_level, SegmentRecord, PESQ, QUALITY_TARGETS, SIIB_GAUSS,
};
use wawenet::synth::{tone, SpeechLike};
use wawenet::trainer::{fit, loss_and_grad, metrics, pearson, predict, Dataset, FitConfig, TrainGraph};
use wawenet::Waveform;

// criterion 1
const PARAMS_NR: usize = 335_905;
const PARAMS_11_TARGETS: usize = 336_875;
const PARAMS_DUAL_INPUT: usize = 336_193;
const PARAM_COUNT_BUDGET: Duration = Duration::from_secs(1);
// criterion 2
const TABLE_L_OUT: [usize; 13] = [12_000, 6_000, 3_000, 750, 375, 188, 94, 47, 24, 12, 6, 3, 1];
const SHAPE_TRACE_INPUTS: usize = 100;
const SHAPE_TRACE_BUDGET: Duration = Duration::from_secs(10);
// criteria 3 and 4
const POOL_SIGNALS: usize = 1000;
const POOL_ULPS: u64 = 1;
const DC_TOL: f64 = 1e-6;
// criterion 5
const HWR_SAMPLES: usize = 48_000;
const HWR_DC_TOL: f64 = 1e-3;
// criterion 6
const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-4;
const FD_ABS_FLOOR: f64 = 1e-8;
const FD_BUDGET: Duration = Duration::from_secs(120);
// criterion 7
const CLEAN_SEGMENTS: usize = 500;
const SNR_CONDITIONS: [&str; 4] = ["noise:0", "noise:10", "noise:20", "noise:30"];
const TRAIN_PERCENT: usize = 50;
const VAL_PERCENT: usize = 10;
const MAX_EPOCHS: usize = 30;
const TARGET_RHO: f64 = 0.90;
// validation correlation at which training stops early
const STOP_RHO: f64 = 0.93;
const TRAINING_BUDGET: Duration = Duration::from_secs(60 * 60);
// room left for the last epoch started inside the budget
const EPOCH_ALLOWANCE: Duration = Duration::from_secs(12 * 60);
// criterion 8
const LOGGED_EPOCHS: usize = 3;
// criterion 9
const LEVEL_FILES: usize = 100;
const LEVEL_TOL_DB: f64 = 0.2;
const TARGET_DBOV: f64 = -26.0;
const STATIONARY_MIN_SAF: f64 = 0.99;
// criterion 10
const SCALING_VALUES: usize = 10_000;
const SCALING_TOL: f64 = 1e-9;
// criterion 12
const DECOMPOSED_SEGMENTS: usize = 100;
const LATENT_TOL: f64 = 1e-5;
const DC_FLOW_ROWS: usize = 79;
const INTERMOD_MIN_DB: f64 = 40.0;
const ALIAS_DB: f64 = 3.0;
const ALIAS_TOL_DB: f64 = 0.5;
// criterion 13
const CENSUS_SUM_TOL: f64 = 1e-12;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn speech(seed: u64) -> Waveform {
    SpeechLike::default().generate(seed).expect("synthetic speech")
}

fn speech_segment(seed: u64) -> SegmentRecord {
    extract_segments(&speech(seed)).expect("segment").remove(0)
}

fn c1_parameter_count() -> Check {
    let t = Instant::now();
    let closed_form = |inputs: usize, outputs: usize| {
        let f = CHANNELS;
        let first = inputs * f * 3 + f;
        let rest = 12 * (f * f * 3 + f);
        let norm = 13 * 2 * f;
        first + rest + norm + outputs * f + outputs
    };
    let mut parts = Vec::new();
    for (inputs, outputs, expected) in [(1, 1, PARAMS_NR), (1, 11, PARAMS_11_TARGETS), (2, 1, PARAMS_DUAL_INPUT)] {
        let net: WaweNet<f32> = WaweNet::build(ModelConfig::wawenet(inputs, outputs).unwrap(), 0).unwrap();
        let reported = net.param_count();
        ensure(
            reported == expected && net.config().param_count() == expected && closed_form(inputs, outputs) == expected,
            || format!("{inputs} input(s), {outputs} target(s): {reported} parameters, expected {expected}"),
        )?;
        parts.push(reported.to_string());
    }
    let elapsed = t.elapsed();
    ensure(elapsed < PARAM_COUNT_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {elapsed:.2?}", parts.join(" / ")))
}

fn c2_shape_trace() -> Check {
    let t = Instant::now();
    let net: WaweNet<f32> = WaweNet::build(ModelConfig::wawenet(1, 1).unwrap(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..SHAPE_TRACE_INPUTS {
        let x = ChannelSignal::mono((0..INPUT_LEN).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let lengths = net.forward(&x).unwrap().section_lengths;
        ensure(lengths == TABLE_L_OUT, || format!("input {i}: lengths {lengths:?}"))?;
    }
    let elapsed = t.elapsed();
    ensure(elapsed < SHAPE_TRACE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{SHAPE_TRACE_INPUTS} inputs match all 13 sections in {elapsed:.2?}"))
}

fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |v: f64| {
        let bits = v.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

fn random_pool_signal(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let blocks = rng.gen_range(1..200);
    (0..blocks * m).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn c3_pooling_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0;
    for i in 0..POOL_SIGNALS {
        let m = [2, 3, 4][i % 3];
        let x = random_pool_signal(&mut rng, m);
        let integrated = dsp::avg_pool(&x, m).unwrap();
        let conventional = dsp::subsample(&dsp::pool_filter(&x, m).unwrap(), m, m - 1).unwrap();
        ensure(integrated.len() == conventional.len(), || format!("signal {i}: lengths differ"))?;
        for (a, b) in integrated.iter().zip(&conventional) {
            worst = worst.max(ulps(*a, *b));
        }
    }
    ensure(worst <= POOL_ULPS, || format!("worst deviation {worst} ulp"))?;
    Ok(format!("{POOL_SIGNALS} signals, worst deviation {worst} ulp"))
}

fn c4_dc_preservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for m in [2, 3, 4] {
        for _ in 0..POOL_SIGNALS {
            let x = random_pool_signal(&mut rng, m);
            let y = dsp::avg_pool(&x, m).unwrap();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            worst = worst.max((mean(&y) - mean(&x)).abs());
        }
    }
    ensure(worst <= DC_TOL, || format!("worst DC shift {worst:e}"))?;
    Ok(format!("m = 2, 3, 4 x {POOL_SIGNALS} signals, worst DC shift {worst:.1e}"))
}

fn c5_hwr_dc() -> Check {
    // 100 Hz at 16 kHz: 300 whole periods
    let x: Vec<f64> = tone(100.0, 1.0, HWR_SAMPLES).into_iter().map(f64::from).collect();
    let y = dsp::hwr(&x);
    let dc = y.iter().sum::<f64>() / y.len() as f64;
    let err = (dc - 1.0 / PI).abs();
    ensure(err <= HWR_DC_TOL, || format!("mean {dc}, 1/pi = {}", 1.0 / PI))?;
    Ok(format!("mean {dc:.6} vs 1/pi {:.6} (error {err:.1e})", 1.0 / PI))
}

/// Central-difference check of `analytic` against `loss` over `params`.
fn fd_check(name: &str, params: &[f64], analytic: &[f64], loss: &dyn Fn(&[f64]) -> f64) -> Result<f64, String> {
    ensure(params.len() == analytic.len(), || format!("{name}: gradient length"))?;
    let mut worst = 0.0f64;
    let mut p = params.to_vec();
    for i in 0..params.len() {
        p[i] = params[i] + FD_STEP;
        let up = loss(&p);
        p[i] = params[i] - FD_STEP;
        let down = loss(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = (analytic[i] - numeric).abs();
        let scale = analytic[i].abs().max(numeric.abs());
        ensure(err <= FD_REL_TOL * scale || err <= FD_ABS_FLOOR, || {
            format!("{name}[{i}]: analytic {:e}, numeric {numeric:e}", analytic[i])
        })?;
        if scale > FD_ABS_FLOOR {
            worst = worst.max(err / scale);
        }
    }
    Ok(worst)
}

fn weights_for(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn c6_gradients() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut track = |r: Result<f64, String>| -> Result<(), String> {
        worst = worst.max(r?);
        Ok(())
    };
    let n = 17;
    let x = weights_for(n, &mut rng);
    let r = weights_for(n, &mut rng);

    // three-tap filter: input, taps and offset
    let k = FilterKernel::new(0.3, -0.7, 0.5, 0.1);
    let (gx, gk) = dsp::fir_filter_backward(&x, &k, &r).unwrap();
    track(fd_check("fir input", &x, &gx, &|v| dot(&dsp::fir_filter(v, &k).unwrap(), &r)))?;
    let kp = [k.taps[0], k.taps[1], k.taps[2], k.offset];
    let gkp = [gk.taps[0], gk.taps[1], gk.taps[2], gk.offset];
    track(fd_check("fir kernel", &kp, &gkp, &|p| {
        dot(&dsp::fir_filter(&x, &FilterKernel::new(p[0], p[1], p[2], p[3])).unwrap(), &r)
    }))?;

    // gain and bias
    let (a, b) = (1.3, -0.2);
    let (gx, ga, gb) = dsp::gain_bias_backward(&x, a, &r).unwrap();
    track(fd_check("gain/bias input", &x, &gx, &|v| dot(&dsp::apply_gain_bias(v, a, b), &r)))?;
    track(fd_check("gain/bias params", &[a, b], &[ga, gb], &|p| dot(&dsp::apply_gain_bias(&x, p[0], p[1]), &r)))?;

    // rectifier, away from the kink
    let xr: Vec<f64> = x.iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect();
    let g = dsp::hwr_backward(&xr, &r).unwrap();
    track(fd_check("hwr", &xr, &g, &|v| dot(&dsp::hwr(v), &r)))?;

    // average pooling
    let xp = weights_for(18, &mut rng);
    let rp = weights_for(6, &mut rng);
    let g = dsp::avg_pool_backward(&rp, 3).unwrap();
    track(fd_check("avg_pool", &xp, &g, &|v| dot(&dsp::avg_pool(v, 3).unwrap(), &rp)))?;

    // dense map
    let v = weights_for(5, &mut rng);
    let w = weights_for(10, &mut rng);
    let c = weights_for(2, &mut rng);
    let rd = weights_for(2, &mut rng);
    let g = dsp::dense_backward(&v, &w, &rd).unwrap();
    track(fd_check("dense input", &v, &g.input, &|p| dot(&dsp::dense_map(p, &w, &c).unwrap(), &rd)))?;
    track(fd_check("dense weights", &w, &g.weights, &|p| dot(&dsp::dense_map(&v, p, &c).unwrap(), &rd)))?;
    track(fd_check("dense offsets", &c, &g.offsets, &|p| dot(&dsp::dense_map(&v, &w, p).unwrap(), &rd)))?;

    // multi-channel convolution
    let cw = dsp::ConvWeights {
        in_channels: 2,
        out_channels: 3,
        weights: weights_for(18, &mut rng),
        offsets: weights_for(3, &mut rng),
    };
    let xc = ChannelSignal::new(2, 9, weights_for(18, &mut rng)).unwrap();
    let rc = ChannelSignal::new(3, 9, weights_for(27, &mut rng)).unwrap();
    let (gx, gw) = dsp::conv_backward(&cw, &xc, &rc).unwrap();
    let conv_loss = |w: &dsp::ConvWeights<f64>, x: &ChannelSignal<f64>| {
        dot(dsp::conv(w, x).unwrap().as_slice(), rc.as_slice())
    };
    track(fd_check("conv input", xc.as_slice(), gx.as_slice(), &|p| {
        conv_loss(&cw, &ChannelSignal::new(2, 9, p.to_vec()).unwrap())
    }))?;
    track(fd_check("conv weights", &cw.weights, &gw.weights, &|p| {
        conv_loss(&dsp::ConvWeights { weights: p.to_vec(), ..cw.clone() }, &xc)
    }))?;
    track(fd_check("conv offsets", &cw.offsets, &gw.offsets, &|p| {
        conv_loss(&dsp::ConvWeights { offsets: p.to_vec(), ..cw.clone() }, &xc)
    }))?;

    // batch normalization, both modes
    let batch: Vec<ChannelSignal<f64>> =
        (0..3).map(|_| ChannelSignal::new(2, 7, weights_for(14, &mut rng)).unwrap()).collect();
    let rb: Vec<ChannelSignal<f64>> =
        (0..3).map(|_| ChannelSignal::new(2, 7, weights_for(14, &mut rng)).unwrap()).collect();
    let mut params = NormParams::identity(2, 1e-5, 0.1);
    params.gamma = vec![1.2, 0.7];
    params.beta = vec![0.1, -0.3];
    params.running_mean = vec![0.05, -0.1];
    params.running_var = vec![0.8, 1.4];
    let flat = |b: &[ChannelSignal<f64>]| b.iter().flat_map(|s| s.as_slice().to_vec()).collect::<Vec<f64>>();
    let unflat = |p: &[f64]| p.chunks(14).map(|c| ChannelSignal::new(2, 7, c.to_vec()).unwrap()).collect::<Vec<_>>();
    for mode in [NormMode::Train, NormMode::Eval] {
        let bn_loss = |b: &[ChannelSignal<f64>], prm: &NormParams<f64>| {
            let (y, _) = dsp::batch_norm(b, &mut prm.clone(), mode).unwrap();
            dot(&flat(&y), &flat(&rb))
        };
        let (_, cache) = dsp::batch_norm(&batch, &mut params.clone(), mode).unwrap();
        let g = dsp::batch_norm_backward(&batch, &params, mode, cache.as_ref(), &rb).unwrap();
        track(fd_check(&format!("norm input {mode:?}"), &flat(&batch), &flat(&g.input), &|p| {
            bn_loss(&unflat(p), &params)
        }))?;
        track(fd_check(&format!("norm gamma {mode:?}"), &params.gamma, &g.gamma, &|p| {
            bn_loss(&batch, &NormParams { gamma: p.to_vec(), ..params.clone() })
        }))?;
        track(fd_check(&format!("norm beta {mode:?}"), &params.beta, &g.beta, &|p| {
            bn_loss(&batch, &NormParams { beta: p.to_vec(), ..params.clone() })
        }))?;
    }

    // composed miniature network with loss and penalty
    let layout = [(SectionKind::PConvA, 4), (SectionKind::ConvA, 4), (SectionKind::ConvA, 3)];
    let mut net: WaweNet<f64> = WaweNet::build(ModelConfig::custom(1, 6, 2, 47, &layout).unwrap(), 6).unwrap();
    for s in &mut net.sections {
        for ch in 0..6 {
            s.norm.gamma[ch] = rng.gen_range(0.5..1.5);
            s.norm.beta[ch] = rng.gen_range(-0.3..0.3);
            s.conv.offsets[ch] = rng.gen_range(-0.1..0.1);
        }
    }
    let inputs: Vec<ChannelSignal<f64>> =
        (0..3).map(|_| ChannelSignal::mono(weights_for(47, &mut rng)).unwrap()).collect();
    let targets: Vec<Vec<f64>> = (0..3).map(|_| weights_for(2, &mut rng)).collect();
    let l2 = 1e-2;
    let grad = loss_and_grad(&mut net.clone(), &inputs, &targets, l2).unwrap().gradient;
    let tensors = net.param_tensors().len();
    for ti in 0..tensors {
        let base: Vec<f64> = net.param_tensors()[ti].1.to_vec();
        track(fd_check(&format!("net tensor {ti}"), &base, &grad.tensors[ti], &|p| {
            let mut n = net.clone();
            n.param_tensors_mut()[ti].1.copy_from_slice(p);
            loss_and_grad(&mut n, &inputs, &targets, l2).unwrap().loss
        }))?;
    }
    let elapsed = t.elapsed();
    ensure(elapsed < FD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("primitives and miniature net within tolerance, worst relative error {worst:.1e} in {elapsed:.1?}"))
}

fn c7_training() -> Check {
    let t = Instant::now();
    let gen = SpeechLike::default();
    let clean: Vec<SegmentRecord> = (0..CLEAN_SEGMENTS as u64)
        .map(|s| extract_segments(&gen.generate(1000 + s).unwrap()).unwrap().remove(0))
        .collect();
    let conditions: Vec<Condition> = SNR_CONDITIONS.iter().map(|c| Condition::parse(c).unwrap()).collect();
    let corpus = make_corpus_sources(&clean, &conditions, 7).unwrap();
    ensure(corpus.len() == CLEAN_SEGMENTS * SNR_CONDITIONS.len(), || format!("corpus has {} items", corpus.len()))?;
    // split by clean source so held-out items come from unseen material
    let split = |lo: usize, hi: usize| {
        let rows = corpus.iter().filter(|(src, _)| (lo..hi).contains(&(src * 100 / CLEAN_SEGMENTS))).map(|(_, r)| r);
        Dataset::<f32>::from_records(rows, &[0]).unwrap()
    };
    let train = split(0, TRAIN_PERCENT);
    let val = split(TRAIN_PERCENT, TRAIN_PERCENT + VAL_PERCENT);
    let test = split(TRAIN_PERCENT + VAL_PERCENT, 100);

    let mut net: WaweNet<f32> = WaweNet::build(ModelConfig::wawenet(1, 1).unwrap(), 7).unwrap();
    let cfg = FitConfig {
        epochs: MAX_EPOCHS,
        seed: 7,
        stop_at_rho: Some(STOP_RHO),
        time_budget: Some((TRAINING_BUDGET - EPOCH_ALLOWANCE).saturating_sub(t.elapsed())),
        ..FitConfig::default()
    };
    let state = fit(&mut net, &train, &val, &cfg, &mut |r| {
        println!(
            "      epoch {:>2}: train rmse {:.4}, val rmse {:.4}, val rho {:.4} ({:.0?})",
            r.epoch,
            r.train_rmse,
            r.val_rmse,
            r.val_rho[0],
            t.elapsed()
        );
    })
    .unwrap();
    let est: Vec<f64> = predict(&net, &test.inputs).unwrap().into_iter().map(|r| r[0]).collect();
    let truth: Vec<f64> = test.targets.iter().map(|r| r[0]).collect();
    let rho = pearson(&est, &truth).unwrap();
    let elapsed = t.elapsed();
    let summary = format!(
        "held-out rho {rho:.4} on {} segments after {} epochs, {:.1} min ({} train / {} val)",
        test.len(),
        state.epoch,
        elapsed.as_secs_f64() / 60.0,
        train.len(),
        val.len()
    );
    ensure(rho >= TARGET_RHO && state.epoch <= MAX_EPOCHS && elapsed <= TRAINING_BUDGET, || summary.clone())?;
    Ok(summary)
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wawenet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("wawenet {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn c8_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    cli(&["synth", "--out", &p("raw"), "--count", "8", "--duration", "3.5", "--seed", "8"])?;
    let mut files: Vec<String> = fs::read_dir(dir.path().join("raw"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let segments = p("clean_segments");
    let mut args = vec!["segment", "--out", &segments];
    let file_refs: Vec<&str> = files.iter().map(String::as_str).collect();
    args.extend(&file_refs);
    cli(&args)?;
    let clean_manifest = p("clean_segments/manifest.csv");
    cli(&["impair", "--manifest", &clean_manifest, "--out", &p("corpus"), "--conditions", "noise:0,noise:25"])?;
    let corpus = p("corpus/manifest.csv");
    let epochs = LOGGED_EPOCHS.to_string();
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let log = p(&format!("{run}.csv"));
        let weights = p(&format!("{run}.bin"));
        cli(&[
            "train", "--manifest", &corpus, "--seed", "7", "--epochs", &epochs, "--threads", "1", "--out", &weights,
            "--log", &log,
        ])?;
        logs.push(fs::read(&log).map_err(|e| e.to_string())?);
    }
    let lines = String::from_utf8_lossy(&logs[0]).lines().count();
    ensure(lines == LOGGED_EPOCHS + 1, || format!("log has {lines} lines"))?;
    ensure(logs[0] == logs[1], || "epoch logs differ".into())?;
    let w = [fs::read(p("a.bin")).unwrap(), fs::read(p("b.bin")).unwrap()];
    ensure(w[0] == w[1], || "weight files differ".into())?;
    Ok(format!("{LOGGED_EPOCHS} logged epochs and weight files bit-identical across two runs"))
}

fn c9_level_pipeline() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..LEVEL_FILES as u64 {
        let x = speech(9000 + seed);
        let mut scaled = x.clone();
        let g = 10f64.powf(ChaCha8Rng::seed_from_u64(seed).gen_range(-20.0..10.0) / 20.0) as f32;
        scaled.samples.iter_mut().for_each(|v| *v *= g);
        let y = normalize_level(&scaled, TARGET_DBOV).map_err(|e| e.to_string())?.waveform;
        let level = active_level(&y.samples, y.sample_rate).map_err(|e| e.to_string())?.active_level_dbov;
        worst = worst.max((level - TARGET_DBOV).abs());
    }
    ensure(worst <= LEVEL_TOL_DB, || format!("worst re-measured deviation {worst:.3} dB"))?;

    let mut worst_stationary = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut signals: Vec<Vec<f32>> = Vec::new();
    for amp in [0.03, 0.1, 0.5] {
        signals.push(tone(440.0, amp, 48_000));
        signals.push((0..48_000).map(|_| rng.gen_range(-amp as f32..amp as f32)).collect());
    }
    for s in &signals {
        let rms_db = 10.0 * (s.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / s.len() as f64).log10();
        let r = active_level(s, 16_000).map_err(|e| e.to_string())?;
        worst_stationary = worst_stationary.max((r.active_level_dbov - rms_db).abs());
        ensure(r.saf >= STATIONARY_MIN_SAF, || format!("stationary signal activity {:.3}", r.saf))?;
    }
    ensure(worst_stationary <= LEVEL_TOL_DB, || {
        format!("stationary signals: active level deviates {worst_stationary:.3} dB from RMS")
    })?;
    Ok(format!(
        "{LEVEL_FILES} files within {worst:.3} dB of {TARGET_DBOV} dBov; stationary signals within {worst_stationary:.3} dB of RMS"
    ))
}

fn c10_target_scaling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for spec in QUALITY_TARGETS {
        for _ in 0..SCALING_VALUES {
            let v = rng.gen_range(spec.lo..=spec.hi);
            let back = spec.from_unit(spec.to_unit(v).map_err(|e| e.to_string())?);
            worst = worst.max((back - v).abs());
        }
    }
    ensure(worst <= SCALING_TOL, || format!("worst roundtrip error {worst:e}"))?;
    let ends = (PESQ.to_unit(PESQ.lo).unwrap(), PESQ.to_unit(PESQ.hi).unwrap());
    ensure(ends == (-1.0, 1.0), || format!("PESQ endpoints map to {ends:?}"))?;
    Ok(format!("9 scales x {SCALING_VALUES} values, worst roundtrip error {worst:.1e}; PESQ endpoints exact"))
}

fn c11_normalized_rmse() -> Check {
    let mut out = Vec::new();
    for (spec, err, expected) in [(PESQ, 0.31, "7.8"), (SIIB_GAUSS, 35.1, "4.7")] {
        let mid = (spec.lo + spec.hi) / 2.0;
        let truth: Vec<Vec<f64>> = (0..10).map(|i| vec![mid + 0.01 * spec.width() * i as f64]).collect();
        let est: Vec<Vec<f64>> =
            truth.iter().enumerate().map(|(i, t)| vec![t[0] + if i % 2 == 0 { err } else { -err }]).collect();
        let report = metrics(&est, &truth, &[spec], None).map_err(|e| e.to_string())?;
        let a = &report.targets[0].segment;
        let printed = format!("{:.1}", a.nrmse_pct);
        ensure((a.rmse - err).abs() < 1e-9 && printed == expected, || {
            format!("{}: rmse {} gives {printed}%, expected {expected}%", spec.name, a.rmse)
        })?;
        out.push(format!("{} {err} -> {printed}%", spec.name));
    }
    Ok(out.join(", "))
}

/// A standard network whose running statistics come from real data.
fn calibrated_net() -> WaweNet<f32> {
    let mut net: WaweNet<f32> = WaweNet::build(ModelConfig::wawenet(1, 1).unwrap(), 12).unwrap();
    let inputs: Vec<ChannelSignal<f32>> =
        (0..4).map(|s| ChannelSignal::mono(speech_segment(1200 + s).samples).unwrap()).collect();
    for s in &mut net.sections {
        s.norm.momentum = 1.0;
    }
    net.set_mode(NormMode::Train);
    TrainGraph::forward(&mut net, &inputs).unwrap();
    net.set_mode(NormMode::Eval);
    for s in &mut net.sections {
        s.norm.momentum = 0.1;
    }
    net
}

fn c12_decomposition() -> Check {
    let net = calibrated_net();
    let mut worst = 0.0f64;
    for s in 0..DECOMPOSED_SEGMENTS as u64 {
        let x = ChannelSignal::mono(speech_segment(1300 + s).samples).unwrap();
        let map = dc_flow(&net, &x).map_err(|e| e.to_string())?;
        let latent = net.forward(&x).unwrap().latent;
        for (a, b) in map.latent.iter().zip(&latent) {
            worst = worst.max((a - *b as f64).abs());
        }
    }
    ensure(worst <= LATENT_TOL, || format!("latent deviation {worst:e}"))?;

    // zero-mean input built from 16-bit sample values so the mean is exact
    let mut q: Vec<i64> = speech_segment(1299).samples.iter().map(|v| (v * 32768.0).round() as i64).collect();
    let mean = q.iter().sum::<i64>() / q.len() as i64;
    q.iter_mut().for_each(|v| *v -= mean);
    let rest: i64 = q[1..].iter().sum();
    q[0] = -rest;
    let x = ChannelSignal::mono(q.iter().map(|&v| v as f32 / 32768.0).collect()).unwrap();
    let map = dc_flow(&net, &x).map_err(|e| e.to_string())?;
    ensure(map.rows() == DC_FLOW_ROWS && map.cols() == CHANNELS, || {
        format!("map is {} x {}", map.rows(), map.cols())
    })?;
    ensure(map.values[0].iter().all(|&v| v == 0.0), || "input row not all zero".into())?;

    let demo = two_tone_demo(&TwoToneConfig::default()).map_err(|e| e.to_string())?;
    ensure(demo.intermod_gain_db >= INTERMOD_MIN_DB, || {
        format!("intermodulation only {:.1} dB above baseline", demo.intermod_gain_db)
    })?;
    ensure((demo.alias_attenuation_db - ALIAS_DB).abs() <= ALIAS_TOL_DB, || {
        format!("alias attenuation {:.2} dB", demo.alias_attenuation_db)
    })?;
    Ok(format!(
        "{DECOMPOSED_SEGMENTS} segments, latent deviation {worst:.1e}; map {}x{} with zero input row; intermodulation +{:.0} dB; alias at {:.0} Hz attenuated {:.2} dB",
        map.rows(),
        map.cols(),
        demo.intermod_gain_db,
        demo.alias_probe_hz,
        demo.alias_attenuation_db
    ))
}

fn c13_filter_classes() -> Check {
    let cases = [
        ([1.0, 2.0, 1.0], FilterType::Lowpass),
        ([1.0, -2.0, 1.0], FilterType::Highpass),
        ([1.0, 0.0, -1.0], FilterType::Bandpass),
        ([1.0, 0.0, 1.0], FilterType::Bandstop),
    ];
    for (taps, expected) in cases {
        let got = classify_filter(&FilterKernel::<f64>::without_offset(taps)).map_err(|e| e.to_string())?.class;
        ensure(got == expected, || format!("{taps:?} classified as {got}"))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("net.bin");
    save_weights(&path, &calibrated_net()).map_err(|e| e.to_string())?;
    let census = filter_census(&load_weights::<f32>(&path).map_err(|e| e.to_string())?);
    let sum: f64 = census.fractions().iter().map(|(_, f)| f).sum();
    ensure((sum - 1.0).abs() <= CENSUS_SUM_TOL, || format!("census fractions sum to {sum}"))?;
    let parts: Vec<String> = census.fractions().iter().map(|(t, f)| format!("{t} {:.1}%", 100.0 * f)).collect();
    Ok(format!("canonical kernels correct; census of {} kernels: {}", census.total, parts.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 13] = [
        ("parameter count", c1_parameter_count),
        ("shape trace", c2_shape_trace),
        ("pooling equivalence", c3_pooling_equivalence),
        ("DC preservation", c4_dc_preservation),
        ("rectifier DC", c5_hwr_dc),
        ("gradient correctness", c6_gradients),
        ("desk-scale training", c7_training),
        ("determinism", c8_determinism),
        ("level pipeline", c9_level_pipeline),
        ("target scaling", c10_target_scaling),
        ("normalized RMSE", c11_normalized_rmse),
        ("signal-processing decomposition", c12_decomposition),
        ("filter classifier", c13_filter_classes),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
