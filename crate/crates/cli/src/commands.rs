use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use kws_core::arch::{builtin, builtin_template, forward_with, BUILTIN_NAMES};
use kws_core::budget::{compare, feature_maps, fit_to_budget, report};
use kws_core::frontend::wav::{read_wav, write_feature_dump};
use kws_core::frontend::{stack_context, FRAME_SHIFT_SECONDS};
use kws_core::train::{
    clip_examples, evaluate, load_dataset_dir, make_synthetic_dataset, train_with, SyntheticSpec,
};
use kws_core::{
    ArchSpec, ContextConfig, ConvPath, DetectorConfig, FeatureWindow, FrameConfig, Frontend, KwsError, Model,
    TrainConfig,
};

use crate::{ArchArgs, Command, Format, PathArg, TrainArgs};

/// Largest relative disagreement tolerated between the two conv paths.
pub const AGREEMENT_TOLERANCE: f64 = 1e-5;
/// Distinct random windows cycled through by `bench`.
const BENCH_WINDOWS: usize = 8;

#[derive(Debug)]
pub enum CliError {
    Core(KwsError),
    Usage(String),
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<KwsError> for CliError {
    fn from(e: KwsError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Text lines go straight to stdout; structured output is collected and
/// printed as one document at the end.
struct Out {
    format: Format,
    doc: serde_json::Map<String, Value>,
}

/// Writes a line to stdout, ignoring a closed pipe.
fn emit(s: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

impl Out {
    fn line(&self, s: impl AsRef<str>) {
        if self.format == Format::Text {
            emit(s.as_ref());
        }
    }

    fn set(&mut self, key: &str, v: Value) {
        self.doc.insert(key.to_string(), v);
    }

    fn finish(self) {
        if self.format == Format::Structured {
            emit(&serde_json::to_string_pretty(&Value::Object(self.doc)).expect("json values serialize"));
        }
    }
}

pub fn parse_context(s: &str) -> std::result::Result<ContextConfig, String> {
    let (l, r) = s.split_once(',').ok_or_else(|| format!("expected LEFT,RIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(ContextConfig::new(parse(l)?, parse(r)?))
}

fn resolve_arch(name: &str, labels: usize) -> Result<ArchSpec> {
    if BUILTIN_NAMES.contains(&name) || !Path::new(name).is_file() {
        return Ok(builtin(name, labels)?);
    }
    let text = std::fs::read_to_string(name)?;
    let arch: ArchSpec = serde_json::from_str(&text)
        .map_err(|e| KwsError::UnsupportedFormat(format!("architecture file {name}: {e}")))?;
    arch.validate()?;
    Ok(arch)
}

fn group(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn run(command: Command, format: Format) -> Result<()> {
    let mut out = Out {
        format,
        doc: serde_json::Map::new(),
    };
    match command {
        Command::Featurize { input, out: path, context } => featurize(&mut out, &input, &path, context)?,
        Command::Describe(args) => describe(&mut out, &args)?,
        Command::Budget { arch, compare } => budget(&mut out, &arch, compare.as_deref())?,
        Command::Fit { arch, cap } => fit(&mut out, &arch, cap)?,
        Command::Train(args) => train(&mut out, &args)?,
        Command::Detect {
            model,
            input,
            threshold,
            w_smooth,
            w_max,
            refractory,
        } => {
            let cfg = DetectorConfig {
                w_smooth,
                w_max,
                threshold,
                refractory,
                filler: None,
            };
            detect(&mut out, &model, &input, cfg)?
        }
        Command::Bench {
            model,
            iters,
            path,
            seed,
        } => bench(&mut out, &model, iters, path, seed)?,
    }
    out.finish();
    Ok(())
}

fn frontend_header(cfg: &FrameConfig) -> String {
    format!(
        "# frontend: window {} hop {} fft {} mel {} over {}-{} Hz preemphasis {} log floor {:e}",
        cfg.window_length, cfg.hop, cfg.fft_size, cfg.mel_filters, cfg.fmin, cfg.fmax, cfg.preemphasis, cfg.log_floor
    )
}

fn featurize(out: &mut Out, input: &Path, path: &Path, context: Option<ContextConfig>) -> Result<()> {
    let wave = read_wav(input)?;
    let fe = Frontend::new(FrameConfig::default())?;
    let frames = fe.log_mel_frames(&wave)?;
    let ctx = context.unwrap_or(ContextConfig::NONE);
    let windows = stack_context(&frames, ctx)?;
    write_feature_dump(BufWriter::new(File::create(path)?), &windows)?;

    let bins = fe.config().mel_filters;
    out.line(frontend_header(fe.config()));
    out.line(format!("{} frames x {bins}", frames.len()));
    if context.is_some() {
        out.line(format!(
            "context {},{}: {} windows of {}x{bins}",
            ctx.left,
            ctx.right,
            windows.len(),
            ctx.frames()
        ));
    }
    out.line(format!("wrote {}", path.display()));
    out.set("frontend", json!(fe.config()));
    out.set("frames", json!(frames.len()));
    out.set("bins", json!(bins));
    out.set("context", json!(ctx));
    out.set("windows", json!({ "count": windows.len(), "t": ctx.frames(), "f": bins }));
    out.set("out", json!(path));
    Ok(())
}

fn describe(out: &mut Out, args: &ArchArgs) -> Result<()> {
    let arch = resolve_arch(&args.arch, args.labels)?;
    let trace = arch.validate()?;
    out.line(format!(
        "architecture {} ({} labels, context {},{})",
        arch.name,
        arch.labels(),
        arch.context.left,
        arch.context.right
    ));
    out.line(format!("{:<10} {:<8} {:>12}", "step", "kind", "output"));
    out.line(format!("{:<10} {:<8} {:>12}", "input", "", trace.input.to_string()));
    for step in &trace.steps {
        out.line(format!(
            "{:<10} {:<8} {:>12}",
            step.name,
            format!("{:?}", step.kind).to_lowercase(),
            step.output.to_string()
        ));
    }
    out.set("arch", json!(arch));
    out.set("trace", json!(trace));
    Ok(())
}

fn budget(out: &mut Out, args: &ArchArgs, other: Option<&str>) -> Result<()> {
    let arch = resolve_arch(&args.arch, args.labels)?;
    let rep = report(&arch)?;
    out.line(rep.to_string());
    out.set("report", json!(rep));
    if let Some(other) = other {
        let b = resolve_arch(other, args.labels)?;
        let cmp = compare(&arch, &b)?;
        out.line(format!("compared with {}:", b.name));
        out.line(format!("multiply ratio {}", cmp.multiply_ratio));
        out.line(format!("param ratio {}", cmp.param_ratio));
        out.set(
            "compare",
            json!({
                "arch": b.name,
                "report": report(&b)?,
                "multiply_ratio": cmp.multiply_ratio.value(),
                "param_ratio": cmp.param_ratio.value(),
            }),
        );
    }
    Ok(())
}

fn fit(out: &mut Out, args: &ArchArgs, cap: u64) -> Result<()> {
    let template = builtin_template(&args.arch, args.labels)?;
    let arch = fit_to_budget(&template, cap)?;
    let n = feature_maps(&arch).expect("templates have conv layers");
    let total = report(&arch)?.total;
    if total.params > cap {
        return Err(CliError::Numeric(format!("fitted model has {} params over cap {cap}", total.params)));
    }
    let next = report(&template.instantiate(n + 1)?)?.total.params;
    out.line(format!("{} cap {}: n = {n}", template.name(), group(cap)));
    out.line(format!("params {} multiplies {}", group(total.params), group(total.multiplies)));
    out.line(format!("n = {} would need {} params", n + 1, group(next)));
    out.set("arch", json!(arch));
    out.set("cap", json!(cap));
    out.set("n", json!(n));
    out.set("params", json!(total.params));
    out.set("multiplies", json!(total.multiplies));
    out.set("next_params", json!(next));
    Ok(())
}

fn train(out: &mut Out, args: &TrainArgs) -> Result<()> {
    let ds = match (&args.data, args.synthetic) {
        (Some(root), _) => load_dataset_dir(root)?,
        (None, Some(k)) => make_synthetic_dataset(&SyntheticSpec {
            keywords: k,
            examples_per_class: args.per_class,
            noise_level: args.noise,
            seed: args.seed,
        })?,
        (None, None) => return Err(CliError::Usage("one of --data or --synthetic is required".into())),
    };
    if args.windows == 0 {
        return Err(CliError::Usage("--windows must be positive".into()));
    }
    let arch = resolve_arch(&args.arch, ds.labels.len())?;
    if arch.labels() != ds.labels.len() {
        return Err(CliError::Usage(format!(
            "{} has {} outputs but the dataset has {} classes",
            arch.name,
            arch.labels(),
            ds.labels.len()
        )));
    }
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        init_scale: args.init_scale,
    };
    cfg.validate()?;
    let fe = Frontend::new(FrameConfig::default())?;
    let examples = clip_examples(&fe, &ds.train, arch.context, args.windows)?;

    out.line(frontend_header(fe.config()));
    out.line(format!(
        "# train: arch {} labels [{}] windows {} epochs {} lr {:?} batch {} init scale {:?} seed {}",
        arch.name,
        ds.labels.join(", "),
        examples.len(),
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.init_scale,
        cfg.seed
    ));
    let text = out.format == Format::Text;
    let trained = train_with(&arch, &examples, &cfg, |s| {
        if text {
            emit(&format!("epoch {} loss {:.6} accuracy {:.4}", s.epoch, s.loss, s.accuracy));
        }
    })?;

    let train_eval = evaluate(&arch, &trained.weights, &examples)?;
    out.line(format!("train accuracy {:.4} loss {:.6}", train_eval.accuracy, train_eval.loss));
    out.set("train_accuracy", json!(train_eval.accuracy));
    if !ds.test.is_empty() {
        let held_out = clip_examples(&fe, &ds.test, arch.context, args.windows)?;
        let test_eval = evaluate(&arch, &trained.weights, &held_out)?;
        out.line(format!("held-out accuracy {:.4} loss {:.6}", test_eval.accuracy, test_eval.loss));
        out.set("test_accuracy", json!(test_eval.accuracy));
    }

    let model = Model::new(arch, trained.weights, ds.labels.clone())?;
    let bytes = model.to_bytes()?;
    std::fs::write(&args.out, &bytes)?;
    out.line(format!("wrote {} ({} bytes)", args.out.display(), bytes.len()));

    out.set("arch", json!(model.arch.name));
    out.set("labels", json!(ds.labels));
    out.set("config", json!(cfg));
    out.set("windows", json!(examples.len()));
    out.set("history", json!(trained.history));
    out.set("out", json!(args.out));
    out.set("bytes", json!(bytes.len()));
    Ok(())
}

fn detect(out: &mut Out, model: &Path, input: &Path, cfg: DetectorConfig) -> Result<()> {
    cfg.validate()?;
    let model = Model::load(model)?;
    let wave = read_wav(input)?;
    let fe = Frontend::new(FrameConfig::default())?;
    let events = model.detect(&fe, &wave, &cfg)?;

    out.line(format!(
        "# detector: w_smooth {} w_max {} threshold {} refractory {} filler {}",
        cfg.w_smooth,
        cfg.w_max,
        cfg.threshold,
        cfg.refractory,
        model.filler_index().map_or("none", |i| model.labels[i].as_str())
    ));
    let mut listed = Vec::with_capacity(events.len());
    for e in &events {
        let seconds = e.frame_index as f64 * FRAME_SHIFT_SECONDS;
        let name = &model.labels[e.keyword];
        out.line(format!("{}\t{seconds:.2}\t{name}\t{:.4}", e.frame_index, e.confidence));
        listed.push(json!({
            "frame_index": e.frame_index,
            "seconds": seconds,
            "label": e.keyword,
            "keyword": name,
            "confidence": e.confidence,
        }));
    }
    out.line(format!("{} events", events.len()));
    out.set("detector", json!(cfg));
    out.set("labels", json!(model.labels));
    out.set("events", Value::Array(listed));
    Ok(())
}

/// Largest `|a - b| / max(|a|, |b|)` over paired posteriors.
pub fn max_relative_difference(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Errors with a numeric failure when the paths disagree beyond tolerance.
pub fn check_agreement(naive: &[Vec<f32>], optimized: &[Vec<f32>]) -> Result<f64> {
    let worst = naive
        .iter()
        .zip(optimized)
        .map(|(a, b)| max_relative_difference(a, b))
        .fold(0.0, f64::max);
    if worst > AGREEMENT_TOLERANCE {
        return Err(CliError::Numeric(format!(
            "naive and optimized paths disagree: max relative difference {worst:e} > {AGREEMENT_TOLERANCE:e}"
        )));
    }
    Ok(worst)
}

struct Timing {
    mean_ms: f64,
    median_ms: f64,
    per_second: f64,
}

fn time_path(model: &Model, windows: &[kws_core::Tensor3<f32>], iters: usize, path: ConvPath) -> Result<Timing> {
    let mut ms = Vec::with_capacity(iters);
    for i in 0..iters {
        let start = Instant::now();
        let p = forward_with(&model.arch, &model.weights, &windows[i % windows.len()], path)?;
        std::hint::black_box(p);
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / iters as f64;
    ms.sort_by(f64::total_cmp);
    let median_ms = if iters % 2 == 1 {
        ms[iters / 2]
    } else {
        (ms[iters / 2 - 1] + ms[iters / 2]) / 2.0
    };
    Ok(Timing {
        mean_ms,
        median_ms,
        per_second: if mean_ms > 0.0 { 1e3 / mean_ms } else { f64::INFINITY },
    })
}

fn bench(out: &mut Out, model: &Path, iters: usize, path: Option<PathArg>, seed: u64) -> Result<()> {
    if iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let model = Model::load(model)?;
    let (t, f) = (model.arch.input_t, model.arch.input_f);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = (0..BENCH_WINDOWS)
        .map(|_| {
            let data = (0..t * f).map(|_| rng.random_range(-10.0f32..5.0)).collect();
            Ok(FeatureWindow::new(t, f, data)?.to_tensor())
        })
        .collect::<Result<Vec<_>>>()?;

    let run_all = |p: ConvPath| -> Result<Vec<Vec<f32>>> {
        windows
            .iter()
            .map(|x| Ok(forward_with(&model.arch, &model.weights, x, p)?))
            .collect()
    };
    let worst = check_agreement(&run_all(ConvPath::Naive)?, &run_all(ConvPath::Optimized)?)?;
    out.line(format!(
        "# bench: arch {} iters {iters} windows {BENCH_WINDOWS} seed {seed}",
        model.arch.name
    ));
    out.line(format!("agreement OK (max relative difference {worst:e})"));
    out.set("arch", json!(model.arch.name));
    out.set("iters", json!(iters));
    out.set("agreement", json!({ "ok": true, "max_relative_difference": worst }));

    let paths: &[(&str, ConvPath)] = match path {
        None => &[("naive", ConvPath::Naive), ("optimized", ConvPath::Optimized)],
        Some(PathArg::Naive) => &[("naive", ConvPath::Naive)],
        Some(PathArg::Optimized) => &[("optimized", ConvPath::Optimized)],
    };
    let mut timings = serde_json::Map::new();
    let mut means = Vec::new();
    for &(name, p) in paths {
        let tm = time_path(&model, &windows, iters, p)?;
        out.line(format!(
            "{name}: mean {:.3} ms median {:.3} ms {:.1} windows/s",
            tm.mean_ms, tm.median_ms, tm.per_second
        ));
        timings.insert(
            name.to_string(),
            json!({ "mean_ms": tm.mean_ms, "median_ms": tm.median_ms, "windows_per_second": tm.per_second }),
        );
        means.push(tm.mean_ms);
    }
    if let [naive, optimized] = means[..] {
        if optimized > 0.0 {
            out.line(format!("speedup {:.2}x", naive / optimized));
            out.set("speedup", json!(naive / optimized));
        }
    }
    out.set("timings", Value::Object(timings));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_flag() {
        assert_eq!(parse_context("23,8").unwrap(), ContextConfig::CNN);
        assert_eq!(parse_context(" 25, 10").unwrap(), ContextConfig::DNN);
        assert!(parse_context("23").is_err());
        assert!(parse_context("a,1").is_err());
    }

    #[test]
    fn grouping() {
        assert_eq!(group(0), "0");
        assert_eq!(group(999), "999");
        assert_eq!(group(1000), "1,000");
        assert_eq!(group(8_133_120), "8,133,120");
    }

    #[test]
    fn disagreement_is_numeric_failure() {
        let a = vec![vec![0.5f32, 0.5]];
        let b = vec![vec![0.5f32, 0.5001]];
        let err = check_agreement(&a, &b).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert_eq!(check_agreement(&a, &a).unwrap(), 0.0);
        let c = vec![vec![0.5f32, 0.500001]];
        assert!(check_agreement(&a, &c).is_ok());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(KwsError::NotAModelFile).exit_code(), 2);
        assert_eq!(CliError::from(KwsError::InvalidConfig("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(KwsError::Diverged { epoch: 1, loss: f64::NAN }).exit_code(), 3);
    }
}
