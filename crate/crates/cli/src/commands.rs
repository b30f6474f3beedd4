use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rshaze::autograd::ParamStore;
use rshaze::data::{
    load_image, load_model, make_dataset, save_checkpoint, save_image, synthetic_pairs, write_pairs, HazePreset,
    Source, Split, SyntheticSpec,
};
use rshaze::metrics::{mean_scores, score};
use rshaze::nn::BlockKind;
use rshaze::train::{evaluate_psnr, fit, predict, Callbacks};
use rshaze::verify::{run_suite, suite};
use rshaze::{count_params, FusionKind, LogRecord, Net, NetConfig};

use crate::settings::{self, parse_size, parse_weights, seed_or_env};
use crate::{DataSource, DescribeArgs, EvalArgs, GradcheckArgs, InferArgs, SynthArgs, SynthOptions, TrainArgs};

fn preset(opts: &SynthOptions) -> Result<Option<HazePreset>> {
    opts.preset
        .as_deref()
        .map(|p| p.parse::<HazePreset>())
        .transpose()
        .context("--preset")
}

fn source(src: &DataSource, opts: &SynthOptions, size: usize, seed: u64) -> Result<Source> {
    Ok(match (&src.data, src.synthetic) {
        (Some(dir), _) => Source::Dir(dir.clone()),
        (None, Some(count)) => Source::Synthetic(SyntheticSpec {
            count,
            height: size,
            width: size,
            preset: preset(opts)?,
            seed,
        }),
        (None, None) => bail!("either --data or --synthetic is required"),
    })
}

struct RunFiles {
    dir: PathBuf,
    net: NetConfig,
    log: BufWriter<File>,
    write_error: Option<std::io::Error>,
}

impl Callbacks for RunFiles {
    fn on_record(&mut self, record: &LogRecord) {
        println!("{record}");
        if let Err(e) = writeln!(self.log, "{record}") {
            self.write_error.get_or_insert(e);
        }
    }

    fn on_checkpoint(&mut self, epoch: usize, store: &ParamStore<f32>) -> rshaze::Result<()> {
        save_checkpoint(&self.dir.join(format!("epoch-{epoch:04}.ckpt")), &self.net, store)
    }
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let (net_cfg, cfg) = settings::train_configs(a.config.as_deref(), &a.net, &a.train)?;
    let [train, val, test] = parse_weights(&a.split)?;
    let size = a.synth.size.unwrap_or(cfg.patch);
    let dataset = make_dataset(
        &source(&a.source, &a.synth, size, cfg.seed)?,
        Split { train, val, test },
    )?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let config_path = a.out.join("config.txt");
    fs::write(&config_path, settings::config_text(&net_cfg, &cfg))
        .with_context(|| format!("writing {}", config_path.display()))?;
    let log_path = a.out.join("train.log");
    let log = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;

    let (mut store, net) = Net::build::<f32>(&net_cfg, cfg.seed)?;
    println!(
        "model: {} params ({net_cfg}); pairs: {} train, {} val, {} test",
        count_params(&store),
        dataset.train().len(),
        dataset.val().len(),
        dataset.test().len()
    );
    let mut files = RunFiles {
        dir: a.out.clone(),
        net: net_cfg.clone(),
        log: BufWriter::new(log),
        write_error: None,
    };
    let start = Instant::now();
    let history = fit(&net, &mut store, dataset.train(), dataset.val(), &cfg, &mut files)?;
    files.log.flush().context("writing train.log")?;
    if let Some(e) = files.write_error {
        return Err(e).context("writing train.log");
    }

    let model_path = a.out.join("model.ckpt");
    save_checkpoint(&model_path, &net_cfg, &store)?;
    match (history.initial_loss(), history.final_loss()) {
        (Some(first), Some(last)) => println!(
            "trained {} steps in {:.1?}: loss {first:.6e} -> {last:.6e} (x{:.4})",
            history.records.len(),
            start.elapsed(),
            last / first
        ),
        _ => println!("no training steps; saved the initial weights"),
    }
    if !dataset.test().is_empty() && !history.records.is_empty() {
        println!("test_psnr={:.4}", evaluate_psnr(&net, &store, dataset.test())?);
    }
    println!("wrote {}", model_path.display());
    Ok(ExitCode::SUCCESS)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm")
    )
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            bail!("{} does not exist", input.display());
        }
    }
    if files.is_empty() {
        bail!("no input images found");
    }
    Ok(files)
}

pub fn infer(a: InferArgs) -> Result<ExitCode> {
    let (net, store) = load_model(&a.checkpoint)?;
    let files = collect_inputs(&a.inputs)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut names = HashSet::new();
    for file in files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        if !names.insert(stem.clone()) {
            bail!("two inputs would both be written as {stem}.png");
        }
        let hazy = load_image::<f32>(&file)?;
        let out = a.out.join(format!("{stem}.png"));
        save_image(&predict(&net, &store, &hazy)?, &out)?;
        println!("{} -> {}", file.display(), out.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (net, store) = load_model(&a.checkpoint)?;
    let size = a.synth.size.unwrap_or(64);
    let src = source(&a.source, &a.synth, size, seed_or_env(a.seed)?)?;
    let dataset = make_dataset(
        &src,
        Split {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        },
    )?;
    let mut all = Vec::with_capacity(dataset.len());
    println!("# id psnr ssim mse");
    for pair in &dataset.pairs {
        let s =
            score(&predict(&net, &store, &pair.hazy)?, &pair.clean).with_context(|| format!("scoring {}", pair.id))?;
        println!("{} {} {} {}", pair.id, s.psnr, s.ssim, s.mse);
        all.push(s);
    }
    let mean = mean_scores(&all).context("empty dataset")?;
    println!("mean {} {} {}", mean.psnr, mean.ssim, mean.mse);
    Ok(ExitCode::SUCCESS)
}

fn ladder(base: &NetConfig) -> Vec<(&'static str, NetConfig)> {
    let mut cfg = NetConfig {
        block: BlockKind::Fnb,
        fusion: FusionKind::Conv,
        cmim: false,
        src: false,
        ..base.clone()
    };
    let mut steps = vec![("baseline", cfg.clone())];
    cfg.fusion = FusionKind::Itfm;
    steps.push(("+itfm", cfg.clone()));
    cfg.cmim = true;
    steps.push(("+cmim", cfg.clone()));
    cfg.block = BlockKind::Mpeb;
    steps.push(("+mpeb", cfg.clone()));
    cfg.src = true;
    steps.push(("+src", cfg));
    steps
}

pub fn describe(a: DescribeArgs) -> Result<ExitCode> {
    let cfg = settings::net_config(a.config.as_deref(), &a.net)?;
    let (h, w) = parse_size(&a.input)?;
    let (store, net) = Net::build::<f32>(&cfg, 0)?;
    let report = net.describe(1, h, w)?;
    println!("# {cfg}");
    println!("# input 1x3x{h}x{w}");
    println!("{:<40} {:<10} {:>10} {:>16}", "layer", "kind", "params", "flops");
    for r in &report {
        println!("{:<40} {:<10} {:>10} {:>16}", r.name, r.kind, r.params, r.flops);
    }
    let params: usize = report.iter().map(|r| r.params).sum();
    let flops: u64 = report.iter().map(|r| r.flops).sum();
    debug_assert_eq!(params, count_params(&store));
    println!(
        "total params={params} ({:.3} M) flops={flops} ({:.2} G)",
        params as f64 / 1e6,
        flops as f64 / 1e9
    );
    if a.ladder {
        println!("{:<10} {:>10} {:>10} {:>16}", "step", "params", "delta", "flops");
        let mut prev = None;
        for (name, step) in ladder(&cfg) {
            let (s, n) = Net::build::<f32>(&step, 0)?;
            let p = count_params(&s);
            let delta = prev.map_or(String::from("-"), |q: usize| format!("{:+}", p as i64 - q as i64));
            println!("{name:<10} {p:>10} {delta:>10} {:>16}", n.count_flops(1, h, w)?);
            prev = Some(p);
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let seeds: Vec<u64> = a
        .seeds
        .split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed `{s}`")))
        .collect::<Result<_>>()?;
    let cases: Vec<_> = suite()
        .into_iter()
        .filter(|c| a.only.as_deref().is_none_or(|o| c.name.contains(o)))
        .filter(|c| !(a.skip_network && c.name == "network"))
        .collect();
    if cases.is_empty() {
        bail!("no gradient check cases selected");
    }
    let start = Instant::now();
    let outcomes = run_suite(&cases, &seeds, |o| match &o.report {
        Ok(r) => println!(
            "{} {:<28} seed={} max_rel={:.3e} coords={} refined={}",
            if o.passed(a.tolerance) { "ok  " } else { "FAIL" },
            o.case,
            o.seed,
            r.max_rel_error,
            r.coordinates,
            r.refined
        ),
        Err(e) => println!("FAIL {:<28} seed={} error: {e}", o.case, o.seed),
    });
    let failed = outcomes.iter().filter(|o| !o.passed(a.tolerance)).count();
    println!(
        "{} checks, {failed} failed, tolerance {:e}, {:.1?}",
        outcomes.len(),
        a.tolerance,
        start.elapsed()
    );
    if failed > 0 {
        eprintln!(
            "error: {failed} of {} gradient checks exceeded {:e}",
            outcomes.len(),
            a.tolerance
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let size = a.synth.size.unwrap_or(64);
    let spec = SyntheticSpec {
        count: a.count,
        height: size,
        width: size,
        preset: preset(&a.synth)?,
        seed: seed_or_env(a.seed)?,
    };
    let pairs = synthetic_pairs(&spec)?;
    write_pairs(&a.out, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
