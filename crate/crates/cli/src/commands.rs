use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use difusion::data::{self, make_phantom, phantom_masks, pgm, simulate_noise, NoiseMode, Volume4D};
use difusion::metrics::{evaluate, residual, MeanStd, MetricReport};
use difusion::model::{train_with, Checkpoint};
use difusion::sampler::denoise_volume;
use difusion::Error;

use crate::config::RunConfig;
use crate::{Common, Mode};

const DATA_RANGE: f64 = 2.0;
const LOSS_WINDOW: usize = 100;

fn parse_size(size: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<&str> = size.split('x').collect();
    let dims: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match dims.as_deref() {
        Some(&[w, h, d, l]) => Ok((w, h, d, l)),
        _ => Err(Error::Config(format!("--size must look like WxHxDxL, got {size:?}")).into()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(common: &Common, out: &Path, size: &str, stds: &[f64], mode: Mode) -> Result<()> {
    let (w, h, d, l) = parse_size(size)?;
    if stds.is_empty() {
        return Err(Error::Config("--noise-std needs at least one value".into()).into());
    }
    let (cfg, _) = RunConfig::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let mode = match mode {
        Mode::Image => NoiseMode::ImageGaussian,
        Mode::Kspace => NoiseMode::KspaceComplex,
    };
    let clean = make_phantom(w, h, d, l, seed)?;
    let noisy = stds
        .iter()
        .enumerate()
        .map(|(k, &std)| simulate_noise(&clean, std, mode, seed.wrapping_add(1 + k as u64)))
        .collect::<difusion::Result<Vec<_>>>()?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    data::save(&clean, out.join("clean.dfv"))?;
    for sim in &noisy {
        let path = out.join(format!("noisy_{}.dfv", sim.noise_std));
        data::save(&sim.noisy, &path)?;
        println!("wrote {}", path.display());
    }
    println!("wrote {}", out.join("clean.dfv").display());
    Ok(())
}

pub fn train(
    common: &Common,
    input: &Path,
    out: &Path,
    steps: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    loss_log: Option<PathBuf>,
) -> Result<()> {
    let (cfg, _) = RunConfig::load(common.config.as_deref())?;
    let mut cfg = cfg.with_seed(common.seed);
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    if let Some(lr) = lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = batch_size {
        cfg.train.batch_size = b;
    }
    let sched = cfg.validate()?;
    let volume = data::load(input).with_context(|| format!("loading {}", input.display()))?;

    let total = cfg.train.steps;
    let every = (total / 10).max(1);
    let report = train_with(&volume, &cfg.train, &sched, |step, loss| {
        if (step + 1) % every == 0 || step + 1 == total {
            eprintln!("step {:>6}/{total}  loss {loss:.6}", step + 1);
        }
    })?;

    let checkpoint = Checkpoint {
        params: report.params.clone(),
        step: total as u64,
        seed: cfg.train.seed,
    };
    checkpoint.save(out)?;
    let log_path = loss_log.unwrap_or_else(|| with_suffix(out, ".loss.csv"));
    let mut log = String::from("step,loss,running_loss\n");
    for (k, (loss, running)) in report.losses.iter().zip(report.running_loss(LOSS_WINDOW)).enumerate() {
        log.push_str(&format!("{},{loss:.9},{running:.9}\n", k + 1));
    }
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    println!("wrote {} ({} parameters)", out.display(), checkpoint.params.len());
    println!("wrote {}", log_path.display());
    Ok(())
}

pub struct SamplerOverrides {
    pub csnr: Option<f64>,
    pub tr: Option<usize>,
    pub p: Option<usize>,
    pub eta: Option<f64>,
}

pub fn denoise(
    common: &Common,
    input: &Path,
    checkpoint: &Path,
    out: &Path,
    overrides: SamplerOverrides,
    preview: Option<PathBuf>,
    traces: Option<PathBuf>,
) -> Result<()> {
    let (cfg, from_file) = RunConfig::load(common.config.as_deref())?;
    let mut cfg = cfg.with_seed(common.seed);
    let s = &mut cfg.sampler;
    s.csnr = overrides.csnr.unwrap_or(s.csnr);
    s.t_r = overrides.tr.unwrap_or(s.t_r);
    s.p = overrides.p.unwrap_or(s.p);
    s.eta = overrides.eta.unwrap_or(s.eta);
    let sched = cfg.validate()?;

    let ck = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    if from_file && ck.params.arch() != cfg.train.arch {
        return Err(Error::Config(format!(
            "checkpoint architecture {:?} does not match configured {:?}",
            ck.params.arch(),
            cfg.train.arch
        ))
        .into());
    }
    let volume = data::load(input).with_context(|| format!("loading {}", input.display()))?;
    let (denoised, slice_traces) = denoise_volume(&volume, &ck.params, &cfg.sampler, &sched)?;

    data::save(&denoised, out)?;
    let trace_path = traces.unwrap_or_else(|| with_suffix(out, ".traces.json"));
    write_json(&trace_path, &slice_traces)?;

    if let Some(dir) = preview {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let i = volume.slices() / 2;
        for j in 0..volume.volumes() {
            let noisy = volume.slice(i, j)?;
            let clean = denoised.slice(i, j)?;
            pgm::write_normalized(&noisy, dir.join(format!("input_v{j}_s{i}.pgm")))?;
            pgm::write_normalized(&clean, dir.join(format!("output_v{j}_s{i}.pgm")))?;
            pgm::write_self_scaled(&residual(&noisy, &clean)?, dir.join(format!("residual_v{j}_s{i}.pgm")))?;
        }
    }

    let steps: Vec<usize> = slice_traces.iter().map(|t| t.steps_executed).collect();
    let early = slice_traces.iter().filter(|t| t.terminated_early).count();
    println!(
        "denoised {} slices: mean steps {:.1}, min {}, max {}, {early} terminated early",
        steps.len(),
        steps.iter().sum::<usize>() as f64 / steps.len() as f64,
        steps.iter().min().unwrap_or(&0),
        steps.iter().max().unwrap_or(&0),
    );
    println!("wrote {}", out.display());
    println!("wrote {}", trace_path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    noisy: MetricReport,
    denoised: MetricReport,
}

fn load(path: &Path) -> Result<Volume4D> {
    data::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn summary_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut out = format!(
        "{:<10} {:>9} {:>8} {:>22} {:>22}\n",
        "input", "PSNR(dB)", "SSIM", "SNR mean+-std", "CNR mean+-std"
    );
    let cell = |m: Option<MeanStd>| match m {
        Some(m) => format!("{:.3}+-{:.3}", m.mean, m.std),
        None => "n/a".to_string(),
    };
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<10} {:>9.3} {:>8.4} {:>22} {:>22}\n",
            name,
            r.psnr,
            r.ssim,
            cell(r.snr),
            cell(r.cnr),
        ));
    }
    out
}

pub fn eval(common: &Common, clean: &Path, noisy: &Path, denoised: &Path, out: Option<PathBuf>) -> Result<()> {
    RunConfig::load(common.config.as_deref())?.0.validate()?;
    let clean = load(clean)?;
    let noisy = load(noisy)?;
    let denoised = load(denoised)?;
    for other in [&noisy, &denoised] {
        if other.dims() != clean.dims() {
            bail!(Error::DimsMismatch {
                expected: clean.dims(),
                got: other.dims(),
            });
        }
    }
    let (w, h, d, _) = clean.dims();
    let (signal, background) = phantom_masks(w, h, d)?;
    let report = EvalReport {
        noisy: evaluate(&clean, &noisy, &signal, &background, DATA_RANGE)?,
        denoised: evaluate(&clean, &denoised, &signal, &background, DATA_RANGE)?,
    };
    let table = summary_table(&[("noisy", &report.noisy), ("denoised", &report.denoised)]);
    match out {
        Some(path) => {
            write_json(&path, &report)?;
            print!("{table}");
            println!("wrote {}", path.display());
        }
        None => {
            eprint!("{table}");
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}
