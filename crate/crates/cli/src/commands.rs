//! The five subcommands. Each one writes its resolved configuration next to
//! its outputs and returns what it wrote.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use spikemem::bam::TaskRegistry;
use spikemem::data::{
    compute_erp, load_bundle, preprocess, save_bundle, split_dataset, synth_generate,
    write_waveform_csv, Dataset,
};
use spikemem::pipeline::{
    evaluate, reconstruct_class_waveform, run_pipeline, train_phase1, train_phase2, Ablation,
    EvalReport, Model, Phase1Report,
};
use spikemem::tensor::Tensor;

use crate::config::{DataSource, RunConfig, RESOLVED_NAME};
use crate::error::{CliError, CliResult};
use crate::svg::line_plot;

pub const BUNDLE_FILE: &str = "data.bundle";
pub const CODEC_FILE: &str = "codec.ckpt";
pub const MEMORY_FILE: &str = "memory.amm";
pub const PHASE1_FILE: &str = "phase1_loss.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "report.txt";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::output(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::output(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_file(path, |w| w.write_all(text.as_bytes()))
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_text(&dir.join(RESOLVED_NAME), &cfg.to_toml())
}

/// The raw dataset named by `[data]`.
pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    match cfg.data.source {
        DataSource::Synth => Ok(synth_generate(&cfg.synth)?),
        DataSource::Bundle => {
            let path = cfg
                .data
                .bundle
                .as_ref()
                .ok_or_else(|| CliError::Config("data.bundle is not set".into()))?;
            Ok(load_bundle(path)?)
        }
    }
}

/// Loads and preprocesses the dataset; normalisation statistics come from
/// the training split only.
pub fn prepare_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    cfg.validate()?;
    let raw = load_dataset(cfg)?;
    let split = split_dataset(&raw, cfg.plan.train_fraction, cfg.plan.seed)?;
    Ok(preprocess(&raw, &cfg.preprocess, &split.train)?.0)
}

fn load_model(cfg: &RunConfig, ds: &Dataset) -> CliResult<Model> {
    let path = cfg.output.dir.join(CODEC_FILE);
    let file = File::open(&path).map_err(|e| spikemem::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let config = cfg.model.codec_config(ds, &cfg.plan);
    Ok(Model::read_checkpoint(config, &mut BufReader::new(file))?)
}

fn load_registry(cfg: &RunConfig) -> CliResult<TaskRegistry> {
    let path = cfg.output.dir.join(MEMORY_FILE);
    let file = File::open(&path).map_err(|e| spikemem::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(TaskRegistry::read(&mut BufReader::new(file))?)
}

fn write_report(report: &EvalReport, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let csv = dir.join(REPORT_FILE);
    write_file(&csv, |w| report.write_csv(w))?;
    let txt = dir.join(SUMMARY_FILE);
    write_text(&txt, &report.summary())?;
    Ok(vec![csv, txt])
}

/// Writes the synthetic dataset of `[synth]` as a trial bundle.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.synth.validate()?;
    let dir = &cfg.output.dir;
    write_resolved(cfg, dir)?;
    let ds = synth_generate(&cfg.synth)?;
    let path = dir.join(BUNDLE_FILE);
    save_bundle(&path, &ds)?;
    log::info!("wrote {} trials to {}", ds.trials().len(), path.display());
    Ok(path)
}

/// Phase 1 and phase 2; writes the codec checkpoint, the memory registry
/// and the loss curve.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.plan.ablation == Ablation::NoBam {
        return Err(CliError::Config(
            "train stores associative memories; run `ablate --ablation no-bam` instead".into(),
        ));
    }
    let ds = prepare_dataset(cfg)?;
    let dir = &cfg.output.dir;
    write_resolved(cfg, dir)?;
    let split = split_dataset(&ds, cfg.plan.train_fraction, cfg.plan.seed)?;
    let (model, phase1) = train_phase1(&ds, &split.train, &cfg.model, &cfg.plan)?;
    let ckpt = dir.join(CODEC_FILE);
    write_file(&ckpt, |w| {
        model.write_checkpoint(w).map_err(std::io::Error::other)
    })?;
    let curve = dir.join(PHASE1_FILE);
    write_file(&curve, |w| phase1.write_csv(w))?;
    if let Some(msg) = phase1.diverged {
        return Err(spikemem::Error::Numeric(format!("phase 1 diverged ({msg})")).into());
    }
    let registry = train_phase2(&model, &ds, &split.train)?;
    let mem = dir.join(MEMORY_FILE);
    write_file(&mem, |w| registry.write(w).map_err(std::io::Error::other))?;
    Ok(vec![ckpt, mem, curve])
}

/// Classifies the held-out split with the stored model.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    let ds = prepare_dataset(cfg)?;
    let model = load_model(cfg, &ds)?;
    let registry = load_registry(cfg)?;
    let split = split_dataset(&ds, cfg.plan.train_fraction, cfg.plan.seed)?;
    let report = evaluate(&model, &registry, &ds, &split.test)?;
    write_resolved(cfg, &cfg.output.dir)?;
    write_report(&report, &cfg.output.dir)?;
    Ok(report)
}

fn file_stem(task: &str, class: usize) -> String {
    let task: String = task
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{task}_class{class}")
}

fn channel_series(x: &Tensor<f64>) -> Vec<(String, Vec<f64>)> {
    let rows = x.shape()[0];
    (0..rows)
        .map(|c| (format!("channel {c}"), x.row(c).to_vec()))
        .collect()
}

/// Pearson correlation of two equally long signals.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Reconstructed class waveforms, the matching ERPs, spike rasters of the
/// inverted patterns and a correlation table. `task` and `class` narrow the
/// selection; by default every pair is exported.
pub fn cmd_reconstruct(
    cfg: &RunConfig,
    task: Option<&str>,
    class: Option<usize>,
) -> CliResult<Vec<PathBuf>> {
    let ds = prepare_dataset(cfg)?;
    let model = load_model(cfg, &ds)?;
    let registry = load_registry(cfg)?;
    let tasks: Vec<String> = match task {
        Some(t) if ds.tasks().iter().any(|x| x == t) => vec![t.to_string()],
        Some(t) => return Err(CliError::Config(format!("unknown task {t:?}"))),
        None => ds.tasks().to_vec(),
    };
    let classes: Vec<usize> = match class {
        Some(k) if k < ds.n_classes() => vec![k],
        Some(k) => {
            return Err(CliError::Config(format!(
                "class {k} out of range for {} classes",
                ds.n_classes()
            )))
        }
        None => (0..ds.n_classes()).collect(),
    };
    let root = &cfg.output.dir;
    write_resolved(cfg, root)?;
    let (rec_dir, erp_dir, raster_dir) = (
        root.join("reconstruct"),
        root.join("erp"),
        root.join("raster"),
    );
    for d in [&rec_dir, &erp_dir, &raster_dir] {
        create_dir(d)?;
    }
    let mut written = Vec::new();
    let mut table = String::from("task,class,own_correlation,best_other_correlation\n");
    let mc = model.config();
    for t in &tasks {
        let erp = compute_erp(&ds, t)?;
        for &k in &classes {
            let stem = file_stem(t, k);
            let wave = reconstruct_class_waveform(&model, &registry, t, k)?;
            let name = &ds.class_names()[k];
            let path = rec_dir.join(format!("{stem}.csv"));
            write_file(&path, |w| {
                write_waveform_csv(w, &wave).map_err(std::io::Error::other)
            })?;
            written.push(path);
            let path = rec_dir.join(format!("{stem}.svg"));
            write_text(
                &path,
                &line_plot(
                    &format!("{t} {name}: reconstruction"),
                    &channel_series(&wave),
                ),
            )?;
            written.push(path);

            let own = &erp.per_class[k];
            let own_erp = own.truncate_cols(wave.shape()[1])?;
            let path = erp_dir.join(format!("{stem}.csv"));
            write_file(&path, |w| {
                write_waveform_csv(w, own).map_err(std::io::Error::other)
            })?;
            written.push(path);
            let path = erp_dir.join(format!("{stem}.svg"));
            write_text(
                &path,
                &line_plot(&format!("{t} {name}: ERP"), &channel_series(own)),
            )?;
            written.push(path);

            let pattern = registry.get(t)?.invert_label(k)?;
            let spikes = pattern.to_spikes(mc.n_neurons(), mc.code_steps())?;
            let path = raster_dir.join(format!("{stem}.csv"));
            write_file(&path, |w| spikes.write_raster_csv(w))?;
            written.push(path);

            let own_corr = correlation(wave.data(), own_erp.data());
            let other = (0..ds.n_classes())
                .filter(|&j| j != k)
                .map(|j| {
                    let e = erp.per_class[j].truncate_cols(wave.shape()[1])?;
                    Ok(correlation(wave.data(), e.data()))
                })
                .collect::<CliResult<Vec<f64>>>()?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            table.push_str(&format!("{t},{k},{own_corr:.6},{other:.6}\n"));
        }
    }
    let path = rec_dir.join("erp_correlation.csv");
    write_text(&path, &table)?;
    written.push(path);
    Ok(written)
}

/// Runs the whole pipeline for one variant into `<out>/ablation-<name>/`.
pub fn cmd_ablate(cfg: &RunConfig, ablation: Ablation) -> CliResult<EvalReport> {
    if ablation == Ablation::None {
        return Err(CliError::Config(
            "ablate needs --ablation no-spiking or --ablation no-bam".into(),
        ));
    }
    let mut cfg = cfg.clone();
    cfg.plan.ablation = ablation;
    let ds = prepare_dataset(&cfg)?;
    let dir = cfg.output.dir.join(format!("ablation-{}", ablation.name()));
    write_resolved(&cfg, &dir)?;
    let run = run_pipeline(&ds, &cfg.model, &cfg.plan, None::<(&Model, &Phase1Report)>)?;
    write_file(&dir.join(PHASE1_FILE), |w| run.phase1.write_csv(w))?;
    write_report(&run.report, &dir)?;
    Ok(run.report)
}
