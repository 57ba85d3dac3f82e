use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use vamce_core::audio::{read_wav, write_wav, StftConfig, Waveform};
use vamce_core::corpus::{generate_corpus, load_clean, read_manifest, resolve, write_corpus, CorpusConfig, ManifestEntry, MANIFEST_FILE};
use vamce_core::eval::{evaluate_batch, EvalItem, EvalReport};
use vamce_core::isnmf::{load_dictionary, save_dictionary, BaselineConfig};
use vamce_core::mcem::write_trace_csv;
use vamce_core::numerics::AdamConfig;
use vamce_core::pipeline::{clean_frames, enhance_nmf_waveform, enhance_waveform, gain_robustness, train_dictionary_on};
use vamce_core::vae::{load_model, save_model, train, TrainingConfig};

use crate::args::*;
use crate::{io_error, CliError, CliResult};

pub(crate) fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::MakeCorpus(a) => make_corpus(&a),
        Command::TrainVae(a) => train_vae(&a),
        Command::TrainDict(a) => train_dict(&a),
        Command::Enhance(a) => enhance(&a),
        Command::EnhanceNmf(a) => enhance_nmf(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::GainRobustness(a) => robustness(&a),
    }
}

fn stft_config(args: &StftArgs, sample_rate: u32) -> CliResult<StftConfig> {
    Ok(StftConfig::from_ms(sample_rate, args.win_ms, args.overlap)?)
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_error(p, e)),
        _ => Ok(()),
    }
}

fn create_file(path: &Path) -> CliResult<fs::File> {
    create_parent(path)?;
    fs::File::create(path).map_err(|e| io_error(path, e))
}

fn load_training_set(corpus: &Path) -> CliResult<Vec<Waveform>> {
    let clean = load_clean(corpus)?;
    if clean.is_empty() {
        return Err(CliError::Usage(format!("{}: corpus has no clean utterances", corpus.display())));
    }
    Ok(clean)
}

fn make_corpus(a: &MakeCorpusArgs) -> CliResult<()> {
    let config = CorpusConfig {
        sample_rate: a.sample_rate,
        utterance_secs: a.secs,
        n_clean: a.n_clean,
        n_mixtures: a.n_mixtures,
        snr_db: a.snr_db,
        seed: a.seed,
    };
    let corpus = generate_corpus(&config)?;
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let entries = write_corpus(&corpus, &a.out)?;
    info!("wrote {} manifest entries to {}", entries.len(), a.out.display());
    Ok(())
}

fn train_vae(a: &TrainVaeArgs) -> CliResult<()> {
    let clean = load_training_set(&a.corpus)?;
    let frames = clean_frames(&clean, stft_config(&a.stft, clean[0].sample_rate)?, a.max_frames)?;
    let config = TrainingConfig {
        latent_dim: a.latent_dim,
        hidden_dim: a.hidden,
        adam: AdamConfig {
            step_size: a.lr,
            ..AdamConfig::default()
        },
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        ..TrainingConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&config, &frames)?;
    info!(
        "trained on {} frames in {:.1} s: {} epochs, best {} ({:?})",
        frames.len(),
        start.elapsed().as_secs_f64(),
        outcome.epochs.len(),
        outcome.best_epoch,
        outcome.stop_reason
    );
    create_parent(&a.out)?;
    save_model(&a.out, &outcome.params)?;
    if let Some(path) = &a.log {
        let mut w = csv::Writer::from_writer(create_file(path)?);
        for e in &outcome.epochs {
            w.serialize(e).map_err(|e| io_error(path, e))?;
        }
        w.flush().map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn train_dict(a: &TrainDictArgs) -> CliResult<()> {
    let clean = load_training_set(&a.corpus)?;
    let config = BaselineConfig {
        speech_rank: a.rank,
        max_iterations: a.max_iters,
        tolerance: a.tol,
        seed: a.seed,
        ..BaselineConfig::default()
    };
    let fit = train_dictionary_on(&clean, stft_config(&a.stft, clean[0].sample_rate)?, a.max_frames, &config)?;
    info!("dictionary fitted in {} iterations", fit.costs.len());
    create_parent(&a.out)?;
    save_dictionary(&a.out, &fit.dictionary)?;
    Ok(())
}

/// Input/output pairs: one file, or every mixture of a corpus directory
/// written as `<out>/<id>.wav`.
fn jobs(input: &Path, out: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    if input.is_dir() && input.join(MANIFEST_FILE).is_file() {
        fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
        Ok(read_manifest(input)?
            .iter()
            .filter(|e| e.is_mixture())
            .map(|e| (e.id.clone(), resolve(input, &e.mixture), out.join(format!("{}.wav", e.id))))
            .collect())
    } else {
        create_parent(out)?;
        let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(vec![(id, input.to_path_buf(), out.to_path_buf())])
    }
}

fn enhance(a: &EnhanceArgs) -> CliResult<()> {
    let vae = load_model(&a.model)?;
    let config = a.mcem.config(!a.freeze_gains);
    let batch = a.input.is_dir();
    for (id, input, output) in jobs(&a.input, &a.out)? {
        let mixture = read_wav(&input)?;
        let start = Instant::now();
        let out = enhance_waveform(&mixture, &vae, stft_config(&a.stft, mixture.sample_rate)?, &config)?;
        let last = out.mcem.trace.last().expect("at least one EM iteration");
        info!(
            "{id}: {} EM iterations ({}), Q = {:.6e}, acceptance {:.3}, {:.1} s",
            out.mcem.trace.len(),
            if out.mcem.converged { "converged" } else { "iteration cap" },
            last.q_tilde(),
            last.mean_acceptance,
            start.elapsed().as_secs_f64()
        );
        write_wav(&output, &out.estimate)?;
        if let Some(trace) = &a.dump_trace {
            let path = if batch { trace.join(format!("{id}.csv")) } else { trace.clone() };
            write_trace_csv(&out.mcem.trace, create_file(&path)?).map_err(|e| io_error(&path, e))?;
        }
    }
    Ok(())
}

fn enhance_nmf(a: &EnhanceNmfArgs) -> CliResult<()> {
    let dict = load_dictionary(&a.dict)?;
    let config = a.config(dict.atoms().cols());
    for (id, input, output) in jobs(&a.input, &a.out)? {
        let mixture = read_wav(&input)?;
        let estimate = enhance_nmf_waveform(&mixture, &dict, stft_config(&a.stft, mixture.sample_rate)?, &config)?;
        info!("{id}: enhanced");
        write_wav(&output, &estimate)?;
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let mixtures: Vec<ManifestEntry> = read_manifest(&a.corpus)?.into_iter().filter(|e| e.is_mixture()).collect();
    let mut report = EvalReport::default();
    for spec in &a.estimates {
        let (method, dir) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--estimates expects METHOD=DIR, got '{spec}'")))?;
        let loaded = mixtures
            .iter()
            .map(|e| {
                Ok((
                    read_wav(resolve(&a.corpus, &e.clean))?,
                    read_wav(Path::new(dir).join(format!("{}.wav", e.id)))?,
                    read_wav(resolve(&a.corpus, &e.mixture))?,
                ))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let items: Vec<EvalItem<'_>> = mixtures
            .iter()
            .zip(&loaded)
            .map(|(e, (reference, estimate, noisy))| EvalItem {
                id: &e.id,
                method,
                reference: &reference.samples,
                estimate: &estimate.samples,
                noisy: &noisy.samples,
            })
            .collect();
        report.extend(evaluate_batch(&items)?);
    }
    report.write_csv(create_file(&a.out)?)?;
    println!("method,count,median_noisy_db,median_enhanced_db,median_improvement_db");
    for (method, s) in report.summaries() {
        println!(
            "{method},{},{:.3},{:.3},{:.3}",
            s.count, s.median_noisy_db, s.median_enhanced_db, s.median_improvement_db
        );
    }
    Ok(())
}

fn robustness(a: &GainRobustnessArgs) -> CliResult<()> {
    let vae = load_model(&a.model)?;
    let mixture = read_wav(&a.mixture)?;
    let clean = read_wav(&a.clean)?;
    let rows = gain_robustness(
        &clean,
        &mixture,
        &vae,
        stft_config(&a.stft, mixture.sample_rate)?,
        &a.mcem.config(true),
        &a.scalings,
    )?;
    let mut w = csv::Writer::from_writer(create_file(&a.out)?);
    for r in &rows {
        info!("{:+.0} dB: free {:.3} dB, frozen {:.3} dB", r.scaling_db, r.sdr_free_db, r.sdr_frozen_db);
        w.serialize(r).map_err(|e| io_error(&a.out, e))?;
    }
    w.flush().map_err(|e| io_error(&a.out, e))?;
    Ok(())
}
