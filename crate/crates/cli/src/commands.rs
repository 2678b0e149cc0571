use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scengan::data::{
    load_csv, read_labels, read_scenario_csv, synth_contrasting_site_groups,
    synth_mixed_wind_solar, synth_two_regime_wind, window_into_days, write_csv, write_labels,
    write_scenario_csv, LabeledBatch, MINUTES_PER_DAY,
};
use scengan::eval::{
    correlation_distance, generator_stats, mode_purity, pearson_matrix, CorrelationSection,
};
use scengan::{
    generate, Checkpoint, EvalReport, GanNets, Manifest, MlpNetwork, Mode, ModeClassifier,
    ScenarioBatch, SiteInfo, SiteSeries, Trainer,
};

use crate::config::RunConfigFile;
use crate::{Cli, CliError, Command, EvalMode, Family};

type CliResult<T> = Result<T, CliError>;

const PROFILES_PER_GENERATOR: usize = 5;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth {
            family,
            samples,
            timesteps,
            sites,
            capacity,
        } => synth(cli, *family, *samples, *timesteps, *sites, *capacity),
        Command::Train => train(cli),
        Command::Generate {
            checkpoint,
            generator,
            count,
        } => generate_cmd(cli, checkpoint, generator, *count),
        Command::Eval {
            scenarios,
            reference,
            manifest,
            labels,
            mode,
        } => eval(
            cli,
            scenarios,
            reference.as_deref(),
            manifest.as_deref(),
            labels.as_deref(),
            *mode,
        ),
    }
}

fn out_dir(cli: &Cli) -> CliResult<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn synth(
    cli: &Cli,
    family: Family,
    samples: usize,
    timesteps: usize,
    sites: Option<usize>,
    capacity: f64,
) -> CliResult<()> {
    if samples < 2 {
        return Err(CliError::usage("--samples must be >= 2"));
    }
    if timesteps < 8 || MINUTES_PER_DAY % timesteps != 0 {
        return Err(CliError::usage(format!(
            "--timesteps must be >= 8 and divide {MINUTES_PER_DAY}, got {timesteps}"
        )));
    }
    if !(capacity > 0.0 && capacity.is_finite()) {
        return Err(CliError::usage("--capacity must be > 0"));
    }
    let n_sites = match (family, sites) {
        (Family::Spatiotemporal, s) => s.unwrap_or(4),
        (_, None | Some(1)) => 1,
        (_, Some(s)) => {
            return Err(CliError::usage(format!(
                "this family is single-site, got --sites {s}"
            )))
        }
    };
    if n_sites < 2 && family == Family::Spatiotemporal {
        return Err(CliError::usage("spatiotemporal needs --sites >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let set: LabeledBatch = match family {
        Family::MixedWindSolar => synth_mixed_wind_solar(samples, timesteps, &mut rng)?,
        Family::TwoRegimeWind => synth_two_regime_wind(samples, timesteps, &mut rng)?,
        Family::Spatiotemporal => {
            synth_contrasting_site_groups(samples, n_sites, timesteps, &mut rng)?
        }
    };

    let dir = out_dir(cli)?;
    let ids: Vec<String> = (0..n_sites).map(|s| format!("site{s}")).collect();
    let resolution = MINUTES_PER_DAY / timesteps;
    let series: Vec<SiteSeries> = ids
        .iter()
        .enumerate()
        .map(|(s, id)| SiteSeries {
            site_id: id.clone(),
            capacity_mw: capacity,
            resolution_minutes: resolution,
            values: (0..set.batch.len())
                .flat_map(|i| set.batch.site(i, s).iter().map(|v| v * capacity))
                .collect(),
        })
        .collect();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    write_csv(&dir.join("dataset.csv"), &series, start)?;
    Manifest::uniform(&ids, capacity, resolution).save(&dir.join("manifest.toml"))?;
    write_labels(&dir.join("labels.csv"), &set.labels)?;

    let mut counts: BTreeMap<Mode, usize> = BTreeMap::new();
    for l in &set.labels {
        *counts.entry(*l).or_default() += 1;
    }
    let summary: Vec<String> = counts
        .iter()
        .map(|(m, n)| format!("{n} {}", m.as_str()))
        .collect();
    println!(
        "wrote {} days x {} sites x {} steps ({}) to {}",
        set.batch.len(),
        n_sites,
        timesteps,
        summary.join(", "),
        dir.display()
    );
    Ok(())
}

fn canonical(p: &Path, what: &str) -> CliResult<PathBuf> {
    fs::canonicalize(p).map_err(|e| CliError::usage(format!("{what} {}: {e}", p.display())))
}

fn train(cli: &Cli) -> CliResult<()> {
    let cfg_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("train requires --config <path>"))?;
    let mut rc = RunConfigFile::load(cfg_path)?;
    if let Some(seed) = cli.seed {
        rc.training.seed = seed;
    }
    if let Some(out) = &cli.out {
        rc.output.dir = out.clone();
    }
    rc.data.manifest = Some(canonical(&rc.manifest_path(), "manifest")?);
    rc.data.csv = canonical(&rc.data.csv, "dataset")?;
    fs::create_dir_all(&rc.output.dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", rc.output.dir.display())))?;
    rc.output.dir = canonical(&rc.output.dir, "output directory")?;
    let dir = rc.output.dir.clone();

    let manifest = Manifest::load(&rc.manifest_path())?;
    let series = load_csv(&rc.data.csv, &manifest)?;
    let days = window_into_days(&series)?;
    if days.overage_count > 0 {
        eprintln!(
            "warning: {} values above capacity were clamped",
            days.overage_count
        );
    }
    if days.dropped_points > 0 {
        eprintln!(
            "warning: dropped {} trailing points short of a full day",
            days.dropped_points
        );
    }
    fs::write(dir.join("effective_config.toml"), rc.to_toml()?)?;

    let width = days.batch.width();
    let nets = GanNets::new(
        MlpNetwork::generator(rc.training.latent_dim, &rc.network.generator_hidden, width)?,
        MlpNetwork::discriminator(width, &rc.network.discriminator_hidden)?,
    )?;
    let sites: Vec<SiteInfo> = days
        .site_ids
        .iter()
        .zip(&days.capacities)
        .map(|(id, &capacity_mw)| SiteInfo {
            id: id.clone(),
            capacity_mw,
        })
        .collect();
    let mut trainer = Trainer::new(rc.training.clone(), &days.batch, nets)?;
    let ckpt_path = dir.join("checkpoint.json");
    let save = |t: &Trainer| -> CliResult<()> {
        let mut ckpt = t.checkpoint();
        ckpt.sites = sites.clone();
        ckpt.save(&ckpt_path)?;
        Ok(())
    };
    save(&trainer)?;

    let mut log = fs::File::create(dir.join("train_log.csv"))?;
    let mut header = vec!["epoch".to_string()];
    header.extend((0..rc.training.j_particles).map(|j| format!("l_g_{j}")));
    header.extend(["l_d".to_string(), "v".to_string()]);
    writeln!(log, "{}", header.join(","))?;

    while !trainer.has_converged() {
        let report = match trainer.step() {
            Ok(r) => r.clone(),
            Err(e @ scengan::Error::NonFinite(_)) => {
                return Err(CliError::numeric(format!(
                    "{e} at epoch {}; last good checkpoint kept at {}",
                    trainer.state().epoch,
                    ckpt_path.display()
                )))
            }
            Err(e) => return Err(e.into()),
        };
        let finite = report.l_g_per_particle.iter().all(|v| v.is_finite())
            && report.l_d.is_finite()
            && report.value_v.is_finite();
        if !finite {
            return Err(CliError::numeric(format!(
                "non-finite loss at epoch {}; last good checkpoint kept at {}",
                trainer.state().epoch,
                ckpt_path.display()
            )));
        }
        let epoch = trainer.state().epoch;
        if epoch % rc.output.log_interval == 0 || trainer.has_converged() {
            let mut fields = vec![epoch.to_string()];
            fields.extend(report.l_g_per_particle.iter().map(|v| format!("{v}")));
            fields.extend([format!("{}", report.l_d), format!("{}", report.value_v)]);
            writeln!(log, "{}", fields.join(","))?;
            log.flush()?;
            save(&trainer)?;
        }
    }
    let st = trainer.state();
    println!(
        "trained {} epochs ({} samples seen), checkpoint {}",
        st.epoch,
        st.running_n,
        ckpt_path.display()
    );
    Ok(())
}

fn generate_cmd(cli: &Cli, checkpoint: &Path, generator: &str, count: usize) -> CliResult<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let j = ckpt.ensemble.generators.len();
    let indices: Vec<usize> = if generator == "all" {
        (0..j).collect()
    } else {
        let k: usize = generator.parse().map_err(|_| {
            CliError::usage(format!(
                "--generator must be `all` or an index, got `{generator}`"
            ))
        })?;
        if k >= j {
            return Err(CliError::usage(format!(
                "generator index {k} out of range (checkpoint has {j})"
            )));
        }
        vec![k]
    };
    if count == 0 {
        return Err(CliError::usage("--count must be >= 1"));
    }
    let capacities: Option<Vec<f64>> = if cli.mw {
        if ckpt.sites.is_empty() {
            return Err(CliError::usage(
                "checkpoint carries no site capacities; --mw unavailable",
            ));
        }
        Some(ckpt.sites.iter().map(|s| s.capacity_mw).collect())
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let batches = indices
        .iter()
        .map(|&k| generate(&ckpt.ensemble, k, count, &mut rng).map(|b| (k.to_string(), b)))
        .collect::<scengan::Result<Vec<_>>>()?;
    let dir = out_dir(cli)?;
    let path = dir.join("scenarios.csv");
    let groups: Vec<(String, &ScenarioBatch)> =
        batches.iter().map(|(k, b)| (k.clone(), b)).collect();
    write_scenario_csv(&path, &groups, capacities.as_deref())?;
    println!(
        "wrote {} scenarios from {} generator(s) to {}",
        count * indices.len(),
        indices.len(),
        path.display()
    );
    Ok(())
}

fn first_field(path: &Path) -> CliResult<String> {
    let f =
        fs::File::open(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line)?;
    Ok(line.split(',').next().unwrap_or("").trim().to_string())
}

/// A reference set: a scenario CSV (all groups pooled) or a dataset CSV.
fn load_reference(path: &Path, manifest: Option<&Path>) -> CliResult<ScenarioBatch> {
    match first_field(path)?.as_str() {
        "generator" => {
            let mut groups = read_scenario_csv(path)?.into_iter();
            let first = groups
                .next()
                .ok_or_else(|| CliError::usage(format!("{}: no scenarios", path.display())))?;
            groups.try_fold(first.batch, |acc, g| {
                acc.concat(&g.batch).map_err(CliError::from)
            })
        }
        "timestamp" => {
            let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| {
                path.parent()
                    .unwrap_or(Path::new("."))
                    .join("manifest.toml")
            });
            let m = Manifest::load(&mpath)?;
            Ok(window_into_days(&load_csv(path, &m)?)?.batch)
        }
        other => Err(CliError::usage(format!(
            "{}: unrecognized reference format (first column `{other}`)",
            path.display()
        ))),
    }
}

fn check_shape(name: &str, b: &ScenarioBatch, r: &ScenarioBatch) -> CliResult<()> {
    if (b.n_sites(), b.timesteps()) != (r.n_sites(), r.timesteps()) {
        return Err(CliError::usage(format!(
            "shape mismatch: generator {name} is {}x{}, reference is {}x{}",
            b.n_sites(),
            b.timesteps(),
            r.n_sites(),
            r.timesteps()
        )));
    }
    Ok(())
}

fn eval(
    cli: &Cli,
    scenarios: &Path,
    reference: Option<&Path>,
    manifest: Option<&Path>,
    labels: Option<&Path>,
    mode: EvalMode,
) -> CliResult<()> {
    let groups = read_scenario_csv(scenarios)?;
    if groups.is_empty() {
        return Err(CliError::usage(format!(
            "{}: no scenarios",
            scenarios.display()
        )));
    }
    let reference = reference.map(|p| load_reference(p, manifest)).transpose()?;
    if let Some(r) = &reference {
        for g in &groups {
            check_shape(&g.generator, &g.batch, r)?;
        }
    }
    let labels = labels.map(read_labels).transpose()?;
    if let (Some(r), Some(l)) = (&reference, &labels) {
        if r.len() != l.len() {
            return Err(CliError::usage(format!(
                "{} labels for {} reference samples",
                l.len(),
                r.len()
            )));
        }
    }

    let mut report = EvalReport::default();
    for g in &groups {
        let n = g.batch.len().min(PROFILES_PER_GENERATOR);
        report.profiles.insert(
            g.generator.clone(),
            (0..n).map(|i| g.batch.site(i, 0).to_vec()).collect(),
        );
    }
    match mode {
        EvalMode::Purity => {
            let labels = labels.ok_or_else(|| CliError::usage("purity mode requires --labels"))?;
            let clf = ModeClassifier::for_labels(&labels)?;
            if let Some(r) = &reference {
                println!(
                    "classifier accuracy on reference: {:.4}",
                    clf.accuracy(r, &labels)?
                );
            }
            println!("{:<12} {:<8} {:>8}", "generator", "mode", "purity");
            let mut out = BTreeMap::new();
            for g in &groups {
                let p = mode_purity(&g.batch, &clf)?;
                println!(
                    "{:<12} {:<8} {:>8.4}",
                    g.generator,
                    p.dominant_mode.as_str(),
                    p.purity
                );
                out.insert(g.generator.clone(), p);
            }
            report.purity = Some(out);
        }
        EvalMode::Corr => {
            let r = reference.ok_or_else(|| CliError::usage("corr mode requires --reference"))?;
            let mut refs: Vec<(String, ScenarioBatch)> = Vec::new();
            match &labels {
                Some(l) => {
                    let mut by_mode: BTreeMap<Mode, Vec<usize>> = BTreeMap::new();
                    for (i, m) in l.iter().enumerate() {
                        by_mode.entry(*m).or_default().push(i);
                    }
                    for (m, idx) in by_mode {
                        refs.push((format!("reference_{}", m.as_str()), r.select(&idx)));
                    }
                }
                None => refs.push(("reference".to_string(), r)),
            }
            let mut matrices = BTreeMap::new();
            for (name, b) in &refs {
                matrices.insert(name.clone(), pearson_matrix(b)?);
            }
            let mut distances = Vec::new();
            println!("{:<12} {:<24} {:>10}", "generator", "reference", "distance");
            for g in &groups {
                let m = pearson_matrix(&g.batch)?;
                for (name, _) in &refs {
                    let d = correlation_distance(&m, &matrices[name])?;
                    println!("{:<12} {:<24} {:>10.4}", g.generator, name, d);
                    distances.push((g.generator.clone(), name.clone(), d));
                }
                matrices.insert(format!("generator_{}", g.generator), m);
            }
            report.correlation = Some(CorrelationSection {
                matrices,
                distances,
            });
        }
        EvalMode::Stats => {
            let mut out = BTreeMap::new();
            println!(
                "{:<12} {:>10} {:>12} {:>12}",
                "generator", "mean", "median_mean", "median_var"
            );
            let mut all: Vec<(String, &ScenarioBatch)> = groups
                .iter()
                .map(|g| (g.generator.clone(), &g.batch))
                .collect();
            if let Some(r) = &reference {
                all.push(("reference".to_string(), r));
            }
            for (name, b) in all {
                let s = generator_stats(b)?;
                println!(
                    "{:<12} {:>10.4} {:>12.4} {:>12.6}",
                    name,
                    s.overall_mean(),
                    s.mean_box.median,
                    s.variance_box.median
                );
                out.insert(name, s);
            }
            report.stats = Some(out);
        }
    }
    let dir = out_dir(cli)?;
    report.write(&dir)?;
    println!("report written to {}", dir.display());
    Ok(())
}
