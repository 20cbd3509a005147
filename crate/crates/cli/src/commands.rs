//! Subcommand implementations. Everything here is callable as a library so
//! tests can drive the exact code paths the binary runs.

use crate::config::ExperimentConfig;
use crate::manifest::ManifestBuilder;
use crate::projection::pca_2d;
use crate::{CliError, Command};
use fedalign::al::{run_fal, FalRun, SelectorKind};
use fedalign::datagen::{generate_domain, load_csv_embeddings, write_csv_embeddings};
use fedalign::energy::free_energy;
use fedalign::fed::{run_fdg, Baseline, FdgRun};
use fedalign::model::{flatten, forward_eval, ModelParams};
use fedalign::numcore::{Matrix, Rng};
use std::path::Path;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cmd_gen_data(&cfg, &out)
        }
        Command::TrainFdg {
            config,
            seed,
            baseline,
            all_targets,
            threads,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            if let Some(name) = baseline {
                apply_baseline(&mut cfg, &name)?;
            }
            cmd_train_fdg(&cfg, all_targets, &out)?;
            Ok(())
        }
        Command::RunFal {
            config,
            seed,
            selector,
            threads,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            if let Some(name) = selector {
                cfg.al.selector = name
                    .parse::<SelectorKind>()
                    .map_err(|e| CliError::config(e.to_string()))?;
            }
            cmd_run_fal(&cfg, &out)?;
            Ok(())
        }
        Command::Verify => cmd_verify(),
        Command::EmdEval { file_a, file_b } => cmd_emd_eval(&file_a, &file_b),
    }
}

/// `--baseline fedavg` zeroes all three regularisation weights and bypasses
/// the server alignment step; `--baseline feda` restores the full pipeline.
pub fn apply_baseline(cfg: &mut ExperimentConfig, name: &str) -> Result<(), CliError> {
    match name.to_ascii_lowercase().as_str() {
        "fedavg" => {
            cfg.fed.baseline = Baseline::FedAvg;
            cfg.fed.lambda_l2 = 0.0;
            cfg.fed.lambda_cmi = 0.0;
            cfg.fed.lambda_fea = 0.0;
            Ok(())
        }
        "feda" => {
            cfg.fed.baseline = Baseline::Feda;
            Ok(())
        }
        other => Err(CliError::config(format!("unknown baseline {other:?}"))),
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("gen-data", cfg.canonical_json());
    let dataset_config = cfg.dataset_config();
    let specs = cfg.domain_specs()?;
    // Same stream derivation as federation construction, so the CSVs are the
    // exact data a run would see.
    let root = Rng::new(cfg.seed);
    for (idx, spec) in specs.iter().enumerate() {
        let mut rng = root.split(idx as u64);
        let ds = generate_domain(spec, &dataset_config, &mut rng)?;
        let name = format!("domain_{idx}.csv");
        let path = out.join(&name);
        write_csv_embeddings(&ds, &path)?;
        let written = std::fs::read_to_string(&path)
            .map_err(|e| CliError::config(format!("reread {}: {e}", path.display())))?;
        manifest.record_output(&name, &written);
        println!("wrote {name}: {} rows", ds.len());
    }
    manifest.finish(out)?;
    Ok(())
}

/// Outcome of `train-fdg` for tests: per-target final accuracies.
pub struct TrainFdgOutcome {
    pub final_target_acc: Vec<(usize, f64)>,
}

pub fn cmd_train_fdg(
    cfg: &ExperimentConfig,
    all_targets: bool,
    out: &Path,
) -> Result<TrainFdgOutcome, CliError> {
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("train-fdg", cfg.canonical_json());
    let targets: Vec<usize> = if all_targets {
        (0..cfg.dataset.num_domains).collect()
    } else {
        vec![cfg.target_domain]
    };
    let model_config = cfg.model_config();
    let fed_config = cfg.fed_config();
    let mut final_acc = Vec::new();
    for &t in &targets {
        let mut cfg_t = cfg.clone();
        cfg_t.target_domain = t;
        let federation = cfg_t.federation()?;
        let run: FdgRun = run_fdg(&fed_config, &model_config, &federation)?;

        let history_name = format!("history_target{t}.csv");
        manifest.write_output(out, &history_name, &run.history.to_csv())?;

        let params_name = format!("params_target{t}.csv");
        manifest.write_output(out, &params_name, &params_csv(&run.server.global_params))?;

        let ledger_name = format!("ledger_target{t}.csv");
        manifest.write_output(out, &ledger_name, &ledger_csv(&run.ledger))?;

        let acc = run.history.final_target_accuracy().unwrap_or(f64::NAN);
        println!("target {t}: final target accuracy {acc}");
        final_acc.push((t, acc));
    }
    manifest.finish(out)?;
    Ok(TrainFdgOutcome {
        final_target_acc: final_acc,
    })
}

fn params_csv(params: &ModelParams) -> String {
    let flat = flatten(params);
    let mut out = String::from("index,value\n");
    for (i, v) in flat.values().iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

fn ledger_csv(ledger: &fedalign::fed::Ledger) -> String {
    let mut out = String::from("seq,direction,client,kind,payload_len\n");
    for r in ledger.records() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.seq,
            r.direction.name(),
            r.client,
            r.kind.name(),
            r.payload_len
        ));
    }
    out
}

/// Outcome of `run-fal` for tests.
pub struct RunFalOutcome {
    pub final_target_acc: f64,
    pub cycle_count: usize,
}

pub fn cmd_run_fal(cfg: &ExperimentConfig, out: &Path) -> Result<RunFalOutcome, CliError> {
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("run-fal", cfg.canonical_json());
    let federation = cfg.federation()?;
    let fal_config = cfg.fal_config();
    let model_config = cfg.model_config();
    let run: FalRun = run_fal(&fal_config, &model_config, &federation)?;

    manifest.write_output(out, "fal_metrics.csv", &run.to_metrics_csv())?;

    let mut last_projection = String::new();
    for rec in &run.cycles {
        let mut sel_csv = String::from("client,sample_index\n");
        for (k, sel) in rec.selection.per_client.iter().enumerate() {
            for &i in sel {
                sel_csv.push_str(&format!("{k},{i}\n"));
            }
        }
        manifest.write_output(out, &format!("selection_cycle{}.csv", rec.cycle), &sel_csv)?;

        let proj = projection_csv(&federation, rec)?;
        manifest.write_output(out, &format!("projection_cycle{}.csv", rec.cycle), &proj)?;
        last_projection = proj;
    }
    // The documented name points at the final cycle's projection.
    manifest.write_output(out, "projection.csv", &last_projection)?;

    let final_target_acc = run.cycles.last().map(|c| c.target_acc).unwrap_or(f64::NAN);
    println!(
        "{} cycles complete: final target accuracy {final_target_acc}",
        run.cycles.len()
    );
    let outcome = RunFalOutcome {
        final_target_acc,
        cycle_count: run.cycles.len(),
    };
    manifest.finish(out)?;
    Ok(outcome)
}

/// `domain,label,is_selected,free_energy,pc1,pc2` over all source and target
/// rows under the cycle's global model.
fn projection_csv(
    federation: &fedalign::datagen::FederationSplit,
    rec: &fedalign::al::CycleRecord,
) -> Result<String, CliError> {
    let params = &rec.global_params;
    // Row metadata in emission order: sources by client id, then the target.
    let mut domains = Vec::new();
    let mut labels = Vec::new();
    let mut selected = Vec::new();
    let mut latent_rows: Vec<Vec<f64>> = Vec::new();
    let mut energies = Vec::new();

    let domain_of_source =
        |k: usize| if k < federation.held_out_domain { k } else { k + 1 };

    for (k, ds) in federation.sources.iter().enumerate() {
        let trace = forward_eval(params, &ds.features)?;
        let chosen = &rec.selection.per_client[k];
        for i in 0..ds.len() {
            domains.push(domain_of_source(k));
            labels.push(ds.labels[i]);
            selected.push(chosen.contains(&i));
            latent_rows.push(trace.z.row(i).to_vec());
            energies.push(free_energy(trace.logits.row(i))?);
        }
    }
    let target = &federation.target;
    let trace = forward_eval(params, &target.features)?;
    for i in 0..target.len() {
        domains.push(federation.held_out_domain);
        labels.push(target.labels[i]);
        selected.push(false);
        latent_rows.push(trace.z.row(i).to_vec());
        energies.push(free_energy(trace.logits.row(i))?);
    }

    let all_latents = Matrix::from_rows(&latent_rows).map_err(CliError::from)?;
    let (pc1, pc2) = pca_2d(&all_latents)?;
    let mut out = String::from("domain,label,is_selected,free_energy,pc1,pc2\n");
    for i in 0..domains.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            domains[i],
            labels[i],
            u8::from(selected[i]),
            energies[i],
            pc1[i],
            pc2[i]
        ));
    }
    Ok(out)
}

pub fn cmd_verify() -> Result<(), CliError> {
    let report = crate::verify::run_battery(false);
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::check(format!(
            "{} verification checks failed",
            report.failures().len()
        )))
    }
}

pub fn cmd_emd_eval(file_a: &Path, file_b: &Path) -> Result<(), CliError> {
    let a = load_csv_embeddings(file_a)?;
    let b = load_csv_embeddings(file_b)?;
    let value = fedalign::al::emd(&a.features, &b.features)?;
    println!("emd {value}");
    Ok(())
}
