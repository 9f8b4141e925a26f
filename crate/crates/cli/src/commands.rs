use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use vaecil::baselines::{run_baseline, Baseline};
use vaecil::checkpoint;
use vaecil::data::{load_feature_file, load_mnist_dir, split_tasks, TaskStream};
use vaecil::eval::{
    ablation_table, evaluate, run_ablation, run_incremental, run_sweep, seed_table, sweep_configs,
    sweep_table, EvalReport, SeedSummary, SweepParam, Table, Variant, R_INTRA_SWEEP_R_INTER,
};
use vaecil::Error;

use crate::config::RunConfig;

fn load_stream(cfg: &RunConfig) -> Result<TaskStream> {
    let (train, test) = match (&cfg.features, &cfg.test_features) {
        (Some(train), Some(test)) => (load_feature_file(train)?, load_feature_file(test)?),
        _ => load_mnist_dir(&cfg.dataset)?,
    };
    let stream = split_tasks(
        &train,
        &test,
        cfg.classes_per_task,
        cfg.validation_fraction,
        cfg.split_seed,
    )?;
    eprintln!(
        "loaded {} training and {} test samples of dimension {} in {} tasks",
        train.len(),
        test.len(),
        stream.dim(),
        stream.num_tasks()
    );
    Ok(stream)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
        path: cfg.out.clone(),
        source,
    })?;
    Ok(&cfg.out)
}

fn write_table(path: &Path, table: &Table) -> Result<()> {
    fs::write(path, table.to_delimited(',')).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn print_report(title: &str, report: &EvalReport) {
    println!("{title}");
    print!("{}", Table::from_report(report));
    println!();
}

fn print_summary(title: &str, summary: &SeedSummary) {
    println!("{title}");
    print!("{}", seed_table(summary));
    println!();
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let stream = load_stream(cfg)?;
    let variant = cfg.variant.unwrap_or(Variant::Full);
    let hp = variant.apply(&cfg.hp);
    let out = out_dir(cfg)?;
    let config_path = out.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|source| Error::Io {
        path: config_path.clone(),
        source,
    })?;
    let started = Instant::now();
    let mut last: Option<PathBuf> = None;
    let (state, report) = run_incremental(&stream, &hp, cfg.seed, |state| {
        let path = out.join(format!("task-{}.ckpt", state.tasks_seen()));
        checkpoint::save(state, &path)?;
        eprintln!(
            "task {}/{} learned ({} classes, {:.1}s elapsed), checkpoint {}",
            state.tasks_seen(),
            stream.num_tasks(),
            state.vaes().len(),
            started.elapsed().as_secs_f64(),
            path.display()
        );
        last = Some(path);
        Ok(())
    })?;
    if let Some(path) = &cfg.checkpoint {
        checkpoint::save(&state, path)?;
        eprintln!("final checkpoint {}", path.display());
    } else if let Some(path) = &last {
        eprintln!("final checkpoint {}", path.display());
    }
    print_report(&format!("{variant} seed {}", cfg.seed), &report);
    write_table(&out.join("train-report.csv"), &Table::from_report(&report))
}

pub fn eval(cfg: &RunConfig, upto: Option<usize>) -> Result<()> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
    let state = checkpoint::load(path)?;
    let stream = load_stream(cfg)?;
    let upto = upto.unwrap_or(state.tasks_seen());
    let report = evaluate(&state, &stream, upto)?;
    print_report(&format!("{} up to task {upto}", path.display()), &report);
    if cfg.is_explicit("out") {
        write_table(
            &out_dir(cfg)?.join("eval-report.csv"),
            &Table::from_report(&report),
        )?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, param: &str, values: Option<Vec<f64>>) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let values = values.unwrap_or_else(|| param.default_grid().to_vec());
    let mut base = cfg.hp.clone();
    if param == SweepParam::RIntra && !cfg.is_explicit("r_inter") {
        base.r_inter = R_INTRA_SWEEP_R_INTER;
    }
    sweep_configs(&base, param, &values)?;
    let stream = load_stream(cfg)?;
    let rows = run_sweep(&stream, &base, param, &values, &cfg.seeds)
        .with_context(|| format!("sweep over {param}"))?;
    let table = sweep_table(param, &rows);
    println!("sweep over {param}, seeds {:?}", cfg.seeds);
    print!("{table}");
    write_table(&out_dir(cfg)?.join(format!("sweep-{param}.csv")), &table)
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let variants: Vec<Variant> = cfg.variant.map_or(Variant::ALL.to_vec(), |v| vec![v]);
    let stream = load_stream(cfg)?;
    let mut results = Vec::new();
    for v in variants {
        let summary = run_ablation(v, &stream, &cfg.hp, &cfg.seeds)?;
        print_summary(&format!("{v}, seeds {:?}", cfg.seeds), &summary);
        results.push((v, summary));
    }
    let table = ablation_table(&results);
    println!("mean accuracy after each task");
    print!("{table}");
    write_table(&out_dir(cfg)?.join("ablation.csv"), &table)
}

pub fn baseline(cfg: &RunConfig, kind: &str) -> Result<()> {
    let kinds = if kind.eq_ignore_ascii_case("both") {
        vec![Baseline::Finetune, Baseline::Joint]
    } else {
        vec![kind.parse()?]
    };
    let stream = load_stream(cfg)?;
    let out = out_dir(cfg)?;
    for kind in kinds {
        let reports = cfg
            .seeds
            .iter()
            .map(|&s| run_baseline(kind, &stream, &cfg.hp, s))
            .collect::<vaecil::Result<Vec<_>>>()?;
        let summary = SeedSummary::new(cfg.seeds.clone(), reports)?;
        print_summary(&format!("{kind}, seeds {:?}", cfg.seeds), &summary);
        write_table(
            &out.join(format!("baseline-{kind}.csv")),
            &seed_table(&summary),
        )?;
    }
    Ok(())
}

pub fn inspect(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("inspect needs --checkpoint".into()))?;
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let state = checkpoint::decode(&bytes)?;
    let hp = state.hyper_params();
    println!("checkpoint      {}", path.display());
    println!("size            {} bytes", bytes.len());
    println!("format version  {}", checkpoint::VERSION);
    println!("tasks learned   {}", state.tasks_seen());
    println!(
        "input dim       {}",
        state.input_dim().map_or("-".to_string(), |d| d.to_string())
    );
    println!(
        "hyperparameters r_intra={} r_inter={} lambda1={} lambda2={} epochs={} batch_size={} lr={} wd={} latent={} hidden={:?} pseudo_per_old_class={}",
        hp.r_intra,
        hp.r_inter,
        hp.lambda1,
        hp.lambda2,
        hp.epochs,
        hp.batch_size,
        hp.learning_rate,
        hp.weight_decay,
        hp.latent_dim,
        hp.hidden_widths,
        hp.pseudo_per_old_class
    );
    let table = Table {
        header: vec!["label".into(), "task".into(), "params".into()],
        rows: state
            .vaes()
            .iter()
            .map(|p| {
                vec![
                    p.vae.label().to_string(),
                    p.task.to_string(),
                    p.vae.num_params().to_string(),
                ]
            })
            .collect(),
    };
    print!("{table}");
    Ok(())
}
