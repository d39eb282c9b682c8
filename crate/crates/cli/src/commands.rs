use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cfmi_core::cfm::{checkpoint_meta, train_with, FlowMatching, SplitKind};
use cfmi_core::data::{
    ampute_mar_named, ampute_mcar_named, load_csv, read_csv_matrix, write_csv_matrix,
    write_mask_csv, DEFAULT_MISSING_TOKENS,
};
use cfmi_core::diffusion::{train_csdi, NoiseSchedule};
use cfmi_core::metrics::{evaluate as score, MetricSelection};
use cfmi_core::synth2d::run_demo2d;
use cfmi_core::{
    impute_dataset, AncestralSampler, EulerSampler, FieldNetwork, IncompleteDataset, Matrix,
};
use serde_json::json;

use crate::config::{DiffusionSpec, Mechanism, Method, RunConfig};
use crate::{
    require, AmputeArgs, CliError, Common, Demo2dArgs, EvaluateArgs, ImputeArgs, TrainArgs,
};

type CmdResult = Result<(), CliError>;

/// Standardisation mismatch tolerated between training and imputation data.
const STATS_TOLERANCE: f64 = 1e-9;

fn out_dir(common: &Common, cfg: &mut RunConfig) -> Result<PathBuf, CliError> {
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn data_path(
    flag: Option<PathBuf>,
    cfg: &mut RunConfig,
    flag_name: &str,
) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        cfg.data = Some(p);
    }
    let p = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Config(format!("{flag_name} is required")))?;
    require(&p)?;
    Ok(p)
}

fn load_dataset(path: &Path) -> Result<IncompleteDataset, CliError> {
    Ok(load_csv(path, DEFAULT_MISSING_TOKENS)?)
}

fn read_complete(path: &Path, what: &str) -> Result<(Vec<String>, Matrix), CliError> {
    let (names, m) = read_csv_matrix(require(path)?, DEFAULT_MISSING_TOKENS)?;
    if m.data().iter().any(|v| v.is_nan()) {
        return Err(CliError::Config(format!(
            "{what} {} has missing cells",
            path.display()
        )));
    }
    Ok((names, m))
}

pub fn ampute(args: AmputeArgs) -> CmdResult {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let input = data_path(args.input, &mut cfg, "--input")?;
    let spec = &mut cfg.missingness;
    if let Some(m) = args.mechanism {
        spec.mechanism = m;
    }
    if let Some(r) = args.rate {
        spec.rate = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if !(spec.rate > 0.0 && spec.rate < 1.0) {
        return Err(CliError::Config(format!(
            "--rate must lie in (0, 1), got {}",
            spec.rate
        )));
    }
    let spec = spec.clone();
    let dir = out_dir(&args.common, &mut cfg)?;
    let (names, complete) = read_complete(&input, "input")?;
    let (ds, truth) = match spec.mechanism {
        Mechanism::Mcar => ampute_mcar_named(&complete, spec.rate, spec.seed, names.clone())?,
        Mechanism::Mar => ampute_mar_named(&complete, spec.rate, spec.seed, names.clone())?,
    };
    write_csv_matrix(&dir.join("incomplete.csv"), &names, ds.data())?;
    write_mask_csv(&dir.join("mask.csv"), &names, ds.mask())?;
    write_csv_matrix(&dir.join("ground_truth.csv"), &names, &truth.complete)?;
    cfg.echo(&dir)?;
    println!(
        "ampute: {} of {} cells missing ({:.3}); wrote {}",
        ds.mask().missing_count(),
        ds.rows() * ds.cols(),
        ds.mask().missing_fraction(),
        dir.display()
    );
    Ok(())
}

fn stats_meta(ds: &IncompleteDataset) -> serde_json::Value {
    json!({ "names": ds.names(), "mean": ds.col_mean(), "std": ds.col_std() })
}

fn schedule(spec: &DiffusionSpec) -> Result<NoiseSchedule, CliError> {
    Ok(NoiseSchedule::quadratic(
        spec.steps,
        spec.beta_min,
        spec.beta_max,
    )?)
}

pub fn train(args: TrainArgs) -> CmdResult {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let data = data_path(args.data, &mut cfg, "--data")?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    let t = &mut cfg.train;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { t.$field = v; })*
        };
    }
    set!(steps => steps, batch_size => batch_size, lr => lr, weight_decay => weight_decay,
         clip_norm => clip_norm, mix_prob => mix_prob, seed => seed);
    if args.no_cosine {
        t.cosine_schedule = false;
    }
    if let Some(c) = args.checkpoint_every {
        t.checkpoint_every = Some(c);
    }
    if let Some(s) = args.split.as_deref() {
        t.split = if s == "random" {
            SplitKind::Random
        } else {
            SplitKind::RandomHistorical
        };
    }
    t.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dir = out_dir(&args.common, &mut cfg)?;
    let ds = load_dataset(&data)?;
    let schedule = schedule(&cfg.diffusion)?;

    let outcome = match cfg.method {
        Method::Cfmi => train_with(
            &ds,
            &cfg.train,
            &FlowMatching {
                sigma: cfg.train.sigma,
            },
            Some(&dir),
        )?,
        Method::Csdi => train_csdi(&ds, &cfg.train, &schedule, Some(&dir))?,
    };
    let mut meta = checkpoint_meta(&cfg.train, cfg.method.as_str(), cfg.train.steps);
    meta["standardization"] = stats_meta(&ds);
    meta["diffusion"] = serde_json::to_value(&cfg.diffusion)?;
    let manifest = dir.join("checkpoint.json");
    outcome.net.save(&manifest, meta)?;
    outcome.write_loss_log(&dir.join("loss_log.csv"))?;
    outcome.write_validation_log(&dir.join("validation_log.csv"))?;
    cfg.echo(&dir)?;
    let last = outcome.validation.last().map_or(f64::NAN, |v| v.loss);
    println!(
        "train: {} {} steps, {} parameters, final validation loss {last:.4}; wrote {}",
        cfg.method.as_str(),
        cfg.train.steps,
        outcome.net.param_count(),
        manifest.display()
    );
    Ok(())
}

fn check_stats(ds: &IncompleteDataset, meta: &serde_json::Value) -> CmdResult {
    let Some(stats) = meta.get("standardization") else {
        return Ok(());
    };
    let get =
        |k: &str| -> Vec<f64> { serde_json::from_value(stats[k].clone()).unwrap_or_default() };
    let close = |a: &[f64], b: &[f64]| {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= STATS_TOLERANCE * x.abs().max(1.0))
    };
    if !close(&get("mean"), ds.col_mean()) || !close(&get("std"), ds.col_std()) {
        return Err(CliError::Config(
            "data does not match the checkpoint's training data (column statistics differ)".into(),
        ));
    }
    Ok(())
}

pub fn impute(args: ImputeArgs) -> CmdResult {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let data = data_path(args.data, &mut cfg, "--data")?;
    let (net, meta) = FieldNetwork::load(require(&args.checkpoint)?)?;
    let trained = meta
        .get("method")
        .and_then(|m| m.as_str())
        .and_then(Method::parse)
        .ok_or_else(|| CliError::Config("checkpoint does not record its method".into()))?;
    if let Some(m) = args.method {
        if m != trained {
            return Err(CliError::Config(format!(
                "--method {} conflicts with the checkpoint's method {}",
                m.as_str(),
                trained.as_str()
            )));
        }
    }
    cfg.method = trained;
    if let Some(d) = meta.get("diffusion") {
        cfg.diffusion = serde_json::from_value(d.clone())?;
    }
    let spec = &mut cfg.imputation;
    if let Some(k) = args.copies {
        spec.copies = k;
    }
    if let Some(n) = args.n_steps {
        spec.n_steps = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if spec.copies == 0 || spec.n_steps == 0 {
        return Err(CliError::Config(
            "--copies and --n-steps must be positive".into(),
        ));
    }
    let spec = spec.clone();
    let dir = out_dir(&args.common, &mut cfg)?;
    let ds = load_dataset(&data)?;
    check_stats(&ds, &meta)?;

    let mut set = match trained {
        Method::Cfmi => impute_dataset(
            &EulerSampler::new(&net, spec.n_steps)?,
            &ds,
            spec.copies,
            spec.seed,
        )?,
        Method::Csdi => {
            let sampler = AncestralSampler {
                net: &net,
                schedule: schedule(&cfg.diffusion)?,
            };
            impute_dataset(&sampler, &ds, spec.copies, spec.seed)?
        }
    };
    set.provenance.checkpoint = Some(args.checkpoint.display().to_string());
    set.provenance.train_steps = meta
        .get("steps")
        .and_then(|s| s.as_u64())
        .map(|s| s as usize);
    for (i, copy) in set.to_raw(&ds).iter().enumerate() {
        write_csv_matrix(&dir.join(format!("impute_k{i}.csv")), ds.names(), copy)?;
    }
    write_mask_csv(&dir.join("mask.csv"), ds.names(), ds.mask())?;
    fs::write(
        dir.join("provenance.json"),
        serde_json::to_string_pretty(&set.provenance)? + "\n",
    )?;
    cfg.echo(&dir)?;
    println!(
        "impute: {} copies of {} missing cells with {}; wrote {}",
        spec.copies,
        ds.mask().missing_count(),
        trained.as_str(),
        dir.display()
    );
    Ok(())
}

fn read_imputations(dir: &Path) -> Result<Vec<Matrix>, CliError> {
    require(dir)?;
    let mut out = Vec::new();
    loop {
        let p = dir.join(format!("impute_k{}.csv", out.len()));
        if !p.exists() {
            break;
        }
        let (_, m) = read_complete(&p, "imputation")?;
        out.push(m);
    }
    if out.is_empty() {
        return Err(CliError::MissingInput(dir.join("impute_k0.csv")));
    }
    Ok(out)
}

fn selection(names: &[String]) -> Result<MetricSelection, CliError> {
    let mut sel = MetricSelection {
        w2: false,
        rmse: false,
        crps: false,
        mmd: false,
    };
    for n in names {
        match n.trim() {
            "w2" => sel.w2 = true,
            "rmse" => sel.rmse = true,
            "crps" => sel.crps = true,
            "mmd" => sel.mmd = true,
            other => {
                return Err(CliError::Config(format!(
                    "--metrics: unknown metric `{other}` (expected w2, rmse, crps, mmd)"
                )))
            }
        }
    }
    Ok(sel)
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let data = data_path(args.data, &mut cfg, "--data")?;
    let m = &mut cfg.metrics;
    if let Some(h) = args.bandwidth {
        m.bandwidth = Some(h);
    }
    if args.subsample {
        m.w2_subsample = true;
    }
    if let Some(s) = args.seed {
        m.seed = s;
    }
    if let Some(names) = &args.metrics {
        m.metrics = selection(names)?;
    }
    let dir = out_dir(&args.common, &mut cfg)?;
    let ds = load_dataset(&data)?;
    let (_, truth) = read_complete(&args.truth, "ground truth")?;
    let imputations = read_imputations(&args.imputations)?;
    let shape = (ds.rows(), ds.cols());
    if truth.shape() != shape || imputations.iter().any(|c| c.shape() != shape) {
        return Err(CliError::Config(format!(
            "shape mismatch: data {shape:?}, truth {:?}",
            truth.shape()
        )));
    }
    let consistent = (0..ds.rows()).all(|i| {
        (0..ds.cols())
            .all(|j| !ds.mask().is_observed(i, j) || ds.data().get(i, j) == truth.get(i, j))
    });
    if !consistent {
        return Err(CliError::Config(
            "ground truth disagrees with the data's observed cells".into(),
        ));
    }
    let standardized: Vec<Matrix> = imputations.iter().map(|c| ds.standardize(c)).collect();
    let report = score(
        &standardized,
        &ds.standardize(&truth),
        ds.mask(),
        &cfg.metrics,
    )?;
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    fs::write(dir.join("metrics.csv"), report.to_csv())?;
    cfg.echo(&dir)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn demo2d(args: Demo2dArgs) -> CmdResult {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let d = &mut cfg.demo2d;
    if let Some(name) = args.density {
        d.density = name;
    }
    if let Some(n) = args.n {
        d.n = n;
    }
    if let Some(s) = args.steps {
        d.train.steps = s;
    }
    if let Some(r) = args.rate {
        d.missing_rate = r;
    }
    if let Some(s) = args.seed {
        d.seed = s;
    }
    if !(d.missing_rate > 0.0 && d.missing_rate < 1.0) {
        return Err(CliError::Config(format!(
            "--rate must lie in (0, 1), got {}",
            d.missing_rate
        )));
    }
    let demo = d.clone();
    let dir = out_dir(&args.common, &mut cfg)?;
    let out = run_demo2d(&demo)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&out.report)? + "\n",
    )?;
    fs::write(dir.join("truth_density.csv"), out.truth_grid.to_csv())?;
    fs::write(dir.join("imputed_kde.csv"), out.imputed_grid.to_csv())?;
    let mut cond = String::from("axis,value,x,truth,model\n");
    for (truth, model) in &out.conditionals {
        for (s, &c) in truth.cond_values.iter().enumerate() {
            for (g, &x) in truth.grid.iter().enumerate() {
                cond.push_str(&format!(
                    "{},{c},{x},{},{}\n",
                    truth.axis, truth.densities[s][g], model[s][g]
                ));
            }
        }
    }
    fs::write(dir.join("conditionals.csv"), cond)?;
    let names = vec!["x1".to_string(), "x2".to_string()];
    write_csv_matrix(&dir.join("imputed.csv"), &names, &out.imputed)?;
    cfg.echo(&dir)?;
    let r = &out.report;
    println!(
        "demo2d {}: energy MMD {:.5} vs baseline {:.5} (ratio {:.2}); wrote {}",
        r.density,
        r.mmd_imputed,
        r.mmd_baseline,
        r.ratio,
        dir.display()
    );
    Ok(())
}
