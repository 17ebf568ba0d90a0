use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use mtv_cbf::hocbf::MarginMode;
use mtv_cbf::margin_net::{
    estimate_error_bound, generate_dataset, load_model, save_model, train, ErrorBound, InputBox, MlpParams, Sample,
};
use mtv_cbf::scenarios::{compute_metrics, run_scenario, Metrics, ScenarioConfig};

use crate::config::{Config, Loaded};
use crate::manifest::RunManifest;

pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.txt";

pub fn gen_data(loaded: &Loaded, out: &Path) -> Result<()> {
    let config = &loaded.config;
    let mut manifest = RunManifest::start("gen-data", out, config)?;
    let range = InputBox::for_vehicle(&config.vehicle);
    let data = generate_dataset(&range, config.training.sample_count, config.training.seed, &config.vehicle);
    write_dataset(&out.join(DATASET_FILE), &data)?;
    manifest.artifact(DATASET_FILE)?;
    manifest.finish()?;
    println!("wrote {} samples to {}", data.len(), out.join(DATASET_FILE).display());
    Ok(())
}

fn write_dataset(path: &Path, data: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["x", "y", "psi", "margin"])?;
    for s in data {
        // `{}` prints the shortest string that parses back to the same f64
        w.write_record([s.input[0], s.input[1], s.input[2], s.target].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening dataset {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    ensure!(header == ["x", "y", "psi", "margin"], "dataset {} has columns {header:?}, expected x,y,psi,margin", path.display());
    let mut data = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("dataset {} row {}", path.display(), n + 2))?;
        ensure!(v.iter().all(|x| x.is_finite()), "dataset {} row {} is not finite", path.display(), n + 2);
        data.push(Sample {
            input: [v[0], v[1], v[2]],
            target: v[3],
        });
    }
    ensure!(!data.is_empty(), "dataset {} is empty", path.display());
    Ok(data)
}

pub fn train_model(loaded: &Loaded, out: &Path, data_path: Option<&Path>) -> Result<()> {
    let config = &loaded.config;
    let mut manifest = RunManifest::start("train", out, config)?;
    let range = InputBox::for_vehicle(&config.vehicle);
    let data = match data_path {
        Some(p) => {
            manifest.input(p)?;
            read_dataset(p)?
        }
        None => generate_dataset(&range, config.training.sample_count, config.training.seed, &config.vehicle),
    };
    if config.training.max_epochs == 0 {
        warn!("max_epochs is 0: writing an untrained model");
    }
    let (net, report) = train(&data, &config.training, range)?;
    save_model(&net, out.join(MODEL_FILE))?;
    manifest.artifact(MODEL_FILE)?;
    let text = format!(
        "samples = {}\nepochs = {}\nbest_epoch = {}\ntrain_mse = {:e}\nval_mse = {:e}\nfinal_learning_rate = {:e}\n",
        data.len(),
        report.epochs,
        report.best_epoch,
        report.train_mse,
        report.val_mse,
        report.final_learning_rate
    );
    std::fs::write(out.join("train_report.txt"), format!("{text}seconds = {:.2}\n", report.seconds))?;
    manifest.artifact_canonical("train_report.txt", text.as_bytes(), "without the seconds line");
    manifest.finish()?;
    print!("{text}");
    println!("seconds = {:.2}", report.seconds);
    Ok(())
}

fn open_model(path: &Path) -> Result<MlpParams> {
    ensure!(path.exists(), "model file {} does not exist", path.display());
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn bound_report(b: &ErrorBound, width: f64) -> String {
    format!(
        "eval_count = {}\nseed = {}\nepsilon_max_m = {:.6}\nepsilon_mean_m = {:.6}\nepsilon_max_pct_width = {:.2}\nepsilon_mean_pct_width = {:.2}\n",
        b.eval_count,
        b.seed,
        b.epsilon_max,
        b.epsilon_mean,
        100.0 * b.epsilon_max / width,
        100.0 * b.epsilon_mean / width
    )
}

pub fn eval_bound(loaded: &Loaded, out: &Path, model: Option<&Path>) -> Result<()> {
    let config = &loaded.config;
    let path = loaded.model_path(model).context("no model given: pass --model or set [model] path")?;
    let net = open_model(&path)?;
    let dims = net.layer_dims();
    ensure!(
        dims == config.training.layer_dims,
        "model {} has layer dims {dims:?} but the config expects {:?}",
        path.display(),
        config.training.layer_dims
    );
    let mut manifest = RunManifest::start("eval-bound", out, config)?;
    manifest.input(&path)?;
    let b = estimate_error_bound(&net, config.bound.samples, config.bound.seed, &config.vehicle);
    let text = bound_report(&b, config.vehicle.width);
    std::fs::write(out.join("bound.txt"), &text)?;
    manifest.artifact("bound.txt")?;
    manifest.finish()?;
    print!("{text}");
    Ok(())
}

pub struct RunOptions<'a> {
    pub model: Option<&'a Path>,
    pub no_filter: bool,
}

/// A config with everything the run needs pinned: absolute model path and
/// a concrete epsilon.
pub struct Prepared {
    pub config: Config,
    pub scenario: ScenarioConfig,
    pub net: Option<MlpParams>,
    pub model_path: Option<PathBuf>,
}

pub fn prepare_run(loaded: &Loaded, opts: &RunOptions) -> Result<Prepared> {
    let mut config = loaded.config.clone();
    if opts.no_filter {
        // the greedy nominal: no evasive reference line either
        config.scenario.filter_enabled = Some(false);
        config.scenario.y_nom = Some(0.0);
    }
    let needs_net = config.scenario.margin_mode != MarginMode::C2c;
    let model_path = loaded.model_path(opts.model);
    let (net, model_path) = match (needs_net, model_path) {
        (false, _) => (None, None),
        (true, None) => bail!(
            "margin mode {} needs a model: pass --model or set [model] path",
            config.scenario.margin_mode.name()
        ),
        (true, Some(p)) => {
            let net = open_model(&p)?;
            let abs = std::path::absolute(&p).unwrap_or(p);
            (Some(net), Some(abs))
        }
    };
    config.model.path = model_path.clone();
    if let (Some(net), None) = (&net, config.scenario.epsilon) {
        let b = estimate_error_bound(net, config.bound.samples, config.bound.seed, &config.vehicle);
        info!("epsilon from model: {:.6}", b.epsilon_max);
        config.scenario.epsilon = Some(b.epsilon_max);
    }
    let scenario = config.scenario.resolve();
    scenario.validate()?;
    Ok(Prepared {
        config,
        scenario,
        net,
        model_path,
    })
}

/// Runs a prepared scenario into `out`. The log is written even when the
/// run aborts, but an abort is still an error.
pub fn execute(p: &Prepared, out: &Path, command: &str) -> Result<Metrics> {
    let mut manifest = RunManifest::start(command, out, &p.config)?;
    if let Some(m) = &p.model_path {
        manifest.input(m)?;
    }
    let params = &p.config.vehicle;
    let log = run_scenario(&p.scenario, p.net.as_ref(), params)?;
    let file = std::fs::File::create(out.join("log.csv"))?;
    log.write_csv(std::io::BufWriter::new(file), true)?;
    manifest.artifact_canonical("log.csv", log.to_csv_string(false).as_bytes(), "with qp_ms zeroed");
    let metrics = compute_metrics(&log, &p.scenario, params);
    let summary = metrics.summary();
    std::fs::write(out.join("metrics.txt"), &summary)?;
    let timeless: String = summary.lines().filter(|l| !l.contains("_ms =")).map(|l| format!("{l}\n")).collect();
    manifest.artifact_canonical("metrics.txt", timeless.as_bytes(), "without the timing lines");
    manifest.finish()?;
    if let Some(why) = &log.aborted {
        bail!("simulation aborted at step {}: {why}", log.records.len());
    }
    Ok(metrics)
}

pub fn run(loaded: &Loaded, out: &Path, opts: &RunOptions) -> Result<()> {
    let p = prepare_run(loaded, opts)?;
    let m = execute(&p, out, "run")?;
    print!("{}", m.summary());
    Ok(())
}

pub fn compare(a: &Loaded, b: &Loaded, labels: [String; 2], out: &Path) -> Result<()> {
    let opts = RunOptions {
        model: None,
        no_filter: false,
    };
    let (pa, pb) = (prepare_run(a, &opts)?, prepare_run(b, &opts)?);
    ensure!(
        pa.scenario.kind == pb.scenario.kind,
        "cannot compare a {} run with a {} run",
        pa.scenario.kind.name(),
        pb.scenario.kind.name()
    );
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| execute(&pa, &out.join("a"), "run"));
        let hb = s.spawn(|| execute(&pb, &out.join("b"), "run"));
        (ha.join().expect("run a panicked"), hb.join().expect("run b panicked"))
    });
    let (ma, mb) = (ra.context("run a")?, rb.context("run b")?);
    let table = compare_table(&[(&labels[0], &ma), (&labels[1], &mb)]);
    std::fs::write(out.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn metric_rows(m: &Metrics) -> Vec<(&'static str, String)> {
    let t = |v: Option<f64>| v.map_or("-".to_string(), |t| format!("{t:.2}"));
    vec![
        ("completed", m.completed.to_string()),
        ("completion_time_s", t(m.completion_time)),
        ("min_mtv_margin_m", format!("{:.4}", m.min_mtv_margin)),
        ("min_c2c_margin_m", format!("{:.4}", m.min_c2c_margin)),
        ("evasion_i_pct", format!("{:.1}", m.evasion_i_pct)),
        ("evasion_j_pct", format!("{:.1}", m.evasion_j_pct)),
        ("evasion_mean_pct", format!("{:.1}", m.evasion_mean_pct)),
        ("relaxed_steps", m.relaxed_steps.to_string()),
        ("qp_mean_ms", format!("{:.4}", m.qp_mean_ms)),
        ("filter_mean_ms", format!("{:.4}", m.filter_mean_ms)),
    ]
}

pub fn compare_table(runs: &[(&String, &Metrics)]) -> String {
    let rows: Vec<_> = runs.iter().map(|(_, m)| metric_rows(m)).collect();
    let mut s = format!("{:<20}", "metric");
    for (label, _) in runs {
        s += &format!(" {label:>16}");
    }
    s.push('\n');
    for (n, (name, _)) in rows[0].iter().enumerate() {
        s += &format!("{name:<20}");
        for r in &rows {
            s += &format!(" {:>16}", r[n].1);
        }
        s.push('\n');
    }
    s
}
