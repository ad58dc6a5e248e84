use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use xbar_core::conv::resnet20_layers;
use xbar_core::experiment::{run_layer_experiment, LayerExperiment, Variant};
use xbar_core::net::ops::argmax;
use xbar_core::net::zoo::{resnet20, synthetic_images, tiny_cnn};
use xbar_core::net::{
    labels_from_tensor, load_model, quantization_sweep, read_tensor, save_model, software_forward, write_tensor,
    AnalogNetwork, BitSetting, PrepareOptions, Taps, Tensor, TENSOR_MAGIC,
};
use xbar_core::vmm::save_engine;
use xbar_core::{iteration_count, ConductanceMatrix, KernelType, Matrix, XbarError};

use crate::config::ExperimentConfig;
use crate::Common;

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn pretty(value: &impl Serialize) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, XbarError> {
    serde_json::from_slice(bytes).map_err(|e| XbarError::Format(format!("{}: {e}", path.display())))
}

/// A matrix from a JSON array of rows or a rank-2 tensor file.
fn read_matrix(path: &Path) -> anyhow::Result<Matrix> {
    let bytes = read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = Tensor::from_bytes(&bytes)?;
        let [r, c] = t.dims[..] else {
            return Err(XbarError::Format(format!("{}: expected a rank-2 tensor, got dims {:?}", path.display(), t.dims)).into());
        };
        return Ok(Matrix::new(r, c, t.data.iter().map(|v| *v as f64).collect())?);
    }
    let rows: Vec<Vec<f64>> = parse_json(path, &bytes)?;
    matrix_from_rows(path, rows)
}

fn matrix_from_rows(path: &Path, rows: Vec<Vec<f64>>) -> anyhow::Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(XbarError::Format(format!("{}: rows differ in length", path.display())).into());
    }
    Ok(Matrix::new(rows.len(), cols, rows.concat())?)
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

fn parse_dims<const N: usize>(s: &str, what: &str) -> Result<[usize; N], XbarError> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| XbarError::InvalidConfig(format!("{what} must look like {}, got {s:?}", vec!["N"; N].join("x"))))?;
    let dims: [usize; N] = parts
        .try_into()
        .map_err(|_| XbarError::InvalidConfig(format!("{what} needs {N} dimensions, got {s:?}")))?;
    if dims.contains(&0) {
        return Err(XbarError::InvalidConfig(format!("{what} has a zero dimension")));
    }
    Ok(dims)
}

fn parse_taps(s: &str) -> Taps {
    match s.trim() {
        "all" => Taps::All,
        "none" | "" => Taps::None,
        names => Taps::Layers(split_list(names).map(String::from).collect()),
    }
}

/// Timestamps live only here so the other outputs stay reproducible.
fn write_run_log(dir: &Path, extra: &str) -> anyhow::Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let args: Vec<String> = std::env::args().collect();
    let log = format!(
        "finished_unix={secs}\nthreads={}\nargs={}\n{extra}",
        rayon::current_num_threads(),
        args.join(" ")
    );
    write(&dir.join("run.log"), log)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn simulate(common: &Common, conductance: &Path, input: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let g = read_matrix(conductance)?;
    let v: Vec<f64> = parse_json(input, &read(input)?)?;
    let config = cfg.crossbar_for(g.rows, g.cols)?;
    let g = ConductanceMatrix::new(g.rows, g.cols, g.data)?;
    let sol = xbar_core::simulate(&config, &g, &v)?;
    let doc = json!({
        "rows": config.rows,
        "cols": config.cols,
        "i_out": sol.i_out,
        "v_top": sol.v_top,
        "v_bot": sol.v_bot,
        "residual": sol.residual,
    });
    write(out, pretty(&doc)?)
}

pub fn build_engine(common: &Common, weights: &Path, samples: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let w = read_matrix(weights)?;
    let s = read_matrix(samples)?;
    if s.rows == 0 {
        return Err(XbarError::Contract("at least one sample vector is needed".into()).into());
    }
    if s.cols != w.rows {
        return Err(XbarError::Contract(format!("samples have {} entries, weights have {} rows", s.cols, w.rows)).into());
    }
    if s.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(XbarError::Contract("samples must be finite and non-negative".into()).into());
    }
    let inputs: Vec<Vec<f64>> = (0..s.rows).map(|i| s.row(i).to_vec()).collect();
    let x_max = match cfg.x_max {
        Some(x) => x,
        None => Some(s.max()).filter(|m| *m > 0.0).unwrap_or(1.0),
    };
    if s.max() > x_max {
        return Err(XbarError::Contract(format!("samples exceed x_max = {x_max}")).into());
    }
    let config = cfg.crossbar_for(w.rows, w.cols)?;
    let engine = xbar_core::build_engine(&config, &w, x_max, &inputs, &cfg.build_options())?;
    save_engine(&engine, out)?;
    if let Some(r) = &engine.conversion {
        eprintln!(
            "engine {}x{}: conversion {} after {} solves, {} saturated devices",
            config.rows,
            config.cols,
            if r.converged { "converged" } else { "did not converge" },
            r.iterations,
            r.saturated_total()
        );
    }
    Ok(())
}

pub struct LayerExpArgs {
    pub kernel_type: u8,
    pub crossbar_size: String,
    pub sparsity: String,
    pub conv_amp_sweep: bool,
    pub variants: Option<String>,
    pub eval_samples: Option<usize>,
}

pub fn layer_exp(common: &Common, a: LayerExpArgs, out: &Path) -> anyhow::Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = a.eval_samples {
        cfg.eval_samples = n;
        cfg.validate()?;
    }
    let [rows, cols] = parse_dims::<2>(&a.crossbar_size, "--crossbar-size")?;
    let sparsities = split_list(&a.sparsity)
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| (0.0..1.0).contains(v))
                .ok_or_else(|| XbarError::InvalidConfig(format!("sparsity must lie in [0, 1), got {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if sparsities.is_empty() {
        return Err(XbarError::InvalidConfig("no sparsity given".into()).into());
    }
    let variants = match &a.variants {
        Some(v) => split_list(v).map(str::parse).collect::<Result<Vec<Variant>, _>>()?,
        None => Variant::ALL.to_vec(),
    };
    let mut exp = LayerExperiment::new(KernelType::from_index(a.kernel_type)?, rows, cols);
    exp.sparsities = sparsities;
    exp.eval_samples = cfg.eval_samples;
    exp.config = cfg.crossbar_config(rows, cols);
    exp.build = cfg.build_options();
    exp.variants = variants;
    exp.amplitudes = a.conv_amp_sweep.then(|| cfg.amplitudes.clone());
    exp.seed = cfg.seed;

    let result = run_layer_experiment(&exp)?;
    write(&out.join("variants.csv"), result.variants_csv())?;
    write(&out.join("histogram.csv"), result.histogram_csv())?;
    if a.conv_amp_sweep {
        write(&out.join("amplitudes.csv"), result.amplitudes_csv())?;
    }
    write(&out.join("summary.json"), pretty(&json!({ "experiment": exp, "result": result }))?)?;
    write_run_log(out, "")
}

pub struct RunNetArgs {
    pub model: PathBuf,
    pub images: PathBuf,
    pub labels: Option<PathBuf>,
    pub calibration_images: Option<PathBuf>,
    pub bits: String,
    pub taps: String,
}

pub fn run_net(common: &Common, a: RunNetArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let bits = split_list(&a.bits).map(str::parse).collect::<Result<Vec<BitSetting>, _>>()?;
    if bits.is_empty() {
        return Err(XbarError::InvalidConfig("no bit setting given".into()).into());
    }
    let taps = parse_taps(&a.taps);
    let model = load_model(&a.model)?;
    let images = read_tensor(&a.images)?.to_images()?;
    let labels = a
        .labels
        .as_deref()
        .map(|p| read_tensor(p).and_then(|t| labels_from_tensor(&t)))
        .transpose()?;
    let calibration = match &a.calibration_images {
        Some(p) => read_tensor(p)?.to_images()?,
        None => images.iter().take(cfg.calibration_images).cloned().collect(),
    };

    let mut opts = PrepareOptions::new(cfg.crossbar_config(1, 1));
    opts.build = cfg.build_options();
    opts.max_samples = cfg.max_layer_samples;
    let net = AnalogNetwork::prepare(&model, &calibration, &opts)?;
    let sweep = quantization_sweep(&net, &images, labels.as_deref(), &bits, &taps)?;

    let mut acc = String::from("bits,images,accuracy,agreement,final_layer,final_mean,final_worst,final_local_mean,input_clips\n");
    for r in &sweep.rows {
        let _ = writeln!(
            acc,
            "{},{},{},{},{},{},{},{},{}",
            r.bits,
            r.images,
            opt_cell(r.accuracy),
            opt_cell(r.agreement),
            r.final_layer,
            r.final_mean,
            r.final_worst,
            r.final_local_mean,
            r.input_clips
        );
    }
    write(&out.join("accuracy.csv"), acc)?;

    let mut layers = String::from("bits,layer,local_mean,local_worst,end_to_end_mean,end_to_end_worst\n");
    for (row, report) in sweep.rows.iter().zip(&sweep.reports) {
        for l in &report.layers {
            let _ = writeln!(
                layers,
                "{},{},{},{},{},{}",
                row.bits, l.layer, l.local.mean, l.local.worst, l.end_to_end.mean, l.end_to_end.worst
            );
            write(
                &out.join(format!("errors_{}_{}.csv", row.bits, l.layer)),
                xbar_core::report::csv_of(report.rows_for(&l.layer)),
            )?;
        }
        report.write_json(&out.join(format!("report_{}.json", row.bits)))?;
    }
    write(&out.join("layers.csv"), layers)?;

    let summary = json!({
        "model": model.name,
        "images": images.len(),
        "calibration_images": calibration.len(),
        "software_accuracy": sweep.software_accuracy,
        "rows": sweep.rows,
        "config": cfg,
    });
    write(&out.join("summary.json"), pretty(&summary)?)?;
    write_run_log(out, "")
}

pub fn gen_model(arch: &str, input: &str, classes: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let model = match arch {
        "tiny" => tiny_cnn(parse_dims::<3>(input, "--input")?, classes, seed)?,
        "resnet20" => resnet20(seed)?,
        other => return Err(XbarError::InvalidConfig(format!("unknown architecture {other:?}")).into()),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_model(&model, out)?;
    Ok(())
}

pub fn gen_images(
    count: usize,
    shape: &str,
    seed: u64,
    out: &Path,
    label_model: Option<&Path>,
    labels_out: Option<&Path>,
) -> anyhow::Result<()> {
    let images = synthetic_images(count, parse_dims::<3>(shape, "--shape")?, seed)?;
    write(out, Tensor::from_images(&images)?.to_bytes())?;
    if let (Some(m), Some(lo)) = (label_model, labels_out) {
        let model = load_model(m)?;
        let labels = images
            .iter()
            .map(|im| Ok(argmax(&software_forward(&model, im)?.last().expect("non-empty").data) as f32))
            .collect::<Result<Vec<_>, XbarError>>()?;
        if let Some(dir) = lo.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        write_tensor(lo, &Tensor::new(vec![labels.len()], labels)?)?;
    }
    Ok(())
}

pub fn table(out: Option<&Path>) -> anyhow::Result<()> {
    let (rows, total) = iteration_count(&resnet20_layers())?;
    let mut s = String::from("layer,rows,cols,iterations,parallel\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.name, r.crossbar.0, r.crossbar.1, r.iterations, r.parallel);
    }
    let _ = writeln!(s, "Total,,,{total},");
    match out {
        Some(p) => write(p, s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}
