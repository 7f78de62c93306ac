//! Python bindings. Primitive sets cross the boundary as prims-JSON
//! strings, depth images as flat lists of 64×64 floats.

use std::path::Path;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use primrnn::encoder::DepthImage;
use primrnn::geom::PointCloud;
use primrnn::io::{read_obj, read_weights, write_weights, PrimsFile, PrimsMetadata};
use primrnn::metrics;
use primrnn::parser::{fit_primitives, ParserConfig, PrimitiveSet};
use primrnn::pipeline::{self, stage, stage_seed, PipelineConfig};
use primrnn::render;
use primrnn::seqgen::{ModelConfig, SamplingMode};
use primrnn::Error;

create_exception!(primrnn_py, PrimrnnError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PrimrnnError::new_err(format!("{}: {e}", e.kind())),
    }
}

fn config(toml: Option<&str>, seed: Option<u64>) -> PyResult<PipelineConfig> {
    let mut cfg = match toml {
        Some(t) => PipelineConfig::from_toml(t).map_err(to_py)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn prims_json(set: &PrimitiveSet, meta: PrimsMetadata) -> PyResult<String> {
    serde_json::to_string(&PrimsFile::from_set(set, meta)).map_err(|e| to_py(e.into()))
}

fn parse_prims(text: &str) -> PyResult<PrimsFile> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("prims JSON: {e}")))
}

/// Fits cuboids to an `n × 3` point list; returns prims JSON.
#[pyfunction]
#[pyo3(signature = (points, seed=0, config=None))]
fn fit_points(py: Python<'_>, points: Vec<[f64; 3]>, seed: u64, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config, Some(seed))?;
    let cloud = PointCloud::new(points.into_iter().map(Into::into).collect());
    let parser = ParserConfig {
        seed: stage_seed(cfg.seed, stage::FIT, 0),
        ..cfg.parser
    };
    let report = py.detach(|| fit_primitives(&cloud, &parser)).map_err(to_py)?;
    let meta = PrimsMetadata {
        seed: Some(parser.seed),
        energy: Some(report.energies.iter().sum()),
        coverage: Some(report.coverage),
        ..Default::default()
    };
    prims_json(&report.set, meta)
}

/// Fits cuboids to an OBJ mesh; returns prims JSON.
#[pyfunction]
#[pyo3(signature = (path, seed=0, config=None))]
fn fit_mesh(py: Python<'_>, path: &str, seed: u64, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config, Some(seed))?;
    let mesh = read_obj(Path::new(path)).map_err(to_py)?;
    let (_, report) = py.detach(|| pipeline::fit_mesh(&mesh, &cfg, 0)).map_err(to_py)?;
    let meta = PrimsMetadata {
        source_file: Some(path.to_string()),
        seed: Some(stage_seed(cfg.seed, stage::FIT, 0)),
        energy: Some(report.energies.iter().sum()),
        coverage: Some(report.coverage),
        ..Default::default()
    };
    prims_json(&report.set, meta)
}

/// Depth views of an OBJ mesh, each a list of 4096 values.
#[pyfunction]
#[pyo3(signature = (path, seed=0, views=5))]
fn render_depth(path: &str, seed: u64, views: usize) -> PyResult<Vec<Vec<f64>>> {
    let mesh = read_obj(Path::new(path)).map_err(to_py)?;
    let cfg = render::RenderConfig {
        views,
        ..Default::default()
    };
    let imgs = render::render_depth(&mesh, &cfg, seed).map_err(to_py)?;
    Ok(imgs.into_iter().map(|i| i.values().to_vec()).collect())
}

#[pyfunction]
fn iou(prims: &str, gt_path: &str) -> PyResult<f64> {
    let set = parse_prims(prims)?.to_set();
    metrics::iou(&set.primitives, &read_obj(Path::new(gt_path)).map_err(to_py)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (prims, gt_path, n_samples=5000, seed=0))]
fn surface_distance(prims: &str, gt_path: &str, n_samples: usize, seed: u64) -> PyResult<f64> {
    let set = parse_prims(prims)?.to_set();
    let gt = read_obj(Path::new(gt_path)).map_err(to_py)?;
    metrics::surface_distance(&set.primitives, &gt, n_samples, seed).map_err(to_py)
}

/// Builds a token dataset; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (mesh_dir, out_dir, seed=0, config=None))]
fn build_dataset(py: Python<'_>, mesh_dir: &str, out_dir: &str, seed: u64, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config, Some(seed))?;
    let m = py
        .detach(|| pipeline::build_dataset(Path::new(mesh_dir), Path::new(out_dir), &cfg))
        .map_err(to_py)?;
    serde_json::to_string(&m).map_err(|e| to_py(e.into()))
}

/// Trains on a dataset directory and writes the weights; returns the
/// per-epoch training losses.
#[pyfunction]
#[pyo3(signature = (dataset_dir, weights_path, seed=0, tiny=false, epochs=None, config=None))]
fn train(
    py: Python<'_>,
    dataset_dir: &str,
    weights_path: &str,
    seed: u64,
    tiny: bool,
    epochs: Option<usize>,
    config: Option<&str>,
) -> PyResult<Vec<f64>> {
    let mut cfg = self::config(config, Some(seed))?;
    if tiny {
        cfg.model = ModelConfig::tiny();
    }
    if let Some(n) = epochs {
        cfg.train.max_epochs = n;
    }
    let out = py
        .detach(|| {
            let data = pipeline::load_dataset(Path::new(dataset_dir), cfg.conditioned)?;
            let out = pipeline::train_model(&data, &cfg)?;
            write_weights(Path::new(weights_path), &out.weights)?;
            Ok::<_, Error>(out)
        })
        .map_err(to_py)?;
    Ok(out.train_loss)
}

fn generate_config(max_steps: usize, mode: &str) -> PyResult<pipeline::GenerateConfig> {
    let mode = match mode {
        "train" => SamplingMode::Train,
        "test" => SamplingMode::Test,
        "greedy" => SamplingMode::Greedy,
        other => return Err(PyValueError::new_err(format!("unknown sampling mode {other:?}"))),
    };
    Ok(pipeline::GenerateConfig { max_steps, mode })
}

/// Unconditioned synthesis; returns prims JSON.
#[pyfunction]
#[pyo3(signature = (weights_path, seed=0, max_steps=60, mode="test"))]
fn generate(weights_path: &str, seed: u64, max_steps: usize, mode: &str) -> PyResult<String> {
    let w = read_weights(Path::new(weights_path)).map_err(to_py)?;
    let set = pipeline::synthesize(&w, &generate_config(max_steps, mode)?, seed).map_err(to_py)?;
    prims_json(&set, PrimsMetadata::default())
}

/// Completion from a 64×64 depth image given as 4096 values.
#[pyfunction]
#[pyo3(signature = (weights_path, depth, seed=0, max_steps=60, mode="test"))]
fn complete(weights_path: &str, depth: Vec<f64>, seed: u64, max_steps: usize, mode: &str) -> PyResult<String> {
    let w = read_weights(Path::new(weights_path)).map_err(to_py)?;
    let img = DepthImage::new(depth).map_err(to_py)?;
    let set = pipeline::complete(&img, &w, &generate_config(max_steps, mode)?, seed).map_err(to_py)?;
    prims_json(&set, PrimsMetadata::default())
}

#[pymodule]
fn primrnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PrimrnnError", m.py().get_type::<PrimrnnError>())?;
    m.add_function(wrap_pyfunction!(fit_points, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(render_depth, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(surface_distance, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(complete, m)?)?;
    Ok(())
}
