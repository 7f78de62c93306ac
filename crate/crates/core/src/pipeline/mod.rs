//! End-to-end orchestration: mesh → cloud → primitives → tokens and depth
//! views, training, synthesis and completion, all driven by one seed.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_depth, nearest_entry, DepthImage};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, TriangleMesh};
use crate::io::{
    read_depth, read_json, read_obj, read_sequences, write_depth, write_json, write_prims, write_sequences,
    PrimsFile, PrimsMetadata, SequenceRecord,
};
use crate::parser::{fit_primitives, FitReport, ParserConfig, PrimitiveSet};
use crate::render::{render_depth, RenderConfig};
use crate::seqgen::{
    detokenize, generate, tokenize, train, Dataset, ModelConfig, ModelWeights, SamplingMode, Stats, TrainConfig,
    TrainItem, TrainOutcome,
};
use crate::synth::{derive_seed, rng};

/// Stream identifiers mixed into the global seed.
pub mod stage {
    pub const CLOUD: u64 = 1;
    pub const FIT: u64 = 2;
    pub const RENDER: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const GENERATE: u64 = 5;
}

pub fn stage_seed(global: u64, stage: u64, index: u64) -> u64 {
    derive_seed(global, &[stage, index])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudMode {
    /// Jittered grid samples inside the mesh (winding-number test).
    #[default]
    Volume,
    /// Area-weighted samples on the surface.
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    pub mode: CloudMode,
    pub points: usize,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            mode: CloudMode::Volume,
            points: 3000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub meshes: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub max_steps: usize,
    pub mode: SamplingMode,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            max_steps: 60,
            mode: SamplingMode::Test,
        }
    }
}

/// Every setting of the pipeline; each field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Global seed; every stochastic stage derives its stream from it.
    pub seed: u64,
    /// Train with depth views as conditioning input.
    pub conditioned: bool,
    pub paths: PathsConfig,
    pub cloud: CloudConfig,
    pub parser: ParserConfig,
    pub render: RenderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            conditioned: true,
            paths: PathsConfig::default(),
            cloud: CloudConfig::default(),
            parser: ParserConfig::default(),
            render: RenderConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count()),
            msg: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cloud.points == 0 {
            return Err(Error::invalid("cloud.points must be positive"));
        }
        if self.render.views == 0 {
            return Err(Error::invalid("render.views must be positive"));
        }
        if self.generate.max_steps < 3 {
            return Err(Error::invalid("generate.max_steps must be at least 3"));
        }
        self.parser.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Training settings with the seed taken from the global one.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: stage_seed(self.seed, stage::TRAIN, 0),
            ..self.train
        }
    }
}

/// Stratified samples inside a closed mesh: one jittered sample per grid
/// cell of the bounding box, kept when inside. The grid is refined until
/// about `count` samples land inside.
pub fn sample_volume(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
    let b = mesh.bounds().ok_or(Error::EmptyMesh)?;
    let ext = b.extent();
    if ext.min() <= 1e-9 * ext.max() {
        return Ok(Vec::new()); // flat: nothing inside
    }
    let vol = ext.x * ext.y * ext.z;
    let mut spacing = (vol / count as f64).cbrt();
    let mut kept = Vec::new();
    for attempt in 0..4u64 {
        let mut r = rng(derive_seed(seed, &[attempt]));
        let n = [0, 1, 2].map(|a| ((ext[a] / spacing).ceil() as usize).max(1));
        kept.clear();
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let u = Vector3::new(
                        (i as f64 + r.random::<f64>()) / n[0] as f64,
                        (j as f64 + r.random::<f64>()) / n[1] as f64,
                        (k as f64 + r.random::<f64>()) / n[2] as f64,
                    );
                    let p = b.min + ext.component_mul(&u);
                    if mesh.contains(&p) {
                        kept.push(p);
                    }
                }
            }
        }
        if kept.len() as f64 >= 0.8 * count as f64 {
            break;
        }
        let ratio = (kept.len().max(1) as f64 / count as f64).min(1.0);
        spacing *= ratio.cbrt().max(0.25);
    }
    Ok(kept)
}

/// The point cloud the parser sees for a mesh. Volume sampling falls back
/// to the surface when the mesh encloses nothing (open meshes).
pub fn mesh_cloud(mesh: &TriangleMesh, cfg: &CloudConfig, seed: u64) -> Result<PointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if cfg.mode == CloudMode::Volume {
        let pts = sample_volume(mesh, cfg.points, seed)?;
        if pts.len() >= 10 {
            return Ok(PointCloud::new(pts));
        }
        log::warn!("mesh encloses no volume; sampling its surface instead");
    }
    mesh.sample_surface(cfg.points, seed)
}

/// Samples and parses one mesh; `index` selects the seed stream.
pub fn fit_mesh(mesh: &TriangleMesh, cfg: &PipelineConfig, index: u64) -> Result<(PointCloud, FitReport)> {
    let cloud = mesh_cloud(mesh, &cfg.cloud, stage_seed(cfg.seed, stage::CLOUD, index))?;
    let parser = ParserConfig {
        seed: stage_seed(cfg.seed, stage::FIT, index),
        ..cfg.parser
    };
    let report = fit_primitives(&cloud, &parser)?;
    Ok((cloud, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub name: String,
    pub source_file: String,
    pub seed: u64,
    pub primitives: usize,
    pub fit_energy: f64,
    pub coverage: f64,
    pub coverage_reached: bool,
    pub views: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub source_file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub stats: Stats,
    pub shapes: Vec<ShapeRecord>,
    pub failures: Vec<FailureRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "stats.json";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";

/// `.obj` files of a directory, sorted by name.
pub fn list_meshes(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Sources are recorded relative to the mesh directory so that a dataset
/// does not depend on where it was built.
fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

struct Parsed {
    name: String,
    source: String,
    index: u64,
    report: FitReport,
    views: Vec<DepthImage>,
}

fn parse_one(path: &Path, index: u64, cfg: &PipelineConfig) -> Result<Parsed> {
    let mesh = read_obj(path)?;
    let (_, report) = fit_mesh(&mesh, cfg, index)?;
    if report.set.is_empty() {
        return Err(Error::EmptyPrimitiveSet);
    }
    let views = render_depth(&mesh, &cfg.render, stage_seed(cfg.seed, stage::RENDER, index))?;
    let name = path.file_stem().map_or_else(|| format!("shape{index}"), |s| s.to_string_lossy().into_owned());
    Ok(Parsed {
        name,
        source: file_name(path),
        index,
        report,
        views,
    })
}

/// Parses every mesh in `mesh_dir`, renders its depth views and writes the
/// token dataset to `out_dir`. Shapes that fail are logged and listed in
/// the manifest; the build fails only when none succeeds.
pub fn build_dataset(mesh_dir: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let meshes = list_meshes(mesh_dir)?;
    if meshes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results: Vec<Result<Parsed>> = meshes
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let r = parse_one(p, i as u64, cfg);
            match &r {
                Ok(s) => log::info!("[{}] {} primitives, coverage {:.3}", s.name, s.report.set.len(), s.report.coverage),
                Err(e) => log::warn!("[{}] skipped: {e}", p.display()),
            }
            r
        })
        .collect();
    let mut parsed = Vec::new();
    let mut failures = Vec::new();
    for (r, p) in results.into_iter().zip(&meshes) {
        match r {
            Ok(s) => parsed.push(s),
            Err(e) => failures.push(FailureRecord {
                source_file: file_name(p),
                error: e.to_string(),
            }),
        }
    }
    if parsed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = Stats::fit(parsed.iter().map(|p| &p.report.set))?;

    let mut records = Vec::new();
    let mut shapes = Vec::new();
    for p in &parsed {
        let seq = tokenize(&p.report.set, &stats)?;
        let mut views = Vec::new();
        for (k, img) in p.views.iter().enumerate() {
            let rel = format!("depth/{}_v{k}.pgm", p.name);
            write_depth(&out_dir.join(&rel), img)?;
            views.push(rel);
        }
        let meta = PrimsMetadata {
            source_file: Some(p.source.clone()),
            seed: Some(stage_seed(cfg.seed, stage::FIT, p.index)),
            energy: Some(p.report.energies.iter().sum()),
            coverage: Some(p.report.coverage),
            ..Default::default()
        };
        write_prims(
            &out_dir.join(format!("prims/{}.prims.json", p.name)),
            &PrimsFile::from_set(&p.report.set, meta.clone()),
        )?;
        shapes.push(ShapeRecord {
            name: p.name.clone(),
            source_file: p.source.clone(),
            seed: meta.seed.unwrap_or_default(),
            primitives: p.report.set.len(),
            fit_energy: meta.energy.unwrap_or_default(),
            coverage: p.report.coverage,
            coverage_reached: p.report.coverage_reached,
            views: views.clone(),
        });
        records.push(SequenceRecord {
            name: p.name.clone(),
            tokens: seq.tokens,
            views,
            symmetry_plane: p.report.set.symmetry_plane,
        });
    }
    write_sequences(&out_dir.join(SEQUENCES_FILE), &records)?;
    write_json(&out_dir.join(STATS_FILE), &stats)?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        stats,
        shapes,
        failures,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset directory: one item per (sequence, depth view) pair, or
/// one depth-free item per sequence when `with_depth` is off or a sequence
/// has no views.
pub fn load_dataset(dir: &Path, with_depth: bool) -> Result<Dataset> {
    let stats: Stats = read_json(&dir.join(STATS_FILE))?;
    stats.validate()?;
    let records = read_sequences(&dir.join(SEQUENCES_FILE))?;
    let mut items = Vec::new();
    for r in records {
        let item = |depth| TrainItem {
            name: r.name.clone(),
            tokens: r.tokens.clone(),
            depth,
            symmetry_plane: r.symmetry_plane,
        };
        if with_depth && !r.views.is_empty() {
            for v in &r.views {
                items.push(item(Some(read_depth(&dir.join(v))?)));
            }
        } else {
            items.push(item(None));
        }
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { stats, items })
}

pub fn train_model(data: &Dataset, cfg: &PipelineConfig) -> Result<TrainOutcome> {
    train(data, cfg.model, &cfg.train_config())
}

fn stats_of(w: &ModelWeights) -> Result<Stats> {
    w.stats.ok_or_else(|| Error::invalid("weights carry no normalization statistics"))
}

/// Unconditioned synthesis started from the first primitive of a training
/// shape drawn uniformly by `seed`.
pub fn synthesize(w: &ModelWeights, cfg: &GenerateConfig, seed: u64) -> Result<PrimitiveSet> {
    let stats = stats_of(w)?;
    if w.bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let entry = &w.bank[rng(derive_seed(seed, &[0])).random_range(0..w.bank.len())];
    let seq = generate(None, &entry.first[0], w, cfg.max_steps, cfg.mode, derive_seed(seed, &[1]))?;
    Ok(detokenize(&seq, &stats, entry.symmetry_plane.as_ref()))
}

/// Depth-conditioned completion: encode, start from the nearest training
/// view's first primitive, generate, decode.
pub fn complete(depth: &DepthImage, w: &ModelWeights, cfg: &GenerateConfig, seed: u64) -> Result<PrimitiveSet> {
    let stats = stats_of(w)?;
    let d = encode_depth(depth, w)?;
    let entry = &w.bank[nearest_entry(&d, &w.bank)?];
    let seq = generate(Some(&d), &entry.first[0], w, cfg.max_steps, cfg.mode, seed)?;
    Ok(detokenize(&seq, &stats, entry.symmetry_plane.as_ref()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Primitive;
    use crate::io::write_obj;
    use crate::synth::mesh_of;

    #[test]
    fn config_defaults_and_toml_round_trip() {
        let cfg = PipelineConfig::from_toml("seed = 7\n[train]\nmax_epochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.parser, ParserConfig::default());
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig::from_toml("seed = \"x\"").is_err());
        assert_ne!(cfg.train_config().seed, PipelineConfig::default().train_config().seed);
    }

    #[test]
    fn volume_samples_stay_inside() {
        let p = Primitive::axis_aligned(Vector3::new(1.0, 0.5, 0.25), Vector3::new(0.3, 0.0, 0.0));
        let m = mesh_of(&[p]);
        let pts = sample_volume(&m, 2000, 1).unwrap();
        assert!(pts.len() >= 1600 && pts.len() <= 2600, "{}", pts.len());
        assert!(pts.iter().all(|q| p.contains(q)));
        assert_eq!(pts, sample_volume(&m, 2000, 1).unwrap());
        // a flat quad encloses nothing and falls back to the surface
        let quad = TriangleMesh::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::new(1.0, 1.0, 0.0), Vector3::y()],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap();
        let c = mesh_cloud(&quad, &CloudConfig::default(), 2).unwrap();
        assert_eq!(c.len(), 3000);
    }

    #[test]
    fn empty_mesh_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_dataset(dir.path(), out.path(), &PipelineConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn dataset_of_cuboids() {
        let dir = tempfile::tempdir().unwrap();
        let sizes = [[1.0, 0.6, 0.4], [0.5, 0.5, 0.9], [0.8, 0.3, 0.3]];
        for (i, s) in sizes.iter().enumerate() {
            let p = Primitive::axis_aligned(Vector3::new(s[0], s[1], s[2]), Vector3::zeros());
            write_obj(&dir.path().join(format!("c{i}.obj")), &mesh_of(&[p])).unwrap();
        }
        let cfg = PipelineConfig {
            seed: 3,
            parser: ParserConfig {
                restarts: 4,
                ..ParserConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = tempfile::tempdir().unwrap();
        let m = build_dataset(dir.path(), out.path(), &cfg).unwrap();
        assert_eq!(m.shapes.len(), 3);
        assert!(m.failures.is_empty());
        let views: usize = m.shapes.iter().map(|s| s.views.len()).sum();
        assert_eq!(views, 15);
        let data = load_dataset(out.path(), true).unwrap();
        assert_eq!(data.items.len(), 15);
        assert!(data.items.iter().all(|i| i.tokens.len() % 3 == 0 && i.depth.is_some()));
        assert_eq!(load_dataset(out.path(), false).unwrap().items.len(), 3);
    }
}
