//! The `fit`, `predict` and `cv` commands and the layout of a model
//! directory:
//!
//! ```text
//! out/
//!   model.cfg        resolved configuration, reusable as a config file
//!   data.csv         training data in raw units
//!   samples.txt      saved posterior samples
//!   trace.csv        per-round leaf count and log posterior
//!   map_tree.txt     highest-posterior sample
//!   checkpoints/     latest chain states
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::FitConfig;
use super::cv::{cross_validate, CvReport};
use super::data::{load_csv, load_queries, Dataset, ScaleInfo};
use crate::error::{Result, TgpError};
use crate::predict::{aggregate, check_levels, write_summary, PredictiveSummary};
use crate::sampler::{
    map_tree, parse_samples, run_chains, write_samples, write_trace, ChainFailure, MoveStats,
    PosteriorSample,
};
use crate::tree::serialize;

pub const MODEL_CONFIG: &str = "model.cfg";
pub const DATA_FILE: &str = "data.csv";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const MAP_FILE: &str = "map_tree.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| TgpError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TgpError::io(path, e))
}

/// Loads the data named by a config and validates the whole config
/// against it.
pub fn load_config_data(cfg: &FitConfig) -> Result<Dataset> {
    let data = load_csv(&cfg.data, cfg.response.as_deref(), 1)?;
    let spec = cfg.model_spec(data.dim())?;
    data.check_min_rows(spec.n_min)?;
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub out: PathBuf,
    pub samples: usize,
    pub mean_leaves: f64,
    pub map_leaves: usize,
    pub stats: Vec<MoveStats>,
    pub failures: Vec<ChainFailure>,
}

pub fn cmd_fit(config_path: &Path) -> Result<FitReport> {
    let cfg = FitConfig::load(config_path)?;
    let data = load_config_data(&cfg)?;
    fit(&cfg, &data)
}

/// Runs the sampler on `data` and writes a model directory to `cfg.out`.
pub fn fit(cfg: &FitConfig, data: &Dataset) -> Result<FitReport> {
    let spec = cfg.model_spec(data.dim())?;
    data.check_min_rows(spec.n_min)?;
    let out = cfg.out.clone();
    let ck = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ck).map_err(|e| TgpError::io(&ck, e))?;

    let mut stored = cfg.clone();
    stored.data = PathBuf::from(DATA_FILE);
    stored.response = Some(data.response_name.clone());
    stored.out = PathBuf::from(".");
    write_text(&out.join(MODEL_CONFIG), &stored.render(&spec))?;
    data.write_csv(create(&out.join(DATA_FILE))?)?;

    let mut mcmc = cfg.mcmc.clone();
    mcmc.checkpoint_dir = Some(ck);
    let run = run_chains(&data.x, &data.z, &spec, &mcmc)?;
    if run.samples.is_empty() {
        return Err(match run.failures.first() {
            Some(f) if f.exit_code == 2 => TgpError::Numeric(f.message.clone()),
            Some(f) => TgpError::Structural(f.message.clone()),
            None => TgpError::EmptySamples,
        });
    }
    write_text(&out.join(SAMPLES_FILE), &write_samples(&run.samples))?;
    write_trace(&run.trace, create(&out.join(TRACE_FILE))?)?;
    let map = map_tree(&run.samples)?;
    write_text(&out.join(MAP_FILE), &write_samples(std::slice::from_ref(map)))?;
    let mean_leaves = run.samples.iter().map(|s| s.num_leaves() as f64).sum::<f64>()
        / run.samples.len() as f64;
    Ok(FitReport {
        out,
        samples: run.samples.len(),
        mean_leaves,
        map_leaves: map.num_leaves(),
        stats: run.stats,
        failures: run.failures,
    })
}

/// A model directory read back from disk.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub dir: PathBuf,
    pub config: FitConfig,
    pub data: Dataset,
    pub samples: Vec<PosteriorSample>,
}

impl FittedModel {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = FitConfig::load(&dir.join(MODEL_CONFIG))?;
        let data = load_csv(&dir.join(DATA_FILE), config.response.as_deref(), 1)?;
        let path = dir.join(SAMPLES_FILE);
        let text = fs::read_to_string(&path).map_err(|e| TgpError::io(&path, e))?;
        let samples = parse_samples(&text)?;
        if samples.is_empty() {
            return Err(TgpError::EmptySamples);
        }
        Ok(FittedModel {
            dir: dir.to_path_buf(),
            config,
            data,
            samples,
        })
    }

    pub fn map_tree(&self) -> Result<&PosteriorSample> {
        map_tree(&self.samples)
    }

    /// Summary at raw-unit query points.
    pub fn predict(&self, raw: &[Vec<f64>], levels: &[f64], seed: u64) -> Result<PredictiveSummary> {
        if let Some(bad) = raw.iter().find(|q| q.len() != self.data.dim()) {
            return Err(TgpError::DimensionMismatch {
                expected: self.data.dim(),
                found: bad.len(),
            });
        }
        let scaled: Vec<Vec<f64>> = raw.iter().map(|q| self.data.scale.scale_x(q)).collect();
        aggregate(
            &scaled,
            &self.samples,
            &self.data.x,
            &self.data.z,
            levels,
            self.data.scale.response,
            seed,
        )
    }
}

/// Parses a grid spec such as `41x1`: one point count per input, first
/// input varying slowest. Extra trailing factors equal to 1 are ignored.
pub fn parse_grid(spec: &str, dim: usize) -> Result<Vec<usize>> {
    let counts: Vec<usize> = spec
        .split(['x', 'X'])
        .map(|s| s.trim().parse::<usize>().ok().filter(|&c| c > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| TgpError::Parse(format!("grid spec `{spec}`: expected counts like 41x1")))?;
    if counts.len() < dim || counts[dim..].iter().any(|&c| c != 1) {
        return Err(TgpError::DimensionMismatch {
            expected: dim,
            found: counts.len(),
        });
    }
    Ok(counts[..dim].to_vec())
}

/// Raw-unit grid over the training ranges. Inputs with one point sit at
/// the value in `fix`, or mid-range when not fixed.
pub fn grid_points(
    counts: &[usize],
    scale: &ScaleInfo,
    names: &[String],
    fix: &[(String, f64)],
) -> Result<Vec<Vec<f64>>> {
    let dim = scale.dim();
    if counts.len() != dim {
        return Err(TgpError::DimensionMismatch {
            expected: dim,
            found: counts.len(),
        });
    }
    let mut problems = Vec::new();
    let mut fixed = vec![None; dim];
    for (name, v) in fix {
        match names.iter().position(|n| n == name) {
            None => problems.push(format!("--fix {name}: no such input")),
            Some(j) if counts[j] != 1 => {
                problems.push(format!("--fix {name}: the grid varies this input"))
            }
            Some(j) => fixed[j] = Some(*v),
        }
    }
    if !problems.is_empty() {
        return Err(TgpError::Config(problems));
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|j| {
            let (lo, hi) = (scale.x_min[j], scale.x_max[j]);
            match (counts[j], fixed[j]) {
                (1, Some(v)) => vec![v],
                (1, None) => vec![0.5 * (lo + hi)],
                (c, _) => (0..c)
                    .map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64)
                    .collect(),
            }
        })
        .collect();
    let mut points = vec![Vec::with_capacity(dim)];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuerySource {
    Grid(String),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct PredictRequest {
    pub model: PathBuf,
    pub queries: QuerySource,
    pub levels: Vec<f64>,
    pub fix: Vec<(String, f64)>,
    /// Defaults to `predictions.csv` in the model directory.
    pub out: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PredictOutput {
    pub path: PathBuf,
    pub queries: Vec<Vec<f64>>,
    pub summary: PredictiveSummary,
}

pub fn cmd_predict(req: &PredictRequest) -> Result<PredictOutput> {
    check_levels(&req.levels)?;
    let model = FittedModel::load(&req.model)?;
    let names = &model.data.input_names;
    let queries = match &req.queries {
        QuerySource::Grid(spec) => {
            let counts = parse_grid(spec, model.data.dim())?;
            grid_points(&counts, &model.data.scale, names, &req.fix)?
        }
        QuerySource::File(path) => {
            if !req.fix.is_empty() {
                return Err(TgpError::Config(vec!["--fix applies to grids only".into()]));
            }
            load_queries(path, names)?
        }
    };
    let summary = model.predict(&queries, &req.levels, req.seed)?;
    let path = req
        .out
        .clone()
        .unwrap_or_else(|| req.model.join("predictions.csv"));
    write_summary(&summary, &queries, names, create(&path)?)?;
    Ok(PredictOutput {
        path,
        queries,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct CvOutput {
    pub dir: PathBuf,
    pub report: CvReport,
}

/// Cross-validates the configured model. Per-fold row files are written to
/// `<out>/cv/` and merged into `rows.csv` next to `summary.csv`.
pub fn cmd_cv(config_path: &Path, folds: usize, level: f64, seed: u64) -> Result<CvOutput> {
    let cfg = FitConfig::load(config_path)?;
    let data = load_config_data(&cfg)?;
    let report = cross_validate(&data, &cfg, folds, level, seed)?;
    let dir = cfg.out.join("cv");
    fs::create_dir_all(&dir).map_err(|e| TgpError::io(&dir, e))?;
    for k in 0..folds {
        let rows: Vec<_> = report.held_out.iter().filter(|h| h.fold == k).cloned().collect();
        super::cv::write_rows(&rows, level, create(&dir.join(format!("fold-{k}.csv")))?)?;
    }
    report.write_rows(create(&dir.join("rows.csv"))?)?;
    report.write_summary(create(&dir.join("summary.csv"))?)?;
    Ok(CvOutput { dir, report })
}

/// Text of the MAP sample's tree alone, for display.
pub fn map_tree_text(sample: &PosteriorSample) -> String {
    serialize::to_text(&sample.tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("41x1", 1).unwrap(), [41]);
        assert_eq!(parse_grid("41", 1).unwrap(), [41]);
        assert_eq!(parse_grid("5x3", 2).unwrap(), [5, 3]);
        assert!(matches!(parse_grid("41x2", 1), Err(TgpError::DimensionMismatch { .. })));
        assert!(matches!(parse_grid("41", 2), Err(TgpError::DimensionMismatch { .. })));
        assert!(matches!(parse_grid("4xq", 2), Err(TgpError::Parse(_))));
        assert!(matches!(parse_grid("0x3", 2), Err(TgpError::Parse(_))));
    }

    fn scale2() -> ScaleInfo {
        ScaleInfo {
            x_min: vec![0.0, -5.0],
            x_max: vec![6.0, 30.0],
            response: Default::default(),
        }
    }

    #[test]
    fn grid_points_cover_ranges() {
        let names = vec!["mach".to_string(), "alpha".to_string()];
        let g = grid_points(&[3, 2], &scale2(), &names, &[]).unwrap();
        assert_eq!(
            g,
            vec![
                vec![0.0, -5.0],
                vec![0.0, 30.0],
                vec![3.0, -5.0],
                vec![3.0, 30.0],
                vec![6.0, -5.0],
                vec![6.0, 30.0]
            ]
        );
        let g = grid_points(&[4, 1], &scale2(), &names, &[]).unwrap();
        assert!(g.iter().all(|p| p[1] == 12.5));
        let g = grid_points(&[4, 1], &scale2(), &names, &[("alpha".into(), 2.0)]).unwrap();
        assert_eq!(g[3], vec![6.0, 2.0]);
        match grid_points(&[4, 2], &scale2(), &names, &[("alpha".into(), 2.0), ("beta".into(), 1.0)]) {
            Err(TgpError::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
