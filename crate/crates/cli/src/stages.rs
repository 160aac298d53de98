//! One function per subcommand; stages talk only through files.
//!
//! Every stage resolves its inputs either from an explicit `--in` path or
//! from the default location under the configured workdir. A missing
//! explicit path is a missing-input error; a missing default artifact is a
//! stage-order violation naming the stage to run first.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use partconf::configs::{
    build_config_graph, clusters_from_file, mine_configurations, BinWidths, MiningOutcome,
};
use partconf::cover::{
    brute_force_select, build_constraint_graph, build_cover_graph, greedy_select, ClustersFile,
};
use partconf::detector::{evaluate_ap, evaluate_corloc, score_all, LinearModel, ModelFile};
use partconf::features::{build_neighborhoods, default_k};
use partconf::hardneg::{generate_hard_negatives, HardNegativeSet};
use partconf::io::{load_box_map, load_dataset, save_box_map, save_dataset};
use partconf::oracles::config_graph_nested_loop;
use partconf::synth::{generate, SynthSpec};
use partconf::{BBox, Dataset, Error, ImageId};

use crate::config::{NegativeSource, PipelineConfig};
use crate::error::{CliError, Result};
use crate::training::train_detector;

pub const FEATURE_FILE: &str = "features.pcfv";

/// Strips larger than this fraction of the foreground are shrunk to it.
const MAX_STRIP_RATIO: f64 = 0.5;

/// Default artifact locations under the workdir.
pub struct StagePaths<'c> {
    workdir: &'c Path,
}

impl<'c> StagePaths<'c> {
    pub fn new(cfg: &'c PipelineConfig) -> Self {
        StagePaths {
            workdir: &cfg.workdir,
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.workdir.join("manifest.jsonl")
    }
    pub fn gt(&self) -> PathBuf {
        self.workdir.join("gt.json")
    }
    pub fn clusters(&self) -> PathBuf {
        self.workdir.join("clusters.json")
    }
    pub fn configs(&self) -> PathBuf {
        self.workdir.join("configs.json")
    }
    pub fn estimates(&self) -> PathBuf {
        self.workdir.join("estimates.json")
    }
    pub fn hardneg(&self) -> PathBuf {
        self.workdir.join("hardneg.json")
    }
    pub fn model(&self) -> PathBuf {
        self.workdir.join("model.json")
    }
    pub fn report(&self) -> PathBuf {
        self.workdir.join("report.json")
    }
    pub fn oracle(&self) -> PathBuf {
        self.workdir.join("oracle.json")
    }
}

/// Resolve a stage input: explicit paths must exist outright, default paths
/// missing mean the producing stage has not run.
fn resolve_input(
    explicit: Option<&Path>,
    default: PathBuf,
    hint: &'static str,
) -> Result<PathBuf> {
    match explicit {
        Some(p) => {
            if p.exists() {
                Ok(p.to_path_buf())
            } else {
                Err(CliError::MissingInput(p.to_path_buf()))
            }
        }
        None => {
            if default.exists() {
                Ok(default)
            } else {
                Err(CliError::StageOrder {
                    missing: default,
                    hint,
                })
            }
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

/// Generate a synthetic dataset. `input` is an optional TOML spec; `out`
/// overrides the output directory; `seed` overrides the spec's seed.
pub fn run_synth(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>> {
    let mut spec = match input {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::MissingInput(p.to_path_buf()));
            }
            let text = fs::read_to_string(p)?;
            toml::from_str::<SynthSpec>(&text)
                .map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let output = generate(&spec).map_err(|e| match e {
        Error::InfeasibleGeometry(msg) => CliError::Schema(format!("infeasible geometry: {msg}")),
        other => CliError::from(other),
    })?;

    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.workdir.clone());
    fs::create_dir_all(&dir)?;
    let manifest = dir.join("manifest.jsonl");
    let gt = dir.join("gt.json");
    save_dataset(&output.dataset, &manifest, FEATURE_FILE).map_err(CliError::from)?;
    save_box_map(&output.gt, &gt).map_err(CliError::from)?;
    Ok(vec![manifest, dir.join(FEATURE_FILE), gt])
}

fn load_dataset_checked(manifest: &Path) -> Result<Dataset> {
    load_dataset(manifest).map_err(CliError::from)
}

/// Neighborhoods → cover graph → constrained greedy → cluster file.
pub fn run_discover(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let paths = StagePaths::new(cfg);
    let manifest = resolve_input(input, paths.manifest(), "run `synth` first")?;
    let d = load_dataset_checked(&manifest)?;
    let positives = d.positive_images().len();
    if positives == 0 {
        return Err(CliError::from(Error::NoPositiveImages));
    }

    let k = cfg.discovery.k.unwrap_or_else(|| default_k(positives));
    let theta = cfg.discovery.theta.unwrap_or(k / 20);
    let hoods = build_neighborhoods(&d, k).map_err(CliError::from)?;
    let cover = build_cover_graph(&hoods, &d);
    let constraints = build_constraint_graph(&hoods, &d, theta, cfg.discovery.iou_min);
    let selection = greedy_select(&cover, &constraints, None);
    let file = ClustersFile::from_selection(&selection, &cover).map_err(CliError::from)?;

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paths.clusters());
    write_json(&out_path, &file)?;
    Ok(vec![out_path])
}

fn estimates_from_outcome(
    outcome: &MiningOutcome,
    clusters_file: &ClustersFile,
    d: &Dataset,
) -> Result<BTreeMap<ImageId, BBox>> {
    let mut estimates = BTreeMap::new();
    match outcome {
        MiningOutcome::Configurations(configs) => {
            let top = configs
                .first()
                .ok_or_else(|| CliError::Other("mining produced no configurations".into()))?;
            for im in &top.images {
                estimates.insert(im.image_id, im.foreground.clone());
            }
        }
        MiningOutcome::Fallback { fallback_cluster } => {
            let entry = clusters_file
                .clusters
                .get(*fallback_cluster as usize)
                .ok_or_else(|| {
                    CliError::Schema(format!("fallback cluster {fallback_cluster} out of range"))
                })?;
            for pid in entry.members.iter().copied() {
                let rec = d.try_patch(pid).map_err(CliError::from)?;
                estimates.entry(rec.image_id).or_insert_with(|| rec.bbox.clone());
            }
        }
    }
    Ok(estimates)
}

/// Configuration mining plus per-image foreground estimates.
pub fn run_mine_configs(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let paths = StagePaths::new(cfg);
    let clusters_path = resolve_input(input, paths.clusters(), "run `discover` first")?;
    let manifest = resolve_input(None, paths.manifest(), "run `synth` first")?;
    let d = load_dataset_checked(&manifest)?;
    let file: ClustersFile = read_json(&clusters_path)?;
    let clusters = clusters_from_file(&file);

    let widths = BinWidths {
        dx: cfg.configs.transform_widths[0],
        dy: cfg.configs.transform_widths[1],
        s: cfg.configs.transform_widths[2],
        p: cfg.configs.transform_widths[3],
    };
    let graph =
        build_config_graph(&clusters, &d, &widths, cfg.configs.location_cell).map_err(CliError::from)?;
    let outcome = mine_configurations(
        &graph,
        &d,
        cfg.configs.min_component,
        cfg.configs.alpha,
        &clusters,
    )
    .map_err(CliError::from)?;

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paths.configs());
    let estimates_path = out_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("estimates.json");
    let estimates = estimates_from_outcome(&outcome, &file, &d)?;
    write_json(&out_path, &outcome)?;
    save_box_map(&estimates, &estimates_path).map_err(CliError::from)?;
    Ok(vec![out_path, estimates_path])
}

/// Hard-negative strips for every image of the top configuration.
pub fn run_hardneg(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let paths = StagePaths::new(cfg);
    let configs_path = resolve_input(input, paths.configs(), "run `mine-configs` first")?;
    let manifest = resolve_input(None, paths.manifest(), "run `synth` first")?;
    let d = load_dataset_checked(&manifest)?;
    let outcome: MiningOutcome = read_json(&configs_path)?;

    let mut sets: BTreeMap<ImageId, HardNegativeSet> = BTreeMap::new();
    match &outcome {
        MiningOutcome::Configurations(configs) => {
            let top = configs
                .first()
                .ok_or_else(|| CliError::Other("mining produced no configurations".into()))?;
            for im in &top.images {
                let b1 = &d.try_patch(im.b1).map_err(CliError::from)?.bbox;
                let b2 = &d.try_patch(im.b2).map_err(CliError::from)?.bbox;
                let set = generate_hard_negatives(b1, b2, &im.foreground, MAX_STRIP_RATIO)
                    .map_err(CliError::from)?;
                sets.insert(im.image_id, set);
            }
        }
        MiningOutcome::Fallback { fallback_cluster } => {
            log::warn!(
                "mining fell back to cluster {fallback_cluster}; no patch pairs, so no hard negatives"
            );
        }
    }

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paths.hardneg());
    write_json(&out_path, &sets)?;
    Ok(vec![out_path])
}

/// Train the detector from estimates (and hard negatives when configured).
pub fn run_train(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let paths = StagePaths::new(cfg);
    let estimates_path = resolve_input(input, paths.estimates(), "run `mine-configs` first")?;
    let manifest = resolve_input(None, paths.manifest(), "run `synth` first")?;
    let d = load_dataset_checked(&manifest)?;
    let estimates = load_box_map(&estimates_path).map_err(CliError::from)?;

    let hardnegs: Option<BTreeMap<ImageId, HardNegativeSet>> =
        if cfg.training.negatives == NegativeSource::Discovered {
            let path = resolve_input(None, paths.hardneg(), "run `hardneg` first")?;
            Some(read_json(&path)?)
        } else {
            None
        };

    let outcome = train_detector(&d, cfg, &estimates, hardnegs.as_ref())?;
    let out_path = out.map(Path::to_path_buf).unwrap_or_else(|| paths.model());
    write_json(&out_path, &ModelFile::from(&outcome.model))?;
    Ok(vec![out_path])
}

/// Localization and detection quality against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub corloc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
}

/// CorLoc of the estimates; AP too once a model has been trained.
pub fn run_evaluate(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let paths = StagePaths::new(cfg);
    let estimates_path = resolve_input(input, paths.estimates(), "run `mine-configs` first")?;
    let gt_path = resolve_input(None, paths.gt(), "run `synth` first")?;
    let estimates = load_box_map(&estimates_path).map_err(CliError::from)?;
    let gt = load_box_map(&gt_path).map_err(CliError::from)?;

    let corloc =
        evaluate_corloc(&estimates, &gt, cfg.evaluation.iou_min).map_err(CliError::from)?;
    let ap = if paths.model().exists() && paths.manifest().exists() {
        let d = load_dataset_checked(&paths.manifest())?;
        let file: ModelFile = read_json(&paths.model())?;
        let model = LinearModel::try_from(file).map_err(CliError::from)?;
        let detections = score_all(&model, &d);
        let gt_boxes: Vec<(ImageId, BBox)> =
            gt.iter().map(|(im, b)| (*im, b.clone())).collect();
        Some(evaluate_ap(&detections, &gt_boxes, cfg.evaluation.iou_min).map_err(CliError::from)?)
    } else {
        None
    };

    let report = EvaluationReport { corloc, ap };
    let out_path = out.map(Path::to_path_buf).unwrap_or_else(|| paths.report());
    write_json(&out_path, &report)?;
    Ok(vec![out_path])
}

/// Exhaustive cross-checks of the greedy selection and the config graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub greedy_coverage: usize,
    pub optimal_coverage: usize,
    pub max_degree: usize,
    /// greedy ≥ optimal / (Δ + 2)
    pub bound_satisfied: bool,
    /// Stored clusters equal a fresh greedy run.
    pub clusters_match: bool,
    /// Hash-grouped config graph equals the nested-loop rebuild.
    pub config_graph_matches: bool,
}

/// Re-derive everything the slow way and compare against stage outputs.
pub fn run_oracle(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let paths = StagePaths::new(cfg);
    let manifest = resolve_input(input, paths.manifest(), "run `synth` first")?;
    let clusters_path = resolve_input(None, paths.clusters(), "run `discover` first")?;
    let d = load_dataset_checked(&manifest)?;
    let stored: ClustersFile = read_json(&clusters_path)?;

    let positives = d.positive_images().len();
    if positives == 0 {
        return Err(CliError::from(Error::NoPositiveImages));
    }
    let k = cfg.discovery.k.unwrap_or_else(|| default_k(positives));
    let theta = cfg.discovery.theta.unwrap_or(k / 20);
    let hoods = build_neighborhoods(&d, k).map_err(CliError::from)?;
    let cover = build_cover_graph(&hoods, &d);
    let constraints = build_constraint_graph(&hoods, &d, theta, cfg.discovery.iou_min);

    let greedy = greedy_select(&cover, &constraints, None);
    let optimal = brute_force_select(&cover, &constraints).map_err(CliError::from)?;
    let delta = constraints.max_degree();
    let bound_satisfied = greedy.coverage * (delta + 2) >= optimal.coverage;
    let fresh = ClustersFile::from_selection(&greedy, &cover).map_err(CliError::from)?;

    let clusters = clusters_from_file(&stored);
    let widths = BinWidths {
        dx: cfg.configs.transform_widths[0],
        dy: cfg.configs.transform_widths[1],
        s: cfg.configs.transform_widths[2],
        p: cfg.configs.transform_widths[3],
    };
    let fast = build_config_graph(&clusters, &d, &widths, cfg.configs.location_cell)
        .map_err(CliError::from)?;
    let slow = config_graph_nested_loop(&clusters, &d, &widths, cfg.configs.location_cell)
        .map_err(CliError::from)?;

    let report = OracleReport {
        greedy_coverage: greedy.coverage,
        optimal_coverage: optimal.coverage,
        max_degree: delta,
        bound_satisfied,
        clusters_match: fresh == stored,
        config_graph_matches: fast == slow,
    };
    let out_path = out.map(Path::to_path_buf).unwrap_or_else(|| paths.oracle());
    write_json(&out_path, &report)?;
    if !report.bound_satisfied || !report.clusters_match || !report.config_graph_matches {
        return Err(CliError::Other(format!(
            "oracle check failed: {report:?}"
        )));
    }
    Ok(vec![out_path])
}
