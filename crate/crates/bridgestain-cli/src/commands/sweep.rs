use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use bridgestain::metrics::{
    cv_map, evaluate_pair, RandomConvExtractor, SsimParams,
};
use bridgestain::rng;
use bridgestain::sampler::{SamplerConfig, Strategy};
use bridgestain::{Error, Result};

use crate::common::{self, LoadedCheckpoint, Tiles};
use crate::csvout;

/// Domain-separation tag for sweep sampling seeds.
const TAG_SWEEP: u64 = 0x53E7;

const EXIT_GRID: [usize; 9] = [10, 25, 50, 100, 150, 200, 300, 400, 500];
const AVERAGING_GRID: [usize; 4] = [1, 2, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Vary the exit point t_e at fixed averaging.
    Exit,
    /// Vary the averaging factor n at fixed exit point.
    Averaging,
    /// Compare checkpoints trained for different binning factors.
    Factor,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Exit => "exit",
            SweepKind::Averaging => "averaging",
            SweepKind::Factor => "factor",
        }
    }
}

fn default_split() -> String {
    "test".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Grid points; None picks the kind's default grid. Must be nonempty.
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    #[serde(default)]
    pub strategies: Option<Vec<Strategy>>,
    /// Independent repeats per configuration (needed for the CV column).
    #[serde(default)]
    pub repeats: Option<usize>,
    /// Fixed exit point for non-exit sweeps.
    #[serde(default)]
    pub exit_point: Option<usize>,
    /// Fixed averaging factor for non-averaging sweeps.
    #[serde(default)]
    pub averaging: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default = "default_split")]
    pub split: String,
}

#[derive(clap::Args)]
pub struct Args {
    /// exit, averaging, or factor.
    #[arg(long)]
    kind: Option<String>,
    /// JSON sweep config; flags override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint for exit/averaging sweeps.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset for exit/averaging sweeps.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Factor sweeps: one checkpoint per grid point (comma-separated).
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<PathBuf>,
    /// Factor sweeps: the matching datasets (comma-separated).
    #[arg(long, value_delimiter = ',')]
    datas: Vec<PathBuf>,
    /// Directory for sweep.csv and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated grid points.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    grid: Option<Vec<usize>>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Fixed exit point for non-exit sweeps.
    #[arg(long)]
    exit: Option<usize>,
    /// Fixed averaging factor for non-averaging sweeps.
    #[arg(long)]
    avg: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate only the first N tiles of the split.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    split: Option<String>,
}

/// Defaults resolved, ready to run.
struct Plan {
    kind: SweepKind,
    grid: Vec<usize>,
    strategies: Vec<Strategy>,
    repeats: usize,
    exit_point: usize,
    averaging: usize,
    seed: u64,
    count: Option<usize>,
    split: String,
}

#[derive(Serialize)]
struct ResolvedSweep {
    kind: String,
    grid: Vec<usize>,
    strategies: Vec<Strategy>,
    repeats: usize,
    exit_point: usize,
    averaging: usize,
    seed: u64,
    count: Option<usize>,
    split: String,
    checkpoints: Vec<PathBuf>,
    datas: Vec<PathBuf>,
}

fn parse_kind(name: &str) -> Result<SweepKind> {
    match name {
        "exit" => Ok(SweepKind::Exit),
        "averaging" => Ok(SweepKind::Averaging),
        "factor" => Ok(SweepKind::Factor),
        other => Err(Error::InvalidConfig(format!("unknown sweep kind {other:?}"))),
    }
}

fn resolve(args: &Args) -> Result<Plan> {
    let mut config = match &args.config {
        Some(path) => common::read_json::<SweepConfig>(path)?,
        None => {
            let kind = args
                .kind
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("--kind is required without --config".into()))?;
            SweepConfig {
                kind: parse_kind(kind)?,
                grid: None,
                strategies: None,
                repeats: None,
                exit_point: None,
                averaging: None,
                seed: 0,
                count: None,
                split: default_split(),
            }
        }
    };
    if let Some(kind) = &args.kind {
        config.kind = parse_kind(kind)?;
    }
    if let Some(grid) = &args.grid {
        config.grid = Some(grid.clone());
    }
    if let Some(names) = &args.strategies {
        config.strategies = Some(
            names
                .iter()
                .map(|n| common::parse_strategy(n))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if let Some(v) = args.repeats {
        config.repeats = Some(v);
    }
    if let Some(v) = args.exit {
        config.exit_point = Some(v);
    }
    if let Some(v) = args.avg {
        config.averaging = Some(v);
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.count {
        config.count = Some(v);
    }
    if let Some(v) = &args.split {
        config.split = v.clone();
    }

    let kind = config.kind;
    let grid = match config.grid {
        Some(grid) => grid,
        None => match kind {
            SweepKind::Exit => EXIT_GRID.to_vec(),
            SweepKind::Averaging => AVERAGING_GRID.to_vec(),
            SweepKind::Factor => Vec::new(), // derived from the checkpoints
        },
    };
    if grid.is_empty() && kind != SweepKind::Factor {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let strategies = config.strategies.unwrap_or_else(|| match kind {
        SweepKind::Exit => vec![Strategy::Mean, Strategy::Skip],
        SweepKind::Averaging => vec![Strategy::Vanilla, Strategy::Mean],
        SweepKind::Factor => vec![Strategy::Mean],
    });
    if strategies.is_empty() {
        return Err(Error::InvalidConfig("sweep strategy list is empty".into()));
    }
    Ok(Plan {
        kind,
        grid,
        strategies,
        repeats: config.repeats.unwrap_or(match kind {
            SweepKind::Averaging => 5,
            _ => 1,
        }),
        exit_point: config.exit_point.unwrap_or(50),
        averaging: config.averaging.unwrap_or(1),
        seed: config.seed,
        count: config.count,
        split: config.split,
    })
}

struct TileScore {
    ssim_sum: f64,
    perceptual_sum: f64,
    wall_sum: f64,
    cv: Option<f64>,
}

/// One (grid point, strategy) cell measured over all tiles and repeats.
struct CellScore {
    ssim: f64,
    perceptual: f64,
    mean_cv: Option<f64>,
    wall_ms: f64,
}

#[allow(clippy::too_many_arguments)]
fn measure_cell(
    ckpt: &LoadedCheckpoint,
    tiles: &Tiles,
    sampler: &SamplerConfig,
    plan: &Plan,
    grid_index: usize,
    strat_index: usize,
    extractor: &RandomConvExtractor,
    params: &SsimParams,
) -> Result<CellScore> {
    let repeats = plan.repeats;
    let scores = common::par_tiles(&ckpt.model, tiles, |model, tile_index, _id, y0| {
        let truth = &tiles.targets[tile_index];
        let mut outputs = Vec::with_capacity(repeats);
        let mut score = TileScore {
            ssim_sum: 0.0,
            perceptual_sum: 0.0,
            wall_sum: 0.0,
            cv: None,
        };
        for rep in 0..repeats {
            let seeds: Vec<u64> = (0..sampler.averaging as u64)
                .map(|k| {
                    rng::key(
                        plan.seed,
                        &[
                            TAG_SWEEP,
                            grid_index as u64,
                            strat_index as u64,
                            tile_index as u64,
                            rep as u64,
                            k,
                        ],
                    )
                })
                .collect();
            let run = common::run_tile(model, &ckpt.meta, &ckpt.schedule, y0, sampler, &seeds)?;
            let metrics = evaluate_pair(&run.mean, truth, params, &mut extractor.clone())?;
            score.ssim_sum += metrics.ssim;
            score.perceptual_sum += metrics.perceptual;
            score.wall_sum += run.wall_ms;
            outputs.push(run.mean);
        }
        if repeats >= 2 {
            score.cv = Some(cv_map(&outputs)?.mean_cv);
        }
        Ok(score)
    })?;

    let denom = (tiles.ids.len() * repeats) as f64;
    let mut cell = CellScore {
        ssim: 0.0,
        perceptual: 0.0,
        mean_cv: if repeats >= 2 { Some(0.0) } else { None },
        wall_ms: 0.0,
    };
    for s in &scores {
        cell.ssim += s.ssim_sum / denom;
        cell.perceptual += s.perceptual_sum / denom;
        cell.wall_ms += s.wall_sum / denom;
        if let (Some(total), Some(cv)) = (cell.mean_cv.as_mut(), s.cv) {
            *total += cv / tiles.ids.len() as f64;
        }
    }
    Ok(cell)
}

pub fn run(args: Args) -> Result<()> {
    let plan = resolve(&args)?;
    let split = common::parse_split(&plan.split)?;

    // Factor sweeps pair one checkpoint with one dataset per grid point;
    // the other kinds reuse a single pair everywhere.
    let (checkpoints, datas): (Vec<PathBuf>, Vec<PathBuf>) = match plan.kind {
        SweepKind::Factor => {
            if args.checkpoints.is_empty()
                || args.checkpoints.len() != args.datas.len()
            {
                return Err(Error::InvalidConfig(
                    "factor sweeps need matching --checkpoints and --datas lists".into(),
                ));
            }
            (args.checkpoints.clone(), args.datas.clone())
        }
        _ => {
            let ckpt = args.checkpoint.clone().ok_or_else(|| {
                Error::InvalidConfig("--checkpoint is required for this sweep".into())
            })?;
            let data = args.data.clone().ok_or_else(|| {
                Error::InvalidConfig("--data is required for this sweep".into())
            })?;
            (vec![ckpt], vec![data])
        }
    };

    let mut loaded: Vec<(LoadedCheckpoint, Tiles)> = Vec::with_capacity(checkpoints.len());
    for (ckpt_path, data_path) in checkpoints.iter().zip(&datas) {
        let manifest = common::load_manifest(data_path)?;
        let ckpt = common::load_checkpoint(ckpt_path)?;
        common::check_compat(&ckpt.meta, &manifest)?;
        let tiles = common::load_tiles(data_path, &manifest, split, plan.count)?;
        loaded.push((ckpt, tiles));
    }

    let grid: Vec<usize> = match plan.kind {
        SweepKind::Factor => loaded.iter().map(|(c, _)| c.meta.conditioner.upsample).collect(),
        _ => plan.grid.clone(),
    };
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }

    let extractor = RandomConvExtractor::standard(3);
    let params = SsimParams::default();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (gi, &g) in grid.iter().enumerate() {
        let (ckpt, tiles) = match plan.kind {
            SweepKind::Factor => &loaded[gi],
            _ => &loaded[0],
        };
        for (si, &strategy) in plan.strategies.iter().enumerate() {
            let sampler = SamplerConfig {
                strategy,
                exit_point: if plan.kind == SweepKind::Exit { g } else { plan.exit_point },
                averaging: if plan.kind == SweepKind::Averaging { g } else { plan.averaging },
                seed: plan.seed,
                clip_x0: false,
            };
            sampler.validate(ckpt.schedule.steps())?;
            let cell = measure_cell(ckpt, tiles, &sampler, &plan, gi, si, &extractor, &params)?;
            rows.push(vec![
                g.to_string(),
                strategy.to_string(),
                csvout::num(cell.ssim),
                csvout::num(cell.perceptual),
                cell.mean_cv.map(csvout::num).unwrap_or_default(),
                csvout::num(cell.wall_ms),
            ]);
        }
    }

    std::fs::create_dir_all(&args.out)?;
    csvout::write(
        &args.out.join("sweep.csv"),
        &["grid_value", "strategy", "ssim", "perceptual", "mean_cv", "wall_ms"],
        &rows,
    )?;
    common::write_json(
        &args.out.join("resolved-config.json"),
        &ResolvedSweep {
            kind: plan.kind.name().into(),
            grid,
            strategies: plan.strategies.clone(),
            repeats: plan.repeats,
            exit_point: plan.exit_point,
            averaging: plan.averaging,
            seed: plan.seed,
            count: plan.count,
            split: plan.split.clone(),
            checkpoints,
            datas,
        },
    )?;

    println!("swept {} configurations -> {}", rows.len(), args.out.display());
    Ok(())
}
