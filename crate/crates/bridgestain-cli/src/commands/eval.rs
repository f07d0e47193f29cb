use std::path::{Path, PathBuf};

use serde::Serialize;

use bridgestain::metrics::{
    evaluate_pairs, mean_and_se, paired_ttest, PairMetrics, RandomConvExtractor, SsimParams,
};
use bridgestain::{Error, ImageTensor, Result};

use crate::common::{self, Tiles};
use crate::csvout;

#[derive(clap::Args)]
pub struct Args {
    /// Directory holding {id}_output.btns tiles for set A.
    #[arg(long)]
    set_a: PathBuf,
    /// Optional second set; adds paired-t-test rows against set A.
    #[arg(long)]
    set_b: Option<PathBuf>,
    /// Dataset directory providing the ground truth.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Destination CSV.
    #[arg(long)]
    csv: PathBuf,
    /// Evaluate only the first N tiles of the split.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    set_a: &'a PathBuf,
    set_b: &'a Option<PathBuf>,
    data: &'a PathBuf,
    split: &'a str,
    count: Option<usize>,
    extractor_channels: usize,
}

/// Loads one output per split id; an id without a file is a set mismatch.
fn load_set(dir: &Path, tiles: &Tiles) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    tiles
        .ids
        .iter()
        .zip(&tiles.targets)
        .map(|(id, truth)| {
            let path = common::output_file(dir, id);
            if !path.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "set {} has no output for id {id}",
                    dir.display()
                )));
            }
            Ok((ImageTensor::read_btns(&path)?, truth.clone()))
        })
        .collect()
}

fn metric_cells(m: &PairMetrics) -> [String; 4] {
    [
        csvout::num(m.ssim),
        csvout::num(m.psnr_db),
        csvout::num(m.mse),
        csvout::num(m.perceptual),
    ]
}

fn set_rows(rows: &mut Vec<Vec<String>>, set: &str, ids: &[String], metrics: &[PairMetrics]) {
    let row = |set: &str, id: &str, cells: [String; 4]| {
        let [ssim, psnr, mse, perc] = cells;
        vec![set.into(), id.into(), ssim, psnr, mse, perc, String::new(), String::new()]
    };
    for (id, m) in ids.iter().zip(metrics) {
        rows.push(row(set, id, metric_cells(m)));
    }
    let columns: [(&str, fn(&PairMetrics) -> f64); 4] = [
        ("ssim", |m| m.ssim),
        ("psnr_db", |m| m.psnr_db),
        ("mse", |m| m.mse),
        ("perceptual", |m| m.perceptual),
    ];
    let mut means = Vec::new();
    let mut sems = Vec::new();
    for (_, get) in columns {
        let values: Vec<f64> = metrics.iter().map(get).collect();
        let (mean, sem) = mean_and_se(&values);
        means.push(csvout::num(mean));
        sems.push(csvout::num(sem));
    }
    rows.push(row(set, "mean", [means[0].clone(), means[1].clone(), means[2].clone(), means[3].clone()]));
    rows.push(row(set, "sem", [sems[0].clone(), sems[1].clone(), sems[2].clone(), sems[3].clone()]));
}

pub fn run(args: Args) -> Result<()> {
    let manifest = common::load_manifest(&args.data)?;
    let split = common::parse_split(&args.split)?;
    let tiles = common::load_tiles(&args.data, &manifest, split, args.count)?;

    let truth_channels = tiles.targets[0].channels();
    let extractor = RandomConvExtractor::standard(truth_channels);
    let params = SsimParams::default();

    let pairs_a = load_set(&args.set_a, &tiles)?;
    let metrics_a = evaluate_pairs(&pairs_a, &params, &extractor)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    set_rows(&mut rows, "a", &tiles.ids, &metrics_a);

    if let Some(set_b) = &args.set_b {
        let pairs_b = load_set(set_b, &tiles)?;
        let metrics_b = evaluate_pairs(&pairs_b, &params, &extractor)?;
        set_rows(&mut rows, "b", &tiles.ids, &metrics_b);

        // Pairwise significance on the two bounded metrics; PSNR is excluded
        // because a zero-MSE tile makes its difference NaN.
        for (name, get) in [
            ("ssim", (|m: &PairMetrics| m.ssim) as fn(&PairMetrics) -> f64),
            ("perceptual", |m: &PairMetrics| m.perceptual),
        ] {
            let a: Vec<f64> = metrics_a.iter().map(get).collect();
            let b: Vec<f64> = metrics_b.iter().map(get).collect();
            let t = paired_ttest(&a, &b)?;
            rows.push(vec![
                "a-vs-b".into(),
                format!("ttest-{name}"),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                csvout::num(t.t_score),
                csvout::num(t.p_value),
            ]);
        }
    }

    csvout::write(
        &args.csv,
        &["set", "image_id", "ssim", "psnr_db", "mse", "perceptual", "t_score", "p_value"],
        &rows,
    )?;
    let config_path = args.csv.with_extension("config.json");
    common::write_json(
        &config_path,
        &ResolvedConfig {
            set_a: &args.set_a,
            set_b: &args.set_b,
            data: &args.data,
            split: &args.split,
            count: args.count,
            extractor_channels: truth_channels,
        },
    )?;

    println!("scored {} tiles -> {}", tiles.ids.len(), args.csv.display());
    Ok(())
}
