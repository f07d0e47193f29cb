use std::path::PathBuf;

use serde::Serialize;

use bridgestain::imageops::bilinear_upsample;
use bridgestain::metrics::radial_power_spectrum;
use bridgestain::{Error, ImageTensor, Result};

use crate::common;
use crate::csvout;

#[derive(clap::Args)]
pub struct Args {
    /// Directory with {id}_output.btns tiles.
    #[arg(long)]
    outputs: PathBuf,
    /// Dataset directory providing inputs and ground truth.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Destination CSV.
    #[arg(long)]
    csv: PathBuf,
    /// Radial bin count; defaults to size/2 + 1.
    #[arg(long)]
    bins: Option<usize>,
    /// Input channel to profile after bilinear upsampling.
    #[arg(long, default_value_t = 0)]
    input_channel: usize,
    /// Profile only the first N tiles of the split.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    outputs: &'a PathBuf,
    data: &'a PathBuf,
    split: &'a str,
    bins: usize,
    input_channel: usize,
    count: Option<usize>,
}

/// Pulls one channel out as a single-channel tensor.
fn extract_channel(img: &ImageTensor, channel: usize) -> Result<ImageTensor> {
    if channel >= img.channels() {
        return Err(Error::InvalidConfig(format!(
            "input channel {channel} out of range (image has {})",
            img.channels()
        )));
    }
    let data: Vec<f64> = img
        .data()
        .iter()
        .skip(channel)
        .step_by(img.channels())
        .copied()
        .collect();
    ImageTensor::new(img.height(), img.width(), 1, img.semantics(), img.range(), data)
}

pub fn run(args: Args) -> Result<()> {
    let manifest = common::load_manifest(&args.data)?;
    let split = common::parse_split(&args.split)?;
    let tiles = common::load_tiles(&args.data, &manifest, split, args.count)?;
    let bins = args.bins.unwrap_or(manifest.config.size / 2 + 1);

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, id) in tiles.ids.iter().enumerate() {
        let upsampled = bilinear_upsample(&tiles.inputs[i], manifest.config.factor)?;
        let input = extract_channel(&upsampled, args.input_channel)?;
        let output_path = common::output_file(&args.outputs, id);
        if !output_path.is_file() {
            return Err(Error::InvalidConfig(format!(
                "set {} has no output for id {id}",
                args.outputs.display()
            )));
        }
        let output = ImageTensor::read_btns(&output_path)?;

        let input_profile = radial_power_spectrum(&input, bins)?;
        let output_profile = radial_power_spectrum(&output, bins)?;
        let truth_profile = radial_power_spectrum(&tiles.targets[i], bins)?;

        for bin in 0..bins {
            rows.push(vec![
                id.clone(),
                bin.to_string(),
                truth_profile.count[bin].to_string(),
                csvout::num(input_profile.power[bin]),
                csvout::num(output_profile.power[bin]),
                csvout::num(truth_profile.power[bin]),
            ]);
        }
    }

    csvout::write(
        &args.csv,
        &["image_id", "bin", "count", "input_power", "output_power", "truth_power"],
        &rows,
    )?;
    common::write_json(
        &args.csv.with_extension("config.json"),
        &ResolvedConfig {
            outputs: &args.outputs,
            data: &args.data,
            split: &args.split,
            bins,
            input_channel: args.input_channel,
            count: args.count,
        },
    )?;

    println!("profiled {} tiles x {bins} bins -> {}", tiles.ids.len(), args.csv.display());
    Ok(())
}
