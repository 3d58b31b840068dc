use rope_geometry::theory::{
    fig7_preset_grid, synth_fig7, Fig7Row, Fig7Verdict, FIG7_HEAD_DIM, FIG7_TRAIN_LEN,
};
use rope_geometry::RopeVariant;
use serde::Serialize;

use crate::args::{Preset, SynthArgs, VariantKind};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, json_bytes, Metadata, OutputDir};

pub const CSV_NAME: &str = "synth.csv";
pub const SUMMARY_NAME: &str = "synth-summary.json";
pub const HEADER: &[&str] = &["variant", "n", "fsv_ratio", "srank_pre", "srank_post"];

const ALL: [VariantKind; 4] = [
    VariantKind::Standard,
    VariantKind::HighFrequency,
    VariantKind::Partial,
    VariantKind::RopeId,
];

/// The preset's variants re-anchored to `train_len`.
fn variant_for(kind: VariantKind, train_len: u64) -> RopeVariant {
    match kind {
        VariantKind::Standard => RopeVariant::standard(500_000.0),
        VariantKind::HighFrequency => RopeVariant::HighFrequency { train_len },
        VariantKind::Partial => RopeVariant::half_rope(),
        VariantKind::RopeId => RopeVariant::rope_id(train_len),
    }
}

#[derive(Serialize)]
struct Config {
    preset: Preset,
    head_dim: usize,
    train_len: u64,
    n_grid: Vec<usize>,
    variants: Vec<RopeVariant>,
}

#[derive(Serialize)]
struct Summary<'a> {
    head_dim: usize,
    train_len: u64,
    verdicts: &'a [Fig7Verdict],
}

pub fn run(args: &SynthArgs, seed: u64, out: &OutputDir) -> CliResult<String> {
    let (head_dim, train_len) = match args.preset {
        Preset::Fig7 => (
            args.head_dim.unwrap_or(FIG7_HEAD_DIM),
            args.train_len.unwrap_or(FIG7_TRAIN_LEN),
        ),
    };
    let n_grid = args.n_grid.clone().unwrap_or_else(fig7_preset_grid);
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(CliError::Usage("--n-grid needs positive lengths".into()));
    }
    let kinds = args.variants.clone().unwrap_or(ALL.to_vec());
    let variants: Vec<RopeVariant> = kinds.iter().map(|&k| variant_for(k, train_len)).collect();
    out.check_free(&[CSV_NAME, SUMMARY_NAME])?;

    let table = synth_fig7(head_dim, train_len, &n_grid, &variants)?;
    let meta = Metadata::new(
        "synth",
        seed,
        &Config {
            preset: args.preset,
            head_dim,
            train_len,
            n_grid,
            variants,
        },
    )?;
    let rows: &[Fig7Row] = &table.rows;
    let csv = out.write(CSV_NAME, &csv_bytes(&meta, HEADER, rows)?)?;
    let summary = Summary {
        head_dim,
        train_len,
        verdicts: &table.verdicts,
    };
    let json = out.write(SUMMARY_NAME, &json_bytes(&meta, &summary)?)?;

    let mut report = format!("wrote {} and {}\n", csv.display(), json.display());
    for v in &table.verdicts {
        report += &format!(
            "{:<15} ratio@L {:.6}  ratio@max {:.6}  C1 {}  C2 {}\n",
            v.variant,
            v.ratio_at_train_len,
            v.ratio_at_max_n,
            verdict(v.c1_lower_bound),
            verdict(v.c2_attainment)
        );
    }
    Ok(report)
}

fn verdict(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}
