use std::f64::consts::TAU;

use rope_geometry::FrequencySchedule;
use serde::Serialize;

use crate::args::{FrequenciesArgs, TableFormat};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, Metadata};

pub const HEADER: &[&str] = &["plane", "rotated", "frequency", "wavelength"];

#[derive(Debug, Serialize)]
struct Row {
    plane: usize,
    rotated: bool,
    frequency: f64,
    wavelength: f64,
}

#[derive(Serialize)]
struct Config<'a> {
    variant: &'a rope_geometry::RopeVariant,
    head_dim: usize,
}

pub fn run(args: &FrequenciesArgs, seed: u64) -> CliResult<String> {
    let variant = args
        .variant
        .build()?
        .ok_or_else(|| CliError::Usage("--variant is required".into()))?;
    let schedule = FrequencySchedule::build(variant, args.head_dim)?;
    let rows: Vec<Row> = schedule
        .frequencies()
        .iter()
        .enumerate()
        .map(|(plane, &f)| {
            let rotated = plane < schedule.rotated_planes();
            Row {
                plane,
                rotated,
                frequency: if rotated { f } else { 0.0 },
                wavelength: if rotated { TAU / f } else { f64::INFINITY },
            }
        })
        .collect();
    match args.format {
        TableFormat::Csv => {
            let meta = Metadata::new(
                "frequencies",
                seed,
                &Config {
                    variant: &variant,
                    head_dim: args.head_dim,
                },
            )?;
            Ok(String::from_utf8(csv_bytes(&meta, HEADER, &rows)?).expect("CSV is UTF-8"))
        }
        TableFormat::Table => {
            let mut out = format!(
                "{} schedule, head_dim {}, {} of {} planes rotated\n{:>5}  {:>7}  {:>22}  {:>22}\n",
                variant.label(),
                args.head_dim,
                schedule.rotated_planes(),
                args.head_dim / 2,
                "plane",
                "rotated",
                "frequency",
                "wavelength"
            );
            for r in &rows {
                out += &format!(
                    "{:>5}  {:>7}  {:>22}  {:>22}\n",
                    r.plane,
                    if r.rotated { "yes" } else { "no" },
                    r.frequency,
                    r.wavelength
                );
            }
            Ok(out)
        }
    }
}
