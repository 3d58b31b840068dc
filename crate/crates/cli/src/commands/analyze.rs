//! Per-(layer, query head) analysis of a dump manifest.
//!
//! Cells run in parallel and are gathered in a fixed order before a single
//! writer emits `cells.csv`, `sink.csv`, `key_profile.csv` and
//! `aggregate.csv`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rope_geometry::attention::AttentionConfig;
use rope_geometry::geometry::{cluster_stats, sink_report, spectral_summary, PairSampling};
use rope_geometry::io::{read_dump, read_header, resolve, sha256_file, validate_manifest, Manifest};
use rope_geometry::{FrequencySchedule, LatentCloud, Role, RopeStage};
use serde::Serialize;

use crate::args::{AnalyzeArgs, Metric};
use crate::cell_seed;
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, Metadata, OutputDir};

pub const CELLS_NAME: &str = "cells.csv";
pub const SINK_NAME: &str = "sink.csv";
pub const PROFILE_NAME: &str = "key_profile.csv";
pub const AGGREGATE_NAME: &str = "aggregate.csv";

pub const DEFAULT_LENGTHS: [usize; 7] = [1024, 2048, 4096, 8192, 16_384, 32_768, 65_536];

pub const CELLS_HEADER: &[&str] = &[
    "seed",
    "layer",
    "head",
    "kv_head",
    "stage",
    "length",
    "status",
    "sampled",
    "mean_intra_key_cosine",
    "mean_intra_query_cosine",
    "mean_inter_cosine",
    "mean_intra_key_dot",
    "mean_intra_query_dot",
    "mean_inter_dot",
    "silhouette",
    "davies_bouldin",
    "zero_keys_excluded",
    "zero_queries_excluded",
    "key_spectral_norm",
    "key_frobenius_norm",
    "key_stable_rank",
    "key_fsv_variance_fraction",
    "query_spectral_norm",
    "query_frobenius_norm",
    "query_stable_rank",
    "query_fsv_variance_fraction",
];

pub const SINK_HEADER: &[&str] = &[
    "seed",
    "layer",
    "head",
    "kv_head",
    "source_stage",
    "length",
    "status",
    "sampled",
    "sink_share",
    "max_other_share",
    "max_qk",
];

pub const PROFILE_HEADER: &[&str] = &[
    "seed",
    "layer",
    "head",
    "kv_head",
    "position",
    "key_norm",
    "key_score",
    "normalized_key_score",
];

pub const AGGREGATE_HEADER: &[&str] = &[
    "seed", "table", "stage", "length", "metric", "mean", "cells", "failed_cells", "sampled",
];

#[derive(Debug, Clone, Default, Serialize)]
struct CellRow {
    seed: u64,
    layer: u32,
    head: u32,
    kv_head: u32,
    stage: String,
    length: Option<usize>,
    status: String,
    sampled: bool,
    mean_intra_key_cosine: Option<f64>,
    mean_intra_query_cosine: Option<f64>,
    mean_inter_cosine: Option<f64>,
    mean_intra_key_dot: Option<f64>,
    mean_intra_query_dot: Option<f64>,
    mean_inter_dot: Option<f64>,
    silhouette: Option<f64>,
    davies_bouldin: Option<f64>,
    zero_keys_excluded: Option<usize>,
    zero_queries_excluded: Option<usize>,
    key_spectral_norm: Option<f64>,
    key_frobenius_norm: Option<f64>,
    key_stable_rank: Option<f64>,
    key_fsv_variance_fraction: Option<f64>,
    query_spectral_norm: Option<f64>,
    query_frobenius_norm: Option<f64>,
    query_stable_rank: Option<f64>,
    query_fsv_variance_fraction: Option<f64>,
}

impl CellRow {
    /// Named numeric columns that feed the aggregate table.
    fn metrics(&self) -> [(&'static str, Option<f64>); 16] {
        [
            ("mean_intra_key_cosine", self.mean_intra_key_cosine),
            ("mean_intra_query_cosine", self.mean_intra_query_cosine),
            ("mean_inter_cosine", self.mean_inter_cosine),
            ("mean_intra_key_dot", self.mean_intra_key_dot),
            ("mean_intra_query_dot", self.mean_intra_query_dot),
            ("mean_inter_dot", self.mean_inter_dot),
            ("silhouette", self.silhouette),
            ("davies_bouldin", self.davies_bouldin),
            ("key_spectral_norm", self.key_spectral_norm),
            ("key_frobenius_norm", self.key_frobenius_norm),
            ("key_stable_rank", self.key_stable_rank),
            ("key_fsv_variance_fraction", self.key_fsv_variance_fraction),
            ("query_spectral_norm", self.query_spectral_norm),
            ("query_frobenius_norm", self.query_frobenius_norm),
            ("query_stable_rank", self.query_stable_rank),
            ("query_fsv_variance_fraction", self.query_fsv_variance_fraction),
        ]
    }
}

#[derive(Debug, Clone, Default, Serialize)]
struct SinkRow {
    seed: u64,
    layer: u32,
    head: u32,
    kv_head: u32,
    source_stage: String,
    length: Option<usize>,
    status: String,
    sampled: bool,
    sink_share: Option<f64>,
    max_other_share: Option<f64>,
    max_qk: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ProfileRow {
    seed: u64,
    layer: u32,
    head: u32,
    kv_head: u32,
    position: usize,
    key_norm: f64,
    key_score: Option<f64>,
    normalized_key_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct AggregateRow {
    seed: u64,
    table: &'static str,
    stage: String,
    length: usize,
    metric: &'static str,
    mean: Option<f64>,
    cells: usize,
    failed_cells: usize,
    sampled: bool,
}

#[derive(Serialize)]
struct Config<'a> {
    manifest_sha256: String,
    lengths: &'a [usize],
    metrics: &'a [Metric],
    layers: Option<&'a [u32]>,
    heads: Option<&'a [u32]>,
    pair_budget: usize,
    exact_below: usize,
    temperature_scaling: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cell {
    layer: u32,
    head: u32,
    kv_head: u32,
}

#[derive(Default)]
struct CellOutput {
    cells: Vec<CellRow>,
    sink: Vec<SinkRow>,
    profile: Vec<ProfileRow>,
}

fn stage_name(s: RopeStage) -> &'static str {
    match s {
        RopeStage::PreRope => "pre_rope",
        RopeStage::PostRope => "post_rope",
    }
}

struct Job<'a> {
    manifest: &'a Manifest,
    manifest_path: &'a std::path::Path,
    schedule: &'a FrequencySchedule,
    attention: AttentionConfig,
    lengths: &'a [usize],
    metrics: &'a [Metric],
    seed: u64,
    pair_budget: usize,
    exact_below: usize,
}

impl Job<'_> {
    fn load(&self, layer: u32, head: u32, role: Role, stage: RopeStage) -> CliResult<Option<LatentCloud>> {
        match self.manifest.find(layer, head, role, stage) {
            None => Ok(None),
            Some(e) => Ok(Some(read_dump(&resolve(self.manifest_path, e))?.1)),
        }
    }

    fn pair(&self, cell: Cell, stage: RopeStage) -> CliResult<Option<(LatentCloud, LatentCloud)>> {
        let keys = self.load(cell.layer, cell.kv_head, Role::Key, stage)?;
        let queries = self.load(cell.layer, cell.head, Role::Query, stage)?;
        Ok(keys.zip(queries))
    }

    fn run(&self, cell: Cell) -> CellOutput {
        let mut out = CellOutput::default();
        let base_cell = CellRow {
            seed: self.seed,
            layer: cell.layer,
            head: cell.head,
            kv_head: cell.kv_head,
            ..Default::default()
        };
        let wants = |m| self.metrics.contains(&m);

        if wants(Metric::Cluster) || wants(Metric::Spectral) {
            for stage in [RopeStage::PreRope, RopeStage::PostRope] {
                let stage_row = CellRow {
                    stage: stage_name(stage).into(),
                    ..base_cell.clone()
                };
                match self.pair(cell, stage) {
                    Ok(None) => {}
                    Err(e) => out.cells.push(CellRow {
                        status: format!("failed: {e}"),
                        ..stage_row
                    }),
                    Ok(Some((keys, queries))) => {
                        for &length in self.lengths {
                            let row = CellRow {
                                length: Some(length),
                                ..stage_row.clone()
                            };
                            out.cells.push(
                                self.cell_row(cell, &keys, &queries, length, row.clone())
                                    .unwrap_or_else(|e| CellRow {
                                        status: format!("failed: {e}"),
                                        ..row
                                    }),
                            );
                        }
                    }
                }
            }
        }

        if wants(Metric::Sink) {
            let base_sink = SinkRow {
                seed: self.seed,
                layer: cell.layer,
                head: cell.head,
                kv_head: cell.kv_head,
                ..Default::default()
            };
            if let Err((stage, e)) = self.sink(cell, &base_sink, &mut out) {
                out.sink.push(SinkRow {
                    source_stage: stage.into(),
                    status: format!("failed: {e}"),
                    ..base_sink
                });
            }
        }
        out
    }

    fn cell_row(
        &self,
        cell: Cell,
        keys: &LatentCloud,
        queries: &LatentCloud,
        length: usize,
        mut row: CellRow,
    ) -> CliResult<CellRow> {
        let keys = keys.truncate(length)?;
        let queries = queries.truncate(length)?;
        if self.metrics.contains(&Metric::Cluster) {
            let sampling = PairSampling {
                seed: cell_seed(self.seed, cell.layer, cell.head, length as u64),
                budget: self.pair_budget,
                exact_below: self.exact_below,
            };
            let c = cluster_stats(&keys, &queries, &sampling)?;
            row.sampled = c.sampled;
            row.mean_intra_key_cosine = Some(c.mean_intra_key_cosine);
            row.mean_intra_query_cosine = Some(c.mean_intra_query_cosine);
            row.mean_inter_cosine = Some(c.mean_inter_cosine);
            row.mean_intra_key_dot = Some(c.mean_intra_key_dot);
            row.mean_intra_query_dot = Some(c.mean_intra_query_dot);
            row.mean_inter_dot = Some(c.mean_inter_dot);
            row.silhouette = Some(c.silhouette);
            row.davies_bouldin = Some(c.davies_bouldin);
            row.zero_keys_excluded = Some(c.zero_keys_excluded);
            row.zero_queries_excluded = Some(c.zero_queries_excluded);
        }
        if self.metrics.contains(&Metric::Spectral) {
            let k = spectral_summary(&keys)?;
            let q = spectral_summary(&queries)?;
            row.key_spectral_norm = Some(k.spectral_norm);
            row.key_frobenius_norm = Some(k.frobenius_norm);
            row.key_stable_rank = Some(k.stable_rank);
            row.key_fsv_variance_fraction = Some(k.fsv_variance_fraction);
            row.query_spectral_norm = Some(q.spectral_norm);
            row.query_frobenius_norm = Some(q.frobenius_norm);
            row.query_stable_rank = Some(q.stable_rank);
            row.query_fsv_variance_fraction = Some(q.fsv_variance_fraction);
        }
        row.status = "ok".into();
        Ok(row)
    }

    /// Sink statistics come from pre-RoPE dumps rotated by the manifest
    /// schedule; post-RoPE dumps are used as given when no pre pair exists.
    fn sink(&self, cell: Cell, base: &SinkRow, out: &mut CellOutput) -> Result<(), (&'static str, CliError)> {
        let pre = self.pair(cell, RopeStage::PreRope).map_err(|e| ("pre_rope", e))?;
        let (stage, schedule, (keys, queries)) = match pre {
            Some(p) => ("pre_rope", Some(self.schedule), p),
            None => match self.pair(cell, RopeStage::PostRope).map_err(|e| ("post_rope", e))? {
                Some(p) => ("post_rope", None, p),
                None => return Ok(()),
            },
        };
        let max_len = *self.lengths.iter().max().expect("non-empty lengths");
        let fail = |e: CliError| (stage, e);
        let keys = keys.truncate(max_len).map_err(|e| fail(e.into()))?;
        let queries = queries.truncate(max_len).map_err(|e| fail(e.into()))?;
        let report = sink_report(&keys, &queries, schedule, &self.attention, self.lengths)
            .map_err(|e| fail(e.into()))?;
        for s in &report.by_length {
            out.sink.push(SinkRow {
                source_stage: stage.into(),
                length: Some(s.length),
                status: "ok".into(),
                sink_share: Some(s.sink_share),
                max_other_share: Some(s.max_other_share),
                max_qk: Some(s.max_qk),
                ..base.clone()
            });
        }
        for (position, &key_norm) in report.key_norms.iter().enumerate() {
            out.profile.push(ProfileRow {
                seed: self.seed,
                layer: cell.layer,
                head: cell.head,
                kv_head: cell.kv_head,
                position,
                key_norm,
                key_score: report.key_scores.get(position).copied(),
                normalized_key_score: report.normalized_key_scores.get(position).copied(),
            });
        }
        Ok(())
    }
}

fn aggregate(seed: u64, cells: &[CellRow], sink: &[SinkRow]) -> Vec<AggregateRow> {
    #[derive(Default)]
    struct Acc {
        sum: f64,
        count: usize,
        failed: usize,
        sampled: bool,
    }
    type Key = (&'static str, String, usize, usize, &'static str);
    let mut groups: BTreeMap<Key, Acc> = BTreeMap::new();
    let mut add = |key: Key, value: Option<f64>, ok: bool, sampled: bool| {
        let acc = groups.entry(key).or_default();
        acc.sampled |= sampled;
        match value {
            Some(v) if ok && v.is_finite() => {
                acc.sum += v;
                acc.count += 1;
            }
            _ => acc.failed += 1,
        }
    };
    for r in cells {
        let Some(length) = r.length else { continue };
        let ok = r.status == "ok";
        for (i, (name, v)) in r.metrics().into_iter().enumerate() {
            if ok && v.is_none() {
                continue; // metric not requested
            }
            add(("cells", r.stage.clone(), length, i, name), v, ok, r.sampled);
        }
    }
    for r in sink {
        let Some(length) = r.length else { continue };
        let ok = r.status == "ok";
        for (i, (name, v)) in [
            ("sink_share", r.sink_share),
            ("max_other_share", r.max_other_share),
            ("max_qk", r.max_qk),
        ]
        .into_iter()
        .enumerate()
        {
            add(("sink", r.source_stage.clone(), length, i, name), v, ok, false);
        }
    }
    groups
        .into_iter()
        .map(|((table, stage, length, _, metric), acc)| AggregateRow {
            seed,
            table,
            stage,
            length,
            metric,
            mean: (acc.count > 0).then(|| acc.sum / acc.count as f64),
            cells: acc.count,
            failed_cells: acc.failed,
            sampled: acc.sampled,
        })
        .collect()
}

pub fn run(args: &AnalyzeArgs, seed: u64, out: &OutputDir) -> CliResult<String> {
    let mut metrics = args.metrics.clone();
    metrics.sort_unstable();
    metrics.dedup();
    if metrics.is_empty() {
        return Err(CliError::Usage("--metrics must name at least one metric".into()));
    }
    if args.pair_budget == 0 {
        return Err(CliError::Usage("--pair-budget must be positive".into()));
    }

    let report = validate_manifest(&args.manifest)?;
    if !report.is_valid() {
        let detail: Vec<String> = report
            .failures
            .iter()
            .map(|f| format!("  entry {} ({}): {:?}", f.index, f.path, f.problem))
            .collect();
        return Err(CliError::Invalid(format!(
            "manifest {} failed validation:\n{}",
            args.manifest.display(),
            detail.join("\n")
        )));
    }
    let manifest = report.manifest;
    if manifest.n_kv_heads == 0 || manifest.n_query_heads % manifest.n_kv_heads != 0 {
        return Err(CliError::Invalid(format!(
            "manifest groups {} query heads over {} kv heads",
            manifest.n_query_heads, manifest.n_kv_heads
        )));
    }
    let group = manifest.n_query_heads / manifest.n_kv_heads;

    let mut cells: Vec<Cell> = manifest
        .files
        .iter()
        .filter(|e| e.role == Role::Query)
        .filter(|e| args.layers.as_ref().is_none_or(|l| l.contains(&e.layer)))
        .filter(|e| args.heads.as_ref().is_none_or(|h| h.contains(&e.head)))
        .map(|e| Cell {
            layer: e.layer,
            head: e.head,
            kv_head: e.head / group,
        })
        .collect();
    cells.sort_unstable();
    cells.dedup();
    if cells.is_empty() {
        return Err(CliError::Invalid("no query dumps match the layer/head filters".into()));
    }

    let min_n = manifest
        .files
        .iter()
        .filter(|e| cells.iter().any(|c| c.layer == e.layer))
        .map(|e| read_header(&resolve(&args.manifest, e)).map(|h| h.n as usize))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .min()
        .unwrap_or(0);
    let lengths: Vec<usize> = match &args.lengths {
        Some(l) => {
            if let Some(&bad) = l.iter().find(|&&x| x == 0 || x > min_n) {
                return Err(CliError::Invalid(format!(
                    "window length {bad} outside 1..={min_n} (shortest dump)"
                )));
            }
            let mut l = l.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        None => {
            let fit: Vec<usize> = DEFAULT_LENGTHS.into_iter().filter(|&l| l <= min_n).collect();
            if fit.is_empty() {
                vec![min_n]
            } else {
                fit
            }
        }
    };

    let names = [CELLS_NAME, SINK_NAME, PROFILE_NAME, AGGREGATE_NAME];
    out.check_free(&names)?;

    let schedule = FrequencySchedule::build(manifest.rope_variant, manifest.head_dim as usize)?;
    let mut attention = AttentionConfig::single_head(manifest.head_dim as usize, manifest.train_len);
    attention.temperature_scaling = args.temperature_scaling;
    let job = Job {
        manifest: &manifest,
        manifest_path: &args.manifest,
        schedule: &schedule,
        attention,
        lengths: &lengths,
        metrics: &metrics,
        seed,
        pair_budget: args.pair_budget,
        exact_below: args.exact_below,
    };
    let outputs: Vec<CellOutput> = cells.par_iter().map(|&c| job.run(c)).collect();

    let mut cell_rows = Vec::new();
    let mut sink_rows = Vec::new();
    let mut profile_rows = Vec::new();
    for o in outputs {
        cell_rows.extend(o.cells);
        sink_rows.extend(o.sink);
        profile_rows.extend(o.profile);
    }
    let aggregate_rows = aggregate(seed, &cell_rows, &sink_rows);
    let failed = cell_rows.iter().filter(|r| r.status != "ok").count()
        + sink_rows.iter().filter(|r| r.status != "ok").count();

    let meta = Metadata::new(
        "analyze",
        seed,
        &Config {
            manifest_sha256: sha256_file(&args.manifest)?,
            lengths: &lengths,
            metrics: &metrics,
            layers: args.layers.as_deref(),
            heads: args.heads.as_deref(),
            pair_budget: args.pair_budget,
            exact_below: args.exact_below,
            temperature_scaling: args.temperature_scaling,
        },
    )?;
    let files = [
        out.write(CELLS_NAME, &csv_bytes(&meta, CELLS_HEADER, &cell_rows)?)?,
        out.write(SINK_NAME, &csv_bytes(&meta, SINK_HEADER, &sink_rows)?)?,
        out.write(PROFILE_NAME, &csv_bytes(&meta, PROFILE_HEADER, &profile_rows)?)?,
        out.write(AGGREGATE_NAME, &csv_bytes(&meta, AGGREGATE_HEADER, &aggregate_rows)?)?,
    ];
    let mut msg = format!(
        "analyzed {} cells at lengths {:?}; {} failed rows\n",
        cells.len(),
        lengths,
        failed
    );
    for f in files {
        msg += &format!("wrote {}\n", f.display());
    }
    Ok(msg)
}
