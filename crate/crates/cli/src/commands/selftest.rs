//! Synthetic manifests with known geometry, so `analyze` runs end to end
//! without any model.
//!
//! Layer 0 holds antipodal clusters, layer 1 overlapping Gaussians, layer 2
//! antipodal clusters with the position-0 key at the origin. Each layer has
//! one kv head serving two query heads.

use rope_geometry::fixtures::{antipodal_clusters, origin_sink, overlapping_gaussians, FixtureParams};
use rope_geometry::io::{sha256_file, write_dump, Manifest, ManifestEntry};
use rope_geometry::{apply_rope, FrequencySchedule, LatentCloud, Role, RopeStage, RopeVariant};
use serde::Serialize;

use crate::args::SelftestArgs;
use crate::cell_seed;
use crate::error::{CliError, CliResult};
use crate::output::{json_bytes, Metadata, OutputDir};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const SUMMARY_NAME: &str = "selftest.json";
const DUMP_DIR: &str = "dumps";
const FIXTURES: [&str; 3] = ["antipodal", "overlapping-gaussians", "origin-sink"];
const QUERY_HEADS: u32 = 2;

type Fixture = fn(&FixtureParams) -> rope_geometry::Result<(LatentCloud, LatentCloud)>;

fn fixture(layer: usize) -> Fixture {
    [antipodal_clusters, overlapping_gaussians, origin_sink][layer]
}

/// Rounds through f32 so post-RoPE dumps are the exact rotation of what the
/// pre-RoPE dump stores.
fn as_stored(cloud: LatentCloud, layer: u32, head: u32) -> CliResult<LatentCloud> {
    let mut meta = cloud.meta.clone();
    meta.model = "selftest".into();
    meta.layer = layer;
    meta.head = head;
    let d = cloud.d();
    let data = cloud.into_data().into_iter().map(|x| x as f32 as f64).collect();
    Ok(LatentCloud::new(data, d, meta)?)
}

#[derive(Serialize)]
struct Summary {
    manifest: &'static str,
    layers: Vec<LayerInfo>,
}

#[derive(Serialize)]
struct LayerInfo {
    layer: u32,
    fixture: &'static str,
}

pub fn run(args: &SelftestArgs, seed: u64, out: &OutputDir) -> CliResult<String> {
    if args.n < 2 {
        return Err(CliError::Usage("--n must be at least 2".into()));
    }
    out.check_free(&[MANIFEST_NAME, SUMMARY_NAME])?;
    let variant = RopeVariant::standard(10_000.0);
    let schedule = FrequencySchedule::build(variant, args.head_dim)?;
    let dump_dir = out.path(DUMP_DIR);
    std::fs::create_dir_all(&dump_dir)?;

    let mut files = Vec::new();
    let mut write = |cloud: &LatentCloud, role: Role, stage: RopeStage| -> CliResult<()> {
        let (layer, head) = (cloud.meta.layer, cloud.meta.head);
        let tag = if role == Role::Key { "k" } else { "q" };
        let st = if stage == RopeStage::PreRope { "pre" } else { "post" };
        let rel = format!("{DUMP_DIR}/l{layer}_{tag}{head}_{st}.rkq");
        let path = out.path(&rel);
        write_dump(&path, cloud, out.force)?;
        files.push(ManifestEntry {
            layer,
            head,
            role,
            pre_post: stage,
            path: rel,
            sha256: sha256_file(&path)?,
        });
        Ok(())
    };

    for (layer, _) in FIXTURES.iter().enumerate() {
        let l = layer as u32;
        let params = |head: u32| FixtureParams {
            n: args.n,
            d: args.head_dim,
            separation: args.separation,
            noise: args.noise,
            seed: cell_seed(seed, l, head, 0),
        };
        for head in 0..QUERY_HEADS {
            let (keys, queries) = fixture(layer)(&params(head))?;
            if head == 0 {
                let keys = as_stored(keys, l, 0)?;
                write(&keys, Role::Key, RopeStage::PreRope)?;
                write(&apply_rope(&keys, &schedule)?, Role::Key, RopeStage::PostRope)?;
            }
            let queries = as_stored(queries, l, head)?;
            write(&queries, Role::Query, RopeStage::PreRope)?;
            write(&apply_rope(&queries, &schedule)?, Role::Query, RopeStage::PostRope)?;
        }
    }

    let manifest = Manifest {
        model_name: "selftest".into(),
        train_len: args.train_len,
        head_dim: args.head_dim as u64,
        n_layers: FIXTURES.len() as u32,
        n_query_heads: QUERY_HEADS,
        n_kv_heads: 1,
        rope_variant: variant,
        files,
    };
    let manifest_path = out.path(MANIFEST_NAME);
    manifest.save(&manifest_path, out.force)?;
    let meta = Metadata::new("selftest", seed, args)?;
    let summary = Summary {
        manifest: MANIFEST_NAME,
        layers: FIXTURES
            .iter()
            .enumerate()
            .map(|(layer, &fixture)| LayerInfo {
                layer: layer as u32,
                fixture,
            })
            .collect(),
    };
    out.write(SUMMARY_NAME, &json_bytes(&meta, &summary)?)?;
    Ok(format!(
        "wrote {} ({} dumps)\n",
        manifest_path.display(),
        manifest.files.len()
    ))
}
