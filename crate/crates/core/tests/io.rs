use proptest::prelude::*;
use rope_geometry::io::{read_dump, sha256_file, validate_manifest, write_dump, EntryProblem, Manifest, ManifestEntry};
use rope_geometry::{CloudMeta, LatentCloud, Role, RopeStage, RopeVariant};

fn meta(layer: u32, head: u32, role: Role, stage: RopeStage) -> CloudMeta {
    CloudMeta { model: "t".into(), layer, head, role, stage }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_byte_exact(
        values in prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 2..256),
        layer in any::<u32>(), head in any::<u32>(), key in any::<bool>(), pre in any::<bool>(),
    ) {
        let d = 2;
        let n = values.len() / d;
        let data: Vec<f64> = values[..n * d].iter().map(|&x| x as f64).collect();
        let role = if key { Role::Key } else { Role::Query };
        let stage = if pre { RopeStage::PreRope } else { RopeStage::PostRope };
        let cloud = LatentCloud::new(data, d, meta(layer, head, role, stage)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.rkq");
        let b = dir.path().join("b.rkq");
        write_dump(&a, &cloud, false).unwrap();
        let (h, back) = read_dump(&a).unwrap();
        prop_assert_eq!(h.layer, layer);
        prop_assert_eq!(h.role, role);
        prop_assert_eq!(back.data(), cloud.data());
        write_dump(&b, &back, false).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn manifest_reports_every_bad_entry() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for head in 0..10u32 {
        let cloud = LatentCloud::new(vec![head as f64; 16], 4, meta(0, head, Role::Key, RopeStage::PreRope)).unwrap();
        let name = format!("k_{head}.rkq");
        let path = dir.path().join(&name);
        write_dump(&path, &cloud, false).unwrap();
        files.push(ManifestEntry {
            layer: 0,
            head,
            role: Role::Key,
            pre_post: RopeStage::PreRope,
            path: name,
            sha256: sha256_file(&path).unwrap(),
        });
    }
    files[3].sha256 = "0".repeat(64);
    files.push(ManifestEntry { path: "missing.rkq".into(), head: 10, ..files[0].clone() });
    let manifest = Manifest {
        model_name: "fixture".into(),
        train_len: 16,
        head_dim: 4,
        n_layers: 1,
        n_query_heads: 11,
        n_kv_heads: 11,
        rope_variant: RopeVariant::standard(10_000.0),
        files,
    };
    let path = dir.path().join("manifest.json");
    manifest.save(&path, false).unwrap();
    assert!(manifest.save(&path, false).is_err());
    assert_eq!(Manifest::load(&path).unwrap(), manifest);

    let report = validate_manifest(&path).unwrap();
    assert_eq!(report.entries_checked, 11);
    assert_eq!(report.failures.len(), 2);
    assert_eq!(report.failures[0].index, 3);
    assert!(matches!(report.failures[0].problem, EntryProblem::ChecksumMismatch { .. }));
    assert_eq!(report.failures[1].problem, EntryProblem::Missing);

    let empty = Manifest { files: vec![], ..manifest };
    let path = dir.path().join("empty.json");
    empty.save(&path, false).unwrap();
    let report = validate_manifest(&path).unwrap();
    assert!(report.is_valid());
    assert_eq!(report.entries_checked, 0);
}

#[test]
fn malformed_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, "{\"model_name\": 3}").unwrap();
    assert!(validate_manifest(&path).is_err());
}
