use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rope_geometry::theory::{
    verify_lemma1, verify_lemma2, verify_theorem1, ConvergenceReport, RankOneSpec,
    ToleranceTier, UKind,
};
use rope_geometry::{CloudMeta, FrequencySchedule, LatentCloud, RopeVariant};
use serde::Serialize;

use crate::args::{Suite, TheoryArgs, TierArg, UShape, VShape};
use crate::error::{CliError, CliResult};
use crate::output::{json_bytes, Metadata, OutputDir};

pub const DEFAULT_GRID: [usize; 4] = [1024, 4096, 16_384, 65_536];
/// Frobenius preservation bound for the random-cloud suite.
pub const LEMMA2_TOL: f64 = 1e-6;
const LEMMA2_MAX_N: usize = 4096;
const LEMMA2_MAX_D: usize = 128;
const LEMMA2_TRAIN_LEN: u64 = 4096;

pub fn report_name(suite: Suite) -> String {
    let s = match suite {
        Suite::Lemma1 => "lemma1",
        Suite::Lemma2 => "lemma2",
        Suite::Theorem1 => "theorem1",
        Suite::All => "all",
    };
    format!("theory-{s}.json")
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum CaseDetail {
    Convergence(ConvergenceReport),
    Frobenius {
        clouds: usize,
        variants: Vec<RopeVariant>,
        max_deviation: f64,
        tolerance: f64,
    },
}

#[derive(Debug, Serialize)]
struct Case {
    name: String,
    passed: bool,
    detail: CaseDetail,
}

#[derive(Serialize)]
struct Report<'a> {
    passed: bool,
    cases: &'a [Case],
}

#[derive(Serialize)]
struct Config<'a> {
    suite: Suite,
    v: VShape,
    u: UShape,
    n: &'a [usize],
    head_dim: Option<usize>,
    theta: f64,
    tier: Option<TierArg>,
    clouds: usize,
}

fn u_kind(u: UShape) -> UKind {
    match u {
        UShape::Ones => UKind::Ones,
        UShape::Monotone => UKind::Monotone { slope: 1.0 },
        UShape::Oscillation => UKind::BoundedOscillation { amplitude: 0.5 },
    }
}

fn rank_one_cases(args: &TheoryArgs, grid: &[usize]) -> CliResult<Vec<Case>> {
    let shapes: &[VShape] = match args.v {
        VShape::Both => &[VShape::SinglePlane, VShape::Uniform],
        VShape::SinglePlane => &[VShape::SinglePlane],
        VShape::Uniform => &[VShape::Uniform],
    };
    let suites: &[Suite] = match args.suite {
        Suite::All => &[Suite::Lemma1, Suite::Theorem1],
        Suite::Lemma1 => &[Suite::Lemma1],
        Suite::Theorem1 => &[Suite::Theorem1],
        Suite::Lemma2 => &[],
    };
    let mut cases = Vec::new();
    for &shape in shapes {
        let (spec, default_tier, label) = match shape {
            VShape::SinglePlane => (
                RankOneSpec::single_plane(args.head_dim.unwrap_or(128), grid.to_vec())?,
                ToleranceTier::Strict,
                "single-plane",
            ),
            _ => (
                RankOneSpec::uniform(args.head_dim.unwrap_or(16), grid.to_vec())?,
                ToleranceTier::Loose,
                "uniform",
            ),
        };
        let spec = spec.with_u(u_kind(args.u))?;
        let tier = match args.tier {
            Some(TierArg::Strict) => ToleranceTier::Strict,
            Some(TierArg::Loose) => ToleranceTier::Loose,
            None => default_tier,
        };
        let schedule = FrequencySchedule::build(RopeVariant::standard(args.theta), spec.d())?;
        for &suite in suites {
            let (name, report) = match suite {
                Suite::Lemma1 => ("lemma1", verify_lemma1(&spec, &schedule, tier)?),
                _ => ("theorem1", verify_theorem1(&spec, &schedule, tier)?),
            };
            cases.push(Case {
                name: format!("{name}/{label}/d{}", spec.d()),
                passed: report.passed,
                detail: CaseDetail::Convergence(report),
            });
        }
    }
    Ok(cases)
}

/// The four variants at one shared training length.
pub fn lemma2_variants() -> Vec<RopeVariant> {
    vec![
        RopeVariant::standard(10_000.0),
        RopeVariant::HighFrequency {
            train_len: LEMMA2_TRAIN_LEN,
        },
        RopeVariant::half_rope(),
        RopeVariant::rope_id(LEMMA2_TRAIN_LEN),
    ]
}

/// Random clouds with n ≤ 4096, even d in [4, 128] and magnitudes spread
/// over six decades.
pub fn random_cloud(rng: &mut ChaCha8Rng) -> LatentCloud {
    let d = 2 * rng.gen_range(2..=LEMMA2_MAX_D / 2);
    let n = rng.gen_range(1..=LEMMA2_MAX_N);
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    let data = (0..n * d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    LatentCloud::new(data, d, CloudMeta::default()).expect("valid random cloud")
}

/// Largest relative Frobenius deviation over `clouds` random clouds and all
/// four variants.
pub fn lemma2_max_deviation(seed: u64, clouds: usize) -> CliResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..clouds {
        let cloud = random_cloud(&mut rng);
        for v in lemma2_variants() {
            let s = FrequencySchedule::build(v, cloud.d())?;
            worst = worst.max(verify_lemma2(&cloud, &s)?);
        }
    }
    Ok(worst)
}

pub fn run(args: &TheoryArgs, seed: u64, out: &OutputDir) -> CliResult<String> {
    let grid = args.n.clone().unwrap_or(DEFAULT_GRID.to_vec());
    if grid.is_empty() || grid.contains(&0) {
        return Err(CliError::Usage("--n needs positive lengths".into()));
    }
    let name = report_name(args.suite);
    out.check_free(&[&name])?;

    let mut cases = rank_one_cases(args, &grid)?;
    if matches!(args.suite, Suite::Lemma2 | Suite::All) {
        let max_deviation = lemma2_max_deviation(seed, args.clouds)?;
        cases.push(Case {
            name: "lemma2/random-clouds".into(),
            passed: max_deviation <= LEMMA2_TOL,
            detail: CaseDetail::Frobenius {
                clouds: args.clouds,
                variants: lemma2_variants(),
                max_deviation,
                tolerance: LEMMA2_TOL,
            },
        });
    }
    let passed = cases.iter().all(|c| c.passed);
    let meta = Metadata::new(
        "theory",
        seed,
        &Config {
            suite: args.suite,
            v: args.v,
            u: args.u,
            n: &grid,
            head_dim: args.head_dim,
            theta: args.theta,
            tier: args.tier,
            clouds: args.clouds,
        },
    )?;
    let path = out.write(&name, &json_bytes(&meta, &Report { passed, cases: &cases })?)?;

    let mut lines = String::new();
    for c in &cases {
        let summary = match &c.detail {
            CaseDetail::Convergence(r) => {
                let last = r.last();
                let (value, target) = match r.quantity {
                    rope_geometry::theory::Quantity::FsvRatio => {
                        (last.fsv_ratio, last.predicted_fsv_ratio)
                    }
                    rope_geometry::theory::Quantity::StableRankRatio => {
                        (last.stable_rank_ratio, last.predicted_stable_rank_ratio)
                    }
                };
                format!("n={} value={value:.6} limit={target:.6}", last.n)
            }
            CaseDetail::Frobenius { max_deviation, .. } => {
                format!("max_deviation={max_deviation:.3e}")
            }
        };
        let tag = if c.passed { "PASS" } else { "FAIL" };
        lines += &format!("{tag} {} {summary}\n", c.name);
    }
    lines += &format!("wrote {}\n", path.display());
    if passed {
        Ok(lines)
    } else {
        let failing: Vec<&str> = cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        print!("{lines}");
        Err(CliError::Assertion(format!("failed: {}", failing.join(", "))))
    }
}
