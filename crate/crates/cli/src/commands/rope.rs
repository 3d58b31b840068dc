use rope_geometry::io::{read_dump, write_dump, Manifest};
use rope_geometry::{apply_rope, FrequencySchedule, LatentCloud, RopeStage};

use crate::args::RopeArgs;
use crate::error::{CliError, CliResult};

pub fn run(args: &RopeArgs, force: bool) -> CliResult<String> {
    let manifest = args.manifest.as_deref().map(Manifest::load).transpose()?;
    let variant = match (args.variant.build()?, &manifest) {
        (Some(v), _) => v,
        (None, Some(m)) => m.rope_variant,
        (None, None) => {
            return Err(CliError::Usage(
                "give --variant or a --manifest declaring rope_variant".into(),
            ))
        }
    };
    let (header, cloud) = read_dump(&args.input)?;
    if let Some(m) = &manifest {
        if m.head_dim != header.d {
            return Err(CliError::Invalid(format!(
                "dimension mismatch: manifest head_dim {} but {} has d = {}",
                m.head_dim,
                args.input.display(),
                header.d
            )));
        }
    }
    if header.stage == RopeStage::PostRope && !force {
        return Err(CliError::Invalid(format!(
            "{} is already post_rope (pass --force to rotate it again)",
            args.input.display()
        )));
    }
    let schedule = FrequencySchedule::build(variant, cloud.d())?;
    let rotated = if args.positions_zero {
        // R_0 is the identity; copy rather than multiply so signed zeros
        // survive bit for bit.
        let mut meta = cloud.meta.clone();
        meta.stage = RopeStage::PostRope;
        LatentCloud::new(cloud.data().to_vec(), cloud.d(), meta)?
    } else {
        apply_rope(&cloud, &schedule)?
    };
    write_dump(&args.out, &rotated, force)?;
    let before = cloud.frobenius_norm();
    let deviation = if before > 0.0 {
        (rotated.frobenius_norm() - before).abs() / before
    } else {
        0.0
    };
    Ok(format!(
        "wrote {} ({} rows, d = {}, {} schedule, relative Frobenius change {deviation:.3e})\n",
        args.out.display(),
        cloud.n(),
        cloud.d(),
        variant.label()
    ))
}
