use std::path::{Path, PathBuf};
use std::process::ExitCode;

use hcv_core::{estimate, flow_to_color, read_image, write_flo, write_image, AggWeights, Error};

use crate::{apply_config_flag, base_config, thread_count, with_threads, ArgCursor};

pub fn run(args: &[String]) -> Result<ExitCode, Error> {
    let mut cfg = base_config(args)?;
    let mut cursor = ArgCursor::new(args);
    let mut out_path: Option<PathBuf> = None;
    let mut viz_path: Option<PathBuf> = None;
    while let Some(flag) = cursor.next_flag() {
        if apply_config_flag(&mut cfg, flag, &mut cursor)? {
            continue;
        }
        match flag {
            "-o" | "--output" => out_path = Some(PathBuf::from(cursor.value(flag)?)),
            "--viz" => viz_path = Some(PathBuf::from(cursor.value(flag)?)),
            other => {
                return Err(Error::InvalidArgument(format!("estimate: unknown flag {other}")));
            }
        }
    }
    let positional = cursor.positional();
    let [img1_path, img2_path] = positional.as_slice() else {
        return Err(Error::InvalidArgument(format!(
            "estimate expects two image paths, got {}",
            positional.len()
        )));
    };
    let out_path = out_path
        .ok_or_else(|| Error::InvalidArgument("estimate: missing -o <out.flo>".to_string()))?;

    let img1 = read_image(Path::new(img1_path))?;
    let img2 = read_image(Path::new(img2_path))?;
    let weights = match &cfg.weights {
        Some(p) => Some(AggWeights::load_hcvw(p)?),
        None => None,
    };

    let threads = thread_count(&cfg);
    let output = with_threads(threads, || estimate(&img1, &img2, &cfg, weights.as_ref()))?;

    write_flo(&out_path, &output.flow)?;
    if let Some(viz) = &viz_path {
        let image = flow_to_color(&output.flow, None);
        write_image(viz, &image)?;
    }

    print!("{}", output.timings.render());
    println!("iterations={}", output.iterations);
    print!("{}", output.plan.render());
    println!("wrote {}", out_path.display());
    if let Some(viz) = viz_path {
        println!("wrote {}", viz.display());
    }
    Ok(ExitCode::SUCCESS)
}
