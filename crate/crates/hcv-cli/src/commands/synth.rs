use std::path::PathBuf;
use std::process::ExitCode;

use hcv_core::{make_synthetic_pair, write_flo, write_image, Error};

use crate::{parse_i64, parse_size, parse_usize, ArgCursor};

pub fn run(args: &[String]) -> Result<ExitCode, Error> {
    let mut cursor = ArgCursor::new(args);
    let mut shift: Option<(i64, i64)> = None;
    let mut size: Option<(usize, usize)> = None;
    let mut seed = 0u64;
    let mut out_dir: Option<PathBuf> = None;
    while let Some(flag) = cursor.next_flag() {
        match flag {
            "--shift" => {
                let dx = parse_i64(cursor.value(flag)?, flag)?;
                let dy = parse_i64(cursor.value(flag)?, flag)?;
                shift = Some((dx, dy));
            }
            "--size" => size = Some(parse_size(cursor.value(flag)?)?),
            "--seed" => seed = parse_usize(cursor.value(flag)?, flag)? as u64,
            "-o" | "--output" => out_dir = Some(PathBuf::from(cursor.value(flag)?)),
            other => {
                return Err(Error::InvalidArgument(format!("synth: unknown flag {other}")));
            }
        }
    }
    let shift = shift.ok_or_else(|| Error::InvalidArgument("synth: missing --shift DX DY".to_string()))?;
    let (width, height) =
        size.ok_or_else(|| Error::InvalidArgument("synth: missing --size WxH".to_string()))?;
    let out_dir =
        out_dir.ok_or_else(|| Error::InvalidArgument("synth: missing -o <dir>".to_string()))?;

    let (frame1, frame2, gt) = make_synthetic_pair(width, height, shift.0, shift.1, seed)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    let f1 = out_dir.join("frame1.pgm");
    let f2 = out_dir.join("frame2.pgm");
    let gt_path = out_dir.join("gt.flo");
    write_image(&f1, &frame1)?;
    write_image(&f2, &frame2)?;
    write_flo(&gt_path, &gt)?;
    println!("wrote {}", f1.display());
    println!("wrote {}", f2.display());
    println!("wrote {}", gt_path.display());
    println!(
        "shift=({}, {}) size={}x{} seed={} valid_pixels={}",
        shift.0,
        shift.1,
        width,
        height,
        seed,
        gt.valid_count()
    );
    Ok(ExitCode::SUCCESS)
}
