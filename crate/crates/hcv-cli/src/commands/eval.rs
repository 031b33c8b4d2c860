use std::path::Path;
use std::process::ExitCode;

use hcv_core::{epe, read_flo, Error};

use crate::ArgCursor;

pub fn run(args: &[String]) -> Result<ExitCode, Error> {
    let mut cursor = ArgCursor::new(args);
    let mut respect_mask = false;
    while let Some(flag) = cursor.next_flag() {
        match flag {
            "--mask" => respect_mask = true,
            other => {
                return Err(Error::InvalidArgument(format!("eval: unknown flag {other}")));
            }
        }
    }
    let positional = cursor.positional();
    let [pred_path, gt_path] = positional.as_slice() else {
        return Err(Error::InvalidArgument(
            "eval expects <pred.flo> <gt.flo>".to_string(),
        ));
    };
    let pred = read_flo(Path::new(pred_path))?;
    let mut gt = read_flo(Path::new(gt_path))?;
    if !respect_mask {
        // without --mask every pixel is compared, sentinel or not
        gt.valid = None;
    }
    match epe(&pred, &gt, None) {
        Ok(report) => {
            print!("{}", report.to_kv_block());
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(3))
        }
    }
}
