use std::process::ExitCode;

use hcv_core::oracle::run_selfcheck;
use hcv_core::Error;

pub fn run(args: &[String]) -> Result<ExitCode, Error> {
    if !args.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "selfcheck takes no arguments, got {args:?}"
        )));
    }
    let outcomes = run_selfcheck();
    let mut failed = 0usize;
    for o in &outcomes {
        match &o.error {
            None => println!("selfcheck {} ... ok", o.name),
            Some(e) => {
                println!("selfcheck {} ... FAILED: {e}", o.name);
                failed += 1;
            }
        }
    }
    println!("selfcheck: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        Ok(ExitCode::from(3))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}
