use std::process::ExitCode;

use hcv_core::{
    count_allpairs, count_hcv, measure_peak, Error, Scenario, ScenarioMethod,
};

use crate::{apply_config_flag, base_config, parse_size, parse_usize, thread_count, with_threads, ArgCursor};

pub fn run(args: &[String]) -> Result<ExitCode, Error> {
    let mut cfg = base_config(args)?;
    let mut cursor = ArgCursor::new(args);
    let mut size: Option<(usize, usize)> = None;
    let mut levels = 1usize;
    let mut measure = false;
    let mut cap: Option<u64> = None;
    while let Some(flag) = cursor.next_flag() {
        if apply_config_flag(&mut cfg, flag, &mut cursor)? {
            continue;
        }
        match flag {
            "--size" => size = Some(parse_size(cursor.value(flag)?)?),
            "--levels" => levels = parse_usize(cursor.value(flag)?, flag)?,
            "--measure" => measure = true,
            "--cap" => cap = Some(parse_usize(cursor.value(flag)?, flag)? as u64),
            other => {
                return Err(Error::InvalidArgument(format!("bench-mem: unknown flag {other}")));
            }
        }
    }
    let (width, height) =
        size.ok_or_else(|| Error::InvalidArgument("bench-mem: missing --size WxH".to_string()))?;

    let allpairs = count_allpairs(height, width, levels);
    let hcv = count_hcv(height, width, &cfg);
    println!("== all-pairs plan ({levels} level{}) ==", if levels == 1 { "" } else { "s" });
    print!("{}", allpairs.render());
    println!("== hybrid volume plan ==");
    print!("{}", hcv.render());
    // ratios always compare against the single-level all-pairs volume
    let ap1 = count_allpairs(height, width, 1);
    let ratio = hcv.score_elements as f64 / ap1.total_elements as f64;
    println!(
        "score_element_ratio={:.6}  (hybrid correlation entries / single-level all-pairs entries)",
        ratio
    );
    println!(
        "all_pairs_over_hybrid={:.2}x",
        ap1.total_elements as f64 / hcv.score_elements as f64
    );
    println!(
        "byte_ratio={:.6}",
        hcv.total_bytes as f64 / ap1.total_bytes as f64
    );

    if measure {
        let threads = thread_count(&cfg);
        for (method, plan_bytes) in [
            (ScenarioMethod::Hcv, hcv.total_bytes),
            (ScenarioMethod::Allpairs, allpairs.total_bytes),
        ] {
            let scenario = Scenario {
                method,
                width,
                height,
                cap_bytes: cap,
            };
            let name = match method {
                ScenarioMethod::Hcv => "hcv",
                ScenarioMethod::Allpairs => "allpairs",
            };
            match with_threads(threads, || measure_peak(&scenario, &cfg)) {
                Ok(peak) => println!(
                    "measured_peak.{name}={peak} bytes ({:.3}x of plan)",
                    peak as f64 / plan_bytes as f64
                ),
                Err(Error::BudgetExceeded { required, cap }) => {
                    println!("measured_peak.{name}=budget-exceeded (needs {required} bytes, cap {cap})")
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
