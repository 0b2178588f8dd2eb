//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! The end-to-end criterion trains the reference model through the CLI
//! binary; the statistics, brightness, serialization, latency and service
//! criteria then run against that model.

mod experiment;
mod numerics;

use std::process::ExitCode;
use std::time::Instant;

pub type Verdict = Result<String, String>;

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        let started = Instant::now();
        let verdict = f();
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    report("gradient correctness", &mut numerics::gradients);
    report("operator oracles", &mut numerics::operator_oracles);
    report("metric reproduction", &mut numerics::metric_reproduction);
    report("dataset protocol", &mut numerics::dataset_protocol);

    let model = experiment::train(work.path());
    let need = |m: &Result<experiment::Model, String>| m.as_ref().map_err(|e| format!("no acceptance model: {e}")).cloned();
    report("end-to-end experiment", &mut || need(&model).and_then(|m| m.check_training()));
    report("prediction statistics", &mut || need(&model).and_then(|m| m.prediction_statistics()));
    report("brightness normalization", &mut || need(&model).and_then(|m| m.brightness()));
    report("serialization", &mut || need(&model).and_then(|m| m.serialization()));
    report("inference latency", &mut || need(&model).and_then(|m| m.latency()));
    report("service contract", &mut || need(&model).and_then(|m| m.service_contract()));

    if failed == 0 {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
