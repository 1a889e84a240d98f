//! Full acceptance battery on the Markov and Weibull two-regime markets.
//!
//! Runs without the libtest harness so every criterion line is printed.

use std::path::Path;
use std::process::ExitCode;

use smgbm::acceptance::Battery;
use smgbm::config::ExperimentConfig;

fn main() -> ExitCode {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut failed = 0;
    for name in ["markov", "weibull"] {
        let config = ExperimentConfig::load(dir.join(format!("{name}.toml"))).expect("bundled config parses");
        let report = config.validate();
        assert!(report.is_empty(), "{name}: {report:?}");
        println!("== {name} ==");
        let results = Battery::from_config(&config)
            .run(None, |r| println!("{r}"))
            .expect("battery runs");
        assert_eq!(results.len(), 11, "{name}: expected eleven criteria");
        let passed = results.iter().filter(|r| r.passed).count();
        println!("{name}: {passed}/{} criteria passed", results.len());
        failed += results.len() - passed;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
