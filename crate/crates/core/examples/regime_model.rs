//! Hazard families, sojourn laws and sampled holding times.
//!
//! Run with `cargo run --example regime_model`.

use smgbm::mc::{path_rng, simulate_chain};
use smgbm::{HazardFn, RegimeModel};

fn main() -> smgbm::Result<()> {
    let model = RegimeModel::new(
        vec![0.05, 0.05],
        vec![0.2, 0.4],
        vec![0.08, 0.10],
        vec![
            vec![None, Some(HazardFn::weibull(1.0, 2.0))],
            vec![Some(HazardFn::constant(1.0)), None],
        ],
    );
    model.validate().into_result()?;

    println!("age   survival(1)  survival(2)  density(1)  hazard 1->2");
    for y in [0.0, 0.25, 0.5, 1.0, 2.0] {
        println!(
            "{y:4.2}  {:11.6}  {:11.6}  {:10.6}  {:11.6}",
            model.survival(0, y)?,
            model.survival(1, y)?,
            model.sojourn_density(0, y)?,
            model.hazard(0, 1, y)?,
        );
    }

    // An older Weibull regime expects to leave sooner; the Markov one does not care.
    for (regime, age) in [(0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)] {
        let n = 20_000;
        let mean = (0..n)
            .map(|k| model.sample_sojourn(regime, age, (k as f64 + 0.5) / n as f64))
            .sum::<smgbm::Result<f64>>()?
            / n as f64;
        println!("regime {} at age {age}: mean remaining sojourn {mean:.4}", regime + 1);
    }

    let path = simulate_chain(&model, 0, 0.0, 3.0, &mut path_rng(7, 0))?;
    println!("one chain on [0, 3]: jumps at {:?}", path.jump_times);
    println!("                     regimes {:?}", path.regimes.iter().map(|i| i + 1).collect::<Vec<_>>());
    Ok(())
}
