//! Analytic FFM gradients against central finite differences, and the
//! descent property of a single AdaGrad step.

use embcycle::ffm::{init_model, Active, FfmModel, Hyperparams};
use embcycle::seed::RunSeed;
use embcycle::types::{InteractionEvent, Outcomes, SignalType};
use rand::Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely against it, since
/// the finite-difference truncation error alone is of order `H^2`.
pub const FLOOR: f64 = 1e-6;
/// Parameters touched by one k=3 event: bias + 3 linear + 3 pairs * 2 blocks * k.
pub const PARAMS_PER_EVENT: usize = 1 + 3 + 18;

fn event(rng: &mut impl Rng, seq: u64) -> InteractionEvent {
    let view = rng.gen_range(0..2u8);
    InteractionEvent {
        seq_no: seq,
        user_id: rng.gen_range(0..4),
        item_id: rng.gen_range(0..4),
        item_view_count_at_impression: 0,
        outcomes: Outcomes {
            view,
            skip: 1 - view,
            click: rng.gen_range(0..2),
            like: rng.gen_range(0..2),
            share: rng.gen_range(0..2),
        },
        sim_time: rng.gen_range(0.0..48.0),
    }
}

/// A k=3 model moved away from its initialization by a few random steps.
fn random_model(seed: u64) -> (FfmModel, Hyperparams, rand_chacha::ChaCha8Rng) {
    let mut rng = RunSeed(seed).rng("gradient-test");
    let hyper = Hyperparams {
        learning_rate: rng.gen_range(0.05..0.5),
        l2_reg: rng.gen_range(0.0..0.1),
        init_scale: rng.gen_range(0.5..2.0),
        ..Hyperparams::default()
    };
    let mut model = init_model(3, &hyper, RunSeed(seed)).unwrap();
    for seq in 0..rng.gen_range(0..8) {
        let e = event(&mut rng, seq);
        model.sgd_step(&e, SignalType::Click, &hyper).unwrap();
    }
    (model, hyper, rng)
}

/// Compares every touched parameter of `models` random models. Returns the
/// number of entries compared and the worst relative error.
pub fn check_gradients(models: u64) -> Result<(usize, f64), String> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..models {
        let (model, hyper, mut rng) = random_model(seed);
        let e = event(&mut rng, 100);
        let active = Active::of(&e);
        let y = f64::from(e.outcomes.click);
        let grad = model.gradient(&active, y, hyper.l2_reg);
        for (param, analytic) in grad.entries() {
            let x = model.param(param);
            let mut plus = model.clone();
            plus.set_param(param, x + H);
            let mut minus = model.clone();
            minus.set_param(param, x - H);
            let numeric =
                (plus.objective(&active, y, hyper.l2_reg) - minus.objective(&active, y, hyper.l2_reg)) / (2.0 * H);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            checked += 1;
            if rel > REL_TOL {
                return Err(format!(
                    "seed {seed} {param:?}: analytic {analytic} numeric {numeric} (rel {rel:e})"
                ));
            }
        }
    }
    Ok((checked, worst))
}

/// One step with a small learning rate never increases the event loss.
pub fn check_descent(seeds: u64) -> Result<(), String> {
    for seed in 0..seeds {
        let (mut model, mut hyper, mut rng) = random_model(seed);
        hyper.learning_rate = rng.gen_range(0.0..=0.05);
        let e = event(&mut rng, 100);
        let active = Active::of(&e);
        let y = f64::from(e.outcomes.like);
        let before = model.objective(&active, y, hyper.l2_reg);
        model.sgd_step(&e, SignalType::Like, &hyper).unwrap();
        let after = model.objective(&active, y, hyper.l2_reg);
        if after > before + 1e-12 {
            return Err(format!("seed {seed}: {before} -> {after}"));
        }
    }
    Ok(())
}
