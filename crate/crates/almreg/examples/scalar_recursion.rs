//! The one-dimensional sanity check: identity operator, quadratic penalty,
//! data 1. With unit steps both the iterate and the multiplier follow
//! 1 - 2^-n exactly, so any drift here points at the inner solver.

use almreg::alm::{alm_run, AlmOptions, StepSchedule};
use almreg::harness::scalar_quadratic_instance;
use almreg::stopping::StoppingRule;

fn main() {
    let inst = scalar_quadratic_instance();
    let opts = AlmOptions::new(StepSchedule::constant(1.0).unwrap());
    let traj = alm_run(&inst.k, &inst.g, &inst.penalty, &opts, &StoppingRule::fixed(12).unwrap())
        .unwrap();

    println!("{:>3} {:>22} {:>22} {:>12}", "n", "u_n", "1 - 2^-n", "deviation");
    for state in &traj.states {
        let closed = 1.0 - 0.5f64.powi(state.n as i32);
        println!(
            "{:>3} {:>22.16} {:>22.16} {:>12.3e}",
            state.n,
            state.u[0],
            closed,
            (state.u[0] - closed).abs().max((state.p[0] - closed).abs())
        );
    }
}
