//! Noise sweep on a random quadratic problem. Every level runs until the
//! residual drops below rho * delta; the a-posteriori inequalities are then
//! evaluated along the trajectory and the closest call is printed per run.

use almreg::alm::StepSchedule;
use almreg::harness::{gen_problem_quadratic, sweep_run, SweepConfig};

fn main() {
    let inst = gen_problem_quadratic(20, 30, 17).unwrap();
    let cfg = SweepConfig::new(0.1, StepSchedule::constant(4.0).unwrap()).unwrap();
    let out = sweep_run(&inst, &cfg).unwrap();

    println!("instance {} (rho = {:.4})\n", out.label, out.config.rho);
    println!(
        "{:>12} {:>5} {:>10} {:>12} {:>12} {:>24}",
        "delta", "n", "t_n", "residual", "d_sym", "tightest inequality"
    );
    for run in &out.runs {
        let bounds = run.bounds.as_ref().unwrap();
        let worst = bounds.worst().unwrap();
        println!(
            "{:>12.3e} {:>5} {:>10.2} {:>12.3e} {:>12.3e} {:>18} {:+.2e}",
            run.delta,
            run.gamma_index.unwrap(),
            run.t_gamma.unwrap(),
            run.residual,
            run.d_sym.unwrap(),
            worst.name,
            worst.slack,
        );
    }

    let rate = out.rate("d_sym").unwrap();
    println!(
        "\nd_sym vs delta: slope {:.3} over {} levels (r^2 = {:.4})",
        rate.fit.unwrap().slope,
        rate.points.len(),
        rate.fit.unwrap().r_squared
    );
    println!("all inequalities hold: {}", out.all_hold());
}
