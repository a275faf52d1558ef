//! Penalties |u|_q^q with 1 < q < 2 sit between the sparse and quadratic
//! regimes: the norm error decays like delta^(1/2) and the dual images
//! converge at rate delta^(1/3) in the conjugate norm. A sweep at q = 1.5
//! shows both, and the local growth inequality behind the primal rate is
//! sampled at random perturbations.

use almreg::alm::StepSchedule;
use almreg::certify::lq_growth;
use almreg::harness::{gen_problem_lq, sweep_run, SweepConfig};
use almreg::linop::Vector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let q = 1.5;
    let inst = gen_problem_lq(15, 25, q, 7).unwrap();
    let cfg = SweepConfig::new(0.1, StepSchedule::constant(2.0).unwrap()).unwrap();
    let out = sweep_run(&inst, &cfg).unwrap();

    println!("instance {}\n", out.label);
    println!("{:>12} {:>12} {:>14}", "delta", "|u - u+|_q", "dual distance");
    for run in &out.runs {
        println!(
            "{:>12.3e} {:>12.4e} {:>14.4e}",
            run.delta,
            run.distances.lq.unwrap(),
            run.distances.dual_lr.unwrap()
        );
    }
    let primal = out.rate("distance_lq").unwrap().fit.unwrap().slope;
    let dual = out.rate("distance_dual").unwrap().fit.unwrap().slope;
    println!("\nprimal slope {primal:.3} (expect about 1/2), dual slope {dual:.3} (expect about 1/3)");

    // Growth inequality J_q(v) - J_q(u) - <grad, v-u> >= c_q |v-u|^2 near u.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let dir = Vector::randn(inst.u_dagger.len(), &mut rng);
        let v = inst.u_dagger.add_scaled(0.05 / dir.norm(), &dir);
        let g = lq_growth(q, &inst.u_dagger, &v, 0.5).unwrap();
        if g.within_radius {
            worst = worst.min(g.bregman - g.lower_bound);
        }
    }
    println!("growth margin over 200 nearby perturbations: {worst:+.3e}");
}
