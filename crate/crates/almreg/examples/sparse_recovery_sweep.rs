//! l1 recovery under the discrepancy rule. The generator certifies the
//! instance (dual vector, strict complementarity margin theta, injectivity
//! constant on the support), and the sweep shows the l1 error tracking the
//! noise level linearly.

use almreg::alm::StepSchedule;
use almreg::certify::{sparse_bound_probes, sparse_constants};
use almreg::harness::{gen_problem_sparse, sweep_run, SweepConfig};

fn main() {
    let inst = gen_problem_sparse(20, 50, 3, 11, 50).unwrap();
    let cert = inst.certificate.as_ref().unwrap();
    let consts = sparse_constants(&inst.k, cert).unwrap();
    println!(
        "instance {}: support {:?}, theta = {:.4}, c = {:.4}",
        inst.label,
        cert.support.as_ref().unwrap(),
        cert.theta.unwrap(),
        consts.c
    );

    // 500 random probes of the pointwise inequality behind the error bound.
    let probes = sparse_bound_probes(&inst.k, cert, &consts, 500, 123).unwrap();
    println!(
        "probe check: {} probes, {} violations, worst margin {:+.3e}\n",
        probes.probes, probes.violations, probes.worst_margin
    );

    let cfg = SweepConfig::new(0.05, StepSchedule::constant(2.0).unwrap()).unwrap();
    let out = sweep_run(&inst, &cfg).unwrap();
    println!("{:>12} {:>5} {:>12} {:>12}", "delta", "n", "residual", "l1 error");
    for run in &out.runs {
        println!(
            "{:>12.3e} {:>5} {:>12.3e} {:>12.3e}",
            run.delta,
            run.gamma_index.unwrap(),
            run.residual,
            run.distances.l1.unwrap()
        );
    }
    let fit = out.rate("distance_l1").unwrap().fit.unwrap();
    println!("\nl1 error vs delta: slope {:.3} (linear rate would be 1)", fit.slope);
}
