//! The discrepancy threshold rho is a free parameter; the error bound it
//! yields scales with f(rho) = (1 + rho) sqrt(1 + 2 / (rho - 1)). This prints
//! the curve, its minimizer, and a few evaluations of the auxiliary infimum
//! inf_gamma (1 + gamma)(b + a / gamma) that the bound is built from.

use almreg::stopping::{auxlem_infimum, f_rho, optimal_rho};

fn main() {
    println!("rho      f(rho)");
    for k in 0..14 {
        let rho = 1.1 + 0.25 * k as f64;
        println!("{rho:<8.3} {:.6}", f_rho(rho).unwrap());
    }
    let (rho_star, f_star) = optimal_rho();
    println!("\nminimizer: rho* = {rho_star:.6}, f(rho*) = {f_star:.6}");

    println!("\nclosed form (sqrt(b) + sqrt(a+b))^2 against the minimizing gamma:");
    for (a, b) in [(1.0, 1.0), (4.0, 0.25), (0.09, 2.0)] {
        let inf = auxlem_infimum(a, b).unwrap();
        let closed = (b.sqrt() + (a + b).sqrt()).powi(2);
        println!(
            "a = {a:<5} b = {b:<5} infimum = {:.12} closed = {closed:.12} gamma* = {:.6}",
            inf.value, inf.gamma_star
        );
    }
}
