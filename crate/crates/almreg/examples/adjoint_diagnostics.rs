//! Exercises every operator variant through the randomized adjoint test
//! <Kx, y> = <x, K*y> and prints the worst relative defect plus the power
//! iteration's norm estimate.

use almreg::linop::{adjoint_check, DenseMatrix, GridShape, LinearOperator, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dense = DenseMatrix::new(5, 8, Vector::randn(40, &mut rng).into_vec()).unwrap();
    let blur = DenseMatrix::new(3, 3, vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]).unwrap();

    let ops: Vec<(&str, LinearOperator)> = vec![
        ("identity(8)", LinearOperator::identity(8)),
        ("dense 5x8", LinearOperator::dense(dense.clone())),
        ("diagonal", LinearOperator::diagonal(vec![3.0, -1.0, 0.5, 2.0])),
        (
            "sampling mask",
            LinearOperator::masked_sampling(vec![true, false, true, true, false, true]).unwrap(),
        ),
        (
            "blur on 6x7 grid",
            LinearOperator::convolution(blur, GridShape::new(6, 7)).unwrap(),
        ),
        (
            "diag . dense",
            LinearOperator::compose(
                LinearOperator::diagonal(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
                LinearOperator::dense(dense),
            )
            .unwrap(),
        ),
    ];

    println!("{:<18} {:>6} {:>6} {:>14} {:>12}", "operator", "out", "in", "adjoint defect", "norm est");
    for (name, op) in &ops {
        println!(
            "{:<18} {:>6} {:>6} {:>14.3e} {:>12.6}",
            name,
            op.dim_out(),
            op.dim_in(),
            adjoint_check(op, 7, 25),
            op.norm_est()
        );
    }
}
