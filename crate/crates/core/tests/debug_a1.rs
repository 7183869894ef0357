use colflat_core::norms::norm_colmax_l1_mat;
use colflat_core::operators::make_dense;
use colflat_core::rng::Dist;
use colflat_core::signal::gen_sparse_flat_signal;
use colflat_core::solver::*;

#[test]
fn dbg_a1_seed0() {
    let op = make_dense(2, 2, Dist::Gaussian, 1000).unwrap();
    let x = gen_sparse_flat_signal(2, 1, 1, 2000, 0.2).unwrap();
    let y = op.apply_mat(x.entries());
    let eta = 0.1 * y.norm();
    let cfg = SolverConfig::default();
    let sol = solve_constrained(&op, &y, eta, &cfg).unwrap();
    let ora = oracle_solve_small(&op, &y, OracleMode::Constrained { eta }, 32).unwrap();
    println!("solver obj {:.10} residual {:.6e} gap_to_eta {:.3e} kkt {:.3e} gamma {:.3e} conv {}",
        sol.objective, sol.residual_norm, (sol.residual_norm-eta).abs(), sol.kkt_residual, sol.gamma, sol.converged);
    println!("oracle obj {:.10} residual {:.6e} (eta {:.6e})", ora.objective, ora.residual_norm, eta);
    println!("solver Z {:?}", sol.minimizer.entries().as_slice());
    println!("oracle Z {:?}", ora.minimizer.entries().as_slice());
    println!("oracle norm1 {}", norm_colmax_l1_mat(ora.minimizer.entries()));
}
