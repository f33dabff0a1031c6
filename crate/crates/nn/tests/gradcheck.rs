use spun_nn::gradcheck::{run_suite, BLOCK_TOL, PRIMITIVE_TOL};

#[test]
fn every_primitive_and_block_matches_finite_differences() {
    let reports = run_suite(7).unwrap();
    for r in &reports {
        println!("{:<30} max_rel_err={:.3e} tol={:.0e} n={}", r.name, r.max_rel_err, r.tolerance, r.checked);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    assert!(failed.is_empty(), "gradcheck failed for {failed:?}");
    assert!(reports.iter().any(|r| r.tolerance == PRIMITIVE_TOL));
    assert!(reports.iter().any(|r| r.tolerance == BLOCK_TOL));
}
