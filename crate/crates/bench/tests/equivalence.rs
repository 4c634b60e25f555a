use fglstm_bench::{parameter_table_grid, run_bench, BenchCase, BenchGeometry, TOLERANCE};

fn geometry(p: usize, k: usize, c: usize) -> BenchGeometry {
    BenchGeometry { p, k, c, batch: 5, steps: 4 }
}

#[test]
fn strategies_agree_on_small_geometries() {
    for (p, k, c) in [(1, 3, 2), (2, 1, 1), (7, 2, 3), (4, 4, 2)] {
        let case = BenchCase::new(geometry(p, k, c), 1).unwrap();
        let d = case.divergence().unwrap();
        assert!(d <= TOLERANCE, "p={p} k={k} c={c}: {d}");
    }
}

#[test]
fn one_group_is_a_single_cell() {
    let case = BenchCase::new(geometry(1, 8, 4), 0).unwrap();
    assert_eq!(case.run_masked(true), case.run_small_cells(true));
    let report = run_bench(geometry(1, 8, 4), 3, 0).unwrap();
    assert!(report.max_divergence <= TOLERANCE);
    assert!(report.masked_throughput > 0.0 && report.small_cells_throughput > 0.0);
}

#[test]
fn parameter_table_geometry_runs() {
    let g = parameter_table_grid(4, 2)[0];
    assert_eq!((g.p, g.k, g.c, g.hidden(), g.input()), (100, 1, 2, 100, 200));
    let report = run_bench(g, 1, 0).unwrap();
    assert!(report.max_divergence <= TOLERANCE);
    assert!(report.masked_throughput > 0.0 && report.small_cells_throughput > 0.0);
}

#[test]
fn corrupted_weights_abort_before_timing() {
    let mut case = BenchCase::new(geometry(3, 2, 2), 4).unwrap();
    // The reference cell reads only the mask support, the stacked copies were
    // taken at construction; perturbing a supported weight afterwards makes
    // the reference disagree.
    case.params.w[0].set(0, 0, case.params.w[0].get(0, 0) + 1.0);
    assert!(case.divergence().unwrap() > TOLERANCE);
    assert!(run_bench(BenchGeometry { batch: 0, ..geometry(3, 2, 2) }, 1, 0).is_err());
    assert!(run_bench(geometry(3, 2, 2), 0, 0).is_err());
}
