use nlscore::evaluation::write_metrics_csv;
use nlscore::simulation::{run_cell, summarize};
use nlscore::{preset, run_experiment, ExperimentConfig, ScoreType};

fn csv(config: &ExperimentConfig) -> Vec<u8> {
    let mut out = Vec::new();
    write_metrics_csv(&mut out, &run_experiment(config).unwrap()).unwrap();
    out
}

fn small_unknown() -> ExperimentConfig {
    let mut c = preset("desk-unknown").unwrap();
    c.n_classes = 40;
    c.rounds = 3;
    c.dims = vec![10, 20];
    c.sigmas = vec![0.5, 2.0];
    c
}

#[test]
fn metrics_csv_is_byte_identical_across_runs() {
    let c = small_unknown();
    assert_eq!(csv(&c), csv(&c));
}

#[test]
fn permuting_the_grid_leaves_rows_unchanged() {
    let a = small_unknown();
    let mut b = a.clone();
    b.dims.reverse();
    b.sigmas.reverse();
    b.score_types.reverse();
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn seed_changes_results() {
    let a = small_unknown();
    let mut b = a.clone();
    b.seed += 1;
    assert_ne!(csv(&a), csv(&b));
}

#[test]
fn near_separable_known_mean_cell() {
    let mut c = preset("paper-known").unwrap();
    c.dims = vec![10];
    c.sigmas = vec![0.1];
    c.score_types = vec![ScoreType::NlKnown];
    let out = run_cell(&c, 10, 0.1, 0).unwrap();
    let r = &out.reports[0];
    assert!(r.eer <= 0.005 && r.idr >= 0.995, "eer {} idr {}", r.eer, r.idr);
}

#[test]
fn heavy_overlap_cells_identify_poorly() {
    for name in ["paper-known", "paper-unknown"] {
        let c = preset(name).unwrap();
        let out = run_cell(&c, 10, 5.0, 0).unwrap();
        for r in &out.reports {
            assert!(r.idr < 0.2, "{name} {}: {}", r.score_type, r.idr);
        }
    }
}

#[test]
fn nl_trends_in_sigma_and_dimension() {
    let mut c = preset("desk-unknown").unwrap();
    c.n_classes = 60;
    c.rounds = 20;
    c.score_types = vec![ScoreType::NlUnknown];
    let reports = run_experiment(&c).unwrap();
    let cell = |d, s| summarize(&reports, ScoreType::NlUnknown, d, s).unwrap();
    for &d in &c.dims {
        let mut inversions = 0;
        for w in c.sigmas.windows(2) {
            let (lo, hi) = (cell(d, w[0]), cell(d, w[1]));
            if hi.mean_eer < lo.mean_eer || hi.mean_idr > lo.mean_idr {
                inversions += 1;
            }
        }
        assert!(inversions <= 1, "d={d}: {inversions} inversions");
    }
    for &s in &c.sigmas {
        let (small, large) = (cell(10, s), cell(80, s));
        assert!(large.mean_eer <= small.mean_eer && large.mean_idr >= small.mean_idr, "sigma={s}");
    }
}
