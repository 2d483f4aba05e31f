use suspension::metrics::{CellQuadrature, SupSampler};
use suspension::study::{convergence_study, Generator, Schedule, ScheduleEntry, StudyOptions, COLUMNS, RATIO_COLUMNS};

fn cheap_options() -> StudyOptions {
    StudyOptions {
        sampler: SupSampler { spacing: 0.25, ..SupSampler::default() },
        lp_quadrature: CellQuadrature { cell: 0.25, order: 2 },
        grid_h_max: 0.1,
        ..StudyOptions::default()
    }
}

fn small_schedule() -> Schedule {
    Schedule {
        entries: vec![ScheduleEntry::new(2, 0.02), ScheduleEntry::new(4, 0.008)],
        seed: 5,
        generator: Generator::Lattice { jitter: 0.1 },
        box_scale: 1.0,
    }
}

#[test]
fn study_writes_report_and_plots() {
    let report = convergence_study(&small_schedule(), &cheap_options()).unwrap();
    assert_eq!(report.rows.len(), 2);
    for r in &report.rows {
        assert!(r.failure.is_none(), "{:?}", r.failure);
        for name in RATIO_COLUMNS {
            assert!(report.column(name).unwrap().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        assert!(r.reflect_iters >= 1);
        assert_eq!(r.wall_ms, 0);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    assert_eq!(text.lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let plots = report.write_plots(dir.path()).unwrap();
    assert_eq!(plots.len(), RATIO_COLUMNS.len());
    for p in plots {
        let svg = std::fs::read_to_string(p).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}

#[test]
fn failed_entries_are_recorded_as_nan_rows() {
    // φ = 0.9 on a 2×2×2 lattice overlaps.
    let mut schedule = small_schedule();
    schedule.entries[0].phi = 0.9;
    let report = convergence_study(&schedule, &cheap_options()).unwrap();
    let bad = &report.rows[0];
    assert!(bad.failure.as_deref().unwrap().contains("overlap"));
    assert!(bad.err_sup_over_phi.is_nan() && bad.uhat_ubar_over_phi2.is_nan());
    assert!(report.rows[1].failure.is_none());
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert_eq!(row.split(',').count(), COLUMNS.len());
    assert!(row.contains("NaN"));
}

#[test]
fn invalid_schedules_are_rejected() {
    let mut s = small_schedule();
    s.entries.swap(0, 1);
    assert!(convergence_study(&s, &cheap_options()).is_err());
    let mut s = small_schedule();
    s.entries[1].phi = 0.5;
    assert!(s.validate().is_err());
}

#[test]
fn rsa_schedule_runs() {
    let schedule = Schedule {
        entries: vec![ScheduleEntry::new(3, 0.02)],
        seed: 9,
        generator: Generator::Rsa { gap_factor: 2.0 },
        box_scale: 1.0,
    };
    let report = convergence_study(&schedule, &cheap_options()).unwrap();
    assert!(report.rows[0].failure.is_none(), "{:?}", report.rows[0].failure);
    assert_eq!(report.rows[0].n, 27);
}
