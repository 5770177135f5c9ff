use std::collections::BTreeSet;

use stellar_core::dataset;
use stellar_core::eval::{emit_plots, Arm, DataSource, EvalReport, ExperimentConfig, Session};
use stellar_core::gbt::GbtParams;
use stellar_core::siamese::ModelConfig;
use stellar_core::synthgen::{self, ChurnPhase, DeviceProfile, EnvironmentModel, PathLoss, TemporalSchedule};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig {
            num_heads: 2,
            head_size: 8,
            dense_widths: vec![16],
            embedding_dim: 8,
            learning_rate: 1e-3,
            epochs: 8,
            ..Default::default()
        },
        gbt: GbtParams { num_rounds: 10, max_depth: 4, ..Default::default() },
        ..Default::default()
    }
}

fn assert_sane(errors: impl IntoIterator<Item = f64>) {
    for e in errors {
        assert!(e.is_finite() && e >= 0.0, "bad error {e}");
    }
}

#[test]
fn pipeline_grid_covers_every_device_and_ci() {
    let report = Session::new(&small()).unwrap().run_pipeline().unwrap();
    let grid = report.grid.as_ref().unwrap();
    assert_eq!(grid.cells.len(), 4 * 17);
    let training: Vec<_> = grid.cells.iter().filter(|c| c.training_cell).collect();
    assert_eq!(training.len(), 1);
    assert_eq!((training[0].test_device.as_str(), training[0].ci), ("A", 0));
    for c in &grid.cells {
        assert_eq!(c.train_device, "A");
        assert_eq!(c.held_out, c.test_device == "A");
        assert_eq!(c.queries, if c.held_out { 16 } else { 16 * 6 });
    }
    assert_sane(grid.cells.iter().map(|c| c.mean_error_m));
    assert_eq!(grid.per_ci.len(), 17);
    assert_eq!(report.meta.num_rps, 16);
    assert_eq!((report.meta.train_fingerprints, report.meta.test_fingerprints), (80, 16));
    assert_eq!(report.training.len(), 1);

    let json = report.to_json().unwrap();
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
}

#[test]
fn sweeps_accept_edge_values_and_share_fits() {
    let cfg = ExperimentConfig { test_cis: vec![0, 5], ..small() };
    let mut s = Session::new(&cfg).unwrap();
    let rows = s.sweep_d(&[0.0]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_sane([rows[0].mean_error_m, rows[0].min_error_m, rows[0].max_error_m]);
    assert!(rows[0].min_error_m <= rows[0].mean_error_m && rows[0].mean_error_m <= rows[0].max_error_m);

    let default = s.run_pipeline().unwrap().grid.unwrap();
    let curves = s.sweep_samples(&[5]).unwrap();
    assert_eq!(curves[0].mean_error_m, default.mean_error_m);
    assert_eq!(curves[0].per_ci, default.per_ci);

    let one = s.sweep_samples(&[1]).unwrap();
    assert_sane(one[0].per_ci.iter().map(|a| a.mean_error_m));
    assert_eq!(s.stellar(0.6, 1).unwrap().train_labels.len(), 16);
}

#[test]
fn explicit_cells_that_do_not_exist_are_errors() {
    let cfg = ExperimentConfig { test_devices: vec!["Z".into()], ..small() };
    let err = Session::new(&cfg).err().unwrap();
    assert_eq!(err.stage(), Some("data"));
    let cfg = ExperimentConfig { train_device: "Z".into(), ..small() };
    assert!(Session::new(&cfg).is_err());
}

#[test]
fn comparison_arms_and_plot_tables() {
    let mut s = Session::new(&small()).unwrap();
    let report = s.compare_report().unwrap();
    let cmp = report.comparison.as_ref().unwrap();
    let names: Vec<&str> = cmp.arms.iter().map(|a| a.arm.name()).collect();
    assert_eq!(names, ["stellar", "knn_raw", "lt_knn", "knn_embedding"]);
    for a in &cmp.arms {
        assert_eq!(a.cells.len(), 68);
        assert_sane(a.cells.iter().map(|c| c.mean_error_m));
    }

    // Before the first refit LT-KNN is the static raw KNN.
    let raw = cmp.arm(Arm::KnnRaw).unwrap();
    let lt = cmp.arm(Arm::LtKnn).unwrap();
    for (a, b) in raw.cells.iter().zip(&lt.cells) {
        assert_eq!((&a.test_device, a.ci), (&b.test_device, b.ci));
        if a.ci < 3 {
            assert_eq!(a.mean_error_m, b.mean_error_m);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let first = emit_plots(&report, dir.path().join("a")).unwrap();
    let names: BTreeSet<String> =
        first.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        ["box_deltas.csv", "device_matrix.csv", "temporal_curves.csv"].map(String::from).into()
    );

    let curves = std::fs::read_to_string(dir.path().join("a/temporal_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 4 * 17);
    let deltas = std::fs::read_to_string(dir.path().join("a/box_deltas.csv")).unwrap();
    assert_eq!(deltas.lines().count(), 1 + 3 * 68);
    let matrix = std::fs::read_to_string(dir.path().join("a/device_matrix.csv")).unwrap();
    let mut lines = matrix.lines();
    assert_eq!(
        lines.next().unwrap(),
        "building,train_device,test_device,ci,training_cell,queries,mean_error_m"
    );
    assert_eq!(lines.count(), 68);
    assert!(!matrix.contains('\r'));

    // Re-emitting from the reloaded report reproduces every byte.
    let path = report.write(dir.path().join("r")).unwrap();
    let reloaded = EvalReport::load(&path).unwrap();
    emit_plots(&reloaded, dir.path().join("b")).unwrap();
    for p in &first {
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(dir.path().join("b").join(name)).unwrap());
    }
}

#[test]
fn noise_free_world_is_localized_exactly() {
    let quiet = PathLoss { p0: -40.0, n: 3.0, shadow_sigma: 0.0, fading_sigma: 0.0 };
    let env = EnvironmentModel::corridor("Quiet", 8, 1.0, 20, (12.0, 8.0), quiet, 3).unwrap();
    let device = |id: &str| DeviceProfile {
        device_id: id.into(),
        gain_offset: 0.0,
        per_ap_jitter_sigma: 0.0,
        dropout_bias: 0.0,
    };
    let schedule =
        TemporalSchedule::churn(20, &[ChurnPhase { cis: 0..=3, disabled_fraction: 0.0 }], 0.0, 3);
    let ds = synthgen::generate(&env, &[device("A"), device("B")], &schedule, 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("Quiet.csv");
    dataset::save_csv(&ds, &csv).unwrap();

    let mut cfg = small();
    cfg.source = DataSource::Csv { paths: vec![csv] };
    cfg.building = "Quiet".into();
    cfg.gbt.min_child_weight = 0.0;
    cfg.model.epochs = 30;
    let cmp = Session::new(&cfg).unwrap().compare_baselines().unwrap();
    for a in &cmp.arms {
        assert_eq!(a.cells.len(), 2 * 4);
        for c in &a.cells {
            assert_eq!(c.mean_error_m, 0.0, "{} {} CI {}", a.arm.name(), c.test_device, c.ci);
        }
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let cfg = ExperimentConfig { test_devices: vec!["B".into()], test_cis: vec![4], ..small() };
    let a = Session::new(&cfg).unwrap().run_pipeline().unwrap();
    let b = Session::new(&cfg).unwrap().run_pipeline().unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let other = Session::new(&ExperimentConfig { seed: 43, ..cfg }).unwrap().run_pipeline().unwrap();
    assert_ne!(a.meta.config_hash, other.meta.config_hash);
}

#[test]
fn ltknn_on_a_ci_subset_matches_the_full_stream() {
    let full = Session::new(&small()).unwrap().compare_baselines().unwrap();
    let cfg = ExperimentConfig { test_cis: vec![0, 4, 9], train_ci: 1, ..small() };
    let subset = Session::new(&cfg).unwrap().compare_baselines().unwrap();
    let full_lt = ExperimentConfig { train_ci: 1, ..small() };
    let full_lt = Session::new(&full_lt).unwrap().compare_baselines().unwrap();
    let lt = subset.arm(Arm::LtKnn).unwrap();
    assert_eq!(lt.cells.len(), 4 * 3);
    for c in &lt.cells {
        let same = full_lt.arm(Arm::LtKnn).unwrap().cells.iter().find(|f| f.test_device == c.test_device && f.ci == c.ci);
        assert_eq!(same.unwrap().mean_error_m, c.mean_error_m);
    }
    assert_eq!(full.arm(Arm::LtKnn).unwrap().cells.len(), 68);
}
