mod common;

use std::fs;

use legimod::env::SceneSpec;
use legimod::eval::{
    emit_report, eval_max_legible, eval_sweep, load_trajectory, metrics_csv, oracle_baseline, parse_metrics_csv,
    score_states, status_of, sweep_table, Report, SweepTable,
};
use legimod::scoring::score_lp_eval;

use common::tiny_pipeline;

const LEVELS: [f64; 3] = [-1.0, 0.0, 1.0];

fn sweep_report() -> (Report, SceneSpec) {
    let p = tiny_pipeline();
    let (table, episodes) = eval_sweep(&p.diffuser, &p.policy, &p.spec, &LEVELS, 2, 4).unwrap();
    let report = Report {
        sweeps: vec![table],
        episodes,
        oracle: oracle_baseline(&p.dataset, &p.spec).unwrap(),
        ..Report::default()
    };
    (report, p.spec.clone())
}

#[test]
fn single_episode_table_has_no_averaging() {
    let p = tiny_pipeline();
    let (table, episodes) = eval_max_legible(&p.diffuser, &p.policy, &p.spec, 1, 3).unwrap();
    assert_eq!(table.len(), 2);
    assert_eq!(episodes.len(), 2);
    for (m, e) in table.iter().zip(&episodes) {
        assert_eq!(m.episodes, 1);
        assert_eq!(e.target, m.target);
        assert_eq!(e.ell, 1.0);
        let sp = p.spec.with_intended(m.target).unwrap();
        let (ld, lp) = score_states(&e.rollout.states, &sp).unwrap();
        assert_eq!((m.mean_ld, m.mean_lp), (ld, lp));
        assert_eq!(m.success_rate, if e.rollout.success() { 1.0 } else { 0.0 });
    }
    assert!(eval_max_legible(&p.diffuser, &p.policy, &p.spec, 0, 3).is_err());
}

#[test]
fn sweeps_are_deterministic_per_seed() {
    let p = tiny_pipeline();
    let a = eval_sweep(&p.diffuser, &p.policy, &p.spec, &LEVELS, 2, 9).unwrap();
    let b = eval_sweep(&p.diffuser, &p.policy, &p.spec, &LEVELS, 2, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.rows.len(), 3);
    assert!(eval_sweep(&p.diffuser, &p.policy, &p.spec, &[0.0, 1.0], 2, 9).is_err());
    assert!(eval_sweep(&p.diffuser, &p.policy, &p.spec, &[-2.0, 0.0, 1.0], 2, 9).is_err());
}

#[test]
fn oracle_is_the_top_record() {
    let p = tiny_pipeline();
    let oracle = oracle_baseline(&p.dataset, &p.spec).unwrap();
    for o in &oracle {
        let top = p.dataset.cohort(o.target).find(|r| r.label.normalized == 1.0).unwrap();
        let sp = p.spec.with_intended(o.target).unwrap();
        assert_eq!(o.lp, score_lp_eval(top.trajectory.states(), &sp.scene, sp.sigma).unwrap());
    }
    let mut partial = p.dataset.clone();
    partial.records.retain(|r| r.scene.intended == 0);
    assert!(oracle_baseline(&partial, &p.spec).is_err());
}

#[test]
fn csv_round_trips() {
    let (report, _) = sweep_report();
    let rows = report.rows();
    let bytes = metrics_csv(&rows).unwrap();
    assert_eq!(parse_metrics_csv(&bytes).unwrap(), rows);
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("kind,target,ell,episodes,success_rate,mean_ld,mean_lp,std_lp,spearman\n"));
}

#[test]
fn emission_is_byte_stable() {
    let (report, spec) = sweep_report();
    let before = report.clone();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = emit_report(&report, &spec, a.path()).unwrap();
    emit_report(&report, &spec, b.path()).unwrap();
    assert_eq!(report, before);
    for f in &files {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
    }
    let names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    for expected in ["metrics.csv", "sweep.svg", "trajectories.svg", "scene.json", "rollouts"] {
        assert!(names.iter().any(|n| n == expected), "{expected}");
    }
    assert!(!names.iter().any(|n| n.ends_with(".partial")));
}

#[test]
fn one_polyline_per_level() {
    let (report, spec) = sweep_report();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, &spec, dir.path()).unwrap();
    let svg = fs::read_to_string(dir.path().join("trajectories.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), LEVELS.len());
    let sweep = fs::read_to_string(dir.path().join("sweep.svg")).unwrap();
    assert_eq!(sweep.matches("<polyline").count(), 1);
    assert_eq!(sweep.matches("<polygon").count(), 1);
}

#[test]
fn empty_sweep_writes_nothing() {
    let (mut report, spec) = sweep_report();
    report.sweeps.push(SweepTable {
        target: 0,
        rows: Vec::new(),
        spearman: 0.0,
        spearman_pooled: 0.0,
    });
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    assert!(emit_report(&report, &spec, &out).is_err());
    assert!(!out.exists());
    assert!(emit_report(&Report::default(), &spec, &out).is_err());
    assert!(!out.exists());
}

#[test]
fn unwritable_target_is_an_io_error() {
    let (report, spec) = sweep_report();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = emit_report(&report, &spec, blocker.join("out")).unwrap_err();
    assert!(matches!(err, legimod::Error::Io(_)), "{err}");
}

#[test]
fn metrics_recompute_from_trajectory_files() {
    let (report, spec) = sweep_report();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, &spec, dir.path()).unwrap();
    let spec_back = SceneSpec::load(dir.path().join("scene.json")).unwrap();
    assert_eq!(spec_back, spec);
    let mut paths: Vec<_> = fs::read_dir(dir.path().join("rollouts"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert_eq!(paths.len(), report.episodes.len());
    let mut rebuilt = report.episodes.clone();
    for (e, path) in rebuilt.iter_mut().zip(&paths) {
        let (states, actions) = load_trajectory(path).unwrap();
        assert_eq!(states, e.rollout.states);
        assert_eq!(actions, e.rollout.actions);
        assert_eq!(status_of(&states, &spec_back), e.rollout.status);
        e.rollout.status = status_of(&states, &spec_back);
    }
    let table = sweep_table(&rebuilt, &spec_back).unwrap();
    assert_eq!(table, report.sweeps[0]);
    let csv = parse_metrics_csv(&fs::read(dir.path().join("metrics.csv")).unwrap()).unwrap();
    let sweep_rows: Vec<_> = csv.iter().filter(|r| r.ell.is_some() && r.std_lp.is_some()).collect();
    for (row, t) in sweep_rows.iter().zip(&table.rows) {
        assert_eq!(row.mean_lp, t.mean_lp);
        assert_eq!(row.std_lp, Some(t.std_lp));
    }
}
