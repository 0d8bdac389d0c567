mod common;

use legimod::diffusion::DiffusionModel;
use legimod::env::{integrate, SceneSpec, Status};
use legimod::geometry::{Path, Point};
use legimod::guided_policy::{act, rollout, train_stage2, PolicyObservation};
use legimod::path_diffuser::{generate_path, train_stage1, Stage1Encoder};
use legimod::qd::{demo_rollout, Dataset};

use common::{small_dataset, tiny_pipeline, tiny_policy, tiny_stage1, tiny_train};

fn single_record(ds: &Dataset, index: usize) -> Dataset {
    let mut one = ds.clone();
    one.records = vec![ds.records[index].clone()];
    one
}

#[test]
fn training_is_deterministic_per_seed() {
    let ds = small_dataset(&SceneSpec::default_2d());
    let a = train_stage1(&ds, &tiny_stage1(5)).unwrap();
    let b = train_stage1(&ds, &tiny_stage1(5)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = train_stage1(&ds, &tiny_stage1(6)).unwrap();
    assert_ne!(a.net.params(), c.net.params());
    let p = train_stage2(&ds, &tiny_policy(5)).unwrap();
    let q = train_stage2(&ds, &tiny_policy(5)).unwrap();
    assert_eq!(p.to_json().unwrap(), q.to_json().unwrap());
}

#[test]
fn checkpoints_reload_from_disk() {
    let p = tiny_pipeline();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("diffuser.json");
    p.diffuser.save(&file).unwrap();
    let back = DiffusionModel::load(&file).unwrap();
    assert_eq!(back, p.diffuser);
    let scene = &p.spec.scene;
    assert_eq!(
        generate_path(&back, scene, 0.5, 3).unwrap(),
        generate_path(&p.diffuser, scene, 0.5, 3).unwrap()
    );
}

#[test]
fn layout_matches_encoder() {
    let p = tiny_pipeline();
    let enc = Stage1Encoder::from_layout(&p.diffuser.context_layout).unwrap();
    assert_eq!(enc.layout(), p.diffuser.context_layout);
    assert_eq!(enc.pool, vec![8, 8]);
    assert_eq!(p.diffuser.context_layout.len(), 2 + 2 + 64 + 4);
}

#[test]
fn contexts_differ_only_in_ell() {
    let p = tiny_pipeline();
    let enc = Stage1Encoder::from_layout(&p.diffuser.context_layout).unwrap();
    let a = enc.context(&p.spec.scene, -1.0).unwrap().to_vector();
    let b = enc.context(&p.spec.scene, 1.0).unwrap().to_vector();
    let differing: Vec<usize> = (0..a.len()).filter(|&i| a[i].to_bits() != b[i].to_bits()).collect();
    assert_eq!(differing, (a.len() - 4..a.len()).collect::<Vec<_>>());
}

#[test]
fn generated_paths_are_deterministic_and_anchored() {
    let p = tiny_pipeline();
    let a = generate_path(&p.diffuser, &p.spec.scene, 1.0, 8).unwrap();
    assert_eq!(a, generate_path(&p.diffuser, &p.spec.scene, 1.0, 8).unwrap());
    assert_eq!(a.path.k(), 8);
    if a.start_snapped {
        assert_eq!(a.path.waypoints()[0], p.spec.scene.start);
    }
    assert!(generate_path(&p.diffuser, &p.spec.scene, 1.5, 8).is_err());
    assert!(generate_path(&p.diffuser, &SceneSpec::default_3d().scene, 0.0, 8).is_err());
}

#[test]
fn one_record_overfit_reproduces_its_path() {
    let ds = small_dataset(&SceneSpec::default_2d());
    let one = single_record(&ds, 0);
    let record = &one.records[0];
    let mut config = tiny_stage1(4);
    config.train.steps = 2000;
    let model = train_stage1(&one, &config).unwrap();
    let scene = &record.scene;
    let g = generate_path(&model, scene, record.label.normalized, 1).unwrap();
    let l2 = g
        .path
        .flatten()
        .iter()
        .zip(record.path.flatten())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(l2 <= 0.05, "{l2}");
}

#[test]
fn one_demo_policy_replays_to_the_demo_end() {
    let ds = small_dataset(&SceneSpec::default_2d());
    let one = single_record(&ds, 3);
    let record = &one.records[0];
    let mut config = tiny_policy(7);
    config.train = tiny_train(3000, 7);
    config.train.hidden = 64;
    config.train.cond_embed = 32;
    config.stride = 1;
    let model = train_stage2(&one, &config).unwrap();
    let spec = one.spec.with_intended(record.scene.intended).unwrap();
    let r = rollout(&model, &spec, &record.path, 200, 0).unwrap();
    let end = r.states.last().unwrap();
    assert!(end.distance(&record.trajectory.last()) <= 0.05, "{:?}", end);
}

#[test]
fn straight_path_gives_steady_direction() {
    // Demos along the straight start-goal line only.
    let spec = SceneSpec::default_2d();
    let mut ds = small_dataset(&spec);
    let n = 100;
    let start = spec.scene.start;
    let states: Vec<Point> = (0..n)
        .map(|i| start + (spec.scene.goal() - start) * (i as f64 / (n - 1) as f64))
        .collect();
    let mut record = ds.cohort(0).next().unwrap().clone();
    record.trajectory = legimod::geometry::Trajectory::new(states.clone(), spec.env.dt).unwrap();
    record.path = legimod::geometry::subsample_path(&record.trajectory, 8).unwrap();
    record.trajectory = demo_rollout(&record, &spec.env).unwrap().trajectory;
    ds.records = vec![record.clone()];
    let mut config = tiny_policy(1);
    config.train = tiny_train(1500, 1);
    config.stride = 1;
    let model = train_stage2(&ds, &config).unwrap();
    let obs = PolicyObservation::at_start(start, spec.scene.goal(), record.path.clone(), 2).unwrap();
    let chunk = act(&model, &obs, 5).unwrap();
    assert_eq!(chunk, act(&model, &obs, 5).unwrap());
    for w in chunk.actions.windows(2) {
        let cos = w[0].dot(&w[1]) / (w[0].norm() * w[1].norm());
        assert!(cos > 0.95, "{cos}");
    }
}

#[test]
fn rollouts_are_dynamically_consistent() {
    let p = tiny_pipeline();
    let path = generate_path(&p.diffuser, &p.spec.scene, 0.0, 2).unwrap().path;
    let r = rollout(&p.policy, &p.spec, &path, 120, 9).unwrap();
    assert_eq!(r, rollout(&p.policy, &p.spec, &path, 120, 9).unwrap());
    assert_eq!(r.states.len(), r.actions.len() + 1);
    let bound = p.spec.env.action_bound;
    let mut x = r.states[0];
    for (i, a) in r.actions.iter().enumerate() {
        assert!(a.as_slice().iter().all(|v| v.abs() <= bound));
        x = integrate(&x, a, &p.spec.env, &p.spec.scene.bounds);
        assert!(x.distance(&r.states[i + 1]) <= 1e-9);
    }
    match r.status {
        Status::Success => assert!(r.states.last().unwrap().distance(&p.spec.scene.goal()) <= 0.05),
        Status::Timeout => assert_eq!(r.actions.len(), 120),
        Status::Running => panic!("rollout returned while running"),
    }
}

#[test]
fn zero_step_rollout_times_out() {
    let p = tiny_pipeline();
    let path = Path::new(vec![p.spec.scene.start, p.spec.scene.goal()], 2).unwrap();
    let path8 = generate_path(&p.diffuser, &p.spec.scene, 0.0, 2).unwrap().path;
    let r = rollout(&p.policy, &p.spec, &path8, 0, 1).unwrap();
    assert_eq!(r.status, Status::Timeout);
    assert_eq!(r.states.len(), 1);
    assert!(rollout(&p.policy, &p.spec, &path, 10, 1).is_err());
}
