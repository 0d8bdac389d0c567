//! Experiment protocols: the max-legible comparison, the legibility sweep,
//! the dataset oracle, and report files.
//!
//! Every reported number is a pure function of the executed rollouts and the
//! scene, so a report can be recomputed from its `rollouts/` directory.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::env::{SceneSpec, Status};
use crate::error::{domain, Error, Result};
use crate::geometry::{Path, Point};
use crate::guided_policy::{rollout_batch, PolicyEncoder, Rollout};
use crate::ipf::GoalScene;
use crate::path_diffuser::{generate_paths, Stage1Encoder};
use crate::qd::{mix_seed, Dataset};
use crate::scoring::{score_ld, score_lp_eval};

pub const DEFAULT_LEVELS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
pub const DEFAULT_SWEEP_EPISODES: usize = 20;

/// One executed episode and the seeds that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub target: usize,
    pub ell: f64,
    pub path_seed: u64,
    pub rollout_seed: u64,
    pub path: Path,
    pub rollout: Rollout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_ld: f64,
    pub mean_lp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ell: f64,
    pub episodes: usize,
    pub mean_lp: f64,
    pub std_lp: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub target: usize,
    pub rows: Vec<SweepRow>,
    /// Rank correlation between the levels and the per-level mean `L_p`.
    pub spearman: f64,
    /// Rank correlation over every (level, episode `L_p`) pair.
    pub spearman_pooled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub target: usize,
    pub ld: f64,
    pub lp: f64,
}

/// The single distractor of a two-goal scene.
pub fn distractor(scene: &GoalScene) -> Result<Point> {
    if scene.goals.len() != 2 {
        return Err(domain(format!(
            "evaluation needs exactly two goals, scene has {}",
            scene.goals.len()
        )));
    }
    Ok(scene.goals[1 - scene.intended])
}

/// `(L_d, L_p)` of a state sequence on the spec's scene.
pub fn score_states(states: &[Point], spec: &SceneSpec) -> Result<(f64, f64)> {
    let ld = score_ld(states, &distractor(&spec.scene)?)?;
    let lp = score_lp_eval(states, &spec.scene, spec.sigma)?;
    Ok((ld, lp))
}

/// `n` evenly spaced states on the segment from start to the intended goal.
pub fn straight_line(scene: &GoalScene, n: usize) -> Result<Vec<Point>> {
    if n < 2 {
        return Err(domain("a straight line needs at least two states"));
    }
    let (a, b) = (scene.start, scene.goal());
    Ok((0..n)
        .map(|i| a + (b - a) * (i as f64 / (n - 1) as f64))
        .collect())
}

/// Path and rollout seeds of episode `i` at sweep level `level` for `target`.
pub fn episode_seeds(seed: u64, target: usize, level: usize, i: usize) -> (u64, u64) {
    let base = mix_seed(mix_seed(seed, target as u64), level as u64);
    (mix_seed(base, 2 * i as u64), mix_seed(base, 2 * i as u64 + 1))
}

fn check_models(diffuser: &DiffusionModel, policy: &DiffusionModel, spec: &SceneSpec) -> Result<()> {
    let dims = [
        Stage1Encoder::from_layout(&diffuser.context_layout)?.dim,
        PolicyEncoder::from_layout(&policy.context_layout)?.dim,
    ];
    for dim in dims {
        if dim != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: spec.dim(),
            });
        }
    }
    distractor(&spec.scene)?;
    Ok(())
}

/// Generates a path and executes it for each `(ell, level index)` episode
/// request, all in one batch.
fn run_episodes(
    diffuser: &DiffusionModel,
    policy: &DiffusionModel,
    spec: &SceneSpec,
    requests: &[(f64, usize, usize)],
    seed: u64,
) -> Result<Vec<Episode>> {
    let target = spec.scene.intended;
    let seeds: Vec<(u64, u64)> = requests
        .iter()
        .map(|&(_, level, i)| episode_seeds(seed, target, level, i))
        .collect();
    let path_requests: Vec<(f64, u64)> = requests
        .iter()
        .zip(&seeds)
        .map(|(&(ell, _, _), &(ps, _))| (ell, ps))
        .collect();
    let paths: Vec<Path> = generate_paths(diffuser, &spec.scene, &path_requests)?
        .into_iter()
        .map(|g| g.path)
        .collect();
    let rollout_seeds: Vec<u64> = seeds.iter().map(|s| s.1).collect();
    let rollouts = rollout_batch(policy, spec, &paths, spec.env.max_steps, &rollout_seeds)?;
    Ok(requests
        .iter()
        .zip(seeds)
        .zip(paths.into_iter().zip(rollouts))
        .map(|((&(ell, _, _), (path_seed, rollout_seed)), (path, rollout))| Episode {
            target,
            ell,
            path_seed,
            rollout_seed,
            path,
            rollout,
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `n_episodes` rollouts at `ell = 1` for every goal of the scene in turn.
pub fn eval_max_legible(
    diffuser: &DiffusionModel,
    policy: &DiffusionModel,
    spec: &SceneSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<(Vec<TargetMetrics>, Vec<Episode>)> {
    if n_episodes == 0 {
        return Err(domain("at least one episode is required"));
    }
    check_models(diffuser, policy, spec)?;
    let mut table = Vec::new();
    let mut all = Vec::new();
    for target in 0..spec.scene.goals.len() {
        let sp = spec.with_intended(target)?;
        let requests: Vec<_> = (0..n_episodes).map(|i| (1.0, 0, i)).collect();
        let episodes = run_episodes(diffuser, policy, &sp, &requests, seed)?;
        table.push(target_metrics(&episodes, &sp)?);
        all.extend(episodes);
    }
    Ok((table, all))
}

/// Aggregates episodes that all ran on `spec`'s intended goal.
pub fn target_metrics(episodes: &[Episode], spec: &SceneSpec) -> Result<TargetMetrics> {
    if episodes.is_empty() {
        return Err(domain("no episodes to aggregate"));
    }
    let mut ld = Vec::with_capacity(episodes.len());
    let mut lp = Vec::with_capacity(episodes.len());
    for e in episodes {
        let (d, p) = score_states(&e.rollout.states, spec)?;
        ld.push(d);
        lp.push(p);
    }
    let successes = episodes.iter().filter(|e| e.rollout.success()).count();
    Ok(TargetMetrics {
        target: spec.scene.intended,
        episodes: episodes.len(),
        success_rate: successes as f64 / episodes.len() as f64,
        mean_ld: mean(&ld),
        mean_lp: mean(&lp),
    })
}

/// Rollouts at each level on the spec's intended goal.
pub fn eval_sweep(
    diffuser: &DiffusionModel,
    policy: &DiffusionModel,
    spec: &SceneSpec,
    ell_levels: &[f64],
    n_per_level: usize,
    seed: u64,
) -> Result<(SweepTable, Vec<Episode>)> {
    if ell_levels.len() < 3 {
        return Err(domain("a sweep needs at least three levels"));
    }
    if let Some(e) = ell_levels.iter().find(|e| !(-1.0..=1.0).contains(*e)) {
        return Err(domain(format!("level {e} outside [-1, 1]")));
    }
    if n_per_level == 0 {
        return Err(domain("at least one episode per level is required"));
    }
    check_models(diffuser, policy, spec)?;
    let requests: Vec<_> = ell_levels
        .iter()
        .enumerate()
        .flat_map(|(level, &ell)| (0..n_per_level).map(move |i| (ell, level, i)))
        .collect();
    let episodes = run_episodes(diffuser, policy, spec, &requests, seed)?;
    let table = sweep_table(&episodes, spec)?;
    Ok((table, episodes))
}

/// Groups episodes by level, in order of first appearance.
pub fn sweep_table(episodes: &[Episode], spec: &SceneSpec) -> Result<SweepTable> {
    if episodes.is_empty() {
        return Err(domain("empty sweep"));
    }
    let mut levels: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<&Episode>> = Vec::new();
    for e in episodes {
        match levels.iter().position(|&l| l == e.ell) {
            Some(j) => groups[j].push(e),
            None => {
                levels.push(e.ell);
                groups.push(vec![e]);
            }
        }
    }
    let mut rows = Vec::with_capacity(levels.len());
    let mut pooled_ell = Vec::new();
    let mut pooled_lp = Vec::new();
    for (ell, group) in levels.iter().zip(&groups) {
        let lps = group
            .iter()
            .map(|e| score_lp_eval(&e.rollout.states, &spec.scene, spec.sigma))
            .collect::<Result<Vec<_>>>()?;
        let m = mean(&lps);
        let var = lps.iter().map(|v| (v - m).powi(2)).sum::<f64>() / lps.len() as f64;
        let successes = group.iter().filter(|e| e.rollout.success()).count();
        rows.push(SweepRow {
            ell: *ell,
            episodes: group.len(),
            mean_lp: m,
            std_lp: var.sqrt(),
            success_rate: successes as f64 / group.len() as f64,
        });
        pooled_ell.extend(std::iter::repeat_n(*ell, lps.len()));
        pooled_lp.extend(lps);
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_lp).collect();
    Ok(SweepTable {
        target: spec.scene.intended,
        spearman: spearman(&levels, &means)?,
        spearman_pooled: spearman(&pooled_ell, &pooled_lp)?,
        rows,
    })
}

/// 1-based ranks; ties share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(domain("correlation needs at least two pairs"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(domain("correlation is undefined for constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Scores the `ell = 1` record of every target cohort.
pub fn oracle_baseline(dataset: &Dataset, spec: &SceneSpec) -> Result<Vec<OracleMetrics>> {
    distractor(&spec.scene)?;
    (0..spec.scene.goals.len())
        .map(|target| {
            let sp = spec.with_intended(target)?;
            let record = dataset
                .cohort(target)
                .find(|r| r.label.normalized == 1.0)
                .ok_or_else(|| domain(format!("dataset has no top record for target {target}")))?;
            let (ld, lp) = score_states(record.trajectory.states(), &sp)?;
            Ok(OracleMetrics { target, ld, lp })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Max,
    Sweep,
    Oracle,
}

/// One line of `metrics.csv`. Columns that do not apply to a kind are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub kind: RowKind,
    pub target: usize,
    pub ell: Option<f64>,
    pub episodes: Option<usize>,
    pub success_rate: Option<f64>,
    pub mean_ld: Option<f64>,
    pub mean_lp: f64,
    pub std_lp: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub max_legible: Vec<TargetMetrics>,
    pub oracle: Vec<OracleMetrics>,
    pub sweeps: Vec<SweepTable>,
    /// Episodes drawn in `trajectories.svg` and written to `rollouts/`.
    pub episodes: Vec<Episode>,
}

impl Report {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for m in &self.max_legible {
            rows.push(MetricRow {
                kind: RowKind::Max,
                target: m.target,
                ell: Some(1.0),
                episodes: Some(m.episodes),
                success_rate: Some(m.success_rate),
                mean_ld: Some(m.mean_ld),
                mean_lp: m.mean_lp,
                std_lp: None,
                spearman: None,
            });
        }
        for o in &self.oracle {
            rows.push(MetricRow {
                kind: RowKind::Oracle,
                target: o.target,
                ell: Some(1.0),
                episodes: None,
                success_rate: None,
                mean_ld: Some(o.ld),
                mean_lp: o.lp,
                std_lp: None,
                spearman: None,
            });
        }
        for s in &self.sweeps {
            for r in &s.rows {
                rows.push(MetricRow {
                    kind: RowKind::Sweep,
                    target: s.target,
                    ell: Some(r.ell),
                    episodes: Some(r.episodes),
                    success_rate: Some(r.success_rate),
                    mean_ld: None,
                    mean_lp: r.mean_lp,
                    std_lp: Some(r.std_lp),
                    spearman: Some(s.spearman),
                });
            }
        }
        rows
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn parse_metrics_csv(bytes: &[u8]) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Blue at `ell = -1` through red at `ell = 1`.
fn ell_color(ell: f64) -> String {
    let u = ((ell + 1.0) / 2.0).clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * u).round() as u8;
    let b = (240.0 - 200.0 * u).round() as u8;
    format!("#{r:02x}50{b:02x}")
}

fn series_color(i: usize) -> &'static str {
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"][i % 4]
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (SVG_H - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    );
    let _ = writeln!(out, "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>");
}

pub fn sweep_svg(sweeps: &[SweepTable]) -> Result<String> {
    if sweeps.iter().all(|s| s.rows.is_empty()) {
        return Err(domain("empty sweep"));
    }
    let rows = sweeps.iter().flat_map(|s| &s.rows);
    let lo = rows.clone().map(|r| r.mean_lp - r.std_lp).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = rows.map(|r| r.mean_lp + r.std_lp).fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame {
        x0: -1.0,
        x1: 1.0,
        y0: lo,
        y1: if hi > lo { hi * 1.05 } else { lo + 1.0 },
    };
    let mut out = String::new();
    svg_open(&mut out);
    let _ = writeln!(
        out,
        "<path d=\"M{:.2} {:.2} V{:.2} H{:.2}\" fill=\"none\" stroke=\"black\"/>",
        frame.px(-1.0),
        frame.py(frame.y1),
        frame.py(frame.y0),
        frame.px(1.0)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">commanded ell</text>",
        SVG_W / 2.0,
        SVG_H - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">mean L_p</text>",
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    for (i, s) in sweeps.iter().enumerate() {
        let color = series_color(i);
        let upper: Vec<String> = s
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", frame.px(r.ell), frame.py(r.mean_lp + r.std_lp)))
            .collect();
        let lower: Vec<String> = s
            .rows
            .iter()
            .rev()
            .map(|r| format!("{:.2},{:.2}", frame.px(r.ell), frame.py(r.mean_lp - r.std_lp)))
            .collect();
        let _ = writeln!(
            out,
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = s
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", frame.px(r.ell), frame.py(r.mean_lp)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            line.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{color}\">target {} (rho {:.3})</text>",
            MARGIN + 8.0,
            MARGIN + 14.0 * (i + 1) as f64,
            s.target,
            s.spearman
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Axes used for the 2D projection: first and last coordinate.
fn projection(dim: usize) -> (usize, usize) {
    (0, dim - 1)
}

/// One polyline per sweep level: the first episode at that level.
pub fn trajectories_svg(spec: &SceneSpec, episodes: &[Episode]) -> Result<String> {
    if episodes.is_empty() {
        return Err(domain("no trajectories to draw"));
    }
    let (ax, ay) = projection(spec.dim());
    let b = &spec.scene.bounds;
    let frame = Frame {
        x0: b.min.coord(ax),
        x1: b.max.coord(ax),
        y0: b.min.coord(ay),
        y1: b.max.coord(ay),
    };
    let mut out = String::new();
    svg_open(&mut out);
    let _ = writeln!(
        out,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
        frame.px(frame.x0),
        frame.py(frame.y1),
        frame.px(frame.x1) - frame.px(frame.x0),
        frame.py(frame.y0) - frame.py(frame.y1)
    );
    let mut drawn: Vec<(usize, f64)> = Vec::new();
    for e in episodes {
        if drawn.contains(&(e.target, e.ell)) {
            continue;
        }
        drawn.push((e.target, e.ell));
        let pts: Vec<String> = e
            .rollout
            .states
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.px(p.coord(ax)), frame.py(p.coord(ay))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"><title>target {} ell {}</title></polyline>",
            pts.join(" "),
            ell_color(e.ell),
            e.target,
            e.ell
        );
    }
    for (i, g) in spec.scene.goals.iter().enumerate() {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"6\" fill=\"{}\"/>",
            frame.px(g.coord(ax)),
            frame.py(g.coord(ay)),
            series_color(i)
        );
    }
    let s = spec.scene.start;
    let _ = writeln!(
        out,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"black\"/>",
        frame.px(s.coord(ax)) - 5.0,
        frame.py(s.coord(ay)) - 5.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// One line of a trajectory file. The last state carries no action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Option<Vec<f64>>,
}

pub fn write_trajectory<W: Write>(rollout: &Rollout, mut out: W) -> Result<()> {
    for (t, s) in rollout.states.iter().enumerate() {
        let line = TrajectoryLine {
            t,
            state: s.as_slice().to_vec(),
            action: rollout.actions.get(t).map(|a| a.as_slice().to_vec()),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// States and actions of a trajectory file, checked for consecutive `t`.
pub fn read_trajectory<R: BufRead>(input: R) -> Result<(Vec<Point>, Vec<Point>)> {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryLine = serde_json::from_str(&line)?;
        if rec.t != states.len() {
            return Err(Error::Format(format!("line {}: expected t = {}", i + 1, states.len())));
        }
        states.push(Point::new(&rec.state)?);
        if let Some(a) = rec.action {
            if actions.len() != states.len() - 1 {
                return Err(Error::Format(format!("line {}: action after a final state", i + 1)));
            }
            actions.push(Point::new(&a)?);
        }
    }
    if states.is_empty() {
        return Err(Error::Format("empty trajectory file".into()));
    }
    Ok((states, actions))
}

pub fn load_trajectory(path: impl AsRef<FsPath>) -> Result<(Vec<Point>, Vec<Point>)> {
    read_trajectory(BufReader::new(fs::File::open(path)?))
}

/// File name of an episode under `rollouts/`.
pub fn episode_file_name(index: usize, e: &Episode) -> String {
    format!("{index:04}-target{}-ell{:+.2}.jsonl", e.target, e.ell)
}

/// Rebuilds an outcome from a stored trajectory.
pub fn status_of(states: &[Point], spec: &SceneSpec) -> Status {
    let last = states[states.len() - 1];
    if last.distance(&spec.scene.goal()) <= spec.env.success_radius {
        Status::Success
    } else {
        Status::Timeout
    }
}

/// Writes `metrics.csv`, `sweep.svg` (when there are sweeps),
/// `trajectories.svg`, `scene.json` and one trajectory file per episode
/// under `rollouts/`.
///
/// Everything is rendered before anything is written, and files are moved
/// into place only once all of them were written, so a failure leaves no
/// partial report behind.
pub fn emit_report(report: &Report, spec: &SceneSpec, out_dir: impl AsRef<FsPath>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let rows = report.rows();
    if rows.is_empty() {
        return Err(domain("nothing to report"));
    }
    if report.sweeps.iter().any(|s| s.rows.is_empty()) {
        return Err(domain("empty sweep"));
    }
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![(out_dir.join("metrics.csv"), metrics_csv(&rows)?)];
    if !report.sweeps.is_empty() {
        files.push((out_dir.join("sweep.svg"), sweep_svg(&report.sweeps)?.into_bytes()));
    }
    if !report.episodes.is_empty() {
        files.push((
            out_dir.join("trajectories.svg"),
            trajectories_svg(spec, &report.episodes)?.into_bytes(),
        ));
    }
    files.push((out_dir.join("scene.json"), (spec.to_json()? + "\n").into_bytes()));
    for (i, e) in report.episodes.iter().enumerate() {
        let mut buf = Vec::new();
        write_trajectory(&e.rollout, &mut buf)?;
        files.push((out_dir.join("rollouts").join(episode_file_name(i, e)), buf));
    }

    fs::create_dir_all(out_dir)?;
    if !report.episodes.is_empty() {
        fs::create_dir_all(out_dir.join("rollouts"))?;
    }
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(files.len());
    let result = (|| -> Result<()> {
        for (path, bytes) in &files {
            let tmp = path.with_extension("partial");
            staged.push((tmp.clone(), path.clone()));
            fs::write(&tmp, bytes)?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        for (tmp, _) in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e);
    }
    for (tmp, path) in &staged {
        fs::rename(tmp, path)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
