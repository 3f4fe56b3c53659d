//! Per-skill task samples, histograms, and entropies of a skill checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slide_core::config::WorldConfig;
use slide_core::discovery::SkillSet;
use slide_core::env::rollout;
use slide_core::param_space::{ParamKind, ParamSpec, TaskParams};
use slide_core::pushworld::NUM_SLOTS;
use slide_core::seed::derive_rng;
use slide_core::skill_policy::ActMode;

use crate::error::CliResult;
use crate::plot::{histograms_svg, traces_svg, Panel, Trace};

pub const REPORT_FORMAT: &str = "slide-task-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub param: String,
    /// Bin edges; discrete parameters use unit bins centred on categories.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillReport {
    pub skill: usize,
    pub entropy: f64,
    pub mode: Vec<f64>,
    pub histograms: Vec<Histogram>,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub num_skills: usize,
    pub samples_per_skill: usize,
    pub params: Vec<ParamSpec>,
    pub skills: Vec<SkillReport>,
}

pub fn histogram(spec: &ParamSpec, values: impl Iterator<Item = f64>, bins: usize) -> Histogram {
    let edges: Vec<f64> = match spec.kind {
        ParamKind::Discrete { cardinality } => (0..=cardinality).map(|c| c as f64 - 0.5).collect(),
        ParamKind::Continuous { lower, upper } => (0..=bins).map(|i| lower + (upper - lower) * i as f64 / bins as f64).collect(),
    };
    let n = edges.len() - 1;
    let mut counts = vec![0u64; n];
    for v in values {
        let i = edges[1..].iter().position(|e| v < *e).unwrap_or(n - 1);
        counts[i] += 1;
    }
    Histogram {
        param: spec.name.clone(),
        edges,
        counts,
    }
}

/// Builds the report; `samples == 0` yields a header-only report.
pub fn build_report(skills: &SkillSet, samples: usize, bins: usize, seed: u64) -> CliResult<TaskReport> {
    let spec = skills.world.build()?.param_spec().clone();
    let mut report = TaskReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        method: skills.method.name().into(),
        num_skills: skills.num_skills,
        samples_per_skill: samples,
        params: spec.params().to_vec(),
        skills: Vec::new(),
    };
    if samples == 0 {
        return Ok(report);
    }
    for z in 0..skills.num_skills {
        let dist = skills.tasks.distribution(z)?;
        let mut rng = derive_rng(seed, "inspect:tasks", z as u64);
        let draws: Vec<TaskParams> = (0..samples).map(|_| dist.sample(&mut rng)).collect();
        let histograms = spec
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| histogram(p, draws.iter().map(|w| w.values[i]), bins))
            .collect();
        report.skills.push(SkillReport {
            skill: z,
            entropy: dist.entropy(),
            mode: dist.mode().values,
            histograms,
            samples: draws.into_iter().map(|w| w.values).collect(),
        });
    }
    Ok(report)
}

pub fn summary_table(report: &TaskReport) -> String {
    let mut out = format!(
        "method {} | {} skills | {} samples per skill\nskill  entropy  mode\n",
        report.method, report.num_skills, report.samples_per_skill
    );
    for s in &report.skills {
        let mode: Vec<String> = s.mode.iter().map(|v| format!("{v:.2}")).collect();
        out.push_str(&format!("{:>5}  {:>7.3}  [{}]\n", s.skill, s.entropy, mode.join(", ")));
    }
    out
}

pub fn write_histogram_plots(report: &TaskReport, dir: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for s in &report.skills {
        let panels: Vec<Panel<'_>> = s
            .histograms
            .iter()
            .map(|h| Panel {
                title: &h.param,
                edges: &h.edges,
                counts: &h.counts,
            })
            .collect();
        let path = dir.join(format!("tasks_skill_{}.svg", s.skill));
        histograms_svg(&path, &format!("skill {} (H = {:.2})", s.skill, s.entropy), &panels)?;
        paths.push(path);
    }
    Ok(paths)
}

/// One stochastic rollout per skill on a task drawn from its own
/// distribution; traces the pusher (or point) and, in PushWorld, objects.
pub fn write_rollout_plots(skills: &SkillSet, dir: &Path, seed: u64) -> CliResult<Vec<std::path::PathBuf>> {
    let mut env = skills.world.build()?;
    let mut paths = Vec::new();
    for z in 0..skills.num_skills {
        let mut rng = derive_rng(seed, "inspect:rollout", z as u64);
        let w = skills.tasks.distribution(z)?.sample(&mut rng);
        let episode_seed = rand::Rng::random(&mut rng);
        let traj = rollout(env.as_mut(), z, &w, episode_seed, |o| skills.policy.act(o, z, ActMode::Stochastic, &mut rng))?;
        let observations: Vec<&[f64]> = std::iter::once(traj.initial_obs.as_slice())
            .chain(traj.transitions.iter().map(|t| t.next_obs.as_slice()))
            .collect();
        let (traces, bounds) = match skills.world {
            WorldConfig::PushWorld { .. } => {
                let mut traces = vec![Trace {
                    label: "pusher".into(),
                    points: observations.iter().map(|o| (o[0], o[1])).collect(),
                }];
                for slot in 0..NUM_SLOTS {
                    let base = 2 + slot * 7;
                    let category = (0..3).position(|c| observations[0][base + 3 + c] == 1.0).unwrap_or(0);
                    traces.push(Trace {
                        label: format!("object {slot} (category {category})"),
                        points: observations.iter().map(|o| (o[base + 1], o[base + 2])).collect(),
                    });
                }
                (traces, (0.0, 1.0))
            }
            WorldConfig::ModeWorld { modes, .. } => (
                vec![Trace {
                    label: "point".into(),
                    points: observations.iter().map(|o| (o[modes], o[modes + 1])).collect(),
                }],
                (-1.0, 1.0),
            ),
        };
        let path = dir.join(format!("rollout_skill_{z}.svg"));
        traces_svg(&path, &format!("skill {z} rollout (return {:.3})", traj.undiscounted_return()), bounds, &traces)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_bounds() {
        let spec = ParamSpec::continuous("x", 0.0, 1.0).unwrap();
        let h = histogram(&spec, [0.0, 0.05, 0.5, 0.999, 1.0].into_iter(), 10);
        assert_eq!(h.counts.iter().sum::<u64>(), 5);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[9], 2);
        let d = ParamSpec::discrete("c", 3).unwrap();
        let h = histogram(&d, [0.0, 2.0, 2.0].into_iter(), 10);
        assert_eq!(h.counts, vec![1, 0, 2]);
    }
}
