//! Small reference instances and a random instance generator, shared by the
//! test suites and the CLI examples.

use std::collections::BTreeMap;


use crate::model::{
    validate_config, AgentTypeConfig, Regime, SystemConfig, TaskTypeConfig, ValidatedSystem,
};

fn inflexible_agent(skill_hours: &[(usize, f64)]) -> AgentTypeConfig {
    AgentTypeConfig {
        skills: skill_hours.iter().map(|&(s, _)| s).collect(),
        hours: None,
        skill_hours: Some(skill_hours.iter().copied().collect()),
        availability: None,
    }
}

fn flexible_agent(skills: &[usize], hours: f64) -> AgentTypeConfig {
    AgentTypeConfig {
        skills: skills.to_vec(),
        hours: Some(hours),
        skill_hours: None,
        availability: None,
    }
}

fn chain_task(steps: &[&[(usize, f64)]], rate: f64) -> TaskTypeConfig {
    TaskTypeConfig {
        steps: steps.iter().map(|s| s.iter().copied().collect()).collect(),
        parent: None,
        rate: Some(rate),
        arrivals: None,
    }
}

/// Two single-skill agents with one hour each and a two-step chain needing
/// half an hour of skill 0, then half an hour of skill 1. Regime (I,F); the
/// capacity boundary is two tasks per epoch.
pub fn t1_config() -> SystemConfig {
    SystemConfig {
        skills: 2,
        regime: Regime::IF,
        agent_types: vec![inflexible_agent(&[(0, 1.0)]), inflexible_agent(&[(1, 1.0)])],
        task_types: vec![chain_task(&[&[(0, 0.5)], &[(1, 0.5)]], 1.0)],
    }
}

pub fn t1() -> ValidatedSystem {
    validate_config(&t1_config()).expect("t1 is valid")
}

/// One flexible agent type with skills {0, 1} and one hour, serving the T1
/// chain. Regime (F,F).
pub fn t2_config() -> SystemConfig {
    SystemConfig {
        skills: 2,
        regime: Regime::FF,
        agent_types: vec![flexible_agent(&[0, 1], 1.0)],
        task_types: vec![chain_task(&[&[(0, 0.5)], &[(1, 0.5)]], 1.0)],
    }
}

pub fn t2() -> ValidatedSystem {
    validate_config(&t2_config()).expect("t2 is valid")
}

/// One flexible agent type with skills {0, 1} and one hour; a single-step
/// task needing half an hour of each skill.
pub fn two_skill_flexible(rate: f64, regime: Regime) -> ValidatedSystem {
    let cfg = SystemConfig {
        skills: 2,
        regime,
        agent_types: vec![flexible_agent(&[0, 1], 1.0)],
        task_types: vec![chain_task(&[&[(0, 0.5), (1, 0.5)]], rate)],
    };
    validate_config(&cfg).expect("valid")
}

/// Size limits for [`random_config`].
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_skills: usize,
    pub max_agent_types: usize,
    pub max_task_types: usize,
    pub max_steps: usize,
    /// Substep sizes are multiples of `grain`.
    pub grain: f64,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            max_skills: 3,
            max_agent_types: 3,
            max_task_types: 2,
            max_steps: 3,
            grain: 0.05,
        }
    }
}

fn random_subset<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    loop {
        let v: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        if !v.is_empty() {
            return v;
        }
    }
}

fn grid<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64, grain: f64) -> f64 {
    let steps = ((hi - lo) / grain).round() as u64;
    let x = lo + grain * rng.random_range(0..=steps) as f64;
    (x * 1e6).round() / 1e6
}

/// Random valid system in `regime`. Every skill is possessed by some agent
/// type; trees are random recursive trees.
pub fn random_config<R: rand::Rng>(rng: &mut R, regime: Regime, shape: Shape) -> SystemConfig {
    let s_count = rng.random_range(1..=shape.max_skills);
    let m_count = rng.random_range(1..=shape.max_agent_types);
    let mut agent_skills: Vec<Vec<usize>> =
        (0..m_count).map(|_| random_subset(rng, s_count)).collect();
    for s in 0..s_count {
        if !agent_skills.iter().any(|a| a.contains(&s)) {
            let m = rng.random_range(0..m_count);
            agent_skills[m].push(s);
            agent_skills[m].sort_unstable();
        }
    }
    let agent_types = agent_skills
        .into_iter()
        .map(|skills| {
            if regime.flexible_agents() {
                let h = grid(rng, 0.3, 1.0, 0.1);
                flexible_agent(&skills, h)
            } else {
                let hs: Vec<(usize, f64)> =
                    skills.iter().map(|&s| (s, grid(rng, 0.2, 1.0, 0.1))).collect();
                inflexible_agent(&hs)
            }
        })
        .collect();
    let n_count = rng.random_range(1..=shape.max_task_types);
    let task_types = (0..n_count)
        .map(|_| {
            let k_count = rng.random_range(1..=shape.max_steps);
            let steps: Vec<BTreeMap<usize, f64>> = (0..k_count)
                .map(|_| {
                    let skills = random_subset(rng, s_count);
                    skills
                        .into_iter()
                        .map(|s| (s, grid(rng, shape.grain, 0.6, shape.grain)))
                        .collect()
                })
                .collect();
            let parent = (0..k_count)
                .map(|k| if k == 0 { None } else { Some(rng.random_range(0..k)) })
                .collect();
            TaskTypeConfig {
                steps,
                parent: Some(parent),
                rate: Some(grid(rng, 0.1, 1.0, 0.1)),
                arrivals: None,
            }
        })
        .collect();
    SystemConfig {
        skills: s_count,
        regime,
        agent_types,
        task_types,
    }
}

pub fn random_system<R: rand::Rng>(rng: &mut R, regime: Regime, shape: Shape) -> ValidatedSystem {
    validate_config(&random_config(rng, regime, shape)).expect("generated config is valid")
}
