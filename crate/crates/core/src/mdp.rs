//! Finite Markov decision processes and their Bellman optimality backup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::Vector;

/// A finite MDP with dense tables.
///
/// `transitions[s][a][s']` is the probability of moving from `s` to `s'`
/// under action `a`; `rewards[s][a]` is the expected immediate reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mdp {
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub discount: f64,
}

impl Mdp {
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        let mdp = Mdp {
            transitions,
            rewards,
            discount,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks table shapes, row-stochasticity (to `1e-9`) and `discount ∈ [0, 1)`.
    pub fn validate(&self) -> Result<()> {
        let n = self.transitions.len();
        if n == 0 {
            return Err(Error::param("transitions", "MDP needs at least one state"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::param(
                "discount",
                format!("must lie in [0, 1), got {}", self.discount),
            ));
        }
        if self.rewards.len() != n {
            return Err(Error::dims("rewards (states)", n, self.rewards.len()));
        }
        let m = self.transitions[0].len();
        if m == 0 {
            return Err(Error::param("transitions", "MDP needs at least one action"));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != m {
                return Err(Error::dims(
                    &format!("transitions[{s}] (actions)"),
                    m,
                    row.len(),
                ));
            }
            if self.rewards[s].len() != m {
                return Err(Error::dims(
                    &format!("rewards[{s}] (actions)"),
                    m,
                    self.rewards[s].len(),
                ));
            }
            if self.rewards[s].iter().any(|r| !r.is_finite()) {
                return Err(Error::param(
                    "rewards",
                    format!("non-finite reward in state {s}"),
                ));
            }
            for (a, p) in row.iter().enumerate() {
                if p.len() != n {
                    return Err(Error::dims(&format!("transitions[{s}][{a}]"), n, p.len()));
                }
                if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::param(
                        "transitions",
                        format!("negative or non-finite probability at [{s}][{a}]"),
                    ));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param(
                        "transitions",
                        format!("row [{s}][{a}] sums to {total}, not 1"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions[0].len()
    }

    /// `r(s,a) + offset(s) + discount * Σ P(s'|s,a) V(s')`
    fn q_value(&self, v: &[f64], s: usize, a: usize, offset: f64) -> f64 {
        let future: f64 = self.transitions[s][a]
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum();
        self.rewards[s][a] + offset + self.discount * future
    }

    /// One Bellman optimality backup. `reward_offset`, when given, is added
    /// to every action's reward in the corresponding state.
    pub fn backup(&self, v: &Vector, reward_offset: Option<&Vector>) -> Vector {
        let v = v.as_slice();
        Vector::from_raw(
            (0..self.n_states())
                .map(|s| {
                    let off = reward_offset.map_or(0.0, |o| o[s]);
                    (0..self.n_actions())
                        .map(|a| self.q_value(v, s, a, off))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect(),
        )
    }

    /// Exact value of a deterministic stationary policy: solves
    /// `(I - discount * P_π) V = r_π`.
    pub fn policy_value(&self, policy: &[usize]) -> Result<Vector> {
        let n = self.n_states();
        if policy.len() != n {
            return Err(Error::dims("policy", n, policy.len()));
        }
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for (s, &a) in policy.iter().enumerate() {
            if a >= self.n_actions() {
                return Err(Error::param(
                    "policy",
                    format!("action {a} out of range in state {s}"),
                ));
            }
            r[s] = self.rewards[s][a];
            for (s2, p) in self.transitions[s][a].iter().enumerate() {
                m[(s, s2)] -= self.discount * p;
            }
        }
        let sol = m
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::param("policy", "singular policy evaluation system"))?;
        Ok(Vector::from_nalgebra(&sol))
    }

    /// Number of deterministic stationary policies, saturating.
    pub fn policy_count(&self) -> usize {
        let mut count: usize = 1;
        for _ in 0..self.n_states() {
            count = count.saturating_mul(self.n_actions());
        }
        count
    }

    /// Optimal value by enumerating every deterministic stationary policy and
    /// taking the entrywise maximum of their values.
    pub fn solve_by_enumeration(&self) -> Result<Vector> {
        let n = self.n_states();
        let m = self.n_actions();
        let mut policy = vec![0usize; n];
        let mut best = vec![f64::NEG_INFINITY; n];
        loop {
            let v = self.policy_value(&policy)?;
            for (b, x) in best.iter_mut().zip(v.iter()) {
                *b = b.max(*x);
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == n {
                    return Ok(Vector::from_raw(best));
                }
                policy[i] += 1;
                if policy[i] < m {
                    break;
                }
                policy[i] = 0;
                i += 1;
            }
        }
    }

    /// The two-state example MDP: from state 0, action 0 stays with reward 1
    /// and action 1 moves to state 1 with reward 0; from state 1, action 0
    /// moves to state 0 with reward 0 and action 1 stays with reward 2.
    pub fn two_state_example(discount: f64) -> Result<Self> {
        Mdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            discount,
        )
    }
}
