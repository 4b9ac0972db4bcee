use serde::{Deserialize, Serialize};

use crate::engine::{EpsilonHit, Prepared};
use crate::error::{Error, Result};
use crate::operators::unrolled_depth;

/// Iterations of the averaged loop against compositions of a plain unrolling,
/// for one target accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackComparison {
    pub eps: f64,
    pub t_feedback: EpsilonHit,
    pub d_feedforward: usize,
    pub gamma_hat: f64,
    pub e0: f64,
}

/// Runs the noise-free loop until `e_t <= eps` (up to `cap` steps) and
/// counts the depth `D` with `γ̂^D e0 <= eps`.
pub fn compare_feedback_feedforward(
    prepared: &Prepared,
    eps: f64,
    cap: usize,
) -> Result<FeedbackComparison> {
    let gamma_hat = prepared.gamma_hat();
    if !(gamma_hat < 1.0) {
        return Err(Error::NotAContraction { gamma_hat });
    }
    let e0 = prepared.e0();
    let t_feedback = prepared.iterations_to_epsilon(eps, cap)?;
    Ok(FeedbackComparison {
        eps,
        d_feedforward: unrolled_depth(gamma_hat, e0, eps)?,
        t_feedback,
        gamma_hat,
        e0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RunSpec;
    use crate::geometry::Geometry;
    use crate::mdp::Mdp;
    use crate::operators::Operator;
    use crate::vector::Vector;

    fn prepared() -> Prepared {
        let g = Geometry::squared_euclidean(2).unwrap();
        let op = Operator::affine_colinear(0.5, Vector::new(vec![2.0, -1.0]).unwrap()).unwrap();
        RunSpec::new(g, op, Vector::zeros(2)).prepare().unwrap()
    }

    #[test]
    fn colinear_counts() {
        let p = prepared();
        let c = compare_feedback_feedforward(&p, 1e-4, 1_000_000).unwrap();
        assert_eq!((c.t_feedback.t, c.d_feedforward), (Some(158), 8));
        let c = compare_feedback_feedforward(&p, 1e-6, 1_000_000).unwrap();
        // ceil(ln(2.5e6) / ln 4) = ceil(10.62) = 11.
        assert_eq!((c.t_feedback.t, c.d_feedforward), (Some(1581), 11));
        let c = compare_feedback_feedforward(&p, 2.5, 10).unwrap();
        assert_eq!((c.t_feedback.t, c.d_feedforward), (Some(0), 0));
    }

    #[test]
    fn monotone_in_eps() {
        let p = prepared();
        let mut last = (0, 0);
        for k in 0..8 {
            let eps = 10f64.powi(-k);
            let c = compare_feedback_feedforward(&p, eps, 1_000_000).unwrap();
            let now = (c.t_feedback.t.unwrap(), c.d_feedforward);
            assert!(now.0 >= last.0 && now.1 >= last.1);
            last = now;
        }
    }

    #[test]
    fn rejects_non_contraction() {
        let g = Geometry::squared_euclidean(2).unwrap();
        let op = Operator::bellman(Mdp::two_state_example(0.9).unwrap()).unwrap();
        let p = RunSpec::new(g, op, Vector::zeros(2)).prepare().unwrap();
        if p.gamma_hat() >= 1.0 {
            assert!(matches!(
                compare_feedback_feedforward(&p, 1e-3, 10),
                Err(Error::NotAContraction { .. })
            ));
        }
    }
}
