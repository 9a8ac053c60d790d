use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryErrors {
    pub rmse: f64,
    /// Estimated takeoff-to-landing distance minus the true one, m.
    pub closure: f64,
    pub matched: usize,
}

/// Position RMSE of `estimate` against linearly interpolated `truth`, over
/// the estimate timestamps inside the truth time range. Both series must be
/// sorted by time.
pub fn trajectory_errors(
    estimate: &[(f64, Vector3<f64>)],
    truth: &[(f64, Vector3<f64>)],
) -> Result<TrajectoryErrors> {
    if estimate.is_empty() || truth.is_empty() {
        return invalid("trajectory errors need two non-empty series");
    }
    for s in [estimate, truth] {
        if s.windows(2).any(|w| !(w[1].0 >= w[0].0)) {
            return invalid("trajectory timestamps must be non-decreasing");
        }
    }
    let (t0, t1) = (truth[0].0, truth[truth.len() - 1].0);
    let mut sq = 0.0;
    let mut matched = Vec::new();
    let mut j = 0;
    for (t, p) in estimate {
        if *t < t0 || *t > t1 {
            continue;
        }
        while j + 1 < truth.len() && truth[j + 1].0 < *t {
            j += 1;
        }
        let q = interpolate(truth, j, *t);
        sq += (p - q).norm_squared();
        matched.push((*p, q));
    }
    if matched.is_empty() {
        return invalid(format!(
            "estimate [{}, {}] does not overlap truth [{t0}, {t1}]",
            estimate[0].0,
            estimate[estimate.len() - 1].0
        ));
    }
    let (first, last) = (matched[0], matched[matched.len() - 1]);
    Ok(TrajectoryErrors {
        rmse: (sq / matched.len() as f64).sqrt(),
        closure: (last.0 - first.0).norm() - (last.1 - first.1).norm(),
        matched: matched.len(),
    })
}

fn interpolate(s: &[(f64, Vector3<f64>)], j: usize, t: f64) -> Vector3<f64> {
    let (ta, a) = s[j];
    let Some(&(tb, b)) = s.get(j + 1) else {
        return a;
    };
    if tb <= ta || t <= ta {
        return a;
    }
    a.lerp(&b, ((t - ta) / (tb - ta)).min(1.0))
}
