//! Anchor sampling and query-ball grouping. Both are pure functions of peak values, so
//! their results do not depend on the order in which peaks are stored.

use std::cmp::Ordering;

use super::config::{DistanceSpace, LayerSpec};
use crate::error::{Error, Result};
use crate::signal::{amplitude_order, Peak};

/// Indices of the `n` highest-amplitude points, strongest first; ties go to the smaller
/// `(t, f)`.
pub fn sample_anchors(points: &[Peak], n: usize) -> Result<Vec<usize>> {
    if n > points.len() {
        return Err(Error::Contract(format!(
            "cannot sample {n} anchors from {} points",
            points.len()
        )));
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| amplitude_order(&points[i], &points[j]).then(i.cmp(&j)));
    idx.truncate(n);
    Ok(idx)
}

pub fn squared_distance(a: &Peak, b: &Peak, space: DistanceSpace) -> f32 {
    let (dt, df) = (a.t - b.t, a.f - b.f);
    match space {
        DistanceSpace::Tfa => {
            let da = a.a - b.a;
            dt * dt + df * df + da * da
        }
        DistanceSpace::Tf => dt * dt + df * df,
    }
}

fn value_order(x: &Peak, y: &Peak) -> Ordering {
    x.t.total_cmp(&y.t)
        .then(x.f.total_cmp(&y.f))
        .then(x.a.total_cmp(&y.a))
}

/// For every anchor, the up-to-`group_size` nearest points within `radius`, nearest first
/// (ties by `(t, f, a)`). Short groups repeat their nearest member; an anchor with an empty
/// ball groups with itself. Output is flattened: `anchors.len() * group_size` indices.
pub fn query_ball_group(
    points: &[Peak],
    anchors: &[usize],
    radius: f32,
    group_size: usize,
    space: DistanceSpace,
) -> Vec<usize> {
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(anchors.len() * group_size);
    let mut cand: Vec<(f32, usize)> = Vec::with_capacity(points.len());
    for &a in anchors {
        let anchor = &points[a];
        cand.clear();
        cand.extend(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (squared_distance(anchor, p, space), i))
                .filter(|&(d2, _)| d2 <= r2),
        );
        let take = group_size.min(cand.len());
        let cmp = |x: &(f32, usize), y: &(f32, usize)| {
            x.0.total_cmp(&y.0)
                .then_with(|| value_order(&points[x.1], &points[y.1]))
                .then(x.1.cmp(&y.1))
        };
        if take > 0 && take < cand.len() {
            cand.select_nth_unstable_by(take - 1, cmp);
        }
        cand[..take].sort_by(cmp);
        let first = cand.first().map_or(a, |c| c.1);
        out.extend(cand[..take].iter().map(|c| c.1));
        out.extend(std::iter::repeat_n(first, group_size - take));
    }
    out
}

/// Sampling and grouping decisions for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPlan {
    pub points: Vec<Peak>,
    /// SA1 anchors, indices into `points`.
    pub anchors1: Vec<usize>,
    /// Per SA1 branch, `n1 * G` indices into `points`.
    pub groups1: Vec<Vec<usize>>,
    /// SA2 anchors, indices into the SA1 anchor list.
    pub anchors2: Vec<usize>,
    /// Per SA2 branch, `n2 * G` indices into the SA1 anchor list.
    pub groups2: Vec<Vec<usize>>,
}

impl CloudPlan {
    pub fn new(points: &[Peak], spec: &LayerSpec) -> Result<Self> {
        if points.len() != spec.n_peaks {
            return Err(Error::Shape(format!(
                "encoder expects {} peaks, cloud has {}",
                spec.n_peaks,
                points.len()
            )));
        }
        let anchors1 = sample_anchors(points, spec.sa1.n_anchors)?;
        let groups1 = spec
            .sa1
            .branches
            .iter()
            .map(|b| query_ball_group(points, &anchors1, b.radius, b.group_size, spec.distance))
            .collect();
        let level2: Vec<Peak> = anchors1.iter().map(|&i| points[i]).collect();
        let anchors2 = sample_anchors(&level2, spec.sa2.n_anchors)?;
        let groups2 = spec
            .sa2
            .branches
            .iter()
            .map(|b| query_ball_group(&level2, &anchors2, b.radius, b.group_size, spec.distance))
            .collect();
        Ok(Self {
            points: points.to_vec(),
            anchors1,
            groups1,
            anchors2,
            groups2,
        })
    }

    pub fn anchor1(&self, i: usize) -> &Peak {
        &self.points[self.anchors1[i]]
    }

    pub fn anchor2(&self, i: usize) -> &Peak {
        self.anchor1(self.anchors2[i])
    }
}
