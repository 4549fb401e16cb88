//! Flat-kernel mean shift over 8-dimensional difference vectors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::{round_away, LANDMARK_COUNT};
use crate::model::DifferenceSet;

const CONVERGENCE_DISPLACEMENT: f64 = 0.1;
const MAX_ITERATIONS: usize = 100;

type Vec8 = [f64; LANDMARK_COUNT];

fn dist2(a: &Vec8, b: &Vec8) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Clusters the observations with flat-kernel mean shift under the L2 norm:
/// every point iterates to the mean of its bandwidth neighbourhood until the
/// displacement drops below 0.1 (or 100 iterations), converged points within
/// `bandwidth / 2` merge into one mode, and the modes are returned by
/// descending member count (ties by lexicographic vector order), capped at
/// `max_clusters` and rounded to integers.
///
/// Identical observations share one trajectory, so the points are deduped
/// up front and neighbourhood means weighted by multiplicity; the result is
/// the same as iterating every observation separately.
pub fn mean_shift(
    observations: &[[i32; LANDMARK_COUNT]],
    bandwidth: f64,
    max_clusters: usize,
) -> Result<Vec<DifferenceSet>> {
    if observations.is_empty() {
        return Err(Error::InvalidConfig("mean shift needs observations".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::BadBandwidth(bandwidth));
    }

    let mut unique: BTreeMap<[i32; LANDMARK_COUNT], u64> = BTreeMap::new();
    for obs in observations {
        *unique.entry(*obs).or_insert(0) += 1;
    }
    let points: Vec<(Vec8, u64)> = unique
        .iter()
        .map(|(obs, &mult)| {
            let mut p = [0f64; LANDMARK_COUNT];
            for (dst, &src) in p.iter_mut().zip(obs.iter()) {
                *dst = src as f64;
            }
            (p, mult)
        })
        .collect();

    let bw2 = bandwidth * bandwidth;
    let mut converged: Vec<(Vec8, u64)> = Vec::with_capacity(points.len());
    for &(start, mult) in &points {
        let mut p = start;
        for _ in 0..MAX_ITERATIONS {
            let mut mean = [0f64; LANDMARK_COUNT];
            let mut weight = 0u64;
            for &(q, m) in &points {
                if dist2(&p, &q) <= bw2 {
                    weight += m;
                    for (dst, src) in mean.iter_mut().zip(q.iter()) {
                        *dst += m as f64 * src;
                    }
                }
            }
            if weight == 0 {
                break;
            }
            for v in mean.iter_mut() {
                *v /= weight as f64;
            }
            let moved = dist2(&p, &mean).sqrt();
            p = mean;
            if moved < CONVERGENCE_DISPLACEMENT {
                break;
            }
        }
        converged.push((p, mult));
    }

    // Merge converged points within bandwidth/2 into modes; a mode's center
    // is the multiplicity-weighted mean of its members' converged points.
    struct Mode {
        center: Vec8,
        members: u64,
    }
    let merge2 = (bandwidth / 2.0) * (bandwidth / 2.0);
    let mut modes: Vec<Mode> = Vec::new();
    for (p, mult) in converged {
        match modes.iter_mut().find(|m| dist2(&m.center, &p) <= merge2) {
            Some(mode) => {
                let total = mode.members + mult;
                for (c, v) in mode.center.iter_mut().zip(p.iter()) {
                    *c = (*c * mode.members as f64 + v * mult as f64) / total as f64;
                }
                mode.members = total;
            }
            None => modes.push(Mode {
                center: p,
                members: mult,
            }),
        }
    }

    let mut sets: Vec<DifferenceSet> = modes
        .into_iter()
        .map(|m| {
            let mut values = [0i32; LANDMARK_COUNT];
            for (dst, &src) in values.iter_mut().zip(m.center.iter()) {
                *dst = round_away(src) as i32;
            }
            DifferenceSet {
                values,
                member_count: m.members,
            }
        })
        .collect();
    sets.sort_by(|a, b| b.member_count.cmp(&a.member_count).then(a.values.cmp(&b.values)));
    sets.truncate(max_clusters);
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_is_its_own_prototype() {
        let obs = [[5, -3, 2, 0, 1, -8, 4, 7]];
        let sets = mean_shift(&obs, 10.0, 5).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].values, obs[0]);
        assert_eq!(sets[0].member_count, 1);
    }

    #[test]
    fn distant_observations_stay_separate() {
        // L2 distance 800 > 2 * bandwidth, no interaction under a flat kernel.
        let a = [0i32; 8];
        let b = [800, 0, 0, 0, 0, 0, 0, 0];
        let sets = mean_shift(&[a, b], 100.0, 5).unwrap();
        assert_eq!(sets.len(), 2);
        let values: Vec<_> = sets.iter().map(|s| s.values).collect();
        assert!(values.contains(&a));
        assert!(values.contains(&b));
    }

    #[test]
    fn max_clusters_is_respected() {
        let mut obs = Vec::new();
        for i in 0..10 {
            obs.push([i * 1000, 0, 0, 0, 0, 0, 0, 0]);
        }
        let sets = mean_shift(&obs, 10.0, 5).unwrap();
        assert_eq!(sets.len(), 5);
    }

    #[test]
    fn members_rank_modes() {
        let mut obs = vec![[0i32; 8]; 7];
        obs.extend(vec![[500, 0, 0, 0, 0, 0, 0, 0]; 3]);
        let sets = mean_shift(&obs, 20.0, 5).unwrap();
        assert_eq!(sets[0].values, [0; 8]);
        assert_eq!(sets[0].member_count, 7);
        assert_eq!(sets[1].member_count, 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(mean_shift(&[], 10.0, 5).is_err());
        assert!(mean_shift(&[[0; 8]], 0.0, 5).is_err());
        assert!(mean_shift(&[[0; 8]], -1.0, 5).is_err());
    }

    #[test]
    fn duplicate_heavy_input_matches_plain_run() {
        // Multiplicity weighting must not change the outcome.
        let mut obs = vec![[10, 10, 10, 10, 10, 10, 10, 10]; 50];
        obs.push([13, 10, 10, 10, 10, 10, 10, 10]);
        let sets = mean_shift(&obs, 8.0, 5).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].member_count, 51);
    }
}
