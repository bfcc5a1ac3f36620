//! Geometric median by the Vardi–Zhang modified Weiszfeld iteration.

const MAX_ITERATIONS: usize = 1000;
const TOLERANCE: f64 = 1e-10;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sum of Euclidean distances from `y` to every point.
pub fn total_distance(points: &[Vec<f64>], y: &[f64]) -> f64 {
    points.iter().map(|p| distance(p, y)).sum()
}

/// Point minimizing the sum of Euclidean distances to `points`.
///
/// Starts from the centroid. When an iterate coincides with input points the
/// plain Weiszfeld step is undefined; the modified step either stays put
/// (the coincident point is optimal) or moves off it along the descent
/// direction.
///
/// Panics if `points` has fewer than two entries or mixed dimensions.
pub fn geometric_median(points: &[Vec<f64>]) -> Vec<f64> {
    assert!(points.len() >= 2, "geometric median needs at least two points");
    let dim = points[0].len();
    assert!(points.iter().all(|p| p.len() == dim), "points must share a dimension");

    let n = points.len() as f64;
    let mut y: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();

    for _ in 0..MAX_ITERATIONS {
        let mut coincident = 0usize;
        let mut weight_sum = 0.0;
        let mut weighted = vec![0.0; dim];
        let mut pull = vec![0.0; dim];
        for p in points {
            let d = distance(p, &y);
            if d == 0.0 {
                coincident += 1;
                continue;
            }
            let w = 1.0 / d;
            weight_sum += w;
            for j in 0..dim {
                weighted[j] += w * p[j];
                pull[j] += w * (p[j] - y[j]);
            }
        }
        if weight_sum == 0.0 {
            // every point sits on y
            return y;
        }
        let target: Vec<f64> = weighted.iter().map(|v| v / weight_sum).collect();
        let next = if coincident == 0 {
            target
        } else {
            let r = pull.iter().map(|v| v * v).sum::<f64>().sqrt();
            let eta = coincident as f64;
            if r <= eta {
                return y;
            }
            let keep = eta / r;
            target
                .iter()
                .zip(&y)
                .map(|(t, cur)| (1.0 - keep) * t + keep * cur)
                .collect()
        };
        let moved = distance(&next, &y);
        y = next;
        if moved < TOLERANCE {
            break;
        }
    }
    y
}
