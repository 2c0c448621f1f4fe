//! Floor-line detection and floor-proximity filtering.
//!
//! Edge pixels are linked into line segments, the segments are grouped by
//! a shared vanishing point, fragments of the dominant near-horizontal
//! group are merged by intercept and the lines with the widest horizontal
//! coverage are kept as floors.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};
use crate::image::{gradient, to_grayscale, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    /// Summed gradient magnitude of the supporting pixels.
    pub strength: f64,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        (self.x2 - self.x1).hypot(self.y2 - self.y1)
    }

    /// `dy/dx`; infinite for vertical segments.
    pub fn slope(&self) -> f64 {
        let dx = self.x2 - self.x1;
        if dx == 0.0 {
            f64::INFINITY
        } else {
            (self.y2 - self.y1) / dx
        }
    }

    /// `y` at `x = 0` of the segment's supporting line.
    pub fn intercept(&self) -> f64 {
        self.y1 - self.slope() * self.x1
    }

    fn midpoint(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    fn homogeneous(&self) -> [f64; 3] {
        cross([self.x1, self.y1, 1.0], [self.x2, self.y2, 1.0])
    }
}

/// Near-horizontal floor line `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorLine {
    pub slope: f64,
    pub intercept: f64,
    /// Length of the union of member x-intervals, in pixels.
    pub coverage: f64,
    pub support: usize,
}

impl FloorLine {
    pub fn y_at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Absolute vertical distance from the bottom-edge midpoint of `b`.
    pub fn distance_to_box_bottom(&self, b: &BoundingBox) -> f64 {
        (f64::from(b.bottom()) - self.y_at(b.center_x())).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloorConfig {
    pub grad_threshold: f64,
    pub min_length: f64,
    pub angle_tolerance_deg: f64,
    pub ransac_iters: usize,
    pub inlier_angle_deg: f64,
    pub seed: u64,
    /// Largest `|slope|` accepted as near-horizontal.
    pub slope_tolerance: f64,
    pub intercept_tolerance: f64,
    pub k: usize,
    pub max_dist: f64,
}

impl Default for FloorConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 0.15,
            min_length: 20.0,
            angle_tolerance_deg: 22.5,
            ransac_iters: 500,
            inlier_angle_deg: 3.0,
            seed: 0,
            slope_tolerance: 0.1,
            intercept_tolerance: 5.0,
            k: 10,
            max_dist: 10.0,
        }
    }
}

fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 180.0;
    d.min(180.0 - d)
}

/// Link thresholded edge pixels with consistent gradient orientation into
/// maximal 8-connected regions and fit a segment to each by weighted least
/// squares (principal axis). Regions shorter than `min_length` are dropped.
pub fn detect_line_segments(img: &Image, cfg: &FloorConfig) -> Vec<LineSegment> {
    let gray = to_grayscale(img);
    let (w, h) = (gray.width(), gray.height());
    let Ok(grad) = gradient(&gray) else {
        return Vec::new();
    };
    let mag = grad.magnitudes();
    let mut seeds: Vec<usize> = (0..w * h).filter(|&i| mag[i] >= cfg.grad_threshold).collect();
    seeds.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    let orient: Vec<f64> = (0..w * h).map(|i| grad.orientation(i)).collect();

    let mut used = vec![false; w * h];
    let mut segments = Vec::new();
    let mut queue = VecDeque::new();
    let mut region = Vec::new();
    for &seed in &seeds {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        region.clear();
        region.push(seed);
        queue.push_back(seed);
        // running mean of doubled angles keeps the unsigned average well-defined
        let (mut sc, mut ss) = ((2.0 * orient[seed]).to_radians().cos(), (2.0 * orient[seed]).to_radians().sin());
        let mut region_angle = orient[seed];
        while let Some(p) = queue.pop_front() {
            let (px, py) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (qx, qy) = (px + dx, py + dy);
                    if (dx == 0 && dy == 0) || qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let q = qy as usize * w + qx as usize;
                    if used[q] || mag[q] < cfg.grad_threshold {
                        continue;
                    }
                    if angle_diff_deg(orient[q], region_angle) > cfg.angle_tolerance_deg {
                        continue;
                    }
                    used[q] = true;
                    region.push(q);
                    queue.push_back(q);
                    let r = (2.0 * orient[q]).to_radians();
                    sc += r.cos();
                    ss += r.sin();
                    region_angle = crate::image::unsigned_angle_deg(ss.atan2(sc) / 2.0);
                }
            }
        }
        if let Some(seg) = fit_segment(&region, &mag, w, h) {
            segments.push(seg);
        }
    }
    merge_twin_edges(segments)
        .into_iter()
        .filter(|s| s.length() >= cfg.min_length)
        .collect()
}

/// A thin stroke yields two parallel edge runs on either side of it; fold
/// each such pair into one segment along the stroke's center line.
fn merge_twin_edges(mut segs: Vec<LineSegment>) -> Vec<LineSegment> {
    const MAX_OFFSET: f64 = 2.5;
    const MAX_ANGLE_DEG: f64 = 3.0;
    segs.sort_by(|a, b| b.strength.total_cmp(&a.strength));
    let mut kept: Vec<LineSegment> = Vec::new();
    'next: for s in segs {
        let s_angle = (s.y2 - s.y1).atan2(s.x2 - s.x1).to_degrees().rem_euclid(180.0);
        for k in kept.iter_mut() {
            let k_angle = (k.y2 - k.y1).atan2(k.x2 - k.x1).to_degrees().rem_euclid(180.0);
            if angle_diff_deg(s_angle, k_angle) > MAX_ANGLE_DEG {
                continue;
            }
            let len = k.length();
            if len == 0.0 {
                continue;
            }
            let (ux, uy) = ((k.x2 - k.x1) / len, (k.y2 - k.y1) / len);
            let (nx, ny) = (-uy, ux);
            let (sx, sy) = s.midpoint();
            let offset = (sx - k.x1) * nx + (sy - k.y1) * ny;
            if offset.abs() > MAX_OFFSET {
                continue;
            }
            let t = |x: f64, y: f64| (x - k.x1) * ux + (y - k.y1) * uy;
            let (a0, a1): (f64, f64) = (0.0, len);
            let (b0, b1) = {
                let (p, q) = (t(s.x1, s.y1), t(s.x2, s.y2));
                (p.min(q), p.max(q))
            };
            let overlap = a1.min(b1) - a0.max(b0);
            if overlap < 0.5 * (b1 - b0).min(a1 - a0) {
                continue;
            }
            let shift = offset * s.strength / (s.strength + k.strength);
            let (t0, t1) = (a0.min(b0), a1.max(b1));
            let (ox, oy) = (k.x1 + shift * nx, k.y1 + shift * ny);
            let mut merged = LineSegment {
                x1: ox + t0 * ux,
                y1: oy + t0 * uy,
                x2: ox + t1 * ux,
                y2: oy + t1 * uy,
                strength: k.strength + s.strength,
            };
            if merged.x2 < merged.x1 || (merged.x2 == merged.x1 && merged.y2 < merged.y1) {
                merged = LineSegment { x1: merged.x2, y1: merged.y2, x2: merged.x1, y2: merged.y1, ..merged };
            }
            *k = merged;
            continue 'next;
        }
        kept.push(s);
    }
    kept
}

fn fit_segment(region: &[usize], mag: &[f64], w: usize, h: usize) -> Option<LineSegment> {
    if region.len() < 2 {
        return None;
    }
    let total: f64 = region.iter().map(|&i| mag[i]).sum();
    let (mut cx, mut cy) = (0.0, 0.0);
    for &i in region {
        cx += mag[i] * (i % w) as f64;
        cy += mag[i] * (i / w) as f64;
    }
    cx /= total;
    cy /= total;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &i in region {
        let (dx, dy) = ((i % w) as f64 - cx, (i / w) as f64 - cy);
        sxx += mag[i] * dx * dx;
        syy += mag[i] * dy * dy;
        sxy += mag[i] * dx * dy;
    }
    // principal axis of the weighted scatter
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (ux, uy) = (theta.cos(), theta.sin());
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in region {
        let t = ((i % w) as f64 - cx) * ux + ((i / w) as f64 - cy) * uy;
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    let clamp_x = |x: f64| x.clamp(0.0, (w - 1) as f64);
    let clamp_y = |y: f64| y.clamp(0.0, (h - 1) as f64);
    let (mut x1, mut y1) = (clamp_x(cx + tmin * ux), clamp_y(cy + tmin * uy));
    let (mut x2, mut y2) = (clamp_x(cx + tmax * ux), clamp_y(cy + tmax * uy));
    if x2 < x1 || (x2 == x1 && y2 < y1) {
        std::mem::swap(&mut x1, &mut x2);
        std::mem::swap(&mut y1, &mut y2);
    }
    Some(LineSegment { x1, y1, x2, y2, strength: total })
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Segments sharing a vanishing point (homogeneous; `w = 0` is a direction at infinity).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentGroup {
    pub vanishing_point: [f64; 3],
    /// Indices into the input segment list, ascending.
    pub members: Vec<usize>,
}

fn hypothesis(a: &LineSegment, b: &LineSegment) -> [f64; 3] {
    let v = cross(a.homogeneous(), b.homogeneous());
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-12 {
        // same supporting line: its own direction at infinity
        return [a.x2 - a.x1, a.y2 - a.y1, 0.0];
    }
    [v[0] / n, v[1] / n, v[2] / n]
}

fn passes_through(seg: &LineSegment, v: &[f64; 3], tol_deg: f64) -> bool {
    let (mx, my) = seg.midpoint();
    let (tx, ty) = (v[0] - mx * v[2], v[1] - my * v[2]);
    if tx.hypot(ty) < 1e-12 {
        return true;
    }
    let seg_angle = (seg.y2 - seg.y1).atan2(seg.x2 - seg.x1).to_degrees();
    let target = ty.atan2(tx).to_degrees();
    angle_diff_deg(seg_angle.rem_euclid(180.0), target.rem_euclid(180.0)) <= tol_deg
}

/// Greedy RANSAC extraction of vanishing-point groups, largest first.
///
/// Each hypothesis is the intersection of two segments' supporting lines;
/// when the remaining pairs fit within `ransac_iters` they are enumerated
/// exhaustively, otherwise pairs are drawn from a generator seeded by `seed`.
pub fn group_by_vanishing_point(segs: &[LineSegment], cfg: &FloorConfig) -> Vec<SegmentGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<usize> = (0..segs.len()).collect();
    let mut groups = Vec::new();
    while !remaining.is_empty() {
        if remaining.len() == 1 {
            let s = &segs[remaining[0]];
            groups.push(SegmentGroup { vanishing_point: [s.x2 - s.x1, s.y2 - s.y1, 0.0], members: remaining.clone() });
            break;
        }
        let r = remaining.len();
        let pairs = r * (r - 1) / 2;
        let mut best: Option<([f64; 3], Vec<usize>)> = None;
        let consider = |a: usize, b: usize, best: &mut Option<([f64; 3], Vec<usize>)>| {
            let v = hypothesis(&segs[a], &segs[b]);
            let inliers: Vec<usize> =
                remaining.iter().copied().filter(|&i| passes_through(&segs[i], &v, cfg.inlier_angle_deg)).collect();
            if best.as_ref().is_none_or(|(_, cur)| inliers.len() > cur.len()) {
                *best = Some((v, inliers));
            }
        };
        if pairs <= cfg.ransac_iters.max(1) {
            for i in 0..r {
                for j in i + 1..r {
                    consider(remaining[i], remaining[j], &mut best);
                }
            }
        } else {
            for _ in 0..cfg.ransac_iters {
                let i = rng.random_range(0..r);
                let mut j = rng.random_range(0..r - 1);
                if j >= i {
                    j += 1;
                }
                consider(remaining[i], remaining[j], &mut best);
            }
        }
        let (vp, mut members) = best.expect("at least one hypothesis");
        if members.is_empty() {
            // numerically degenerate hypotheses; fall back to singletons
            members = vec![remaining[0]];
        }
        remaining.retain(|i| !members.contains(i));
        groups.push(SegmentGroup { vanishing_point: vp, members });
    }
    groups.sort_by(|a, b| b.members.len().cmp(&a.members.len()));
    groups
}

/// Single-linkage clustering of near-horizontal segments on intercept.
pub fn cluster_segments(group: &[LineSegment], intercept_tolerance: f64, slope_tolerance: f64) -> Result<Vec<FloorLine>> {
    for (index, s) in group.iter().enumerate() {
        let slope = s.slope();
        if !(slope.abs() <= slope_tolerance) {
            return Err(Error::NonHorizontalSegment { index, slope });
        }
    }
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.sort_by(|&a, &b| group[a].intercept().total_cmp(&group[b].intercept()).then(a.cmp(&b)));

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut last_intercept = f64::NEG_INFINITY;
    for i in order {
        let c = group[i].intercept();
        match clusters.last_mut() {
            Some(cluster) if c - last_intercept <= intercept_tolerance => cluster.push(i),
            _ => clusters.push(vec![i]),
        }
        last_intercept = c;
    }
    Ok(clusters.iter().map(|members| merge_cluster(group, members)).collect())
}

fn merge_cluster(group: &[LineSegment], members: &[usize]) -> FloorLine {
    // strength-weighted least squares over member endpoints
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &i in members {
        let s = &group[i];
        let wt = s.strength.max(1e-12);
        sw += 2.0 * wt;
        sx += wt * (s.x1 + s.x2);
        sy += wt * (s.y1 + s.y2);
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &i in members {
        let s = &group[i];
        let wt = s.strength.max(1e-12);
        for (x, y) in [(s.x1, s.y1), (s.x2, s.y2)] {
            sxx += wt * (x - mx) * (x - mx);
            sxy += wt * (x - mx) * (y - my);
        }
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

    let mut intervals: Vec<(f64, f64)> = members.iter().map(|&i| (group[i].x1.min(group[i].x2), group[i].x1.max(group[i].x2))).collect();
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut coverage = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in intervals {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                coverage += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((ca, cb)) = cur {
        coverage += cb - ca;
    }
    FloorLine { slope, intercept: my - slope * mx, coverage, support: members.len() }
}

/// Top `k` lines by coverage; ties by support, then smaller intercept.
pub fn select_floors(lines: &[FloorLine], k: usize) -> Vec<FloorLine> {
    let mut sorted = lines.to_vec();
    sorted.sort_by(|a, b| {
        b.coverage
            .total_cmp(&a.coverage)
            .then(b.support.cmp(&a.support))
            .then(a.intercept.total_cmp(&b.intercept))
    });
    sorted.truncate(k);
    sorted
}

/// Full floor detector: segments, dominant near-horizontal vanishing-point
/// group, intercept clustering, coverage ranking.
pub fn detect_floors(img: &Image, cfg: &FloorConfig) -> Vec<FloorLine> {
    let segs = detect_line_segments(img, cfg);
    if segs.is_empty() {
        return Vec::new();
    }
    let groups = group_by_vanishing_point(&segs, cfg);
    let horizontal = groups.iter().find(|g| {
        let mut slopes: Vec<f64> = g.members.iter().map(|&i| segs[i].slope().abs()).collect();
        slopes.sort_by(f64::total_cmp);
        slopes[slopes.len() / 2] <= cfg.slope_tolerance
    });
    let Some(group) = horizontal else {
        return Vec::new();
    };
    let members: Vec<LineSegment> =
        group.members.iter().map(|&i| segs[i]).filter(|s| s.slope().abs() <= cfg.slope_tolerance).collect();
    let lines = cluster_segments(&members, cfg.intercept_tolerance, cfg.slope_tolerance)
        .expect("members filtered to near-horizontal");
    select_floors(&lines, cfg.k)
}

/// Keep detections whose bottom-edge midpoint lies within `max_dist`
/// pixels (vertically) of some floor. With no floors the input is returned.
pub fn filter_by_floor(dets: &[Detection], floors: &[FloorLine], max_dist: f64) -> Vec<Detection> {
    if floors.is_empty() {
        log::warn!("no floors detected; keeping all {} detections", dets.len());
        return dets.to_vec();
    }
    dets.iter()
        .filter(|d| floors.iter().any(|f| f.distance_to_box_bottom(&d.bbox) <= max_dist))
        .copied()
        .collect()
}

/// Partition boxes by nearest floor, dropping boxes farther than `max_dist`
/// from every floor. Floors whose lines run within `max_dist` of each other
/// over the boxes' span count as one floor. Groups are ordered top to bottom.
pub fn group_by_floor(boxes: &[BoundingBox], floors: &[FloorLine], max_dist: f64) -> Vec<Vec<usize>> {
    if boxes.is_empty() || floors.is_empty() {
        return Vec::new();
    }
    let x_ref = boxes.iter().map(|b| b.center_x()).sum::<f64>() / boxes.len() as f64;
    let mut order: Vec<usize> = (0..floors.len()).collect();
    order.sort_by(|&a, &b| floors[a].y_at(x_ref).total_cmp(&floors[b].y_at(x_ref)).then(a.cmp(&b)));
    let mut merged_id = vec![0usize; floors.len()];
    let mut next = 0;
    for (k, &f) in order.iter().enumerate() {
        if k > 0 && floors[f].y_at(x_ref) - floors[order[k - 1]].y_at(x_ref) > max_dist {
            next += 1;
        }
        merged_id[f] = next;
    }
    let mut groups = vec![Vec::new(); next + 1];
    for (i, b) in boxes.iter().enumerate() {
        let nearest = (0..floors.len())
            .map(|f| (floors[f].distance_to_box_bottom(b), f))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap();
        if nearest.0 <= max_dist {
            groups[merged_id[nearest.1]].push(i);
        }
    }
    groups.retain(|g| !g.is_empty());
    groups
}
