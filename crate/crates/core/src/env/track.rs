use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Closed centerline loop and constant half width, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec {
    pub centerline: Vec<Point>,
    pub half_width: f64,
}

impl TrackSpec {
    /// Stadium-shaped loop: two straights of length `straight` joined by
    /// semicircles of radius `radius`. Point 0 sits mid-way along the bottom
    /// straight at the origin, heading +x, and the loop runs counter-clockwise.
    pub fn stadium(straight: f64, radius: f64, half_width: f64, spacing: f64) -> Self {
        let half = straight / 2.0;
        let n_straight = ((straight / spacing).ceil() as usize).max(1);
        let n_arc = ((PI * radius / spacing).ceil() as usize).max(4);
        let mut pts = Vec::new();
        // bottom straight, from the origin to the right end
        let n_half = n_straight.div_ceil(2);
        for i in 0..n_half {
            pts.push([half * i as f64 / n_half as f64, 0.0]);
        }
        // right arc, centre (half, radius), from -90deg to +90deg
        for i in 0..n_arc {
            let a = -PI / 2.0 + PI * i as f64 / n_arc as f64;
            pts.push([half + radius * a.cos(), radius + radius * a.sin()]);
        }
        // top straight, right to left
        for i in 0..n_straight {
            pts.push([half - straight * i as f64 / n_straight as f64, 2.0 * radius]);
        }
        // left arc, centre (-half, radius), from +90deg to +270deg
        for i in 0..n_arc {
            let a = PI / 2.0 + PI * i as f64 / n_arc as f64;
            pts.push([-half + radius * a.cos(), radius + radius * a.sin()]);
        }
        // bottom straight, left end back towards the origin
        let rest = n_straight - n_half;
        for i in 0..rest {
            pts.push([-half + half * i as f64 / rest as f64, 0.0]);
        }
        Self {
            centerline: pts,
            half_width,
        }
    }

    /// The oval used by the default experiments.
    pub fn desk_oval() -> Self {
        Self::stadium(100.0, 30.0, 6.0, 2.0)
    }

    /// Parses the plain-text track format: a `half_width <w>` (or
    /// `half_width = <w>`) header followed by one `x y` pair per line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut half_width = None;
        let mut centerline = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: no + 1,
                msg,
            };
            if let Some(rest) = line.strip_prefix("half_width") {
                let v = rest.trim().trim_start_matches('=').trim();
                let w: f64 = v
                    .parse()
                    .map_err(|_| err(format!("bad half_width value `{v}`")))?;
                half_width = Some(w);
                continue;
            }
            let nums: Vec<&str> = line.split_whitespace().collect();
            if nums.len() != 2 {
                return Err(err(format!("expected `x y`, got `{line}`")));
            }
            let x: f64 = nums[0].parse().map_err(|_| err(format!("bad x `{}`", nums[0])))?;
            let y: f64 = nums[1].parse().map_err(|_| err(format!("bad y `{}`", nums[1])))?;
            centerline.push([x, y]);
        }
        let half_width = half_width.ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: 0,
            msg: "missing half_width header".into(),
        })?;
        Ok(Self {
            centerline,
            half_width,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("half_width {}\n", self.half_width);
        for p in &self.centerline {
            s.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        s
    }
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Signed lateral offset in meters, positive to the left of travel.
    pub offset: f64,
    pub distance: f64,
    pub tangent_angle: f64,
}

/// A validated track with precomputed boundaries.
#[derive(Debug, Clone)]
pub struct Track {
    spec: TrackSpec,
    tangents: Vec<f64>,
    left: Vec<Point>,
    right: Vec<Point>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(p2, p1), sub(q1, p1));
    let d2 = cross(sub(p2, p1), sub(q2, p1));
    let d3 = cross(sub(q2, q1), sub(p1, q1));
    let d4 = cross(sub(q2, q1), sub(p2, q1));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d3 != 0.0
}

/// Distance from `p` to segment `a`-`b`, with the clamped parameter.
pub(crate) fn point_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    ((dx * dx + dy * dy).sqrt(), t)
}

/// Ray `origin + t * dir` against segment `a`-`b`; returns `t` when it hits.
pub(crate) fn ray_segment(origin: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let s = sub(b, a);
    let denom = cross(dir, s);
    if denom == 0.0 {
        return None;
    }
    let qp = sub(a, origin);
    let t = cross(qp, s) / denom;
    let u = cross(qp, dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self> {
        let pts = &spec.centerline;
        let n = pts.len();
        if !(spec.half_width > 0.0 && spec.half_width.is_finite()) {
            return Err(Error::config("track half_width must be positive"));
        }
        if n < 3 {
            return Err(Error::config("track centerline needs at least 3 points"));
        }
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("track centerline has non-finite coordinates"));
        }
        for i in 0..n {
            if pts[i] == pts[(i + 1) % n] {
                return Err(Error::config(format!(
                    "consecutive centerline points {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                    return Err(Error::config(format!(
                        "centerline segments {i} and {j} intersect"
                    )));
                }
            }
        }

        let tangents: Vec<f64> = (0..n)
            .map(|i| {
                let d = sub(pts[(i + 1) % n], pts[i]);
                d[1].atan2(d[0])
            })
            .collect();
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for i in 0..n {
            let a_in = tangents[(i + n - 1) % n];
            let a_out = tangents[i];
            let n_in = [-a_in.sin(), a_in.cos()];
            let n_out = [-a_out.sin(), a_out.cos()];
            let m = [n_in[0] + n_out[0], n_in[1] + n_out[1]];
            let mlen = (m[0] * m[0] + m[1] * m[1]).sqrt();
            let (mx, my) = if mlen < 1e-9 {
                (n_out[0], n_out[1])
            } else {
                (m[0] / mlen, m[1] / mlen)
            };
            let cosang = (mx * n_out[0] + my * n_out[1]).max(0.2);
            let reach = spec.half_width / cosang;
            left.push([pts[i][0] + mx * reach, pts[i][1] + my * reach]);
            right.push([pts[i][0] - mx * reach, pts[i][1] - my * reach]);
        }
        Ok(Self {
            spec,
            tangents,
            left,
            right,
        })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn len(&self) -> usize {
        self.spec.centerline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.centerline.is_empty()
    }

    pub fn point(&self, i: usize) -> Point {
        self.spec.centerline[i % self.len()]
    }

    pub fn tangent(&self, i: usize) -> f64 {
        self.tangents[i % self.len()]
    }

    fn segment(&self, i: usize) -> (Point, Point) {
        let n = self.len();
        (self.spec.centerline[i], self.spec.centerline[(i + 1) % n])
    }

    /// Nearest point on the centerline.
    pub fn project(&self, p: Point) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for i in 0..self.len() {
            let (a, b) = self.segment(i);
            let (d, t) = point_segment(p, a, b);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (distance, segment, t) = best;
        let (a, b) = self.segment(segment);
        let foot = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let side = cross(sub(b, a), sub(p, foot));
        let offset = if side >= 0.0 { distance } else { -distance };
        Projection {
            segment,
            offset,
            distance,
            tangent_angle: self.tangents[segment],
        }
    }

    /// Indices of centerline segments within `radius` of `p`.
    pub fn segments_near(&self, p: Point, radius: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let (a, b) = self.segment(i);
                point_segment(p, a, b).0 <= radius
            })
            .collect()
    }

    /// True when `p` lies within the half width of one of `candidates`.
    pub fn contains_among(&self, p: Point, candidates: &[usize]) -> bool {
        let w = self.spec.half_width;
        candidates.iter().any(|&i| {
            let (a, b) = self.segment(i);
            point_segment(p, a, b).0 <= w
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        self.project(p).distance <= self.spec.half_width
    }

    /// Boundary segments (left and right polylines) as point pairs.
    pub fn boundary_segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.len();
        (0..n)
            .map(move |i| (self.left[i], self.left[(i + 1) % n]))
            .chain((0..n).map(move |i| (self.right[i], self.right[(i + 1) % n])))
    }
}
